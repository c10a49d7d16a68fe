#include "typresp/harness.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <mutex>
#include <numeric>
#include <set>
#include <sstream>
#include <thread>

namespace typresp {

using ojson = nlohmann::ordered_json;

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

// Reads one JSON object, remembering which keys were consumed so that
// leftovers can be rejected.
class ObjectReader {
public:
    ObjectReader(const ojson& j, std::string path) : j_(j), path_(std::move(path)) {
        if (!j_.is_object()) throw ConfigError(path_ + ": expected an object");
    }

    bool has(const std::string& key) const { return j_.contains(key); }

    const ojson* raw(const std::string& key) {
        seen_.insert(key);
        auto it = j_.find(key);
        return it == j_.end() ? nullptr : &*it;
    }

    double number(const std::string& key, double def) {
        const ojson* v = raw(key);
        if (!v) return def;
        if (!v->is_number()) throw ConfigError(where(key) + ": expected a number");
        return v->get<double>();
    }

    std::uint64_t unsigned_int(const std::string& key, std::uint64_t def) {
        const ojson* v = raw(key);
        if (!v) return def;
        if (!v->is_number_unsigned() && !(v->is_number_integer() && v->get<std::int64_t>() >= 0)) {
            throw ConfigError(where(key) + ": expected a nonnegative integer");
        }
        return v->get<std::uint64_t>();
    }

    std::string string(const std::string& key, const std::string& def) {
        const ojson* v = raw(key);
        if (!v) return def;
        if (!v->is_string()) throw ConfigError(where(key) + ": expected a string");
        return v->get<std::string>();
    }

    std::vector<double> numbers(const std::string& key) {
        const ojson* v = raw(key);
        if (!v) return {};
        if (!v->is_array()) throw ConfigError(where(key) + ": expected an array of numbers");
        std::vector<double> out;
        for (const auto& x : *v) {
            if (!x.is_number()) throw ConfigError(where(key) + ": expected an array of numbers");
            out.push_back(x.get<double>());
        }
        return out;
    }

    std::string where(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

    void finish() const {
        for (auto it = j_.begin(); it != j_.end(); ++it) {
            if (!seen_.count(it.key())) throw ConfigError("unknown key '" + where(it.key()) + "'");
        }
    }

private:
    const ojson& j_;
    std::string path_;
    std::set<std::string> seen_;
};

void require(bool ok, const std::string& msg) {
    if (!ok) throw ConfigError(msg);
}

void require_one_of(const std::string& value, std::initializer_list<const char*> allowed, const std::string& key) {
    for (const char* a : allowed) {
        if (value == a) return;
    }
    std::string list;
    for (const char* a : allowed) list += std::string(list.empty() ? "" : ", ") + a;
    throw ConfigError(key + ": '" + value + "' is not one of {" + list + "}");
}

Scenario scenario_from_string(const std::string& s) {
    if (s == "fidelity") return Scenario::Fidelity;
    if (s == "strong_scale") return Scenario::StrongScale;
    if (s == "quench_asymptotics") return Scenario::QuenchAsymptotics;
    if (s == "double_pretherm") return Scenario::DoublePretherm;
    throw ConfigError("scenario: unknown scenario '" + s + "'");
}

ProfileConfig parse_profile(const ojson& j) {
    ObjectReader r(j, "profile");
    ProfileConfig c;
    c.variant = r.string("variant", c.variant);
    c.v0 = r.number("v0", c.v0);
    c.delta_v = r.number("delta_v", c.delta_v);
    c.d0 = r.number("d0", c.d0);
    c.table = r.string("table", c.table);
    r.finish();
    require_one_of(c.variant, {"exponential", "tabulated"}, "profile.variant");
    require(c.d0 > 0.0, "profile.d0 must be positive");
    if (c.variant == "exponential") {
        require(c.v0 > 0.0, "profile.v0 must be positive");
        require(c.delta_v > 0.0, "profile.delta_v must be positive");
    } else {
        require(!c.table.empty(), "profile.table is required for a tabulated profile");
    }
    return c;
}

ProtocolConfig parse_protocol(const ojson& j, const std::string& path) {
    ObjectReader r(j, path);
    ProtocolConfig c;
    c.variant = r.string("variant", c.variant);
    c.f0 = r.number("f0", c.f0);
    c.T = r.number("T", c.T);
    c.table = r.string("table", c.table);
    r.finish();
    const auto kind = protocol_kind_from_string(c.variant);
    require(kind.has_value(), path + ".variant: unknown protocol '" + c.variant + "'");
    require(std::isfinite(c.f0), path + ".f0 must be finite");
    if (*kind == ProtocolKind::Tabulated) {
        require(!c.table.empty(), path + ".table is required for a tabulated protocol");
    } else if (*kind != ProtocolKind::Constant) {
        require(c.T > 0.0 && std::isfinite(c.T), path + ".T must be positive");
    }
    return c;
}

InitialConfig parse_initial(const ojson& j) {
    ObjectReader r(j, "model.initial");
    InitialConfig c;
    c.kind = r.string("kind", c.kind);
    if (const ojson* idx = r.raw("index"); idx && !idx->is_null()) {
        require(idx->is_number_unsigned() || (idx->is_number_integer() && idx->get<std::int64_t>() >= 0),
                "model.initial.index: expected a nonnegative integer");
        c.index = idx->get<std::size_t>();
    }
    c.energy = r.number("energy", c.energy);
    c.width = r.number("width", c.width);
    c.sector = r.string("sector", c.sector);
    c.q = r.string("q", c.q);
    c.kappa = r.number("kappa", c.kappa);
    r.finish();
    require_one_of(c.kind, {"eigenstate", "filtered_random"}, "model.initial.kind");
    require_one_of(c.sector, {"all", "plus", "minus"}, "model.initial.sector");
    require_one_of(c.q, {"identity", "sector_projector", "one_plus_kappa_a"}, "model.initial.q");
    require(c.width > 0.0, "model.initial.width must be positive");
    require(std::isfinite(c.kappa), "model.initial.kappa must be finite");
    return c;
}

ModelConfig parse_model(const ojson& j) {
    ObjectReader r(j, "model");
    ModelConfig c;
    c.m = r.unsigned_int("m", c.m);
    c.spectrum = r.string("spectrum", c.spectrum);
    c.mean_spacing = r.number("mean_spacing", c.mean_spacing);
    c.alpha = r.number("alpha", c.alpha);
    c.observable = r.string("observable", c.observable);
    c.a0_plus = r.number("a0_plus", c.a0_plus);
    c.a0_minus = r.number("a0_minus", c.a0_minus);
    if (const ojson* init = r.raw("initial")) c.initial = parse_initial(*init);
    r.finish();
    require(c.m >= 2, "model.m must be at least 2");
    require_one_of(c.spectrum, {"flat", "cosine_modulated"}, "model.spectrum");
    require_one_of(c.observable, {"fidelity", "eth"}, "model.observable");
    require(c.mean_spacing >= 0.0, "model.mean_spacing must be >= 0");
    require(c.alpha >= 0.0, "model.alpha must be >= 0");
    if (c.observable == "eth") require(c.m % 2 == 0, "model.m must be even for the eth observable");
    if (c.initial.index) require(*c.initial.index < c.m, "model.initial.index out of range");
    return c;
}

GridConfig parse_grid(const ojson& j) {
    ObjectReader r(j, "grid");
    GridConfig c;
    c.t_max = r.number("t_max", c.t_max);
    c.dt_out = r.number("dt_out", c.dt_out);
    c.solver_h = r.number("solver_h", c.solver_h);
    c.trotter_h = r.number("trotter_h", c.trotter_h);
    c.method = r.string("method", c.method);
    r.finish();
    require(c.t_max > 0.0, "grid.t_max must be positive");
    require(c.dt_out > 0.0 && c.dt_out <= c.t_max, "grid.dt_out must be in (0, t_max]");
    require(c.solver_h >= 0.0, "grid.solver_h must be >= 0");
    require(c.trotter_h > 0.0, "grid.trotter_h must be positive");
    require_one_of(c.method, {"trotter", "piecewise_exact"}, "grid.method");
    return c;
}

SweepConfig parse_sweep(const ojson& j) {
    ObjectReader r(j, "sweep");
    SweepConfig c;
    c.f0 = r.numbers("f0");
    c.T = r.numbers("T");
    c.delta_v = r.numbers("delta_v");
    r.finish();
    for (double t : c.T) require(t > 0.0, "sweep.T entries must be positive");
    for (double d : c.delta_v) require(d > 0.0, "sweep.delta_v entries must be positive");
    return c;
}

std::vector<double> downsample(const std::vector<double>& x, std::size_t stride, std::size_t count) {
    std::vector<double> out(count);
    for (std::size_t k = 0; k < count; ++k) out[k] = x[k * stride];
    return out;
}

double protocol_period(const ProtocolConfig& p, double fallback) {
    return (p.variant == "constant" || p.variant == "tabulated") ? fallback : p.T;
}

void ensure_dir(const std::filesystem::path& dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw std::runtime_error("cannot create output directory " + dir.string() + ": " + ec.message());
}

std::string indexed(const std::string& stem, std::size_t i) { return stem + "_p" + std::to_string(i) + ".csv"; }

}  // namespace

// ------------------------------------------------------------------ config

std::string to_string(Scenario s) {
    switch (s) {
        case Scenario::Fidelity: return "fidelity";
        case Scenario::StrongScale: return "strong_scale";
        case Scenario::QuenchAsymptotics: return "quench_asymptotics";
        case Scenario::DoublePretherm: return "double_pretherm";
    }
    return "fidelity";
}

ExperimentConfig parse_config(const ojson& j) {
    ObjectReader r(j, "");
    ExperimentConfig c;
    c.scenario = scenario_from_string(r.string("scenario", "fidelity"));
    c.seed = r.unsigned_int("seed", c.seed);
    if (const ojson* p = r.raw("profile")) c.profile = parse_profile(*p);
    if (const ojson* ps = r.raw("protocols")) {
        require(ps->is_array() && !ps->empty(), "protocols: expected a nonempty array");
        c.protocols.clear();
        for (std::size_t i = 0; i < ps->size(); ++i) {
            c.protocols.push_back(parse_protocol((*ps)[i], "protocols[" + std::to_string(i) + "]"));
        }
    }
    if (const ojson* m = r.raw("model")) c.model = parse_model(*m);
    if (const ojson* g = r.raw("grid")) c.grid = parse_grid(*g);
    c.t_primes = r.numbers("t_primes");
    c.validity_periods = r.number("validity_periods", c.validity_periods);
    if (const ojson* w = r.raw("metric_windows")) {
        require(w->is_array(), "metric_windows: expected an array of [t_a, t_b] pairs");
        for (const auto& pair : *w) {
            require(pair.is_array() && pair.size() == 2 && pair[0].is_number() && pair[1].is_number(),
                    "metric_windows: expected [t_a, t_b] pairs");
            const std::array<double, 2> win{pair[0].get<double>(), pair[1].get<double>()};
            require(win[0] >= 0.0 && win[1] > win[0], "metric_windows: need 0 <= t_a < t_b");
            c.metric_windows.push_back(win);
        }
    }
    c.agreement_threshold = r.number("agreement_threshold", c.agreement_threshold);
    if (const ojson* s = r.raw("sweep")) c.sweep = parse_sweep(*s);
    r.finish();

    for (double t : c.t_primes) require(t >= 0.0 && std::isfinite(t), "t_primes entries must be >= 0");
    require(c.validity_periods > 0.0, "validity_periods must be positive");
    require(c.agreement_threshold > 0.0, "agreement_threshold must be positive");
    return c;
}

ExperimentConfig parse_config_text(const std::string& text) {
    ojson j;
    try {
        j = ojson::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
    return parse_config(j);
}

ExperimentConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_config_text(ss.str());
}

ojson render_config(const ExperimentConfig& c) {
    ojson j;
    j["scenario"] = to_string(c.scenario);
    j["seed"] = c.seed;
    j["profile"] = {{"variant", c.profile.variant},
                    {"v0", c.profile.v0},
                    {"delta_v", c.profile.delta_v},
                    {"d0", c.profile.d0},
                    {"table", c.profile.table}};
    j["protocols"] = ojson::array();
    for (const auto& p : c.protocols) {
        j["protocols"].push_back({{"variant", p.variant}, {"f0", p.f0}, {"T", p.T}, {"table", p.table}});
    }
    const auto& ic = c.model.initial;
    ojson init = {{"kind", ic.kind}};
    init["index"] = ic.index ? ojson(*ic.index) : ojson(nullptr);
    init["energy"] = ic.energy;
    init["width"] = ic.width;
    init["sector"] = ic.sector;
    init["q"] = ic.q;
    init["kappa"] = ic.kappa;
    j["model"] = {{"m", c.model.m},
                  {"spectrum", c.model.spectrum},
                  {"mean_spacing", c.model.mean_spacing},
                  {"alpha", c.model.alpha},
                  {"observable", c.model.observable},
                  {"a0_plus", c.model.a0_plus},
                  {"a0_minus", c.model.a0_minus},
                  {"initial", init}};
    j["grid"] = {{"t_max", c.grid.t_max},
                 {"dt_out", c.grid.dt_out},
                 {"solver_h", c.grid.solver_h},
                 {"trotter_h", c.grid.trotter_h},
                 {"method", c.grid.method}};
    j["t_primes"] = c.t_primes;
    j["validity_periods"] = c.validity_periods;
    j["metric_windows"] = ojson::array();
    for (const auto& w : c.metric_windows) j["metric_windows"].push_back({w[0], w[1]});
    j["agreement_threshold"] = c.agreement_threshold;
    j["sweep"] = {{"f0", c.sweep.f0}, {"T", c.sweep.T}, {"delta_v", c.sweep.delta_v}};
    return j;
}

PerturbationProfile make_profile(const ProfileConfig& c) {
    if (c.variant == "tabulated") return PerturbationProfile::tabulated_from_csv(c.table, c.d0);
    return PerturbationProfile::exponential(c.v0, c.delta_v, c.d0);
}

DrivingProtocol make_protocol(const ProtocolConfig& c) {
    const auto kind = protocol_kind_from_string(c.variant);
    if (!kind) throw ConfigError("unknown protocol '" + c.variant + "'");
    switch (*kind) {
        case ProtocolKind::Constant: return DrivingProtocol::constant(c.f0);
        case ProtocolKind::Step: return DrivingProtocol::step(c.f0, c.T);
        case ProtocolKind::Sinusoid: return DrivingProtocol::sinusoid(c.f0, c.T);
        case ProtocolKind::LinearRamp: return DrivingProtocol::linear_ramp(c.f0, c.T);
        case ProtocolKind::PseudorandomA: return DrivingProtocol::pseudorandom_a(c.f0, c.T);
        case ProtocolKind::PseudorandomB: return DrivingProtocol::pseudorandom_b(c.f0, c.T);
        case ProtocolKind::Tabulated: return DrivingProtocol::tabulated_from_csv(c.table);
    }
    throw ConfigError("unknown protocol '" + c.variant + "'");
}

// ----------------------------------------------------------------- metrics

ComparisonMetrics compare(const std::vector<double>& t_grid, const std::vector<double>& a, const std::vector<double>& b,
                          double t_a, double t_b) {
    if (a.size() != t_grid.size() || b.size() != t_grid.size()) {
        throw std::invalid_argument("compare: series are not aligned on the same grid");
    }
    if (!(t_b >= t_a)) throw std::invalid_argument("compare: empty window");
    if (t_grid.empty() || t_a < t_grid.front() - 1e-12 || t_b > t_grid.back() + 1e-9) {
        throw std::invalid_argument("compare: window outside the grid");
    }
    ComparisonMetrics m;
    m.t_a = t_a;
    m.t_b = t_b;
    const double slack = 1e-9 * std::max(1.0, std::abs(t_b));
    // Trapezoidal time average of (a - b)^2; segments touching a NaN are skipped.
    double sq = 0.0, length = 0.0, last_sq = 0.0;
    std::size_t prev = t_grid.size();
    for (std::size_t i = 0; i < t_grid.size(); ++i) {
        if (t_grid[i] < t_a - slack || t_grid[i] > t_b + slack) continue;
        if (!std::isfinite(a[i]) || !std::isfinite(b[i])) {
            prev = t_grid.size();
            continue;
        }
        const double d = std::abs(a[i] - b[i]);
        m.max_abs = std::max(m.max_abs, d);
        ++m.samples;
        if (prev != t_grid.size()) {
            const double dt = t_grid[i] - t_grid[prev];
            sq += 0.5 * (last_sq + d * d) * dt;
            length += dt;
        }
        last_sq = d * d;
        prev = i;
    }
    if (m.samples == 0) throw std::invalid_argument("compare: no samples in the window");
    m.rms = length > 0.0 ? std::sqrt(sq / length) : std::sqrt(last_sq);
    m.rms = std::min(m.rms, m.max_abs);  // rounding guard
    return m;
}

double agreement_time(const std::vector<double>& t_grid, const std::vector<double>& a, const std::vector<double>& b,
                      double threshold) {
    if (a.size() != t_grid.size() || b.size() != t_grid.size()) {
        throw std::invalid_argument("agreement_time: series are not aligned");
    }
    double last = t_grid.empty() ? 0.0 : t_grid.front();
    for (std::size_t i = 0; i < t_grid.size(); ++i) {
        if (!std::isfinite(a[i]) || !std::isfinite(b[i])) continue;
        if (std::abs(a[i] - b[i]) > threshold) return t_grid[i];
        last = t_grid[i];
    }
    return last;
}

std::vector<double> period_averages(const std::vector<double>& t_grid, const std::vector<double>& series, double T) {
    if (series.size() != t_grid.size()) throw std::invalid_argument("period_averages: series not aligned");
    if (!(T > 0.0)) throw std::invalid_argument("period_averages: period must be positive");
    std::vector<double> out;
    if (t_grid.empty()) return out;
    const double tol = 1e-9 * T;
    for (double start = 0.0; start + T <= t_grid.back() + tol; start += T) {
        double sum = 0.0;
        std::size_t n = 0;
        for (std::size_t i = 0; i < t_grid.size(); ++i) {
            if (t_grid[i] >= start - tol && t_grid[i] < start + T - tol) {
                sum += series[i];
                ++n;
            }
        }
        if (n > 0) out.push_back(sum / double(n));
    }
    return out;
}

ojson to_json(const ComparisonMetrics& m) {
    return {{"rms", m.rms}, {"max_abs", m.max_abs}, {"t_a", m.t_a}, {"t_b", m.t_b}, {"samples", m.samples}};
}

// --------------------------------------------------------------------- csv

std::string format_double(double x) {
    if (std::isnan(x)) return "";
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", x);
    return buf;
}

void write_csv(const std::filesystem::path& path, const std::vector<Column>& columns) {
    if (columns.empty()) throw std::invalid_argument("write_csv: no columns");
    const std::size_t rows = columns.front().values.size();
    for (const auto& c : columns) {
        if (c.values.size() != rows) throw std::invalid_argument("write_csv: column '" + c.name + "' has the wrong length");
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    for (std::size_t k = 0; k < columns.size(); ++k) out << (k ? "," : "") << columns[k].name;
    out << '\n';
    for (std::size_t i = 0; i < rows; ++i) {
        for (std::size_t k = 0; k < columns.size(); ++k) out << (k ? "," : "") << format_double(columns[k].values[i]);
        out << '\n';
    }
    if (!out) throw std::runtime_error("write failed for " + path.string());
}

void write_sidecar(const std::filesystem::path& csv_path, const ojson& meta) {
    std::filesystem::path p = csv_path;
    p += ".meta.json";
    std::ofstream out(p, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + p.string());
    out << meta.dump(2) << '\n';
}

// --------------------------------------------------------------- session

Session::Session(ExperimentConfig config, RunOptions opts)
    : config_(std::move(config)), opts_(std::move(opts)), profile_(make_profile(config_.profile)) {}

DrivingProtocol Session::protocol(std::size_t i) const { return make_protocol(config_.protocols.at(i)); }

std::vector<double> Session::output_grid() const {
    const auto n = std::size_t(std::llround(config_.grid.t_max / config_.grid.dt_out)) + 1;
    std::vector<double> t(n);
    for (std::size_t k = 0; k < n; ++k) t[k] = double(k) * config_.grid.dt_out;
    return t;
}

RandomMatrixModel& Session::model() {
    if (model_) return *model_;
    const auto& mc = config_.model;
    const double spacing = mc.mean_spacing > 0.0 ? mc.mean_spacing : 1.0 / config_.profile.d0;
    RandomMatrixModel m;
    m.spectrum = mc.spectrum == "flat" ? SpectrumSpec::flat(mc.m, spacing)
                                       : SpectrumSpec::cosine_modulated(mc.m, mc.alpha, spacing);
    m.energies = m.spectrum.energies();
    m.seeds = derive_seeds(config_.seed);

    const auto& ic = mc.initial;
    InitialStateSpec spec;
    spec.kind = ic.kind == "eigenstate" ? InitialKind::Eigenstate : InitialKind::FilteredRandom;
    spec.index = ic.index.value_or(mc.m / 2);
    spec.energy = ic.energy;
    spec.width = ic.width;
    spec.sector = ic.sector == "plus" ? Sector::Plus : (ic.sector == "minus" ? Sector::Minus : Sector::All);
    spec.q = ic.q == "identity" ? QKind::Identity
                                : (ic.q == "sector_projector" ? QKind::SectorProjector : QKind::OnePlusKappaA);
    spec.kappa = ic.kappa;
    m.initial = spec;

    if (mc.observable == "fidelity") {
        if (spec.kind != InitialKind::Eigenstate) throw ConfigError("the fidelity observable needs an eigenstate initial state");
        m.observable = Observable::projector(mc.m, spec.index);
    } else {
        EthObservable eth(m.energies, m.spectrum.upper_edge(), mc.a0_plus, mc.a0_minus, m.seeds.observable);
        m.observable = Observable::eth(std::move(eth), mc.m <= 4096);
    }
    m.psi0 = build_initial_state(m.energies, m.observable, spec, m.seeds.state);
    model_ = std::move(m);
    return *model_;
}

RandomMatrixModel& Session::model_with_v(bool need_eigensystem) {
    auto& m = model();
    if (!m.v) {
        if (opts_.log) opts_.log("sampling V (M = " + std::to_string(m.energies.size()) + ")");
        m.v = sample_v(m.energies, profile_, m.seeds.v);
    }
    if (need_eigensystem && !m.v_eigen) {
        if (opts_.log) opts_.log("diagonalizing V");
        m.v_eigen = hermitian_eigensystem(*m.v);
    }
    return m;
}

const References& Session::references() {
    if (!refs_) refs_ = undriven_and_references(model(), output_grid());
    return *refs_;
}

Session::Theory Session::theory(std::size_t i) {
    const auto p = protocol(i);
    const auto grid = output_grid();
    Theory th;
    const double target = config_.grid.solver_h > 0.0 ? config_.grid.solver_h : default_step(profile_, p, config_.grid.t_max);
    th.stride = std::max<std::size_t>(1, std::size_t(std::ceil(config_.grid.dt_out / target - 1e-9)));
    th.h = config_.grid.dt_out / double(th.stride);
    const std::size_t n = (grid.size() - 1) * th.stride + 1;
    if (opts_.log) {
        std::ostringstream os;
        os << "solving the response equation: protocol " << i << ", h = " << th.h << ", " << n << " points";
        opts_.log(os.str());
    }
    DiagonalOptions dopt;
    dopt.threads = opts_.threads;
    const auto gamma = gamma_diagonal_values(profile_, p, th.h, n, dopt);
    th.t_grid = grid;
    th.gamma = downsample(gamma, th.stride, grid.size());
    th.gamma_sq.resize(grid.size());
    th.gamma_sq_hf.resize(grid.size());
    th.gamma_sq_bessel.resize(grid.size());
    th.gamma_sq_weak.resize(grid.size());
    th.r.resize(grid.size());
    th.margin.resize(grid.size());
    for (std::size_t k = 0; k < grid.size(); ++k) {
        const double t = grid[k];
        th.gamma_sq[k] = th.gamma[k] * th.gamma[k];
        const auto sc = r_scale(profile_, p, t);
        th.r[k] = sc.r;
        th.margin[k] = sc.margin;
        const double hf = fast_driving_gamma(profile_, p, t, t);
        const double bs = strong_driving_gamma(sc.r, t);
        const double wk = weak_fast_gamma(profile_, p, t, t);
        th.gamma_sq_hf[k] = hf * hf;
        th.gamma_sq_bessel[k] = bs * bs;
        th.gamma_sq_weak[k] = wk * wk;
    }
    return th;
}

Session::Comparison Session::compare_protocol(std::size_t i) {
    if (config_.scenario != Scenario::Fidelity && config_.scenario != Scenario::DoublePretherm) {
        throw ConfigError("compare_protocol: scenario " + to_string(config_.scenario) + " has no simulation");
    }
    const auto& pc = config_.protocols.at(i);
    const auto p = protocol(i);
    Comparison c;
    c.protocol = pc;
    c.theory = theory(i);

    PropagationOptions popt;
    popt.h = config_.grid.trotter_h;
    popt.method = config_.grid.method == "piecewise_exact" ? PropagationMethod::PiecewiseExact
                                                           : PropagationMethod::TrotterCachedV;
    if (popt.method == PropagationMethod::PiecewiseExact && !p.is_piecewise_constant()) {
        throw ConfigError("grid.method piecewise_exact needs a constant or step protocol");
    }
    auto& model = model_with_v(popt.method == PropagationMethod::TrotterCachedV);
    if (opts_.log) opts_.log("propagating protocol " + std::to_string(i) + " (" + config_.grid.method + ")");
    c.simulation = propagate(model, p, output_grid(), popt);

    const auto& refs = references();
    c.undriven = refs.undriven;
    c.undriven_h0 = refs.undriven_h0;
    c.a_th = refs.a_th;
    c.a_bar0 = refs.a_bar0;
    c.a_inf = refs.a_inf;
    c.d0_window = refs.d0_window;

    const auto& t = c.theory.t_grid;
    const double t_max = t.back();
    const double period = protocol_period(pc, t_max);
    const double window_end = std::min(t_max, config_.validity_periods * period);
    const auto pred = predict_observable(t, c.theory.gamma_sq, c.undriven, c.a_th);
    c.prediction = pred.a_pred;
    if (config_.scenario == Scenario::DoublePretherm) {
        for (std::size_t k = 0; k < t.size(); ++k) {
            if (t[k] > window_end + 1e-9) c.prediction[k] = kNaN;
        }
    }
    c.first_two_periods = compare(t, c.prediction, c.simulation.a_series, 0.0, std::min(t_max, 2.0 * period));
    c.validity_window = compare(t, c.prediction, c.simulation.a_series, 0.0, window_end);
    c.full = compare(t, c.prediction, c.simulation.a_series, 0.0, t_max);
    for (const auto& w : config_.metric_windows) {
        c.extra.push_back(compare(t, c.prediction, c.simulation.a_series, w[0], std::min(w[1], t_max)));
    }
    c.agreement_time = agreement_time(t, c.prediction, c.simulation.a_series, config_.agreement_threshold);
    return c;
}

ojson Session::metadata() const {
    ojson meta;
    meta["tool"] = "typresp";
    meta["version"] = kVersion;
    meta["config"] = render_config(config_);
    const auto seeds = derive_seeds(config_.seed);
    meta["rng"] = {{"algorithm", std::string(kRngAlgorithm)},
                   {"master", seeds.master},
                   {"v", seeds.v},
                   {"observable", seeds.observable},
                   {"state", seeds.state}};
    ojson prof = {{"sigma0", moment(profile_, 0)}, {"sigma2", moment(profile_, 2)}, {"v_at_0", v_of_t(profile_, 0.0)}};
    if (profile_.kind() == ProfileKind::Exponential) {
        const double spacing = config_.model.mean_spacing > 0.0 ? config_.model.mean_spacing : 1.0 / config_.profile.d0;
        prof["crossover_amplitude"] = crossover_amplitude(profile_, spacing);
    }
    meta["profile"] = prof;
    return meta;
}

// ------------------------------------------------------------------- runs

namespace {

ojson base_summary(const std::string& command, const ExperimentConfig& c) {
    ojson s;
    s["command"] = command;
    s["status"] = "ok";
    s["scenario"] = to_string(c.scenario);
    s["seed"] = c.seed;
    return s;
}

void finish_files(RunSummary& r) {
    ojson files = ojson::array();
    for (const auto& f : r.files) files.push_back(f.filename().string());
    r.summary["files"] = files;
}

ojson references_json(const References& refs) {
    ojson sens = ojson::array();
    for (const auto& w : refs.sensitivity) {
        sens.push_back({{"scale", w.scale}, {"lo", w.lo}, {"hi", w.hi}, {"levels", w.levels}, {"a_th", w.a_th},
                        {"d0_window", w.d0_window}});
    }
    return {{"a_th", refs.a_th},
            {"a_bar0", refs.a_bar0},
            {"a_inf", refs.a_inf},
            {"d0_window", refs.d0_window},
            {"window", {refs.window.lo, refs.window.hi}},
            {"window_sensitivity", sens}};
}

}  // namespace

RunSummary run_respond(const ExperimentConfig& c, const std::filesystem::path& out, const RunOptions& opts) {
    ensure_dir(out);
    Session s(c, opts);
    RunSummary r{base_summary("respond", c), {}};
    ojson per = ojson::array();
    for (std::size_t i = 0; i < c.protocols.size(); ++i) {
        const auto th = s.theory(i);
        const auto p = s.protocol(i);
        const auto grid = th.t_grid;
        const auto diag_path = out / indexed("respond_diagonal", i);
        write_csv(diag_path, {{"t", grid}, {"gamma", th.gamma}, {"gamma_sq", th.gamma_sq}});
        auto meta = s.metadata();
        meta["columns"] = {"t", "gamma", "gamma_sq"};
        meta["protocol_index"] = i;
        meta["solver"] = {{"h", th.h}, {"stride", th.stride}, {"scheme", "heun_trapezoidal"}};
        meta["fast_driving_heuristic"] = "theory meaningful for t up to a few driving periods";
        write_sidecar(diag_path, meta);
        r.files.push_back(diag_path);

        ojson overs = ojson::array();
        const std::size_t n = (grid.size() - 1) * th.stride + 1;
        for (std::size_t j = 0; j < c.t_primes.size(); ++j) {
            const auto sol = solve_gamma(s.profile(), p, c.t_primes[j], th.h, n);
            const auto g = downsample(sol.gamma, th.stride, grid.size());
            std::vector<double> g2(g.size());
            for (std::size_t k = 0; k < g.size(); ++k) g2[k] = g[k] * g[k];
            const auto path = out / ("respond_p" + std::to_string(i) + "_tprime" + std::to_string(j) + ".csv");
            write_csv(path, {{"t", grid}, {"gamma", g}, {"gamma_sq", g2}});
            auto m2 = meta;
            m2["t_prime"] = c.t_primes[j];
            m2["phi1"] = sol.phi1;
            m2["phi2"] = sol.phi2;
            m2["max_abs_gamma"] = sol.max_abs;
            m2["overshoot"] = sol.overshoot;
            write_sidecar(path, m2);
            r.files.push_back(path);
            overs.push_back(sol.overshoot);
        }
        per.push_back({{"protocol", i}, {"h", th.h}, {"gamma_sq_end", th.gamma_sq.back()}, {"overshoot", overs}});
    }
    r.summary["protocols"] = per;
    finish_files(r);
    return r;
}

RunSummary run_approx(const ExperimentConfig& c, const std::filesystem::path& out, const RunOptions& opts) {
    ensure_dir(out);
    Session s(c, opts);
    RunSummary r{base_summary("approx", c), {}};
    const auto grid = s.output_grid();
    ojson per = ojson::array();
    for (std::size_t i = 0; i < c.protocols.size(); ++i) {
        const auto p = s.protocol(i);
        std::vector<double> bes(grid.size()), hf(grid.size()), wk(grid.size()), rr(grid.size()), mg(grid.size());
        double max_margin = 0.0;
        for (std::size_t k = 0; k < grid.size(); ++k) {
            const double t = grid[k];
            const auto sc = r_scale(s.profile(), p, t);
            rr[k] = sc.r;
            mg[k] = sc.margin;
            max_margin = std::max(max_margin, sc.margin);
            bes[k] = strong_driving_gamma(sc.r, t);
            hf[k] = fast_driving_gamma(s.profile(), p, t, t);
            wk[k] = weak_fast_gamma(s.profile(), p, t, t);
        }
        const auto path = out / indexed("approx", i);
        write_csv(path, {{"t", grid}, {"gamma_bessel", bes}, {"gamma_hf", hf}, {"gamma_weak", wk}, {"r_of_t", rr}, {"margin", mg}});
        auto meta = s.metadata();
        meta["columns"] = {"t", "gamma_bessel", "gamma_hf", "gamma_weak", "r_of_t", "margin"};
        meta["protocol_index"] = i;
        meta["strong_margin_threshold"] = kStrongMarginThreshold;
        write_sidecar(path, meta);
        r.files.push_back(path);
        per.push_back({{"protocol", i}, {"max_margin", max_margin}});
    }
    r.summary["protocols"] = per;
    finish_files(r);
    return r;
}

RunSummary run_simulate(const ExperimentConfig& c, const std::filesystem::path& out, const RunOptions& opts) {
    ensure_dir(out);
    Session s(c, opts);
    RunSummary r{base_summary("simulate", c), {}};
    const auto grid = s.output_grid();
    const auto& refs = s.references();
    ojson per = ojson::array();
    for (std::size_t i = 0; i < c.protocols.size(); ++i) {
        const auto p = s.protocol(i);
        PropagationOptions popt;
        popt.h = c.grid.trotter_h;
        popt.method = c.grid.method == "piecewise_exact" ? PropagationMethod::PiecewiseExact : PropagationMethod::TrotterCachedV;
        auto& model = s.model_with_v(popt.method == PropagationMethod::TrotterCachedV);
        const auto traj = propagate(model, p, grid, popt);
        const auto path = out / indexed("simulate", i);
        write_csv(path, {{"t", grid}, {"a_driven", traj.a_series}, {"a_undriven", refs.undriven}, {"h0", traj.h0_series}, {"norm", traj.norm_series}});
        auto meta = s.metadata();
        meta["columns"] = {"t", "a_driven", "a_undriven", "h0", "norm"};
        meta["protocol_index"] = i;
        meta["stepper"] = {{"method", traj.method}, {"h", traj.h}, {"steps", traj.steps}, {"max_norm_drift", traj.max_norm_drift}};
        meta["derived"] = references_json(refs);
        write_sidecar(path, meta);
        r.files.push_back(path);
        per.push_back({{"protocol", i}, {"method", traj.method}, {"max_norm_drift", traj.max_norm_drift}});
    }
    r.summary["derived"] = references_json(refs);
    r.summary["protocols"] = per;
    finish_files(r);
    return r;
}

RunSummary run_compare(const ExperimentConfig& c, const std::filesystem::path& out, const RunOptions& opts) {
    ensure_dir(out);
    Session s(c, opts);
    RunSummary r{base_summary("compare", c), {}};
    const auto grid = s.output_grid();
    ojson per = ojson::array();

    if (c.scenario == Scenario::StrongScale) {
        const double sigma0 = moment(s.profile(), 0);
        for (std::size_t i = 0; i < c.protocols.size(); ++i) {
            const auto p = s.protocol(i);
            std::vector<double> rr(grid.size()), mg(grid.size()), s0(grid.size(), sigma0), p1(grid.size()), p2(grid.size());
            const double period = protocol_period(c.protocols[i], grid.back());
            double first = 0.0, later = 0.0;
            for (std::size_t k = 0; k < grid.size(); ++k) {
                const auto ints = integrals(p, grid[k]);
                const auto sc = r_scale_phi(s.profile(), ints.phi1, ints.phi2);
                rr[k] = sc.r;
                mg[k] = sc.margin;
                p1[k] = ints.phi1;
                p2[k] = ints.phi2;
                (grid[k] <= period ? first : later) = std::max(grid[k] <= period ? first : later, sc.r);
            }
            const auto path = out / indexed("strong_scale", i);
            write_csv(path, {{"t", grid}, {"r", rr}, {"sigma0", s0}, {"margin", mg}, {"phi1", p1}, {"phi2", p2}});
            auto meta = s.metadata();
            meta["columns"] = {"t", "r", "sigma0", "margin", "phi1", "phi2"};
            meta["protocol_index"] = i;
            write_sidecar(path, meta);
            r.files.push_back(path);
            per.push_back({{"protocol", i}, {"max_r_first_period", first}, {"max_r_later", later}, {"sigma0", sigma0}});
        }
    } else if (c.scenario == Scenario::QuenchAsymptotics) {
        for (std::size_t i = 0; i < c.protocols.size(); ++i) {
            const auto p = s.protocol(i);
            const double f0 = c.protocols[i].f0, T = c.protocols[i].T;
            std::vector<double> p1(grid.size()), p2(grid.size()), p1s(grid.size()), p2s(grid.size()),
                p1l(grid.size(), f0 * f0), p2l(grid.size(), f0 * f0 * T * T / 16.0);
            for (std::size_t k = 0; k < grid.size(); ++k) {
                const double t = grid[k];
                const auto ints = integrals(p, t);
                p1[k] = ints.phi1;
                p2[k] = ints.phi2;
                p1s[k] = std::pow(f0 * t / (2.0 * T), 2);
                p2s[k] = std::pow(f0 * t * t / (12.0 * T), 2);
            }
            const auto path = out / indexed("quench", i);
            write_csv(path, {{"t", grid}, {"phi1", p1}, {"phi2", p2}, {"phi1_short", p1s}, {"phi2_short", p2s},
                             {"phi1_long", p1l}, {"phi2_long", p2l}});
            auto meta = s.metadata();
            meta["columns"] = {"t", "phi1", "phi2", "phi1_short", "phi2_short", "phi1_long", "phi2_long"};
            meta["protocol_index"] = i;
            write_sidecar(path, meta);
            r.files.push_back(path);
            per.push_back({{"protocol", i},
                           {"phi1_rel_dev_end", p1.back() / p1l.back() - 1.0},
                           {"phi2_rel_dev_end", p2.back() / p2l.back() - 1.0}});
        }
    } else {
        for (std::size_t i = 0; i < c.protocols.size(); ++i) {
            const auto cmp = s.compare_protocol(i);
            const auto& th = cmp.theory;
            const auto path = out / indexed("compare", i);
            write_csv(path, {{"t", grid},
                             {"gamma_sq", th.gamma_sq},
                             {"prediction", cmp.prediction},
                             {"gamma_sq_hf", th.gamma_sq_hf},
                             {"gamma_sq_bessel", th.gamma_sq_bessel},
                             {"gamma_sq_weak", th.gamma_sq_weak},
                             {"simulation", cmp.simulation.a_series},
                             {"undriven", cmp.undriven},
                             {"h0", cmp.simulation.h0_series},
                             {"undriven_h0", cmp.undriven_h0},
                             {"norm", cmp.simulation.norm_series}});
            ojson extra = ojson::array();
            for (const auto& m : cmp.extra) extra.push_back(to_json(m));
            ojson metrics = {{"first_two_periods", to_json(cmp.first_two_periods)},
                             {"validity_window", to_json(cmp.validity_window)},
                             {"full", to_json(cmp.full)},
                             {"extra", extra},
                             {"agreement_time", cmp.agreement_time}};
            const double period = protocol_period(cmp.protocol, grid.back());
            const auto h0_avg = period_averages(grid, cmp.simulation.h0_series, period);
            if (!h0_avg.empty()) metrics["h0_period_average_first_last"] = {h0_avg.front(), h0_avg.back()};

            auto meta = s.metadata();
            meta["columns"] = {"t", "gamma_sq", "prediction", "gamma_sq_hf", "gamma_sq_bessel", "gamma_sq_weak",
                               "simulation", "undriven", "h0", "undriven_h0", "norm"};
            meta["protocol_index"] = i;
            meta["solver"] = {{"h", th.h}, {"stride", th.stride}};
            meta["stepper"] = {{"method", cmp.simulation.method}, {"h", cmp.simulation.h},
                               {"steps", cmp.simulation.steps}, {"max_norm_drift", cmp.simulation.max_norm_drift}};
            meta["derived"] = references_json(s.references());
            meta["metrics"] = metrics;
            write_sidecar(path, meta);
            r.files.push_back(path);
            per.push_back({{"protocol", i}, {"metrics", metrics}});
        }
        r.summary["derived"] = references_json(s.references());
    }
    r.summary["protocols"] = per;
    finish_files(r);
    return r;
}

RunSummary run_sweep(const ExperimentConfig& c, const std::filesystem::path& out, const RunOptions& opts) {
    ensure_dir(out);
    const auto axis = [](const std::vector<double>& v) { return v.empty() ? std::vector<double>{kNaN} : v; };
    const auto f0s = axis(c.sweep.f0), Ts = axis(c.sweep.T), dvs = axis(c.sweep.delta_v);
    struct Point {
        double f0, T, dv;
    };
    std::vector<Point> points;
    for (double dv : dvs) {
        for (double T : Ts) {
            for (double f0 : f0s) points.push_back({f0, T, dv});
        }
    }

    std::vector<ojson> results(points.size());
    std::vector<std::exception_ptr> errors(points.size());
    std::atomic<std::size_t> next{0};
    RunOptions inner = opts;
    inner.threads = 1;
    auto worker = [&]() {
        for (;;) {
            const std::size_t k = next.fetch_add(1);
            if (k >= points.size()) return;
            try {
                ExperimentConfig pc = c;
                pc.sweep = {};
                for (auto& p : pc.protocols) {
                    if (!std::isnan(points[k].f0)) p.f0 = points[k].f0;
                    if (!std::isnan(points[k].T)) p.T = points[k].T;
                }
                if (!std::isnan(points[k].dv)) pc.profile.delta_v = points[k].dv;
                const auto dir = out / ("point_" + std::to_string(k));
                auto rs = run_compare(pc, dir, inner);
                results[k] = {{"point", k}, {"f0", points[k].f0}, {"T", points[k].T}, {"delta_v", points[k].dv},
                              {"directory", dir.filename().string()}, {"protocols", rs.summary["protocols"]}};
            } catch (...) {
                errors[k] = std::current_exception();
            }
        }
    };
    const unsigned threads = std::max(1u, std::min<unsigned>(opts.threads, unsigned(points.size())));
    if (threads == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (unsigned t = 0; t < threads; ++t) pool.emplace_back(worker);
        for (auto& th : pool) th.join();
    }
    for (auto& e : errors) {
        if (e) std::rethrow_exception(e);
    }

    RunSummary r{base_summary("sweep", c), {}};
    std::vector<double> col_k, col_f0, col_T, col_dv, col_rms, col_max, col_agree;
    for (std::size_t k = 0; k < points.size(); ++k) {
        col_k.push_back(double(k));
        col_f0.push_back(points[k].f0);
        col_T.push_back(points[k].T);
        col_dv.push_back(points[k].dv);
        double rms = kNaN, mx = kNaN, agree = kNaN;
        const auto& prot = results[k]["protocols"];
        if (!prot.empty() && prot[0].contains("metrics")) {
            rms = prot[0]["metrics"]["first_two_periods"]["rms"].get<double>();
            mx = prot[0]["metrics"]["first_two_periods"]["max_abs"].get<double>();
            agree = prot[0]["metrics"]["agreement_time"].get<double>();
        }
        col_rms.push_back(rms);
        col_max.push_back(mx);
        col_agree.push_back(agree);
    }
    const auto path = out / "sweep.csv";
    write_csv(path, {{"point", col_k}, {"f0", col_f0}, {"T", col_T}, {"delta_v", col_dv},
                     {"rms_first_two_periods", col_rms}, {"max_abs_first_two_periods", col_max},
                     {"agreement_time", col_agree}});
    ojson meta;
    meta["tool"] = "typresp";
    meta["version"] = kVersion;
    meta["config"] = render_config(c);
    meta["columns"] = {"point", "f0", "T", "delta_v", "rms_first_two_periods", "max_abs_first_two_periods", "agreement_time"};
    meta["note"] = "metrics refer to the first protocol of each point";
    write_sidecar(path, meta);
    r.files.push_back(path);
    r.summary["points"] = results;
    finish_files(r);
    return r;
}

}  // namespace typresp
