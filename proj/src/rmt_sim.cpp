#include <complex>
#define lapack_complex_float std::complex<float>
#define lapack_complex_double std::complex<double>
#include <lapacke.h>

#include "typresp/rmt_sim.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>
#include <sstream>
#include <stdexcept>

namespace typresp {

namespace {

constexpr std::complex<double> kI(0.0, 1.0);

std::uint64_t fnv1a64(std::string_view s) {
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

bool in_sector(std::size_t mu, Sector s) {
    switch (s) {
        case Sector::All: return true;
        case Sector::Plus: return mu % 2 == 0;
        case Sector::Minus: return mu % 2 == 1;
    }
    return true;
}

void require_state_size(const ComplexVector& psi, std::size_t m) {
    if (std::size_t(psi.size()) != m) throw std::invalid_argument("state dimension does not match the model");
}

double h0_expectation(const std::vector<double>& e, const ComplexVector& psi) {
    double s = 0.0;
    for (std::size_t i = 0; i < e.size(); ++i) s += e[i] * std::norm(psi[Eigen::Index(i)]);
    return s;
}

void check_grid(const std::vector<double>& t_grid) {
    if (t_grid.empty()) throw std::invalid_argument("propagate: empty time grid");
    if (!(t_grid.front() >= 0.0)) throw std::invalid_argument("propagate: times must be >= 0");
    for (std::size_t i = 1; i < t_grid.size(); ++i) {
        if (!(t_grid[i] >= t_grid[i - 1])) throw std::invalid_argument("propagate: time grid must be ascending");
    }
    if (!std::isfinite(t_grid.back())) throw std::invalid_argument("propagate: non-finite time");
}

// Per-output bookkeeping shared by both propagation methods.
struct Recorder {
    const RandomMatrixModel& model;
    const PropagationOptions& opts;
    TrajectoryResult& out;

    void record(std::size_t k, double t, const ComplexVector& psi) {
        const double norm = psi.norm();
        const double drift = std::abs(norm - 1.0);
        out.max_norm_drift = std::max(out.max_norm_drift, drift);
        if (drift > opts.norm_tol) {
            std::ostringstream os;
            os << "propagate: norm drift " << drift << " at t = " << t << " exceeds " << opts.norm_tol
               << " (method " << out.method << ", h = " << out.h << ")";
            throw std::runtime_error(os.str());
        }
        out.a_series[k] = model.observable.expectation(psi);
        out.h0_series[k] = h0_expectation(model.energies, psi);
        out.norm_series[k] = norm;
        if (opts.progress) opts.progress(k + 1, out.t_grid.size());
    }
};

}  // namespace

// ---------------------------------------------------------------- spectrum

SpectrumSpec SpectrumSpec::flat(std::size_t m, double epsilon) {
    if (m < 2) throw std::invalid_argument("spectrum: need at least two levels");
    if (!(epsilon > 0.0) || !std::isfinite(epsilon)) throw std::invalid_argument("spectrum: spacing must be positive");
    return {m, SpectrumKind::Flat, epsilon, 0.0};
}

SpectrumSpec SpectrumSpec::cosine_modulated(std::size_t m, double alpha, double mean_spacing) {
    if (m < 2) throw std::invalid_argument("spectrum: need at least two levels");
    if (!(mean_spacing > 0.0) || !std::isfinite(mean_spacing)) {
        throw std::invalid_argument("spectrum: mean spacing must be positive");
    }
    if (!(alpha >= 0.0) || !std::isfinite(alpha)) throw std::invalid_argument("spectrum: alpha must be >= 0");
    return {m, SpectrumKind::CosineModulated, mean_spacing, alpha};
}

double SpectrumSpec::epsilon0() const {
    return kind == SpectrumKind::Flat ? mean_spacing : mean_spacing / (1.0 + alpha);
}

std::vector<double> SpectrumSpec::energies() const {
    std::vector<double> e(m);
    if (kind == SpectrumKind::Flat) {
        for (std::size_t mu = 0; mu < m; ++mu) e[mu] = double(mu) * mean_spacing;
        return e;
    }
    const double eps0 = epsilon0();
    e[0] = 0.0;
    for (std::size_t mu = 0; mu + 1 < m; ++mu) {
        const double c = std::cos(2.0 * std::numbers::pi * double(mu) / double(m));
        e[mu + 1] = e[mu] + eps0 * (1.0 + alpha * (1.0 + c));
    }
    return e;
}

// --------------------------------------------------------------------- rng

std::mt19937_64 rng_stream(std::uint64_t master, std::string_view tag) {
    const std::uint64_t h = fnv1a64(tag);
    std::seed_seq seq{std::uint32_t(master), std::uint32_t(master >> 32), std::uint32_t(h), std::uint32_t(h >> 32)};
    return std::mt19937_64(seq);
}

ModelSeeds derive_seeds(std::uint64_t master) {
    ModelSeeds s;
    s.master = master;
    s.v = rng_stream(master, "seed/v")();
    s.observable = rng_stream(master, "seed/observable")();
    s.state = rng_stream(master, "seed/state")();
    return s;
}

// ---------------------------------------------------------------- matrices

ComplexMatrix sample_v(const std::vector<double>& energies, const PerturbationProfile& profile, std::uint64_t seed) {
    const auto m = Eigen::Index(energies.size());
    auto gen = rng_stream(seed, "v");
    std::normal_distribution<double> normal(0.0, 1.0);
    ComplexMatrix v(m, m);
    for (Eigen::Index mu = 0; mu < m; ++mu) {
        v(mu, mu) = std::sqrt(profile.value(0.0)) * normal(gen);
        for (Eigen::Index nu = mu + 1; nu < m; ++nu) {
            const double sd = std::sqrt(0.5 * profile.value(energies[std::size_t(mu)] - energies[std::size_t(nu)]));
            const double re = normal(gen);
            const double im = normal(gen);
            const std::complex<double> z(sd * re, sd * im);
            v(mu, nu) = z;
            v(nu, mu) = std::conj(z);
        }
    }
    return v;
}

Eigensystem hermitian_eigensystem(const ComplexMatrix& h) {
    if (h.rows() != h.cols()) throw std::invalid_argument("eigensystem: matrix must be square");
    // zheevr (MRRR). The divide-and-conquer driver zheevd of the OpenBLAS
    // build we target returns non-orthonormal vectors above n ~ 600.
    Eigensystem es;
    ComplexMatrix a = h;
    const auto n = lapack_int(h.rows());
    es.vectors.resize(h.rows(), h.cols());
    es.values.resize(h.rows());
    std::vector<lapack_int> support(2 * std::size_t(n));
    lapack_int found = 0;
    const lapack_int info = LAPACKE_zheevr(LAPACK_COL_MAJOR, 'V', 'A', 'L', n, a.data(), n, 0.0, 0.0, 0, 0, 0.0,
                                           &found, es.values.data(), es.vectors.data(), n, support.data());
    if (info != 0) throw std::runtime_error("eigensystem: zheevr failed with info = " + std::to_string(info));
    if (found != n) throw std::runtime_error("eigensystem: zheevr returned an incomplete spectrum");
    return es;
}

EthObservable::EthObservable(std::vector<double> energies, double upper_edge, double a0_plus, double a0_minus,
                             std::uint64_t seed)
    : energies_(std::move(energies)), upper_edge_(upper_edge), a0_plus_(a0_plus), a0_minus_(a0_minus), seed_(seed) {
    if (energies_.size() < 2 || energies_.size() % 2 != 0) {
        throw std::invalid_argument("eth observable: level count must be even");
    }
    if (!(upper_edge_ > energies_.front())) throw std::invalid_argument("eth observable: upper edge below E_0");
}

RealVector EthObservable::smooth_diagonal() const {
    const std::size_t m = energies_.size();
    const double e0 = energies_.front();
    RealVector d(Eigen::Index(m), 1);
    for (std::size_t mu = 0; mu < m; ++mu) {
        const double a0 = mu % 2 == 0 ? a0_plus_ : a0_minus_;
        d[Eigen::Index(mu)] = a0 * (1.0 - 2.0 * (energies_[mu] - e0) / (upper_edge_ - e0));
    }
    return d;
}

RealVector EthObservable::diagonal() const {
    RealVector d = smooth_diagonal();
    auto gen = rng_stream(seed_, "eth/diagonal");
    std::normal_distribution<double> normal(0.0, 1.0 / std::sqrt(double(size())));
    for (Eigen::Index i = 0; i < d.size(); ++i) d[i] += normal(gen);
    return d;
}

ComplexMatrix EthObservable::dense() const {
    const auto m = Eigen::Index(size());
    ComplexMatrix a = ComplexMatrix::Zero(m, m);
    const RealVector d = diagonal();
    auto gen = rng_stream(seed_, "eth/offdiagonal");
    std::normal_distribution<double> normal(0.0, 1.0 / std::sqrt(2.0 * double(size())));
    for (Eigen::Index mu = 0; mu < m; ++mu) {
        a(mu, mu) = d[mu];
        for (Eigen::Index nu = mu + 1; nu < m; ++nu) {
            const double re = normal(gen);
            const double im = normal(gen);
            a(mu, nu) = {re, im};
            a(nu, mu) = {re, -im};
        }
    }
    return a;
}

ComplexVector EthObservable::apply(const ComplexVector& x) const {
    const auto m = Eigen::Index(size());
    require_state_size(x, size());
    ComplexVector y = diagonal().cast<std::complex<double>>().cwiseProduct(x);
    auto gen = rng_stream(seed_, "eth/offdiagonal");
    std::normal_distribution<double> normal(0.0, 1.0 / std::sqrt(2.0 * double(size())));
    for (Eigen::Index mu = 0; mu < m; ++mu) {
        std::complex<double> acc = 0.0;
        const std::complex<double> xm = x[mu];
        for (Eigen::Index nu = mu + 1; nu < m; ++nu) {
            const double re = normal(gen);
            const double im = normal(gen);
            const std::complex<double> r(re, im);
            acc += r * x[nu];
            y[nu] += std::conj(r) * xm;
        }
        y[mu] += acc;
    }
    return y;
}

Observable Observable::projector(std::size_t m, std::size_t index) {
    if (index >= m) throw std::invalid_argument("projector: index out of range");
    Observable o;
    o.m_ = m;
    o.projector_ = index;
    return o;
}

Observable Observable::dense(ComplexMatrix a) {
    if (a.rows() != a.cols()) throw std::invalid_argument("observable: matrix must be square");
    Observable o;
    o.m_ = std::size_t(a.rows());
    o.dense_ = std::move(a);
    return o;
}

Observable Observable::eth(EthObservable a, bool materialize) {
    if (materialize) return dense(a.dense());
    Observable o;
    o.m_ = a.size();
    o.eth_ = std::move(a);
    return o;
}

double Observable::expectation(const ComplexVector& psi) const {
    require_state_size(psi, m_);
    if (projector_) return std::norm(psi[Eigen::Index(*projector_)]);
    if (dense_) return psi.dot(*dense_ * psi).real();
    return psi.dot(eth_->apply(psi)).real();
}

ComplexVector Observable::apply(const ComplexVector& x) const {
    require_state_size(x, m_);
    if (projector_) {
        ComplexVector y = ComplexVector::Zero(x.size());
        y[Eigen::Index(*projector_)] = x[Eigen::Index(*projector_)];
        return y;
    }
    if (dense_) return *dense_ * x;
    return eth_->apply(x);
}

RealVector Observable::diagonal() const {
    if (projector_) {
        RealVector d = RealVector::Zero(Eigen::Index(m_));
        d[Eigen::Index(*projector_)] = 1.0;
        return d;
    }
    if (dense_) return dense_->diagonal().real();
    return eth_->diagonal();
}

// ------------------------------------------------------------ initial state

ComplexVector build_initial_state(const std::vector<double>& energies, const Observable& a,
                                  const InitialStateSpec& spec, std::uint64_t seed) {
    const std::size_t m = energies.size();
    if (spec.kind == InitialKind::Eigenstate) {
        if (spec.index >= m) throw std::invalid_argument("initial state: eigenstate index out of range");
        ComplexVector psi = ComplexVector::Zero(Eigen::Index(m));
        psi[Eigen::Index(spec.index)] = 1.0;
        return psi;
    }
    if (!(spec.width > 0.0) || !std::isfinite(spec.width)) throw std::invalid_argument("initial state: width must be positive");
    if (a.size() != m) throw std::invalid_argument("initial state: observable dimension mismatch");

    // Every component is drawn so the sector choice never shifts the stream.
    auto gen = rng_stream(seed, "state/phi");
    std::normal_distribution<double> normal(0.0, 1.0);
    ComplexVector phi = ComplexVector::Zero(Eigen::Index(m));
    for (std::size_t mu = 0; mu < m; ++mu) {
        const double re = normal(gen);
        const double im = normal(gen);
        phi[Eigen::Index(mu)] = in_sector(mu, spec.sector) ? std::complex<double>(re, im) : 0.0;
    }
    const double n0 = phi.norm();
    if (!(n0 > 0.0)) throw std::runtime_error("initial state: empty sector");
    phi /= n0;

    switch (spec.q) {
        case QKind::Identity:
            break;
        case QKind::SectorProjector:
            for (std::size_t mu = 0; mu < m; ++mu) {
                if (!in_sector(mu, spec.sector)) phi[Eigen::Index(mu)] = 0.0;
            }
            break;
        case QKind::OnePlusKappaA:
            phi += spec.kappa * a.apply(phi);
            break;
    }
    for (std::size_t mu = 0; mu < m; ++mu) {
        const double d = energies[mu] - spec.energy;
        phi[Eigen::Index(mu)] *= std::exp(-d * d / (4.0 * spec.width * spec.width));
    }
    const double n1 = phi.norm();
    if (!(n1 > 1e-300) || !std::isfinite(n1)) {
        throw std::runtime_error("initial state: zero norm after filtering; the window holds no levels");
    }
    return phi / n1;
}

// --------------------------------------------------------------- references

ReferenceWindow reference_window(const std::vector<double>& energies, const RealVector& a_diag, double energy,
                                 double width, double scale) {
    ReferenceWindow w;
    w.scale = scale;
    w.lo = energy - scale * width;
    w.hi = energy + scale * width;
    double sum = 0.0;
    for (std::size_t mu = 0; mu < energies.size(); ++mu) {
        if (energies[mu] >= w.lo && energies[mu] <= w.hi) {
            ++w.levels;
            sum += a_diag[Eigen::Index(mu)];
        }
    }
    if (w.levels == 0) throw std::runtime_error("references: the occupied window contains no levels");
    w.a_th = sum / double(w.levels);
    w.d0_window = double(w.levels) / (w.hi - w.lo);
    return w;
}

References undriven_and_references(const RandomMatrixModel& model, const std::vector<double>& t_grid) {
    const auto& e = model.energies;
    const std::size_t m = e.size();
    require_state_size(model.psi0, m);
    References r;
    const RealVector d = model.observable.diagonal();

    r.a_bar0 = 0.0;
    for (std::size_t mu = 0; mu < m; ++mu) r.a_bar0 += std::norm(model.psi0[Eigen::Index(mu)]) * d[Eigen::Index(mu)];
    r.a_inf = d.sum() / double(m);

    const double centre = model.initial.kind == InitialKind::Eigenstate ? e.at(model.initial.index) : model.initial.energy;
    r.window = reference_window(e, d, centre, model.initial.width, 2.0);
    r.a_th = r.window.a_th;
    r.d0_window = r.window.d0_window;
    for (double s : {1.5, 2.0, 3.0}) r.sensitivity.push_back(reference_window(e, d, centre, model.initial.width, s));

    r.t_grid = t_grid;
    r.undriven.resize(t_grid.size());
    r.undriven_h0.resize(t_grid.size());
    ComplexVector psi = ComplexVector::Zero(Eigen::Index(m));
    for (std::size_t k = 0; k < t_grid.size(); ++k) {
        const double t = t_grid[k];
        for (std::size_t mu = 0; mu < m; ++mu) {
            psi[Eigen::Index(mu)] = std::exp(-kI * (e[mu] * t)) * model.psi0[Eigen::Index(mu)];
        }
        r.undriven[k] = model.observable.expectation(psi);
        r.undriven_h0[k] = h0_expectation(e, psi);
    }
    return r;
}

// --------------------------------------------------------------- propagate

TrajectoryResult propagate(const RandomMatrixModel& model, const DrivingProtocol& protocol,
                           const std::vector<double>& t_grid, const PropagationOptions& opts) {
    check_grid(t_grid);
    if (!model.v) throw std::invalid_argument("propagate: the model has no sampled V");
    const auto& e = model.energies;
    const std::size_t m = e.size();
    require_state_size(model.psi0, m);
    const ComplexMatrix& v = *model.v;

    TrajectoryResult out;
    out.t_grid = t_grid;
    out.a_series.resize(t_grid.size());
    out.h0_series.resize(t_grid.size());
    out.norm_series.resize(t_grid.size());
    Recorder rec{model, opts, out};
    const double t_end = t_grid.back();

    // Sub-intervals on which f is smooth (piecewise-constant protocols are
    // split at their jumps).
    std::vector<double> cuts{0.0};
    for (double b : protocol.breakpoints(0.0, t_end)) cuts.push_back(b);
    cuts.push_back(t_end);

    ComplexVector psi = model.psi0;

    if (opts.method == PropagationMethod::PiecewiseExact) {
        if (!protocol.is_piecewise_constant()) {
            throw std::invalid_argument("propagate: PiecewiseExact needs a piecewise-constant protocol");
        }
        out.method = "piecewise_exact";
        std::map<double, Eigensystem> cache;
        std::size_t k = 0;
        while (k < t_grid.size() && t_grid[k] == 0.0) rec.record(k++, 0.0, psi);
        for (std::size_t s = 0; s + 1 < cuts.size() && k < t_grid.size(); ++s) {
            const double a = cuts[s], b = cuts[s + 1];
            if (!(b > a)) continue;
            const double f = protocol.value(0.5 * (a + b));
            if (f == 0.0) {
                while (k < t_grid.size() && t_grid[k] <= b) {
                    ComplexVector x(psi.size());
                    for (std::size_t mu = 0; mu < m; ++mu) x[Eigen::Index(mu)] = std::exp(-kI * (e[mu] * (t_grid[k] - a))) * psi[Eigen::Index(mu)];
                    rec.record(k, t_grid[k], x);
                    ++k;
                }
                for (std::size_t mu = 0; mu < m; ++mu) psi[Eigen::Index(mu)] *= std::exp(-kI * (e[mu] * (b - a)));
                ++out.steps;
                continue;
            }
            auto it = cache.find(f);
            if (it == cache.end()) {
                ComplexMatrix h = f * v;
                for (std::size_t mu = 0; mu < m; ++mu) h(Eigen::Index(mu), Eigen::Index(mu)) += e[mu];
                it = cache.emplace(f, hermitian_eigensystem(h)).first;
                ++out.eigendecompositions;
            }
            const auto& es = it->second;
            const ComplexVector c = es.vectors.adjoint() * psi;
            auto evolve = [&](double dt) {
                ComplexVector y = c;
                for (Eigen::Index j = 0; j < y.size(); ++j) y[j] *= std::exp(-kI * (es.values[j] * dt));
                return ComplexVector(es.vectors * y);
            };
            while (k < t_grid.size() && t_grid[k] <= b) {
                rec.record(k, t_grid[k], evolve(t_grid[k] - a));
                ++k;
            }
            psi = evolve(b - a);
            ++out.steps;
        }
        return out;
    }

    // Split-step: half H0 phase, V phase in its cached eigenbasis, half H0.
    out.method = "trotter_cached_v";
    if (!(opts.h > 0.0) || !std::isfinite(opts.h)) throw std::invalid_argument("propagate: Trotter step must be positive");
    out.h = opts.h;
    std::optional<Eigensystem> local;
    if (!model.v_eigen) {
        local = hermitian_eigensystem(v);
        out.eigendecompositions = 1;
    }
    const Eigensystem& ev = model.v_eigen ? *model.v_eigen : *local;
    const ComplexMatrix u_adj = ev.vectors.adjoint();
    ComplexVector y(psi.size());
    ComplexVector half_phase(psi.size());
    double phase_step = -1.0;

    auto advance = [&](double a, double b) {
        const auto n = std::size_t(std::max(1.0, std::ceil((b - a) / opts.h - 1e-9)));
        const double hh = (b - a) / double(n);
        if (hh != phase_step) {
            for (std::size_t mu = 0; mu < m; ++mu) half_phase[Eigen::Index(mu)] = std::exp(-kI * (0.5 * e[mu] * hh));
            phase_step = hh;
        }
        for (std::size_t i = 0; i < n; ++i) {
            const double mid = a + (double(i) + 0.5) * hh;
            const double f = protocol.value(mid);
            psi.array() *= half_phase.array();
            if (f != 0.0) {
                y.noalias() = u_adj * psi;
                for (Eigen::Index j = 0; j < y.size(); ++j) y[j] *= std::exp(-kI * (f * ev.values[j] * hh));
                psi.noalias() = ev.vectors * y;
            }
            psi.array() *= half_phase.array();
            ++out.steps;
        }
    };

    double now = 0.0;
    std::size_t cut = 1;
    for (std::size_t k = 0; k < t_grid.size(); ++k) {
        const double target = t_grid[k];
        while (now < target) {
            while (cut < cuts.size() && cuts[cut] <= now) ++cut;
            const double stop = (cut < cuts.size()) ? std::min(target, cuts[cut]) : target;
            advance(now, stop);
            now = stop;
        }
        rec.record(k, target, psi);
    }
    return out;
}

std::vector<double> auxiliary_magnus_check(const RandomMatrixModel& model, const DrivingProtocol& protocol,
                                           double t_prime, const std::vector<double>& t_grid) {
    check_grid(t_grid);
    if (!model.v) throw std::invalid_argument("auxiliary_magnus_check: the model has no sampled V");
    const auto& e = model.energies;
    const auto m = Eigen::Index(e.size());
    if (std::size_t(m) > kMaxAuxiliaryDimension) {
        throw std::invalid_argument("auxiliary_magnus_check: dimension above " + std::to_string(kMaxAuxiliaryDimension));
    }
    const auto ints = integrals(protocol, t_prime);
    const ComplexMatrix& v = *model.v;
    ComplexMatrix h(m, m);
    for (Eigen::Index mu = 0; mu < m; ++mu) {
        for (Eigen::Index nu = 0; nu < m; ++nu) {
            // (i[V, H0])_{mu nu} = i V_{mu nu} (E_nu - E_mu)
            const std::complex<double> comm = kI * v(mu, nu) * (e[std::size_t(nu)] - e[std::size_t(mu)]);
            h(mu, nu) = ints.effective_amplitude * v(mu, nu) + ints.commutator_weight * comm;
        }
        h(mu, mu) += e[std::size_t(mu)];
    }
    const Eigensystem es = hermitian_eigensystem(h);
    const ComplexVector c = es.vectors.adjoint() * model.psi0;
    std::vector<double> out(t_grid.size());
    for (std::size_t k = 0; k < t_grid.size(); ++k) {
        ComplexVector y = c;
        for (Eigen::Index j = 0; j < m; ++j) y[j] *= std::exp(-kI * (es.values[j] * t_grid[k]));
        out[k] = model.observable.expectation(es.vectors * y);
    }
    return out;
}

}  // namespace typresp
