#include "typresp/protocols.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>
#include <stdexcept>
#include <string>

namespace typresp {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

void require_time(double t) {
    if (!std::isfinite(t)) throw std::invalid_argument("protocol: time must be finite");
    if (t < 0.0) throw std::domain_error("protocol: negative time " + std::to_string(t));
}

void require_positive(double value, const char* what) {
    if (!(value > 0.0) || !std::isfinite(value)) {
        throw std::invalid_argument(std::string("protocol: ") + what + " must be positive and finite");
    }
}

double sin_half_sq(double x) {
    const double s = std::sin(0.5 * x);
    return s * s;
}

// x - sin(x), accurate for small x.
double x_minus_sin(double x) {
    if (std::abs(x) < 0.1) {
        const double x2 = x * x;
        return x * x2 / 6.0 * (1.0 - x2 / 20.0 * (1.0 - x2 / 42.0 * (1.0 - x2 / 72.0 * (1.0 - x2 / 110.0))));
    }
    return x - std::sin(x);
}

// Phase within a period, tau in [0, T), and the number of completed periods.
std::pair<double, double> split_period(double t, double T) {
    double tau = std::fmod(t, T);
    if (tau < 0.0) tau += T;
    const double n = std::round((t - tau) / T);
    return {tau, n};
}

constexpr std::array<std::string_view, 7> kNames = {
    "constant", "step", "sinusoid", "linear_ramp", "pseudorandom_a", "pseudorandom_b", "tabulated"};

}  // namespace

std::string_view to_string(ProtocolKind kind) {
    return kNames[static_cast<std::size_t>(kind)];
}

std::optional<ProtocolKind> protocol_kind_from_string(std::string_view name) {
    for (std::size_t i = 0; i < kNames.size(); ++i) {
        if (kNames[i] == name) return static_cast<ProtocolKind>(i);
    }
    return std::nullopt;
}

DrivingProtocol::DrivingProtocol(ProtocolKind kind, double f0, double T) : kind_(kind), f0_(f0), T_(T) {
    if (!std::isfinite(f0)) throw std::invalid_argument("protocol: amplitude must be finite");
    if (kind != ProtocolKind::Constant && kind != ProtocolKind::Tabulated) require_positive(T, "timescale");
}

DrivingProtocol DrivingProtocol::constant(double f0) { return {ProtocolKind::Constant, f0, 0.0}; }
DrivingProtocol DrivingProtocol::step(double f0, double period) { return {ProtocolKind::Step, f0, period}; }
DrivingProtocol DrivingProtocol::sinusoid(double f0, double period) { return {ProtocolKind::Sinusoid, f0, period}; }
DrivingProtocol DrivingProtocol::linear_ramp(double f0, double ramp_time) {
    return {ProtocolKind::LinearRamp, f0, ramp_time};
}
DrivingProtocol DrivingProtocol::pseudorandom_a(double f0, double timescale) {
    return {ProtocolKind::PseudorandomA, f0, timescale};
}
DrivingProtocol DrivingProtocol::pseudorandom_b(double f0, double timescale) {
    return {ProtocolKind::PseudorandomB, f0, timescale};
}

DrivingProtocol DrivingProtocol::tabulated(std::vector<double> times, std::vector<double> values) {
    if (times.size() != values.size()) throw std::invalid_argument("protocol: sample size mismatch");
    if (times.size() < 2) throw std::invalid_argument("protocol: tabulated protocol needs at least two samples");
    for (std::size_t i = 0; i < times.size(); ++i) {
        if (!std::isfinite(times[i]) || !std::isfinite(values[i])) {
            throw std::invalid_argument("protocol: non-finite sample");
        }
        if (i > 0 && !(times[i] > times[i - 1])) {
            throw std::invalid_argument("protocol: sample times must be strictly increasing");
        }
    }
    if (times.front() < 0.0) throw std::invalid_argument("protocol: sample times must be non-negative");

    DrivingProtocol p(ProtocolKind::Tabulated, 0.0, times.back() - times.front());
    // Piecewise-linear f integrates exactly: trapezoid for F1, the matching
    // cubic-in-time rule for F2.
    const std::size_t n = times.size();
    p.cum_f1_.assign(n, 0.0);
    p.cum_f2_.assign(n, 0.0);
    for (std::size_t k = 1; k < n; ++k) {
        const double h = times[k] - times[k - 1];
        p.cum_f1_[k] = p.cum_f1_[k - 1] + 0.5 * h * (values[k - 1] + values[k]);
        p.cum_f2_[k] = p.cum_f2_[k - 1] + p.cum_f1_[k - 1] * h + values[k - 1] * h * h / 2.0 +
                       (values[k] - values[k - 1]) * h * h / 6.0;
    }
    double peak = 0.0;
    for (double v : values) peak = std::max(peak, std::abs(v));
    p.f0_ = peak;
    p.times_ = std::move(times);
    p.values_ = std::move(values);
    return p;
}

DrivingProtocol DrivingProtocol::tabulated_from_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("protocol: cannot open " + path.string());
    std::vector<double> t, f;
    std::string line;
    bool first = true;
    while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#') continue;
        std::replace(line.begin(), line.end(), ',', ' ');
        std::istringstream fields(line);
        double a = 0.0, b = 0.0;
        if (!(fields >> a >> b)) {
            if (first) {
                first = false;
                continue;
            }
            throw std::runtime_error("protocol: malformed row in " + path.string() + ": " + line);
        }
        first = false;
        t.push_back(a);
        f.push_back(b);
    }
    return tabulated(std::move(t), std::move(f));
}

bool DrivingProtocol::is_piecewise_constant() const {
    return kind_ == ProtocolKind::Constant || kind_ == ProtocolKind::Step;
}

std::vector<double> DrivingProtocol::breakpoints(double t0, double t1) const {
    std::vector<double> out;
    if (kind_ != ProtocolKind::Step || !(t1 > t0)) return out;
    const double half = 0.5 * T_;
    for (double k = std::floor(t0 / half) + 1.0;; k += 1.0) {
        const double b = k * half;
        if (b >= t1) break;
        if (b > t0) out.push_back(b);
    }
    return out;
}

double DrivingProtocol::initial_value() const {
    switch (kind_) {
        case ProtocolKind::Constant:
        case ProtocolKind::Step:
            return f0_;
        case ProtocolKind::Sinusoid:
        case ProtocolKind::LinearRamp:
            return 0.0;
        case ProtocolKind::PseudorandomA:
            return 0.0;  // 1 - 1 + 1 - 1 + 1 - 1
        case ProtocolKind::PseudorandomB:
            return 3.0 * f0_;
        case ProtocolKind::Tabulated:
            return times_.front() == 0.0 ? values_.front() : 0.0;
    }
    return 0.0;
}

std::size_t DrivingProtocol::segment_index(double t) const {
    const auto it = std::upper_bound(times_.begin(), times_.end(), t);
    return static_cast<std::size_t>(std::distance(times_.begin(), it)) - 1;
}

double DrivingProtocol::value(double t) const {
    require_time(t);
    switch (kind_) {
        case ProtocolKind::Constant:
            return f0_;
        case ProtocolKind::Step: {
            const auto [tau, n] = split_period(t, T_);
            (void)n;
            if (tau == 0.0 || tau == 0.5 * T_) return 0.0;
            return tau < 0.5 * T_ ? f0_ : -f0_;
        }
        case ProtocolKind::Sinusoid:
            return f0_ * std::sin(kTwoPi * t / T_);
        case ProtocolKind::LinearRamp:
            return t < T_ ? f0_ * t / T_ : f0_;
        case ProtocolKind::PseudorandomA: {
            double sum = 0.0;
            for (int k = 1; k <= 6; ++k) {
                const double sign = (k % 2 == 1) ? 1.0 : -1.0;
                sum += sign * std::cos(std::sqrt(double(k)) * t / T_);
            }
            return f0_ * sum;
        }
        case ProtocolKind::PseudorandomB: {
            double sum = 0.0;
            for (int k = 1; k <= 3; ++k) {
                sum += std::sin(std::sqrt(2.0 * k - 1.0) * t / T_) + std::cos(std::sqrt(2.0 * k) * t / T_);
            }
            return f0_ * sum;
        }
        case ProtocolKind::Tabulated: {
            if (t < times_.front() || t > times_.back()) return 0.0;
            if (t == times_.back()) return values_.back();
            const std::size_t k = segment_index(t);
            const double w = (t - times_[k]) / (times_[k + 1] - times_[k]);
            return values_[k] + w * (values_[k + 1] - values_[k]);
        }
    }
    return 0.0;
}

double DrivingProtocol::first_integral(double t) const {
    switch (kind_) {
        case ProtocolKind::Constant:
            return f0_ * t;
        case ProtocolKind::Step: {
            const auto [tau, n] = split_period(t, T_);
            (void)n;
            return tau <= 0.5 * T_ ? f0_ * tau : f0_ * (T_ - tau);
        }
        case ProtocolKind::Sinusoid: {
            const double w = kTwoPi / T_;
            return 2.0 * f0_ * sin_half_sq(w * t) / w;
        }
        case ProtocolKind::LinearRamp:
            return t <= T_ ? f0_ * t * t / (2.0 * T_) : f0_ * (t - 0.5 * T_);
        case ProtocolKind::PseudorandomA: {
            double sum = 0.0;
            for (int k = 1; k <= 6; ++k) {
                const double sign = (k % 2 == 1) ? 1.0 : -1.0;
                const double w = std::sqrt(double(k)) / T_;
                sum += sign * std::sin(w * t) / w;
            }
            return f0_ * sum;
        }
        case ProtocolKind::PseudorandomB: {
            double sum = 0.0;
            for (int k = 1; k <= 3; ++k) {
                const double wa = std::sqrt(2.0 * k - 1.0) / T_;
                const double wb = std::sqrt(2.0 * k) / T_;
                sum += 2.0 * sin_half_sq(wa * t) / wa + std::sin(wb * t) / wb;
            }
            return f0_ * sum;
        }
        case ProtocolKind::Tabulated: {
            if (t <= times_.front()) return 0.0;
            if (t >= times_.back()) return cum_f1_.back();
            const std::size_t k = segment_index(t);
            const double h = t - times_[k];
            const double slope = (values_[k + 1] - values_[k]) / (times_[k + 1] - times_[k]);
            return cum_f1_[k] + values_[k] * h + 0.5 * slope * h * h;
        }
    }
    return 0.0;
}

double DrivingProtocol::second_integral(double t) const {
    switch (kind_) {
        case ProtocolKind::Constant:
            return 0.5 * f0_ * t * t;
        case ProtocolKind::Step: {
            const auto [tau, n] = split_period(t, T_);
            const double half = 0.5 * T_;
            const double within = tau <= half
                                      ? 0.5 * f0_ * tau * tau
                                      : f0_ * T_ * T_ / 8.0 + f0_ * (T_ * (tau - half) - 0.5 * (tau * tau - half * half));
            return n * f0_ * T_ * T_ / 4.0 + within;
        }
        case ProtocolKind::Sinusoid: {
            const double w = kTwoPi / T_;
            return f0_ * x_minus_sin(w * t) / (w * w);
        }
        case ProtocolKind::LinearRamp:
            if (t <= T_) return f0_ * t * t * t / (6.0 * T_);
            return f0_ * (T_ * T_ / 6.0 + 0.5 * (t * t - T_ * T_) - 0.5 * T_ * (t - T_));
        case ProtocolKind::PseudorandomA: {
            double sum = 0.0;
            for (int k = 1; k <= 6; ++k) {
                const double sign = (k % 2 == 1) ? 1.0 : -1.0;
                const double w = std::sqrt(double(k)) / T_;
                sum += sign * 2.0 * sin_half_sq(w * t) / (w * w);
            }
            return f0_ * sum;
        }
        case ProtocolKind::PseudorandomB: {
            double sum = 0.0;
            for (int k = 1; k <= 3; ++k) {
                const double wa = std::sqrt(2.0 * k - 1.0) / T_;
                const double wb = std::sqrt(2.0 * k) / T_;
                sum += x_minus_sin(wa * t) / (wa * wa) + 2.0 * sin_half_sq(wb * t) / (wb * wb);
            }
            return f0_ * sum;
        }
        case ProtocolKind::Tabulated: {
            if (t <= times_.front()) return 0.0;
            if (t >= times_.back()) return cum_f2_.back() + cum_f1_.back() * (t - times_.back());
            const std::size_t k = segment_index(t);
            const double h = t - times_[k];
            const double slope = (values_[k + 1] - values_[k]) / (times_[k + 1] - times_[k]);
            return cum_f2_[k] + cum_f1_[k] * h + values_[k] * h * h / 2.0 + slope * h * h * h / 6.0;
        }
    }
    return 0.0;
}

// F2/t - F1/2, with closed forms where the generic difference would lose
// exactness (Constant) or precision (Sinusoid, LinearRamp).
double DrivingProtocol::commutator_weight(double t) const {
    switch (kind_) {
        case ProtocolKind::Constant:
            return 0.0;
        case ProtocolKind::Sinusoid: {
            const double w = kTwoPi / T_;
            const double x = w * t;
            return f0_ / w * (x_minus_sin(x) / x - sin_half_sq(x));
        }
        case ProtocolKind::LinearRamp:
            if (t <= T_) return -f0_ * t * t / (12.0 * T_);
            return f0_ * (-0.25 * T_ + T_ * T_ / (6.0 * t));
        default:
            return second_integral(t) / t - 0.5 * first_integral(t);
    }
}

ProtocolIntegrals DrivingProtocol::integrals(double t) const {
    require_time(t);
    ProtocolIntegrals out;
    if (t == 0.0) {
        out.effective_amplitude = initial_value();
        out.phi1 = out.effective_amplitude * out.effective_amplitude;
        return out;
    }
    out.F1 = first_integral(t);
    out.F2 = second_integral(t);
    out.effective_amplitude = out.F1 / t;
    out.commutator_weight = commutator_weight(t);
    out.phi1 = out.effective_amplitude * out.effective_amplitude;
    out.phi2 = out.commutator_weight * out.commutator_weight;
    return out;
}

double eval_f(const DrivingProtocol& p, double t) { return p.value(t); }

ProtocolIntegrals integrals(const DrivingProtocol& p, double t) { return p.integrals(t); }

}  // namespace typresp
