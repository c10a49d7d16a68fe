#include "typresp/profile.hpp"

#include <boost/math/quadrature/gauss.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>
#include <stdexcept>
#include <string>

namespace typresp {

namespace {

using Panel = boost::math::quadrature::gauss<double, 30>;

// Relative level at which the exponential quadrature route truncates; below
// double resolution of v(t) over the tested window.
constexpr double kExponentialCutoff = 1e-17;

// Integrates g(E) * v~(E) over [0, cutoff] with panel edges at every kink of
// the profile and panel widths resolving oscillations of frequency `omega`.
template <class G>
double integrate_half_axis(const PerturbationProfile& p, double omega, double rel_cutoff, G&& g) {
    std::vector<double> edges;
    if (p.kind() == ProfileKind::Exponential) {
        edges = {0.0, p.cutoff_energy(rel_cutoff)};
    } else {
        const auto& e = p.sample_energies();
        const double end = p.cutoff_energy(rel_cutoff);
        for (double x : e) {
            if (x >= end) break;
            edges.push_back(x);
        }
        edges.push_back(end);
    }
    const double scale = p.kind() == ProfileKind::Exponential ? p.delta_v() : 0.0;
    double max_width = std::numeric_limits<double>::infinity();
    if (scale > 0.0) max_width = 0.5 * scale;
    if (omega > 0.0) max_width = std::min(max_width, std::numbers::pi / omega);

    double total = 0.0;
    for (std::size_t i = 0; i + 1 < edges.size(); ++i) {
        const double a = edges[i], b = edges[i + 1];
        if (!(b > a)) continue;
        const auto pieces = std::isfinite(max_width) ? std::max<std::size_t>(1, std::size_t(std::ceil((b - a) / max_width))) : 1;
        const double w = (b - a) / double(pieces);
        for (std::size_t k = 0; k < pieces; ++k) {
            const double lo = a + double(k) * w;
            const double hi = (k + 1 == pieces) ? b : lo + w;
            total += Panel::integrate([&](double e) { return g(e) * p.value(e); }, lo, hi);
        }
    }
    return total;
}

std::pair<std::vector<double>, std::vector<double>> read_two_columns(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("profile: cannot open " + path.string());
    std::vector<double> a, b;
    std::string line;
    bool first = true;
    while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#') continue;
        std::replace(line.begin(), line.end(), ',', ' ');
        std::istringstream fields(line);
        double x = 0.0, y = 0.0;
        if (!(fields >> x >> y)) {
            if (first) {
                first = false;
                continue;
            }
            throw std::runtime_error("profile: malformed row in " + path.string() + ": " + line);
        }
        first = false;
        a.push_back(x);
        b.push_back(y);
    }
    return {std::move(a), std::move(b)};
}

}  // namespace

PerturbationProfile::PerturbationProfile(ProfileKind kind, double v0, double delta_v, double d0)
    : kind_(kind), v0_(v0), delta_v_(delta_v), d0_(d0) {
    if (!(v0 > 0.0) || !std::isfinite(v0)) throw std::invalid_argument("profile: v0 must be positive");
    if (!(d0 > 0.0) || !std::isfinite(d0)) throw std::invalid_argument("profile: d0 must be positive");
    if (kind == ProfileKind::Exponential && (!(delta_v > 0.0) || !std::isfinite(delta_v))) {
        throw std::invalid_argument("profile: delta_v must be positive");
    }
}

PerturbationProfile PerturbationProfile::exponential(double v0, double delta_v, double d0) {
    return {ProfileKind::Exponential, v0, delta_v, d0};
}

PerturbationProfile PerturbationProfile::tabulated(std::vector<double> energies, std::vector<double> values, double d0) {
    if (energies.size() != values.size() || energies.size() < 2) {
        throw std::invalid_argument("profile: tabulated profile needs matching samples (at least two)");
    }
    if (energies.front() != 0.0) throw std::invalid_argument("profile: first sample must be at E = 0");
    for (std::size_t i = 0; i < energies.size(); ++i) {
        if (!std::isfinite(energies[i]) || !std::isfinite(values[i])) {
            throw std::invalid_argument("profile: non-finite sample");
        }
        if (values[i] < 0.0) throw std::invalid_argument("profile: profile must be nonnegative");
        if (i > 0 && !(energies[i] > energies[i - 1])) {
            throw std::invalid_argument("profile: sample energies must be strictly increasing");
        }
    }
    PerturbationProfile p(ProfileKind::Tabulated, values.front(), 0.0, d0);
    p.energies_ = std::move(energies);
    p.values_ = std::move(values);
    return p;
}

PerturbationProfile PerturbationProfile::tabulated_from_csv(const std::filesystem::path& path, double d0) {
    auto [e, v] = read_two_columns(path);
    return tabulated(std::move(e), std::move(v), d0);
}

double PerturbationProfile::value(double energy) const {
    const double e = std::abs(energy);
    if (kind_ == ProfileKind::Exponential) return v0_ * std::exp(-e / delta_v_);
    if (e >= energies_.back()) return e == energies_.back() ? values_.back() : 0.0;
    const auto it = std::upper_bound(energies_.begin(), energies_.end(), e);
    const std::size_t k = std::size_t(std::distance(energies_.begin(), it)) - 1;
    const double w = (e - energies_[k]) / (energies_[k + 1] - energies_[k]);
    return values_[k] + w * (values_[k + 1] - values_[k]);
}

double PerturbationProfile::cutoff_energy(double rel) const {
    if (kind_ == ProfileKind::Exponential) return delta_v_ * std::log(1.0 / rel);
    const double floor = rel * v0_;
    std::size_t last = 0;
    for (std::size_t i = 0; i < values_.size(); ++i) {
        if (values_[i] >= floor) last = i;
    }
    return last + 1 < energies_.size() ? energies_[last + 1] : energies_.back();
}

double v_of_t(const PerturbationProfile& p, double t) {
    if (!std::isfinite(t)) throw std::invalid_argument("v_of_t: non-finite time");
    if (p.kind() == ProfileKind::Exponential) {
        const double dv = p.delta_v();
        return 2.0 * p.v0() * p.d0() * dv / (1.0 + dv * dv * t * t);
    }
    const double at = std::abs(t);
    return 2.0 * p.d0() * integrate_half_axis(p, at, 1e-12, [&](double e) { return std::cos(e * at); });
}

double v_second_deriv(const PerturbationProfile& p, double t) {
    if (!std::isfinite(t)) throw std::invalid_argument("v_second_deriv: non-finite time");
    if (p.kind() == ProfileKind::Exponential) {
        const double dv = p.delta_v();
        const double x = dv * dv * t * t;
        const double denom = (1.0 + x) * (1.0 + x) * (1.0 + x);
        return 4.0 * p.v0() * p.d0() * dv * dv * dv * (3.0 * x - 1.0) / denom;
    }
    return v_second_deriv_quadrature(p, t);
}

double moment(const PerturbationProfile& p, int n) {
    if (n != 0 && n != 2) throw std::invalid_argument("moment: only n = 0 and n = 2 are supported");
    if (p.kind() == ProfileKind::Exponential) {
        const double dv = p.delta_v();
        return n == 0 ? 2.0 * dv : 4.0 * dv * dv * dv;
    }
    return moment_quadrature(p, n);
}

std::complex<double> v_of_t_quadrature(const PerturbationProfile& p, double t) {
    if (!std::isfinite(t)) throw std::invalid_argument("v_of_t_quadrature: non-finite time");
    const double rel = p.kind() == ProfileKind::Exponential ? kExponentialCutoff : 1e-12;
    const double w = std::abs(t);
    // E >= 0 and E <= 0 halves, the latter via E -> -E.
    const double re_pos = integrate_half_axis(p, w, rel, [&](double e) { return std::cos(e * t); });
    const double im_pos = integrate_half_axis(p, w, rel, [&](double e) { return std::sin(e * t); });
    const double re_neg = integrate_half_axis(p, w, rel, [&](double e) { return std::cos(-e * t); });
    const double im_neg = integrate_half_axis(p, w, rel, [&](double e) { return std::sin(-e * t); });
    return p.d0() * std::complex<double>(re_pos + re_neg, im_pos + im_neg);
}

double v_second_deriv_quadrature(const PerturbationProfile& p, double t) {
    if (!std::isfinite(t)) throw std::invalid_argument("v_second_deriv_quadrature: non-finite time");
    const double rel = p.kind() == ProfileKind::Exponential ? kExponentialCutoff : 1e-12;
    const double at = std::abs(t);
    return -2.0 * p.d0() * integrate_half_axis(p, at, rel, [&](double e) { return e * e * std::cos(e * at); });
}

double moment_quadrature(const PerturbationProfile& p, int n) {
    if (n < 0) throw std::invalid_argument("moment_quadrature: negative order");
    const double rel = p.kind() == ProfileKind::Exponential ? kExponentialCutoff : 1e-12;
    const double half = integrate_half_axis(p, 0.0, rel, [&](double e) { return std::pow(e, n); });
    // Odd moments of an even profile vanish.
    return n % 2 == 0 ? 2.0 * half / p.v0() : 0.0;
}

}  // namespace typresp
