#include "typresp/approximations.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <sstream>
#include <stdexcept>
#include <string>

namespace typresp {

namespace {

constexpr double kPi = std::numbers::pi;

double j1_series(double x) {
    const double q = 0.25 * x * x;
    double term = 0.5 * x;
    double sum = term;
    for (int k = 1; k < 30; ++k) {
        term *= -q / (double(k) * double(k + 1));
        sum += term;
    }
    return sum;
}

// Hankel expansion for order 1 (mu = 4), truncated at the smallest term.
double j1_asymptotic(double x) {
    constexpr double mu = 4.0;
    double p = 1.0, q = 0.0;
    double term = 1.0;
    double prev = std::numeric_limits<double>::infinity();
    for (int k = 1; k < 60; ++k) {
        const double odd = 2.0 * k - 1.0;
        term *= (mu - odd * odd) / (double(k) * 8.0 * x);
        const double mag = std::abs(term);
        if (mag >= prev || mag < 1e-17) break;
        prev = mag;
        // a_k / x^k with alternating signs on even and odd k.
        switch (k % 4) {
            case 1: q += term; break;
            case 2: p -= term; break;
            case 3: q -= term; break;
            case 0: p += term; break;
        }
    }
    const double chi = x - 0.75 * kPi;
    return std::sqrt(2.0 / (kPi * x)) * (p * std::cos(chi) - q * std::sin(chi));
}

void require_nonneg(double x, const char* what) {
    if (!std::isfinite(x) || x < 0.0) throw std::invalid_argument(std::string(what) + " must be finite and >= 0");
}

}  // namespace

double bessel_j1(double x) {
    if (!std::isfinite(x)) throw std::invalid_argument("bessel_j1: non-finite argument");
    const double ax = std::abs(x);
    const double v = ax <= 12.0 ? j1_series(ax) : j1_asymptotic(ax);
    return x < 0.0 ? -v : v;
}

StrongDrivingScale r_scale_phi(const PerturbationProfile& profile, double phi1, double phi2) {
    StrongDrivingScale s;
    s.sigma0 = moment(profile, 0);
    const double sigma2 = moment(profile, 2);
    s.r = std::sqrt(4.0 * profile.v0() * profile.d0() * (s.sigma0 * phi1 + sigma2 * phi2));
    s.margin = s.r / s.sigma0;
    s.valid = s.margin > kStrongMarginThreshold;
    return s;
}

StrongDrivingScale r_scale(const PerturbationProfile& profile, const DrivingProtocol& protocol, double t) {
    const auto ints = integrals(protocol, t);
    return r_scale_phi(profile, ints.phi1, ints.phi2);
}

double strong_driving_gamma(double r, double t) {
    require_nonneg(r, "strong_driving_gamma: r");
    require_nonneg(t, "strong_driving_gamma: t");
    const double x = r * t;
    if (x < 1e-4) return 1.0 - x * x / 8.0;
    return 2.0 * bessel_j1(x) / x;
}

FastDrivingRates fast_driving_rates_phi(const PerturbationProfile& profile, double phi1) {
    FastDrivingRates fr;
    const double sigma0 = moment(profile, 0);
    fr.r_hat = kPi * profile.v0() * phi1 * profile.d0();
    fr.s_sq = 1.0 - 2.0 * kPi * fr.r_hat / sigma0;
    const std::complex<double> s = std::sqrt(std::complex<double>(fr.s_sq, 0.0));
    const double r0 = sigma0 / kPi;
    fr.r_0 = r0;
    fr.r_minus1 = r0 * (1.0 - s);
    fr.r_plus1 = r0 * (1.0 + s);
    return fr;
}

FastDrivingRates fast_driving_rates(const PerturbationProfile& profile, const DrivingProtocol& protocol, double t_prime) {
    return fast_driving_rates_phi(profile, integrals(protocol, t_prime).phi1);
}

double fast_driving_gamma_rates(const FastDrivingRates& fr, double t) {
    if (!std::isfinite(t)) throw std::invalid_argument("fast_driving_gamma: non-finite time");
    const double at = std::abs(t);
    if (std::abs(fr.s_sq) < 1e-6) {
        // Expansion of the formula to first order in s^2 about r_0 = 2 r_hat.
        const double u = fr.r_0.real() * at;
        const double s2 = fr.s_sq;
        const double bracket = 2.0 + 2.0 * u + 0.5 * u * u + s2 * (u * u * u * u / 24.0 + u * u * u / 3.0 + 0.5 * u * u);
        return 0.5 * std::exp(-u) * bracket;
    }
    const std::complex<double> rh(fr.r_hat, 0.0);
    const std::complex<double> num = (fr.r_plus1 - rh) * std::exp(-fr.r_minus1 * at) -
                                     2.0 * rh * std::exp(-fr.r_0 * at) +
                                     (fr.r_minus1 - rh) * std::exp(-fr.r_plus1 * at);
    const std::complex<double> den = 2.0 * (fr.r_0 - 2.0 * rh);
    const std::complex<double> g = num / den;
    if (std::abs(g.imag()) >= 1e-10) {
        std::ostringstream os;
        os << "fast_driving_gamma: imaginary part " << g.imag() << " at t = " << t;
        throw std::runtime_error(os.str());
    }
    return g.real();
}

double fast_driving_gamma(const PerturbationProfile& profile, const DrivingProtocol& protocol, double t, double t_prime) {
    return fast_driving_gamma_rates(fast_driving_rates(profile, protocol, t_prime), t);
}

double weak_fast_gamma(const PerturbationProfile& profile, const DrivingProtocol& protocol, double t, double t_prime) {
    if (!std::isfinite(t)) throw std::invalid_argument("weak_fast_gamma: non-finite time");
    const double r_hat = kPi * profile.v0() * integrals(protocol, t_prime).phi1 * profile.d0();
    return std::exp(-r_hat * std::abs(t));
}

std::vector<double> uniform_energy_grid(double half_width, double de) {
    if (!(half_width > 0.0) || !(de > 0.0)) throw std::invalid_argument("energy grid: width and spacing must be positive");
    const auto half = static_cast<std::size_t>(std::ceil(half_width / de));
    std::vector<double> e(2 * half + 1);
    for (std::size_t i = 0; i < e.size(); ++i) e[i] = (double(i) - double(half)) * de;
    return e;
}

std::vector<double> default_energy_grid(const PerturbationProfile& profile, double phi1, double phi2, double de) {
    const auto s = r_scale_phi(profile, phi1, phi2);
    return uniform_energy_grid(5.0 * std::max(s.r, s.sigma0), de);
}

double default_eta(const std::vector<double>& e_grid) {
    if (e_grid.size() < 2) throw std::invalid_argument("energy grid too short");
    return 4.0 * (e_grid[1] - e_grid[0]);
}

ResolventGrid resolvent_solve(const PerturbationProfile& profile, double phi1, double phi2,
                              const std::vector<double>& e_grid, double eta, const ResolventOptions& opts) {
    if (!(eta > 0.0)) throw std::invalid_argument("resolvent_solve: eta must be positive");
    if (e_grid.size() < 3) throw std::invalid_argument("resolvent_solve: energy grid too short");
    const std::size_t n = e_grid.size();
    const double de = e_grid[1] - e_grid[0];
    for (std::size_t i = 1; i < n; ++i) {
        if (std::abs(e_grid[i] - e_grid[i - 1] - de) > 1e-9 * std::abs(de)) {
            throw std::invalid_argument("resolvent_solve: energy grid must be uniform");
        }
    }

    // Weights D0 * dE * [phi1 + E^2 phi2] v~(E) on the shifts E = j dE.
    const auto jmax = static_cast<std::ptrdiff_t>(std::ceil(profile.cutoff_energy() / de));
    std::vector<double> w(std::size_t(2 * jmax + 1));
    for (std::ptrdiff_t j = -jmax; j <= jmax; ++j) {
        const double e = double(j) * de;
        const double edge = (j == -jmax || j == jmax) ? 0.5 : 1.0;
        w[std::size_t(j + jmax)] = edge * profile.d0() * de * (phi1 + e * e * phi2) * profile.value(e);
    }

    const std::complex<double> ieta(0.0, eta);
    // ext[k] holds G at energy e_grid[0] + (k - jmax) dE: the free resolvent
    // outside the grid, the current iterate inside.
    const std::size_t off = std::size_t(jmax);
    std::vector<std::complex<double>> ext(n + 2 * off);
    for (std::size_t k = 0; k < ext.size(); ++k) {
        ext[k] = 1.0 / (e_grid[0] + (double(k) - double(off)) * de - ieta);
    }
    std::vector<std::complex<double>> next(n);

    ResolventGrid rg;
    rg.e_grid = e_grid;
    rg.eta = eta;
    rg.d0 = profile.d0();
    const auto interior = [&]() { return std::vector<std::complex<double>>(ext.begin() + std::ptrdiff_t(off), ext.begin() + std::ptrdiff_t(off + n)); };
    if (phi1 == 0.0 && phi2 == 0.0) {
        rg.g = interior();
        return rg;
    }

    for (std::size_t it = 1; it <= opts.max_iter; ++it) {
        double change = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            // sigma = sum_j G(E_i - j dE) w_j, i.e. ext[off + i - j].
            std::complex<double> sigma = 0.0;
            const std::complex<double>* base = ext.data() + off + i;
            for (std::ptrdiff_t j = -jmax; j <= jmax; ++j) sigma += base[-j] * w[std::size_t(j + jmax)];
            std::complex<double> cand = 1.0 / (e_grid[i] - ieta - sigma);
            // Im G must have the sign opposite to Im z.
            if (cand.imag() < 0.0) cand = std::conj(cand);
            const std::complex<double> old = ext[off + i];
            next[i] = (1.0 - opts.damping) * old + opts.damping * cand;
            change = std::max(change, std::abs(next[i] - old));
        }
        std::copy(next.begin(), next.end(), ext.begin() + std::ptrdiff_t(off));
        if (change < opts.tol) {
            rg.g = interior();
            rg.iterations = it;
            return rg;
        }
    }
    throw std::runtime_error("resolvent_solve: no convergence after " + std::to_string(opts.max_iter) + " iterations");
}

std::complex<double> semicircle_resolvent(double r, std::complex<double> z) {
    if (!(r > 0.0)) throw std::invalid_argument("semicircle_resolvent: r must be positive");
    const double sgn = z.imag() > 0.0 ? 1.0 : (z.imag() < 0.0 ? -1.0 : 0.0);
    const std::complex<double> i(0.0, 1.0);
    return (2.0 / (r * r)) * (z - i * sgn * std::sqrt(r * r - z * z));
}

ResolventGrid semicircle_grid(double r, double d0, const std::vector<double>& e_grid, double eta) {
    ResolventGrid rg;
    rg.e_grid = e_grid;
    rg.eta = eta;
    rg.d0 = d0;
    rg.g.resize(e_grid.size());
    for (std::size_t i = 0; i < e_grid.size(); ++i) rg.g[i] = semicircle_resolvent(r, {e_grid[i], -eta});
    return rg;
}

double gamma_from_resolvent(const ResolventGrid& rg, double t, std::vector<std::string>* warnings) {
    const std::size_t n = rg.e_grid.size();
    if (n < 2 || rg.g.size() != n) throw std::invalid_argument("gamma_from_resolvent: malformed grid");
    if (!std::isfinite(t)) throw std::invalid_argument("gamma_from_resolvent: non-finite time");
    if (warnings && std::abs(t) > 0.5 / rg.eta) {
        std::ostringstream os;
        os << "gamma_from_resolvent: t = " << t << " exceeds the resolution limit 1/(2 eta) = " << 0.5 / rg.eta;
        warnings->push_back(os.str());
    }
    const double de = rg.e_grid[1] - rg.e_grid[0];
    // Trapezoid of cos(Et) Im G minus the same trapezoid of the free
    // resolvent, plus the free resolvent's exact transform exp(-eta t).
    double sum = 0.0, free_sum = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double e = rg.e_grid[i];
        const double wgt = (i == 0 || i + 1 == n) ? 0.5 : 1.0;
        const double c = std::cos(e * t) * wgt;
        sum += c * rg.g[i].imag();
        free_sum += c * rg.eta / (e * e + rg.eta * rg.eta);
    }
    const double at = std::abs(t);
    const double damped = (sum - free_sum) * de / kPi + std::exp(-rg.eta * at);
    return damped * std::exp(rg.eta * at);
}

std::vector<double> spectral_function(const ResolventGrid& rg) {
    std::vector<double> u(rg.g.size());
    for (std::size_t i = 0; i < u.size(); ++i) u[i] = rg.d0 / kPi * rg.g[i].imag();
    return u;
}

double crossover_amplitude(const PerturbationProfile& profile, double epsilon) {
    if (profile.kind() != ProfileKind::Exponential) {
        throw std::invalid_argument("crossover_amplitude: defined for exponential profiles only");
    }
    require_nonneg(epsilon, "crossover_amplitude: epsilon");
    return std::sqrt(2.0 * epsilon * profile.delta_v() / (kPi * kPi * profile.v0()));
}

}  // namespace typresp
