#pragma once

#include "typresp/profile.hpp"
#include "typresp/protocols.hpp"

#include <complex>
#include <cstddef>
#include <string>
#include <vector>

namespace typresp {

/// Bessel function of the first kind, order 1. Absolute error below 1e-10.
double bessel_j1(double x);

/// Strong-driving scale r = sqrt(4 v~(0) D0 [Sigma0 phi1 + Sigma2 phi2]).
struct StrongDrivingScale {
    double r = 0.0;
    double sigma0 = 0.0;
    double margin = 0.0;  // r / Sigma0
    /// margin > kStrongMarginThreshold; a heuristic reading of r >> Sigma0.
    bool valid = false;
};

inline constexpr double kStrongMarginThreshold = 3.0;

StrongDrivingScale r_scale_phi(const PerturbationProfile& profile, double phi1, double phi2);
StrongDrivingScale r_scale(const PerturbationProfile& profile, const DrivingProtocol& protocol, double t);

/// 2 J1(r t) / (r t), equal to 1 at r t = 0.
double strong_driving_gamma(double r, double t);

/// First-order Magnus rates. r_0 = Sigma0/pi, r_{+-1} = r_0 (1 +- s) with
/// s = sqrt(1 - 2 pi r_hat / Sigma0), imaginary once 2 pi r_hat > Sigma0.
struct FastDrivingRates {
    double r_hat = 0.0;
    std::complex<double> r_minus1;
    std::complex<double> r_0;
    std::complex<double> r_plus1;
    /// 1 - 2 pi r_hat / Sigma0 (= s^2).
    double s_sq = 1.0;
};

FastDrivingRates fast_driving_rates_phi(const PerturbationProfile& profile, double phi1);
FastDrivingRates fast_driving_rates(const PerturbationProfile& profile, const DrivingProtocol& protocol, double t_prime);

/// Fast-driving gamma from the three-exponential formula; uses the analytic
/// s -> 0 expansion when |s^2| < 1e-6.
double fast_driving_gamma_rates(const FastDrivingRates& rates, double t);
double fast_driving_gamma(const PerturbationProfile& profile, const DrivingProtocol& protocol, double t, double t_prime);

/// exp(-r_hat(t') |t|).
double weak_fast_gamma(const PerturbationProfile& profile, const DrivingProtocol& protocol, double t, double t_prime);

/// Resolvent G(E - i eta, t') on a uniform energy grid.
struct ResolventGrid {
    std::vector<double> e_grid;
    double eta = 0.0;
    std::vector<std::complex<double>> g;
    double t_prime = 0.0;
    double d0 = 0.0;
    std::size_t iterations = 0;
};

struct ResolventOptions {
    double damping = 0.5;
    double tol = 1e-10;
    std::size_t max_iter = 10000;
};

/// Uniform grid on [-half_width, half_width] with spacing close to `de`.
std::vector<double> uniform_energy_grid(double half_width, double de);

/// Grid spanning +-5 max(r, Sigma0) with spacing `de`, and eta = 4 de.
std::vector<double> default_energy_grid(const PerturbationProfile& profile, double phi1, double phi2, double de);
double default_eta(const std::vector<double>& e_grid);

/// Damped fixed-point iteration of
///   G(z) = 1 / (z - Int dE D0 G(z - E) [phi1 + E^2 phi2] v~(E))
/// on the line z = E - i eta. Outside the grid G is replaced by 1/z.
ResolventGrid resolvent_solve(const PerturbationProfile& profile, double phi1, double phi2,
                              const std::vector<double>& e_grid, double eta, const ResolventOptions& opts = {});

/// Closed-form semicircle resolvent (2/r^2)[z - i sgn(Im z) sqrt(r^2 - z^2)].
std::complex<double> semicircle_resolvent(double r, std::complex<double> z);
ResolventGrid semicircle_grid(double r, double d0, const std::vector<double>& e_grid, double eta);

/// gamma(t) = (1/pi) Int dE e^{iEt} Im G(E - i eta) * e^{eta t}. The part of
/// the free resolvent outside the grid is added analytically. Appends a
/// warning to `warnings` when t > 1/(2 eta).
double gamma_from_resolvent(const ResolventGrid& rg, double t, std::vector<std::string>* warnings = nullptr);

/// u(E) = (D0/pi) Im G(E - i eta).
std::vector<double> spectral_function(const ResolventGrid& rg);

/// sqrt(2 eps Delta_v / (pi^2 v~(0))); exponential profiles only.
double crossover_amplitude(const PerturbationProfile& profile, double epsilon);

}  // namespace typresp
