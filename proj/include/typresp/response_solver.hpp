#pragma once

#include "typresp/profile.hpp"
#include "typresp/protocols.hpp"

#include <complex>
#include <cstddef>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

namespace typresp {

/// Raised when the integration blows up; carries the auxiliary time and the
/// time at which |gamma| exceeded the threshold.
class SolverError : public std::runtime_error {
public:
    SolverError(const std::string& what, double t_prime, double t)
        : std::runtime_error(what), t_prime_(t_prime), t_(t) {}
    double t_prime() const { return t_prime_; }
    double t() const { return t_; }

private:
    double t_prime_;
    double t_;
};

/// Diagnostic thresholds; they flag numerical trouble and carry no physics.
struct SolverOptions {
    double blowup = 10.0;
    double overshoot_tol = 0.05;
    /// Also run the complex-arithmetic solver with the quadrature kernel and
    /// require its imaginary part to stay below `complex_tol`.
    bool debug_complex = false;
    double complex_tol = 1e-10;
};

/// gamma(t_i, t') on t_i = i*h, i = 0..n-1.
struct ResponseSolution {
    double t_prime = 0.0;
    double h = 0.0;
    double phi1 = 0.0;
    double phi2 = 0.0;
    std::vector<double> t_grid;
    std::vector<double> gamma;
    double max_abs = 1.0;
    /// max|gamma| exceeded 1 + overshoot_tol.
    bool overshoot = false;
};

/// Kernel samples v(s_j) and v''(s_j) on s_j = j*h, shared by all solves on
/// the same grid.
struct KernelTable {
    double h = 0.0;
    std::vector<double> v;
    std::vector<double> v2;
};

KernelTable make_kernel_table(const PerturbationProfile& profile, double h, std::size_t n);

/// Solves d gamma/dt = -Int_0^t ds gamma(t-s) gamma(s) [phi1 v(s) - phi2 v''(s)],
/// gamma(0) = 1, with Heun's predictor-corrector and trapezoidal convolution.
ResponseSolution solve_gamma_phi(const KernelTable& kernel, double phi1, double phi2, std::size_t n,
                                 const SolverOptions& opts = {}, double t_prime = 0.0);

ResponseSolution solve_gamma(const PerturbationProfile& profile, const DrivingProtocol& protocol, double t_prime,
                             double h, std::size_t n, const SolverOptions& opts = {});

/// Same scheme in complex arithmetic with the kernel built from the complex
/// Fourier quadrature of the profile.
std::vector<std::complex<double>> solve_gamma_complex(const PerturbationProfile& profile, double phi1, double phi2,
                                                      double h, std::size_t n);

struct DiagonalOptions {
    unsigned threads = 1;
    /// Called with (completed, total) after each auxiliary-time solve; calls
    /// are serialized.
    std::function<void(std::size_t, std::size_t)> progress;
    SolverOptions solver;
};

/// gamma(t_i, t_i) for t_i = i*h, i = 0..n-1, one independent solve per t_i.
std::vector<double> gamma_diagonal_values(const PerturbationProfile& profile, const DrivingProtocol& protocol, double h,
                                          std::size_t n, const DiagonalOptions& opts = {});

/// gamma(t_i, t_i)^2 on the same grid.
std::vector<double> gamma_diagonal(const PerturbationProfile& profile, const DrivingProtocol& protocol, double h,
                                   std::size_t n, const DiagonalOptions& opts = {});

/// min(T, 1/Sigma0, 1/r_max) / 40 with r_max the largest strong-driving scale
/// on (0, t_max]. Protocols without a timescale drop the T term.
double default_step(const PerturbationProfile& profile, const DrivingProtocol& protocol, double t_max);

struct PredictionSeries {
    std::vector<double> t_grid;
    std::vector<double> gamma_sq;
    std::vector<double> undriven;
    double a_th = 0.0;
    std::vector<double> a_pred;
};

/// a_pred = a_th + gamma_sq * (undriven - a_th) pointwise.
PredictionSeries predict_observable(const std::vector<double>& t_grid, const std::vector<double>& gamma_sq,
                                    const std::vector<double>& undriven, double a_th);

}  // namespace typresp
