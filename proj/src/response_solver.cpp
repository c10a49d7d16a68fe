#include "typresp/response_solver.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <mutex>
#include <sstream>
#include <thread>

namespace typresp {

namespace {

void require_grid(double h, std::size_t n) {
    if (!(h > 0.0) || !std::isfinite(h)) throw std::invalid_argument("solver: step h must be positive");
    if (n < 1) throw std::invalid_argument("solver: need at least one grid point");
}

std::string blowup_message(double t_prime, double t, double value) {
    std::ostringstream os;
    os << "solver: |gamma| = " << value << " exceeded the blow-up threshold at t = " << t << " (t' = " << t_prime
       << "); reduce the step size";
    return os.str();
}

// One Heun step of the discretized equation. `g` holds gamma_0..gamma_m,
// `k` the kernel samples; returns gamma_{m+1} and the new derivative.
template <class T>
struct HeunStepper {
    const std::vector<double>& k;
    double h;

    // Sum_{j=1}^{m} gamma_{m+1-j} gamma_j k_j: the part of the trapezoidal
    // convolution at t_{m+1} that does not involve gamma_{m+1}.
    T interior(const std::vector<T>& g, std::size_t m) const {
        T s{};
        for (std::size_t j = 1; j <= m; ++j) s += g[m + 1 - j] * g[j] * k[j];
        return s;
    }

    T derivative(T interior_sum, T g_end, std::size_t idx) const {
        return -h * (interior_sum + T(0.5) * g_end * (k[0] + k[idx]));
    }
};

template <class T>
void integrate(const std::vector<double>& k, double h, std::size_t n, std::vector<T>& g, double blowup, double t_prime) {
    g.assign(n, T{});
    g[0] = T(1.0);
    HeunStepper<T> st{k, h};
    T f_prev{};  // gamma'(0) = 0
    for (std::size_t m = 0; m + 1 < n; ++m) {
        const T s = st.interior(g, m);
        const T pred = g[m] + h * f_prev;
        const T f_pred = st.derivative(s, pred, m + 1);
        const T next = g[m] + 0.5 * h * (f_prev + f_pred);
        g[m + 1] = next;
        f_prev = st.derivative(s, next, m + 1);
        const double mag = std::abs(next);
        if (!(mag <= blowup)) throw SolverError(blowup_message(t_prime, double(m + 1) * h, mag), t_prime, double(m + 1) * h);
    }
}

std::vector<double> kernel_samples(const KernelTable& kt, double phi1, double phi2, std::size_t n) {
    if (kt.v.size() < n || kt.v2.size() < n) throw std::invalid_argument("solver: kernel table shorter than grid");
    std::vector<double> k(n);
    for (std::size_t j = 0; j < n; ++j) k[j] = phi1 * kt.v[j] - phi2 * kt.v2[j];
    return k;
}

double timescale_of(const DrivingProtocol& p) {
    switch (p.kind()) {
        case ProtocolKind::Constant:
        case ProtocolKind::Tabulated:
            return std::numeric_limits<double>::infinity();
        default:
            return p.timescale();
    }
}

}  // namespace

KernelTable make_kernel_table(const PerturbationProfile& profile, double h, std::size_t n) {
    require_grid(h, n);
    KernelTable kt;
    kt.h = h;
    kt.v.resize(n);
    kt.v2.resize(n);
    for (std::size_t j = 0; j < n; ++j) {
        const double s = double(j) * h;
        kt.v[j] = v_of_t(profile, s);
        kt.v2[j] = v_second_deriv(profile, s);
    }
    return kt;
}

ResponseSolution solve_gamma_phi(const KernelTable& kernel, double phi1, double phi2, std::size_t n,
                                 const SolverOptions& opts, double t_prime) {
    require_grid(kernel.h, n);
    if (!std::isfinite(phi1) || !std::isfinite(phi2) || phi1 < 0.0 || phi2 < 0.0) {
        throw std::invalid_argument("solver: phi1, phi2 must be finite and nonnegative");
    }
    const auto k = kernel_samples(kernel, phi1, phi2, n);
    ResponseSolution sol;
    sol.t_prime = t_prime;
    sol.h = kernel.h;
    sol.phi1 = phi1;
    sol.phi2 = phi2;
    integrate(k, kernel.h, n, sol.gamma, opts.blowup, t_prime);
    sol.t_grid.resize(n);
    for (std::size_t i = 0; i < n; ++i) sol.t_grid[i] = double(i) * kernel.h;
    sol.max_abs = 0.0;
    for (double g : sol.gamma) sol.max_abs = std::max(sol.max_abs, std::abs(g));
    sol.overshoot = sol.max_abs > 1.0 + opts.overshoot_tol;
    return sol;
}

ResponseSolution solve_gamma(const PerturbationProfile& profile, const DrivingProtocol& protocol, double t_prime,
                             double h, std::size_t n, const SolverOptions& opts) {
    require_grid(h, n);
    if (!(t_prime >= 0.0) || !std::isfinite(t_prime)) throw std::invalid_argument("solver: t' must be >= 0");
    const auto ints = integrals(protocol, t_prime);
    const auto kernel = make_kernel_table(profile, h, n);
    auto sol = solve_gamma_phi(kernel, ints.phi1, ints.phi2, n, opts, t_prime);
    if (opts.debug_complex) {
        const auto gc = solve_gamma_complex(profile, ints.phi1, ints.phi2, h, n);
        for (std::size_t i = 0; i < n; ++i) {
            if (std::abs(gc[i].imag()) >= opts.complex_tol) {
                throw SolverError("solver: complex debug run produced a non-negligible imaginary part", t_prime,
                                  double(i) * h);
            }
        }
    }
    return sol;
}

std::vector<std::complex<double>> solve_gamma_complex(const PerturbationProfile& profile, double phi1, double phi2,
                                                      double h, std::size_t n) {
    require_grid(h, n);
    // Complex kernel from the Fourier quadrature; v'' is taken by the
    // quadrature of -E^2 e^{iEt} whose imaginary part vanishes by symmetry
    // exactly as for v.
    std::vector<std::complex<double>> kc(n);
    for (std::size_t j = 0; j < n; ++j) {
        const double s = double(j) * h;
        kc[j] = phi1 * v_of_t_quadrature(profile, s) - phi2 * v_second_deriv_quadrature(profile, s);
    }
    for (const auto& c : kc) {
        if (std::abs(c.imag()) > 1e-12 * std::max(1.0, std::abs(c.real()))) {
            throw std::runtime_error("solver: kernel is not real");
        }
    }
    // Integrate with the real parts of the kernel but complex state, so that
    // any asymmetry in the arithmetic would surface as an imaginary part.
    std::vector<double> k(n);
    for (std::size_t j = 0; j < n; ++j) k[j] = kc[j].real();
    std::vector<std::complex<double>> g;
    integrate(k, h, n, g, std::numeric_limits<double>::infinity(), 0.0);
    return g;
}

std::vector<double> gamma_diagonal_values(const PerturbationProfile& profile, const DrivingProtocol& protocol, double h,
                                          std::size_t n, const DiagonalOptions& opts) {
    require_grid(h, n);
    const auto kernel = make_kernel_table(profile, h, n);
    std::vector<double> out(n, 0.0);
    out[0] = 1.0;

    std::atomic<std::size_t> next{1};
    std::atomic<bool> failed{false};
    std::mutex mu;
    std::size_t done = 1;
    std::exception_ptr first_error;
    std::size_t first_error_index = n;

    auto worker = [&]() {
        for (;;) {
            const std::size_t i = next.fetch_add(1);
            if (i >= n || failed.load()) return;
            try {
                const double tp = double(i) * h;
                const auto ints = integrals(protocol, tp);
                const auto sol = solve_gamma_phi(kernel, ints.phi1, ints.phi2, i + 1, opts.solver, tp);
                out[i] = sol.gamma[i];
            } catch (...) {
                std::lock_guard lock(mu);
                // Report the earliest failing t_i regardless of scheduling.
                if (i < first_error_index) {
                    first_error_index = i;
                    first_error = std::current_exception();
                }
                failed.store(true);
                return;
            }
            if (opts.progress) {
                std::lock_guard lock(mu);
                opts.progress(++done, n);
            }
        }
    };

    const unsigned threads = std::max(1u, opts.threads);
    if (threads == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        pool.reserve(threads);
        for (unsigned t = 0; t < threads; ++t) pool.emplace_back(worker);
        for (auto& th : pool) th.join();
    }
    if (first_error) std::rethrow_exception(first_error);
    return out;
}

std::vector<double> gamma_diagonal(const PerturbationProfile& profile, const DrivingProtocol& protocol, double h,
                                   std::size_t n, const DiagonalOptions& opts) {
    auto g = gamma_diagonal_values(profile, protocol, h, n, opts);
    for (double& x : g) x *= x;
    return g;
}

double default_step(const PerturbationProfile& profile, const DrivingProtocol& protocol, double t_max) {
    if (!(t_max > 0.0) || !std::isfinite(t_max)) throw std::invalid_argument("default_step: t_max must be positive");
    const double s0 = moment(profile, 0);
    const double s2 = moment(profile, 2);
    const double vd = profile.v0() * profile.d0();
    double r_max = 0.0;
    constexpr int samples = 2000;
    for (int i = 0; i <= samples; ++i) {
        const auto ints = integrals(protocol, t_max * double(i) / samples);
        r_max = std::max(r_max, std::sqrt(4.0 * vd * (s0 * ints.phi1 + s2 * ints.phi2)));
    }
    double scale = std::min(timescale_of(protocol), 1.0 / s0);
    if (r_max > 0.0) scale = std::min(scale, 1.0 / r_max);
    return scale / 40.0;
}

PredictionSeries predict_observable(const std::vector<double>& t_grid, const std::vector<double>& gamma_sq,
                                    const std::vector<double>& undriven, double a_th) {
    if (gamma_sq.size() != t_grid.size() || undriven.size() != t_grid.size()) {
        throw std::invalid_argument("predict_observable: series are not aligned on the same grid");
    }
    PredictionSeries p{t_grid, gamma_sq, undriven, a_th, {}};
    p.a_pred.resize(t_grid.size());
    for (std::size_t i = 0; i < t_grid.size(); ++i) p.a_pred[i] = a_th + gamma_sq[i] * (undriven[i] - a_th);
    return p;
}

}  // namespace typresp
