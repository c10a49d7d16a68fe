#pragma once

#include "typresp/profile.hpp"
#include "typresp/protocols.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <vector>

namespace typresp {

// ---------------------------------------------------------------- spectrum

enum class SpectrumKind { Flat, CosineModulated };

/// Level spacings of the diagonal reference Hamiltonian H0.
///   Flat:            E_mu = mu * epsilon.
///   CosineModulated: E_0 = 0, E_{mu+1} = E_mu + eps0 [1 + alpha (1 + cos(2 pi mu / M))],
///                    eps0 = mean_spacing / (1 + alpha).
struct SpectrumSpec {
    std::size_t m = 0;
    SpectrumKind kind = SpectrumKind::Flat;
    double mean_spacing = 0.0;
    double alpha = 0.0;

    static SpectrumSpec flat(std::size_t m, double epsilon);
    static SpectrumSpec cosine_modulated(std::size_t m, double alpha, double mean_spacing);

    double epsilon0() const;
    /// E_0 .. E_{M-1}.
    std::vector<double> energies() const;
    /// E_M = E_0 + M * mean_spacing, one spacing beyond the last level.
    double upper_edge() const { return double(m) * mean_spacing; }

    bool operator==(const SpectrumSpec&) const = default;
};

// --------------------------------------------------------------------- rng

inline constexpr std::string_view kRngAlgorithm = "mt19937_64; streams seeded by seed_seq{master, fnv1a64(tag)}";

/// Independent generator for a named purpose, derived from the master seed.
std::mt19937_64 rng_stream(std::uint64_t master, std::string_view tag);

// ---------------------------------------------------------------- matrices

using ComplexMatrix = Eigen::MatrixXcd;
using ComplexVector = Eigen::VectorXcd;
using RealVector = Eigen::VectorXd;

/// Hermitian random matrix with <|V_{mu nu}|^2> = v~(E_mu - E_nu): complex
/// Gaussian above the diagonal (each part variance v~/2), real Gaussian with
/// variance v~(0) on the diagonal.
ComplexMatrix sample_v(const std::vector<double>& energies, const PerturbationProfile& profile, std::uint64_t seed);

/// Eigendecomposition of a Hermitian matrix (LAPACK zheevr).
struct Eigensystem {
    RealVector values;
    ComplexMatrix vectors;
};
Eigensystem hermitian_eigensystem(const ComplexMatrix& h);

/// Two-sector ETH observable
///   A_{mu nu} = delta_{mu nu} a_s(E_mu) + R_{mu nu},
///   a_s(E) = a0_s [1 - 2 (E - E_0) / (E_M - E_0)],  s = + for even mu, - for odd mu,
/// with R a GUE draw of variance 1/M. Entries are regenerated on demand from
/// the seed, so `apply` works without storing the matrix.
class EthObservable {
public:
    EthObservable(std::vector<double> energies, double upper_edge, double a0_plus, double a0_minus, std::uint64_t seed);

    std::size_t size() const { return energies_.size(); }
    RealVector smooth_diagonal() const;
    RealVector diagonal() const;
    ComplexMatrix dense() const;
    /// A x, streaming the off-diagonal entries in the same order as dense().
    ComplexVector apply(const ComplexVector& x) const;

private:
    std::vector<double> energies_;
    double upper_edge_;
    double a0_plus_;
    double a0_minus_;
    std::uint64_t seed_;
};

/// Observable measured along a trajectory.
class Observable {
public:
    /// |index><index|.
    static Observable projector(std::size_t m, std::size_t index);
    static Observable dense(ComplexMatrix a);
    /// Materializes the matrix when `materialize`, otherwise streams it.
    static Observable eth(EthObservable a, bool materialize);

    std::size_t size() const { return m_; }
    double expectation(const ComplexVector& psi) const;
    ComplexVector apply(const ComplexVector& x) const;
    RealVector diagonal() const;
    double trace() const { return diagonal().sum(); }
    bool is_dense() const { return dense_.has_value(); }

private:
    std::size_t m_ = 0;
    std::optional<std::size_t> projector_;
    std::optional<ComplexMatrix> dense_;
    std::optional<EthObservable> eth_;
};

// ------------------------------------------------------------ initial state

enum class InitialKind { Eigenstate, FilteredRandom };
enum class Sector { All, Plus, Minus };
enum class QKind { Identity, SectorProjector, OnePlusKappaA };

struct InitialStateSpec {
    InitialKind kind = InitialKind::Eigenstate;
    std::size_t index = 0;  // Eigenstate
    double energy = 0.0;    // filter centre E
    double width = 1.0;     // filter width Delta E
    Sector sector = Sector::All;
    QKind q = QKind::Identity;
    double kappa = 1.0;
};

/// Eigenstate: basis vector. FilteredRandom: Haar-random |phi> in the chosen
/// sector, then Q, then exp(-(E_mu - E)^2 / (4 Delta E^2)), then normalize.
ComplexVector build_initial_state(const std::vector<double>& energies, const Observable& a,
                                  const InitialStateSpec& spec, std::uint64_t seed);

// -------------------------------------------------------------------- model

struct ModelSeeds {
    std::uint64_t master = 0;
    std::uint64_t v = 0;
    std::uint64_t observable = 0;
    std::uint64_t state = 0;
};

/// Derived per-purpose seeds; adding consumers never shifts existing ones.
ModelSeeds derive_seeds(std::uint64_t master);

struct RandomMatrixModel {
    SpectrumSpec spectrum;
    std::vector<double> energies;
    Observable observable;
    InitialStateSpec initial;
    ComplexVector psi0;
    ModelSeeds seeds;
    /// Empty until sampled; not needed for the reference constants.
    std::optional<ComplexMatrix> v;
    /// Eigensystem of V, reused by Trotter propagation when present.
    std::optional<Eigensystem> v_eigen;
};

struct ReferenceWindow {
    double scale = 2.0;  // window = [E - scale*DeltaE, E + scale*DeltaE]
    double lo = 0.0;
    double hi = 0.0;
    std::size_t levels = 0;
    double d0_window = 0.0;
    double a_th = 0.0;
};

struct References {
    std::vector<double> t_grid;
    std::vector<double> undriven;
    std::vector<double> undriven_h0;
    double a_bar0 = 0.0;
    double a_th = 0.0;
    double a_inf = 0.0;
    double d0_window = 0.0;
    ReferenceWindow window;
    /// Window widths 1.5, 2 and 3 times Delta E.
    std::vector<ReferenceWindow> sensitivity;
};

/// Occupied window statistics around the initial-state energy.
ReferenceWindow reference_window(const std::vector<double>& energies, const RealVector& a_diag, double energy,
                                 double width, double scale);

/// Undriven series by phase evolution under H0 plus the constants a_bar0
/// (diagonal ensemble), a_th (window average), a_inf (tr A / M) and the
/// window density of states. `t_grid` may be empty.
References undriven_and_references(const RandomMatrixModel& model, const std::vector<double>& t_grid);

// --------------------------------------------------------------- propagate

enum class PropagationMethod { PiecewiseExact, TrotterCachedV };

struct PropagationOptions {
    PropagationMethod method = PropagationMethod::TrotterCachedV;
    double h = 0.01;  // Trotter step upper bound
    double norm_tol = 1e-6;
    std::function<void(std::size_t, std::size_t)> progress;
};

struct TrajectoryResult {
    std::vector<double> t_grid;
    std::vector<double> a_series;
    std::vector<double> h0_series;
    std::vector<double> norm_series;
    std::string method;
    double h = 0.0;
    std::size_t steps = 0;
    double max_norm_drift = 0.0;
    std::size_t eigendecompositions = 0;
};

/// Schroedinger evolution under H0 + f(t) V sampled at ascending `t_grid`
/// (first point >= 0). Requires model.v.
TrajectoryResult propagate(const RandomMatrixModel& model, const DrivingProtocol& protocol,
                           const std::vector<double>& t_grid, const PropagationOptions& opts = {});

/// Evolution under the fixed second-order Magnus Hamiltonian
///   H0 + (F1/t') V + (F2/t' - F1/2) i[V, H0]
/// returning <A>(t, t'). Small models only.
std::vector<double> auxiliary_magnus_check(const RandomMatrixModel& model, const DrivingProtocol& protocol,
                                           double t_prime, const std::vector<double>& t_grid);

inline constexpr std::size_t kMaxAuxiliaryDimension = 1024;

}  // namespace typresp
