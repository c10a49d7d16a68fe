#pragma once

#include <complex>
#include <filesystem>
#include <vector>

namespace typresp {

enum class ProfileKind { Exponential, Tabulated };

/// Perturbation profile: the coarse-grained variance of V's matrix elements
/// as a function of the energy difference of the coupled levels, together
/// with the density of states D0 in the occupied window.
///
/// The profile is even in E and nonnegative. Exponential:
///   v~(E) = v0 * exp(-|E| / delta_v).
/// Tabulated: samples at E >= 0 starting at E = 0, linearly interpolated,
/// mirrored to E < 0 and zero beyond the last sample.
class PerturbationProfile {
public:
    static PerturbationProfile exponential(double v0, double delta_v, double d0);
    static PerturbationProfile tabulated(std::vector<double> energies, std::vector<double> values, double d0);
    /// Two-column CSV (E, v~(E)); an optional header line is skipped.
    static PerturbationProfile tabulated_from_csv(const std::filesystem::path& path, double d0);

    ProfileKind kind() const { return kind_; }
    double v0() const { return v0_; }
    /// Exponential decay scale; zero for tabulated profiles.
    double delta_v() const { return delta_v_; }
    double d0() const { return d0_; }
    const std::vector<double>& sample_energies() const { return energies_; }
    const std::vector<double>& sample_values() const { return values_; }

    /// v~(E).
    double value(double energy) const;
    /// Energy beyond which the profile is below `rel` * v~(0).
    double cutoff_energy(double rel = 1e-12) const;

    bool operator==(const PerturbationProfile&) const = default;

private:
    PerturbationProfile(ProfileKind kind, double v0, double delta_v, double d0);

    ProfileKind kind_;
    double v0_;
    double delta_v_;
    double d0_;
    std::vector<double> energies_;
    std::vector<double> values_;
};

/// v(t) = Int dE D0 exp(iEt) v~(E): closed form for the exponential profile,
/// cosine quadrature for tabulated ones. Real and even in t.
double v_of_t(const PerturbationProfile& p, double t);

/// d^2 v / dt^2.
double v_second_deriv(const PerturbationProfile& p, double t);

/// Sigma_n = (1 / v~(0)) Int dE E^n v~(E), n in {0, 2}.
double moment(const PerturbationProfile& p, int n);

/// Direct quadrature of the complex Fourier integral over the full energy
/// axis (Gauss-Legendre panels). Independent of the closed forms; the
/// imaginary part vanishes for even profiles up to rounding.
std::complex<double> v_of_t_quadrature(const PerturbationProfile& p, double t);

/// -Int dE D0 E^2 cos(Et) v~(E) by quadrature.
double v_second_deriv_quadrature(const PerturbationProfile& p, double t);

/// Sigma_n by quadrature, any n >= 0.
double moment_quadrature(const PerturbationProfile& p, int n);

}  // namespace typresp
