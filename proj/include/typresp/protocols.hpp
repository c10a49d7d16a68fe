#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

namespace typresp {

enum class ProtocolKind {
    Constant,
    Step,
    Sinusoid,
    LinearRamp,
    PseudorandomA,
    PseudorandomB,
    Tabulated,
};

std::string_view to_string(ProtocolKind kind);
std::optional<ProtocolKind> protocol_kind_from_string(std::string_view name);

/// First and second time integrals of a driving protocol and the derived
/// strength functions phi1 = (F1/t)^2, phi2 = (F2/t - F1/2)^2.
///
/// `effective_amplitude` (F1/t) and `commutator_weight` (F2/t - F1/2) are the
/// signed coefficients of V and i[V, H0] in the second-order Magnus
/// Hamiltonian; phi1 and phi2 are their squares.
struct ProtocolIntegrals {
    double F1 = 0.0;
    double F2 = 0.0;
    double phi1 = 0.0;
    double phi2 = 0.0;
    double effective_amplitude = 0.0;
    double commutator_weight = 0.0;
};

/// Scalar driving protocol f(t), t >= 0, multiplying the fixed operator V.
///
/// Immutable after construction. Periodic variants (Step, Sinusoid) use the
/// timescale as period, LinearRamp as ramp duration, the pseudorandom
/// variants as frequency scale (frequencies sqrt(k)/T).
class DrivingProtocol {
public:
    static DrivingProtocol constant(double f0);
    static DrivingProtocol step(double f0, double period);
    static DrivingProtocol sinusoid(double f0, double period);
    static DrivingProtocol linear_ramp(double f0, double ramp_time);
    static DrivingProtocol pseudorandom_a(double f0, double timescale);
    static DrivingProtocol pseudorandom_b(double f0, double timescale);
    /// Linear interpolation between samples, zero outside [times.front(), times.back()].
    static DrivingProtocol tabulated(std::vector<double> times, std::vector<double> values);
    /// Two-column CSV (t, f); an optional non-numeric header line is skipped.
    static DrivingProtocol tabulated_from_csv(const std::filesystem::path& path);

    ProtocolKind kind() const { return kind_; }
    double amplitude() const { return f0_; }
    double timescale() const { return T_; }
    std::span<const double> sample_times() const { return times_; }
    std::span<const double> sample_values() const { return values_; }

    /// Constant in time between the breakpoints returned by `breakpoints`.
    bool is_piecewise_constant() const;
    /// Discontinuities of f in (t0, t1), ascending.
    std::vector<double> breakpoints(double t0, double t1) const;

    /// lim_{t->0+} f(t).
    double initial_value() const;

    double value(double t) const;
    ProtocolIntegrals integrals(double t) const;

    bool operator==(const DrivingProtocol&) const = default;

private:
    DrivingProtocol(ProtocolKind kind, double f0, double T);

    double first_integral(double t) const;
    double second_integral(double t) const;
    double commutator_weight(double t) const;
    std::size_t segment_index(double t) const;

    ProtocolKind kind_;
    double f0_;
    double T_;
    std::vector<double> times_;
    std::vector<double> values_;
    std::vector<double> cum_f1_;
    std::vector<double> cum_f2_;
};

/// f(t). Rejects negative or non-finite t.
double eval_f(const DrivingProtocol& p, double t);

/// F1, F2, phi1, phi2 at time t >= 0. At t = 0 the Taylor limits
/// phi1 = f(0+)^2, phi2 = 0 are returned.
ProtocolIntegrals integrals(const DrivingProtocol& p, double t);

}  // namespace typresp
