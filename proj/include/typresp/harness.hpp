#pragma once

#include "typresp/approximations.hpp"
#include "typresp/profile.hpp"
#include "typresp/protocols.hpp"
#include "typresp/response_solver.hpp"
#include "typresp/rmt_sim.hpp"

#include <json.hpp>

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace typresp {

inline constexpr const char* kVersion = "0.1.0";

/// Invalid or inconsistent experiment configuration.
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// ------------------------------------------------------------------ config

enum class Scenario { Fidelity, StrongScale, QuenchAsymptotics, DoublePretherm };

struct ProfileConfig {
    std::string variant = "exponential";  // exponential | tabulated
    double v0 = 1.0;
    double delta_v = 0.5;
    double d0 = 512.0;
    std::string table;  // CSV (E, v~) for tabulated

    bool operator==(const ProfileConfig&) const = default;
};

struct ProtocolConfig {
    std::string variant = "step";  // see protocol_kind_from_string
    double f0 = 0.04;
    double T = 1.0;
    std::string table;  // CSV (t, f) for tabulated

    bool operator==(const ProtocolConfig&) const = default;
};

struct InitialConfig {
    std::string kind = "eigenstate";  // eigenstate | filtered_random
    std::optional<std::size_t> index;  // default M/2
    double energy = 12.0;
    double width = 1.0;
    std::string sector = "all";  // all | plus | minus
    std::string q = "identity";  // identity | sector_projector | one_plus_kappa_a
    double kappa = 1.0;

    bool operator==(const InitialConfig&) const = default;
};

struct ModelConfig {
    std::size_t m = 2048;
    std::string spectrum = "flat";  // flat | cosine_modulated
    /// Mean level spacing; 0 selects 1/d0 of the profile.
    double mean_spacing = 0.0;
    double alpha = 0.0;
    std::string observable = "fidelity";  // fidelity | eth
    double a0_plus = 1.0;
    double a0_minus = 0.25;
    InitialConfig initial;

    bool operator==(const ModelConfig&) const = default;
};

struct GridConfig {
    double t_max = 8.0;
    double dt_out = 0.05;
    /// Response-solver step; 0 selects the default step rule.
    double solver_h = 0.0;
    double trotter_h = 0.01;
    std::string method = "trotter";  // trotter | piecewise_exact

    bool operator==(const GridConfig&) const = default;
};

struct SweepConfig {
    std::vector<double> f0;
    std::vector<double> T;
    std::vector<double> delta_v;

    bool operator==(const SweepConfig&) const = default;
};

struct ExperimentConfig {
    Scenario scenario = Scenario::Fidelity;
    std::uint64_t seed = 1;
    ProfileConfig profile;
    std::vector<ProtocolConfig> protocols{ProtocolConfig{}};
    ModelConfig model;
    GridConfig grid;
    /// Auxiliary times for `respond`.
    std::vector<double> t_primes;
    /// Prediction window in driving periods.
    double validity_periods = 5.0;
    /// Extra comparison windows [t_a, t_b].
    std::vector<std::array<double, 2>> metric_windows;
    /// |prediction - simulation| level that ends the agreement window.
    double agreement_threshold = 0.02;
    SweepConfig sweep;

    bool operator==(const ExperimentConfig&) const = default;
};

std::string to_string(Scenario s);

/// Strict parse: unknown keys, wrong types and inconsistent values throw ConfigError.
ExperimentConfig parse_config(const nlohmann::ordered_json& j);
ExperimentConfig parse_config_text(const std::string& text);
ExperimentConfig load_config(const std::filesystem::path& path);
/// Full rendering with every default spelled out; parse_config(render_config(c)) == c.
nlohmann::ordered_json render_config(const ExperimentConfig& c);

PerturbationProfile make_profile(const ProfileConfig& c);
DrivingProtocol make_protocol(const ProtocolConfig& c);

// ----------------------------------------------------------------- metrics

struct ComparisonMetrics {
    double rms = 0.0;
    double max_abs = 0.0;
    double t_a = 0.0;
    double t_b = 0.0;
    std::size_t samples = 0;
};

/// Time-averaged (trapezoidal) RMS and max of a - b over grid points with t
/// in [t_a, t_b]; segments touching a NaN sample are left out.
ComparisonMetrics compare(const std::vector<double>& t_grid, const std::vector<double>& a, const std::vector<double>& b,
                          double t_a, double t_b);

/// First grid time where |a - b| exceeds `threshold`; the last grid time if never.
double agreement_time(const std::vector<double>& t_grid, const std::vector<double>& a, const std::vector<double>& b,
                      double threshold);

/// Mean over each complete window [n T, (n+1) T).
std::vector<double> period_averages(const std::vector<double>& t_grid, const std::vector<double>& series, double T);

nlohmann::ordered_json to_json(const ComparisonMetrics& m);

// --------------------------------------------------------------------- csv

struct Column {
    std::string name;
    std::vector<double> values;  // NaN renders as an empty field
};

/// UTF-8 CSV, header row, 17 significant digits.
void write_csv(const std::filesystem::path& path, const std::vector<Column>& columns);
std::string format_double(double x);
/// `path` + ".meta.json".
void write_sidecar(const std::filesystem::path& csv_path, const nlohmann::ordered_json& meta);

// --------------------------------------------------------------- scenarios

struct RunOptions {
    unsigned threads = 1;
    std::function<void(const std::string&)> log;
};

/// Lazily built random-matrix model and reference data for one config.
class Session {
public:
    explicit Session(ExperimentConfig config, RunOptions opts = {});

    const ExperimentConfig& config() const { return config_; }
    const PerturbationProfile& profile() const { return profile_; }
    DrivingProtocol protocol(std::size_t i) const;
    std::vector<double> output_grid() const;

    /// Model without V (cheap); V and its eigensystem on demand.
    RandomMatrixModel& model();
    RandomMatrixModel& model_with_v(bool need_eigensystem);
    const References& references();

    struct Theory {
        double h = 0.0;
        std::size_t stride = 1;
        std::vector<double> t_grid;
        std::vector<double> gamma;  // gamma(t, t)
        std::vector<double> gamma_sq;
        std::vector<double> gamma_sq_hf;
        std::vector<double> gamma_sq_bessel;
        std::vector<double> gamma_sq_weak;
        std::vector<double> r;
        std::vector<double> margin;
    };
    /// Response theory on the output grid for protocol i.
    Theory theory(std::size_t i);

    struct Comparison {
        ProtocolConfig protocol;
        Theory theory;
        TrajectoryResult simulation;
        std::vector<double> undriven;
        std::vector<double> undriven_h0;
        std::vector<double> prediction;  // NaN outside the validity window (DoublePretherm)
        double a_th = 0.0;
        double a_bar0 = 0.0;
        double a_inf = 0.0;
        double d0_window = 0.0;
        ComparisonMetrics first_two_periods;
        ComparisonMetrics validity_window;
        ComparisonMetrics full;
        std::vector<ComparisonMetrics> extra;
        double agreement_time = 0.0;
    };
    /// Theory versus exact simulation for protocol i (Fidelity, DoublePretherm).
    Comparison compare_protocol(std::size_t i);

    nlohmann::ordered_json metadata() const;

private:
    ExperimentConfig config_;
    RunOptions opts_;
    PerturbationProfile profile_;
    std::optional<RandomMatrixModel> model_;
    std::optional<References> refs_;
};

struct RunSummary {
    nlohmann::ordered_json summary;
    std::vector<std::filesystem::path> files;
};

RunSummary run_respond(const ExperimentConfig& c, const std::filesystem::path& out, const RunOptions& opts = {});
RunSummary run_approx(const ExperimentConfig& c, const std::filesystem::path& out, const RunOptions& opts = {});
RunSummary run_simulate(const ExperimentConfig& c, const std::filesystem::path& out, const RunOptions& opts = {});
/// Scenario run: joined theory/simulation CSVs and metrics.
RunSummary run_compare(const ExperimentConfig& c, const std::filesystem::path& out, const RunOptions& opts = {});
/// Cartesian product over the sweep lists, one `run_compare` per point in
/// out/point_<k>; points run concurrently, results are ordered by k.
RunSummary run_sweep(const ExperimentConfig& c, const std::filesystem::path& out, const RunOptions& opts = {});

}  // namespace typresp
