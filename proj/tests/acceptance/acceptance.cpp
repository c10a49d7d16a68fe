// Acceptance runner: one pass/fail line per criterion on stdout, details on stderr.
#include "typresp/harness.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <numbers>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

using namespace typresp;
namespace fs = std::filesystem;

#ifndef TYPRESP_CONFIG_DIR
#define TYPRESP_CONFIG_DIR "configs"
#endif

namespace {

struct Outcome {
    bool pass = true;
    std::vector<std::string> notes;

    void check(bool ok, const std::string& what) {
        pass = pass && ok;
        notes.push_back(std::string(ok ? "ok   " : "FAIL ") + what);
    }
};

std::string fmt(const char* f, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

double rel_dev(double x, double ref) { return std::abs(x - ref) / std::abs(ref); }

unsigned default_threads() {
    if (const char* env = std::getenv("TYPRESP_THREADS")) {
        const int k = std::atoi(env);
        if (k > 0) return unsigned(k);
    }
    return std::max(1u, std::thread::hardware_concurrency());
}

struct Context {
    fs::path workdir;
    unsigned threads = 1;
};

ExperimentConfig config(const std::string& name) { return load_config(fs::path(TYPRESP_CONFIG_DIR) / name); }

// Least-squares slope and intercept.
std::pair<double, double> linear_fit(const std::vector<double>& x, const std::vector<double>& y) {
    const double n = double(x.size());
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sx += x[i];
        sy += y[i];
        sxx += x[i] * x[i];
        sxy += x[i] * y[i];
    }
    const double slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
    return {slope, (sy - slope * sx) / n};
}

// ------------------------------------------------------------------ 1

Outcome protocol_identities(const Context&) {
    Outcome o;
    for (const auto& p : {DrivingProtocol::step(0.04, 0.5), DrivingProtocol::step(0.7, 1.3),
                          DrivingProtocol::sinusoid(0.08, 1.0), DrivingProtocol::sinusoid(0.7, 1.3)}) {
        const double T = p.timescale();
        double worst1 = 0, worst2 = 0;
        for (int n = 1; n <= 10; ++n) {
            worst1 = std::max(worst1, integrals(p, n * T).phi1);
            worst2 = std::max(worst2, integrals(p, (n - 0.5) * T).phi2);
        }
        const std::string name = fmt("%s(f0=%g,T=%g)", std::string(to_string(p.kind())).c_str(), p.amplitude(), T);
        o.check(worst1 < 1e-12, fmt("%s max phi1(nT) = %.3g", name.c_str(), worst1));
        o.check(worst2 < 1e-12, fmt("%s max phi2((n-1/2)T) = %.3g", name.c_str(), worst2));
    }

    const auto c = DrivingProtocol::constant(0.37);
    bool zero = true;
    for (double t : {0.0, 1e-9, 0.3, 7.0, 123.4, 1e5}) zero = zero && integrals(c, t).phi2 == 0.0;
    o.check(zero, "constant protocol phi2 == 0 exactly");

    const double f0 = 0.04, T = 1.0;
    const auto ramp = integrals(DrivingProtocol::linear_ramp(f0, T), 50 * T);
    const double d1 = rel_dev(ramp.phi1, f0 * f0), d2 = rel_dev(ramp.phi2, f0 * f0 * T * T / 16);
    o.check(d1 < 0.02, fmt("linear ramp at 50T: phi1 / f0^2 - 1 = %+.4f", ramp.phi1 / (f0 * f0) - 1));
    o.check(d2 < 0.02, fmt("linear ramp at 50T: phi2 / (f0^2 T^2/16) - 1 = %+.4f", ramp.phi2 / (f0 * f0 * T * T / 16) - 1));
    return o;
}

// ------------------------------------------------------------------ 2

Outcome profile_identities(const Context&) {
    Outcome o;
    for (double dv : {0.5, 4.0}) {
        for (auto [v0, d0] : {std::pair{1.0, 512.0}, std::pair{8.0, 64.0}}) {
            const auto p = PerturbationProfile::exponential(v0, dv, d0);
            const double s0 = 2 * dv, s2 = 4 * dv * dv * dv;
            const std::string tag = fmt("dv=%g v0=%g d0=%g", dv, v0, d0);
            const double e0 = std::max(rel_dev(moment(p, 0), s0), rel_dev(moment_quadrature(p, 0), s0));
            const double e2 = std::max(rel_dev(moment(p, 2), s2), rel_dev(moment_quadrature(p, 2), s2));
            o.check(e0 < 1e-10, fmt("%s Sigma0 rel err %.3g", tag.c_str(), e0));
            o.check(e2 < 1e-10, fmt("%s Sigma2 rel err %.3g", tag.c_str(), e2));
            const double v_ref = v0 * d0 * s0, vpp_ref = -v0 * d0 * s2;
            const double ev = std::max(rel_dev(v_of_t(p, 0), v_ref), rel_dev(v_of_t_quadrature(p, 0).real(), v_ref));
            const double evpp =
                std::max(rel_dev(v_second_deriv(p, 0), vpp_ref), rel_dev(v_second_deriv_quadrature(p, 0), vpp_ref));
            o.check(ev < 1e-8, fmt("%s v(0) rel err %.3g", tag.c_str(), ev));
            o.check(evpp < 1e-8, fmt("%s v''(0) rel err %.3g", tag.c_str(), evpp));
        }
    }
    return o;
}

// ------------------------------------------------------------------ 3

double bessel_closed_form(double r, double t) {
    const double x = r * t;
    return x == 0.0 ? 1.0 : 2.0 * std::cyl_bessel_j(1.0, x) / x;
}

Outcome solver_convergence(const Context&) {
    Outcome o;

    // Constant kernel v = 1: exact solution 2 J1(r t)/(r t), r = 2 sqrt(phi1).
    auto oracle_error = [](double h) {
        const double t_max = 8.0, phi1 = 1.0;
        const auto n = std::size_t(std::llround(t_max / h)) + 1;
        KernelTable kt;
        kt.h = h;
        kt.v.assign(n, 1.0);
        kt.v2.assign(n, 0.0);
        const auto sol = solve_gamma_phi(kt, phi1, 0.0, n);
        double err = 0;
        for (std::size_t i = 0; i < n; ++i) err = std::max(err, std::abs(sol.gamma[i] - bessel_closed_form(2.0, i * h)));
        return err;
    };
    const double e1 = oracle_error(0.04), e2 = oracle_error(0.02), e3 = oracle_error(0.01);
    const double s1 = std::log2(e1 / e2), s2 = std::log2(e2 / e3);
    o.check(std::abs(s1 - 2) < 0.3 && std::abs(s2 - 2) < 0.3,
            fmt("Bessel-oracle slopes %.3f %.3f (errors %.2e %.2e %.2e)", s1, s2, e1, e2, e3));

    // Self-convergence on the exponential profile, both kernel terms active.
    const auto prof = PerturbationProfile::exponential(1.0, 0.5, 512);
    auto solve_at = [&](double h) {
        const auto n = std::size_t(std::llround(6.0 / h)) + 1;
        return solve_gamma_phi(make_kernel_table(prof, h, n), 2e-3, 5e-4, n).gamma;
    };
    const auto g1 = solve_at(0.04), g2 = solve_at(0.02), g3 = solve_at(0.01), g4 = solve_at(0.005);
    auto diff = [](const std::vector<double>& coarse, const std::vector<double>& fine) {
        double d = 0;
        for (std::size_t i = 0; i < coarse.size(); ++i) d = std::max(d, std::abs(coarse[i] - fine[2 * i]));
        return d;
    };
    const double d1 = diff(g1, g2), d2 = diff(g2, g3), d3 = diff(g3, g4);
    const double r1 = std::log2(d1 / d2), r2 = std::log2(d2 / d3);
    o.check(std::abs(r1 - 2) < 0.3 && std::abs(r2 - 2) < 0.3, fmt("self-convergence slopes %.3f %.3f", r1, r2));

    // Resolvent route against the time-domain solution.
    struct Triple {
        double v0, dv, d0, phi1, phi2;
    };
    for (const auto& tr : {Triple{1.0, 0.5, 512, 1e-4, 0.0}, Triple{1.0, 0.5, 512, 1e-3, 1e-4},
                           Triple{8.0, 0.5, 64, 4e-3, 1e-3}}) {
        const auto p = PerturbationProfile::exponential(tr.v0, tr.dv, tr.d0);
        const auto grid = default_energy_grid(p, tr.phi1, tr.phi2, 0.02);
        const auto rg = resolvent_solve(p, tr.phi1, tr.phi2, grid, default_eta(grid));
        const double h = 0.01;
        const std::size_t n = 501;
        const auto sol = solve_gamma_phi(make_kernel_table(p, h, n), tr.phi1, tr.phi2, n);
        double err = 0;
        for (std::size_t i = 0; i < n; i += 5) err = std::max(err, std::abs(gamma_from_resolvent(rg, i * h) - sol.gamma[i]));
        o.check(err < 2e-2, fmt("resolvent vs time domain (v0=%g dv=%g d0=%g phi1=%g phi2=%g) sup err %.3g", tr.v0, tr.dv,
                                tr.d0, tr.phi1, tr.phi2, err));
    }

    // Weak regime: constant driving at 0.3x the crossover amplitude.
    const double f0 = 0.3 * crossover_amplitude(prof, std::pow(2.0, -9));
    const auto proto = DrivingProtocol::constant(f0);
    const double r_hat = std::numbers::pi * prof.v0() * f0 * f0 * prof.d0();
    const double t_end = 3.0 / r_hat, h = 0.05;
    const auto n = std::size_t(std::ceil(t_end / h)) + 1;
    const auto sol = solve_gamma(prof, proto, 1.0, h, n);
    std::vector<double> ts, ls;
    for (std::size_t i = 0; i < n; ++i) {
        ts.push_back(i * h);
        ls.push_back(std::log(sol.gamma[i]));
    }
    const auto [slope, intercept] = linear_fit(ts, ls);
    const double rate = -slope;
    o.check(rel_dev(rate, r_hat) < 0.05,
            fmt("weak regime f0=%.5f: fitted rate %.5f vs r_hat %.5f (rel %+.4f, intercept %.4f)", f0, rate, r_hat,
                rate / r_hat - 1, intercept));
    return o;
}

// ------------------------------------------------------------------ 4

Outcome closed_forms(const Context&) {
    Outcome o;
    const auto prof = PerturbationProfile::exponential(1.0, 0.5, 512);

    double worst0 = 0, worst_n = 0;
    for (const auto& proto : {DrivingProtocol::step(0.04, 0.5), DrivingProtocol::step(0.1, 1.0),
                              DrivingProtocol::sinusoid(0.08, 1.0), DrivingProtocol::sinusoid(0.3, 0.7)}) {
        for (double tp : {0.1, 0.37, 1.9, 6.2}) worst0 = std::max(worst0, std::abs(fast_driving_gamma(prof, proto, 0.0, tp) - 1));
        for (int k = 1; k <= 10; ++k) {
            for (double t = 0.0; t <= 50.0; t += 0.25) {
                worst_n = std::max(worst_n, std::abs(fast_driving_gamma(prof, proto, t, k * proto.timescale()) - 1));
            }
        }
    }
    o.check(worst0 < 1e-10, fmt("fast-driving gamma at t = 0: max |gamma - 1| = %.3g", worst0));
    o.check(worst_n < 1e-10, fmt("fast-driving gamma at t' = nT: max |gamma - 1| = %.3g", worst_n));

    constexpr double first_zero = 3.8317059702075123;
    struct Strong {
        double phi1, phi2;
    };
    for (const auto& s : {Strong{16.0 / 2048, 0.0}, Strong{6e-3, 2e-3}, Strong{64.0 / 2048, 0.0}}) {
        const auto sc = r_scale_phi(prof, s.phi1, s.phi2);
        const double t_end = first_zero / sc.r;
        const double h = t_end / 2000;
        const std::size_t n = 2001;
        const auto sol = solve_gamma_phi(make_kernel_table(prof, h, n), s.phi1, s.phi2, n);
        double err = 0;
        for (std::size_t i = 0; i < n; ++i) err = std::max(err, std::abs(sol.gamma[i] - strong_driving_gamma(sc.r, i * h)));
        o.check(sc.margin > 3.0 && err < 0.05,
                fmt("Bessel form, margin %.2f (phi1=%g phi2=%g): sup err over first lobe %.4f", sc.margin, s.phi1, s.phi2, err));
    }

    for (double r : {2.0, 4.0}) {
        const auto grid = uniform_energy_grid(4.0 * r, 0.01);
        const auto sg = semicircle_grid(r, 500.0, grid, default_eta(grid));
        double err = 0;
        for (double t = 0.0; t <= 10.0 / r + 1e-12; t += 0.05) {
            err = std::max(err, std::abs(gamma_from_resolvent(sg, t) - strong_driving_gamma(r, t)));
        }
        o.check(err < 1e-2, fmt("semicircle Fourier vs Bessel, r=%g: sup err %.3g", r, err));
    }
    return o;
}

// ------------------------------------------------------------------ 5

double late_rms(const Session::Comparison& c) { return c.extra.at(1).rms; }

Outcome fidelity(const Context& ctx) {
    Outcome o;
    RunOptions ro{ctx.threads, {}};
    const auto step_cfg = config("fidelity_step.json");
    const auto sin_cfg = config("fidelity_sinusoid.json");

    Session step(step_cfg, ro);
    std::vector<Session::Comparison> step_cmp;
    for (std::size_t i = 0; i < step_cfg.protocols.size(); ++i) step_cmp.push_back(step.compare_protocol(i));
    Session sinus(sin_cfg, ro);
    std::vector<Session::Comparison> sin_cmp;
    for (std::size_t i = 0; i < sin_cfg.protocols.size(); ++i) sin_cmp.push_back(sinus.compare_protocol(i));

    for (const auto* set : {&step_cmp, &sin_cmp}) {
        for (const auto& c : *set) {
            o.check(c.first_two_periods.rms < 0.05,
                    fmt("%s f0=%g T=%g: rms over first two periods %.4f (agreement until t=%.2f)", c.protocol.variant.c_str(),
                        c.protocol.f0, c.protocol.T, c.first_two_periods.rms, c.agreement_time));
        }
    }

    // Same f0, smaller T.
    const auto& fast = step_cmp[0];
    const auto& slow = step_cmp[1];
    o.check(fast.protocol.T < slow.protocol.T && fast.agreement_time > slow.agreement_time,
            fmt("agreement window T=%g: %.2f > T=%g: %.2f", fast.protocol.T, fast.agreement_time, slow.protocol.T,
                slow.agreement_time));

    // Same protocol and seed, wider profile.
    auto wide_cfg = step_cfg;
    wide_cfg.protocols = {step_cfg.protocols[0]};
    wide_cfg.profile.delta_v = 4.0;
    Session wide(wide_cfg, ro);
    const auto wide_cmp = wide.compare_protocol(0);
    o.check(late_rms(fast) < late_rms(wide_cmp),
            fmt("late-window rms [%g, %g]: dv=%g %.4f < dv=%g %.4f", fast.extra.at(1).t_a, fast.extra.at(1).t_b,
                step_cfg.profile.delta_v, late_rms(fast), wide_cfg.profile.delta_v, late_rms(wide_cmp)));
    return o;
}

// ------------------------------------------------------------------ 6

Outcome derived_constants(const Context& ctx) {
    Outcome o;
    auto cfg = config("double_pretherm.json");
    cfg.model.m = 16384;
    cfg.model.mean_spacing = std::pow(2.0, -9);
    Session s(cfg, RunOptions{ctx.threads, {}});
    const auto refs = undriven_and_references(s.model(), {});
    const double m = double(cfg.model.m);

    std::string sens;
    for (const auto& w : refs.sensitivity) sens += fmt(" %.1fdE:%.1f", w.scale, w.d0_window);
    o.check(std::abs(refs.d0_window - 500) <= 25,
            fmt("D0 in [%.3f, %.3f] (%zu levels) = %.2f; window scales%s", refs.window.lo, refs.window.hi, refs.window.levels,
                refs.d0_window, sens.c_str()));
    o.check(std::abs(refs.a_th - 0.156) <= 0.01, fmt("A_th = %.4f", refs.a_th));
    o.check(std::abs(refs.a_bar0 - 0.25) <= 0.01, fmt("A_bar0 = %.4f", refs.a_bar0));
    o.check(std::abs(refs.a_inf) <= 3 / std::sqrt(m), fmt("tr(A)/M = %.3g (bound %.3g)", refs.a_inf, 3 / std::sqrt(m)));
    return o;
}

// ------------------------------------------------------------------ 7

Outcome double_pretherm(const Context& ctx) {
    Outcome o;
    const auto cfg = config("double_pretherm.json");
    Session s(cfg, RunOptions{ctx.threads, {}});
    const auto c = s.compare_protocol(0);
    const double T = c.protocol.T;

    o.check(c.validity_window.rms < 0.05,
            fmt("rms over [%g, %g]: %.4f", c.validity_window.t_a, c.validity_window.t_b, c.validity_window.rms));

    double lo = INFINITY, hi = -INFINITY;
    for (std::size_t k = 0; k < c.theory.t_grid.size(); ++k) {
        const double t = c.theory.t_grid[k];
        if (t < T || t > 5 * T || std::isnan(c.prediction[k])) continue;
        lo = std::min(lo, c.prediction[k]);
        hi = std::max(hi, c.prediction[k]);
    }
    const double centre = 0.5 * (lo + hi);
    const double a = std::min(c.a_th, c.a_bar0), b = std::max(c.a_th, c.a_bar0);
    o.check(centre > a && centre < b, fmt("prediction band over [T, 5T] = [%.4f, %.4f], centre %.4f; a_th %.4f, a_bar0 %.4f",
                                          lo, hi, centre, c.a_th, c.a_bar0));

    const auto avg = period_averages(c.theory.t_grid, c.simulation.h0_series, T);
    std::vector<double> idx;
    for (std::size_t n = 0; n < avg.size(); ++n) idx.push_back(double(n));
    const double slope = avg.size() > 1 ? linear_fit(idx, avg).first : 0.0;
    o.check(avg.size() > 1 && avg.back() > avg.front() && slope > 0,
            fmt("period-averaged <H0>: first %.5f, last %.5f, fitted slope %.3g per period over %zu periods", avg.front(),
                avg.back(), slope, avg.size()));

    double drift = 0;
    for (double h : c.undriven_h0) drift = std::max(drift, std::abs(h - c.undriven_h0.front()));
    o.check(drift < 1e-10, fmt("undriven <H0> max deviation %.3g", drift));
    return o;
}

// ------------------------------------------------------------------ 8

Outcome crossover(const Context&) {
    Outcome o;
    const double eps = std::pow(2.0, -9);
    bool any = false;
    std::string values;
    for (double dv : {0.5, 4.0}) {
        const double f = crossover_amplitude(PerturbationProfile::exponential(1.0, dv, 1 / eps), eps);
        values += fmt(" dv=%g: %.5f", dv, f);
        any = any || (f >= 0.01 && f <= 0.02);
    }
    o.check(any, "crossover amplitude (v0 = 1)" + values);
    return o;
}

// ------------------------------------------------------------------ 9

std::map<std::string, std::string> read_tree(const fs::path& dir) {
    std::map<std::string, std::string> files;
    for (const auto& e : fs::recursive_directory_iterator(dir)) {
        if (!e.is_regular_file()) continue;
        std::ifstream in(e.path(), std::ios::binary);
        std::stringstream ss;
        ss << in.rdbuf();
        files[fs::relative(e.path(), dir).string()] = ss.str();
    }
    return files;
}

Outcome determinism(const Context& ctx) {
    Outcome o;
    for (const char* name : {"fidelity_step.json", "double_pretherm.json"}) {
        const auto cfg = config(name);
        const auto base = ctx.workdir / "determinism" / fs::path(name).stem();
        fs::remove_all(base);
        // Serial and threaded runs must agree too.
        run_compare(cfg, base / "a", RunOptions{1, {}});
        const unsigned k = std::max(ctx.threads, 4u);
        run_compare(cfg, base / "b", RunOptions{k, {}});
        const auto a = read_tree(base / "a"), b = read_tree(base / "b");
        std::size_t csv = 0;
        for (const auto& [k, v] : a) csv += k.ends_with(".csv");
        o.check(!a.empty() && a == b, fmt("%s: %zu files (%zu CSV) byte-identical across reruns (1 vs %u threads)", name,
                                          a.size(), csv, k));
    }
    return o;
}

struct Criterion {
    int id;
    const char* title;
    std::function<Outcome(const Context&)> run;
};

const std::vector<Criterion>& criteria() {
    static const std::vector<Criterion> all = {
        {1, "protocol identities", protocol_identities},
        {2, "profile identities", profile_identities},
        {3, "solver convergence and oracles", solver_convergence},
        {4, "closed-form approximations", closed_forms},
        {5, "fidelity experiment", fidelity},
        {6, "derived constants at M = 16384", derived_constants},
        {7, "double prethermalization", double_pretherm},
        {8, "crossover amplitude", crossover},
        {9, "determinism", determinism},
    };
    return all;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"typresp acceptance checks"};
    int only = 0;
    std::string workdir = (fs::temp_directory_path() / "typresp_acceptance").string();
    unsigned threads = default_threads();
    app.add_option("--criterion", only, "Run a single criterion (1-9); all when omitted")->check(CLI::Range(1, 9));
    app.add_option("--workdir", workdir, "Directory for run outputs");
    app.add_option("--threads", threads, "Worker threads")->check(CLI::PositiveNumber);
    CLI11_PARSE(app, argc, argv);

    Context ctx{workdir, threads};
    fs::create_directories(ctx.workdir);

    bool all_pass = true;
    for (const auto& c : criteria()) {
        if (only != 0 && c.id != only) continue;
        const auto start = std::chrono::steady_clock::now();
        Outcome out;
        try {
            out = c.run(ctx);
        } catch (const std::exception& e) {
            out.check(false, std::string("exception: ") + e.what());
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        for (const auto& n : out.notes) std::cerr << "  [" << c.id << "] " << n << "\n";
        std::cout << (out.pass ? "[PASS]" : "[FAIL]") << " criterion " << c.id << ": " << c.title
                  << fmt(" (%.1f s)", secs) << std::endl;
        all_pass = all_pass && out.pass;
    }
    return all_pass ? 0 : 1;
}
