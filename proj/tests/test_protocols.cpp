#include "typresp/protocols.hpp"

#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>

using namespace typresp;

namespace {

// Adaptive Gauss-Kronrod over panels aligned to multiples of T/2, so every
// jump or kink of the analytic protocols sits on a panel edge.
template <class F>
double integrate_aligned(F f, double t, double T) {
    using GK = boost::math::quadrature::gauss_kronrod<double, 61>;
    double sum = 0.0;
    const double w = T > 0.0 ? 0.5 * T : t;
    for (double a = 0.0; a < t; a += w) {
        const double b = std::min(t, a + w);
        sum += GK::integrate(f, a, b, 15, 1e-14);
    }
    return sum;
}

double oracle_f1(const DrivingProtocol& p, double t) {
    return integrate_aligned([&](double s) { return p.value(s); }, t, p.timescale());
}

// Cauchy's formula for the repeated integral.
double oracle_f2(const DrivingProtocol& p, double t) {
    return integrate_aligned([&](double s) { return (t - s) * p.value(s); }, t, p.timescale());
}

std::vector<DrivingProtocol> analytic_protocols() {
    return {DrivingProtocol::constant(0.3),       DrivingProtocol::step(0.7, 1.3),
            DrivingProtocol::sinusoid(0.7, 1.3),  DrivingProtocol::linear_ramp(0.4, 2.0),
            DrivingProtocol::pseudorandom_a(0.2, 0.9), DrivingProtocol::pseudorandom_b(0.2, 0.9)};
}

}  // namespace

TEST_SUITE("protocols") {
    TEST_CASE("closed-form integrals agree with quadrature of f") {
        for (const auto& p : analytic_protocols()) {
            CAPTURE(to_string(p.kind()));
            for (double t : {0.05, 0.4, 1.0, 2.7, 6.5, 13.9}) {
                CAPTURE(t);
                const auto ints = integrals(p, t);
                const double f1 = oracle_f1(p, t);
                const double f2 = oracle_f2(p, t);
                CHECK(ints.F1 == doctest::Approx(f1).epsilon(1e-10).scale(1.0));
                CHECK(std::abs(ints.F2 - f2) < 1e-10 * std::max(1.0, std::abs(f2)));
                const double a = f1 / t;
                const double c = f2 / t - f1 / 2.0;
                CHECK(std::abs(ints.phi1 - a * a) < 1e-10);
                CHECK(std::abs(ints.phi2 - c * c) < 1e-10);
                CHECK(ints.effective_amplitude == doctest::Approx(a).epsilon(1e-9).scale(1.0));
            }
        }
    }

    TEST_CASE("periodic protocols: phi1 vanishes at full periods, phi2 at half-odd periods") {
        for (const auto& p : {DrivingProtocol::step(0.7, 1.3), DrivingProtocol::sinusoid(0.7, 1.3)}) {
            CAPTURE(to_string(p.kind()));
            const double T = p.timescale();
            for (int n = 1; n <= 10; ++n) {
                CHECK(integrals(p, n * T).phi1 < 1e-12);
                CHECK(integrals(p, (n - 0.5) * T).phi2 < 1e-12);
            }
        }
    }

    TEST_CASE("constant protocol has phi2 exactly zero and phi1 = f0^2") {
        const auto p = DrivingProtocol::constant(0.37);
        for (double t : {0.0, 1e-9, 0.3, 7.0, 1e4}) {
            const auto ints = integrals(p, t);
            CHECK(ints.phi2 == 0.0);
            CHECK(ints.phi1 == doctest::Approx(0.37 * 0.37).epsilon(1e-14));
        }
    }

    TEST_CASE("t = 0 uses the Taylor limits and is continuous from the right") {
        for (const auto& p : analytic_protocols()) {
            CAPTURE(to_string(p.kind()));
            const auto at0 = integrals(p, 0.0);
            CHECK(at0.phi2 == 0.0);
            CHECK(at0.phi1 == doctest::Approx(p.initial_value() * p.initial_value()));
            const auto near = integrals(p, 1e-7);
            CHECK(std::abs(near.phi1 - at0.phi1) < 1e-6);
            CHECK(near.phi2 < 1e-10);
        }
        CHECK(DrivingProtocol::step(0.5, 1.0).initial_value() == 0.5);
        CHECK(DrivingProtocol::pseudorandom_b(0.5, 1.0).initial_value() == doctest::Approx(1.5));
    }

    TEST_CASE("linear ramp asymptotics") {
        const double f0 = 0.04, T = 1.0;
        const auto p = DrivingProtocol::linear_ramp(f0, T);
        SUBCASE("short times") {
            const double t = 1e-2 * T;
            const auto ints = integrals(p, t);
            CHECK(ints.phi1 == doctest::Approx(std::pow(f0 * t / (2 * T), 2)).epsilon(1e-12));
            CHECK(ints.phi2 == doctest::Approx(std::pow(f0 * t * t / (12 * T), 2)).epsilon(1e-8));
        }
        SUBCASE("long times approach f0^2 and f0^2 T^2 / 16 as 1/t") {
            // Exact post-ramp forms: F1/t = f0 (1 - T/2t), F2/t - F1/2 = -f0 T/4 + f0 T^2/(6t).
            for (double t : {10.0, 50.0, 1000.0}) {
                const auto ints = integrals(p, t);
                CHECK(ints.phi1 == doctest::Approx(std::pow(f0 * (1 - T / (2 * t)), 2)).epsilon(1e-12));
                CHECK(ints.phi2 == doctest::Approx(std::pow(f0 * (-T / 4 + T * T / (6 * t)), 2)).epsilon(1e-10));
            }
            const auto far = integrals(p, 1e6);
            CHECK(far.phi1 == doctest::Approx(f0 * f0).epsilon(2e-6));
            CHECK(far.phi2 == doctest::Approx(f0 * f0 * T * T / 16).epsilon(2e-6));
        }
    }

    TEST_CASE("step protocol values, jumps and breakpoints") {
        const auto p = DrivingProtocol::step(2.0, 1.0);
        CHECK(p.value(0.25) == 2.0);
        CHECK(p.value(0.75) == -2.0);
        CHECK(p.value(0.5) == 0.0);
        CHECK(p.value(1.0) == 0.0);
        CHECK(p.is_piecewise_constant());
        CHECK_FALSE(DrivingProtocol::sinusoid(1, 1).is_piecewise_constant());
        const auto b = p.breakpoints(0.0, 2.2);
        REQUIRE(b.size() == 4);
        CHECK(b[0] == doctest::Approx(0.5));
        CHECK(b[3] == doctest::Approx(2.0));
    }

    TEST_CASE("tabulated protocol reproduces the linear ramp") {
        const double f0 = 0.3, T = 2.0;
        const auto tab = DrivingProtocol::tabulated({0.0, T, 100.0}, {0.0, f0, f0});
        const auto ramp = DrivingProtocol::linear_ramp(f0, T);
        for (double t : {0.3, 1.9, 2.0, 5.5, 40.0}) {
            const auto a = integrals(tab, t);
            const auto b = integrals(ramp, t);
            CHECK(a.F1 == doctest::Approx(b.F1).epsilon(1e-10));
            CHECK(a.F2 == doctest::Approx(b.F2).epsilon(1e-10));
            CHECK(a.phi2 == doctest::Approx(b.phi2).epsilon(1e-8));
        }
        CHECK(tab.value(150.0) == 0.0);
    }

    TEST_CASE("tabulated protocol from CSV with header") {
        const auto path = std::filesystem::temp_directory_path() / "typresp_protocol_table.csv";
        {
            std::ofstream out(path);
            out << "t,f\n0,1\n1,1\n2,0\n";
        }
        const auto p = DrivingProtocol::tabulated_from_csv(path);
        CHECK(p.value(0.5) == 1.0);
        CHECK(p.value(1.5) == doctest::Approx(0.5));
        CHECK(integrals(p, 2.0).F1 == doctest::Approx(1.5));
        std::filesystem::remove(path);
    }

    TEST_CASE("invalid input is rejected") {
        const auto p = DrivingProtocol::sinusoid(1.0, 1.0);
        CHECK_THROWS_AS(eval_f(p, -1.0), std::domain_error);
        CHECK_THROWS_AS(eval_f(p, std::numeric_limits<double>::quiet_NaN()), std::invalid_argument);
        CHECK_THROWS_AS(integrals(p, -0.1), std::domain_error);
        CHECK_THROWS(DrivingProtocol::step(1.0, 0.0));
        CHECK_THROWS(DrivingProtocol::tabulated({0.0, 0.0}, {1.0, 2.0}));
        CHECK_THROWS(DrivingProtocol::tabulated({0.0}, {1.0}));
    }

    TEST_CASE("variant names round-trip") {
        for (auto k : {ProtocolKind::Constant, ProtocolKind::Step, ProtocolKind::Sinusoid, ProtocolKind::LinearRamp,
                       ProtocolKind::PseudorandomA, ProtocolKind::PseudorandomB, ProtocolKind::Tabulated}) {
            CHECK(protocol_kind_from_string(to_string(k)) == k);
        }
        CHECK_FALSE(protocol_kind_from_string("square").has_value());
    }
}
