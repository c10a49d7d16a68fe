#include "typresp/profile.hpp"

#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

using namespace typresp;

namespace {

// 2 D0 Int_0^Emax g(E) v~(E) dE on panels no wider than the profile scale
// or a quarter of the oscillation period.
template <class G>
double half_axis(const PerturbationProfile& p, double t, G g, double e_max) {
    using GK = boost::math::quadrature::gauss_kronrod<double, 31>;
    double width = 0.25 * std::max(p.delta_v(), 0.05);
    if (t > 0) width = std::min(width, 1.5 / t);
    double sum = 0.0;
    for (double a = 0.0; a < e_max; a += width) {
        sum += GK::integrate([&](double e) { return g(e) * p.value(e); }, a, std::min(e_max, a + width), 10, 1e-15);
    }
    return 2.0 * p.d0() * sum;
}

double oracle_v(const PerturbationProfile& p, double t, double e_max) {
    return half_axis(p, t, [t](double e) { return std::cos(e * t); }, e_max);
}

double oracle_v2(const PerturbationProfile& p, double t, double e_max) {
    return -half_axis(p, t, [t](double e) { return e * e * std::cos(e * t); }, e_max);
}

}  // namespace

TEST_SUITE("profile") {
    TEST_CASE("exponential moments") {
        for (double dv : {0.5, 2.0, 4.0}) {
            const auto p = PerturbationProfile::exponential(1.3, dv, 500);
            CHECK(moment(p, 0) == doctest::Approx(2 * dv).epsilon(1e-14));
            CHECK(moment(p, 2) == doctest::Approx(4 * dv * dv * dv).epsilon(1e-14));
            CHECK(moment_quadrature(p, 0) == doctest::Approx(2 * dv).epsilon(1e-10));
            CHECK(moment_quadrature(p, 2) == doctest::Approx(4 * dv * dv * dv).epsilon(1e-10));
        }
        CHECK_THROWS_AS(moment(PerturbationProfile::exponential(1, 1, 1), 1), std::invalid_argument);
    }

    TEST_CASE("v(t) closed form against independent quadrature") {
        const auto p = PerturbationProfile::exponential(0.8, 0.5, 512);
        const double e_max = 0.5 * 45;  // e^{-45} below double resolution relative to v~(0)
        for (double t : {0.0, 0.1, 0.7, 2.0, 5.0, 11.0}) {
            CAPTURE(t);
            const double ref = oracle_v(p, t, e_max);
            CHECK(v_of_t(p, t) == doctest::Approx(ref).epsilon(1e-9));
            const auto q = v_of_t_quadrature(p, t);
            CHECK(q.real() == doctest::Approx(ref).epsilon(1e-9));
            CHECK(std::abs(q.imag()) < 1e-9 * std::abs(ref) + 1e-12);
            CHECK(v_of_t(p, -t) == v_of_t(p, t));
        }
        CHECK(v_of_t(p, 0) == doctest::Approx(0.8 * 512 * moment(p, 0)).epsilon(1e-12));
    }

    TEST_CASE("v''(t) against finite differences and quadrature") {
        const auto p = PerturbationProfile::exponential(1.0, 0.5, 512);
        const double h = 1e-3;
        for (double t : {0.0, 0.3, 1.0, 3.0, 8.0}) {
            CAPTURE(t);
            const double fd = (v_of_t(p, t + h) - 2 * v_of_t(p, t) + v_of_t(p, t - h)) / (h * h);
            const double v2 = v_second_deriv(p, t);
            CHECK(v2 == doctest::Approx(fd).epsilon(1e-5).scale(1e-3));
            CHECK(v2 == doctest::Approx(oracle_v2(p, t, 0.5 * 50)).epsilon(1e-8).scale(1e-6));
            CHECK(v_second_deriv_quadrature(p, t) == doctest::Approx(v2).epsilon(1e-8).scale(1e-6));
        }
        CHECK(v_second_deriv(p, 0) == doctest::Approx(-1.0 * 512 * moment(p, 2)).epsilon(1e-12));
        // v'' changes sign where 3 x = 1 with x = (delta_v t)^2.
        const double t0 = 1.0 / (std::sqrt(3.0) * 0.5);
        CHECK(v_second_deriv(p, 0.99 * t0) < 0.0);
        CHECK(v_second_deriv(p, 1.01 * t0) > 0.0);
    }

    TEST_CASE("finely tabulated exponential reproduces the closed forms") {
        const auto ex = PerturbationProfile::exponential(1.0, 0.5, 100);
        std::vector<double> e, v;
        for (int i = 0; i <= 20000; ++i) {
            e.push_back(i * 1e-3);
            v.push_back(ex.value(e.back()));
        }
        const auto tab = PerturbationProfile::tabulated(e, v, 100);
        CHECK(tab.value(0.25) == doctest::Approx(ex.value(0.25)).epsilon(1e-6));
        CHECK(tab.value(25.0) == 0.0);
        CHECK(tab.value(-0.25) == tab.value(0.25));
        CHECK(moment(tab, 0) == doctest::Approx(1.0).epsilon(1e-6));
        CHECK(moment(tab, 2) == doctest::Approx(0.5).epsilon(1e-5));
        for (double t : {0.0, 0.5, 2.0}) {
            CHECK(v_of_t(tab, t) == doctest::Approx(v_of_t(ex, t)).epsilon(1e-5));
            CHECK(v_second_deriv(tab, t) == doctest::Approx(v_second_deriv(ex, t)).epsilon(1e-4));
        }
    }

    TEST_CASE("tabulated profile from CSV") {
        const auto path = std::filesystem::temp_directory_path() / "typresp_profile_table.csv";
        {
            std::ofstream out(path);
            out << "E,v\n0,2\n1,1\n2,0\n";
        }
        const auto p = PerturbationProfile::tabulated_from_csv(path, 10);
        CHECK(p.value(0.5) == doctest::Approx(1.5));
        // Int v~ over the full axis = 2 * (1.5 + 0.5) = 4, divided by v~(0) = 2.
        CHECK(moment(p, 0) == doctest::Approx(2.0).epsilon(1e-12));
        std::filesystem::remove(path);
    }

    TEST_CASE("invalid profiles are rejected") {
        CHECK_THROWS(PerturbationProfile::exponential(-1.0, 0.5, 1));
        CHECK_THROWS(PerturbationProfile::exponential(1.0, 0.0, 1));
        CHECK_THROWS(PerturbationProfile::exponential(1.0, 0.5, 0));
        CHECK_THROWS(PerturbationProfile::tabulated({0.1, 1.0}, {1, 1}, 1));
        CHECK_THROWS(PerturbationProfile::tabulated({0.0, 0.0}, {1, 1}, 1));
        CHECK_THROWS(PerturbationProfile::tabulated({0.0, 1.0}, {1, -1}, 1));
    }

    TEST_CASE("cutoff energy") {
        const auto p = PerturbationProfile::exponential(1.0, 0.5, 1);
        const double ec = p.cutoff_energy(1e-12);
        CHECK(p.value(ec) == doctest::Approx(1e-12).epsilon(1e-9));
    }
}
