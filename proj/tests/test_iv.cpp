#include <doctest.h>

#include "iv_lp_oracle.hpp"
#include "pptrial/errors.hpp"
#include "pptrial/iv.hpp"
#include "pptrial/rng.hpp"
#include "test_helpers.hpp"

#include <cmath>

using namespace pptrial;

namespace {

IVSummary make_summary(const std::array<std::array<std::array<double, 2>, 2>, 2>& p,
                       double n0 = 1000, double n1 = 1000) {
    IVSummary s;
    s.p = p;
    s.n0 = n0;
    s.n1 = n1;
    return s;
}

// random response-type distribution -> observed cells consistent with the
// instrumental conditions by construction
IVSummary random_consistent_summary(std::uint64_t stream) {
    CounterRng rng(0x69767462ull, stream);
    std::array<double, 16> q{};
    double total = 0.0;
    for (auto& x : q) {
        x = -std::log(1.0 - rng.next_double());
        total += x;
    }
    for (auto& x : q) x /= total;

    std::array<std::array<std::array<double, 2>, 2>, 2> p{};
    for (int z = 0; z <= 1; ++z)
        for (int ra = 0; ra < 4; ++ra)
            for (int ry = 0; ry < 4; ++ry) {
                int a = iv_oracle::a_of(ra, z);
                int y = iv_oracle::y_of(ry, a);
                p[z][a][y] += q[ra * 4 + ry];
            }
    return make_summary(p);
}

} // namespace

TEST_CASE("iv_wald: frozen arithmetic example") {
    // compliance difference 0.5, ITT RD 0.1 -> Wald RD exactly 0.2
    std::array<std::array<std::array<double, 2>, 2>, 2> p{};
    p[0][0][1] = 0.2;
    p[0][0][0] = 0.8;
    p[1][1][1] = 0.3;
    p[1][1][0] = 0.2;
    p[1][0][0] = 0.5;
    auto s = make_summary(p);
    CHECK(s.compliance_difference() == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(s.itt_rd() == doctest::Approx(0.1).epsilon(1e-12));

    auto e = iv_wald(s, IvFourthCondition::Monotonicity);
    CHECK(e.rd_at_horizon() == doctest::Approx(0.2).epsilon(1e-12));
    CHECK(e.estimand_label == "LATE (monotonicity)");
    auto h = iv_wald(s, IvFourthCondition::Homogeneity);
    CHECK(h.estimand_label == "per-protocol (homogeneity)");
    CHECK(h.rd_at_horizon() == doctest::Approx(0.2).epsilon(1e-12));
}

TEST_CASE("iv_wald: weak instrument is refused") {
    std::array<std::array<std::array<double, 2>, 2>, 2> p{};
    p[0][0][0] = 0.7;
    p[0][0][1] = 0.3;
    p[1][0][0] = 0.7;
    p[1][0][1] = 0.3;
    CHECK_THROWS_WITH_AS(iv_wald(make_summary(p), IvFourthCondition::Monotonicity),
                         doctest::Contains("weak instrument"), ModelError);
}

TEST_CASE("iv_bounds: Balke-Pearl matches the LP vertex-enumeration oracle") {
    for (std::uint64_t t = 0; t < 60; ++t) {
        auto s = random_consistent_summary(t);
        auto b = iv_bounds(s, BoundsMethod::BalkePearl);
        iv_oracle::Instance inst{s.p};
        auto oracle = iv_oracle::vertex_enumeration_bounds(inst);
        REQUIRE(oracle.feasible);
        CHECK(b.lower == doctest::Approx(oracle.lower).epsilon(1e-9));
        CHECK(b.upper == doctest::Approx(oracle.upper).epsilon(1e-9));
        CHECK(b.lower <= b.upper + 1e-12);
    }
}

TEST_CASE("iv_bounds: perfect compliance collapses the bounds to the ITT effect") {
    std::array<std::array<std::array<double, 2>, 2>, 2> p{};
    p[0][0][1] = 0.30;
    p[0][0][0] = 0.70;
    p[1][1][1] = 0.45;
    p[1][1][0] = 0.55;
    auto s = make_summary(p);
    auto b = iv_bounds(s, BoundsMethod::BalkePearl);
    CHECK(b.lower == doctest::Approx(0.15).epsilon(1e-12));
    CHECK(b.upper == doctest::Approx(0.15).epsilon(1e-12));
    auto w = iv_wald(s, IvFourthCondition::Monotonicity);
    CHECK(w.rd_at_horizon() == doctest::Approx(0.15).epsilon(1e-12));
}

TEST_CASE("iv_bounds: natural bounds have width exactly 1") {
    for (std::uint64_t t = 0; t < 10; ++t) {
        auto s = random_consistent_summary(100 + t);
        auto b = iv_bounds(s, BoundsMethod::Natural);
        CHECK(b.upper - b.lower == doctest::Approx(1.0).epsilon(1e-12));
        auto bp = iv_bounds(s, BoundsMethod::BalkePearl);
        CHECK(bp.lower >= b.lower - 1e-9); // sharp bounds can only be tighter
        CHECK(bp.upper <= b.upper + 1e-9);
    }
}

TEST_CASE("iv_bounds: instrumental-inequality violation is detected") {
    std::array<std::array<std::array<double, 2>, 2>, 2> p{};
    p[0][0][0] = 0.9;
    p[0][0][1] = 0.1;
    p[1][0][1] = 0.9;
    p[1][1][0] = 0.1;
    CHECK_THROWS_WITH_AS(iv_bounds(make_summary(p), BoundsMethod::BalkePearl),
                         doctest::Contains("inconsistent with the instrumental conditions"),
                         DataError);
}

TEST_CASE("iv_summarize: losses before the horizon are excluded") {
    auto ds = th::dataset(
        th::schema_l0(),
        {th::subject("s1", 1, {{0, 1, {1.0}}, {1, 1, {}, 1, 0, 0}}),
         th::subject("s2", 1, {{0, 0, {0.0}}, {1, 0, {}}}),
         th::subject("s3", 1, {{0, 1, {1.0}, 0, 0, 1}}), // lost at visit 0
         th::subject("s4", 0, {{0, 0, {0.0}}, {1, 0, {}}}),
         th::subject("s5", 0, {{0, 1, {1.0}, 1, 0, 0}})});
    auto s = iv_summarize(ds, 1);
    CHECK(s.n1 == 2);
    CHECK(s.n0 == 2);
    CHECK(s.p[1][1][1] == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(s.p[1][0][0] == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(s.p[0][0][0] == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(s.p[0][1][1] == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(s.compliance_difference() == doctest::Approx(0.0).epsilon(1e-15));
}

TEST_CASE("complier_profile: proportions and covariate means by Abadie weighting") {
    // arm 0: never treated; arm 1: L0=1 subjects comply, L0=0 do not
    std::vector<SubjectHistory> subs;
    int id = 0;
    auto add = [&](int arm, int a, double l0, int n) {
        for (int i = 0; i < n; ++i, ++id) {
            th::V v;
            v.visit = 0;
            v.a = a;
            v.covs = {l0};
            subs.push_back(th::subject("s" + std::to_string(id), arm, {v}));
        }
    };
    add(0, 0, 1.0, 20);
    add(0, 0, 0.0, 20);
    add(1, 1, 1.0, 20); // compliers, all with L0=1
    add(1, 0, 0.0, 20); // never-takers
    auto ds = th::dataset(th::schema_l0(), std::move(subs));
    auto s = iv_summarize(ds, 0);
    auto prof = complier_profile(ds, s, {"L0"});
    CHECK(prof.complier_proportion == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(prof.always_taker_proportion == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(prof.never_taker_proportion == doctest::Approx(0.5).epsilon(1e-12));
    REQUIRE(prof.complier_means.size() == 1);
    CHECK(prof.complier_means[0].second == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(prof.population_means[0].second == doctest::Approx(0.5).epsilon(1e-12));

    // a flat instrument contradicts monotonicity + relevance
    std::array<std::array<std::array<double, 2>, 2>, 2> p{};
    p[0][1][0] = 0.5;
    p[0][0][0] = 0.5;
    p[1][1][0] = 0.5;
    p[1][0][0] = 0.5;
    CHECK_THROWS_AS(complier_profile(ds, make_summary(p), {}), ModelError);
}

TEST_CASE("iv_falsification: requires a justification and reports balance") {
    auto ds = th::dataset(th::schema_l0(),
                          {th::subject("a", 1, {{0, 1, {1.0}}}),
                           th::subject("b", 1, {{0, 1, {0.0}}}),
                           th::subject("c", 0, {{0, 0, {1.0}}}),
                           th::subject("d", 0, {{0, 0, {0.0}}})});
    auto s = iv_summarize(ds, 0);
    CHECK_THROWS_AS(iv_falsification(ds, s, ""), ConfigError);
    auto rep = iv_falsification(ds, s, "drug dispensed only on prescription");
    CHECK(rep.bounds_consistent);
    CHECK(rep.passed);
    CHECK(rep.exclusion_justification == "drug dispensed only on prescription");
}

TEST_CASE("check_instrument: relevance from the compliance CI") {
    std::array<std::array<std::array<double, 2>, 2>, 2> p{};
    p[0][0][0] = 1.0;
    p[1][1][0] = 0.65;
    p[1][0][0] = 0.35;
    auto ds = th::dataset(th::schema_l0(), {th::subject("a", 1, {{0, 1, {1.0}}}),
                                            th::subject("b", 0, {{0, 0, {1.0}}})});
    auto rep = check_instrument(make_summary(p, 500, 500), ds, "double-blind assignment");
    CHECK(rep.relevance_holds);
    CHECK(rep.compliance_difference == doctest::Approx(0.65).epsilon(1e-12));
    CHECK(rep.exclusion_note.find("double-blind assignment") != std::string::npos);
}
