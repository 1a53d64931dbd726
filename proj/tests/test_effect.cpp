#include <doctest.h>

#include "pptrial/effect.hpp"
#include "pptrial/errors.hpp"
#include "test_helpers.hpp"

#include <cmath>

using namespace pptrial;

namespace {

// one arm: counts[k] = {events, competing} out of whoever is still at risk
LongitudinalDataset count_arm(const std::vector<std::pair<int, int>>& counts, int n_total) {
    std::vector<SubjectHistory> subs;
    int id = 0;
    int horizon = static_cast<int>(counts.size()) - 1;
    auto add = [&](int terminal_visit, int y, int d) {
        std::vector<th::V> visits;
        for (int k = 0; k <= terminal_visit; ++k) {
            th::V v;
            v.visit = k;
            v.a = 1;
            if (k == 0) v.covs = {1.0};
            if (k == terminal_visit) {
                v.y = y;
                v.d = d;
            }
            visits.push_back(v);
        }
        subs.push_back(th::subject("s" + std::to_string(id++), 1, visits));
    };
    int used = 0;
    for (int k = 0; k <= horizon; ++k) {
        for (int i = 0; i < counts[k].first; ++i, ++used) add(k, 1, 0);
        for (int i = 0; i < counts[k].second; ++i, ++used) add(k, 0, 1);
    }
    for (; used < n_total; ++used) add(horizon, 0, 0);
    return th::dataset(th::schema_l0(), std::move(subs));
}

} // namespace

TEST_CASE("risk_from_hazards: hand values and bounds") {
    auto r = risk_from_hazards({0.1, 0.2, 0.5});
    REQUIRE(r.risk.size() == 3);
    CHECK(r.risk[0] == doctest::Approx(0.1).epsilon(1e-15));
    CHECK(r.risk[1] == doctest::Approx(1.0 - 0.9 * 0.8).epsilon(1e-15));
    CHECK(r.risk[2] == doctest::Approx(1.0 - 0.9 * 0.8 * 0.5).epsilon(1e-15));
    CHECK(r.at_horizon() == doctest::Approx(0.64).epsilon(1e-12));

    auto zero = risk_from_hazards({0.0, 0.0});
    CHECK(zero.at_horizon() == 0.0);
    auto sure = risk_from_hazards({0.3, 1.0});
    CHECK(sure.at_horizon() == doctest::Approx(1.0).epsilon(1e-15));
}

TEST_CASE("arm_hazards: unweighted counts and weighted reweighting") {
    // visit 0: 10 at risk, 2 events; visit 1: 8 at risk, 4 events
    std::vector<std::pair<int, int>> counts = {{2, 0}, {4, 0}};
    auto ds = count_arm(counts, 10);
    auto view = derive_analysis_view(ds, nullptr, {});
    auto h = arm_hazards(view, 1);
    REQUIRE(h.size() == 2);
    CHECK(h[0] == doctest::Approx(0.2).epsilon(1e-15));
    CHECK(h[1] == doctest::Approx(0.5).epsilon(1e-15));

    // doubling every weight leaves the hazard unchanged
    std::vector<double> w(view.rows.size(), 2.0);
    auto h2 = arm_hazards(view, 1, w);
    CHECK(h2[0] == doctest::Approx(0.2).epsilon(1e-15));
    CHECK(h2[1] == doctest::Approx(0.5).epsilon(1e-15));
}

TEST_CASE("aalen_johansen: frozen three-visit fixture") {
    // 100 at risk: visit 0 has 5 events + 5 competing; visit 1 has 9 events of
    // the remaining 90; visit 2 has 3 events of the remaining 81.
    // CI_Y(2) = 0.05 + 0.90*0.10 + 0.81*(3/81) = 0.17
    auto ds = count_arm({{5, 5}, {9, 0}, {3, 0}}, 100);
    auto view = derive_analysis_view(ds, nullptr, {});
    auto cc = aalen_johansen(view, 1);
    REQUIRE(cc.event.risk.size() == 3);
    CHECK(cc.event.risk[0] == doctest::Approx(0.05).epsilon(1e-12));
    CHECK(cc.event.risk[1] == doctest::Approx(0.14).epsilon(1e-12));
    CHECK(cc.event.risk[2] == doctest::Approx(0.17).epsilon(1e-12));
    CHECK(cc.competing.risk[0] == doctest::Approx(0.05).epsilon(1e-12));
    CHECK(cc.survival[2] == doctest::Approx(0.78).epsilon(1e-12));
}

TEST_CASE("aalen_johansen: CI_Y + CI_D + S == 1 at every visit") {
    auto ds = count_arm({{7, 3}, {6, 4}, {2, 5}, {1, 1}}, 60);
    auto view = derive_analysis_view(ds, nullptr, {});
    auto cc = aalen_johansen(view, 1);
    for (std::size_t k = 0; k < cc.survival.size(); ++k)
        CHECK(cc.event.risk[k] + cc.competing.risk[k] + cc.survival[k] ==
              doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("aalen_johansen: with no competing events CI_Y equals the simple risk") {
    auto ds = count_arm({{4, 0}, {6, 0}, {3, 0}}, 50);
    auto view = derive_analysis_view(ds, nullptr, {});
    auto cc = aalen_johansen(view, 1);
    auto simple = risk_from_hazards(arm_hazards(view, 1));
    for (std::size_t k = 0; k < simple.risk.size(); ++k) {
        CHECK(cc.event.risk[k] == doctest::Approx(simple.risk[k]).epsilon(1e-15));
        CHECK(cc.competing.risk[k] == 0.0);
    }
}

TEST_CASE("truncate_weights: caps exactly the heavy tail") {
    std::vector<double> w(200, 1.0);
    w[7] = 50.0; // single outlier above the 99.5th percentile
    int truncated = truncate_weights(w, 99.5);
    CHECK(truncated == 1);
    // linear-interpolated 99.5th order statistic of {1 x199, 50}
    const double q = 1.0 + 0.005 * 199.0 * 0.0 + (50.0 - 1.0) * (0.995 * 199.0 - 198.0);
    CHECK(w[7] == doctest::Approx(q).epsilon(1e-12));
    for (std::size_t i = 0; i < w.size(); ++i)
        if (i != 7) CHECK(w[i] == 1.0);

    std::vector<double> flat(100, 2.0);
    CHECK(truncate_weights(flat, 99.5) == 0);
    CHECK_THROWS_AS(truncate_weights(flat, 0.0), ConfigError);
    CHECK_THROWS_AS(truncate_weights(flat, 100.5), ConfigError);
}

TEST_CASE("EffectEstimate::finalize derives rd and flags undefined rr") {
    EffectEstimate e;
    e.risk0.risk = {0.0, 0.1};
    e.risk1.risk = {0.05, 0.3};
    e.finalize();
    REQUIRE(e.rd.size() == 2);
    CHECK(e.rd[0] == doctest::Approx(0.05).epsilon(1e-15));
    CHECK(e.rd[1] == doctest::Approx(0.2).epsilon(1e-15));
    CHECK_FALSE(e.rr_defined[0]); // risk0 == 0
    CHECK(e.rr_defined[1]);
    CHECK(e.rr[1] == doctest::Approx(3.0).epsilon(1e-12));
    CHECK(e.rd_at_horizon() == doctest::Approx(0.2).epsilon(1e-15));
}
