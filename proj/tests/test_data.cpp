#include <doctest.h>

#include "pptrial/data.hpp"
#include "pptrial/errors.hpp"
#include "test_helpers.hpp"

#include <algorithm>

using namespace pptrial;

namespace {

const char* kWellFormed =
    "subject_id,visit,arm,treatment,outcome,competing,ltfu,L0\n"
    "s1,0,1,1,0,0,0,1\n"
    "s1,1,1,1,0,0,0,\n"
    "s1,2,1,1,1,0,0,\n"
    "s2,0,0,0,0,0,0,0\n"
    "s2,1,0,0,0,0,0,\n"
    "s2,2,0,0,0,0,0,\n";

StrategyProtocol static_protocol(int grace = 0) {
    StrategyProtocol p;
    p.label = "assigned";
    p.assigned_value_arm0 = 0;
    p.assigned_value_arm1 = 1;
    p.grace = grace;
    return p;
}

} // namespace

TEST_CASE("load_dataset: well-formed file round-trips") {
    th::TempFile f("data_ok", kWellFormed);
    auto ds = load_dataset(f.path, th::schema_l0());
    CHECK(ds.subjects.size() == 2);
    CHECK(ds.horizon == 2);
    CHECK(ds.subjects[0].arm == 1);
    CHECK(ds.subjects[0].terminal() == TerminalStatus::Event);
    CHECK(ds.subjects[1].terminal() == TerminalStatus::Complete);
    CHECK(*ds.subjects[0].visits[0].covariates[0] == 1.0);

    auto out = th::temp_path("data_roundtrip");
    save_dataset_csv(ds, out);
    auto ds2 = load_dataset(out, th::schema_l0());
    CHECK(ds2.subjects.size() == 2);
    CHECK(ds2.subjects[0].visits.size() == 3);
    std::remove(out.c_str());
}

TEST_CASE("load_dataset: record after terminal event is rejected") {
    th::TempFile f("data_after_terminal",
                   "subject_id,visit,arm,treatment,outcome,competing,ltfu,L0\n"
                   "s1,0,1,1,1,0,0,1\n"
                   "s1,1,1,1,0,0,0,\n");
    CHECK_THROWS_WITH_AS(load_dataset(f.path, th::schema_l0()),
                         doctest::Contains("records after terminal event"), DataError);
}

TEST_CASE("load_dataset: duplicate (subject, visit) names the duplicate") {
    th::TempFile f("data_dup",
                   "subject_id,visit,arm,treatment,outcome,competing,ltfu,L0\n"
                   "s1,0,1,1,0,0,0,1\n"
                   "s1,1,1,1,0,0,0,\n"
                   "s1,1,1,1,0,0,0,\n");
    CHECK_THROWS_WITH_AS(load_dataset(f.path, th::schema_l0()),
                         doctest::Contains("duplicate (subject s1, visit 1)"), DataError);
}

TEST_CASE("load_dataset: malformed cell reports the line number") {
    th::TempFile f("data_malformed",
                   "subject_id,visit,arm,treatment,outcome,competing,ltfu,L0\n"
                   "s1,0,1,x,0,0,0,1\n");
    CHECK_THROWS_WITH_AS(load_dataset(f.path, th::schema_l0()), doctest::Contains("line 2"),
                         DataError);
}

TEST_CASE("load_dataset: missing baseline covariate and header contract") {
    th::TempFile f("data_nobase",
                   "subject_id,visit,arm,treatment,outcome,competing,ltfu,L0\n"
                   "s1,0,1,1,0,0,0,\n");
    CHECK_THROWS_WITH_AS(load_dataset(f.path, th::schema_l0()),
                         doctest::Contains("missing baseline covariate L0"), DataError);

    th::TempFile g("data_badheader", "id,visit,arm,treatment,outcome,competing,ltfu,L0\n");
    CHECK_THROWS_AS(load_dataset(g.path, th::schema_l0()), DataError);
}

TEST_CASE("validate_dataset: first-event convention and unmeasured covariate warnings") {
    auto ds = th::dataset(th::schema_l0_l(),
                          {th::subject("s1", 1, {{0, 1, {1.0, std::nullopt}, 1, 1, 0}})});
    auto rep = validate_dataset(ds);
    CHECK_FALSE(rep.ok());
    bool found = false;
    for (const auto& i : rep.issues) found = found || i.message.find("first-event") == 0;
    CHECK(found);
    bool unmeasured = false;
    for (const auto& i : rep.issues)
        unmeasured = unmeasured || (i.warning && i.message.find("adherence predictors") == 0);
    CHECK(unmeasured);
}

TEST_CASE("evaluate_adherence: excused discontinuation keeps the subject adherent") {
    // discontinues at k=3 with the toxicity predicate true there
    CovariateSchema sc;
    sc.defs.push_back({"tox", CovariateKind::Binary, false});
    auto ds = th::dataset(sc, {th::subject("s1", 1,
                                           {{0, 1, {0.0}},
                                            {1, 1, {0.0}},
                                            {2, 1, {0.0}},
                                            {3, 0, {1.0}},
                                            {4, 0, {1.0}}})});
    StrategyProtocol p = static_protocol();
    p.excused.push_back({"tox", PredicateOp::EQ, 1.0});
    auto trace = evaluate_adherence(ds, p);
    CHECK_FALSE(trace.per_subject[0].deviation_time.has_value());
    CHECK(trace.per_subject[0].excused_events.size() >= 1);
    CHECK(trace.per_subject[0].excused_events[0].first == 3);
}

TEST_CASE("evaluate_adherence: full adherence has no deviation") {
    auto ds = th::dataset(th::schema_l0(),
                          {th::subject("s1", 1, {{0, 1, {1.0}}, {1, 1, {}}, {2, 1, {}}})});
    auto trace = evaluate_adherence(ds, static_protocol());
    CHECK_FALSE(trace.per_subject[0].deviation_time.has_value());
}

TEST_CASE("evaluate_adherence: static rule deviation at the first off-protocol visit") {
    auto ds = th::dataset(th::schema_l0(),
                          {th::subject("s1", 1, {{0, 1, {1.0}}, {1, 0, {}}, {2, 0, {}}}),
                           th::subject("s2", 1, {{0, 0, {1.0}}, {1, 1, {}}})});
    auto trace = evaluate_adherence(ds, static_protocol());
    CHECK(*trace.per_subject[0].deviation_time == 1);
    CHECK(*trace.per_subject[1].deviation_time == 0); // never initiated, g = 0
}

TEST_CASE("evaluate_adherence: dynamic rule with grace window") {
    // rule: initiate when L > 120; L crosses at k=2; grace g=2
    CovariateSchema sc;
    sc.defs.push_back({"L", CovariateKind::Continuous, false});
    StrategyProtocol p;
    p.label = "dynamic";
    p.assigned_value_arm0 = 0;
    DynamicRule r;
    r.trigger = {"L", PredicateOp::GT, 120.0};
    r.required_value = 1;
    r.grace = 2;
    p.dynamic = r;

    auto make = [&](int initiate_at) {
        std::vector<th::V> visits;
        for (int k = 0; k <= 6; ++k) {
            th::V v;
            v.visit = k;
            v.a = k >= initiate_at ? 1 : 0;
            v.covs = {k >= 2 ? 130.0 : 100.0};
            visits.push_back(v);
        }
        return th::dataset(sc, {th::subject("s1", 1, visits)});
    };

    auto t4 = evaluate_adherence(make(4), p);
    CHECK_FALSE(t4.per_subject[0].deviation_time.has_value()); // within [2, 4]
    auto t5 = evaluate_adherence(make(5), p);
    REQUIRE(t5.per_subject[0].deviation_time.has_value());
    CHECK(*t5.per_subject[0].deviation_time == 5); // window exhausted at 5
}

TEST_CASE("evaluate_adherence: deviation time is monotone in the grace period") {
    // property: a longer grace can only delay (or remove) the deviation
    CovariateSchema sc;
    sc.defs.push_back({"L", CovariateKind::Continuous, false});
    for (int initiate_at = 0; initiate_at <= 6; ++initiate_at) {
        std::vector<th::V> visits;
        for (int k = 0; k <= 6; ++k) {
            th::V v;
            v.visit = k;
            v.a = k >= initiate_at ? 1 : 0;
            v.covs = {k >= 1 ? 130.0 : 100.0};
            visits.push_back(v);
        }
        auto ds = th::dataset(sc, {th::subject("s1", 1, visits)});
        int prev = -1;
        bool prev_none = false;
        for (int g = 0; g <= 5; ++g) {
            StrategyProtocol p;
            p.assigned_value_arm0 = 0;
            DynamicRule r;
            r.trigger = {"L", PredicateOp::GT, 120.0};
            r.grace = g;
            p.dynamic = r;
            auto t = evaluate_adherence(ds, p);
            auto dev = t.per_subject[0].deviation_time;
            if (prev_none) CHECK_FALSE(dev.has_value());
            if (dev.has_value() && prev >= 0) CHECK(*dev >= prev);
            prev = dev.value_or(prev);
            prev_none = !dev.has_value();
        }
    }
}

TEST_CASE("evaluate_adherence: protocol referencing a missing covariate column") {
    auto ds = th::dataset(th::schema_l0(), {th::subject("s1", 1, {{0, 1, {1.0}}})});
    StrategyProtocol p = static_protocol();
    p.excused.push_back({"nonexistent", PredicateOp::GT, 0.0});
    CHECK_THROWS_AS(evaluate_adherence(ds, p), ConfigError);
}

TEST_CASE("strategy_treatment: static, dynamic, and earliest-compliant initiation") {
    StrategyProtocol p = static_protocol();
    auto no_cov = [](const std::string&, int) { return 0.0; };
    CHECK(strategy_treatment(p, 1, no_cov, 0, {}) == 1);
    CHECK(strategy_treatment(p, 0, no_cov, 3, {0, 0, 0}) == 0);

    StrategyProtocol d;
    d.assigned_value_arm0 = 0;
    DynamicRule r;
    r.trigger = {"L", PredicateOp::GT, 120.0};
    r.grace = 2;
    d.dynamic = r;
    auto lvals = [](const std::string&, int visit) { return visit >= 2 ? 130.0 : 100.0; };
    CHECK(strategy_treatment(d, 1, lvals, 0, {}) == 0);       // not yet triggered
    CHECK(strategy_treatment(d, 1, lvals, 2, {0, 0}) == 1);   // initiate at the trigger
    CHECK(strategy_treatment(d, 1, lvals, 3, {0, 0, 1}) == 1); // stay on
}

TEST_CASE("apply_missing_adherence_policy: carry-forward fills short gaps") {
    auto ds = th::dataset(th::schema_l0(),
                          {th::subject("s1", 1, {{0, 1, {1.0}}, {1, std::nullopt, {}},
                                                 {2, 1, {}}})});
    MissingAdherencePolicy pol;
    pol.kind = MissingAdherencePolicy::Kind::CarryForwardCensorAfter;
    pol.m = 3;
    auto out = apply_missing_adherence_policy(ds, pol);
    CHECK(*out.subjects[0].visits[1].treatment == 1);
    for (const auto& v : out.subjects[0].visits) CHECK_FALSE(v.measurement_censored);
}

TEST_CASE("apply_missing_adherence_policy: censored at the m-th consecutive missing visit") {
    auto ds = th::dataset(
        th::schema_l0(),
        {th::subject("s1", 1, {{0, 1, {1.0}}, {1, std::nullopt, {}}, {2, std::nullopt, {}},
                               {3, std::nullopt, {}}, {4, std::nullopt, {}}})});
    MissingAdherencePolicy pol;
    pol.kind = MissingAdherencePolicy::Kind::CarryForwardCensorAfter;
    pol.m = 3;
    auto out = apply_missing_adherence_policy(ds, pol);
    CHECK(*out.subjects[0].visits[1].treatment == 1);
    CHECK(*out.subjects[0].visits[2].treatment == 1);
    CHECK(out.subjects[0].visits[3].measurement_censored); // third consecutive miss
    CHECK_FALSE(out.subjects[0].visits[3].treatment.has_value());
}

TEST_CASE("apply_missing_adherence_policy: assume-nonadherent uses the non-protocol value") {
    auto ds = th::dataset(th::schema_l0(),
                          {th::subject("s1", 1, {{0, 1, {1.0}}, {1, std::nullopt, {}}})});
    MissingAdherencePolicy pol;
    pol.kind = MissingAdherencePolicy::Kind::AssumeNonadherent;
    auto p = static_protocol();
    auto out = apply_missing_adherence_policy(ds, pol, &p);
    CHECK(*out.subjects[0].visits[0].treatment == 1);
    CHECK(*out.subjects[0].visits[1].treatment == 0);
}

TEST_CASE("apply_missing_adherence_policy: nothing to carry at visit 0") {
    auto ds = th::dataset(th::schema_l0(),
                          {th::subject("s1", 1, {{0, std::nullopt, {1.0}}, {1, 1, {}}})});
    MissingAdherencePolicy pol;
    pol.kind = MissingAdherencePolicy::Kind::CarryForwardCensorAfter;
    pol.m = 2;
    CHECK_THROWS_WITH_AS(apply_missing_adherence_policy(ds, pol),
                         doctest::Contains("nothing to carry"), DataError);
    pol.m = 0;
    CHECK_THROWS_AS(apply_missing_adherence_policy(ds, pol), ConfigError);
}

TEST_CASE("derive_analysis_view: censoring precedence and composite recode") {
    auto ds = th::dataset(th::schema_l0(),
                          {th::subject("s1", 1, {{0, 1, {1.0}}, {1, 0, {}}, {2, 0, {}}}),
                           th::subject("s2", 0, {{0, 0, {0.0}}, {1, 0, {}, 0, 1, 0}}),
                           th::subject("s3", 0, {{0, 0, {0.0}}, {1, 0, {}, 0, 0, 1}})});
    auto p = static_protocol();
    auto trace = evaluate_adherence(ds, p);

    ViewSpec vs;
    vs.censor_at_deviation = true;
    auto view = derive_analysis_view(ds, &trace, vs);
    // s1 deviates at visit 1: censor row there, nothing after
    int s1_rows = 0;
    for (const auto& r : view.rows)
        if (r.subject == 0) ++s1_rows;
    CHECK(s1_rows == 2);
    CHECK(view.rows[1].censor == CensorReason::Deviation);
    CHECK_FALSE(view.rows[1].at_risk);
    CHECK(view.has_ltfu); // s3

    ViewSpec comp;
    comp.composite_outcome = true;
    auto cview = derive_analysis_view(ds, nullptr, comp);
    for (const auto& r : cview.rows)
        if (r.subject == 1 && r.visit == 1) {
            CHECK(r.event == 1); // competing recoded into the composite
            CHECK(r.competing == 0);
        }

    ViewSpec bad;
    bad.composite_outcome = true;
    bad.censor_at_competing = true;
    CHECK_THROWS_AS(derive_analysis_view(ds, nullptr, bad), ConfigError);
}

TEST_CASE("protocol JSON parsing") {
    auto p = parse_protocol_json(R"({
        "label": "dynamic start",
        "assigned_value_arm0": 0,
        "dynamic": {"trigger": {"covariate": "L", "op": ">", "value": 120}, "grace": 2},
        "excused": [{"covariate": "tox", "op": "==", "value": 1}]
    })");
    CHECK(p.label == "dynamic start");
    REQUIRE(p.dynamic.has_value());
    CHECK(p.dynamic->grace == 2);
    CHECK(p.dynamic->trigger.covariate == "L");
    CHECK(p.excused.size() == 1);
    CHECK_THROWS_AS(parse_protocol_json(R"({"label": "x", "grace": -1})"), ConfigError);
}
