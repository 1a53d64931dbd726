#include <doctest.h>

#include "pptrial/errors.hpp"
#include "pptrial/plan.hpp"
#include "pptrial/sim.hpp"
#include "test_helpers.hpp"

#include <nlohmann/json.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

using namespace pptrial;
using nlohmann::json;

namespace {

json base_plan(const std::string& dataset_path) {
    json plan;
    plan["dataset"] = dataset_path;
    plan["schema"]["covariates"] = {
        {{"name", "L0"}, {"kind", "binary"}, {"baseline", true}},
        {{"name", "L"}, {"kind", "binary"}}};
    plan["protocol"] = {{"label", "assigned"},
                        {"assigned_value_arm0", 0},
                        {"assigned_value_arm1", 1}};
    return plan;
}

std::string sim_csv(const char* preset_name, int n, unsigned long long seed,
                    const std::string& tag) {
    auto cfg = preset(preset_name);
    cfg.n = n;
    auto path = th::temp_path(tag);
    save_dataset_csv(generate_trial(cfg, seed), path);
    return path;
}

} // namespace

TEST_CASE("parse_plan_json: per-protocol requests need a paired ITT request") {
    auto plan = base_plan("x.csv");
    plan["requests"] = {{{"estimator", "pp_sustained_ipw"}}};
    CHECK_THROWS_WITH_AS(parse_plan_json(plan.dump()), doctest::Contains("Guideline I"),
                         ConfigError);
    // adding an ITT request makes the same bundle acceptable
    plan["requests"].push_back({{"estimator", "itt_unadjusted"}});
    auto parsed = parse_plan_json(plan.dump());
    CHECK(parsed.requests.size() == 2);
    CHECK(is_per_protocol_estimator("pp_sustained_ipw"));
    CHECK_FALSE(is_per_protocol_estimator("itt_unadjusted"));
}

TEST_CASE("parse_plan_json: malformed and incomplete plans are config errors") {
    CHECK_THROWS_WITH_AS(parse_plan_json("{not json"),
                         doctest::Contains("plan is not valid JSON"), ConfigError);

    auto plan = base_plan("x.csv");
    CHECK_THROWS_WITH_AS(parse_plan_json(plan.dump()),
                         doctest::Contains("no estimand requests"), ConfigError);

    plan["requests"] = {{{"estimator", "magic_estimator"}}};
    CHECK_THROWS_WITH_AS(parse_plan_json(plan.dump()),
                         doctest::Contains("unsupported estimator: magic_estimator"),
                         ConfigError);

    auto missing = base_plan("x.csv");
    missing.erase("dataset");
    missing["requests"] = {{{"estimator", "itt_unadjusted"}}};
    CHECK_THROWS_WITH_AS(parse_plan_json(missing.dump()),
                         doctest::Contains("plan schema violation"), ConfigError);
}

TEST_CASE("parse_plan_json: competing_direct requires a justification") {
    auto plan = base_plan("x.csv");
    plan["requests"] = {{{"estimator", "competing_direct"}}};
    CHECK_THROWS_WITH_AS(parse_plan_json(plan.dump()), doctest::Contains("Guideline VII"),
                         ConfigError);
    plan["requests"] = {{{"estimator", "competing_direct"},
                         {"justification", "death is independent of screening given L0"}}};
    auto parsed = parse_plan_json(plan.dump());
    CHECK(parsed.requests[0].justification ==
          "death is independent of screening given L0");
}

TEST_CASE("parse_plan_json: bootstrap replicate count is validated up front") {
    auto plan = base_plan("x.csv");
    plan["requests"] = {
        {{"estimator", "itt_unadjusted"}, {"bootstrap", {{"B", 1}}}}};
    CHECK_THROWS_WITH_AS(parse_plan_json(plan.dump()),
                         doctest::Contains("bootstrap B must be >= 2"), ConfigError);
}

TEST_CASE("load_plan: missing plan file is a config error") {
    CHECK_THROWS_WITH_AS(load_plan("/nonexistent/plan.json"),
                         doctest::Contains("cannot open plan file"), ConfigError);
}

TEST_CASE("run_plan: ITT plus sustained per-protocol bundle on a null trial") {
    auto csv = sim_csv("S-NULL", 2000, 404, "plan_null");
    auto out_dir = th::temp_path("plan_out");
    auto plan_json = base_plan(csv);
    plan_json["output_dir"] = out_dir;
    plan_json["requests"] = {
        {{"label", "itt"}, {"estimator", "itt_unadjusted"}},
        {{"label", "pp"}, {"estimator", "pp_sustained_ipw"}, {"covariates", {"L"}}}};

    auto plan = parse_plan_json(plan_json.dump());
    auto rep = run_plan(plan);
    CHECK(rep.failed_requests == 0);
    CHECK(rep.errors.empty());

    auto report = json::parse(rep.report_json);
    REQUIRE(report["requests"].size() == 2);
    CHECK(report["guidelines"]["itt_pp_paired"] == true);
    CHECK(report["guidelines"]["absolute_risks_reported"] == true);
    CHECK(report["failed_requests"] == 0);

    for (const auto& entry : report["requests"]) {
        REQUIRE(entry.contains("rd"));
        double rd = entry["rd"].back().get<double>();
        CHECK(std::abs(rd) < 0.06); // null scenario
        REQUIRE(entry.contains("risks"));
        CHECK_FALSE(entry["risks"]["arm0"].empty());
        CHECK_FALSE(entry["risks"]["arm1"].empty());
    }
    // the sustained request carries its weight diagnostics
    CHECK(report["requests"][1].contains("diagnostics"));
    CHECK(report["requests"][1]["diagnostics"].contains("weights"));

    namespace fs = std::filesystem;
    CHECK(fs::exists(fs::path(out_dir) / "report.json"));
    CHECK(fs::exists(fs::path(out_dir) / "itt_risks.csv"));
    CHECK(fs::exists(fs::path(out_dir) / "pp_risks.csv"));
    fs::remove_all(out_dir);
    std::remove(csv.c_str());
}

TEST_CASE("run_plan: failures abort unless allow_partial collects them") {
    auto csv = sim_csv("S-NULL", 300, 7, "plan_partial");
    auto plan_json = base_plan(csv);
    plan_json["requests"] = {
        {{"label", "itt"}, {"estimator", "itt_unadjusted"}},
        // L is time-varying, so baseline IP weighting must refuse it
        {{"label", "broken"}, {"estimator", "itt_ipw"}, {"covariates", {"L"}}}};

    auto strict = parse_plan_json(plan_json.dump());
    CHECK_THROWS_WITH_AS(run_plan(strict),
                         doctest::Contains("estimation failed for 1 request(s)"), ModelError);

    plan_json["allow_partial"] = true;
    auto lenient = parse_plan_json(plan_json.dump());
    auto rep = run_plan(lenient);
    CHECK(rep.failed_requests == 1);
    REQUIRE(rep.errors.size() == 1);
    CHECK(rep.errors[0].find("broken:") == 0);

    auto report = json::parse(rep.report_json);
    REQUIRE(report["requests"].size() == 2);
    CHECK_FALSE(report["requests"][0].contains("error"));
    CHECK(report["requests"][1].contains("error"));
    CHECK(report["failed_requests"] == 1);
    std::remove(csv.c_str());
}
