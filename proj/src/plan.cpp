#include "pptrial/plan.hpp"
#include "pptrial/errors.hpp"
#include "pptrial/iv.hpp"
#include "pptrial/pp_point.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

namespace pptrial {

using nlohmann::json;

namespace {

const std::set<std::string> kIttEstimators = {
    "itt_unadjusted",  "itt_standardized",  "itt_ipw",           "itt_ipcw",
    "competing_total", "competing_direct",  "competing_composite"};
const std::set<std::string> kPpEstimators = {
    "pp_point_ipw", "pp_point_standardization", "naive_pp",   "as_treated",
    "modified_itt", "pp_sustained_ipw",         "gformula",   "gestimation",
    "iv_wald",      "iv_bounds"};

CovariateSchema parse_schema(const json& j) {
    CovariateSchema s;
    for (const auto& c : j.at("covariates")) {
        CovariateDef d;
        d.name = c.at("name").get<std::string>();
        std::string kind = c.value("kind", "continuous");
        if (kind == "binary")
            d.kind = CovariateKind::Binary;
        else if (kind == "continuous")
            d.kind = CovariateKind::Continuous;
        else
            throw ConfigError("unknown covariate kind: " + kind);
        d.baseline = c.value("baseline", false);
        s.defs.push_back(std::move(d));
    }
    if (s.defs.empty()) throw ConfigError("schema declares no covariates");
    return s;
}

} // namespace

bool is_per_protocol_estimator(const std::string& estimator) {
    return kPpEstimators.count(estimator) > 0;
}

AnalysisPlan parse_plan_json(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("plan is not valid JSON: ") + e.what());
    }
    AnalysisPlan plan;
    try {
        plan.dataset_path = j.at("dataset").get<std::string>();
        plan.schema = parse_schema(j.at("schema"));
        if (j.contains("protocol")) {
            if (j["protocol"].is_string())
                plan.protocol = load_protocol(j["protocol"].get<std::string>());
            else
                plan.protocol = parse_protocol_json(j["protocol"].dump());
        }
        plan.out_dir = j.value("output_dir", "");
        plan.allow_partial = j.value("allow_partial", false);
        if (!j.contains("requests") || !j["requests"].is_array() || j["requests"].empty())
            throw ConfigError("plan has no estimand requests");
        for (const auto& r : j["requests"]) {
            EstimandRequest req;
            req.estimator = r.at("estimator").get<std::string>();
            if (!kIttEstimators.count(req.estimator) && !kPpEstimators.count(req.estimator))
                throw ConfigError("unsupported estimator: " + req.estimator);
            req.label = r.value("label", req.estimator);
            if (r.contains("covariates"))
                req.covariates = r["covariates"].get<std::vector<std::string>>();
            req.justification = r.value("justification", "");
            if (req.estimator == "competing_direct" && req.justification.empty())
                throw ConfigError(
                    "competing_direct requires a justification string (Guideline VII)");
            if (r.contains("subgroup")) {
                StrataDefinition sd;
                sd.covariate = r["subgroup"].at("covariate").get<std::string>();
                sd.prespecified = r["subgroup"].value("prespecified", false);
                req.subgroup = sd;
            }
            if (r.contains("bootstrap")) {
                BootstrapPlan bp;
                bp.B = r["bootstrap"].value("B", 200);
                if (bp.B < 2) throw ConfigError("bootstrap B must be >= 2");
                bp.seed = r["bootstrap"].value("seed", 0ull);
                req.bootstrap = bp;
            }
            req.n_mc = r.value("n_mc", 10000);
            req.seed = r.value("seed", 0ull);
            req.iv_assumption = r.value("iv_assumption", "monotonicity");
            req.bounds_method = r.value("bounds_method", "balke_pearl");
            if (r.contains("psi_grid")) {
                req.psi_grid.lo = r["psi_grid"].value("lo", -5.0);
                req.psi_grid.hi = r["psi_grid"].value("hi", 5.0);
                req.psi_grid.points = r["psi_grid"].value("points", 1001);
            }
            plan.requests.push_back(std::move(req));
        }
    } catch (const json::exception& e) {
        throw ConfigError(std::string("plan schema violation: ") + e.what());
    }

    // Guideline I: a per-protocol estimate may only ship alongside an ITT
    // estimate in the same bundle
    bool any_pp = false, any_itt = false;
    for (const auto& r : plan.requests) {
        any_pp = any_pp || kPpEstimators.count(r.estimator) > 0;
        any_itt = any_itt || kIttEstimators.count(r.estimator) > 0;
    }
    if (any_pp && !any_itt)
        throw ConfigError(
            "plan rejected: per-protocol estimates must be reported together with an "
            "intention-to-treat estimate in the same bundle (Guideline I)");
    return plan;
}

AnalysisPlan load_plan(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open plan file: " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_plan_json(ss.str());
}

void save_risk_curves_csv(const EffectEstimate& e, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write risk-curve file: " + path);
    out << "time,arm,risk\n";
    out.precision(12);
    for (std::size_t k = 0; k < e.risk0.risk.size(); ++k)
        out << k << ",0," << e.risk0.risk[k] << '\n';
    for (std::size_t k = 0; k < e.risk1.risk.size(); ++k)
        out << k << ",1," << e.risk1.risk[k] << '\n';
}

namespace {

json interval_json(const Interval& i) { return json{{"lo", i.lo}, {"hi", i.hi}}; }

json estimate_json(const EffectEstimate& e) {
    json out;
    out["estimand"] = e.estimand_label;
    out["method"] = e.method;
    out["risks"] = {{"arm0", e.risk0.risk}, {"arm1", e.risk1.risk}};
    out["rd"] = e.rd;
    out["rr"] = e.rr;
    out["rr_defined"] = e.rr_defined;
    if (e.competing_risk0 && e.competing_risk1)
        out["competing_risks"] = {{"arm0", e.competing_risk0->risk},
                                  {"arm1", e.competing_risk1->risk}};
    if (!e.rd_ci.empty()) {
        json cis = json::array();
        for (const auto& c : e.rd_ci) cis.push_back(interval_json(c));
        out["rd_ci"] = cis;
        out["bootstrap"] = {{"B", e.bootstrap_B}, {"failures", e.bootstrap_failures}};
    }
    out["covariates"] = e.covariates;
    out["warnings"] = e.warnings;
    out["assumptions"] = e.assumptions;
    if (!e.bias_label.empty()) out["bias_label"] = e.bias_label;
    if (e.truncation_percentile)
        out["truncation"] = {{"percentile", *e.truncation_percentile},
                             {"count", e.truncated_count}};
    return out;
}

json weight_diagnostics_json(const WeightDiagnostics& d) {
    json out = json::array();
    for (const auto& k : d.kinds)
        out.push_back({{"kind", k.kind},
                       {"mean", k.mean},
                       {"sd", k.sd},
                       {"p1", k.p1},
                       {"p50", k.p50},
                       {"p99", k.p99},
                       {"p99.5", k.p99_5},
                       {"max", k.max},
                       {"truncated", k.truncated_count},
                       {"per_visit_mean", k.per_visit_mean},
                       {"balance", k.balance},
                       {"drift_flag", k.drift_flag}});
    return out;
}

const StrategyProtocol& require_protocol(const AnalysisPlan& plan, const std::string& who) {
    if (!plan.protocol)
        throw ConfigError("estimator " + who + " requires a protocol in the plan");
    return *plan.protocol;
}

// runs one request; returns the report entry
json run_request(const AnalysisPlan& plan, const EstimandRequest& req,
                 const LongitudinalDataset& ds) {
    json entry;
    entry["label"] = req.label;
    entry["estimator"] = req.estimator;

    auto estimator_closure = [&](const LongitudinalDataset& d) -> EffectEstimate {
        AnalysisView view = derive_analysis_view(d, nullptr, ViewSpec{}, req.label);
        if (req.estimator == "itt_unadjusted") return itt_unadjusted(view);
        if (req.estimator == "itt_standardized") return itt_standardized(view, req.covariates);
        if (req.estimator == "itt_ipw") return itt_ipw_baseline(view, req.covariates);
        if (req.estimator == "itt_ipcw") {
            IpcwOptions o;
            o.timevarying_covariates = req.covariates;
            return itt_ipcw(d, o);
        }
        if (req.estimator.rfind("competing_", 0) == 0) {
            CompetingEstimand est = req.estimator == "competing_total"
                                        ? CompetingEstimand::Total
                                    : req.estimator == "competing_direct"
                                        ? CompetingEstimand::Direct
                                        : CompetingEstimand::Composite;
            return competing_effect(view, est, req.covariates, req.justification);
        }
        if (req.estimator == "pp_point_ipw" || req.estimator == "pp_point_standardization" ||
            req.estimator == "naive_pp" || req.estimator == "as_treated" ||
            req.estimator == "modified_itt") {
            const auto& protocol = require_protocol(plan, req.estimator);
            PointPPConfig cfg;
            cfg.adherent_value_arm0 = protocol.required_value(0);
            cfg.adherent_value_arm1 = protocol.required_value(1);
            cfg.baseline_confounders = req.covariates;
            cfg.method = req.estimator == "pp_point_standardization"
                             ? PointPPConfig::Method::Standardization
                             : PointPPConfig::Method::Ipw;
            if (req.estimator == "naive_pp")
                return biased_comparator(d, cfg, BiasedComparatorMode::NaivePP);
            if (req.estimator == "as_treated")
                return biased_comparator(d, cfg, BiasedComparatorMode::AsTreated);
            if (req.estimator == "modified_itt")
                return biased_comparator(d, cfg, BiasedComparatorMode::ModifiedItt);
            return pp_point_adjusted(d, cfg);
        }
        if (req.estimator == "pp_sustained_ipw") {
            SustainedIpwOptions o;
            o.timevarying_covariates = req.covariates;
            return pp_ipw_sustained(d, require_protocol(plan, req.estimator), o).estimate;
        }
        if (req.estimator == "gformula") {
            GFormulaSpec spec;
            spec.protocol = require_protocol(plan, req.estimator);
            spec.timevarying_covariates = req.covariates;
            spec.n_mc = req.n_mc;
            spec.seed = req.seed;
            spec.natural_course = false;
            return parametric_gformula(d, spec).estimate;
        }
        if (req.estimator == "gestimation") {
            GEstimationOptions o;
            o.covariates = req.covariates;
            o.grid = req.psi_grid;
            return gestimate_snmm(d, require_protocol(plan, req.estimator), o).estimate;
        }
        if (req.estimator == "iv_wald") {
            IVSummary s = iv_summarize(d, d.horizon);
            return iv_wald(s, req.iv_assumption == "homogeneity"
                                  ? IvFourthCondition::Homogeneity
                                  : IvFourthCondition::Monotonicity);
        }
        throw ConfigError("unsupported estimator: " + req.estimator);
    };

    if (req.estimator == "iv_bounds") {
        if (req.justification.empty())
            throw ConfigError("iv_bounds requires an exclusion-restriction justification");
        IVSummary s = iv_summarize(ds, ds.horizon);
        BoundsEstimate b = iv_bounds(
            s, req.bounds_method == "natural" ? BoundsMethod::Natural : BoundsMethod::BalkePearl);
        entry["bounds"] = {{"lower", b.lower}, {"upper", b.upper}};
        entry["assumptions"] = b.assumptions;
        entry["justification"] = req.justification;
        return entry;
    }

    if (req.subgroup) {
        AnalysisView view = derive_analysis_view(ds, nullptr, ViewSpec{}, req.label);
        auto sub = subgroup_effects(view, *req.subgroup, [&](const AnalysisView& v) {
            if (req.estimator == "itt_unadjusted") return itt_unadjusted(v);
            if (req.estimator == "itt_standardized") return itt_standardized(v, req.covariates);
            if (req.estimator == "itt_ipw") return itt_ipw_baseline(v, req.covariates);
            throw ConfigError("subgroups support itt_unadjusted, itt_standardized, itt_ipw");
        });
        json strata = json::array();
        for (const auto& [name, est] : sub.strata) {
            json s = estimate_json(est);
            s["stratum"] = name;
            strata.push_back(std::move(s));
        }
        entry["subgroups"] = std::move(strata);
        json het = json::array();
        for (const auto& h : sub.heterogeneity)
            het.push_back({{"a", h.a}, {"b", h.b}, {"rd_difference", h.rd_difference}});
        entry["heterogeneity_additive_scale"] = std::move(het);
        entry["prespecified"] = sub.prespecified;
        entry["warnings"] = sub.warnings;
        return entry;
    }

    EffectEstimate est = req.bootstrap ? bootstrap_ci(estimator_closure, ds, *req.bootstrap)
                                       : estimator_closure(ds);
    entry.update(estimate_json(est));

    // embed weight diagnostics for the weighted sustained pipeline
    if (req.estimator == "pp_sustained_ipw") {
        SustainedIpwOptions o;
        o.timevarying_covariates = req.covariates;
        auto res = pp_ipw_sustained(ds, require_protocol(plan, req.estimator), o);
        entry["diagnostics"] = {{"weights", weight_diagnostics_json(
                                                weight_diagnostics(res.weights))}};
    }
    if (req.estimator == "gformula") {
        GFormulaSpec spec;
        spec.protocol = require_protocol(plan, req.estimator);
        spec.timevarying_covariates = req.covariates;
        spec.n_mc = req.n_mc;
        spec.seed = req.seed;
        GFormulaResult g = parametric_gformula(ds, spec);
        json nc = json::array();
        for (const auto& r : g.natural_course)
            nc.push_back({{"visit", r.visit},
                          {"covariate", r.covariate},
                          {"observed_mean", r.observed_mean},
                          {"simulated_mean", r.simulated_mean},
                          {"mc_se", r.mc_se}});
        entry["diagnostics"] = {{"natural_course", std::move(nc)},
                                {"out_of_support", g.out_of_support}};
        if (!plan.out_dir.empty())
            save_natural_course_csv(g.natural_course,
                                    (std::filesystem::path(plan.out_dir) /
                                     (req.label + "_natural_course.csv"))
                                        .string());
    }

    if (!plan.out_dir.empty())
        save_risk_curves_csv(est, (std::filesystem::path(plan.out_dir) /
                                   (req.label + "_risks.csv"))
                                      .string());
    return entry;
}

} // namespace

RunReport run_plan(const AnalysisPlan& plan) {
    LongitudinalDataset ds = load_dataset(plan.dataset_path, plan.schema);
    if (!plan.out_dir.empty()) std::filesystem::create_directories(plan.out_dir);

    RunReport out;
    json report;
    report["dataset"] = plan.dataset_path;
    report["requests"] = json::array();
    for (const auto& req : plan.requests) {
        try {
            report["requests"].push_back(run_request(plan, req, ds));
        } catch (const std::exception& e) {
            ++out.failed_requests;
            out.errors.push_back(req.label + ": " + e.what());
            json entry;
            entry["label"] = req.label;
            entry["estimator"] = req.estimator;
            entry["error"] = e.what();
            report["requests"].push_back(std::move(entry));
        }
    }
    report["guidelines"] = {
        {"itt_pp_paired", true},
        {"absolute_risks_reported", true},
    };
    report["failed_requests"] = out.failed_requests;
    out.report_json = report.dump(2);

    if (out.failed_requests > 0 && !plan.allow_partial) {
        std::ostringstream os;
        os << "estimation failed for " << out.failed_requests << " request(s):";
        for (const auto& e : out.errors) os << "\n  " << e;
        throw ModelError(os.str());
    }
    if (!plan.out_dir.empty()) {
        std::ofstream f((std::filesystem::path(plan.out_dir) / "report.json").string());
        f << out.report_json << '\n';
    }
    return out;
}

} // namespace pptrial
