#pragma once

#include <optional>
#include <string>
#include <vector>

#include "pptrial/data.hpp"
#include "pptrial/diagnostics.hpp"
#include "pptrial/itt.hpp"
#include "pptrial/sustained.hpp"

namespace pptrial {

// One estimand request inside an analysis plan.  `estimator` is one of:
//   itt_unadjusted, itt_standardized, itt_ipw, itt_ipcw,
//   competing_total, competing_direct, competing_composite,
//   pp_point_ipw, pp_point_standardization, naive_pp, as_treated, modified_itt,
//   pp_sustained_ipw, gformula, gestimation, iv_wald, iv_bounds
struct EstimandRequest {
    std::string label;
    std::string estimator;
    std::vector<std::string> covariates;
    std::string justification; // competing-direct / IV exclusion justification
    std::optional<StrataDefinition> subgroup;
    std::optional<BootstrapPlan> bootstrap;
    int n_mc = 10000;                 // g-formula
    unsigned long long seed = 0;      // g-formula / bootstrap default
    std::string iv_assumption = "monotonicity"; // or "homogeneity"
    std::string bounds_method = "balke_pearl";  // or "natural"
    PsiGrid psi_grid;                 // g-estimation
};

struct AnalysisPlan {
    std::string dataset_path;
    CovariateSchema schema;
    std::optional<StrategyProtocol> protocol;
    std::string out_dir;
    std::vector<EstimandRequest> requests;
    bool allow_partial = false;
};

AnalysisPlan parse_plan_json(const std::string& text);
AnalysisPlan load_plan(const std::string& path);

struct RunReport {
    std::string report_json;
    int failed_requests = 0;
    std::vector<std::string> errors;
};

// Executes every request against the plan's dataset and assembles the JSON
// report bundle.  Per-protocol requests are refused unless the same bundle
// also carries an intention-to-treat request (Guideline I); with failures and
// allow_partial unset the whole run throws.
RunReport run_plan(const AnalysisPlan& plan);

// True for estimators targeting a per-protocol (or otherwise
// adherence-dependent) contrast rather than assignment alone.
bool is_per_protocol_estimator(const std::string& estimator);

void save_risk_curves_csv(const EffectEstimate& e, const std::string& path);

} // namespace pptrial
