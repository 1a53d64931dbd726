#pragma once

#include <functional>
#include <string>
#include <vector>

#include "pptrial/data.hpp"
#include "pptrial/effect.hpp"

namespace pptrial {

// Unadjusted contrast of discrete-time risk curves by randomization arm.
// Labeled pseudo-ITT when any loss to follow-up is present in the view.
EffectEstimate itt_unadjusted(const AnalysisView& view);

// Outcome-model standardization over baseline covariates: pooled logistic
// with arm x time and arm x covariate terms, predictions averaged over the
// whole population under each arm.
EffectEstimate itt_standardized(const AnalysisView& view,
                                const std::vector<std::string>& baseline_covariates);

// Baseline inverse-probability-of-assignment weighting.
EffectEstimate itt_ipw_baseline(const AnalysisView& view,
                                const std::vector<std::string>& baseline_covariates);

struct IpcwOptions {
    std::vector<std::string> timevarying_covariates;
    double weight_cap_warn = 20.0;   // warn when an unstabilized weight exceeds this
    double truncation_percentile = 99.5;
};

// Inverse probability of censoring weighting for loss to follow-up.
EffectEstimate itt_ipcw(const LongitudinalDataset& ds, const IpcwOptions& opts);

enum class CompetingEstimand { Total, Direct, Composite };

// Competing-event estimands on an unflagged view (no artificial censoring of
// competing events baked in).  `direct` censors at the competing event with
// IPCW over the supplied shared predictors.
EffectEstimate competing_effect(const AnalysisView& view, CompetingEstimand estimand,
                                const std::vector<std::string>& covariates = {},
                                const std::string& direct_justification = "");

struct StrataDefinition {
    std::string covariate; // baseline covariate; strata are its distinct values
    bool prespecified = true;
};

struct SubgroupResult {
    std::vector<std::pair<std::string, EffectEstimate>> strata;
    // pairwise risk-difference differences at the horizon (additive scale)
    struct Pair {
        std::string a, b;
        double rd_difference = 0.0;
    };
    std::vector<Pair> heterogeneity;
    bool prespecified = true;
    std::vector<std::string> warnings;
};

SubgroupResult subgroup_effects(const AnalysisView& view, const StrataDefinition& strata,
                                const std::function<EffectEstimate(const AnalysisView&)>& base);

} // namespace pptrial
