#pragma once

#include <optional>
#include <string>
#include <vector>

#include "pptrial/data.hpp"
#include "pptrial/effect.hpp"

namespace pptrial {

// Per subject-visit inverse-probability weight components, aligned with the
// rows of the analysis view they were computed on.  `combined` is the product
// of the components before truncation; `analysis` is the post-truncation
// weight used for estimation.
struct WeightSeries {
    std::vector<int> subject, visit;
    std::vector<double> adherence, censoring, measurement;
    std::vector<double> combined;
    std::vector<double> analysis;
    double truncation_percentile = 99.5;
    int truncated_count = 0;
    // worst weighted standardized difference of a time-varying covariate
    // between person-time lost to follow-up and person-time retained; a
    // correctly specified censoring model drives this toward zero
    double censoring_balance = 0.0;
};

struct SustainedIpwOptions {
    std::vector<std::string> timevarying_covariates;
    double truncation_percentile = 99.5;
    double positivity_floor = 0.01;
    double weight_cap_warn = 20.0;
    std::optional<MissingAdherencePolicy> missing_policy;
};

struct SustainedIpwResult {
    EffectEstimate estimate;
    WeightSeries weights;
};

// Time-varying IPW for a sustained strategy: censor at the first unexcused
// deviation, reweight the remaining person-time by stabilized inverse
// probabilities of the observed adherence decisions, composed with IPCW for
// loss to follow-up and measurement weights when the missing-adherence policy
// asks for them.  Truncation happens after composition.
SustainedIpwResult pp_ipw_sustained(const LongitudinalDataset& ds,
                                    const StrategyProtocol& protocol,
                                    const SustainedIpwOptions& opts);

// Deliberately inadequate comparator: outcome-regression standardization over
// baseline covariates only, on the deviation-censored view.  Biased under
// treatment-confounder feedback; kept for the contrast with the g-methods.
EffectEstimate pp_baseline_only_regression(const LongitudinalDataset& ds,
                                           const StrategyProtocol& protocol,
                                           const std::vector<std::string>& baseline_covariates);

// ---------------------------------------------------------------------------
// Parametric g-formula
// ---------------------------------------------------------------------------

struct GFormulaSpec {
    StrategyProtocol protocol; // simulated as strategy(arm 0) vs strategy(arm 1)
    std::vector<std::string> timevarying_covariates; // analyst-declared topological order
    int n_mc = 10000;
    bool natural_course = true;
    bool include_competing = false;
    unsigned long long seed = 0;
};

struct NaturalCourseRow {
    int visit = 0;
    std::string covariate;
    double observed_mean = 0.0;
    double simulated_mean = 0.0;
    double mc_se = 0.0;
};

struct GFormulaResult {
    EffectEstimate estimate;      // strategy contrast: arm-1 rule vs arm-0 rule
    RiskCurve natural_risk;       // natural-course cumulative risk
    std::vector<NaturalCourseRow> natural_course;
    int out_of_support = 0;       // continuous draws clamped to the observed range
};

GFormulaResult parametric_gformula(const LongitudinalDataset& ds, const GFormulaSpec& spec);

void save_natural_course_csv(const std::vector<NaturalCourseRow>& rows, const std::string& path);

// ---------------------------------------------------------------------------
// G-estimation of a one-parameter additive SNMM
// ---------------------------------------------------------------------------

struct PsiGrid {
    double lo = -5.0;
    double hi = 5.0;
    int points = 1001;
};

struct GEstimationOptions {
    std::vector<std::string> covariates; // time-varying confounders for the treatment model
    PsiGrid grid;
    // empty: outcome is the binary event-by-horizon indicator; otherwise the
    // named covariate's last observed value is the continuous end outcome
    std::string continuous_outcome_covariate;
};

struct GEstimationResult {
    double psi_hat = 0.0;      // additive effect per treated visit
    Interval ci;               // score-test inversion at the 3.84 chi-square cutoff
    bool boundary = false;     // argmin or interval endpoint pinned to the grid edge
    std::vector<double> grid;
    std::vector<double> score; // score-statistic trace over the grid
    EffectEstimate estimate;   // always treat vs never treat at the horizon
};

GEstimationResult gestimate_snmm(const LongitudinalDataset& ds, const StrategyProtocol& protocol,
                                 const GEstimationOptions& opts);

// Stabilized inverse-probability-of-measurement weights for datasets flagged
// by the measurement-weighting missing-adherence policy.
WeightSeries measurement_weights(const LongitudinalDataset& ds,
                                 const std::vector<std::string>& covariates);

} // namespace pptrial
