#pragma once

#include <functional>
#include <string>
#include <vector>

#include "pptrial/data.hpp"
#include "pptrial/effect.hpp"
#include "pptrial/sustained.hpp"

namespace pptrial {

struct BootstrapPlan {
    int B = 200;
    unsigned long long seed = 0;
    // test stub: every replicate resamples the identity permutation, so the
    // CI collapses onto the point estimate
    bool identity_stub = false;
};

// Subject-level resampling with percentile intervals.  The estimator closure
// reruns the entire pipeline (weight models included) on each resampled
// dataset; replicate r draws from a counter stream keyed by (seed, r), so the
// result is independent of execution order.
EffectEstimate bootstrap_ci(
    const std::function<EffectEstimate(const LongitudinalDataset&)>& estimator,
    const LongitudinalDataset& ds, const BootstrapPlan& plan);

// Resampled dataset for replicate r under the plan (exposed so the CI
// endpoints can be recomputed as order statistics in tests).
LongitudinalDataset bootstrap_resample(const LongitudinalDataset& ds, const BootstrapPlan& plan,
                                       int replicate);

struct WeightKindSummary {
    std::string kind;
    double mean = 0.0, sd = 0.0;
    double p1 = 0.0, p50 = 0.0, p99 = 0.0, p99_5 = 0.0, max = 0.0;
    int truncated_count = 0;
    std::vector<double> per_visit_mean; // indexed by visit
    double balance = 0.0; // residual censoring/covariate imbalance after weighting
    // stabilized mean far from 1, or weighting left loss to follow-up
    // associated with a time-varying covariate
    bool drift_flag = false;
};

struct WeightDiagnostics {
    std::vector<WeightKindSummary> kinds; // adherence, censoring, measurement, combined
    const WeightKindSummary& combined() const { return kinds.back(); }
};

WeightDiagnostics weight_diagnostics(const WeightSeries& ws);

// Minimum strength of unmeasured confounding, on the risk-ratio scale, able
// to explain away an observed risk ratio.
double evalue(double rr);

struct PlaceboControlResult {
    EffectEstimate estimate; // adherers vs non-adherers within the comparator arm
    Interval rd_ci;
    bool flagged = false; // CI excludes the null: residual confounding suspected
    std::string verdict;
};

// Negative-control exposure: adherence vs non-adherence to the comparator
// regimen cannot have a causal effect, so a non-null contrast flags residual
// confounding in the adherence-adjustment machinery.
PlaceboControlResult placebo_adherence_control(const LongitudinalDataset& ds,
                                               const StrategyProtocol& protocol,
                                               const std::vector<std::string>& covariates = {},
                                               int bootstrap_B = 200,
                                               unsigned long long seed = 0x706c62ull);

} // namespace pptrial
