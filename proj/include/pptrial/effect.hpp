#pragma once

#include <Eigen/Dense>

#include <optional>
#include <string>
#include <vector>

#include "pptrial/data.hpp"
#include "pptrial/glm.hpp"

namespace pptrial {

// Absolute risk by visit; risk[k] is the cumulative risk through the interval
// starting at visit k.
struct RiskCurve {
    std::vector<double> risk;

    double at_horizon() const { return risk.empty() ? 0.0 : risk.back(); }
};

struct Interval {
    double lo = 0.0;
    double hi = 0.0;
};

struct EffectEstimate {
    std::string estimand_label;
    std::string method;
    RiskCurve risk0, risk1; // by arm (or strategy: 1 = active strategy)
    std::vector<double> rd;
    std::vector<double> rr;
    std::vector<bool> rr_defined;

    // competing-event risk per arm, when a competing event exists
    std::optional<RiskCurve> competing_risk0, competing_risk1;

    std::vector<std::string> covariates;
    std::vector<std::string> warnings;
    std::vector<std::string> assumptions;
    std::string bias_label; // non-empty marks a deliberately biased comparator

    std::optional<double> truncation_percentile;
    int truncated_count = 0;

    // percentile bootstrap intervals, indexed like the curves
    std::vector<Interval> rd_ci, risk0_ci, risk1_ci;
    int bootstrap_B = 0;
    int bootstrap_failures = 0;

    // recompute rd / rr from the stored curves
    void finalize();
    double rd_at_horizon() const { return rd.empty() ? 0.0 : rd.back(); }
};

RiskCurve risk_from_hazards(const std::vector<double>& hazards);

// Weighted discrete-time hazards for one arm of a view: events / at-risk per
// visit.  `weights` is aligned with view.rows (empty = unweighted).
std::vector<double> arm_hazards(const AnalysisView& view, int arm,
                                const std::vector<double>& weights = {});

struct CompetingCurves {
    RiskCurve event;     // cause-specific cumulative incidence of the outcome
    RiskCurve competing; // cumulative incidence of the competing event
    std::vector<double> survival; // all-cause survival, same indexing
};

// Discrete Aalen-Johansen: CI_Y(k) = sum_j h_Y(j) S(j-1) with S the all-cause
// survival; competing events reduce the risk set without censoring.
CompetingCurves aalen_johansen(const AnalysisView& view, int arm,
                               const std::vector<double>& weights = {});

// Cap weights at the given percentile (linear-interpolated order statistic).
// Returns the number of weights truncated.
int truncate_weights(std::vector<double>& w, double percentile);

// ---------------------------------------------------------------------------
// Design-column helpers over person-time rows
// ---------------------------------------------------------------------------

namespace design {

using RowRefs = std::vector<const PersonTimeRow*>;

RowRefs at_risk_rows(const AnalysisView& view);
RowRefs all_rows(const AnalysisView& view);

Eigen::VectorXd arm_col(const RowRefs& rows);
Eigen::VectorXd treatment_col(const RowRefs& rows); // unmeasured treated as 0
Eigen::VectorXd covariate_col(const AnalysisView& view, const RowRefs& rows,
                              const std::string& name);
Eigen::VectorXd time_linear(const RowRefs& rows);
// indicator columns for visits 1..horizon (visit 0 is the reference)
void add_time_dummies(DesignMatrix& d, const RowRefs& rows, int horizon,
                      const std::string& prefix = "t");

} // namespace design

} // namespace pptrial
