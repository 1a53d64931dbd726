#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "pptrial/data.hpp"
#include "pptrial/effect.hpp"

namespace pptrial {

// Joint distribution of (treatment received, outcome by the horizon) within
// each assignment arm: p[z][a][y] = P(A=a, Y=y | Z=z).
struct IVSummary {
    std::array<std::array<std::array<double, 2>, 2>, 2> p{};
    double n0 = 0, n1 = 0; // subjects per arm

    double prob_treated(int z) const { return p[z][1][0] + p[z][1][1]; }
    double prob_event(int z) const { return p[z][0][1] + p[z][1][1]; }
    double compliance_difference() const { return prob_treated(1) - prob_treated(0); }
    double itt_rd() const { return prob_event(1) - prob_event(0); }
};

// Summarize a dataset at a horizon: A is the visit-0 treatment, Y the event
// indicator by `horizon`.  Subjects lost before the horizon are excluded.
IVSummary iv_summarize(const LongitudinalDataset& ds, int horizon);

struct InstrumentConditionReport {
    bool relevance_holds = false;
    double compliance_difference = 0.0;
    Interval compliance_ci;
    std::vector<ImbalanceEntry> baseline_balance; // condition 2: design-guaranteed, reported
    std::string exclusion_note; // condition 3: untestable; trial metadata echoed
};

InstrumentConditionReport check_instrument(const IVSummary& summary,
                                           const LongitudinalDataset& ds,
                                           const std::string& trial_metadata = "",
                                           double balance_threshold = 0.1);

enum class IvFourthCondition { Homogeneity, Monotonicity };

// Wald ratio: ITT effect on the outcome over ITT effect on treatment.  The
// declared fourth condition picks the estimand label, not the number.
EffectEstimate iv_wald(const IVSummary& summary, IvFourthCondition assumption);

enum class BoundsMethod { BalkePearl, Natural };

struct BoundsEstimate {
    double lower = -1.0;
    double upper = 1.0;
    BoundsMethod method = BoundsMethod::BalkePearl;
    std::vector<std::string> assumptions;
};

BoundsEstimate iv_bounds(const IVSummary& summary, BoundsMethod method);

struct ComplierProfile {
    double complier_proportion = 0.0;
    double always_taker_proportion = 0.0;
    double never_taker_proportion = 0.0;
    std::vector<std::pair<std::string, double>> complier_means;
    std::vector<std::pair<std::string, double>> population_means;
};

ComplierProfile complier_profile(const LongitudinalDataset& ds, const IVSummary& summary,
                                 const std::vector<std::string>& covariates);

struct FalsificationReport {
    std::vector<ImbalanceEntry> instrument_covariate_associations;
    bool bounds_consistent = true;   // Pearl instrumental inequalities
    std::vector<std::string> inequality_violations;
    std::string exclusion_justification;
    bool passed = true;
};

FalsificationReport iv_falsification(const LongitudinalDataset& ds, const IVSummary& summary,
                                     const std::string& exclusion_justification,
                                     double balance_threshold = 0.1);

} // namespace pptrial
