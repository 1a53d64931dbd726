#include "pptrial/iv.hpp"
#include "pptrial/errors.hpp"
#include "pptrial/glm.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace pptrial {

namespace {

constexpr double kWeakInstrumentFloor = 0.01;

void check_summary(const IVSummary& s) {
    for (int z = 0; z <= 1; ++z) {
        double total = 0.0;
        for (int a = 0; a <= 1; ++a)
            for (int y = 0; y <= 1; ++y) {
                if (s.p[z][a][y] < -1e-12)
                    throw DataError("IV summary has a negative cell probability");
                total += s.p[z][a][y];
            }
        if (std::abs(total - 1.0) > 1e-9)
            throw DataError("IV summary cells do not sum to 1 within arm " + std::to_string(z));
    }
}

// Pearl's instrumental inequalities; violations mean no response-type
// distribution is compatible with the three instrumental conditions.
std::vector<std::string> instrumental_inequality_violations(const IVSummary& s) {
    std::vector<std::string> out;
    for (int a = 0; a <= 1; ++a) {
        double total = 0.0;
        for (int y = 0; y <= 1; ++y) total += std::max(s.p[0][a][y], s.p[1][a][y]);
        if (total > 1.0 + 1e-9) {
            std::ostringstream os;
            os << "instrumental inequality violated for A=" << a
               << ": sum_y max_z P(y,a|z) = " << total << " > 1";
            out.push_back(os.str());
        }
    }
    return out;
}

} // namespace

IVSummary iv_summarize(const LongitudinalDataset& ds, int horizon) {
    IVSummary s;
    double counts[2][2][2] = {};
    for (const auto& sub : ds.subjects) {
        int z = sub.arm == 1 ? 1 : 0;
        if (!sub.visits.front().treatment)
            throw DataError("subject " + sub.id + ": treatment unobserved at visit 0");
        int a = *sub.visits.front().treatment == 1 ? 1 : 0;
        int y = 0;
        bool lost = false;
        for (const auto& v : sub.visits) {
            if (v.visit > horizon) break;
            if (v.outcome) {
                y = 1;
                break;
            }
            if (v.ltfu) {
                lost = true;
                break;
            }
        }
        if (!lost && sub.last_visit() < horizon && sub.terminal() == TerminalStatus::Complete)
            lost = true; // follow-up ended early without an event
        if (lost) continue;
        counts[z][a][y] += 1.0;
        (z == 1 ? s.n1 : s.n0) += 1.0;
    }
    if (s.n0 == 0 || s.n1 == 0) throw DataError("empty arm in IV summary");
    for (int z = 0; z <= 1; ++z)
        for (int a = 0; a <= 1; ++a)
            for (int y = 0; y <= 1; ++y)
                s.p[z][a][y] = counts[z][a][y] / (z == 1 ? s.n1 : s.n0);
    return s;
}

InstrumentConditionReport check_instrument(const IVSummary& summary,
                                           const LongitudinalDataset& ds,
                                           const std::string& trial_metadata,
                                           double balance_threshold) {
    check_summary(summary);
    InstrumentConditionReport rep;
    double p1 = summary.prob_treated(1), p0 = summary.prob_treated(0);
    rep.compliance_difference = p1 - p0;
    double se = std::sqrt(p1 * (1 - p1) / summary.n1 + p0 * (1 - p0) / summary.n0);
    rep.compliance_ci = {rep.compliance_difference - 1.96 * se,
                         rep.compliance_difference + 1.96 * se};
    rep.relevance_holds = rep.compliance_ci.lo > 0.0 || rep.compliance_ci.hi < 0.0;

    std::vector<std::string> baseline;
    for (const auto& d : ds.schema.defs)
        if (d.baseline) baseline.push_back(d.name);
    rep.baseline_balance = imbalance_report(ds, baseline, balance_threshold);

    rep.exclusion_note =
        "exclusion restriction is untestable; trial metadata: " +
        (trial_metadata.empty() ? std::string("(none supplied)") : trial_metadata);
    return rep;
}

EffectEstimate iv_wald(const IVSummary& summary, IvFourthCondition assumption) {
    check_summary(summary);
    double denom = summary.compliance_difference();
    if (std::abs(denom) < kWeakInstrumentFloor)
        throw ModelError(
            "weak instrument: |ITT effect on treatment| = " + std::to_string(std::abs(denom)) +
            " is below the 0.01 floor; report bounds instead of a Wald ratio");

    // complier counterfactual risks; their difference is exactly the Wald ratio
    double eya1 = summary.p[1][1][1], eya0 = summary.p[0][1][1];
    double eyn1 = summary.p[1][0][1], eyn0 = summary.p[0][0][1];
    double r1 = (eya1 - eya0) / denom;
    double r0 = (eyn0 - eyn1) / denom;

    EffectEstimate e;
    e.method = "iv wald ratio";
    e.estimand_label = assumption == IvFourthCondition::Homogeneity
                           ? "per-protocol (homogeneity)"
                           : "LATE (monotonicity)";
    e.assumptions = {"instrument relevance", "instrument unconfoundedness (randomization)",
                     "exclusion restriction",
                     assumption == IvFourthCondition::Homogeneity ? "effect homogeneity"
                                                                  : "monotonicity (no defiers)"};
    e.risk1.risk = {r1};
    e.risk0.risk = {r0};
    e.finalize();
    return e;
}

namespace {

// Sharp lower bound on the average treatment effect from a binary
// instrument (Balke-Pearl): max of the eight optimal-vertex expressions of
// the response-type linear program.  P(y,a,z) = P(Y=y, A=a | Z=z).
double balke_pearl_lower(const std::array<std::array<std::array<double, 2>, 2>, 2>& p) {
    auto P = [&](int y, int a, int z) { return p[z][a][y]; };
    const double cand[] = {
        P(1, 1, 1) + P(0, 0, 0) - 1,
        P(1, 1, 0) + P(0, 0, 1) - 1,
        P(1, 1, 0) - P(1, 1, 1) - P(1, 0, 1) - P(0, 1, 0) - P(1, 0, 0),
        P(1, 1, 1) - P(1, 1, 0) - P(1, 0, 0) - P(0, 1, 1) - P(1, 0, 1),
        -P(0, 1, 1) - P(1, 0, 1),
        -P(0, 1, 0) - P(1, 0, 0),
        P(0, 0, 1) - P(0, 1, 1) - P(1, 0, 1) - P(0, 1, 0) - P(0, 0, 0),
        P(0, 0, 0) - P(0, 1, 0) - P(1, 0, 0) - P(0, 1, 1) - P(0, 0, 1),
    };
    return *std::max_element(std::begin(cand), std::end(cand));
}

// upper bound via outcome relabeling: flipping Y negates the effect
double balke_pearl_upper(std::array<std::array<std::array<double, 2>, 2>, 2> p) {
    for (int z = 0; z <= 1; ++z)
        for (int a = 0; a <= 1; ++a) std::swap(p[z][a][0], p[z][a][1]);
    return -balke_pearl_lower(p);
}

} // namespace

BoundsEstimate iv_bounds(const IVSummary& summary, BoundsMethod method) {
    check_summary(summary);
    BoundsEstimate b;
    b.method = method;
    if (method == BoundsMethod::Natural) {
        // no-assumption bounds from the pooled (A, Y) distribution; width 1
        double n = summary.n0 + summary.n1;
        double w0 = summary.n0 / n, w1 = summary.n1 / n;
        double py1a1 = w0 * summary.p[0][1][1] + w1 * summary.p[1][1][1];
        double py1a0 = w0 * summary.p[0][0][1] + w1 * summary.p[1][0][1];
        double pa1 = w0 * summary.prob_treated(0) + w1 * summary.prob_treated(1);
        b.lower = py1a1 - py1a0 - pa1;
        b.upper = py1a1 + (1 - pa1) - py1a0;
        b.assumptions = {"randomized assignment only (no instrumental conditions used)"};
        return b;
    }
    auto violations = instrumental_inequality_violations(summary);
    if (!violations.empty()) {
        std::ostringstream os;
        os << "data are inconsistent with the instrumental conditions:";
        for (const auto& v : violations) os << "\n  " << v;
        throw DataError(os.str());
    }
    b.lower = balke_pearl_lower(summary.p);
    b.upper = balke_pearl_upper(summary.p);
    b.assumptions = {"instrument relevance", "instrument unconfoundedness (randomization)",
                     "exclusion restriction"};
    if (b.lower > b.upper + 1e-9)
        throw DataError("bounds crossed: data inconsistent with the instrumental conditions");
    return b;
}

ComplierProfile complier_profile(const LongitudinalDataset& ds, const IVSummary& summary,
                                 const std::vector<std::string>& covariates) {
    check_summary(summary);
    ComplierProfile prof;
    double pc = summary.compliance_difference();
    if (pc <= 0.0)
        throw ModelError("complier proportion <= 0: monotonicity/relevance contradiction");
    prof.complier_proportion = pc;
    prof.always_taker_proportion = summary.prob_treated(0);
    prof.never_taker_proportion = 1.0 - summary.prob_treated(1);

    for (const auto& c : covariates) {
        int ci = ds.schema.index(c);
        double sum_xa[2] = {0, 0}, n[2] = {0, 0}, sum_x = 0, n_all = 0;
        for (const auto& s : ds.subjects) {
            if (!s.visits.front().treatment) continue;
            int z = s.arm == 1 ? 1 : 0;
            double x = s.visits.front().covariates[ci].value_or(0.0);
            double a = *s.visits.front().treatment == 1 ? 1.0 : 0.0;
            sum_xa[z] += x * a;
            n[z] += 1;
            sum_x += x;
            n_all += 1;
        }
        double complier_mean = (sum_xa[1] / n[1] - sum_xa[0] / n[0]) / pc;
        prof.complier_means.emplace_back(c, complier_mean);
        prof.population_means.emplace_back(c, sum_x / n_all);
    }
    return prof;
}

FalsificationReport iv_falsification(const LongitudinalDataset& ds, const IVSummary& summary,
                                     const std::string& exclusion_justification,
                                     double balance_threshold) {
    if (exclusion_justification.empty())
        throw ConfigError(
            "exclusion-restriction justification is required for instrumental-variable "
            "analyses");
    check_summary(summary);
    FalsificationReport rep;
    rep.exclusion_justification = exclusion_justification;
    std::vector<std::string> baseline;
    for (const auto& d : ds.schema.defs)
        if (d.baseline) baseline.push_back(d.name);
    rep.instrument_covariate_associations = imbalance_report(ds, baseline, balance_threshold);
    rep.inequality_violations = instrumental_inequality_violations(summary);
    rep.bounds_consistent = rep.inequality_violations.empty();
    bool balanced = std::none_of(rep.instrument_covariate_associations.begin(),
                                 rep.instrument_covariate_associations.end(),
                                 [](const ImbalanceEntry& e) { return e.flagged; });
    rep.passed = rep.bounds_consistent && balanced;
    return rep;
}

} // namespace pptrial
