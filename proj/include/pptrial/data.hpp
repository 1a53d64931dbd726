#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace pptrial {

// ---------------------------------------------------------------------------
// Covariate schema
// ---------------------------------------------------------------------------

enum class CovariateKind { Binary, Continuous };

struct CovariateDef {
    std::string name;
    CovariateKind kind = CovariateKind::Continuous;
    bool baseline = false;
};

struct CovariateSchema {
    std::vector<CovariateDef> defs;

    int index(const std::string& name) const;
    bool has(const std::string& name) const { return index_or(name) >= 0; }
    int index_or(const std::string& name) const;
    std::size_t size() const { return defs.size(); }
};

// ---------------------------------------------------------------------------
// Longitudinal trial data
// ---------------------------------------------------------------------------

struct VisitRecord {
    int visit = 0;
    std::optional<int> treatment;                  // A_k; empty = unmeasured
    std::vector<std::optional<double>> covariates; // aligned with schema
    int outcome = 0;    // Y_k: event during the interval starting at this visit
    int competing = 0;  // D_k
    int ltfu = 0;       // C_k: lost during the interval (Y_k unobserved)
    bool adherence_measured = true;
    bool measurement_censored = false; // set by the missing-adherence policy
};

enum class TerminalStatus { Event, Competing, Censored, Complete };

struct SubjectHistory {
    std::string id;
    int arm = 0; // Z
    std::vector<VisitRecord> visits;

    TerminalStatus terminal() const;
    int last_visit() const { return visits.back().visit; }
};

struct LongitudinalDataset {
    CovariateSchema schema;
    std::vector<SubjectHistory> subjects;
    int horizon = 0;              // max visit index
    bool comparator_arm_flagged = false; // arm 0 is a placebo/comparator arm

    std::size_t person_time() const;
};

struct ValidationIssue {
    std::string subject_id;
    int visit = -1;
    bool warning = false;
    std::string message;
};

struct ValidationReport {
    std::vector<ValidationIssue> issues;
    bool ok() const;
    std::string to_string() const;
};

LongitudinalDataset load_dataset(const std::string& path, const CovariateSchema& schema);
void save_dataset_csv(const LongitudinalDataset& ds, const std::string& path);
ValidationReport validate_dataset(const LongitudinalDataset& ds);

// ---------------------------------------------------------------------------
// Treatment strategies
// ---------------------------------------------------------------------------

enum class PredicateOp { GT, GE, LT, LE, EQ, NE };

struct Predicate {
    std::string covariate;
    PredicateOp op = PredicateOp::GE;
    double value = 0.0;

    bool eval(double x) const;
};

// Dynamic initiation rule: treatment must reach `required_value` at some
// visit in [trigger, trigger + grace], where trigger is the first visit the
// predicate holds.
struct DynamicRule {
    Predicate trigger;
    int required_value = 1;
    int grace = 0;
};

struct StrategyProtocol {
    std::string label;
    int assigned_value_arm0 = 0; // static required treatment by arm
    int assigned_value_arm1 = 1;
    std::optional<DynamicRule> dynamic; // replaces the static rule for arm 1
    std::vector<Predicate> excused;     // conditions excusing any deviation
    int grace = 0;                      // initiation grace for static rules
    bool allow_clinician_discretion = false;
    std::string discretion_covariate;

    int required_value(int arm) const {
        return arm == 1 ? assigned_value_arm1 : assigned_value_arm0;
    }
};

StrategyProtocol load_protocol(const std::string& path);
StrategyProtocol parse_protocol_json(const std::string& json_text);

struct SubjectAdherence {
    std::optional<int> deviation_time;
    std::vector<std::pair<int, std::string>> excused_events; // (visit, predicate covariate)
};

struct AdherenceTrace {
    std::vector<SubjectAdherence> per_subject; // aligned with ds.subjects
};

AdherenceTrace evaluate_adherence(const LongitudinalDataset& ds, const StrategyProtocol& protocol);

// Treatment the strategy prescribes at visit k for a simulated/forced
// history, under the earliest-compliant reading of grace periods (a
// triggered dynamic rule initiates at the trigger visit itself).
// `covariate_value(name, visit)` resolves simulated covariates; `prior`
// holds treatments at visits 0..k-1.
int strategy_treatment(const StrategyProtocol& protocol, int arm,
                       const std::function<double(const std::string&, int)>& covariate_value,
                       int k, const std::vector<int>& prior);

// ---------------------------------------------------------------------------
// Missing-adherence policies: how to handle visits with unmeasured A_k
// ---------------------------------------------------------------------------

struct MissingAdherencePolicy {
    enum class Kind { AssumeNonadherent, CarryForwardCensorAfter, MeasurementWeighting };
    Kind kind = Kind::AssumeNonadherent;
    int m = 3; // carry-forward: censor at the m-th consecutive missing visit
};

LongitudinalDataset apply_missing_adherence_policy(const LongitudinalDataset& ds,
                                                   const MissingAdherencePolicy& policy,
                                                   const StrategyProtocol* protocol = nullptr);

// ---------------------------------------------------------------------------
// Analysis views (person-time)
// ---------------------------------------------------------------------------

enum class CensorReason { None, Ltfu, Deviation, Competing, Measurement };

struct PersonTimeRow {
    int subject = 0; // index into ds.subjects
    int visit = 0;
    int arm = 0;
    int treatment = -1; // -1 when unmeasured
    std::vector<double> covariates; // missing values carried forward
    bool at_risk = true;   // event status observable at this visit
    int event = 0;
    int competing = 0;
    CensorReason censor = CensorReason::None;
};

struct ViewSpec {
    bool censor_at_deviation = false;
    bool censor_at_competing = false;
    bool composite_outcome = false;
    bool censor_at_measurement = false; // respect measurement_censored flags
};

struct AnalysisView {
    std::string estimand_label;
    int horizon = 0;
    std::vector<std::string> covariate_names;
    std::vector<bool> covariate_baseline;
    std::vector<PersonTimeRow> rows;
    int n_subjects = 0;
    bool has_ltfu = false;

    std::size_t at_risk_count() const;
};

AnalysisView derive_analysis_view(const LongitudinalDataset& ds,
                                  const AdherenceTrace* trace,
                                  const ViewSpec& spec,
                                  const std::string& label = "");

} // namespace pptrial
