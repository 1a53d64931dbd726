#include "pptrial/data.hpp"
#include "pptrial/errors.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <fstream>
#include <map>
#include <sstream>

namespace pptrial {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Schema
// ---------------------------------------------------------------------------

int CovariateSchema::index_or(const std::string& name) const {
    for (std::size_t i = 0; i < defs.size(); ++i)
        if (defs[i].name == name) return static_cast<int>(i);
    return -1;
}

int CovariateSchema::index(const std::string& name) const {
    int i = index_or(name);
    if (i < 0) throw DataError("unknown covariate: " + name);
    return i;
}

// ---------------------------------------------------------------------------
// Dataset basics
// ---------------------------------------------------------------------------

TerminalStatus SubjectHistory::terminal() const {
    const VisitRecord& last = visits.back();
    if (last.outcome) return TerminalStatus::Event;
    if (last.competing) return TerminalStatus::Competing;
    if (last.ltfu) return TerminalStatus::Censored;
    return TerminalStatus::Complete;
}

std::size_t LongitudinalDataset::person_time() const {
    std::size_t n = 0;
    for (const auto& s : subjects) n += s.visits.size();
    return n;
}

bool ValidationReport::ok() const {
    return std::none_of(issues.begin(), issues.end(),
                        [](const ValidationIssue& i) { return !i.warning; });
}

std::string ValidationReport::to_string() const {
    std::ostringstream os;
    for (const auto& i : issues) {
        os << (i.warning ? "warning" : "violation") << " [subject " << i.subject_id;
        if (i.visit >= 0) os << ", visit " << i.visit;
        os << "]: " << i.message << "\n";
    }
    return os.str();
}

// ---------------------------------------------------------------------------
// CSV loading
// ---------------------------------------------------------------------------

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : line) {
        if (c == ',') {
            out.push_back(cur);
            cur.clear();
        } else if (c != '\r') {
            cur += c;
        }
    }
    out.push_back(cur);
    return out;
}

int parse_int(const std::string& s, int line_no, const std::string& what) {
    try {
        std::size_t pos = 0;
        int v = std::stoi(s, &pos);
        if (pos != s.size()) throw std::invalid_argument(s);
        return v;
    } catch (const std::exception&) {
        throw DataError("line " + std::to_string(line_no) + ": malformed " + what +
                        " value '" + s + "'");
    }
}

double parse_double(const std::string& s, int line_no, const std::string& what) {
    try {
        std::size_t pos = 0;
        double v = std::stod(s, &pos);
        if (pos != s.size()) throw std::invalid_argument(s);
        return v;
    } catch (const std::exception&) {
        throw DataError("line " + std::to_string(line_no) + ": malformed " + what +
                        " value '" + s + "'");
    }
}

} // namespace

LongitudinalDataset load_dataset(const std::string& path, const CovariateSchema& schema) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open dataset file: " + path);

    std::string line;
    if (!std::getline(in, line)) throw DataError("empty dataset file: " + path);
    auto header = split_csv_line(line);
    const std::vector<std::string> fixed = {"subject_id", "visit",     "arm", "treatment",
                                            "outcome",    "competing", "ltfu"};
    if (header.size() < fixed.size())
        throw DataError("header does not match column contract");
    for (std::size_t i = 0; i < fixed.size(); ++i)
        if (header[i] != fixed[i])
            throw DataError("header column " + std::to_string(i + 1) + " is '" + header[i] +
                            "', expected '" + fixed[i] + "'");

    // map schema covariates onto header columns by name
    std::vector<int> cov_col(schema.size(), -1);
    for (std::size_t c = fixed.size(); c < header.size(); ++c) {
        int idx = schema.index_or(header[c]);
        if (idx < 0) throw DataError("covariate column '" + header[c] + "' not in schema");
        cov_col[idx] = static_cast<int>(c);
    }
    for (std::size_t i = 0; i < schema.size(); ++i)
        if (cov_col[i] < 0)
            throw DataError("schema covariate '" + schema.defs[i].name + "' missing from header");

    LongitudinalDataset ds;
    ds.schema = schema;
    std::map<std::string, std::size_t> subject_index;

    int line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        auto cells = split_csv_line(line);
        if (cells.size() != header.size())
            throw DataError("line " + std::to_string(line_no) + ": expected " +
                            std::to_string(header.size()) + " cells, got " +
                            std::to_string(cells.size()));

        VisitRecord rec;
        const std::string& sid = cells[0];
        rec.visit = parse_int(cells[1], line_no, "visit");
        int arm = parse_int(cells[2], line_no, "arm");
        if (!cells[3].empty()) {
            rec.treatment = parse_int(cells[3], line_no, "treatment");
        } else {
            rec.adherence_measured = false;
        }
        rec.outcome = parse_int(cells[4], line_no, "outcome");
        rec.competing = parse_int(cells[5], line_no, "competing");
        rec.ltfu = parse_int(cells[6], line_no, "ltfu");

        rec.covariates.resize(schema.size());
        for (std::size_t i = 0; i < schema.size(); ++i) {
            const std::string& cell = cells[cov_col[i]];
            if (!cell.empty())
                rec.covariates[i] = parse_double(cell, line_no, schema.defs[i].name);
        }

        auto it = subject_index.find(sid);
        if (it == subject_index.end()) {
            subject_index[sid] = ds.subjects.size();
            SubjectHistory sh;
            sh.id = sid;
            sh.arm = arm;
            sh.visits.push_back(rec);
            ds.subjects.push_back(std::move(sh));
        } else {
            SubjectHistory& sh = ds.subjects[it->second];
            if (arm != sh.arm)
                throw DataError("line " + std::to_string(line_no) + ": subject " + sid +
                                " changes arm");
            const VisitRecord& prev = sh.visits.back();
            if (rec.visit == prev.visit)
                throw DataError("line " + std::to_string(line_no) + ": duplicate (subject " +
                                sid + ", visit " + std::to_string(rec.visit) + ")");
            if (prev.outcome || prev.competing || prev.ltfu)
                throw DataError("line " + std::to_string(line_no) + ": subject " + sid +
                                " has records after terminal event");
            if (rec.visit != prev.visit + 1)
                throw DataError("line " + std::to_string(line_no) + ": subject " + sid +
                                " visits not contiguous (" + std::to_string(prev.visit) +
                                " -> " + std::to_string(rec.visit) + ")");
            sh.visits.push_back(rec);
        }
    }

    if (ds.subjects.empty()) throw DataError("dataset has no records: " + path);

    for (const auto& s : ds.subjects) {
        if (s.visits.front().visit != 0)
            throw DataError("subject " + s.id + " has no visit 0");
        for (std::size_t i = 0; i < schema.size(); ++i)
            if (!s.visits.front().covariates[i].has_value() && schema.defs[i].baseline)
                throw DataError("subject " + s.id + ": missing baseline covariate " +
                                schema.defs[i].name);
        ds.horizon = std::max(ds.horizon, s.visits.back().visit);
    }
    return ds;
}

void save_dataset_csv(const LongitudinalDataset& ds, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write dataset file: " + path);
    out << "subject_id,visit,arm,treatment,outcome,competing,ltfu";
    for (const auto& d : ds.schema.defs) out << ',' << d.name;
    out << '\n';
    std::ostringstream os;
    os.precision(17);
    for (const auto& s : ds.subjects) {
        for (const auto& v : s.visits) {
            os.str("");
            os << s.id << ',' << v.visit << ',' << s.arm << ',';
            if (v.treatment) os << *v.treatment;
            os << ',' << v.outcome << ',' << v.competing << ',' << v.ltfu;
            for (const auto& c : v.covariates) {
                os << ',';
                if (c) os << *c;
            }
            out << os.str() << '\n';
        }
    }
}

// ---------------------------------------------------------------------------
// Validation
// ---------------------------------------------------------------------------

ValidationReport validate_dataset(const LongitudinalDataset& ds) {
    ValidationReport rep;
    auto add = [&](const std::string& sid, int visit, bool warn, const std::string& msg) {
        rep.issues.push_back({sid, visit, warn, msg});
    };

    std::vector<bool> cov_seen(ds.schema.size(), false);
    for (const auto& s : ds.subjects) {
        int expected = 0;
        bool terminal_seen = false;
        for (const auto& v : s.visits) {
            if (v.visit != expected)
                add(s.id, v.visit, false, "visit indices not contiguous from 0");
            expected = v.visit + 1;
            if (terminal_seen)
                add(s.id, v.visit, false, "records after terminal event");
            if (v.outcome && v.competing)
                add(s.id, v.visit, false,
                    "first-event convention violated: outcome and competing event both set");
            int flags = (v.outcome ? 1 : 0) + (v.competing ? 1 : 0) + (v.ltfu ? 1 : 0);
            if (flags > 1 && !(v.outcome && v.competing))
                add(s.id, v.visit, false, "multiple terminal indicators set");
            if (flags > 0) terminal_seen = true;
            for (std::size_t i = 0; i < ds.schema.size(); ++i)
                if (v.covariates.size() > i && v.covariates[i].has_value()) cov_seen[i] = true;
        }
        for (std::size_t i = 0; i < ds.schema.size(); ++i)
            if (ds.schema.defs[i].baseline && (s.visits.front().covariates.size() <= i ||
                                               !s.visits.front().covariates[i].has_value()))
                add(s.id, 0, false, "missing baseline covariate " + ds.schema.defs[i].name);
    }
    for (std::size_t i = 0; i < ds.schema.size(); ++i)
        if (!ds.schema.defs[i].baseline && !cov_seen[i])
            add("*", -1, true,
                "adherence predictors unmeasured: time-varying covariate " +
                    ds.schema.defs[i].name + " absent from every visit");
    return rep;
}

// ---------------------------------------------------------------------------
// Predicates & protocols
// ---------------------------------------------------------------------------

bool Predicate::eval(double x) const {
    switch (op) {
        case PredicateOp::GT: return x > value;
        case PredicateOp::GE: return x >= value;
        case PredicateOp::LT: return x < value;
        case PredicateOp::LE: return x <= value;
        case PredicateOp::EQ: return x == value;
        case PredicateOp::NE: return x != value;
    }
    return false;
}

namespace {

PredicateOp parse_op(const std::string& s) {
    if (s == ">") return PredicateOp::GT;
    if (s == ">=") return PredicateOp::GE;
    if (s == "<") return PredicateOp::LT;
    if (s == "<=") return PredicateOp::LE;
    if (s == "==") return PredicateOp::EQ;
    if (s == "!=") return PredicateOp::NE;
    throw ConfigError("unknown predicate operator: " + s);
}

Predicate parse_predicate(const json& j) {
    Predicate p;
    p.covariate = j.at("covariate").get<std::string>();
    p.op = parse_op(j.at("op").get<std::string>());
    p.value = j.at("value").get<double>();
    return p;
}

} // namespace

StrategyProtocol parse_protocol_json(const std::string& text) {
    json j = json::parse(text);
    StrategyProtocol p;
    p.label = j.at("label").get<std::string>();
    if (j.contains("assigned_value_arm0")) p.assigned_value_arm0 = j["assigned_value_arm0"];
    if (j.contains("assigned_value_arm1")) p.assigned_value_arm1 = j["assigned_value_arm1"];
    if (j.contains("grace")) p.grace = j["grace"];
    if (p.grace < 0) throw ConfigError("grace period must be >= 0");
    if (j.contains("dynamic")) {
        DynamicRule r;
        r.trigger = parse_predicate(j["dynamic"].at("trigger"));
        r.required_value = j["dynamic"].value("required_value", 1);
        r.grace = j["dynamic"].value("grace", 0);
        if (r.grace < 0) throw ConfigError("grace period must be >= 0");
        p.dynamic = r;
    }
    if (j.contains("excused"))
        for (const auto& e : j["excused"]) p.excused.push_back(parse_predicate(e));
    if (j.contains("allow_clinician_discretion")) {
        p.allow_clinician_discretion = j["allow_clinician_discretion"];
        if (p.allow_clinician_discretion)
            p.discretion_covariate = j.at("discretion_covariate").get<std::string>();
    }
    return p;
}

StrategyProtocol load_protocol(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open protocol file: " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_protocol_json(ss.str());
}

// ---------------------------------------------------------------------------
// Adherence evaluation
// ---------------------------------------------------------------------------

namespace {

void check_predicate_resolves(const Predicate& p, const CovariateSchema& schema) {
    if (!schema.has(p.covariate))
        throw ConfigError("protocol predicate references missing covariate column: " +
                          p.covariate);
}

// covariate value at a visit, carried forward from the last observed value
std::optional<double> covariate_at(const SubjectHistory& s, int cov_idx, int visit) {
    for (int k = visit; k >= 0; --k) {
        if (k < static_cast<int>(s.visits.size()) &&
            s.visits[k].covariates[cov_idx].has_value())
            return s.visits[k].covariates[cov_idx];
    }
    return std::nullopt;
}

} // namespace

AdherenceTrace evaluate_adherence(const LongitudinalDataset& ds,
                                  const StrategyProtocol& protocol) {
    for (const auto& p : protocol.excused) check_predicate_resolves(p, ds.schema);
    if (protocol.dynamic) check_predicate_resolves(protocol.dynamic->trigger, ds.schema);
    int discretion_idx = -1;
    if (protocol.allow_clinician_discretion)
        discretion_idx = ds.schema.index(protocol.discretion_covariate);

    AdherenceTrace trace;
    trace.per_subject.resize(ds.subjects.size());

    for (std::size_t si = 0; si < ds.subjects.size(); ++si) {
        const SubjectHistory& s = ds.subjects[si];
        SubjectAdherence& adh = trace.per_subject[si];

        const bool dynamic = protocol.dynamic.has_value() && s.arm == 1;
        const int required = dynamic ? protocol.dynamic->required_value
                                     : protocol.required_value(s.arm);
        const int grace = dynamic ? protocol.dynamic->grace : protocol.grace;
        // static rules trigger at visit 0; dynamic rules when the predicate first holds
        std::optional<int> trigger = dynamic ? std::nullopt : std::optional<int>(0);
        bool initiated = false;
        bool excused_absorbed = false;
        std::optional<int> deviation;

        for (const auto& v : s.visits) {
            const int k = v.visit;

            // excused conditions are absorbing once matched
            for (const auto& p : protocol.excused) {
                auto x = v.covariates[ds.schema.index(p.covariate)];
                if (x && p.eval(*x)) {
                    adh.excused_events.emplace_back(k, p.covariate);
                    excused_absorbed = true;
                }
            }
            if (discretion_idx >= 0) {
                auto x = v.covariates[discretion_idx];
                if (x && *x != 0.0) {
                    adh.excused_events.emplace_back(k, protocol.discretion_covariate);
                    excused_absorbed = true;
                }
            }
            if (deviation || excused_absorbed) continue;

            if (dynamic && !trigger) {
                auto x = covariate_at(s, ds.schema.index(protocol.dynamic->trigger.covariate), k);
                if (x && protocol.dynamic->trigger.eval(*x)) trigger = k;
            }

            if (!v.treatment) continue; // unmeasured: not assessable at this visit
            const int a = *v.treatment;

            // Grace semantics: with g = 0 the requirement is immediate (first
            // visit with A != required deviates); with g >= 1 initiation must
            // happen at some visit in [trigger, trigger+g] and the violation
            // is assigned at the first visit past that window.
            if (!initiated) {
                if (a == required) {
                    if (!trigger) {
                        deviation = k; // initiated before the rule triggered
                    } else if (grace == 0 || k <= *trigger + grace) {
                        initiated = true;
                    } else {
                        deviation = k; // initiated too late
                    }
                } else if (trigger &&
                           (grace == 0 ? k >= *trigger : k > *trigger + grace)) {
                    deviation = k; // requirement unmet with the window exhausted
                }
            } else if (a != required) {
                deviation = k;
            }
        }

        // a window that expires just past the last observed visit still counts:
        // the first visit past the window is where the violation is assigned,
        // but only if the subject was observed there
        adh.deviation_time = excused_absorbed ? std::nullopt : deviation;
    }
    return trace;
}

int strategy_treatment(const StrategyProtocol& protocol, int arm,
                       const std::function<double(const std::string&, int)>& covariate_value,
                       int k, const std::vector<int>& prior) {
    const bool dynamic = protocol.dynamic.has_value() && arm == 1;
    if (!dynamic) return protocol.required_value(arm);

    const int required = protocol.dynamic->required_value;
    for (int a : prior)
        if (a == required) return required; // already initiated: stay on
    for (int j = 0; j <= k; ++j)
        if (protocol.dynamic->trigger.eval(covariate_value(protocol.dynamic->trigger.covariate, j)))
            return required; // earliest-compliant: initiate at the trigger visit
    return 1 - required;
}

// ---------------------------------------------------------------------------
// Missing-adherence policies
// ---------------------------------------------------------------------------

LongitudinalDataset apply_missing_adherence_policy(const LongitudinalDataset& ds,
                                                   const MissingAdherencePolicy& policy,
                                                   const StrategyProtocol* protocol) {
    using Kind = MissingAdherencePolicy::Kind;
    if (policy.kind == Kind::CarryForwardCensorAfter && policy.m < 1)
        throw ConfigError("carry-forward policy requires m >= 1");
    if (policy.kind == Kind::AssumeNonadherent && !protocol)
        throw ConfigError("assume-nonadherent policy requires a protocol");

    LongitudinalDataset out = ds;
    for (auto& s : out.subjects) {
        if (policy.kind == Kind::AssumeNonadherent) {
            const int non_protocol = 1 - protocol->required_value(s.arm);
            for (auto& v : s.visits)
                if (!v.treatment) v.treatment = non_protocol;
        } else if (policy.kind == Kind::CarryForwardCensorAfter) {
            std::optional<int> last_seen;
            int run = 0;
            for (auto& v : s.visits) {
                if (v.treatment) {
                    last_seen = *v.treatment;
                    run = 0;
                } else {
                    ++run;
                    if (!last_seen)
                        throw DataError("subject " + s.id +
                                        ": treatment missing at visit 0, nothing to carry forward");
                    if (run < policy.m) {
                        v.treatment = *last_seen;
                    } else if (run == policy.m) {
                        v.measurement_censored = true;
                        break;
                    }
                }
            }
        } else { // MeasurementWeighting: leave missing, flag first unmeasured visit
            for (auto& v : s.visits) {
                if (!v.treatment) {
                    v.measurement_censored = true;
                    break;
                }
            }
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Analysis views
// ---------------------------------------------------------------------------

std::size_t AnalysisView::at_risk_count() const {
    return static_cast<std::size_t>(
        std::count_if(rows.begin(), rows.end(), [](const PersonTimeRow& r) { return r.at_risk; }));
}

AnalysisView derive_analysis_view(const LongitudinalDataset& ds, const AdherenceTrace* trace,
                                  const ViewSpec& spec, const std::string& label) {
    if (spec.composite_outcome && spec.censor_at_competing)
        throw ConfigError(
            "composite_outcome and censor_at_competing are contradictory estimand choices");
    if (spec.censor_at_deviation && !trace)
        throw ConfigError("censor_at_deviation requires an adherence trace");

    AnalysisView view;
    view.estimand_label = label;
    view.horizon = ds.horizon;
    for (const auto& d : ds.schema.defs) {
        view.covariate_names.push_back(d.name);
        view.covariate_baseline.push_back(d.baseline);
    }
    view.n_subjects = static_cast<int>(ds.subjects.size());

    for (std::size_t si = 0; si < ds.subjects.size(); ++si) {
        const SubjectHistory& s = ds.subjects[si];
        std::optional<int> dev;
        if (spec.censor_at_deviation) dev = trace->per_subject[si].deviation_time;

        std::vector<double> carried(ds.schema.size(), 0.0);
        for (const auto& v : s.visits) {
            PersonTimeRow row;
            row.subject = static_cast<int>(si);
            row.visit = v.visit;
            row.arm = s.arm;
            row.treatment = v.treatment ? *v.treatment : -1;
            for (std::size_t i = 0; i < ds.schema.size(); ++i)
                if (v.covariates[i]) carried[i] = *v.covariates[i];
            row.covariates = carried;

            if (dev && v.visit == *dev) {
                row.at_risk = false;
                row.censor = CensorReason::Deviation;
                view.rows.push_back(row);
                break;
            }
            if (spec.censor_at_measurement && v.measurement_censored) {
                row.at_risk = false;
                row.censor = CensorReason::Measurement;
                view.rows.push_back(row);
                break;
            }
            if (v.ltfu) {
                row.at_risk = false;
                row.censor = CensorReason::Ltfu;
                view.has_ltfu = true;
                view.rows.push_back(row);
                break;
            }
            if (v.competing && spec.censor_at_competing) {
                row.at_risk = false;
                row.censor = CensorReason::Competing;
                view.rows.push_back(row);
                break;
            }

            row.at_risk = true;
            row.event = spec.composite_outcome ? (v.outcome || v.competing) : v.outcome;
            row.competing = spec.composite_outcome ? 0 : v.competing;
            view.rows.push_back(row);
        }
    }
    return view;
}

} // namespace pptrial
