#include "pptrial/sustained.hpp"
#include "pptrial/errors.hpp"
#include "pptrial/glm.hpp"
#include "pptrial/itt.hpp"
#include "pptrial/rng.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

namespace pptrial {

namespace {

int covariate_index(const AnalysisView& view, const std::string& name) {
    for (std::size_t i = 0; i < view.covariate_names.size(); ++i)
        if (view.covariate_names[i] == name) return static_cast<int>(i);
    throw ModelError("covariate not in view: " + name);
}

std::vector<std::string> baseline_names(const CovariateSchema& schema) {
    std::vector<std::string> out;
    for (const auto& d : schema.defs)
        if (d.baseline) out.push_back(d.name);
    return out;
}

// Stabilized cumulative probability-ratio weights over view rows.  `fit_row`
// marks rows contributing a modeled outcome; `response` and the designs are
// indexed over fit rows only.  Each subject's ratio accumulates through the
// current fit row and is carried onto non-fit rows.
// When `num_all` is given (indexed over all view rows, P(response = 1)),
// the stabilizing numerator multiplies on every row so it stays constant
// within arm-visit cells even where the denominator must skip a row.
std::vector<double> cumulative_ratio_weights(const AnalysisView& view,
                                             const std::vector<char>& fit_row,
                                             const Eigen::VectorXd& p_num,
                                             const Eigen::VectorXd& p_den,
                                             const Eigen::VectorXd& response,
                                             double floor, const char* floor_what,
                                             int* floor_violations,
                                             const Eigen::VectorXd* num_all = nullptr) {
    std::vector<double> w(view.rows.size(), 1.0);
    int last_subject = -1;
    double cum_num = 1.0, cum_den = 1.0;
    Eigen::Index j = 0;
    for (std::size_t i = 0; i < view.rows.size(); ++i) {
        if (view.rows[i].subject != last_subject) {
            last_subject = view.rows[i].subject;
            cum_num = cum_den = 1.0;
        }
        if (num_all && !fit_row[i]) cum_num *= (*num_all)[static_cast<Eigen::Index>(i)];
        if (fit_row[i]) {
            double pd = response[j] > 0.5 ? p_den[j] : 1.0 - p_den[j];
            double pn = num_all ? (*num_all)[static_cast<Eigen::Index>(i)] : p_num[j];
            if (pd < floor && view.rows[i].at_risk && floor_violations) ++(*floor_violations);
            cum_num *= response[j] > 0.5 ? pn : 1.0 - pn;
            cum_den *= pd;
            ++j;
        }
        w[i] = cum_num / cum_den;
        (void)floor_what;
    }
    return w;
}

DesignMatrix pooled_design(const AnalysisView& view, const design::RowRefs& rows,
                           const std::vector<std::string>& baseline,
                           const std::vector<std::string>& timevarying) {
    DesignMatrix d = DesignMatrix::with_intercept(static_cast<Eigen::Index>(rows.size()));
    design::add_time_dummies(d, rows, view.horizon);
    d.add_column("arm", design::arm_col(rows));
    for (const auto& c : baseline) d.add_column(c, design::covariate_col(view, rows, c));
    for (const auto& c : timevarying) d.add_column(c, design::covariate_col(view, rows, c));
    return d;
}

} // namespace

// ---------------------------------------------------------------------------
// Time-varying IPW
// ---------------------------------------------------------------------------

SustainedIpwResult pp_ipw_sustained(const LongitudinalDataset& ds,
                                    const StrategyProtocol& protocol,
                                    const SustainedIpwOptions& opts) {
    LongitudinalDataset work = ds;
    if (opts.missing_policy)
        work = apply_missing_adherence_policy(ds, *opts.missing_policy, &protocol);

    for (const auto& c : opts.timevarying_covariates) {
        int ci = work.schema.index(c);
        for (const auto& s : work.subjects)
            if (!s.visits.front().covariates[ci].has_value())
                throw ModelError("missing covariate history at a weight-model visit: subject " +
                                 s.id + " lacks " + c + " at visit 0");
    }

    AdherenceTrace trace = evaluate_adherence(work, protocol);
    ViewSpec vs;
    vs.censor_at_deviation = true;
    vs.censor_at_measurement = opts.missing_policy.has_value();
    AnalysisView view = derive_analysis_view(work, &trace, vs, "per-protocol (sustained, IPW)");

    const auto n_rows = view.rows.size();
    WeightSeries ws;
    ws.truncation_percentile = opts.truncation_percentile;
    ws.subject.reserve(n_rows);
    for (const auto& r : view.rows) {
        ws.subject.push_back(r.subject);
        ws.visit.push_back(r.visit);
    }
    ws.adherence.assign(n_rows, 1.0);
    ws.censoring.assign(n_rows, 1.0);
    ws.measurement.assign(n_rows, 1.0);

    const auto baseline = baseline_names(work.schema);
    EffectEstimate e;
    e.method = "time-varying ipw";
    e.estimand_label = view.estimand_label;
    e.covariates = opts.timevarying_covariates;
    e.assumptions = {"sequential exchangeability given measured history",
                     "positivity of adherence and censoring probabilities",
                     "correctly specified weight models", "consistency"};

    // adherence component: pooled logistic for the observed treatment given
    // history, among person-time not yet artificially censored
    bool full_adherence = true;
    {
        std::array<int, 2> first = {-1, -1};
        for (const auto& r : view.rows)
            if (r.treatment >= 0) {
                int arm = r.arm == 1 ? 1 : 0;
                if (first[arm] < 0) first[arm] = r.treatment;
                full_adherence = full_adherence && r.treatment == first[arm];
            }
    }
    if (!opts.timevarying_covariates.empty() && full_adherence) {
        // observed treatment is deterministic given arm, so every adherence
        // probability is 1 and the weight model would be separable
        e.assumptions.push_back("adherence fully determined by assignment; unit weights");
    }
    if (!opts.timevarying_covariates.empty() && !full_adherence) {
        std::vector<char> fit_row(n_rows, 0);
        design::RowRefs rows;
        for (std::size_t i = 0; i < n_rows; ++i)
            if (view.rows[i].treatment >= 0) {
                fit_row[i] = 1;
                rows.push_back(&view.rows[i]);
            }
        Eigen::VectorXd a(rows.size());
        for (std::size_t i = 0; i < rows.size(); ++i) a[i] = rows[i]->treatment;

        DesignMatrix den = pooled_design(view, rows, baseline, opts.timevarying_covariates);
        DesignMatrix num = pooled_design(view, rows, baseline, {});
        Eigen::VectorXd p_den = predict(fit_glm(den, a, Link::Logit), den);
        Eigen::VectorXd p_num = predict(fit_glm(num, a, Link::Logit), num);

        int violations = 0;
        ws.adherence = cumulative_ratio_weights(view, fit_row, p_num, p_den, a,
                                                opts.positivity_floor, "adherence", &violations);
        if (violations > 0) {
            std::ostringstream os;
            os << "positivity violation: estimated adherence probability below "
               << opts.positivity_floor << " at " << violations << " uncensored subject-visits";
            throw PositivityError(os.str());
        }
    }

    // IPCW component for loss to follow-up; events are drawn before censoring
    // within an interval, so event person-time cannot be censored and stays
    // out of the model (and contributes no weight factor)
    if (view.has_ltfu) {
        std::vector<char> fit_row(n_rows, 0);
        design::RowRefs rows;
        for (std::size_t i = 0; i < n_rows; ++i)
            if (!view.rows[i].event && !view.rows[i].competing) {
                fit_row[i] = 1;
                rows.push_back(&view.rows[i]);
            }
        Eigen::VectorXd uncensored(rows.size());
        for (std::size_t i = 0; i < rows.size(); ++i)
            uncensored[i] = rows[i]->censor == CensorReason::Ltfu ? 0.0 : 1.0;
        DesignMatrix den = pooled_design(view, rows, baseline, opts.timevarying_covariates);
        DesignMatrix num = pooled_design(view, rows, {}, {});
        Eigen::VectorXd p_den = predict(fit_glm(den, uncensored, Link::Logit), den);
        FittedModel num_fit = fit_glm(num, uncensored, Link::Logit);
        DesignMatrix num_all_d = pooled_design(view, design::all_rows(view), {}, {});
        Eigen::VectorXd num_all = predict(num_fit, num_all_d);
        Eigen::VectorXd p_num = predict(num_fit, num);
        ws.censoring = cumulative_ratio_weights(view, fit_row, p_num, p_den, uncensored,
                                                0.0, "censoring", nullptr, &num_all);

        // weighting should leave loss to follow-up independent of the
        // time-varying history; a residual standardized difference in any
        // time-varying covariate between lost and retained person-time
        // exposes a misspecified censoring model
        for (std::size_t c = 0; c < view.covariate_names.size(); ++c) {
            if (view.covariate_baseline[c]) continue;
            double wsum[2] = {0.0, 0.0}, wx[2] = {0.0, 0.0};
            double sum = 0.0, sumsq = 0.0, n = 0.0;
            for (std::size_t i = 0; i < n_rows; ++i) {
                if (!fit_row[i]) continue;
                double x = view.rows[i].covariates[c];
                int g = view.rows[i].censor == CensorReason::Ltfu ? 1 : 0;
                wsum[g] += ws.censoring[i];
                wx[g] += ws.censoring[i] * x;
                sum += x;
                sumsq += x * x;
                n += 1.0;
            }
            if (wsum[0] <= 0.0 || wsum[1] <= 0.0 || n < 2.0) continue;
            double sd = std::sqrt(std::max(0.0, sumsq / n - (sum / n) * (sum / n)));
            if (sd < 1e-12) continue;
            ws.censoring_balance = std::max(
                ws.censoring_balance, std::abs(wx[1] / wsum[1] - wx[0] / wsum[0]) / sd);
        }
    }

    // measurement component: inverse probability of adherence ascertainment
    if (opts.missing_policy &&
        opts.missing_policy->kind == MissingAdherencePolicy::Kind::MeasurementWeighting) {
        std::vector<char> fit_row(n_rows, 1);
        auto rows = design::all_rows(view);
        Eigen::VectorXd measured(rows.size());
        for (std::size_t i = 0; i < rows.size(); ++i)
            measured[i] = rows[i]->censor == CensorReason::Measurement ? 0.0 : 1.0;
        DesignMatrix den = pooled_design(view, rows, baseline, opts.timevarying_covariates);
        DesignMatrix num = pooled_design(view, rows, {}, {});
        Eigen::VectorXd p_den = predict(fit_glm(den, measured, Link::Logit), den);
        Eigen::VectorXd p_num = predict(fit_glm(num, measured, Link::Logit), num);
        int violations = 0;
        ws.measurement = cumulative_ratio_weights(view, fit_row, p_num, p_den, measured,
                                                  opts.positivity_floor, "measurement",
                                                  &violations);
        if (violations > 0)
            throw PositivityError("measurement probability below floor at " +
                                  std::to_string(violations) + " subject-visits");
    }

    ws.combined.resize(n_rows);
    for (std::size_t i = 0; i < n_rows; ++i)
        ws.combined[i] = ws.adherence[i] * ws.censoring[i] * ws.measurement[i];
    ws.analysis = ws.combined;
    ws.truncated_count = truncate_weights(ws.analysis, opts.truncation_percentile);
    e.truncation_percentile = opts.truncation_percentile;
    e.truncated_count = ws.truncated_count;
    if (!ws.combined.empty() &&
        *std::max_element(ws.combined.begin(), ws.combined.end()) > opts.weight_cap_warn)
        e.warnings.push_back("stabilized combined weight exceeds cap before truncation");

    e.risk0 = risk_from_hazards(arm_hazards(view, 0, ws.analysis));
    e.risk1 = risk_from_hazards(arm_hazards(view, 1, ws.analysis));
    e.finalize();
    return {std::move(e), std::move(ws)};
}

EffectEstimate pp_baseline_only_regression(const LongitudinalDataset& ds,
                                           const StrategyProtocol& protocol,
                                           const std::vector<std::string>& covariates) {
    AdherenceTrace trace = evaluate_adherence(ds, protocol);
    ViewSpec vs;
    vs.censor_at_deviation = true;
    AnalysisView view =
        derive_analysis_view(ds, &trace, vs, "per-protocol (baseline-only regression)");
    EffectEstimate e = itt_standardized(view, covariates);
    e.estimand_label = "per-protocol (baseline-only regression)";
    e.method = "outcome regression (baseline covariates only)";
    e.bias_label =
        "baseline-only adjustment cannot remove time-varying confounding affected by "
        "prior treatment";
    return e;
}

// ---------------------------------------------------------------------------
// Parametric g-formula
// ---------------------------------------------------------------------------

namespace {

// Shared row context for fitting structural models on observed person-time
// and evaluating them on simulated histories.
struct SimCtx {
    int visit = 0;
    int arm = 0;
    const std::vector<double>* baseline = nullptr; // schema-indexed
    const std::vector<double>* cur_tv = nullptr;   // tv-list-indexed
    const std::vector<double>* lag_tv = nullptr;   // tv-list-indexed
    double lag_a = 0.0, cur_a = 0.0;
};

using Term = std::function<double(const SimCtx&)>;

struct GfModel {
    std::vector<std::string> labels; // excluding intercept
    std::vector<Term> terms;
    FittedModel fitted;
    Link link = Link::Logit;
    double resid_sd = 0.0;
    double support_lo = 0.0, support_hi = 1.0;

    double mean(const SimCtx& c) const {
        double eta = fitted.coefficients[0];
        for (std::size_t i = 0; i < terms.size(); ++i)
            eta += fitted.coefficients[static_cast<Eigen::Index>(i) + 1] * terms[i](c);
        return link == Link::Logit ? expit(eta) : eta;
    }
};

void add_term(GfModel& m, const std::string& label, Term t) {
    m.labels.push_back(label);
    m.terms.push_back(std::move(t));
}

void add_shared_terms(GfModel& m, int horizon, const std::vector<std::string>& baseline,
                      const std::vector<int>& baseline_idx) {
    for (int k = 1; k <= horizon; ++k)
        add_term(m, "t" + std::to_string(k),
                 [k](const SimCtx& c) { return c.visit == k ? 1.0 : 0.0; });
    for (std::size_t i = 0; i < baseline.size(); ++i) {
        int bi = baseline_idx[i];
        add_term(m, baseline[i], [bi](const SimCtx& c) { return (*c.baseline)[bi]; });
    }
}

void fit_model(GfModel& m, const std::vector<SimCtx>& ctx, const std::vector<char>& use,
               const std::vector<double>& response, const std::string& what) {
    Eigen::Index n = 0;
    for (char u : use) n += u ? 1 : 0;
    if (n == 0) throw ModelError("no person-time to fit " + what);
    DesignMatrix d = DesignMatrix::with_intercept(n);
    for (std::size_t t = 0; t < m.terms.size(); ++t) {
        Eigen::VectorXd col(n);
        Eigen::Index j = 0;
        for (std::size_t i = 0; i < ctx.size(); ++i)
            if (use[i]) col[j++] = m.terms[t](ctx[i]);
        d.add_column(m.labels[t], col);
    }
    Eigen::VectorXd y(n);
    {
        Eigen::Index j = 0;
        for (std::size_t i = 0; i < ctx.size(); ++i)
            if (use[i]) y[j++] = response[i];
    }
    try {
        m.fitted = fit_glm(d, y, m.link);
    } catch (const ModelError& err) {
        throw ModelError(what + " model failed: " + err.what());
    }
    if (m.link == Link::Identity) {
        double dof = std::max<double>(1.0, static_cast<double>(n) - static_cast<double>(d.p()));
        m.resid_sd = std::sqrt(m.fitted.deviance / dof);
        m.support_lo = y.minCoeff();
        m.support_hi = y.maxCoeff();
    }
}

} // namespace

GFormulaResult parametric_gformula(const LongitudinalDataset& ds, const GFormulaSpec& spec) {
    if (spec.n_mc < 1000) throw ConfigError("g-formula requires n_mc >= 1000");
    AnalysisView view = derive_analysis_view(ds, nullptr, ViewSpec{}, "per-protocol (g-formula)");
    const int H = view.horizon;

    const auto baseline = baseline_names(ds.schema);
    std::vector<int> baseline_idx;
    for (const auto& b : baseline) baseline_idx.push_back(ds.schema.index(b));
    const auto& tv = spec.timevarying_covariates;
    std::vector<int> tv_idx;
    for (const auto& c : tv) tv_idx.push_back(covariate_index(view, c));

    // contexts for every observed person-time row
    std::vector<SimCtx> ctx(view.rows.size());
    // models involving current or lagged treatment fit only where those values
    // were actually measured; selection on model covariates leaves the
    // conditional fits unbiased
    std::vector<char> cur_a_known(view.rows.size(), 1), lag_a_known(view.rows.size(), 1);
    std::vector<std::vector<double>> base_vals, cur_vals, lag_vals;
    base_vals.reserve(view.rows.size());
    cur_vals.reserve(view.rows.size());
    lag_vals.reserve(view.rows.size());
    {
        std::map<int, std::vector<double>> subject_baseline;
        int last_subject = -1;
        std::vector<double> prev_tv(tv.size(), 0.0);
        double prev_a = 0.0;
        char prev_known = 1;
        for (std::size_t i = 0; i < view.rows.size(); ++i) {
            const auto& r = view.rows[i];
            if (r.subject != last_subject) {
                last_subject = r.subject;
                prev_tv.assign(tv.size(), 0.0);
                prev_a = 0.0;
                prev_known = 1; // no treatment precedes the first visit
                std::vector<double> bv(ds.schema.size(), 0.0);
                for (std::size_t b = 0; b < ds.schema.size(); ++b) bv[b] = r.covariates[b];
                subject_baseline[r.subject] = std::move(bv);
            }
            std::vector<double> cur(tv.size());
            for (std::size_t t = 0; t < tv.size(); ++t) cur[t] = r.covariates[tv_idx[t]];
            base_vals.push_back(subject_baseline[r.subject]);
            cur_vals.push_back(cur);
            lag_vals.push_back(prev_tv);
            ctx[i].visit = r.visit;
            ctx[i].arm = r.arm;
            ctx[i].lag_a = prev_a;
            ctx[i].cur_a = r.treatment > 0 ? 1.0 : 0.0;
            cur_a_known[i] = r.treatment >= 0;
            lag_a_known[i] = prev_known;
            prev_tv = cur;
            prev_a = ctx[i].cur_a;
            prev_known = cur_a_known[i];
        }
        for (std::size_t i = 0; i < view.rows.size(); ++i) {
            ctx[i].baseline = &base_vals[i];
            ctx[i].cur_tv = &cur_vals[i];
            ctx[i].lag_tv = &lag_vals[i];
        }
    }

    // covariate models in declared order: L_j(k) | baseline, lagged tv, lagged
    // A, time, earlier-listed covariates at k
    std::vector<GfModel> cov_models(tv.size());
    for (std::size_t j = 0; j < tv.size(); ++j) {
        GfModel& m = cov_models[j];
        m.link = ds.schema.defs[static_cast<std::size_t>(ds.schema.index(tv[j]))].kind ==
                         CovariateKind::Binary
                     ? Link::Logit
                     : Link::Identity;
        add_shared_terms(m, H, baseline, baseline_idx);
        for (std::size_t t = 0; t < tv.size(); ++t)
            add_term(m, "lag:" + tv[t], [t](const SimCtx& c) { return (*c.lag_tv)[t]; });
        add_term(m, "lag:A", [](const SimCtx& c) { return c.lag_a; });
        for (std::size_t t = 0; t < j; ++t)
            add_term(m, "cur:" + tv[t], [t](const SimCtx& c) { return (*c.cur_tv)[t]; });
        std::vector<double> resp(view.rows.size());
        for (std::size_t i = 0; i < view.rows.size(); ++i) resp[i] = cur_vals[i][j];
        fit_model(m, ctx, lag_a_known, resp, "covariate " + tv[j]);
    }

    // outcome hazard: Y_k | baseline, current tv, current A, time
    std::vector<char> at_risk_use(view.rows.size(), 0);
    for (std::size_t i = 0; i < view.rows.size(); ++i)
        at_risk_use[i] = view.rows[i].at_risk && cur_a_known[i];
    auto make_hazard_terms = [&](GfModel& m) {
        add_shared_terms(m, H, baseline, baseline_idx);
        for (std::size_t t = 0; t < tv.size(); ++t)
            add_term(m, "cur:" + tv[t], [t](const SimCtx& c) { return (*c.cur_tv)[t]; });
        add_term(m, "cur:A", [](const SimCtx& c) { return c.cur_a; });
    };
    GfModel outcome_model;
    make_hazard_terms(outcome_model);
    {
        std::vector<double> resp(view.rows.size(), 0.0);
        for (std::size_t i = 0; i < view.rows.size(); ++i) resp[i] = view.rows[i].event;
        fit_model(outcome_model, ctx, at_risk_use, resp, "outcome");
    }

    bool any_competing = false;
    for (const auto& r : view.rows) any_competing = any_competing || r.competing;
    std::optional<GfModel> competing_model;
    if (spec.include_competing && any_competing) {
        competing_model.emplace();
        make_hazard_terms(*competing_model);
        std::vector<double> resp(view.rows.size(), 0.0);
        for (std::size_t i = 0; i < view.rows.size(); ++i) resp[i] = view.rows[i].competing;
        fit_model(*competing_model, ctx, at_risk_use, resp, "competing");
    }

    // natural-course extras: treatment and censoring models
    std::optional<GfModel> treat_model, censor_model;
    std::optional<std::array<double, 2>> det_treat; // deterministic A given arm
    if (spec.natural_course) {
        std::array<int, 2> first = {-1, -1};
        bool deterministic = true;
        for (const auto& r : view.rows)
            if (r.treatment >= 0) {
                int arm = r.arm == 1 ? 1 : 0;
                if (first[arm] < 0) first[arm] = r.treatment;
                deterministic = deterministic && r.treatment == first[arm];
            }
        if (deterministic) // a logistic fit would be separable on the arm column
            det_treat = {static_cast<double>(std::max(0, first[0])),
                         static_cast<double>(std::max(0, first[1]))};
    }
    if (spec.natural_course && !det_treat) {
        treat_model.emplace();
        add_shared_terms(*treat_model, H, baseline, baseline_idx);
        treat_model->labels.push_back("arm");
        treat_model->terms.push_back(
            [](const SimCtx& c) { return static_cast<double>(c.arm); });
        for (std::size_t t = 0; t < tv.size(); ++t)
            add_term(*treat_model, "cur:" + tv[t],
                     [t](const SimCtx& c) { return (*c.cur_tv)[t]; });
        add_term(*treat_model, "lag:A", [](const SimCtx& c) { return c.lag_a; });
        std::vector<char> use(view.rows.size(), 0);
        std::vector<double> resp(view.rows.size(), 0.0);
        for (std::size_t i = 0; i < view.rows.size(); ++i) {
            use[i] = view.rows[i].treatment >= 0 && lag_a_known[i];
            resp[i] = view.rows[i].treatment > 0 ? 1.0 : 0.0;
        }
        fit_model(*treat_model, ctx, use, resp, "treatment (natural course)");
    }
    if (spec.natural_course && view.has_ltfu) {
        censor_model.emplace();
        add_shared_terms(*censor_model, H, baseline, baseline_idx);
        censor_model->labels.push_back("arm");
        censor_model->terms.push_back(
            [](const SimCtx& c) { return static_cast<double>(c.arm); });
        for (std::size_t t = 0; t < tv.size(); ++t)
            add_term(*censor_model, "cur:" + tv[t],
                     [t](const SimCtx& c) { return (*c.cur_tv)[t]; });
        if (!det_treat) // otherwise cur:A is collinear with the arm column
            add_term(*censor_model, "cur:A", [](const SimCtx& c) { return c.cur_a; });
        // events precede censoring within an interval: event person-time
        // cannot be censored and stays out of the censoring model
        std::vector<char> use2(view.rows.size(), 0);
        std::vector<double> resp2(view.rows.size(), 0.0);
        for (std::size_t i = 0; i < view.rows.size(); ++i) {
            use2[i] = !view.rows[i].event && !view.rows[i].competing &&
                      (det_treat.has_value() || cur_a_known[i]);
            resp2[i] = view.rows[i].censor == CensorReason::Ltfu ? 1.0 : 0.0;
        }
        fit_model(*censor_model, ctx, use2, resp2, "censoring (natural course)");
    }

    // baseline resampling pool: (arm, baseline covariates) per subject
    struct BaselineRow {
        int arm;
        std::vector<double> covs; // schema-indexed
    };
    std::vector<BaselineRow> pool;
    {
        int last_subject = -1;
        for (const auto& r : view.rows)
            if (r.subject != last_subject) {
                last_subject = r.subject;
                pool.push_back({r.arm, r.covariates});
            }
    }

    GFormulaResult out;
    const auto n_pool = static_cast<std::uint64_t>(pool.size());

    // one forward pass of the structural models under either a forced
    // strategy (natural=false) or the fitted treatment/censoring models
    auto simulate = [&](CounterRng& rng, int forced_arm, bool natural,
                        std::vector<double>& risk_acc,
                        std::vector<std::vector<double>>* nc_sum,
                        std::vector<std::vector<double>>* nc_sumsq,
                        std::vector<std::vector<double>>* nc_w) {
        const BaselineRow& b = pool[static_cast<std::size_t>(rng.next_below(n_pool))];
        const int arm = natural ? b.arm : forced_arm;
        std::vector<std::vector<double>> sim_tv(tv.size(), std::vector<double>(H + 1, 0.0));
        std::vector<int> a_hist;
        std::vector<double> cur(tv.size(), 0.0), lag(tv.size(), 0.0);
        SimCtx c;
        c.arm = arm;
        c.baseline = &b.covs;
        c.cur_tv = &cur;
        c.lag_tv = &lag;
        auto lookup = [&](const std::string& name, int visit) -> double {
            for (std::size_t t = 0; t < tv.size(); ++t)
                if (tv[t] == name) return sim_tv[t][visit];
            int bi = ds.schema.index_or(name);
            if (bi >= 0 && ds.schema.defs[static_cast<std::size_t>(bi)].baseline)
                return b.covs[static_cast<std::size_t>(bi)];
            throw ConfigError("strategy references covariate absent from the structural model: " +
                              name);
        };
        double surv = 1.0;      // event/competing survival (risk accumulation)
        double in_follow = 1.0; // additionally discounts censoring (natural course)
        for (int k = 0; k <= H; ++k) {
            c.visit = k;
            c.lag_a = a_hist.empty() ? 0.0 : a_hist.back();
            for (std::size_t j = 0; j < tv.size(); ++j) {
                double mean = cov_models[j].mean(c);
                double val;
                if (cov_models[j].link == Link::Logit) {
                    val = rng.bernoulli(mean) ? 1.0 : 0.0;
                } else {
                    val = mean + cov_models[j].resid_sd * rng.next_normal();
                    if (val < cov_models[j].support_lo || val > cov_models[j].support_hi) {
                        ++out.out_of_support;
                        val = std::clamp(val, cov_models[j].support_lo,
                                         cov_models[j].support_hi);
                    }
                }
                cur[j] = val;
                sim_tv[j][k] = val;
            }
            int a;
            if (natural) {
                a = det_treat ? static_cast<int>((*det_treat)[arm == 1 ? 1 : 0])
                              : (rng.bernoulli(treat_model->mean(c)) ? 1 : 0);
            } else {
                a = strategy_treatment(spec.protocol, arm, lookup, k, a_hist);
            }
            c.cur_a = a;
            if (nc_sum) {
                for (std::size_t j = 0; j < tv.size(); ++j) {
                    (*nc_sum)[j][k] += in_follow * cur[j];
                    (*nc_sumsq)[j][k] += in_follow * cur[j] * cur[j];
                    (*nc_w)[j][k] += in_follow;
                }
            }
            double hy = outcome_model.mean(c);
            double hd = competing_model ? competing_model->mean(c) : 0.0;
            risk_acc[static_cast<std::size_t>(k)] += hy * surv;
            surv *= (1.0 - hy - hd);
            if (natural) {
                // in-follow-up at k+1 needs event-freedom and uncensoredness
                // through interval k; censoring compounds multiplicatively
                double hc = censor_model ? censor_model->mean(c) : 0.0;
                in_follow *= (1.0 - hy - hd) * (1.0 - hc);
            }
            a_hist.push_back(a);
            lag = cur;
        }
    };

    // strategy runs: the protocol's arm-0 and arm-1 rules; accumulate hazard
    // increments across replicates and cumulate once
    std::vector<std::vector<double>> strat_risk(2, std::vector<double>(H + 1, 0.0));
    for (int z = 0; z <= 1; ++z) {
        for (int r = 0; r < spec.n_mc; ++r) {
            CounterRng rng(spec.seed,
                           (static_cast<std::uint64_t>(z) << 32) | static_cast<std::uint64_t>(r));
            simulate(rng, z, false, strat_risk[static_cast<std::size_t>(z)], nullptr, nullptr,
                     nullptr);
        }
        double cum = 0.0;
        for (int k = 0; k <= H; ++k) {
            cum += strat_risk[static_cast<std::size_t>(z)][static_cast<std::size_t>(k)];
            strat_risk[static_cast<std::size_t>(z)][static_cast<std::size_t>(k)] = cum;
        }
    }

    out.estimate.method = "parametric g-formula";
    out.estimate.estimand_label = "per-protocol (g-formula): " + spec.protocol.label;
    out.estimate.covariates = tv;
    out.estimate.assumptions = {"correctly specified covariate and outcome models",
                                "sequential exchangeability given measured history",
                                "positivity", "consistency"};
    for (int k = 0; k <= H; ++k) {
        out.estimate.risk0.risk.push_back(strat_risk[0][static_cast<std::size_t>(k)] /
                                          spec.n_mc);
        out.estimate.risk1.risk.push_back(strat_risk[1][static_cast<std::size_t>(k)] /
                                          spec.n_mc);
    }
    out.estimate.finalize();

    // natural course
    if (spec.natural_course) {
        std::vector<std::vector<double>> nc_sum(tv.size(), std::vector<double>(H + 1, 0.0));
        std::vector<std::vector<double>> nc_sumsq = nc_sum, nc_w = nc_sum;
        std::vector<double> nat_acc(H + 1, 0.0);
        for (int r = 0; r < spec.n_mc; ++r) {
            CounterRng rng(spec.seed, (2ull << 32) | static_cast<std::uint64_t>(r));
            simulate(rng, 0, true, nat_acc, &nc_sum, &nc_sumsq, &nc_w);
        }
        double cum = 0.0;
        for (int k = 0; k <= H; ++k) {
            cum += nat_acc[static_cast<std::size_t>(k)] / spec.n_mc;
            out.natural_risk.risk.push_back(cum);
        }

        // observed covariate means among subjects with a record at each visit
        for (std::size_t j = 0; j < tv.size(); ++j) {
            std::vector<double> obs_sum(H + 1, 0.0), obs_n(H + 1, 0.0);
            for (const auto& r : view.rows) {
                obs_sum[static_cast<std::size_t>(r.visit)] += r.covariates[tv_idx[j]];
                obs_n[static_cast<std::size_t>(r.visit)] += 1.0;
            }
            for (int k = 0; k <= H; ++k) {
                NaturalCourseRow row;
                row.visit = k;
                row.covariate = tv[j];
                auto ks = static_cast<std::size_t>(k);
                row.observed_mean = obs_n[ks] > 0 ? obs_sum[ks] / obs_n[ks] : 0.0;
                double w = nc_w[j][ks];
                double m = w > 0 ? nc_sum[j][ks] / w : 0.0;
                row.simulated_mean = m;
                double var = w > 0 ? std::max(0.0, nc_sumsq[j][ks] / w - m * m) : 0.0;
                // effective replicate count under in-follow-up weighting
                double n_eff = w > 0 ? w : 1.0;
                row.mc_se = std::sqrt(var / std::max(1.0, n_eff));
                out.natural_course.push_back(row);
            }
        }
    }
    return out;
}

void save_natural_course_csv(const std::vector<NaturalCourseRow>& rows,
                             const std::string& path) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write natural-course file: " + path);
    out << "visit,covariate,observed_mean,simulated_mean\n";
    out.precision(12);
    for (const auto& r : rows)
        out << r.visit << ',' << r.covariate << ',' << r.observed_mean << ','
            << r.simulated_mean << '\n';
}

// ---------------------------------------------------------------------------
// G-estimation
// ---------------------------------------------------------------------------

GEstimationResult gestimate_snmm(const LongitudinalDataset& ds,
                                 const StrategyProtocol& protocol,
                                 const GEstimationOptions& opts) {
    if (!(opts.grid.lo < opts.grid.hi) || opts.grid.points < 3 ||
        !std::isfinite(opts.grid.lo) || !std::isfinite(opts.grid.hi))
        throw ConfigError("psi grid requires finite lo < hi and >= 3 points");

    AnalysisView view = derive_analysis_view(ds, nullptr, ViewSpec{}, "g-estimation");
    const int H = view.horizon;
    const auto baseline = baseline_names(ds.schema);

    // subject-level end outcome + cumulative treated visits; subjects with an
    // unobservable end outcome (lost to follow-up) are excluded and the rest
    // reweighted by IPCW
    struct SubjectEnd {
        bool included = false;
        double y = 0.0, cum_a = 0.0, w = 1.0;
    };
    std::map<int, SubjectEnd> ends;
    int cont_idx = -1;
    if (!opts.continuous_outcome_covariate.empty())
        cont_idx = covariate_index(view, opts.continuous_outcome_covariate);
    {
        int last_subject = -1;
        for (const auto& r : view.rows) {
            if (r.subject != last_subject) {
                last_subject = r.subject;
                ends[r.subject] = SubjectEnd{};
            }
            SubjectEnd& s = ends[r.subject];
            if (r.treatment == 1) s.cum_a += 1.0;
            if (cont_idx >= 0) s.y = r.covariates[cont_idx];
            if (r.event) {
                if (cont_idx < 0) s.y = 1.0;
                s.included = true;
            }
            if (r.censor == CensorReason::Ltfu || r.censor == CensorReason::Measurement)
                s.included = false;
            else if (r.visit == H || r.event || r.competing)
                s.included = true;
        }
    }
    // guard against subjects whose follow-up simply stops early
    {
        std::map<int, int> last_visit;
        std::map<int, bool> terminal;
        for (const auto& r : view.rows) {
            last_visit[r.subject] = r.visit;
            if (r.event || r.competing || r.censor != CensorReason::None)
                terminal[r.subject] = r.censor == CensorReason::None;
        }
        for (auto& [sid, s] : ends)
            if (last_visit[sid] < H && !terminal.count(sid)) s.included = false;
    }

    // IPCW for dropout (Case M pipeline): weight completers by the inverse
    // probability of remaining uncensored through their follow-up
    if (view.has_ltfu) {
        auto rows = design::all_rows(view);
        Eigen::VectorXd uncensored(rows.size());
        for (std::size_t i = 0; i < rows.size(); ++i)
            uncensored[i] = rows[i]->censor == CensorReason::Ltfu ? 0.0 : 1.0;
        DesignMatrix den = pooled_design(view, rows, baseline, opts.covariates);
        DesignMatrix num = pooled_design(view, rows, {}, {});
        Eigen::VectorXd p_den = predict(fit_glm(den, uncensored, Link::Logit), den);
        Eigen::VectorXd p_num = predict(fit_glm(num, uncensored, Link::Logit), num);
        int last_subject = -1;
        double cum = 1.0;
        for (std::size_t i = 0; i < rows.size(); ++i) {
            if (rows[i]->subject != last_subject) {
                last_subject = rows[i]->subject;
                cum = 1.0;
            }
            cum *= p_num[i] / p_den[i];
            ends[rows[i]->subject].w = cum;
        }
    }

    // treatment-decision rows of included subjects
    design::RowRefs rows;
    for (const auto& r : view.rows)
        if (r.treatment >= 0 && ends[r.subject].included) rows.push_back(&r);
    if (rows.empty()) throw DataError("no usable treatment decisions for g-estimation");

    DesignMatrix d = DesignMatrix::with_intercept(static_cast<Eigen::Index>(rows.size()));
    design::add_time_dummies(d, rows, H);
    d.add_column("arm", design::arm_col(rows));
    for (const auto& c : baseline) d.add_column(c, design::covariate_col(view, rows, c));
    for (const auto& c : opts.covariates)
        if (std::find(baseline.begin(), baseline.end(), c) == baseline.end())
            d.add_column(c, design::covariate_col(view, rows, c));
    {
        Eigen::VectorXd lag_a(rows.size());
        std::map<int, double> prev;
        for (std::size_t i = 0; i < rows.size(); ++i) {
            auto it = prev.find(rows[i]->subject);
            lag_a[static_cast<Eigen::Index>(i)] = it == prev.end() ? 0.0 : it->second;
            prev[rows[i]->subject] = rows[i]->treatment > 0 ? 1.0 : 0.0;
        }
        d.add_column("lag:A", lag_a);
    }
    const auto n = static_cast<Eigen::Index>(rows.size());
    Eigen::VectorXd a(n), w(n), Yv(n), Cv(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        const auto* r = rows[static_cast<std::size_t>(i)];
        a[i] = r->treatment > 0 ? 1.0 : 0.0;
        const SubjectEnd& s = ends[r->subject];
        w[i] = s.w;
        Yv[i] = s.y;
        Cv[i] = s.cum_a;
    }
    d.weights = w;
    FittedModel treat = fit_glm(d, a, Link::Logit);
    Eigen::VectorXd p = predict(treat, d);

    // Rao score statistic for adding H(psi) = Y - psi * cumA to the fitted
    // treatment model; affine structure in psi gives a closed-form trace
    Eigen::VectorXd res = a - p;
    Eigen::ArrayXd v = (w.array() * p.array() * (1.0 - p.array()));
    double u0 = (w.array() * Yv.array() * res.array()).sum();
    double u1 = (w.array() * Cv.array() * res.array()).sum();
    double ayy = (v * Yv.array().square()).sum();
    double ayc = (v * (Yv.array() * Cv.array())).sum();
    double acc = (v * Cv.array().square()).sum();
    Eigen::MatrixXd X = d.X;
    Eigen::MatrixXd XtVX = X.transpose() * v.matrix().asDiagonal() * X;
    Eigen::VectorXd by = X.transpose() * (v * Yv.array()).matrix();
    Eigen::VectorXd bc = X.transpose() * (v * Cv.array()).matrix();
    Eigen::LDLT<Eigen::MatrixXd> ldlt(XtVX);
    Eigen::VectorXd My = ldlt.solve(by), Mc = ldlt.solve(bc);
    double q0 = ayy - by.dot(My);
    double q1 = ayc - by.dot(Mc);
    double q2 = acc - bc.dot(Mc);

    GEstimationResult out;
    const int P = opts.grid.points;
    const double step = (opts.grid.hi - opts.grid.lo) / (P - 1);
    out.grid.resize(P);
    out.score.resize(P);
    int argmin = 0;
    for (int i = 0; i < P; ++i) {
        double psi = opts.grid.lo + step * i;
        double U = u0 - psi * u1;
        double V = q0 - 2.0 * psi * q1 + psi * psi * q2;
        double T = V > 1e-12 ? U * U / V : std::numeric_limits<double>::infinity();
        out.grid[i] = psi;
        out.score[i] = T;
        if (T < out.score[argmin]) argmin = i;
    }
    out.boundary = (argmin == 0 || argmin == P - 1);
    out.psi_hat = out.grid[static_cast<std::size_t>(argmin)];
    if (!out.boundary) {
        double t0 = out.score[argmin - 1], t1 = out.score[argmin], t2 = out.score[argmin + 1];
        double denom = t0 - 2.0 * t1 + t2;
        if (denom > 1e-12)
            out.psi_hat = out.grid[static_cast<std::size_t>(argmin)] +
                          0.5 * step * (t0 - t2) / denom;
    }

    // score-test inversion at the 95% chi-square(1) cutoff
    constexpr double cutoff = 3.841458820694124;
    auto cross = [&](int from, int dir) -> std::pair<double, bool> {
        int i = from;
        while (i + dir >= 0 && i + dir < P && out.score[i + dir] <= cutoff) i += dir;
        if (i + dir < 0 || i + dir >= P) return {out.grid[static_cast<std::size_t>(i)], true};
        double t_in = out.score[i], t_out = out.score[i + dir];
        double frac = (cutoff - t_in) / (t_out - t_in);
        return {out.grid[static_cast<std::size_t>(i)] + dir * frac * step, false};
    };
    if (out.score[argmin] <= cutoff) {
        auto [lo, lob] = cross(argmin, -1);
        auto [hi, hib] = cross(argmin, +1);
        out.ci = {lo, hi};
        out.boundary = out.boundary || lob || hib;
    } else {
        out.ci = {out.psi_hat, out.psi_hat};
        out.estimate.warnings.push_back(
            "score statistic exceeds the 95% cutoff everywhere on the grid");
    }

    // translate psi into an always-treat vs never-treat contrast at the horizon
    double wsum = 0.0, h0 = 0.0;
    for (const auto& [sid, s] : ends) {
        if (!s.included) continue;
        wsum += s.w;
        h0 += s.w * (s.y - out.psi_hat * s.cum_a);
    }
    h0 /= wsum;
    out.estimate.method = "g-estimation (additive SNMM)";
    out.estimate.estimand_label =
        "per-protocol (g-estimation): " + (protocol.label.empty()
                                               ? std::string("always treat vs never treat")
                                               : protocol.label);
    out.estimate.covariates = opts.covariates;
    out.estimate.assumptions = {"additive rank-preserving blip per treated visit",
                                "sequential exchangeability given measured history",
                                "correctly specified treatment model", "consistency"};
    out.estimate.risk0.risk = {h0};
    out.estimate.risk1.risk = {h0 + out.psi_hat * (H + 1)};
    out.estimate.rd_ci = {{out.ci.lo * (H + 1), out.ci.hi * (H + 1)}};
    if (out.boundary)
        out.estimate.warnings.push_back(
            "psi grid boundary reached; widen the search interval");
    out.estimate.finalize();
    return out;
}

WeightSeries measurement_weights(const LongitudinalDataset& ds,
                                 const std::vector<std::string>& covariates) {
    MissingAdherencePolicy policy;
    policy.kind = MissingAdherencePolicy::Kind::MeasurementWeighting;
    LongitudinalDataset work = apply_missing_adherence_policy(ds, policy);
    ViewSpec vs;
    vs.censor_at_measurement = true;
    AnalysisView view = derive_analysis_view(work, nullptr, vs, "measurement weights");

    WeightSeries ws;
    ws.truncation_percentile = 100.0;
    for (const auto& r : view.rows) {
        ws.subject.push_back(r.subject);
        ws.visit.push_back(r.visit);
    }
    const auto n_rows = view.rows.size();
    ws.adherence.assign(n_rows, 1.0);
    ws.censoring.assign(n_rows, 1.0);
    ws.measurement.assign(n_rows, 1.0);

    bool any_missing = false;
    for (const auto& r : view.rows)
        any_missing = any_missing || r.censor == CensorReason::Measurement;
    if (any_missing) {
        auto rows = design::all_rows(view);
        Eigen::VectorXd measured(rows.size());
        for (std::size_t i = 0; i < rows.size(); ++i)
            measured[i] = rows[i]->censor == CensorReason::Measurement ? 0.0 : 1.0;
        DesignMatrix den = pooled_design(view, rows, baseline_names(work.schema), covariates);
        DesignMatrix num = pooled_design(view, rows, {}, {});
        Eigen::VectorXd p_den = predict(fit_glm(den, measured, Link::Logit), den);
        Eigen::VectorXd p_num = predict(fit_glm(num, measured, Link::Logit), num);
        std::vector<char> fit_row(n_rows, 1);
        int violations = 0;
        ws.measurement = cumulative_ratio_weights(view, fit_row, p_num, p_den, measured, 0.01,
                                                  "measurement", &violations);
        if (violations > 0)
            throw PositivityError("measurement probability below floor at " +
                                  std::to_string(violations) + " subject-visits");
    }
    ws.combined = ws.measurement;
    ws.analysis = ws.combined;
    return ws;
}

} // namespace pptrial
