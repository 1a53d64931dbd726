#include "pptrial/itt.hpp"
#include "pptrial/errors.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <sstream>

namespace pptrial {

namespace {

void require_both_arms(const AnalysisView& view) {
    bool a0 = false, a1 = false;
    for (const auto& r : view.rows) {
        if (!r.at_risk) continue;
        (r.arm == 1 ? a1 : a0) = true;
    }
    if (!a0 || !a1) throw DataError("empty arm: no at-risk person-time in arm " +
                                    std::string(a0 ? "1" : "0"));
}

int covariate_index(const AnalysisView& view, const std::string& name) {
    for (std::size_t i = 0; i < view.covariate_names.size(); ++i)
        if (view.covariate_names[i] == name) return static_cast<int>(i);
    throw ModelError("covariate not in view: " + name);
}

void require_baseline(const AnalysisView& view, const std::vector<std::string>& covs) {
    for (const auto& c : covs)
        if (!view.covariate_baseline[covariate_index(view, c)])
            throw ConfigError("covariate is not baseline: " + c);
}

// first person-time row of each subject, in subject order
std::vector<const PersonTimeRow*> subject_rows(const AnalysisView& view) {
    std::vector<const PersonTimeRow*> out;
    int last = -1;
    for (const auto& r : view.rows) {
        if (r.subject != last) {
            out.push_back(&r);
            last = r.subject;
        }
    }
    return out;
}

} // namespace

EffectEstimate itt_unadjusted(const AnalysisView& view) {
    require_both_arms(view);
    EffectEstimate e;
    e.method = "unadjusted";
    e.estimand_label = view.has_ltfu ? "pseudo-ITT (unadjusted)" : "ITT (unadjusted)";
    e.risk0 = risk_from_hazards(arm_hazards(view, 0));
    e.risk1 = risk_from_hazards(arm_hazards(view, 1));
    if (view.has_ltfu)
        e.warnings.push_back("loss to follow-up censored without adjustment (pseudo-ITT)");
    e.finalize();
    return e;
}

EffectEstimate itt_standardized(const AnalysisView& view,
                                const std::vector<std::string>& covariates) {
    if (covariates.empty()) {
        EffectEstimate e = itt_unadjusted(view);
        e.method = "standardized (no covariates)";
        return e;
    }
    require_both_arms(view);
    require_baseline(view, covariates);

    auto rows = design::at_risk_rows(view);
    std::set<int> visit_set;
    for (const auto* r : rows) visit_set.insert(r->visit);
    std::vector<int> dummy_ks;
    for (int k : visit_set)
        if (k > 0) dummy_ks.push_back(k);

    // outcome model: arm x time and arm x covariate terms so standardization
    // is saturated on small fixtures
    DesignMatrix d = DesignMatrix::with_intercept(static_cast<Eigen::Index>(rows.size()));
    Eigen::VectorXd arm = design::arm_col(rows);
    for (int k : dummy_ks) {
        Eigen::VectorXd col(rows.size());
        for (std::size_t i = 0; i < rows.size(); ++i) col[i] = rows[i]->visit == k ? 1.0 : 0.0;
        d.add_column("t" + std::to_string(k), col);
    }
    d.add_column("arm", arm);
    for (int k : dummy_ks) {
        Eigen::VectorXd col(rows.size());
        for (std::size_t i = 0; i < rows.size(); ++i)
            col[i] = (rows[i]->visit == k && rows[i]->arm == 1) ? 1.0 : 0.0;
        d.add_column("arm:t" + std::to_string(k), col);
    }
    std::vector<int> cov_idx;
    for (const auto& c : covariates) {
        cov_idx.push_back(covariate_index(view, c));
        d.add_column(c, design::covariate_col(view, rows, c));
        Eigen::VectorXd inter = design::covariate_col(view, rows, c).cwiseProduct(arm);
        d.add_column("arm:" + c, inter);
    }
    Eigen::VectorXd y(rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) y[i] = rows[i]->event;

    FittedModel model;
    try {
        model = fit_glm(d, y, Link::Logit);
    } catch (const ModelError& err) {
        std::ostringstream os;
        os << "outcome model failed with covariates:";
        for (const auto& c : covariates) os << ' ' << c;
        os << " (" << err.what() << ")";
        throw ModelError(os.str());
    }

    // per-subject risk curves under each forced arm, averaged marginally
    auto subjects = subject_rows(view);
    const int H = view.horizon;
    std::vector<double> cum0(H + 1, 0.0), cum1(H + 1, 0.0);
    Eigen::RowVectorXd x(d.p());
    for (const auto* s : subjects) {
        for (int z = 0; z <= 1; ++z) {
            double surv = 1.0;
            for (int k = 0; k <= H; ++k) {
                x.setZero();
                int col = 0;
                x[col++] = 1.0;
                for (int dk : dummy_ks) x[col++] = (dk == k) ? 1.0 : 0.0;
                x[col++] = z;
                for (int dk : dummy_ks) x[col++] = (dk == k && z == 1) ? 1.0 : 0.0;
                for (int ci : cov_idx) {
                    double v = s->covariates[ci];
                    x[col++] = v;
                    x[col++] = z == 1 ? v : 0.0;
                }
                double h = expit(x.dot(model.coefficients));
                surv *= (1.0 - h);
                (z == 1 ? cum1 : cum0)[k] += 1.0 - surv;
            }
        }
    }
    EffectEstimate e;
    e.method = "standardized";
    e.estimand_label = view.has_ltfu ? "pseudo-ITT (standardized)" : "ITT (standardized)";
    e.covariates = covariates;
    const double n = static_cast<double>(subjects.size());
    for (int k = 0; k <= H; ++k) {
        e.risk0.risk.push_back(cum0[k] / n);
        e.risk1.risk.push_back(cum1[k] / n);
    }
    e.finalize();
    return e;
}

EffectEstimate itt_ipw_baseline(const AnalysisView& view,
                                const std::vector<std::string>& covariates) {
    require_both_arms(view);
    require_baseline(view, covariates);

    auto subjects = subject_rows(view);
    const auto n = static_cast<Eigen::Index>(subjects.size());
    DesignMatrix d = DesignMatrix::with_intercept(n);
    for (const auto& c : covariates) {
        int ci = covariate_index(view, c);
        Eigen::VectorXd col(n);
        for (Eigen::Index i = 0; i < n; ++i) col[i] = subjects[i]->covariates[ci];
        d.add_column(c, col);
    }
    Eigen::VectorXd z(n);
    for (Eigen::Index i = 0; i < n; ++i) z[i] = subjects[i]->arm;
    double marginal1 = z.mean();

    EffectEstimate e;
    e.method = "ipw (baseline assignment)";
    e.estimand_label = view.has_ltfu ? "pseudo-ITT (baseline IPW)" : "ITT (baseline IPW)";
    e.covariates = covariates;

    std::map<int, double> subject_weight;
    if (covariates.empty()) {
        for (const auto* s : subjects) subject_weight[s->subject] = 1.0;
    } else {
        FittedModel ps = fit_glm(d, z, Link::Logit);
        Eigen::VectorXd p = predict(ps, d);
        int violations = 0;
        for (Eigen::Index i = 0; i < n; ++i) {
            if (p[i] < 0.01 || p[i] > 0.99) ++violations;
            double pz = subjects[i]->arm == 1 ? p[i] : 1.0 - p[i];
            double mz = subjects[i]->arm == 1 ? marginal1 : 1.0 - marginal1;
            subject_weight[subjects[i]->subject] = mz / pz;
        }
        if (violations > 0) {
            std::ostringstream os;
            os << "positivity warning: estimated assignment probability outside [0.01, 0.99] for "
               << violations << " subjects";
            e.warnings.push_back(os.str());
        }
    }

    std::vector<double> w(view.rows.size(), 1.0);
    for (std::size_t i = 0; i < view.rows.size(); ++i)
        w[i] = subject_weight[view.rows[i].subject];
    e.risk0 = risk_from_hazards(arm_hazards(view, 0, w));
    e.risk1 = risk_from_hazards(arm_hazards(view, 1, w));
    e.finalize();
    return e;
}

EffectEstimate itt_ipcw(const LongitudinalDataset& ds, const IpcwOptions& opts) {
    AnalysisView view = derive_analysis_view(ds, nullptr, ViewSpec{}, "ITT (IPCW)");
    require_both_arms(view);

    bool any_ltfu = view.has_ltfu;
    EffectEstimate e;
    e.method = "ipcw";
    e.estimand_label = "ITT (IPCW)";
    e.covariates = opts.timevarying_covariates;

    std::vector<double> w(view.rows.size(), 1.0);
    if (any_ltfu) {
        for (int arm = 0; arm <= 1; ++arm) {
            bool any_uncensored = false;
            std::set<int> censored_subjects, arm_subjects;
            for (const auto& r : view.rows)
                if (r.arm == arm) {
                    arm_subjects.insert(r.subject);
                    if (r.censor == CensorReason::Ltfu) censored_subjects.insert(r.subject);
                }
            any_uncensored = censored_subjects.size() < arm_subjects.size();
            if (!any_uncensored)
                throw DataError("all subjects censored in arm " + std::to_string(arm));
        }

        // censoring is drawn after the event draws within an interval, so
        // event person-time cannot be censored and must stay out of the
        // censoring model (and contribute no weight factor)
        std::vector<char> can_censor(view.rows.size(), 0);
        design::RowRefs rows;
        for (std::size_t i = 0; i < view.rows.size(); ++i)
            if (!view.rows[i].event && !view.rows[i].competing) {
                can_censor[i] = 1;
                rows.push_back(&view.rows[i]);
            }
        Eigen::VectorXd uncensored(rows.size());
        for (std::size_t i = 0; i < rows.size(); ++i)
            uncensored[i] = rows[i]->censor == CensorReason::Ltfu ? 0.0 : 1.0;

        DesignMatrix den = DesignMatrix::with_intercept(static_cast<Eigen::Index>(rows.size()));
        design::add_time_dummies(den, rows, view.horizon);
        den.add_column("arm", design::arm_col(rows));
        for (std::size_t i = 0; i < view.covariate_names.size(); ++i)
            if (view.covariate_baseline[i])
                den.add_column(view.covariate_names[i],
                               design::covariate_col(view, rows, view.covariate_names[i]));
        for (const auto& c : opts.timevarying_covariates)
            den.add_column(c, design::covariate_col(view, rows, c));

        DesignMatrix num = DesignMatrix::with_intercept(static_cast<Eigen::Index>(rows.size()));
        design::add_time_dummies(num, rows, view.horizon);
        num.add_column("arm", design::arm_col(rows));

        Eigen::VectorXd p_den = predict(fit_glm(den, uncensored, Link::Logit), den);
        FittedModel num_fit = fit_glm(num, uncensored, Link::Logit);

        // the stabilizing numerator must multiply uniformly within arm-visit
        // cells, so it applies to every row (event rows included); only the
        // denominator skips event person-time
        design::RowRefs all_refs;
        for (const auto& r : view.rows) all_refs.push_back(&r);
        DesignMatrix num_all =
            DesignMatrix::with_intercept(static_cast<Eigen::Index>(all_refs.size()));
        design::add_time_dummies(num_all, all_refs, view.horizon);
        num_all.add_column("arm", design::arm_col(all_refs));
        Eigen::VectorXd p_num = predict(num_fit, num_all);

        bool cap_warned = false;
        int last_subject = -1;
        double cum_num = 1.0, cum_den = 1.0;
        Eigen::Index j = 0;
        for (std::size_t i = 0; i < view.rows.size(); ++i) {
            if (view.rows[i].subject != last_subject) {
                last_subject = view.rows[i].subject;
                cum_num = cum_den = 1.0;
            }
            cum_num *= p_num[static_cast<Eigen::Index>(i)];
            if (can_censor[i]) {
                cum_den *= p_den[j];
                ++j;
            }
            if (!cap_warned && 1.0 / cum_den > opts.weight_cap_warn) {
                e.warnings.push_back("unstabilized IPCW weight exceeds cap before truncation");
                cap_warned = true;
            }
            w[i] = cum_num / cum_den;
        }
        int truncated = truncate_weights(w, opts.truncation_percentile);
        e.truncation_percentile = opts.truncation_percentile;
        e.truncated_count = truncated;
    } else {
        e.estimand_label = "ITT (IPCW; no censoring observed)";
    }

    e.risk0 = risk_from_hazards(arm_hazards(view, 0, w));
    e.risk1 = risk_from_hazards(arm_hazards(view, 1, w));
    e.finalize();
    return e;
}

EffectEstimate competing_effect(const AnalysisView& view, CompetingEstimand estimand,
                                const std::vector<std::string>& covariates,
                                const std::string& direct_justification) {
    require_both_arms(view);
    EffectEstimate e;

    // Guideline: always report the competing-event risk alongside
    CompetingCurves aj0 = aalen_johansen(view, 0);
    CompetingCurves aj1 = aalen_johansen(view, 1);
    e.competing_risk0 = aj0.competing;
    e.competing_risk1 = aj1.competing;

    if (estimand == CompetingEstimand::Total) {
        e.estimand_label = "total effect (competing events in risk set)";
        e.method = "aalen-johansen";
        e.risk0 = aj0.event;
        e.risk1 = aj1.event;
    } else if (estimand == CompetingEstimand::Composite) {
        e.estimand_label = "composite outcome (event or competing event)";
        e.method = "composite hazard";
        AnalysisView comp = view;
        for (auto& r : comp.rows) {
            r.event = r.event || r.competing;
            r.competing = 0;
        }
        e.risk0 = risk_from_hazards(arm_hazards(comp, 0));
        e.risk1 = risk_from_hazards(arm_hazards(comp, 1));
    } else { // Direct
        bool any_competing = false;
        for (const auto& r : view.rows) any_competing = any_competing || r.competing;
        if (any_competing && covariates.empty())
            throw ConfigError(
                "direct-effect estimand requires time-varying covariates for IPCW of "
                "competing events; refusing an unadjusted direct effect");
        if (direct_justification.empty())
            throw ConfigError("direct-effect estimand requires a justification string");
        e.estimand_label = "direct effect (competing events censored)";
        e.method = "ipcw (competing events)";
        e.covariates = covariates;
        e.assumptions.push_back("justification: " + direct_justification);

        std::vector<double> w(view.rows.size(), 1.0);
        if (any_competing) {
            auto rows = design::all_rows(view);
            Eigen::VectorXd free_of_competing(rows.size());
            for (std::size_t i = 0; i < rows.size(); ++i)
                free_of_competing[i] = rows[i]->competing ? 0.0 : 1.0;
            DesignMatrix den =
                DesignMatrix::with_intercept(static_cast<Eigen::Index>(rows.size()));
            design::add_time_dummies(den, rows, view.horizon);
            den.add_column("arm", design::arm_col(rows));
            for (const auto& c : covariates)
                den.add_column(c, design::covariate_col(view, rows, c));
            DesignMatrix num =
                DesignMatrix::with_intercept(static_cast<Eigen::Index>(rows.size()));
            design::add_time_dummies(num, rows, view.horizon);
            num.add_column("arm", design::arm_col(rows));
            Eigen::VectorXd p_den = predict(fit_glm(den, free_of_competing, Link::Logit), den);
            Eigen::VectorXd p_num = predict(fit_glm(num, free_of_competing, Link::Logit), num);

            // selection into the visit-k risk set is prior competing-event
            // freedom, so the product runs through k-1
            int last_subject = -1;
            double cum_num = 1.0, cum_den = 1.0;
            for (std::size_t i = 0; i < rows.size(); ++i) {
                if (rows[i]->subject != last_subject) {
                    last_subject = rows[i]->subject;
                    cum_num = cum_den = 1.0;
                }
                w[i] = cum_num / cum_den;
                cum_num *= p_num[i];
                cum_den *= p_den[i];
            }
            e.truncated_count = truncate_weights(w, 99.5);
            e.truncation_percentile = 99.5;
        }
        // competing rows stay in the visit-k risk set with event 0; the
        // subject simply has no rows afterwards
        e.risk0 = risk_from_hazards(arm_hazards(view, 0, w));
        e.risk1 = risk_from_hazards(arm_hazards(view, 1, w));
    }
    e.finalize();
    return e;
}

SubgroupResult subgroup_effects(
    const AnalysisView& view, const StrataDefinition& strata,
    const std::function<EffectEstimate(const AnalysisView&)>& base) {
    int ci = covariate_index(view, strata.covariate);
    if (!view.covariate_baseline[ci])
        throw ConfigError("subgroup covariate must be baseline: " + strata.covariate);

    // stratum membership from each subject's baseline value
    std::map<int, double> baseline_value;
    for (const auto& r : view.rows)
        if (!baseline_value.count(r.subject)) baseline_value[r.subject] = r.covariates[ci];
    std::set<double> values;
    for (const auto& [s, v] : baseline_value) values.insert(v);

    SubgroupResult out;
    out.prespecified = strata.prespecified;
    if (!strata.prespecified)
        out.warnings.push_back(
            "ad-hoc subgroup: not pre-specified in the analysis plan; interpret with caution");
    out.warnings.push_back("risk ratios within strata are secondary; additive scale is primary");

    for (double v : values) {
        AnalysisView sub;
        sub.estimand_label = view.estimand_label;
        sub.horizon = view.horizon;
        sub.covariate_names = view.covariate_names;
        sub.covariate_baseline = view.covariate_baseline;
        for (const auto& r : view.rows)
            if (baseline_value[r.subject] == v) {
                sub.rows.push_back(r);
                sub.has_ltfu = sub.has_ltfu || r.censor == CensorReason::Ltfu;
            }
        std::set<int> subj;
        for (const auto& r : sub.rows) subj.insert(r.subject);
        sub.n_subjects = static_cast<int>(subj.size());

        std::ostringstream label;
        label << strata.covariate << "=" << v;
        out.strata.emplace_back(label.str(), base(sub));
    }

    for (std::size_t i = 0; i < out.strata.size(); ++i)
        for (std::size_t j = i + 1; j < out.strata.size(); ++j)
            out.heterogeneity.push_back(
                {out.strata[i].first, out.strata[j].first,
                 out.strata[j].second.rd_at_horizon() - out.strata[i].second.rd_at_horizon()});
    return out;
}

} // namespace pptrial
