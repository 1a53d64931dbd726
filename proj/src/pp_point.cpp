#include "pptrial/pp_point.hpp"
#include "pptrial/errors.hpp"
#include "pptrial/itt.hpp"
#include "pptrial/rng.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <sstream>

namespace pptrial {

namespace {

int baseline_treatment(const SubjectHistory& s) {
    if (!s.visits.front().treatment)
        throw DataError("subject " + s.id + ": treatment unobserved at visit 0");
    return *s.visits.front().treatment;
}

std::vector<bool> adherence_flags(const LongitudinalDataset& ds, const PointPPConfig& config) {
    std::vector<bool> adherent(ds.subjects.size());
    for (std::size_t i = 0; i < ds.subjects.size(); ++i)
        adherent[i] =
            baseline_treatment(ds.subjects[i]) == config.adherent_value(ds.subjects[i].arm);
    return adherent;
}

// view with non-adherent subjects artificially censored at visit 0
AnalysisView adherent_view(const LongitudinalDataset& ds, const std::vector<bool>& adherent,
                           const std::string& label) {
    AnalysisView full = derive_analysis_view(ds, nullptr, ViewSpec{}, label);
    AnalysisView out = full;
    out.rows.clear();
    for (const auto& r : full.rows) {
        if (adherent[r.subject]) {
            out.rows.push_back(r);
        } else if (r.visit == 0) {
            PersonTimeRow c = r;
            c.at_risk = false;
            c.event = 0;
            c.competing = 0;
            c.censor = CensorReason::Deviation;
            out.rows.push_back(c);
        }
    }
    return out;
}

void check_positivity(const LongitudinalDataset& ds, const std::vector<bool>& adherent,
                      const std::vector<std::string>& confounders) {
    if (confounders.empty()) return;
    std::vector<int> idx;
    for (const auto& c : confounders) idx.push_back(ds.schema.index(c));
    std::map<std::vector<double>, std::pair<int, int>> pattern; // (count, adherent count)
    for (std::size_t i = 0; i < ds.subjects.size(); ++i) {
        std::vector<double> key{static_cast<double>(ds.subjects[i].arm)};
        for (int j : idx) key.push_back(ds.subjects[i].visits.front().covariates[j].value_or(0.0));
        auto& [n, na] = pattern[key];
        ++n;
        if (adherent[i]) ++na;
    }
    for (const auto& [key, counts] : pattern)
        if (counts.second == 0) {
            std::ostringstream os;
            os << "positivity violation: no adherent subjects in arm " << key[0]
               << " for a baseline covariate pattern (" << counts.first << " subjects)";
            throw PositivityError(os.str());
        }
}

} // namespace

EffectEstimate pp_point_adjusted(const LongitudinalDataset& ds, const PointPPConfig& config) {
    auto adherent = adherence_flags(ds, config);
    const bool all_adherent = std::all_of(adherent.begin(), adherent.end(), [](bool b) { return b; });
    if (all_adherent) {
        // full adherence: the per-protocol and intention-to-treat contrasts coincide
        AnalysisView v = derive_analysis_view(ds, nullptr, ViewSpec{}, "per-protocol (point)");
        EffectEstimate e = itt_unadjusted(v);
        e.estimand_label = "per-protocol (point)";
        e.method += " [full adherence]";
        return e;
    }
    check_positivity(ds, adherent, config.baseline_confounders);

    AnalysisView view = adherent_view(ds, adherent, "per-protocol (point)");
    EffectEstimate e;
    e.estimand_label = "per-protocol (point)";
    e.covariates = config.baseline_confounders;

    if (config.method == PointPPConfig::Method::Ipw) {
        e.method = "ipw (point adherence)";
        std::map<int, double> subject_weight;
        if (config.baseline_confounders.empty()) {
            for (std::size_t i = 0; i < ds.subjects.size(); ++i) subject_weight[i] = 1.0;
        } else {
            const auto n = static_cast<Eigen::Index>(ds.subjects.size());
            DesignMatrix d = DesignMatrix::with_intercept(n);
            Eigen::VectorXd arm(n), y(n);
            for (Eigen::Index i = 0; i < n; ++i) {
                arm[i] = ds.subjects[i].arm;
                y[i] = adherent[i] ? 1.0 : 0.0;
            }
            d.add_column("arm", arm);
            for (const auto& c : config.baseline_confounders) {
                int ci = ds.schema.index(c);
                Eigen::VectorXd col(n);
                for (Eigen::Index i = 0; i < n; ++i)
                    col[i] = ds.subjects[i].visits.front().covariates[ci].value_or(0.0);
                d.add_column(c, col);
                d.add_column("arm:" + c, col.cwiseProduct(arm));
            }
            FittedModel m = fit_glm(d, y, Link::Logit);
            Eigen::VectorXd p = predict(m, d);
            double marg[2] = {0, 0}, cnt[2] = {0, 0};
            for (Eigen::Index i = 0; i < n; ++i) {
                int z = ds.subjects[i].arm;
                marg[z] += y[i];
                cnt[z] += 1;
            }
            int floor_hits = 0;
            for (Eigen::Index i = 0; i < n; ++i) {
                if (p[i] < 0.01) ++floor_hits;
                subject_weight[i] = (marg[ds.subjects[i].arm] / cnt[ds.subjects[i].arm]) /
                                    std::max(p[i], 1e-12);
            }
            if (floor_hits > 0)
                e.warnings.push_back("estimated adherence probability below 0.01 for " +
                                     std::to_string(floor_hits) + " subjects");
        }
        std::vector<double> w(view.rows.size(), 1.0);
        for (std::size_t i = 0; i < view.rows.size(); ++i)
            w[i] = subject_weight[view.rows[i].subject];
        e.risk0 = risk_from_hazards(arm_hazards(view, 0, w));
        e.risk1 = risk_from_hazards(arm_hazards(view, 1, w));
    } else {
        e.method = "standardization (point adherence)";
        // outcome model on adherent person-time, predictions over everyone
        auto rows = design::at_risk_rows(view);
        std::set<int> visit_set;
        for (const auto* r : rows) visit_set.insert(r->visit);
        std::vector<int> dummy_ks;
        for (int k : visit_set)
            if (k > 0) dummy_ks.push_back(k);

        DesignMatrix d = DesignMatrix::with_intercept(static_cast<Eigen::Index>(rows.size()));
        Eigen::VectorXd arm = design::arm_col(rows);
        for (int k : dummy_ks) {
            Eigen::VectorXd col(rows.size());
            for (std::size_t i = 0; i < rows.size(); ++i)
                col[i] = rows[i]->visit == k ? 1.0 : 0.0;
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
        for (const auto& c : config.baseline_confounders) {
            cov_idx.push_back(ds.schema.index(c));
            Eigen::VectorXd col = design::covariate_col(view, rows, c);
            d.add_column(c, col);
            d.add_column("arm:" + c, col.cwiseProduct(arm));
        }
        Eigen::VectorXd y(rows.size());
        for (std::size_t i = 0; i < rows.size(); ++i) y[i] = rows[i]->event;
        FittedModel model = fit_glm(d, y, Link::Logit);

        const int H = view.horizon;
        std::vector<double> cum0(H + 1, 0.0), cum1(H + 1, 0.0);
        Eigen::RowVectorXd x(d.p());
        for (const auto& s : ds.subjects) {
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
                        double v = s.visits.front().covariates[ci].value_or(0.0);
                        x[col++] = v;
                        x[col++] = z == 1 ? v : 0.0;
                    }
                    double h = expit(x.dot(model.coefficients));
                    surv *= (1.0 - h);
                    (z == 1 ? cum1 : cum0)[k] += 1.0 - surv;
                }
            }
        }
        const double n = static_cast<double>(ds.subjects.size());
        for (int k = 0; k <= H; ++k) {
            e.risk0.risk.push_back(cum0[k] / n);
            e.risk1.risk.push_back(cum1[k] / n);
        }
    }
    e.finalize();
    return e;
}

EffectEstimate biased_comparator(const LongitudinalDataset& ds, const PointPPConfig& config,
                                 BiasedComparatorMode mode) {
    auto adherent = adherence_flags(ds, config);
    AnalysisView full = derive_analysis_view(ds, nullptr, ViewSpec{}, "");
    AnalysisView view = full;
    view.rows.clear();

    EffectEstimate e;
    e.bias_label = "not a valid per-protocol estimate under confounded adherence";
    switch (mode) {
        case BiasedComparatorMode::NaivePP: {
            e.estimand_label = "biased comparator: naive per-protocol";
            e.method = "adherent-only contrast by arm, no adjustment";
            for (const auto& r : full.rows)
                if (adherent[r.subject]) view.rows.push_back(r);
            break;
        }
        case BiasedComparatorMode::AsTreated: {
            e.estimand_label = "biased comparator: as-treated";
            e.method = "contrast by received treatment, randomization ignored";
            for (auto r : full.rows) {
                r.arm = baseline_treatment(ds.subjects[r.subject]) == 1 ? 1 : 0;
                view.rows.push_back(r);
            }
            break;
        }
        case BiasedComparatorMode::ModifiedItt: {
            e.estimand_label = "biased comparator: modified ITT";
            e.method = "never-initiators in the active arm dropped, contrast by arm";
            for (const auto& r : full.rows) {
                if (r.arm == 1 && !adherent[r.subject]) continue;
                view.rows.push_back(r);
            }
            break;
        }
    }
    e.risk0 = risk_from_hazards(arm_hazards(view, 0));
    e.risk1 = risk_from_hazards(arm_hazards(view, 1));
    e.finalize();
    return e;
}

NegativeControlResult negative_control_check(const LongitudinalDataset& ds,
                                             const PointPPConfig& config,
                                             const std::string& control_outcome) {
    int ci = ds.schema.index(control_outcome);

    bool identical = true;
    for (const auto& s : ds.subjects) {
        double control = s.visits.front().covariates[ci].value_or(0.0);
        double primary = s.terminal() == TerminalStatus::Event ? 1.0 : 0.0;
        if (control != primary) {
            identical = false;
            break;
        }
    }
    if (identical)
        throw ConfigError("control outcome is identical to the primary outcome column");

    // single-visit dataset with the control outcome as the event
    auto control_ds = [&](const LongitudinalDataset& src) {
        LongitudinalDataset out;
        out.schema = src.schema;
        out.horizon = 0;
        for (const auto& s : src.subjects) {
            SubjectHistory h;
            h.id = s.id;
            h.arm = s.arm;
            VisitRecord v = s.visits.front();
            v.outcome = v.covariates[ci].value_or(0.0) != 0.0 ? 1 : 0;
            v.competing = 0;
            v.ltfu = 0;
            h.visits.push_back(v);
            out.subjects.push_back(std::move(h));
        }
        return out;
    };

    NegativeControlResult res;
    LongitudinalDataset nc = control_ds(ds);
    res.estimate = pp_point_adjusted(nc, config);
    res.estimate.estimand_label = "negative-control outcome: " + control_outcome;

    // percentile bootstrap over subjects for the horizon risk difference
    const int B = 200;
    std::vector<double> rds;
    rds.reserve(B);
    for (int b = 0; b < B; ++b) {
        CounterRng rng(0x6e67636bull, static_cast<std::uint64_t>(b));
        LongitudinalDataset boot;
        boot.schema = ds.schema;
        boot.horizon = 0;
        boot.subjects.reserve(nc.subjects.size());
        for (std::size_t i = 0; i < nc.subjects.size(); ++i) {
            auto pick = rng.next_below(nc.subjects.size());
            SubjectHistory s = nc.subjects[pick];
            s.id += "#" + std::to_string(i);
            boot.subjects.push_back(std::move(s));
        }
        try {
            rds.push_back(pp_point_adjusted(boot, config).rd_at_horizon());
        } catch (const std::exception&) {
            // failed replicate; skipped
        }
    }
    if (rds.size() < 0.5 * B) {
        res.verdict = "inconclusive: too many failed bootstrap replicates";
        return res;
    }
    std::sort(rds.begin(), rds.end());
    double lo = rds[static_cast<std::size_t>(0.025 * (rds.size() - 1))];
    double hi = rds[static_cast<std::size_t>(std::ceil(0.975 * (rds.size() - 1)))];
    res.estimate.rd_ci.assign(1, {lo, hi});
    res.estimate.bootstrap_B = static_cast<int>(rds.size());
    res.residual_confounding_suspected = lo > 0.0 || hi < 0.0;
    res.verdict = res.residual_confounding_suspected
                      ? "residual confounding suspected: control-outcome CI excludes the null"
                      : "clean: control-outcome CI covers the null";
    return res;
}

} // namespace pptrial
