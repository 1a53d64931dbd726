#include "pptrial/effect.hpp"
#include "pptrial/errors.hpp"

#include <algorithm>
#include <cmath>

namespace pptrial {

void EffectEstimate::finalize() {
    const std::size_t K = std::min(risk0.risk.size(), risk1.risk.size());
    rd.resize(K);
    rr.resize(K);
    rr_defined.resize(K);
    for (std::size_t k = 0; k < K; ++k) {
        rd[k] = risk1.risk[k] - risk0.risk[k];
        if (risk0.risk[k] > 0.0) {
            rr[k] = risk1.risk[k] / risk0.risk[k];
            rr_defined[k] = true;
        } else {
            rr[k] = 0.0;
            rr_defined[k] = false;
        }
    }
}

RiskCurve risk_from_hazards(const std::vector<double>& hazards) {
    RiskCurve c;
    double surv = 1.0;
    for (double h : hazards) {
        surv *= (1.0 - h);
        c.risk.push_back(1.0 - surv);
    }
    return c;
}

std::vector<double> arm_hazards(const AnalysisView& view, int arm,
                                const std::vector<double>& weights) {
    std::vector<double> events(view.horizon + 1, 0.0), atrisk(view.horizon + 1, 0.0);
    for (std::size_t i = 0; i < view.rows.size(); ++i) {
        const auto& r = view.rows[i];
        if (r.arm != arm || !r.at_risk) continue;
        double w = weights.empty() ? 1.0 : weights[i];
        atrisk[r.visit] += w;
        if (r.event) events[r.visit] += w;
    }
    std::vector<double> h(view.horizon + 1, 0.0);
    for (int k = 0; k <= view.horizon; ++k)
        if (atrisk[k] > 0.0) h[k] = events[k] / atrisk[k];
    return h;
}

CompetingCurves aalen_johansen(const AnalysisView& view, int arm,
                               const std::vector<double>& weights) {
    std::vector<double> ev(view.horizon + 1, 0.0), cmp(view.horizon + 1, 0.0),
        atrisk(view.horizon + 1, 0.0);
    for (std::size_t i = 0; i < view.rows.size(); ++i) {
        const auto& r = view.rows[i];
        if (r.arm != arm || !r.at_risk) continue;
        double w = weights.empty() ? 1.0 : weights[i];
        atrisk[r.visit] += w;
        if (r.event) ev[r.visit] += w;
        else if (r.competing) cmp[r.visit] += w;
    }
    CompetingCurves out;
    double surv = 1.0, ci_y = 0.0, ci_d = 0.0;
    for (int k = 0; k <= view.horizon; ++k) {
        double hy = atrisk[k] > 0.0 ? ev[k] / atrisk[k] : 0.0;
        double hd = atrisk[k] > 0.0 ? cmp[k] / atrisk[k] : 0.0;
        ci_y += hy * surv;
        ci_d += hd * surv;
        surv *= (1.0 - hy - hd);
        out.event.risk.push_back(ci_y);
        out.competing.risk.push_back(ci_d);
        out.survival.push_back(surv);
    }
    return out;
}

int truncate_weights(std::vector<double>& w, double percentile) {
    if (!(percentile > 0.0 && percentile <= 100.0))
        throw ConfigError("truncation percentile must be in (0, 100]");
    if (w.empty()) return 0;
    std::vector<double> sorted = w;
    std::sort(sorted.begin(), sorted.end());
    double pos = percentile / 100.0 * (static_cast<double>(sorted.size()) - 1.0);
    auto lo = static_cast<std::size_t>(std::floor(pos));
    auto hi = static_cast<std::size_t>(std::ceil(pos));
    double cap = sorted[lo] + (pos - std::floor(pos)) * (sorted[hi] - sorted[lo]);
    int count = 0;
    for (double& x : w) {
        if (x > cap) {
            x = cap;
            ++count;
        }
    }
    return count;
}

namespace design {

RowRefs at_risk_rows(const AnalysisView& view) {
    RowRefs out;
    for (const auto& r : view.rows)
        if (r.at_risk) out.push_back(&r);
    return out;
}

RowRefs all_rows(const AnalysisView& view) {
    RowRefs out;
    for (const auto& r : view.rows) out.push_back(&r);
    return out;
}

Eigen::VectorXd arm_col(const RowRefs& rows) {
    Eigen::VectorXd v(rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) v[i] = rows[i]->arm;
    return v;
}

Eigen::VectorXd treatment_col(const RowRefs& rows) {
    Eigen::VectorXd v(rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i)
        v[i] = rows[i]->treatment > 0 ? 1.0 : 0.0;
    return v;
}

Eigen::VectorXd covariate_col(const AnalysisView& view, const RowRefs& rows,
                              const std::string& name) {
    int idx = -1;
    for (std::size_t i = 0; i < view.covariate_names.size(); ++i)
        if (view.covariate_names[i] == name) idx = static_cast<int>(i);
    if (idx < 0) throw ModelError("covariate not in view: " + name);
    Eigen::VectorXd v(rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) v[i] = rows[i]->covariates[idx];
    return v;
}

Eigen::VectorXd time_linear(const RowRefs& rows) {
    Eigen::VectorXd v(rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) v[i] = rows[i]->visit;
    return v;
}

void add_time_dummies(DesignMatrix& d, const RowRefs& rows, int horizon,
                      const std::string& prefix) {
    for (int k = 1; k <= horizon; ++k) {
        Eigen::VectorXd col(rows.size());
        bool any = false;
        for (std::size_t i = 0; i < rows.size(); ++i) {
            col[i] = rows[i]->visit == k ? 1.0 : 0.0;
            any = any || col[i] > 0.0;
        }
        if (any) d.add_column(prefix + std::to_string(k), col);
    }
}

} // namespace design

} // namespace pptrial
