#include "pptrial/diagnostics.hpp"
#include "pptrial/errors.hpp"
#include "pptrial/itt.hpp"
#include "pptrial/rng.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>

namespace pptrial {

namespace {

double quantile(std::vector<double> v, double q) {
    std::sort(v.begin(), v.end());
    double pos = q * (static_cast<double>(v.size()) - 1.0);
    auto lo = static_cast<std::size_t>(std::floor(pos));
    auto hi = static_cast<std::size_t>(std::ceil(pos));
    return v[lo] + (pos - std::floor(pos)) * (v[hi] - v[lo]);
}

} // namespace

LongitudinalDataset bootstrap_resample(const LongitudinalDataset& ds, const BootstrapPlan& plan,
                                       int replicate) {
    LongitudinalDataset out;
    out.schema = ds.schema;
    out.horizon = ds.horizon;
    out.comparator_arm_flagged = ds.comparator_arm_flagged;
    const auto n = ds.subjects.size();
    out.subjects.reserve(n);
    if (plan.identity_stub) {
        out.subjects = ds.subjects;
        return out;
    }
    CounterRng rng(plan.seed, static_cast<std::uint64_t>(replicate));
    for (std::size_t i = 0; i < n; ++i) {
        const auto& src = ds.subjects[static_cast<std::size_t>(rng.next_below(n))];
        SubjectHistory copy = src;
        copy.id = src.id + "#" + std::to_string(i);
        out.subjects.push_back(std::move(copy));
    }
    return out;
}

EffectEstimate bootstrap_ci(
    const std::function<EffectEstimate(const LongitudinalDataset&)>& estimator,
    const LongitudinalDataset& ds, const BootstrapPlan& plan) {
    if (plan.B < 2) throw ConfigError("bootstrap requires B >= 2");

    EffectEstimate point = estimator(ds);
    const std::size_t K = point.rd.size();

    std::vector<std::vector<double>> rd(K), r0(K), r1(K);
    std::map<std::string, int> failure_taxonomy;
    int failures = 0;
    for (int b = 0; b < plan.B; ++b) {
        try {
            EffectEstimate rep = estimator(bootstrap_resample(ds, plan, b));
            if (rep.rd.size() != K)
                throw ModelError("replicate curve length mismatch");
            for (std::size_t k = 0; k < K; ++k) {
                rd[k].push_back(rep.rd[k]);
                r0[k].push_back(rep.risk0.risk[k]);
                r1[k].push_back(rep.risk1.risk[k]);
            }
        } catch (const std::exception& err) {
            ++failures;
            ++failure_taxonomy[err.what()];
        }
    }
    if (failures > 0.05 * plan.B) {
        std::ostringstream os;
        os << "bootstrap aborted: " << failures << "/" << plan.B
           << " replicates failed; taxonomy:";
        for (const auto& [msg, count] : failure_taxonomy)
            os << "\n  " << count << "x " << msg;
        throw ModelError(os.str());
    }

    point.bootstrap_B = plan.B;
    point.bootstrap_failures = failures;
    point.rd_ci.resize(K);
    point.risk0_ci.resize(K);
    point.risk1_ci.resize(K);
    for (std::size_t k = 0; k < K; ++k) {
        point.rd_ci[k] = {quantile(rd[k], 0.025), quantile(rd[k], 0.975)};
        point.risk0_ci[k] = {quantile(r0[k], 0.025), quantile(r0[k], 0.975)};
        point.risk1_ci[k] = {quantile(r1[k], 0.025), quantile(r1[k], 0.975)};
    }
    if (failures > 0) {
        std::ostringstream os;
        os << failures << " bootstrap replicates failed; CIs use " << plan.B - failures
           << " successes";
        point.warnings.push_back(os.str());
    }
    return point;
}

WeightDiagnostics weight_diagnostics(const WeightSeries& ws) {
    if (ws.combined.empty()) throw DataError("empty weight series");
    WeightDiagnostics out;
    auto summarize = [&](const std::string& kind, const std::vector<double>& w,
                         int truncated) {
        WeightKindSummary s;
        s.kind = kind;
        double sum = 0.0, sumsq = 0.0;
        for (double x : w) {
            sum += x;
            sumsq += x * x;
        }
        const double n = static_cast<double>(w.size());
        s.mean = sum / n;
        s.sd = std::sqrt(std::max(0.0, sumsq / n - s.mean * s.mean));
        s.p1 = quantile(w, 0.01);
        s.p50 = quantile(w, 0.50);
        s.p99 = quantile(w, 0.99);
        s.p99_5 = quantile(w, 0.995);
        s.max = *std::max_element(w.begin(), w.end());
        s.truncated_count = truncated;
        int max_visit = 0;
        for (int v : ws.visit) max_visit = std::max(max_visit, v);
        std::vector<double> vsum(max_visit + 1, 0.0), vn(max_visit + 1, 0.0);
        for (std::size_t i = 0; i < w.size(); ++i) {
            vsum[static_cast<std::size_t>(ws.visit[i])] += w[i];
            vn[static_cast<std::size_t>(ws.visit[i])] += 1.0;
        }
        for (int v = 0; v <= max_visit; ++v)
            s.per_visit_mean.push_back(vn[static_cast<std::size_t>(v)] > 0
                                           ? vsum[static_cast<std::size_t>(v)] /
                                                 vn[static_cast<std::size_t>(v)]
                                           : 1.0);
        if (kind == "censoring" || kind == "combined") s.balance = ws.censoring_balance;
        s.drift_flag = std::abs(s.mean - 1.0) > 0.1 || s.balance > 0.1;
        out.kinds.push_back(std::move(s));
    };
    summarize("adherence", ws.adherence, 0);
    summarize("censoring", ws.censoring, 0);
    summarize("measurement", ws.measurement, 0);
    summarize("combined", ws.combined, ws.truncated_count);
    return out;
}

double evalue(double rr) {
    if (!(rr > 0.0)) throw ConfigError("e-value requires a risk ratio > 0");
    double r = rr >= 1.0 ? rr : 1.0 / rr;
    return r + std::sqrt(r * (r - 1.0));
}

PlaceboControlResult placebo_adherence_control(const LongitudinalDataset& ds,
                                               const StrategyProtocol& protocol,
                                               const std::vector<std::string>& covariates,
                                               int bootstrap_B, unsigned long long seed) {
    if (!ds.comparator_arm_flagged)
        throw ConfigError("no comparator arm flagged: placebo adherence control unavailable");

    // comparator-arm subjects, re-armed by initial adherence to the
    // comparator regimen; pseudo-arm 1 = adherers
    const int comparator_value = protocol.required_value(0);
    LongitudinalDataset sub;
    sub.schema = ds.schema;
    sub.horizon = ds.horizon;
    // pseudo-arms share no randomization, so the contrast needs covariate
    // adjustment: promote the visit-0 value of each supplied time-varying
    // covariate to an extra baseline column and standardize over all of them
    std::vector<int> promote_src;
    for (const auto& c : covariates) {
        int ci = ds.schema.index(c);
        promote_src.push_back(ci);
        sub.schema.defs.push_back(
            {c + "@0", ds.schema.defs[static_cast<std::size_t>(ci)].kind, true});
    }
    int adherers = 0, nonadherers = 0;
    for (const auto& s : ds.subjects) {
        if (s.arm != 0) continue;
        if (!s.visits.front().treatment) continue;
        SubjectHistory copy = s;
        copy.arm = *s.visits.front().treatment == comparator_value ? 1 : 0;
        for (auto& v : copy.visits) v.covariates.resize(sub.schema.size());
        for (std::size_t j = 0; j < promote_src.size(); ++j)
            copy.visits.front().covariates[ds.schema.size() + j] =
                copy.visits.front().covariates[static_cast<std::size_t>(promote_src[j])];
        (copy.arm == 1 ? adherers : nonadherers) += 1;
        sub.subjects.push_back(std::move(copy));
    }
    if (adherers == 0 || nonadherers == 0)
        throw DataError("contrast undefined: comparator arm has no " +
                        std::string(adherers == 0 ? "adherers" : "non-adherers"));

    std::vector<std::string> adj;
    for (const auto& def : sub.schema.defs)
        if (def.baseline) adj.push_back(def.name);
    auto run = [&](const LongitudinalDataset& d) {
        AnalysisView v = derive_analysis_view(d, nullptr, ViewSpec{}, "placebo adherence control");
        return itt_standardized(v, adj);
    };

    PlaceboControlResult out;
    BootstrapPlan plan;
    plan.B = bootstrap_B;
    plan.seed = seed;
    out.estimate = bootstrap_ci(run, sub, plan);
    out.estimate.estimand_label = "negative control: adherence to comparator";
    out.rd_ci = out.estimate.rd_ci.back();
    out.flagged = out.rd_ci.lo > 0.0 || out.rd_ci.hi < 0.0;
    out.verdict = out.flagged
                      ? "residual confounding suspected: comparator-adherence contrast "
                        "excludes the null"
                      : "null-consistent: no evidence of residual adherence confounding";
    return out;
}

} // namespace pptrial
