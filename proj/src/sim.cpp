#include "pptrial/sim.hpp"
#include "pptrial/errors.hpp"
#include "pptrial/glm.hpp"
#include "pptrial/rng.hpp"

#include <nlohmann/json.hpp>

#include <cmath>
#include <sstream>

namespace pptrial {

namespace {

double checked_prob(double eta, const char* node) {
    if (!(std::abs(eta) <= 30.0))
        throw ConfigError(std::string("structural probability escapes (0,1): |") + node +
                          " linear predictor| = " + std::to_string(eta));
    return expit(eta);
}

struct SubjectDraws {
    double l0 = 0.0, nc = 0.0, u = 0.0;
    int z = 0;
    int complier = 0;
};

SubjectDraws draw_baseline(const SimConfig& c, CounterRng& rng) {
    SubjectDraws s;
    s.l0 = rng.bernoulli(c.p_l0) ? 1.0 : 0.0;
    s.u = c.use_u ? rng.next_normal() : 0.0;
    if (c.nc_covariate)
        s.nc = rng.bernoulli(checked_prob(c.nc_int + c.nc_u * s.u, "NC")) ? 1.0 : 0.0;
    s.z = rng.bernoulli(checked_prob(c.z_int + c.z_l0 * s.l0, "Z")) ? 1 : 0;
    if (c.treat_mode == SimConfig::TreatMode::IvOneSided)
        s.complier =
            rng.bernoulli(checked_prob(c.t_int + c.t_l0 * s.l0 + c.t_u * s.u, "type")) ? 1 : 0;
    return s;
}

double l_hazard(const SimConfig& c, const SubjectDraws& s, double l_prev, double a_prev) {
    return checked_prob(c.l_int + c.l_l0 * s.l0 + c.l_prev * l_prev + c.l_a * a_prev + c.l_u * s.u,
                        "L");
}

double y_hazard(const SimConfig& c, const SubjectDraws& s, double a, double l) {
    return checked_prob(c.y_int + c.y_a * a + c.y_l * l + c.y_l0 * s.l0 + c.y_u * s.u, "Y");
}

double d_hazard(const SimConfig& c, const SubjectDraws& s, double a, double l) {
    if (!c.competing) return 0.0;
    return checked_prob(c.d_int + c.d_a * a + c.d_l * l + c.d_l0 * s.l0, "D");
}

double c_hazard(const SimConfig& c, const SubjectDraws& s, double a, double l) {
    if (!c.dropout) return 0.0;
    return checked_prob(c.c_int + c.c_a * a + c.c_l * l + c.c_l0 * s.l0, "C");
}

} // namespace

CovariateSchema SimConfig::schema() const {
    CovariateSchema s;
    s.defs.push_back({"L0", CovariateKind::Binary, true});
    s.defs.push_back({"L", CovariateKind::Binary, false});
    if (nc_covariate) s.defs.push_back({"NC", CovariateKind::Binary, true});
    return s;
}

LongitudinalDataset generate_trial(const SimConfig& config, unsigned long long seed) {
    if (config.n < 1 || config.K < 0) throw ConfigError("simulator requires n >= 1, K >= 0");
    LongitudinalDataset ds;
    ds.schema = config.schema();
    ds.horizon = config.K;
    ds.comparator_arm_flagged = config.comparator_flagged;
    ds.subjects.reserve(static_cast<std::size_t>(config.n));

    const std::size_t n_cov = ds.schema.size();
    for (int i = 0; i < config.n; ++i) {
        CounterRng rng(seed, static_cast<std::uint64_t>(i));
        SubjectDraws b = draw_baseline(config, rng);

        SubjectHistory sub;
        {
            std::ostringstream os;
            os << 's' << i;
            sub.id = os.str();
        }
        sub.arm = b.z;

        double l_prev = 0.0, a_prev = 0.0;
        int a_point = -1;
        for (int k = 0; k <= config.K; ++k) {
            double l = rng.bernoulli(l_hazard(config, b, l_prev, a_prev)) ? 1.0 : 0.0;

            int a;
            switch (config.treat_mode) {
                case SimConfig::TreatMode::IvOneSided:
                    a = b.z * b.complier;
                    break;
                case SimConfig::TreatMode::Point:
                    if (k == 0)
                        a_point = rng.bernoulli(checked_prob(
                                      config.a_int + config.a_z * b.z + config.a_l0 * b.l0 +
                                          config.a_l * l + config.a_u * b.u,
                                      "A"))
                                      ? 1
                                      : 0;
                    a = a_point;
                    break;
                default:
                    a = rng.bernoulli(checked_prob(config.a_int + config.a_z * b.z +
                                                       config.a_l0 * b.l0 + config.a_l * l +
                                                       config.a_prev * a_prev + config.a_u * b.u,
                                                   "A"))
                            ? 1
                            : 0;
            }

            bool measured = true;
            if (config.missing_adherence)
                measured = rng.bernoulli(
                    checked_prob(config.m_int + config.m_l * l + config.m_a * a, "M"));

            VisitRecord rec;
            rec.visit = k;
            if (measured)
                rec.treatment = a;
            else
                rec.adherence_measured = false;
            rec.covariates.assign(n_cov, std::nullopt);
            rec.covariates[0] = b.l0;
            rec.covariates[1] = l;
            if (config.nc_covariate) rec.covariates[2] = b.nc;

            double hy = y_hazard(config, b, a, l);
            double hd = d_hazard(config, b, a, l);
            double u = rng.next_double();
            bool terminal = false;
            if (u < hy) {
                rec.outcome = 1;
                terminal = true;
            } else if (u < hy + hd) {
                rec.competing = 1;
                terminal = true;
            } else if (rng.bernoulli(c_hazard(config, b, a, l))) {
                rec.ltfu = 1;
                terminal = true;
            }
            sub.visits.push_back(std::move(rec));
            if (terminal) break;
            l_prev = l;
            a_prev = a;
        }
        ds.subjects.push_back(std::move(sub));
    }
    return ds;
}

GroundTruth ground_truth(const SimConfig& config, const StrategyProtocol& protocol, int n_mc,
                         unsigned long long seed, bool disable_competing) {
    if (n_mc < 100) throw ConfigError("ground truth requires n_mc >= 100");
    const int K = config.K;
    GroundTruth out;
    out.risk0.assign(static_cast<std::size_t>(K) + 1, 0.0);
    out.risk1.assign(static_cast<std::size_t>(K) + 1, 0.0);

    double sum_d = 0.0, sumsq_d = 0.0;
    double sum_ate = 0.0, sumsq_ate = 0.0;
    double comp_sum_d = 0.0, comp_sumsq_d = 0.0, comp_n = 0.0;

    // per replicate: one baseline draw, then each counterfactual world replays
    // an identical uniform stream (common random numbers); only the treatment
    // path differs, so S-NULL contrasts are exactly zero
    for (int r = 0; r < n_mc; ++r) {
        CounterRng base_rng(seed, static_cast<std::uint64_t>(r));
        SubjectDraws b = draw_baseline(config, base_rng);

        // risk curve along one forced-treatment path
        auto run = [&](auto&& treatment_at, std::vector<double>* curve) -> double {
            CounterRng rng(seed ^ 0x7472757468ull, static_cast<std::uint64_t>(r));
            std::vector<double> l_path(static_cast<std::size_t>(K) + 1, 0.0);
            std::vector<int> a_hist;
            double l_prev = 0.0, a_prev = 0.0, surv = 1.0, risk = 0.0;
            for (int k = 0; k <= K; ++k) {
                double l = rng.bernoulli(l_hazard(config, b, l_prev, a_prev)) ? 1.0 : 0.0;
                l_path[static_cast<std::size_t>(k)] = l;
                int a = treatment_at(k, l_path, a_hist);
                double hy = y_hazard(config, b, a, l);
                double hd = disable_competing ? 0.0 : d_hazard(config, b, a, l);
                risk += hy * surv;
                surv *= (1.0 - hy - hd);
                if (curve) (*curve)[static_cast<std::size_t>(k)] += risk;
                a_hist.push_back(a);
                l_prev = l;
                a_prev = a;
            }
            return risk;
        };

        auto strategy_at = [&](int arm) {
            return [&config, &b, arm, this_protocol = &protocol](
                       int k, const std::vector<double>& l_path,
                       const std::vector<int>& a_hist) {
                auto lookup = [&](const std::string& name, int visit) -> double {
                    if (name == "L") return l_path[static_cast<std::size_t>(visit)];
                    if (name == "L0") return b.l0;
                    if (name == "NC" && config.nc_covariate) return b.nc;
                    throw ConfigError(
                        "strategy references covariates absent from the structural model: " +
                        name);
                };
                return strategy_treatment(*this_protocol, arm, lookup, k, a_hist);
            };
        };

        double r0 = run(strategy_at(0), &out.risk0);
        double r1 = run(strategy_at(1), &out.risk1);
        double d = r1 - r0;
        sum_d += d;
        sumsq_d += d * d;

        auto forced = [](int value) {
            return [value](int, const std::vector<double>&, const std::vector<int>&) {
                return value;
            };
        };
        double a1 = run(forced(1), nullptr);
        double a0 = run(forced(0), nullptr);
        double ate_d = a1 - a0;
        sum_ate += ate_d;
        sumsq_ate += ate_d * ate_d;
        if (config.treat_mode == SimConfig::TreatMode::IvOneSided && b.complier) {
            comp_sum_d += ate_d;
            comp_sumsq_d += ate_d * ate_d;
            comp_n += 1.0;
        }
    }

    const double n = n_mc;
    for (auto& x : out.risk0) x /= n;
    for (auto& x : out.risk1) x /= n;
    out.rd = out.risk1.back() - out.risk0.back();
    if (out.risk0.back() > 0.0) {
        out.rr = out.risk1.back() / out.risk0.back();
        out.rr_defined = true;
    }
    double var_d = std::max(0.0, sumsq_d / n - (sum_d / n) * (sum_d / n));
    out.mc_se = std::sqrt(var_d / n);
    out.ate = sum_ate / n;
    double var_ate = std::max(0.0, sumsq_ate / n - out.ate * out.ate);
    out.ate_se = std::sqrt(var_ate / n);
    if (config.treat_mode == SimConfig::TreatMode::IvOneSided && comp_n > 0) {
        double m = comp_sum_d / comp_n;
        out.complier_rd = m;
        out.complier_se =
            std::sqrt(std::max(0.0, comp_sumsq_d / comp_n - m * m) / comp_n);
        out.complier_share = comp_n / n;
    }
    return out;
}

StrategyProtocol assigned_strategy() {
    StrategyProtocol p;
    p.label = "assigned treatment, sustained";
    p.assigned_value_arm0 = 0;
    p.assigned_value_arm1 = 1;
    return p;
}

std::vector<SimConfig> scenario_presets() {
    std::vector<SimConfig> out;
    auto preset_from = [&out](const std::string& name) -> SimConfig {
        for (const auto& c : out)
            if (c.name == name) return c;
        throw ConfigError("preset catalog ordering broken: " + name);
    };

    {
        SimConfig c;
        c.name = "S-NULL";
        c.a_int = -1.0, c.a_z = 2.5, c.a_l = 0.5, c.a_prev = 1.0;
        c.l_int = -0.5, c.l_prev = 0.8; // no l_a: nothing downstream of A
        c.y_int = -2.3, c.y_l = 0.5, c.y_l0 = 0.4, c.y_a = 0.0;
        c.validates = "null preservation of every estimator";
        c.indicts = "nothing; the sharp null holds by construction";
        out.push_back(c);
    }
    {
        SimConfig c;
        c.name = "S-IMBAL";
        c.z_int = 0.0, c.z_l0 = 1.4; // designed baseline imbalance in L0
        c.a_int = -25.0, c.a_z = 50.0; // full adherence: A = Z
        c.l_int = -0.5;
        c.y_int = -2.6, c.y_a = -0.7, c.y_l0 = 1.6;
        c.validates = "standardization and baseline IPW";
        c.indicts = "the unadjusted contrast under baseline imbalance";
        out.push_back(c);
    }
    {
        SimConfig c;
        c.name = "S-LTFU";
        c.a_int = -25.0, c.a_z = 50.0;
        c.l_int = -1.2, c.l_prev = 1.0, c.l_l0 = 0.8;
        c.y_int = -2.8, c.y_a = -0.8, c.y_l = 1.4, c.y_l0 = 0.5;
        c.dropout = true;
        c.c_int = -2.2, c.c_l = 2.2, c.c_a = -1.0;
        c.validates = "inverse probability of censoring weighting";
        c.indicts = "the pseudo-ITT analysis that ignores informative dropout";
        out.push_back(c);
    }
    {
        SimConfig c;
        c.name = "S-COMPETE";
        c.a_int = -25.0, c.a_z = 50.0;
        c.l_int = -0.8, c.l_prev = 0.8;
        c.y_int = -2.5, c.y_a = -0.6, c.y_l = 0.8, c.y_l0 = 0.4;
        c.competing = true;
        c.d_int = -2.4, c.d_a = -0.5, c.d_l = 0.6, c.d_l0 = 0.5;
        c.validates = "total/direct/composite competing-event estimands";
        c.indicts = "analyses that silently censor competing events";
        out.push_back(c);
    }
    {
        SimConfig c;
        c.name = "S-POINT";
        c.treat_mode = SimConfig::TreatMode::Point;
        // one-sided initiation (the comparator arm has no access); sicker
        // subjects initiate less
        c.a_int = -24.7, c.a_z = 25.0, c.a_l0 = -1.4;
        c.l_int = -0.5;
        c.y_int = -2.4, c.y_a = -0.6, c.y_l0 = 1.5, c.y_l = 0.3;
        c.validates = "point-intervention per-protocol IPW and standardization";
        c.indicts = "naive per-protocol, as-treated, and modified-ITT contrasts";
        out.push_back(c);
    }
    {
        SimConfig c = preset_from("S-POINT");
        c.name = "S-POINT-UNCONF";
        c.a_l0 = 0.0; // adherence unconfounded: every comparator is valid here
        c.validates = "the validity condition for naive comparators";
        c.indicts = "nothing; adherence is randomized in effect";
        out.push_back(c);
    }
    {
        SimConfig c;
        c.name = "S-IV";
        c.treat_mode = SimConfig::TreatMode::IvOneSided;
        c.use_u = true;
        c.t_int = 0.65, c.t_l0 = -0.5, c.t_u = 0.8; // latent compliance type
        c.l_int = -0.5;
        c.y_int = -2.2, c.y_a = -0.8, c.y_l0 = 0.5, c.y_u = 0.7, c.y_l = 0.3;
        c.validates = "Wald/LATE, Balke-Pearl bounds, complier profiling";
        c.indicts = "as-treated contrasts confounded by the latent type";
        out.push_back(c);
    }
    {
        SimConfig c;
        c.name = "S-SUSTAINED";
        c.a_int = -1.2, c.a_z = 2.4, c.a_l = -2.6, c.a_prev = 1.8;
        c.l_int = -0.8, c.l_l0 = 0.8, c.l_prev = 1.8, c.l_a = -1.1; // feedback
        c.y_int = -2.9, c.y_a = -0.5, c.y_l = 1.1, c.y_l0 = 0.5;
        c.validates = "time-varying IPW, parametric g-formula, g-estimation";
        c.indicts = "baseline-only covariate adjustment under feedback";
        out.push_back(c);
    }
    {
        SimConfig c = preset_from("S-SUSTAINED");
        c.name = "S-MISS";
        c.missing_adherence = true;
        c.l_a = 0.0; // no feedback: isolates the measurement mechanism
        // sicker and currently-treated person-time skips adherence ascertainment
        c.m_int = 2.0, c.m_l = -1.5, c.m_a = -1.0;
        c.validates = "inverse probability of measurement weighting";
        c.indicts = "the missing-equals-nonadherent imputation policy";
        out.push_back(c);
    }
    {
        SimConfig c;
        c.name = "S-NC";
        c.comparator_flagged = true;
        c.nc_covariate = true;
        c.nc_int = -0.8; // pure noise control outcome
        c.a_int = -0.8, c.a_z = 2.0, c.a_l = -1.2, c.a_prev = 1.6;
        c.l_int = -0.8, c.l_l0 = 0.8, c.l_prev = 1.0, c.l_a = -0.8;
        // null treatment effect: comparator-arm adherence must be inert so the
        // placebo contrast isolates confounding alone
        c.y_int = -2.7, c.y_a = 0.0, c.y_l = 1.4, c.y_l0 = 0.5;
        c.validates = "negative-control machinery on a clean scenario";
        c.indicts = "nothing; adherence confounders are fully measured";
        out.push_back(c);
    }
    {
        SimConfig c = preset_from("S-NC");
        c.name = "S-NC-U";
        c.use_u = true;
        c.a_u = 1.2;
        c.y_u = 1.0;
        c.nc_u = 1.0;
        c.validates = "detection of unmeasured adherence confounding";
        c.indicts = "adherence adjustment that assumes all confounders measured";
        out.push_back(c);
    }
    return out;
}

SimConfig preset(const std::string& name) {
    for (const auto& c : scenario_presets())
        if (c.name == name) return c;
    std::ostringstream os;
    os << "unknown preset '" << name << "'; available:";
    for (const auto& c : scenario_presets()) os << ' ' << c.name;
    throw ConfigError(os.str());
}

std::string truth_to_json(const GroundTruth& t) {
    nlohmann::json j;
    j["risk0"] = t.risk0;
    j["risk1"] = t.risk1;
    j["rd"] = t.rd;
    if (t.rr_defined) j["rr"] = t.rr;
    j["mc_se"] = t.mc_se;
    j["ate"] = t.ate;
    j["ate_se"] = t.ate_se;
    if (t.complier_rd) {
        j["complier_rd"] = *t.complier_rd;
        j["complier_se"] = *t.complier_se;
        j["complier_share"] = *t.complier_share;
    }
    return j.dump(2);
}

std::string config_to_json(const SimConfig& c) {
    nlohmann::json j;
    j["name"] = c.name;
    j["n"] = c.n;
    j["K"] = c.K;
    j["p_l0"] = c.p_l0;
    j["z"] = {{"int", c.z_int}, {"l0", c.z_l0}};
    j["use_u"] = c.use_u;
    j["L"] = {{"int", c.l_int}, {"l0", c.l_l0}, {"prev", c.l_prev}, {"a", c.l_a}, {"u", c.l_u}};
    j["treat_mode"] = c.treat_mode == SimConfig::TreatMode::Sustained ? "sustained"
                      : c.treat_mode == SimConfig::TreatMode::Point   ? "point"
                                                                      : "iv_one_sided";
    j["A"] = {{"int", c.a_int}, {"z", c.a_z},       {"l0", c.a_l0},
              {"l", c.a_l},     {"prev", c.a_prev}, {"u", c.a_u}};
    j["type"] = {{"int", c.t_int}, {"l0", c.t_l0}, {"u", c.t_u}};
    j["dropout"] = c.dropout;
    j["C"] = {{"int", c.c_int}, {"l", c.c_l}, {"a", c.c_a}, {"l0", c.c_l0}};
    j["competing"] = c.competing;
    j["D"] = {{"int", c.d_int}, {"l", c.d_l}, {"a", c.d_a}, {"l0", c.d_l0}};
    j["Y"] = {{"int", c.y_int}, {"a", c.y_a}, {"l", c.y_l}, {"l0", c.y_l0}, {"u", c.y_u}};
    j["missing_adherence"] = c.missing_adherence;
    j["M"] = {{"int", c.m_int}, {"l", c.m_l}, {"a", c.m_a}};
    j["nc_covariate"] = c.nc_covariate;
    j["NC"] = {{"int", c.nc_int}, {"u", c.nc_u}};
    j["comparator_flagged"] = c.comparator_flagged;
    j["validates"] = c.validates;
    j["indicts"] = c.indicts;
    return j.dump(2);
}

} // namespace pptrial
