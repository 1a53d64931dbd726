#pragma once

#include <optional>
#include <string>
#include <vector>

#include "pptrial/data.hpp"

namespace pptrial {

// Structural generating model.  Every node is logit-linear, so estimator
// models can be exactly correctly specified; misspecification is always an
// explicit analysis choice, never an accident of the generator.
//
// Baseline: L0 ~ Bernoulli(p_l0); U ~ N(0,1) latent when use_u;
//           Z ~ Bernoulli(expit(z_int + z_l0 L0))
// Time-varying (L_{-1} = A_{-1} = 0):
//   L_k ~ Bern(expit(l_int + l_l0 L0 + l_prev L_{k-1} + l_a A_{k-1} + l_u U))
//   A_k: Sustained  ~ Bern(expit(a_int + a_z Z + a_l0 L0 + a_l L_k + a_prev A_{k-1} + a_u U))
//        Point      = A_0 carried forward, A_0 from the same form at k = 0
//        IvOneSided = Z * complier; complier ~ Bern(expit(t_int + t_l0 L0 + t_u U))
//   event draw: Y with hazard expit(y_int + y_a A_k + y_l L_k + y_l0 L0 + y_u U),
//               else competing with hazard expit(d_int + ...) when enabled,
//               else loss to follow-up with hazard expit(c_int + ...) when enabled
//   adherence measurement: recorded iff Bern(expit(m_int + m_l L_k + m_a A_k))
//   when missing_adherence; the latent A still drives the world
struct SimConfig {
    std::string name;
    int n = 1000;
    int K = 4; // visits 0..K

    double p_l0 = 0.5;
    double z_int = 0.0, z_l0 = 0.0;
    bool use_u = false;

    double l_int = -0.5, l_l0 = 0.0, l_prev = 0.0, l_a = 0.0, l_u = 0.0;

    enum class TreatMode { Sustained, Point, IvOneSided };
    TreatMode treat_mode = TreatMode::Sustained;
    double a_int = 0.0, a_z = 0.0, a_l0 = 0.0, a_l = 0.0, a_prev = 0.0, a_u = 0.0;
    double t_int = 0.0, t_l0 = 0.0, t_u = 0.0; // latent complier-type model

    bool dropout = false;
    double c_int = -30.0, c_l = 0.0, c_a = 0.0, c_l0 = 0.0;

    bool competing = false;
    double d_int = -30.0, d_l = 0.0, d_a = 0.0, d_l0 = 0.0;

    double y_int = -2.5, y_a = 0.0, y_l = 0.0, y_l0 = 0.0, y_u = 0.0;

    bool missing_adherence = false;
    double m_int = 30.0, m_l = 0.0, m_a = 0.0;

    bool nc_covariate = false; // extra baseline negative-control covariate
    double nc_int = 0.0, nc_u = 0.0;

    bool comparator_flagged = false;

    std::string validates; // which estimator this preset vouches for
    std::string indicts;   // which naive analysis it demonstrates as biased

    CovariateSchema schema() const;
};

struct GroundTruth {
    std::vector<double> risk0, risk1; // per visit, strategy(arm 0) / strategy(arm 1)
    double rd = 0.0;
    double rr = 0.0;
    bool rr_defined = false;
    double mc_se = 0.0; // Monte-Carlo SE of rd under common random numbers

    double ate = 0.0, ate_se = 0.0; // always-treat vs never-treat risk difference
    std::optional<double> complier_rd, complier_se, complier_share; // IV scenarios
};

LongitudinalDataset generate_trial(const SimConfig& config, unsigned long long seed);

// Forward-simulates the structural equations with treatment forced by the
// strategy engine, dropout and nonadherence disabled, and U retained; risks
// accumulate along the hazard path (no event draws), so the only Monte-Carlo
// noise is the covariate path.
GroundTruth ground_truth(const SimConfig& config, const StrategyProtocol& protocol, int n_mc,
                         unsigned long long seed, bool disable_competing = false);

std::vector<SimConfig> scenario_presets();
SimConfig preset(const std::string& name);

// Static full-adherence protocol matching the generator's assignment arms.
StrategyProtocol assigned_strategy();

std::string truth_to_json(const GroundTruth& truth);
std::string config_to_json(const SimConfig& config);

} // namespace pptrial
