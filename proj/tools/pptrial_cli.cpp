#include "pptrial/diagnostics.hpp"
#include "pptrial/errors.hpp"
#include "pptrial/plan.hpp"
#include "pptrial/sim.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>

namespace {

constexpr int kExitOk = 0;
constexpr int kExitPlanViolation = 2;
constexpr int kExitEstimationFailure = 3;

int cmd_validate(const std::string& plan_path) {
    pptrial::AnalysisPlan plan = pptrial::load_plan(plan_path);
    pptrial::LongitudinalDataset ds = pptrial::load_dataset(plan.dataset_path, plan.schema);
    pptrial::ValidationReport rep = pptrial::validate_dataset(ds);
    if (rep.issues.empty()) {
        std::cout << "dataset valid: " << ds.subjects.size() << " subjects, horizon "
                  << ds.horizon << "\n";
        return kExitOk;
    }
    std::cout << rep.to_string();
    return rep.ok() ? kExitOk : kExitEstimationFailure;
}

int cmd_simulate(const std::string& preset_name, int n, unsigned long long seed,
                 const std::string& out_dir) {
    pptrial::SimConfig cfg = pptrial::preset(preset_name);
    cfg.n = n;
    std::filesystem::create_directories(out_dir);
    pptrial::LongitudinalDataset ds = pptrial::generate_trial(cfg, seed);
    auto path = [&](const std::string& suffix) {
        return (std::filesystem::path(out_dir) / (preset_name + suffix)).string();
    };
    pptrial::save_dataset_csv(ds, path(".csv"));
    pptrial::GroundTruth truth =
        pptrial::ground_truth(cfg, pptrial::assigned_strategy(), 100000, seed + 1);
    {
        std::ofstream f(path("_truth.json"));
        f << pptrial::truth_to_json(truth) << '\n';
    }
    {
        std::ofstream f(path("_config.json"));
        f << pptrial::config_to_json(cfg) << '\n';
    }
    std::cout << "preset " << preset_name << ": n=" << n << " seed=" << seed
              << "\ntrue RD at horizon = " << truth.rd << " (MC SE " << truth.mc_se << ")\n"
              << "files: " << path(".csv") << ", " << path("_truth.json") << ", "
              << path("_config.json") << "\n";
    return kExitOk;
}

int cmd_estimate(const std::string& plan_path, const std::string& out_dir, bool allow_partial) {
    pptrial::AnalysisPlan plan = pptrial::load_plan(plan_path);
    if (!out_dir.empty()) plan.out_dir = out_dir;
    if (allow_partial) plan.allow_partial = true;
    pptrial::RunReport rep = pptrial::run_plan(plan);
    std::cout << rep.report_json << "\n";
    if (rep.failed_requests > 0)
        std::cerr << rep.failed_requests << " request(s) failed (allow-partial)\n";
    return kExitOk;
}

int cmd_diagnose(const std::string& plan_path) {
    pptrial::AnalysisPlan plan = pptrial::load_plan(plan_path);
    pptrial::LongitudinalDataset ds = pptrial::load_dataset(plan.dataset_path, plan.schema);

    bool did_anything = false;
    for (const auto& req : plan.requests) {
        if (req.estimator != "pp_sustained_ipw") continue;
        if (!plan.protocol) throw pptrial::ConfigError("diagnose requires a protocol");
        pptrial::SustainedIpwOptions opts;
        opts.timevarying_covariates = req.covariates;
        auto res = pptrial::pp_ipw_sustained(ds, *plan.protocol, opts);
        auto diag = pptrial::weight_diagnostics(res.weights);
        std::cout << "request '" << req.label << "' weight diagnostics:\n";
        for (const auto& k : diag.kinds)
            std::cout << "  " << k.kind << ": mean=" << k.mean << " sd=" << k.sd
                      << " p99.5=" << k.p99_5 << " max=" << k.max
                      << " truncated=" << k.truncated_count
                      << (k.drift_flag ? "  [drift]" : "") << "\n";
        if (!res.estimate.rr.empty() && res.estimate.rr_defined.back() &&
            res.estimate.rr.back() > 0)
            std::cout << "  e-value at horizon RR: " << pptrial::evalue(res.estimate.rr.back())
                      << "\n";
        did_anything = true;
    }
    if (ds.comparator_arm_flagged && plan.protocol) {
        std::vector<std::string> covs;
        for (const auto& r : plan.requests)
            if (r.estimator == "pp_sustained_ipw") covs = r.covariates;
        auto placebo = pptrial::placebo_adherence_control(ds, *plan.protocol, covs);
        std::cout << "placebo adherence control: " << placebo.verdict << " (RD CI ["
                  << placebo.rd_ci.lo << ", " << placebo.rd_ci.hi << "])\n";
        did_anything = true;
    }
    if (!did_anything)
        std::cout << "nothing to diagnose: add a pp_sustained_ipw request or flag a "
                     "comparator arm\n";
    return kExitOk;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"estimation toolkit for intention-to-treat and per-protocol effects in "
                 "pragmatic trials"};
    app.require_subcommand(1);

    std::string plan_path, out_dir, preset_name;
    unsigned long long seed = 0;
    int n = 1000;
    bool allow_partial = false;

    auto* validate = app.add_subcommand("validate", "check a dataset against its schema");
    validate->add_option("--plan", plan_path, "analysis plan (supplies dataset and schema)")
        ->required();

    auto* simulate = app.add_subcommand("simulate", "generate a synthetic trial with truth");
    simulate->add_option("preset", preset_name, "scenario preset name")->required();
    simulate->add_option("n", n, "number of subjects");
    simulate->add_option("seed", seed, "master seed");
    simulate->add_option("out", out_dir, "output directory")->default_val("out");

    auto* estimate = app.add_subcommand("estimate", "run an analysis plan");
    estimate->add_option("--plan", plan_path, "analysis plan JSON")->required();
    estimate->add_option("--out", out_dir, "output directory for the report bundle");
    estimate->add_flag("--allow-partial", allow_partial,
                       "emit the bundle even when some requests fail");

    auto* diagnose = app.add_subcommand("diagnose", "weight and sensitivity diagnostics");
    diagnose->add_option("--plan", plan_path, "analysis plan JSON")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (validate->parsed()) return cmd_validate(plan_path);
        if (simulate->parsed()) return cmd_simulate(preset_name, n, seed, out_dir);
        if (estimate->parsed()) return cmd_estimate(plan_path, out_dir, allow_partial);
        if (diagnose->parsed()) return cmd_diagnose(plan_path);
    } catch (const pptrial::ConfigError& e) {
        std::cerr << "plan error: " << e.what() << "\n";
        return kExitPlanViolation;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitEstimationFailure;
    }
    return kExitOk;
}
