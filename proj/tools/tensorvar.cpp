// Tensor-Var command-line driver: data generation, training, assimilation
// runs, baselines, ablations, and report rebuilding.
#include <CLI11.hpp>

#include <filesystem>
#include <iostream>

#include "tvar/harness.hpp"
#include "tvar/io.hpp"

namespace fs = std::filesystem;
using namespace tvar;

namespace {

struct CommonOpts {
  std::string preset = "l96-40";
  std::string config;
  std::uint64_t seed = 0;
  std::string out = "out";

  ExperimentConfig resolve() const {
    ExperimentConfig cfg = config.empty()
                               ? ExperimentConfig::preset(preset)
                               : ExperimentConfig::from_json_file(config);
    cfg.seed = seed;
    cfg.out_dir = out;
    return cfg;
  }
};

void add_common(CLI::App* cmd, CommonOpts& opts) {
  cmd->add_option("--preset", opts.preset,
                  "Experiment preset (l96-40|l96-80|ks-128|ks-256|l96-smoke)");
  cmd->add_option("--config", opts.config, "JSON config file (overrides preset)");
  cmd->add_option("--seed", opts.seed, "Base RNG seed");
  cmd->add_option("--out", opts.out, "Output directory");
}

void print_summary(const ExperimentReport& report) {
  for (const auto& s : report.summaries)
    std::cout << method_name(s.method) << ": NRMSE " << s.nrmse_mean << " +- "
              << s.nrmse_std << " %, " << s.seconds_mean << " s/window, "
              << s.iterations_mean << " iterations (" << s.n_ok << " runs)\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Tensor-Var data assimilation toolkit"};
  app.require_subcommand(1);

  CommonOpts gen_opts, train_opts, assim_opts, base_opts, abl_opts;
  std::string train_path = "kernel";
  std::string base_method = "4dvar";
  std::string abl_axis = "history_length";
  std::vector<double> abl_grid;
  std::string report_dir = "out";
  std::string model_file, model_out = "model.tvmd";

  auto* gen = app.add_subcommand("generate", "Generate training trajectories");
  add_common(gen, gen_opts);

  auto* train = app.add_subcommand("train", "Train a Tensor-Var model");
  add_common(train, train_opts);
  train->add_option("--path", train_path, "Feature path: kernel|deep");
  train->add_option("--model-out", model_out, "Output model file");

  auto* assim = app.add_subcommand("assimilate",
                                   "Run Tensor-Var assimilation experiment");
  add_common(assim, assim_opts);
  assim->add_option("--path", train_path, "Feature path: kernel|deep");

  auto* base = app.add_subcommand("baseline", "Run a classical baseline");
  add_common(base, base_opts);
  base->add_option("--method", base_method, "3dvar|4dvar|4dvar-adjoint");

  auto* abl = app.add_subcommand("ablate", "Run an ablation grid");
  add_common(abl, abl_opts);
  abl->add_option("--axis", abl_axis, "history_length|feature_dim");
  abl->add_option("--grid", abl_grid, "Grid values")->expected(-1);

  auto* rep = app.add_subcommand("report", "Rebuild summary.csv from runs.csv");
  rep->add_option("--out", report_dir, "Experiment output directory");

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) {
      ExperimentConfig cfg = gen_opts.resolve();
      fs::create_directories(cfg.out_dir);
      for (int i = 0; i < cfg.n_trajectories; ++i) {
        Rng rng = derived_rng(cfg.seed, 100 + i);
        Vector init = spinup_initial(cfg.system, cfg.burn_in, rng);
        Trajectory traj = integrate(cfg.system, init, cfg.trajectory_length);
        save_trajectory(cfg.out_dir / ("traj_" + std::to_string(i) + ".tvar"),
                        traj);
      }
      std::cout << "wrote " << cfg.n_trajectories << " trajectories to "
                << cfg.out_dir << "\n";
    } else if (train->parsed()) {
      ExperimentConfig cfg = train_opts.resolve();
      cfg.path = train_path == "deep" ? FeaturePath::Deep : FeaturePath::Kernel;
      ExperimentSetup setup = prepare_experiment(cfg);
      fs::create_directories(cfg.out_dir);
      save_model(cfg.out_dir / model_out, setup.model);
      SpectralRadiusResult sr = spectral_radius(setup.model.dyn_op);
      std::cout << "model written to " << (cfg.out_dir / model_out)
                << "; dynamics spectral radius " << sr.value
                << (sr.converged ? "" : " (not converged)") << "\n";
    } else if (assim->parsed()) {
      ExperimentConfig cfg = assim_opts.resolve();
      cfg.path = train_path == "deep" ? FeaturePath::Deep : FeaturePath::Kernel;
      cfg.methods = {Method::TensorVar};
      print_summary(run_experiment(cfg));
    } else if (base->parsed()) {
      ExperimentConfig cfg = base_opts.resolve();
      Method m = Method::FourDVar;
      if (base_method == "3dvar") m = Method::ThreeDVar;
      else if (base_method == "4dvar-adjoint") m = Method::FourDVarAdjoint;
      else if (base_method != "4dvar")
        throw SpecError("unknown baseline method: " + base_method);
      cfg.methods = {m};
      print_summary(run_experiment(cfg));
    } else if (abl->parsed()) {
      ExperimentConfig cfg = abl_opts.resolve();
      AblationAxis axis = abl_axis == "feature_dim" ? AblationAxis::FeatureDim
                                                    : AblationAxis::HistoryLength;
      if (abl_grid.empty())
        abl_grid = axis == AblationAxis::FeatureDim
                       ? std::vector<double>{20, 40, 60, 120}
                       : std::vector<double>{0, 1, 2, 4, 8};
      cfg.methods = {Method::TensorVar};
      auto reports = run_ablation(cfg, axis, abl_grid);
      for (const auto& [g, rep] : reports) {
        const auto& s = rep.summary(Method::TensorVar);
        std::cout << abl_axis << " = " << g << ": NRMSE " << s.nrmse_mean
                  << " +- " << s.nrmse_std << " %\n";
      }
    } else if (rep->parsed()) {
      rebuild_summary(report_dir);
      std::cout << "summary.csv rebuilt in " << report_dir << "\n";
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
