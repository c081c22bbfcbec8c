#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "tvar/assimilation.hpp"
#include "tvar/baselines.hpp"
#include "tvar/cme.hpp"
#include "tvar/common.hpp"
#include "tvar/dynamics.hpp"
#include "tvar/observation.hpp"

namespace tvar {

enum class Method { TensorVar, ThreeDVar, FourDVar, FourDVarAdjoint };

std::string method_name(Method m);

struct ExperimentConfig {
  SystemSpec system = SystemSpec::lorenz96(40);
  int obs_stride = 5;
  double noise_std = 0.1;
  int history_length = 10;

  int n_trajectories = 20;
  int trajectory_length = 2000;
  int burn_in = 300;

  FeaturePath path = FeaturePath::Kernel;
  KernelTrainConfig kernel;
  DeepTrainConfig deep;

  int window = 5;         // T+1 steps
  int forecast_steps = 0;
  int n_runs = 20;
  std::vector<Method> methods = {Method::TensorVar, Method::ThreeDVar,
                                 Method::FourDVar};
  int lbfgs_max_iterations = 200;
  double lbfgs_tol = 1e-5;
  bool diagonal_covariances = false;
  // Use only the diagonal of the empirical state covariance as the
  // baselines' background covariance B (the reference results are
  // consistent with a B that does not spatially interpolate unobserved
  // components; the full covariance remains available for study).
  bool baseline_diagonal_B = false;
  bool emit_plots = false;

  std::uint64_t seed = 0;
  std::filesystem::path out_dir = "out";

  static ExperimentConfig preset(const std::string& name);
  static ExperimentConfig from_json_file(const std::filesystem::path& path);
  std::string to_json() const;
};

struct RunResult {
  int run = 0;
  Method method = Method::TensorVar;
  double nrmse_percent = 0.0;
  double seconds = 0.0;
  int iterations = 0;
  bool failed = false;
  std::string error;
};

struct MethodSummary {
  Method method;
  double nrmse_mean = 0.0, nrmse_std = 0.0;
  double seconds_mean = 0.0;
  double iterations_mean = 0.0;
  int n_ok = 0;
};

struct ExperimentReport {
  std::vector<RunResult> runs;
  std::vector<MethodSummary> summaries;
  double state_max = 0.0, state_min = 0.0;
  double spectral_radius_dyn = 0.0;

  const MethodSummary& summary(Method m) const;
};

/// NRMSE in percent: per-entry RMS error (mean over timesteps and state
/// components) divided by (s_max - s_min).
double nrmse(const Matrix& estimate, const Matrix& truth, double s_max,
             double s_min);

/// Shared pieces of one experiment: data, trained model, baseline covariances.
struct ExperimentSetup {
  std::vector<Trajectory> trajectories;
  TrainingData data;
  ObservationSpec obs_spec;
  FeatureSpaceModel model;
  Vector mean_state;
  Matrix baseline_B;
  Matrix baseline_R;
  double state_max = 0.0, state_min = 0.0;
};

ExperimentSetup prepare_experiment(const ExperimentConfig& cfg);

/// Full protocol: generate/train, run every configured method on the same
/// windows, write runs.csv, summary.csv, and manifest.json into out_dir.
ExperimentReport run_experiment(const ExperimentConfig& cfg);

enum class AblationAxis { HistoryLength, FeatureDim };

/// One full experiment per grid value with shared trajectories and seeds;
/// emits ablation.csv alongside the per-point outputs.
std::map<double, ExperimentReport> run_ablation(const ExperimentConfig& cfg,
                                                AblationAxis axis,
                                                const std::vector<double>& grid);

/// Recompute summary.csv from an existing runs.csv.
void rebuild_summary(const std::filesystem::path& out_dir);

}  // namespace tvar
