#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "tvar/cme.hpp"
#include "tvar/io.hpp"

using namespace tvar;
namespace fs = std::filesystem;

namespace {
fs::path temp_file(const std::string& name) {
  fs::path p = fs::temp_directory_path() / ("tvar_io_" + name);
  fs::remove(p);
  fs::remove(fs::path(p.string() + ".json"));
  return p;
}

Matrix random_matrix(int r, int c, Rng& rng) {
  Matrix m(r, c);
  for (int i = 0; i < r; ++i) m.row(i) = standard_normal(c, rng).transpose();
  return m;
}
}  // namespace

TEST_CASE("trajectory round trip is exact") {
  Rng rng = derived_rng(1, 0);
  Trajectory traj;
  traj.spec = SystemSpec::lorenz96(6, 8.5, 99);
  traj.dt_sample = traj.spec.dt_sample;
  traj.states = random_matrix(11, 6, rng);

  fs::path p = temp_file("traj.tvar");
  save_trajectory(p, traj);
  Trajectory back = load_trajectory(p);
  CHECK((back.states - traj.states).norm() == 0.0);
  CHECK(back.spec.state_dim == 6);
  CHECK(back.spec.forcing == doctest::Approx(8.5));
  CHECK(back.spec.rng_seed == 99);
  CHECK(fs::exists(fs::path(p.string() + ".json")));
  fs::remove(p);
  fs::remove(fs::path(p.string() + ".json"));
}

TEST_CASE("trajectory loader rejects foreign files") {
  fs::path p = temp_file("bad.tvar");
  {
    std::ofstream os(p, std::ios::binary);
    os << "NOPEnonsense";
  }
  CHECK_THROWS_AS(load_trajectory(p), NumericError);
  CHECK_THROWS_AS(load_trajectory(p.string() + ".missing"), NumericError);
  fs::remove(p);
}

TEST_CASE("kernel model container round trip") {
  Rng rng = derived_rng(2, 0);
  TrainingData data;
  const int n = 200, n_s = 5;
  data.dyn_current = random_matrix(n, n_s, rng);
  data.dyn_next = random_matrix(n, n_s, rng);
  data.obs_states = data.dyn_current;
  data.obs_values = data.dyn_current.leftCols(2);
  data.obs_histories = random_matrix(n, 4, rng);

  KernelTrainConfig cfg;
  cfg.d_s = 10;
  cfg.d_o = 5;
  cfg.d_h = 3;
  cfg.n_landmark = 80;
  cfg.seed = 4;
  FeatureSpaceModel model = train_kernel_model(data, cfg);

  fs::path p = temp_file("model.tvmd");
  save_model(p, model);
  FeatureSpaceModel back = load_model(p);

  CHECK(back.d_s == model.d_s);
  CHECK((back.dyn_op - model.dyn_op).norm() == 0.0);
  CHECK((back.inv_obs_op - model.inv_obs_op).norm() == 0.0);
  CHECK((back.B - model.B).norm() == 0.0);
  // The reloaded model must produce identical features.
  Matrix probe = random_matrix(7, n_s, rng);
  CHECK((back.state_features(probe) - model.state_features(probe)).norm() ==
        0.0);
  Matrix obs_probe = random_matrix(7, 2, rng);
  CHECK((back.obs_features(obs_probe) - model.obs_features(obs_probe)).norm() ==
        0.0);
  fs::remove(p);
}

TEST_CASE("deep model container round trip") {
  Rng rng = derived_rng(3, 0);
  TrainingData data;
  const int n = 150, n_s = 4;
  data.dyn_current = random_matrix(n, n_s, rng);
  data.dyn_next = random_matrix(n, n_s, rng);
  data.obs_states = data.dyn_current;
  data.obs_values = data.dyn_current.leftCols(2);
  data.obs_histories = random_matrix(n, 4, rng);

  DeepTrainConfig cfg;
  cfg.d_s = 6;
  cfg.d_o = 4;
  cfg.d_h = 3;
  cfg.train.epochs = 3;
  cfg.train.batch_size = 64;
  cfg.seed = 8;
  FeatureSpaceModel model = train_deep_model(data, cfg);

  fs::path p = temp_file("deep.tvmd");
  save_model(p, model);
  FeatureSpaceModel back = load_model(p);
  Matrix probe = random_matrix(5, n_s, rng);
  CHECK((back.state_features(probe) - model.state_features(probe)).norm() ==
        0.0);
  CHECK((back.decode(back.state_features(probe)) -
         model.decode(model.state_features(probe)))
            .norm() == 0.0);
  fs::remove(p);
}

TEST_CASE("csv writer layout and number formatting") {
  fs::path p = temp_file("t.csv");
  write_csv(p, {"a", "b"}, {{"1", "x"}, {csv_number(0.5), csv_number(2.0)}});
  std::ifstream is(p);
  std::string l1, l2, l3;
  std::getline(is, l1);
  std::getline(is, l2);
  std::getline(is, l3);
  CHECK(l1 == "a,b");
  CHECK(l2 == "1,x");
  CHECK(l3 == "0.5,2");
  // Formatted numbers must parse back to the identical double.
  for (double v : {1.0 / 3.0, 1e-9, 6.02214076e23, -0.1})
    CHECK(std::stod(csv_number(v)) == v);
  fs::remove(p);
}
