#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "tvar/cme.hpp"
#include "tvar/dynamics.hpp"
#include "tvar/observation.hpp"

namespace tvar {

/// Trajectory container: magic "TVAR", version, n_steps, n_s header
/// followed by row-major little-endian f64, plus a JSON sidecar
/// (same path + ".json") holding the SystemSpec and seed.
void save_trajectory(const std::filesystem::path& path, const Trajectory& traj);
Trajectory load_trajectory(const std::filesystem::path& path);

/// Model container: magic "TVMD", a JSON manifest, and named f64 blocks.
void save_model(const std::filesystem::path& path,
                const FeatureSpaceModel& model);
FeatureSpaceModel load_model(const std::filesystem::path& path);

void write_csv(const std::filesystem::path& path,
               const std::vector<std::string>& header,
               const std::vector<std::vector<std::string>>& rows);

/// Fixed-format float used in all CSV output so reruns are byte-identical.
std::string csv_number(double v);

}  // namespace tvar
