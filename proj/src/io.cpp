#include "tvar/io.hpp"

#include <json.hpp>

#include <cstring>
#include <fstream>
#include <map>

namespace tvar {

namespace {

using nlohmann::json;

void write_u32(std::ostream& os, std::uint32_t v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof v);
}
void write_u64(std::ostream& os, std::uint64_t v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof v);
}
std::uint32_t read_u32(std::istream& is) {
  std::uint32_t v;
  is.read(reinterpret_cast<char*>(&v), sizeof v);
  return v;
}
std::uint64_t read_u64(std::istream& is) {
  std::uint64_t v;
  is.read(reinterpret_cast<char*>(&v), sizeof v);
  return v;
}

void write_doubles(std::ostream& os, const Matrix& m) {
  for (long i = 0; i < m.rows(); ++i)
    for (long j = 0; j < m.cols(); ++j) {
      const double v = m(i, j);
      os.write(reinterpret_cast<const char*>(&v), sizeof v);
    }
}

Matrix read_doubles(std::istream& is, long rows, long cols) {
  Matrix m(rows, cols);
  for (long i = 0; i < rows; ++i)
    for (long j = 0; j < cols; ++j) {
      double v;
      is.read(reinterpret_cast<char*>(&v), sizeof v);
      m(i, j) = v;
    }
  return m;
}

json spec_to_json(const SystemSpec& spec) {
  return json{{"kind", spec.kind == SystemKind::Lorenz96 ? "lorenz96" : "ks"},
              {"state_dim", spec.state_dim},
              {"forcing", spec.forcing},
              {"domain_length", spec.domain_length},
              {"dt_integrate", spec.dt_integrate},
              {"dt_sample", spec.dt_sample},
              {"rng_seed", spec.rng_seed}};
}

SystemSpec spec_from_json(const json& j) {
  SystemSpec spec;
  spec.kind = j.at("kind") == "ks" ? SystemKind::KS : SystemKind::Lorenz96;
  spec.state_dim = j.at("state_dim");
  spec.forcing = j.at("forcing");
  spec.domain_length = j.at("domain_length");
  spec.dt_integrate = j.at("dt_integrate");
  spec.dt_sample = j.at("dt_sample");
  spec.rng_seed = j.at("rng_seed");
  return spec;
}

struct BlockWriter {
  json manifest;
  std::vector<std::pair<std::string, Matrix>> blocks;

  void add(const std::string& name, const Matrix& m) {
    manifest["blocks"].push_back(
        {{"name", name}, {"rows", m.rows()}, {"cols", m.cols()}});
    blocks.emplace_back(name, m);
  }
  void add(const std::string& name, const Vector& v) {
    add(name, Matrix(v));
  }
};

struct BlockReader {
  json manifest;
  std::map<std::string, Matrix> blocks;

  Matrix mat(const std::string& name) const {
    auto it = blocks.find(name);
    if (it == blocks.end())
      throw NumericError("model file: missing block " + name);
    return it->second;
  }
  Vector vec(const std::string& name) const { return mat(name).col(0); }
};

void add_basis(BlockWriter& w, const std::string& prefix,
               const NystromBasis& b) {
  w.manifest[prefix] = {{"lengthscale", b.kernel.lengthscale},
                        {"centered", b.centered},
                        {"center_total", b.center_total}};
  w.add(prefix + ".landmarks", b.landmarks);
  w.add(prefix + ".projection", b.projection);
  w.add(prefix + ".eigenvalues", b.eigenvalues);
  w.add(prefix + ".center", b.center);
  w.add(prefix + ".mean", b.standardizer.mean);
  w.add(prefix + ".scale", b.standardizer.scale);
}

NystromBasis read_basis(const BlockReader& r, const std::string& prefix) {
  NystromBasis b;
  const json& j = r.manifest.at(prefix);
  b.kernel.lengthscale = j.at("lengthscale");
  b.centered = j.at("centered");
  b.center_total = j.at("center_total");
  b.landmarks = r.mat(prefix + ".landmarks");
  b.projection = r.mat(prefix + ".projection");
  b.eigenvalues = r.vec(prefix + ".eigenvalues");
  b.center = r.vec(prefix + ".center");
  b.standardizer.mean = r.vec(prefix + ".mean");
  b.standardizer.scale = r.vec(prefix + ".scale");
  return b;
}

void add_net(BlockWriter& w, const std::string& prefix, const DenseNet& net) {
  json layers = json::array();
  for (std::size_t l = 0; l < net.layers.size(); ++l) {
    layers.push_back(
        {{"tanh", net.layers[l].activation == Activation::Tanh}});
    w.add(prefix + ".w" + std::to_string(l), net.layers[l].weight);
    w.add(prefix + ".b" + std::to_string(l), net.layers[l].bias);
  }
  w.manifest[prefix] = layers;
}

DenseNet read_net(const BlockReader& r, const std::string& prefix) {
  DenseNet net;
  const json& layers = r.manifest.at(prefix);
  for (std::size_t l = 0; l < layers.size(); ++l) {
    DenseLayer layer;
    layer.weight = r.mat(prefix + ".w" + std::to_string(l));
    layer.bias = r.vec(prefix + ".b" + std::to_string(l));
    layer.activation =
        layers[l].at("tanh").get<bool>() ? Activation::Tanh : Activation::None;
    net.layers.push_back(std::move(layer));
  }
  return net;
}

}  // namespace

void save_trajectory(const std::filesystem::path& path,
                     const Trajectory& traj) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw NumericError("cannot open " + path.string() + " for writing");
  os.write("TVAR", 4);
  write_u32(os, 1);
  write_u64(os, static_cast<std::uint64_t>(traj.states.rows()));
  write_u64(os, static_cast<std::uint64_t>(traj.states.cols()));
  write_doubles(os, traj.states);

  json side = {{"spec", spec_to_json(traj.spec)},
               {"dt_sample", traj.dt_sample},
               {"seed", traj.spec.rng_seed}};
  std::ofstream js(path.string() + ".json");
  js << side.dump(2) << "\n";
}

Trajectory load_trajectory(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw NumericError("cannot open " + path.string());
  char magic[4];
  is.read(magic, 4);
  if (std::memcmp(magic, "TVAR", 4) != 0)
    throw NumericError(path.string() + ": bad magic, not a trajectory file");
  const std::uint32_t version = read_u32(is);
  if (version != 1)
    throw NumericError(path.string() + ": unsupported version");
  const auto rows = static_cast<long>(read_u64(is));
  const auto cols = static_cast<long>(read_u64(is));

  Trajectory traj;
  traj.states = read_doubles(is, rows, cols);

  std::ifstream js(path.string() + ".json");
  if (js) {
    json side = json::parse(js);
    traj.spec = spec_from_json(side.at("spec"));
    traj.dt_sample = side.at("dt_sample");
  }
  return traj;
}

void save_model(const std::filesystem::path& path,
                const FeatureSpaceModel& model) {
  BlockWriter w;
  w.manifest["path"] = model.path == FeaturePath::Kernel ? "kernel" : "deep";
  w.manifest["d_s"] = model.d_s;
  w.manifest["d_o"] = model.d_o;
  w.manifest["d_h"] = model.d_h;
  w.manifest["history_length"] = model.history_length;
  w.manifest["lambda"] = model.lambda;
  w.manifest["seed"] = model.seed;
  w.manifest["blocks"] = json::array();

  w.add("dyn_op", model.dyn_op);
  w.add("inv_obs_op", model.inv_obs_op);
  w.add("preimage", model.preimage);
  w.add("preimage_offset", model.preimage_offset.size() > 0
                               ? model.preimage_offset
                               : Vector::Zero(model.preimage.rows()).eval());
  w.add("B", model.B);
  w.add("R", model.R);
  w.add("Q", model.Q);
  if (model.path == FeaturePath::Kernel) {
    add_basis(w, "basis_s", model.basis_s);
    add_basis(w, "basis_o", model.basis_o);
    if (model.history_length > 0) add_basis(w, "basis_h", model.basis_h);
  } else {
    add_net(w, "net_s", model.net_s);
    add_net(w, "net_s_inv", model.net_s_inv);
    add_net(w, "net_o", model.net_o);
    if (model.history_length > 0) add_net(w, "net_h", model.net_h);
  }

  std::ofstream os(path, std::ios::binary);
  if (!os) throw NumericError("cannot open " + path.string() + " for writing");
  os.write("TVMD", 4);
  write_u32(os, 1);
  const std::string manifest = w.manifest.dump();
  write_u64(os, manifest.size());
  os.write(manifest.data(), static_cast<long>(manifest.size()));
  for (const auto& [name, m] : w.blocks) write_doubles(os, m);
}

FeatureSpaceModel load_model(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw NumericError("cannot open " + path.string());
  char magic[4];
  is.read(magic, 4);
  if (std::memcmp(magic, "TVMD", 4) != 0)
    throw NumericError(path.string() + ": bad magic, not a model file");
  if (read_u32(is) != 1)
    throw NumericError(path.string() + ": unsupported version");
  const auto manifest_len = read_u64(is);
  std::string manifest_str(manifest_len, '\0');
  is.read(manifest_str.data(), static_cast<long>(manifest_len));

  BlockReader r;
  r.manifest = json::parse(manifest_str);
  for (const auto& b : r.manifest.at("blocks"))
    r.blocks[b.at("name")] =
        read_doubles(is, b.at("rows"), b.at("cols"));

  FeatureSpaceModel model;
  model.path =
      r.manifest.at("path") == "kernel" ? FeaturePath::Kernel : FeaturePath::Deep;
  model.d_s = r.manifest.at("d_s");
  model.d_o = r.manifest.at("d_o");
  model.d_h = r.manifest.at("d_h");
  model.history_length = r.manifest.at("history_length");
  model.lambda = r.manifest.at("lambda");
  model.seed = r.manifest.at("seed");
  model.dyn_op = r.mat("dyn_op");
  model.inv_obs_op = r.mat("inv_obs_op");
  model.preimage = r.mat("preimage");
  model.preimage_offset = r.vec("preimage_offset");
  model.B = r.mat("B");
  model.R = r.mat("R");
  model.Q = r.mat("Q");
  if (model.path == FeaturePath::Kernel) {
    model.basis_s = read_basis(r, "basis_s");
    model.basis_o = read_basis(r, "basis_o");
    if (model.history_length > 0) model.basis_h = read_basis(r, "basis_h");
  } else {
    model.net_s = read_net(r, "net_s");
    model.net_s_inv = read_net(r, "net_s_inv");
    model.net_o = read_net(r, "net_o");
    if (model.history_length > 0) model.net_h = read_net(r, "net_h");
  }
  return model;
}

void write_csv(const std::filesystem::path& path,
               const std::vector<std::string>& header,
               const std::vector<std::vector<std::string>>& rows) {
  std::ofstream os(path);
  if (!os) throw NumericError("cannot open " + path.string() + " for writing");
  for (std::size_t i = 0; i < header.size(); ++i)
    os << header[i] << (i + 1 < header.size() ? "," : "\n");
  for (const auto& row : rows)
    for (std::size_t i = 0; i < row.size(); ++i)
      os << row[i] << (i + 1 < row.size() ? "," : "\n");
}

std::string csv_number(double v) {
  char buf[64];
  // Shortest-exact would be nicer, but %.17g guarantees that parsing the
  // field back yields the identical double (needed for report rebuilds).
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace tvar
