#include "tvar/deep.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "tvar/cme.hpp"

namespace tvar {

DenseNet DenseNet::make(const std::vector<int>& dims, Rng& rng) {
  if (dims.size() < 2) throw SpecError("DenseNet::make: need at least 2 dims");
  DenseNet net;
  for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
    DenseLayer layer;
    const int fan_in = dims[l];
    const int fan_out = dims[l + 1];
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    std::uniform_real_distribution<double> dist(-bound, bound);
    layer.weight.resize(fan_out, fan_in);
    for (int i = 0; i < fan_out; ++i)
      for (int j = 0; j < fan_in; ++j) layer.weight(i, j) = dist(rng);
    layer.bias = Vector::Zero(fan_out);
    layer.activation =
        (l + 2 < dims.size()) ? Activation::Tanh : Activation::None;
    net.layers.push_back(std::move(layer));
  }
  return net;
}

Matrix DenseNet::forward(const Matrix& X) const {
  Matrix a = X;
  for (const auto& layer : layers) {
    a = (a * layer.weight.transpose()).rowwise() + layer.bias.transpose();
    if (layer.activation == Activation::Tanh) a = a.array().tanh();
  }
  return a;
}

ForwardCache forward_cached(const DenseNet& net, const Matrix& X) {
  ForwardCache cache;
  cache.input = X;
  Matrix a = X;
  for (const auto& layer : net.layers) {
    Matrix pre = (a * layer.weight.transpose()).rowwise() + layer.bias.transpose();
    cache.pre.push_back(pre);
    a = layer.activation == Activation::Tanh ? pre.array().tanh().matrix() : pre;
    cache.post.push_back(a);
  }
  return cache;
}

void NetGradients::axpy(double a, const NetGradients& other) {
  for (std::size_t l = 0; l < dweight.size(); ++l) {
    dweight[l] += a * other.dweight[l];
    dbias[l] += a * other.dbias[l];
  }
}

NetGradients backward(const DenseNet& net, const ForwardCache& cache,
                      const Matrix& upstream) {
  if (cache.post.size() != net.layers.size())
    throw NumericError("backward: stale or missing forward cache");
  const int L = static_cast<int>(net.layers.size());
  NetGradients g;
  g.dweight.resize(L);
  g.dbias.resize(L);

  Matrix grad = upstream;
  for (int l = L - 1; l >= 0; --l) {
    const auto& layer = net.layers[l];
    if (layer.activation == Activation::Tanh)
      grad = grad.cwiseProduct(
          (1.0 - cache.post[l].array().square()).matrix());
    const Matrix& input = (l == 0) ? cache.input : cache.post[l - 1];
    g.dweight[l] = grad.transpose() * input;
    g.dbias[l] = grad.colwise().sum();
    grad = grad * layer.weight;
  }
  g.dinput = grad;
  return g;
}

AdamState AdamState::zeros_like(const DenseNet& net) {
  AdamState s;
  for (const auto& layer : net.layers) {
    s.m_w.push_back(Matrix::Zero(layer.weight.rows(), layer.weight.cols()));
    s.v_w.push_back(Matrix::Zero(layer.weight.rows(), layer.weight.cols()));
    s.m_b.push_back(Vector::Zero(layer.bias.size()));
    s.v_b.push_back(Vector::Zero(layer.bias.size()));
  }
  return s;
}

void adam_step(DenseNet& net, const NetGradients& grads, AdamState& state,
               const AdamConfig& cfg) {
  state.step += 1;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  for (std::size_t l = 0; l < net.layers.size(); ++l) {
    auto update = [&](auto& param, auto& m, auto& v, const auto& g) {
      m = cfg.beta1 * m + (1.0 - cfg.beta1) * g;
      v = cfg.beta2 * v + (1.0 - cfg.beta2) * g.array().square().matrix();
      param.array() -= cfg.lr * (m.array() / bc1) /
                       ((v.array() / bc2).sqrt() + cfg.eps);
    };
    update(net.layers[l].weight, state.m_w[l], state.v_w[l], grads.dweight[l]);
    update(net.layers[l].bias, state.m_b[l], state.v_b[l], grads.dbias[l]);
  }
}

namespace {

std::vector<std::vector<int>> make_batches(int n, int batch_size, Rng& rng) {
  std::vector<int> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::shuffle(idx.begin(), idx.end(), rng);
  std::vector<std::vector<int>> batches;
  for (int start = 0; start < n; start += batch_size) {
    const int end = std::min(n, start + batch_size);
    batches.emplace_back(idx.begin() + start, idx.begin() + end);
  }
  return batches;
}

Matrix take_rows(const Matrix& X, const std::vector<int>& rows) {
  Matrix out(rows.size(), X.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) out.row(i) = X.row(rows[i]);
  return out;
}

}  // namespace

StateFeatureResult train_state_features(const Matrix& S_current,
                                        const Matrix& S_next, int d_s,
                                        const TrainConfig& cfg) {
  cfg.validate();
  const int n = static_cast<int>(S_current.rows());
  const int n_s = static_cast<int>(S_current.cols());
  if (S_next.rows() != n) throw SpecError("train_state_features: row mismatch");

  Rng rng = derived_rng(cfg.rng_seed, 7);
  StateFeatureResult result;
  result.encoder = DenseNet::make({n_s, 4 * n_s, 2 * n_s, d_s}, rng);
  result.inverse = DenseNet::make({d_s, 2 * n_s, 4 * n_s, n_s}, rng);

  AdamState enc_state = AdamState::zeros_like(result.encoder);
  AdamState inv_state = AdamState::zeros_like(result.inverse);

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    double epoch_loss = 0.0;
    long seen = 0;
    for (const auto& batch : make_batches(n, cfg.batch_size, rng)) {
      const double nb = static_cast<double>(batch.size());
      Matrix Sb = take_rows(S_current, batch);
      Matrix Sbn = take_rows(S_next, batch);

      ForwardCache cache_cur = forward_cached(result.encoder, Sb);
      ForwardCache cache_next = forward_cached(result.encoder, Sbn);
      const Matrix& Z = cache_cur.post.back();
      const Matrix& Zn = cache_next.post.back();

      // In-batch ridge CME, held constant within the step.
      Matrix C = fit_cme_dynamics(Z, Zn, cfg.batch_ridge);
      Matrix pred_res = Zn - Z * C.transpose();

      ForwardCache cache_inv = forward_cached(result.inverse, Z);
      Matrix recon_res = Sb - cache_inv.post.back();

      const double loss = pred_res.squaredNorm() / nb +
                          cfg.recon_weight * recon_res.squaredNorm() / nb;
      if (!std::isfinite(loss))
        throw NumericError("train_state_features: non-finite loss at epoch " +
                           std::to_string(epoch));
      epoch_loss += loss * nb;
      seen += batch.size();

      NetGradients g_inv =
          backward(result.inverse, cache_inv,
                   (-2.0 * cfg.recon_weight / nb) * recon_res);
      Matrix gZ = (-2.0 / nb) * pred_res * C + g_inv.dinput;
      Matrix gZn = (2.0 / nb) * pred_res;

      NetGradients g_enc = backward(result.encoder, cache_cur, gZ);
      g_enc.axpy(1.0, backward(result.encoder, cache_next, gZn));

      adam_step(result.encoder, g_enc, enc_state, cfg.adam);
      adam_step(result.inverse, g_inv, inv_state, cfg.adam);
    }
    result.epoch_loss.push_back(epoch_loss / static_cast<double>(seen));
  }

  Matrix Z_full = result.encoder.forward(S_current);
  Matrix Zn_full = result.encoder.forward(S_next);
  result.dyn_op = fit_cme_dynamics(Z_full, Zn_full, cfg.batch_ridge);
  return result;
}

ObsFeatureResult train_obs_history_features(const Matrix& S, const Matrix& O,
                                            const Matrix& H,
                                            const DenseNet& state_encoder,
                                            int d_o, int d_h,
                                            const TrainConfig& cfg) {
  cfg.validate();
  const int n = static_cast<int>(S.rows());
  const int n_o = static_cast<int>(O.cols());
  const bool has_history = H.cols() > 0;
  if (O.rows() != n || (has_history && H.rows() != n))
    throw SpecError("train_obs_history_features: row mismatch");

  Rng rng = derived_rng(cfg.rng_seed, 11);
  ObsFeatureResult result;
  result.obs_encoder = DenseNet::make({n_o, 4 * n_o, 2 * n_o, d_o}, rng);
  if (has_history) {
    const int n_h = static_cast<int>(H.cols());
    result.history_encoder = DenseNet::make({n_h, 4 * n_h, d_h}, rng);
  }

  // phi_S is frozen: targets computed once, no gradient flows into it.
  Matrix Z_s = state_encoder.forward(S);

  AdamState obs_state = AdamState::zeros_like(result.obs_encoder);
  AdamState hist_state = AdamState::zeros_like(result.history_encoder);

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    double epoch_loss = 0.0;
    long seen = 0;
    for (const auto& batch : make_batches(n, cfg.batch_size, rng)) {
      const double nb = static_cast<double>(batch.size());
      Matrix Ob = take_rows(O, batch);
      Matrix Zsb = take_rows(Z_s, batch);

      ForwardCache cache_o = forward_cached(result.obs_encoder, Ob);
      const Matrix& Zo = cache_o.post.back();

      Matrix Zh;
      ForwardCache cache_h;
      if (has_history) {
        cache_h = forward_cached(result.history_encoder, take_rows(H, batch));
        Zh = cache_h.post.back();
      } else {
        Zh = Matrix::Ones(batch.size(), 1);
      }

      Matrix W = tensor_features(Zo, Zh);
      Matrix C = fit_cme_dynamics(W, Zsb, cfg.batch_ridge);
      Matrix res = Zsb - W * C.transpose();
      const double loss = res.squaredNorm() / nb;
      if (!std::isfinite(loss))
        throw NumericError(
            "train_obs_history_features: non-finite loss at epoch " +
            std::to_string(epoch));
      epoch_loss += loss * nb;
      seen += batch.size();

      Matrix gW = (-2.0 / nb) * res * C;  // n x (d_o * d_h)
      const int dh = static_cast<int>(Zh.cols());
      Matrix gZo = Matrix::Zero(Zo.rows(), Zo.cols());
      Matrix gZh = Matrix::Zero(Zh.rows(), Zh.cols());
      for (int i = 0; i < Zo.rows(); ++i)
        for (int a = 0; a < Zo.cols(); ++a) {
          const auto seg = gW.row(i).segment(static_cast<long>(a) * dh, dh);
          gZo(i, a) = seg.dot(Zh.row(i));
          gZh.row(i) += Zo(i, a) * seg;
        }

      NetGradients g_obs = backward(result.obs_encoder, cache_o, gZo);
      adam_step(result.obs_encoder, g_obs, obs_state, cfg.adam);
      if (has_history) {
        NetGradients g_hist = backward(result.history_encoder, cache_h, gZh);
        adam_step(result.history_encoder, g_hist, hist_state, cfg.adam);
      }
    }
    result.epoch_loss.push_back(epoch_loss / static_cast<double>(seen));
  }

  Matrix Zo_full = result.obs_encoder.forward(O);
  Matrix Zh_full = has_history ? result.history_encoder.forward(H)
                               : Matrix::Ones(n, 1);
  result.inv_obs_op = fit_cme_inverse_obs(Z_s, Zo_full, Zh_full, cfg.batch_ridge);
  return result;
}

}  // namespace tvar
