#pragma once

#include <algorithm>
#include <string>
#include <vector>

#include "dyne/checkpoint.hpp"
#include "dyne/data.hpp"
#include "dyne/nn.hpp"
#include "dyne/rng.hpp"

namespace dyne::repr {

enum class ObsMode { kLowDim, kPixel };

struct DynEConfig {
  int k = 4;
  int z_a_dim = 0;    // 0 -> action_dim
  int z_s_dim = 100;  // pixel mode; low-d identity e_s has z_s_dim = obs_dim
  double beta = 0.0;  // state KL weight (unused with identity e_s)
  double gamma_a = 1e-2;
  int kl_cycles = 4;
  double learning_rate = 1e-4;
  int batch_size = 256;
  long n_updates = 10000;
  double holdout_frac = 0.05;
  bool likelihood_scale = true;  // divide the prediction MSE by target dim
  ObsMode mode = ObsMode::kLowDim;
  long log_interval = 100;
};

inline std::vector<int> default_hidden() { return {400, 400}; }

// Linear ramp 0->1 over the first half of each cycle, hold at 1 after.
inline double kl_anneal_weight(long update, long n_updates, int cycles) {
  if (n_updates <= 0 || cycles <= 0) return 1.0;
  long cycle_len = std::max<long>(1, (n_updates + cycles - 1) / cycles);
  long pos = update % cycle_len;
  return std::min(1.0, 2.0 * static_cast<double>(pos) / static_cast<double>(cycle_len));
}

// Encoders e_s and e_a plus the predictor f. In low-dimensional mode e_s is
// the identity and the predictor consumes raw observations; in pixel mode
// e_s is a convolutional encoder over 4x32x32 frame stacks and the
// predictor's target is the two trailing frames of the future stack.
template <class T>
struct DynEModel {
  DynEConfig cfg;
  int obs_dim = 0;  // low-d observation width (pixel mode: underlying env obs)
  int act_dim = 0;
  bool identity_es = true;

  nn::Mlp<T> e_a;          // k*act_dim -> 2*z_a_dim
  nn::Mlp<T> f;            // z_s_dim + z_a_dim -> target_dim
  nn::ConvEncoder<T> e_s;  // pixel mode: stack -> 2*z_s_dim
  data::WhiteningStats whitening;

  int z_a_dim() const { return e_a.out_dim() / 2; }
  int z_s_dim() const { return identity_es ? obs_dim : e_s.out_dim / 2; }
  int state_input_dim() const { return identity_es ? obs_dim : e_s.input_dim(); }
  int target_dim() const { return f.out_dim(); }

  static DynEModel create(const DynEConfig& cfg, int obs_dim, int act_dim, Rng& rng) {
    DynEModel m;
    m.cfg = cfg;
    m.obs_dim = obs_dim;
    m.act_dim = act_dim;
    m.identity_es = cfg.mode == ObsMode::kLowDim;
    int z_a = cfg.z_a_dim > 0 ? cfg.z_a_dim : act_dim;
    Rng ea_rng = rng.child("init_e_a");
    m.e_a = nn::Mlp<T>::create(cfg.k * act_dim, default_hidden(), 2 * z_a, ea_rng);
    if (m.identity_es) {
      Rng f_rng = rng.child("init_f");
      m.f = nn::Mlp<T>::create(obs_dim + z_a, default_hidden(), obs_dim, f_rng);
    } else {
      Rng es_rng = rng.child("init_e_s");
      m.e_s = nn::ConvEncoder<T>::create(2 * cfg.z_s_dim, es_rng);
      Rng f_rng = rng.child("init_f");
      m.f = nn::Mlp<T>::create(cfg.z_s_dim + z_a, default_hidden(), 2 * env::kFramePixels, f_rng);
    }
    return m;
  }

  // e_s(s) for a batch of observations (identity mode) or frame stacks.
  nn::GaussianParams<T> encode_state(const nn::Tensor<T>& s) const {
    if (s.cols() != state_input_dim()) throw std::invalid_argument("encode_state: observation mode mismatch");
    if (identity_es) return nn::GaussianParams<T>(s, nn::Tensor<T>::full(s.shape, T(nn::kLogVarMin)));
    nn::Tensor<T> out = e_s.forward(s);
    return split_gaussian(out);
  }

  // e_a(a^k) for a batch of flattened k-action sequences.
  nn::GaussianParams<T> encode_actions(const nn::Tensor<T>& a_flat) const {
    if (a_flat.cols() != e_a.in_dim()) throw std::invalid_argument("encode_actions: expected k*action_dim inputs");
    return split_gaussian(e_a.forward(a_flat));
  }

  // f(z_s, z_a): whitened delta (low-d) or the two predicted frames (pixel).
  nn::Tensor<T> predict_delta(const nn::Tensor<T>& z_s, const nn::Tensor<T>& z_a) const {
    if (z_s.cols() != z_s_dim() || z_a.cols() != z_a_dim() || z_s.rows() != z_a.rows())
      throw std::invalid_argument("predict_delta: latent dimension mismatch");
    nn::Tensor<T> in = nn::Tensor<T>::zeros({z_s.rows(), z_s.cols() + z_a.cols()});
    for (int i = 0; i < z_s.rows(); ++i) {
      std::copy(z_s.data() + static_cast<long>(i) * z_s.cols(), z_s.data() + static_cast<long>(i + 1) * z_s.cols(),
                in.data() + static_cast<long>(i) * in.cols());
      std::copy(z_a.data() + static_cast<long>(i) * z_a.cols(), z_a.data() + static_cast<long>(i + 1) * z_a.cols(),
                in.data() + static_cast<long>(i) * in.cols() + z_s.cols());
    }
    return f.forward(in);
  }

  static nn::GaussianParams<T> split_gaussian(const nn::Tensor<T>& out) {
    int d = out.cols() / 2;
    nn::Tensor<T> mean = nn::Tensor<T>::zeros({out.rows(), d});
    nn::Tensor<T> lv = nn::Tensor<T>::zeros({out.rows(), d});
    for (int i = 0; i < out.rows(); ++i)
      for (int j = 0; j < d; ++j) {
        mean.v[static_cast<long>(i) * d + j] = out.v[static_cast<long>(i) * 2 * d + j];
        T raw = out.v[static_cast<long>(i) * 2 * d + d + j];
        lv.v[static_cast<long>(i) * d + j] =
            std::clamp(raw, static_cast<T>(nn::kLogVarMin), static_cast<T>(nn::kLogVarMax));
      }
    return nn::GaussianParams<T>(std::move(mean), std::move(lv));
  }

  nn::ParamList<T> trainable_params() {
    nn::ParamList<T> ps = e_a.params();
    for (auto* p : f.params()) ps.push_back(p);
    if (!identity_es)
      for (auto* p : e_s.params()) ps.push_back(p);
    return ps;
  }
};

template <class T>
struct ReprBatch {
  nn::Tensor<T> s;       // [B x obs_dim] or [B x 4*1024]
  nn::Tensor<T> a_flat;  // [B x k*act_dim]
  nn::Tensor<T> target;  // [B x obs_dim] whitened delta, or [B x 2*1024] frames
};

// Gather a training batch from the dataset for the given segment starts.
template <class T>
ReprBatch<T> gather_repr_batch(const data::TransitionDataset& ds, const std::vector<long>& starts,
                               const std::vector<long>& pick, int k, const data::WhiteningStats& ws,
                               ObsMode mode) {
  int batch = static_cast<int>(pick.size());
  ReprBatch<T> b;
  b.a_flat = nn::Tensor<T>::zeros({batch, k * ds.act_dim});
  if (mode == ObsMode::kLowDim) {
    b.s = nn::Tensor<T>::zeros({batch, ds.obs_dim});
    b.target = nn::Tensor<T>::zeros({batch, ds.obs_dim});
    std::vector<double> delta(ds.obs_dim), white(ds.obs_dim);
    for (int i = 0; i < batch; ++i) {
      long t = starts[pick[i]];
      const double* s0 = ds.obs_at(t);
      const double* sk = ds.next_obs_at(t + k - 1);
      for (int d = 0; d < ds.obs_dim; ++d) {
        b.s.v[static_cast<long>(i) * ds.obs_dim + d] = static_cast<T>(s0[d]);
        delta[d] = sk[d] - s0[d];
      }
      ws.apply(delta.data(), white.data());
      for (int d = 0; d < ds.obs_dim; ++d)
        b.target.v[static_cast<long>(i) * ds.obs_dim + d] = static_cast<T>(white[d]);
      for (int j = 0; j < k * ds.act_dim; ++j)
        b.a_flat.v[static_cast<long>(i) * k * ds.act_dim + j] = static_cast<T>(ds.action_at(t)[j]);
    }
  } else {
    int in_px = env::kFrameStackDepth * env::kFramePixels;
    int out_px = 2 * env::kFramePixels;
    b.s = nn::Tensor<T>::zeros({batch, in_px});
    b.target = nn::Tensor<T>::zeros({batch, out_px});
    std::vector<float> stack(in_px), tgt(out_px);
    for (int i = 0; i < batch; ++i) {
      long t = starts[pick[i]];
      ds.frame_stack_at(t, stack.data());
      if (!ds.target_frames_at(t, k, tgt.data()))
        throw std::runtime_error("gather_repr_batch: segment lacks target frames");
      for (int j = 0; j < in_px; ++j) b.s.v[static_cast<long>(i) * in_px + j] = static_cast<T>(stack[j]);
      for (int j = 0; j < out_px; ++j) b.target.v[static_cast<long>(i) * out_px + j] = static_cast<T>(tgt[j]);
      for (int j = 0; j < k * ds.act_dim; ++j)
        b.a_flat.v[static_cast<long>(i) * k * ds.act_dim + j] = static_cast<T>(ds.action_at(t)[j]);
    }
  }
  return b;
}

struct DyneLossNodes {
  int total = -1, mse = -1, kl_s = -1, kl_a = -1;
};

// Record the DynE objective: per-dim prediction MSE plus beta/gamma-weighted
// KL terms, averaged over the batch. Latents are reparameterized samples
// using the supplied noise. Parameter ids are appended in
// trainable_params() order.
template <class T>
DyneLossNodes build_dyne_loss(nn::Tape<T>& tape, const DynEModel<T>& m, const ReprBatch<T>& batch, T beta_eff,
                              T gamma_eff, nn::Tensor<T> noise_s, nn::Tensor<T> noise_a,
                              std::vector<int>* param_ids) {
  if (batch.s.rows() == 0) throw std::invalid_argument("dyne_loss: empty batch");
  int B = batch.s.rows();
  T inv_b = T(1) / static_cast<T>(B);

  int a_in = tape.constant(batch.a_flat);
  std::vector<int> ea_ids;
  int ea_out = m.e_a.build(tape, a_in, &ea_ids);
  nn::GaussianNodes ga = nn::gaussian_split(tape, ea_out);
  int z_a = nn::reparam_node(tape, ga, std::move(noise_a));
  int kl_a_sum = nn::kl_sum_node(tape, ga);

  int z_s;
  int kl_s_sum = -1;
  std::vector<int> es_ids;
  if (m.identity_es) {
    z_s = tape.constant(batch.s);
  } else {
    int s_in = tape.constant(batch.s);
    int es_out = m.e_s.build(tape, s_in, &es_ids);
    nn::GaussianNodes gs = nn::gaussian_split(tape, es_out);
    z_s = nn::reparam_node(tape, gs, std::move(noise_s));
    kl_s_sum = nn::kl_sum_node(tape, gs);
  }

  std::vector<int> f_ids;
  int pred = m.f.build(tape, tape.concat_cols(z_s, z_a), &f_ids);

  int target = tape.constant(batch.target);
  T mse_scale = inv_b;
  if (m.cfg.likelihood_scale) mse_scale /= static_cast<T>(m.target_dim());
  DyneLossNodes out;
  out.mse = tape.scale(tape.sum_all(tape.square(tape.sub(pred, target))), mse_scale);
  out.kl_a = tape.scale(kl_a_sum, inv_b);
  int total = tape.add(out.mse, tape.scale(out.kl_a, gamma_eff));
  if (kl_s_sum >= 0) {
    out.kl_s = tape.scale(kl_s_sum, inv_b);
    total = tape.add(total, tape.scale(out.kl_s, beta_eff));
  }
  out.total = total;

  if (param_ids) {
    param_ids->insert(param_ids->end(), ea_ids.begin(), ea_ids.end());
    param_ids->insert(param_ids->end(), f_ids.begin(), f_ids.end());
    param_ids->insert(param_ids->end(), es_ids.begin(), es_ids.end());
  }
  return out;
}

struct ReprCurveRow {
  long update = 0;
  double total = 0, mse = 0, kl_s = 0, kl_a = 0, kl_weight = 0;
};

template <class T>
struct TrainedDynE {
  DynEModel<T> model;
  std::vector<ReprCurveRow> curve;
  double heldout_mse_initial = 0;
  double heldout_mse_final = 0;
};

// Deterministic held-out prediction error using posterior means.
template <class T>
double heldout_mse(const DynEModel<T>& m, const data::TransitionDataset& ds, const std::vector<long>& starts,
                   const std::vector<long>& holdout) {
  if (holdout.empty()) return 0.0;
  double acc = 0;
  long total_rows = 0;
  const int chunk = 512;
  for (size_t off = 0; off < holdout.size(); off += chunk) {
    std::vector<long> pick(holdout.begin() + off,
                           holdout.begin() + std::min(holdout.size(), off + chunk));
    ReprBatch<T> b = gather_repr_batch<T>(ds, starts, pick, m.cfg.k, m.whitening, m.cfg.mode);
    nn::GaussianParams<T> qa = m.encode_actions(b.a_flat);
    nn::GaussianParams<T> qs = m.encode_state(b.s);
    nn::Tensor<T> pred = m.predict_delta(qs.mean, qa.mean);
    for (long i = 0; i < pred.numel(); ++i) {
      double d = static_cast<double>(pred.v[i]) - static_cast<double>(b.target.v[i]);
      acc += d * d;
    }
    total_rows += pred.rows();
  }
  return acc / (static_cast<double>(total_rows) * m.target_dim());
}

// Minimize the DynE objective with Adam over the dataset's k-step segments.
template <class T>
TrainedDynE<T> train_dyne(const data::TransitionDataset& ds, const DynEConfig& cfg, uint64_t seed) {
  std::vector<long> starts = data::extract_segments(ds, cfg.k);
  if (cfg.mode == ObsMode::kPixel) {
    // Drop segments whose trailing target frame is unavailable.
    std::vector<float> scratch(2 * env::kFramePixels);
    std::vector<long> ok;
    for (long t : starts)
      if (ds.target_frames_at(t, cfg.k, scratch.data())) ok.push_back(t);
    starts = std::move(ok);
  }
  if (starts.empty()) throw std::invalid_argument("train_dyne: dataset has no usable segments");

  Rng root(seed);
  Rng init_rng = root.child("init");
  TrainedDynE<T> out;
  out.model = DynEModel<T>::create(cfg, ds.obs_dim, ds.act_dim, init_rng);
  DynEModel<T>& m = out.model;

  // Split segment indices (into `starts`) for holdout evaluation.
  std::vector<long> order(starts.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<long>(i);
  Rng split_rng = root.child("split");
  for (size_t i = order.size(); i > 1; --i)
    std::swap(order[i - 1], order[split_rng.uniform_int(static_cast<int>(i))]);
  long n_hold = std::min<long>(static_cast<long>(order.size()) - 1,
                               static_cast<long>(cfg.holdout_frac * static_cast<double>(order.size())));
  std::vector<long> holdout(order.begin(), order.begin() + n_hold);
  std::vector<long> train(order.begin() + n_hold, order.end());

  if (cfg.mode == ObsMode::kLowDim) {
    std::vector<long> train_starts;
    train_starts.reserve(train.size());
    for (long i : train) train_starts.push_back(starts[i]);
    m.whitening = data::compute_whitening(ds, train_starts.size() >= 2 ? train_starts : starts, cfg.k);
  }

  nn::ParamList<T> params = m.trainable_params();
  nn::Adam<T> opt(static_cast<T>(cfg.learning_rate));
  opt.init(params);

  out.heldout_mse_initial = heldout_mse(m, ds, starts, holdout);

  Rng batch_rng = root.child("batch");
  Rng noise_rng = root.child("noise");
  int z_a = m.z_a_dim();
  for (long t = 0; t < cfg.n_updates; ++t) {
    double w = kl_anneal_weight(t, cfg.n_updates, cfg.kl_cycles);
    std::vector<long> pick_rows = data::sample_indices(static_cast<long>(train.size()), cfg.batch_size, batch_rng);
    std::vector<long> pick(pick_rows.size());
    for (size_t i = 0; i < pick.size(); ++i) pick[i] = train[pick_rows[i]];
    ReprBatch<T> b = gather_repr_batch<T>(ds, starts, pick, cfg.k, m.whitening, cfg.mode);

    nn::Tensor<T> noise_a = nn::Tensor<T>::zeros({cfg.batch_size, z_a});
    for (T& x : noise_a.v) x = static_cast<T>(noise_rng.normal());
    nn::Tensor<T> noise_s;
    if (!m.identity_es) {
      noise_s = nn::Tensor<T>::zeros({cfg.batch_size, m.z_s_dim()});
      for (T& x : noise_s.v) x = static_cast<T>(noise_rng.normal());
    }

    nn::Tape<T> tape;
    std::vector<int> pids;
    DyneLossNodes nodes = build_dyne_loss(tape, m, b, static_cast<T>(cfg.beta * w),
                                          static_cast<T>(cfg.gamma_a * w), std::move(noise_s),
                                          std::move(noise_a), &pids);
    tape.backward(nodes.total);
    double total = static_cast<double>(tape.value(nodes.total).v[0]);
    if (!std::isfinite(total)) throw std::runtime_error("train_dyne: non-finite loss at update " + std::to_string(t));

    nn::ConstParamList<T> grads;
    grads.reserve(pids.size());
    for (int id : pids) grads.push_back(&tape.grad(id));
    opt.step(params, grads);

    if (t % cfg.log_interval == 0 || t + 1 == cfg.n_updates) {
      ReprCurveRow row;
      row.update = t;
      row.total = total;
      row.mse = static_cast<double>(tape.value(nodes.mse).v[0]);
      row.kl_s = nodes.kl_s >= 0 ? static_cast<double>(tape.value(nodes.kl_s).v[0]) : 0.0;
      row.kl_a = static_cast<double>(tape.value(nodes.kl_a).v[0]);
      row.kl_weight = w;
      out.curve.push_back(row);
    }
  }

  out.heldout_mse_final = heldout_mse(m, ds, starts, holdout);
  return out;
}

// --- checkpoint io ---

template <class T>
void put_mlp(Checkpoint& c, const std::string& prefix, const nn::Mlp<T>& m) {
  nlohmann::json dims = nlohmann::json::array();
  dims.push_back(m.w.front().rows());
  for (const auto& w : m.w) dims.push_back(w.cols());
  c.meta[prefix + ".dims"] = dims;
  c.meta[prefix + ".out_op"] = m.out_op == nn::OutputOp::kTanhScale ? "tanh_scale" : "none";
  c.meta[prefix + ".out_scale"] = static_cast<double>(m.out_scale);
  for (size_t l = 0; l < m.w.size(); ++l) {
    c.arrays[prefix + ".w" + std::to_string(l)] = m.w[l].template cast<double>().v;
    c.arrays[prefix + ".b" + std::to_string(l)] = m.b[l].template cast<double>().v;
  }
}

template <class T>
nn::Mlp<T> get_mlp(const Checkpoint& c, const std::string& prefix) {
  std::vector<int> dims = c.meta.at(prefix + ".dims").get<std::vector<int>>();
  nn::Mlp<T> m;
  m.out_op = c.meta.at(prefix + ".out_op").get<std::string>() == "tanh_scale" ? nn::OutputOp::kTanhScale
                                                                              : nn::OutputOp::kNone;
  m.out_scale = static_cast<T>(c.meta.at(prefix + ".out_scale").get<double>());
  for (size_t l = 0; l + 1 < dims.size(); ++l) {
    nn::Tensor<double> w({dims[l], dims[l + 1]}, c.array(prefix + ".w" + std::to_string(l)));
    nn::Tensor<double> b({dims[l + 1]}, c.array(prefix + ".b" + std::to_string(l)));
    m.w.push_back(w.cast<T>());
    m.b.push_back(b.cast<T>());
  }
  return m;
}

template <class T>
void put_conv(Checkpoint& c, const std::string& prefix, const nn::ConvEncoder<T>& e) {
  c.meta[prefix + ".in_ch"] = e.in_ch;
  c.meta[prefix + ".img"] = e.img;
  c.meta[prefix + ".out_dim"] = e.out_dim;
  for (int l = 0; l < 3; ++l) {
    c.arrays[prefix + ".cw" + std::to_string(l)] = e.cw[l].template cast<double>().v;
    c.arrays[prefix + ".cb" + std::to_string(l)] = e.cb[l].template cast<double>().v;
  }
  c.arrays[prefix + ".hw"] = e.hw.template cast<double>().v;
  c.arrays[prefix + ".hb"] = e.hb.template cast<double>().v;
}

template <class T>
nn::ConvEncoder<T> get_conv(const Checkpoint& c, const std::string& prefix) {
  nn::ConvEncoder<T> e;
  e.in_ch = c.meta.at(prefix + ".in_ch").get<int>();
  e.img = c.meta.at(prefix + ".img").get<int>();
  e.out_dim = c.meta.at(prefix + ".out_dim").get<int>();
  int cin = e.in_ch;
  for (int l = 0; l < 3; ++l) {
    int cout = nn::ConvEncoder<T>::kChannels[l];
    nn::Tensor<double> w({cout, cin * 16}, c.array(prefix + ".cw" + std::to_string(l)));
    nn::Tensor<double> b({cout}, c.array(prefix + ".cb" + std::to_string(l)));
    e.cw.push_back(w.cast<T>());
    e.cb.push_back(b.cast<T>());
    cin = cout;
  }
  nn::Tensor<double> hw({e.flat_dim(), e.out_dim}, c.array(prefix + ".hw"));
  nn::Tensor<double> hb({e.out_dim}, c.array(prefix + ".hb"));
  e.hw = hw.cast<T>();
  e.hb = hb.cast<T>();
  return e;
}

template <class T>
Checkpoint to_checkpoint(const DynEModel<T>& m) {
  Checkpoint c;
  c.kind = "dyne-model";
  c.meta["k"] = m.cfg.k;
  c.meta["mode"] = m.cfg.mode == ObsMode::kPixel ? "pixel" : "lowd";
  c.meta["obs_dim"] = m.obs_dim;
  c.meta["act_dim"] = m.act_dim;
  c.meta["z_s_dim"] = m.z_s_dim();
  c.meta["identity_es"] = m.identity_es;
  put_mlp(c, "e_a", m.e_a);
  put_mlp(c, "f", m.f);
  if (!m.identity_es) put_conv(c, "e_s", m.e_s);
  c.arrays["whitening.mean"] = m.whitening.mean;
  c.arrays["whitening.std"] = m.whitening.stdv;
  return c;
}

template <class T>
DynEModel<T> from_checkpoint(const Checkpoint& c) {
  DynEModel<T> m;
  m.cfg.k = c.meta.at("k").get<int>();
  m.cfg.mode = c.meta.at("mode").get<std::string>() == "pixel" ? ObsMode::kPixel : ObsMode::kLowDim;
  m.obs_dim = c.meta.at("obs_dim").get<int>();
  m.act_dim = c.meta.at("act_dim").get<int>();
  m.identity_es = c.meta.at("identity_es").get<bool>();
  m.e_a = get_mlp<T>(c, "e_a");
  m.f = get_mlp<T>(c, "f");
  if (!m.identity_es) {
    m.e_s = get_conv<T>(c, "e_s");
    m.cfg.z_s_dim = m.e_s.out_dim / 2;
  }
  m.cfg.z_a_dim = m.e_a.out_dim() / 2;
  m.whitening.mean = c.array("whitening.mean");
  m.whitening.stdv = c.array("whitening.std");
  return m;
}

}  // namespace dyne::repr
