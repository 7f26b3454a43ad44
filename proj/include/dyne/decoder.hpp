#pragma once

#include <vector>

#include "dyne/nn.hpp"
#include "dyne/repr.hpp"
#include "dyne/rng.hpp"

namespace dyne::decoder {

struct DecoderConfig {
  double lambda = 1e-2;  // norm-penalty weight
  double learning_rate = 1e-4;
  int batch_size = 256;
  long n_updates = 4000;
  long log_interval = 50;
};

// d_a: one macro-action -> k bounded raw actions. The tanh output keeps
// every decoded action inside the [-1, 1] action box.
template <class T>
struct ActionDecoder {
  nn::Mlp<T> net;  // z_a_dim -> k*act_dim, tanh
  int k = 1;
  int act_dim = 0;

  int z_a_dim() const { return net.in_dim(); }

  static ActionDecoder create(int z_a_dim, int k, int act_dim, Rng& rng) {
    ActionDecoder d;
    d.k = k;
    d.act_dim = act_dim;
    d.net = nn::Mlp<T>::create(z_a_dim, repr::default_hidden(), k * act_dim, rng, nn::OutputOp::kTanhScale, T(1));
    return d;
  }

  // k actions for a single macro-action.
  std::vector<std::vector<T>> decode(const std::vector<T>& z) const {
    if (static_cast<int>(z.size()) != z_a_dim()) throw std::invalid_argument("decode: z dimension mismatch");
    nn::Tensor<T> zin({1, z_a_dim()}, z);
    nn::Tensor<T> flat = net.forward(zin);
    std::vector<std::vector<T>> actions(k, std::vector<T>(act_dim));
    for (int j = 0; j < k; ++j)
      for (int d = 0; d < act_dim; ++d) actions[j][d] = flat.v[static_cast<long>(j) * act_dim + d];
    return actions;
  }

  nn::Tensor<T> decode_batch(const nn::Tensor<T>& z) const { return net.forward(z); }
};

struct DecoderCurveRow {
  long update = 0;
  double total = 0, round_trip = 0, norm = 0;
};

struct DecoderLossNodes {
  int total = -1, round_trip = -1, norm = -1;
};

// ||mean(e_a(d_a(z))) - z||^2 + lambda*||d_a(z)||^2, averaged over the batch.
// e_a stays frozen; only decoder parameters collect gradients.
template <class T>
DecoderLossNodes build_decoder_loss(nn::Tape<T>& tape, const ActionDecoder<T>& dec, const nn::Mlp<T>& e_a,
                                    const nn::Tensor<T>& z, T lambda, std::vector<int>* param_ids) {
  int B = z.rows();
  T inv_b = T(1) / static_cast<T>(B);
  int zin = tape.constant(z);
  int a_hat = dec.net.build(tape, zin, param_ids);
  int ea_out = e_a.build(tape, a_hat, nullptr, /*trainable=*/false);
  int mean = tape.slice_cols(ea_out, 0, e_a.out_dim() / 2);
  DecoderLossNodes out;
  out.round_trip = tape.scale(tape.sum_all(tape.square(tape.sub(mean, zin))), inv_b);
  out.norm = tape.scale(tape.sum_all(tape.square(a_hat)), inv_b);
  out.total = tape.add(out.round_trip, tape.scale(out.norm, lambda));
  return out;
}

template <class T>
struct TrainedDecoder {
  ActionDecoder<T> decoder;
  std::vector<DecoderCurveRow> curve;
};

// Fit the minimum-norm one-sided inverse of a frozen e_a on fresh
// z ~ N(0, I) batches.
template <class T>
TrainedDecoder<T> train_decoder(const nn::Mlp<T>& e_a, int k, int act_dim, const DecoderConfig& cfg,
                                uint64_t seed) {
  int z_dim = e_a.out_dim() / 2;
  Rng root(seed);
  Rng init_rng = root.child("init");
  TrainedDecoder<T> out;
  out.decoder = ActionDecoder<T>::create(z_dim, k, act_dim, init_rng);
  if (out.decoder.net.out_dim() != e_a.in_dim())
    throw std::invalid_argument("train_decoder: decoder output does not match e_a input");

  nn::ParamList<T> params = out.decoder.net.params();
  nn::Adam<T> opt(static_cast<T>(cfg.learning_rate));
  opt.init(params);

  Rng z_rng = root.child("z");
  for (long t = 0; t < cfg.n_updates; ++t) {
    nn::Tensor<T> z = nn::Tensor<T>::zeros({cfg.batch_size, z_dim});
    for (T& x : z.v) x = static_cast<T>(z_rng.normal());
    nn::Tape<T> tape;
    std::vector<int> pids;
    DecoderLossNodes nodes = build_decoder_loss(tape, out.decoder, e_a, z, static_cast<T>(cfg.lambda), &pids);
    tape.backward(nodes.total);
    double total = static_cast<double>(tape.value(nodes.total).v[0]);
    if (!std::isfinite(total))
      throw std::runtime_error("train_decoder: non-finite loss at update " + std::to_string(t));
    nn::ConstParamList<T> grads;
    for (int id : pids) grads.push_back(&tape.grad(id));
    opt.step(params, grads);
    if (t % cfg.log_interval == 0 || t + 1 == cfg.n_updates) {
      DecoderCurveRow row;
      row.update = t;
      row.total = total;
      row.round_trip = static_cast<double>(tape.value(nodes.round_trip).v[0]);
      row.norm = static_cast<double>(tape.value(nodes.norm).v[0]);
      out.curve.push_back(row);
    }
  }
  return out;
}

// Mean of ||mean(e_a(d_a(z))) - z||^2 / z_dim over n fresh z ~ N(0, I).
template <class T>
double round_trip_error(const ActionDecoder<T>& dec, const nn::Mlp<T>& e_a, int n_samples, uint64_t seed) {
  Rng rng(seed);
  int z_dim = dec.z_a_dim();
  const int chunk = 512;
  double acc = 0;
  long seen = 0;
  while (seen < n_samples) {
    int b = static_cast<int>(std::min<long>(chunk, n_samples - seen));
    nn::Tensor<T> z = nn::Tensor<T>::zeros({b, z_dim});
    for (T& x : z.v) x = static_cast<T>(rng.normal());
    nn::Tensor<T> back = e_a.forward(dec.decode_batch(z));
    for (int i = 0; i < b; ++i)
      for (int d = 0; d < z_dim; ++d) {
        double diff = static_cast<double>(back.v[static_cast<long>(i) * back.cols() + d]) -
                      static_cast<double>(z.v[static_cast<long>(i) * z_dim + d]);
        acc += diff * diff;
      }
    seen += b;
  }
  return acc / (static_cast<double>(n_samples) * z_dim);
}

template <class T>
Checkpoint to_checkpoint(const ActionDecoder<T>& d) {
  Checkpoint c;
  c.kind = "action-decoder";
  c.meta["k"] = d.k;
  c.meta["act_dim"] = d.act_dim;
  repr::put_mlp(c, "net", d.net);
  return c;
}

template <class T>
ActionDecoder<T> from_checkpoint(const Checkpoint& c) {
  ActionDecoder<T> d;
  d.k = c.meta.at("k").get<int>();
  d.act_dim = c.meta.at("act_dim").get<int>();
  d.net = repr::get_mlp<T>(c, "net");
  return d;
}

}  // namespace dyne::decoder
