#pragma once

#include <chrono>
#include <cmath>
#include <memory>
#include <vector>

#include "dyne/data.hpp"
#include "dyne/decoder.hpp"
#include "dyne/env.hpp"
#include "dyne/nn.hpp"
#include "dyne/repr.hpp"
#include "dyne/rng.hpp"

namespace dyne::rl {

struct Td3Config {
  double discount = 0.99;
  double tau = 0.005;
  double expl_noise = 0.1;    // exploration noise in z-units
  double target_noise = 0.2;  // target policy smoothing
  double noise_clip = 0.5;
  int policy_delay = 2;
  int batch_size = 256;
  long warmup_steps = 1000;
  double actor_lr = 3e-4;
  double critic_lr = 3e-4;
  int k = 4;
  double z_max = 2.0;
  long total_steps = 50000;
  long eval_interval = 2500;
  int n_eval = 10;
  size_t replay_capacity = 1000000;
};

// Observation -> policy feature. Identity for low-dimensional control;
// the frozen DynE state encoder's posterior mean for pixels.
class FeatureMap {
 public:
  virtual ~FeatureMap() = default;
  virtual int dim() const = 0;
  virtual std::vector<double> encode(const std::vector<double>& obs) const = 0;
};

class IdentityFeatures final : public FeatureMap {
 public:
  explicit IdentityFeatures(int dim) : dim_(dim) {}
  int dim() const override { return dim_; }
  std::vector<double> encode(const std::vector<double>& obs) const override { return obs; }

 private:
  int dim_;
};

class ConvMeanFeatures final : public FeatureMap {
 public:
  explicit ConvMeanFeatures(nn::ConvEncoder<double> enc) : enc_(std::move(enc)), z_dim_(enc_.out_dim / 2) {}
  int dim() const override { return z_dim_; }
  std::vector<double> encode(const std::vector<double>& obs) const override {
    nn::Tensor<double> in({1, static_cast<int>(obs.size())}, obs);
    nn::Tensor<double> out = enc_.forward(in);
    return std::vector<double>(out.v.begin(), out.v.begin() + z_dim_);
  }

 private:
  nn::ConvEncoder<double> enc_;
  int z_dim_;
};

// Rollout surface over an Env: low-d observations, or 4-frame pixel stacks.
class Rollout {
 public:
  Rollout(env::Env& e, bool pixel) : env_(&e), pixel_(pixel) {}

  std::vector<double> reset(uint64_t seed) {
    std::vector<double> obs = env_->reset(seed);
    if (!pixel_) return obs;
    float frame[env::kFramePixels];
    env_->render_frame(frame);
    stack_.reset(frame);
    return stacked();
  }

  std::vector<double> step(const std::vector<double>& a, double* reward, bool* done) {
    env::StepResult sr = env_->step(a);
    *reward = sr.reward;
    *done = sr.done;
    if (!pixel_) return std::move(sr.obs);
    float frame[env::kFramePixels];
    env_->render_frame(frame);
    stack_.push(frame);
    return stacked();
  }

  bool episode_over() const { return env_->episode_over(); }
  env::Env& base() { return *env_; }

 private:
  std::vector<double> stacked() const {
    const std::vector<float>& s = stack_.stacked();
    return std::vector<double>(s.begin(), s.end());
  }

  env::Env* env_;
  bool pixel_;
  env::FrameStack stack_;
};

struct EvalRow {
  long env_step = 0;
  double mean_return = 0, std_return = 0, mean_final_distance = 0, wall_seconds = 0;
};

struct EvalDetail {
  std::vector<double> returns;
  std::vector<double> final_distances;
};

struct StepLosses {
  double critic_loss = 0;
  double actor_loss = 0;
  bool actor_updated = false;
};

template <class T>
struct MacroBatch {
  nn::Tensor<T> s, z, icol, s_end;
  std::vector<T> reward_sum;
  std::vector<T> boot;  // (1 - done) * discount^steps_remaining
};

// Decode z and run it on the environment for up to k steps (fewer if the
// episode ends). Emits one tuple per executed step index i, with the reward
// sum accumulated backwards so R_i = r_i + discount * R_{i+1} holds exactly.
template <class T>
std::vector<data::MacroTransition> execute_macro(Rollout& roll, const FeatureMap& fm,
                                                 const decoder::ActionDecoder<T>& dec,
                                                 const std::vector<double>& z, double discount,
                                                 std::vector<double>* obs_io, double* return_acc = nullptr) {
  if (roll.episode_over()) throw std::logic_error("execute_macro: episode already finished");
  std::vector<T> zt(z.begin(), z.end());
  std::vector<std::vector<T>> actions = dec.decode(zt);
  std::vector<std::vector<double>> feats;
  std::vector<double> rewards;
  bool done = false;
  for (int i = 0; i < dec.k && !done; ++i) {
    feats.push_back(fm.encode(*obs_io));
    std::vector<double> a(actions[i].begin(), actions[i].end());
    double r = 0;
    *obs_io = roll.step(a, &r, &done);
    rewards.push_back(r);
    if (return_acc) *return_acc += r;
  }
  int m = static_cast<int>(rewards.size());
  std::vector<double> reward_sums(m);
  reward_sums[m - 1] = rewards[m - 1];
  for (int i = m - 2; i >= 0; --i) reward_sums[i] = rewards[i] + discount * reward_sums[i + 1];
  std::vector<double> end_feat = fm.encode(*obs_io);
  std::vector<data::MacroTransition> out(m);
  for (int i = 0; i < m; ++i) {
    out[i].s_feat = std::move(feats[i]);
    out[i].z = z;
    out[i].s_end_feat = end_feat;
    out[i].reward_sum = reward_sums[i];
    out[i].step_index = i;
    out[i].steps_remaining = m - i;
    out[i].done = done;
  }
  return out;
}

// TD3 over the DynE macro-action space: twin critics take the normalized
// step index i/k as an extra input and bootstrap discount^(k-i) past the end
// of the current macro-action.
template <class T>
class DyneTd3 {
 public:
  DyneTd3(int feat_dim, int z_dim, const Td3Config& cfg, Rng& init_rng)
      : cfg_(cfg), feat_dim_(feat_dim), z_dim_(z_dim) {
    Rng a_rng = init_rng.child("actor");
    actor_ = nn::Mlp<T>::create(feat_dim, repr::default_hidden(), z_dim, a_rng, nn::OutputOp::kTanhScale,
                                static_cast<T>(cfg.z_max));
    Rng q1_rng = init_rng.child("q1");
    q1_ = nn::Mlp<T>::create(feat_dim + z_dim + 1, repr::default_hidden(), 1, q1_rng);
    Rng q2_rng = init_rng.child("q2");
    q2_ = nn::Mlp<T>::create(feat_dim + z_dim + 1, repr::default_hidden(), 1, q2_rng);
    actor_tgt_ = actor_;
    q1_tgt_ = q1_;
    q2_tgt_ = q2_;
    actor_opt_ = nn::Adam<T>(static_cast<T>(cfg.actor_lr));
    actor_opt_.init(actor_.params());
    critic_opt_ = nn::Adam<T>(static_cast<T>(cfg.critic_lr));
    critic_opt_.init(critic_params());
    discount_pow_.resize(cfg.k + 1);
    discount_pow_[0] = 1.0;
    for (int j = 1; j <= cfg.k; ++j) discount_pow_[j] = discount_pow_[j - 1] * cfg.discount;
  }

  // z = clamp(actor(feat) + N(0, noise_std^2), +-z_max); during warmup
  // z ~ N(0, I) matching the decoder's training distribution.
  std::vector<double> select_macro_action(const std::vector<double>& feat, double noise_std, Rng& rng,
                                          bool warmup) const {
    std::vector<double> z(z_dim_);
    if (warmup) {
      for (double& v : z) v = rng.normal();
      return z;
    }
    nn::Tensor<T> in({1, feat_dim_}, std::vector<T>(feat.begin(), feat.end()));
    nn::Tensor<T> out = actor_.forward(in);
    for (int d = 0; d < z_dim_; ++d) {
      double v = static_cast<double>(out.v[d]);
      if (noise_std > 0) v += rng.normal() * noise_std;
      z[d] = std::clamp(v, -cfg_.z_max, cfg_.z_max);
    }
    return z;
  }

  MacroBatch<T> gather(const data::MacroReplay& replay, const std::vector<long>& idx) const {
    int B = static_cast<int>(idx.size());
    MacroBatch<T> b;
    b.s = nn::Tensor<T>::zeros({B, feat_dim_});
    b.z = nn::Tensor<T>::zeros({B, z_dim_});
    b.icol = nn::Tensor<T>::zeros({B, 1});
    b.s_end = nn::Tensor<T>::zeros({B, feat_dim_});
    b.reward_sum.resize(B);
    b.boot.resize(B);
    for (int i = 0; i < B; ++i) {
      const data::MacroTransition& t = replay[idx[i]];
      for (int d = 0; d < feat_dim_; ++d) {
        b.s.v[static_cast<long>(i) * feat_dim_ + d] = static_cast<T>(t.s_feat[d]);
        b.s_end.v[static_cast<long>(i) * feat_dim_ + d] = static_cast<T>(t.s_end_feat[d]);
      }
      for (int d = 0; d < z_dim_; ++d) b.z.v[static_cast<long>(i) * z_dim_ + d] = static_cast<T>(t.z[d]);
      b.icol.v[i] = static_cast<T>(static_cast<double>(t.step_index) / cfg_.k);
      b.reward_sum[i] = static_cast<T>(t.reward_sum);
      b.boot[i] = t.done ? T(0) : static_cast<T>(discount_pow_[t.steps_remaining]);
    }
    return b;
  }

  // y = R + (1-done) * discount^steps_remaining
  //       * min(Q1', Q2')(s_end, clamp(mu'(s_end) + clipped noise), i=0)
  nn::Tensor<T> critic_target(const MacroBatch<T>& batch, Rng& noise_rng) const {
    int B = batch.s.rows();
    nn::Tensor<T> a2 = actor_tgt_.forward(batch.s_end);
    for (int i = 0; i < B; ++i)
      for (int d = 0; d < z_dim_; ++d) {
        double eps = std::clamp(noise_rng.normal() * cfg_.target_noise, -cfg_.noise_clip, cfg_.noise_clip);
        T& v = a2.v[static_cast<long>(i) * z_dim_ + d];
        v = static_cast<T>(std::clamp(static_cast<double>(v) + eps, -cfg_.z_max, cfg_.z_max));
      }
    nn::Tensor<T> qin = critic_input(batch.s_end, a2, nullptr);
    nn::Tensor<T> t1 = q1_tgt_.forward(qin);
    nn::Tensor<T> t2 = q2_tgt_.forward(qin);
    nn::Tensor<T> y = nn::Tensor<T>::zeros({B, 1});
    for (int i = 0; i < B; ++i)
      y.v[i] = batch.reward_sum[i] + batch.boot[i] * std::min(t1.v[i], t2.v[i]);
    return y;
  }

  StepLosses train_step(const data::MacroReplay& replay, Rng& batch_rng, Rng& noise_rng) {
    if (replay.size() < static_cast<size_t>(cfg_.batch_size))
      throw std::invalid_argument("train_step: replay smaller than batch size");
    std::vector<long> idx = data::sample_indices(static_cast<long>(replay.size()), cfg_.batch_size, batch_rng);
    MacroBatch<T> batch = gather(replay, idx);
    nn::Tensor<T> y = critic_target(batch, noise_rng);
    StepLosses out;
    out.critic_loss = update_critics(batch, y);
    ++updates_done_;
    if (updates_done_ % cfg_.policy_delay == 0) {
      out.actor_loss = update_actor(batch);
      out.actor_updated = true;
      sync_targets();
    }
    return out;
  }

  std::vector<EvalRow> train(env::Env& e, const FeatureMap& fm, const decoder::ActionDecoder<T>& dec,
                             uint64_t seed, bool pixel, EvalDetail* final_eval = nullptr) {
    if (dec.k != cfg_.k) throw std::invalid_argument("train: decoder k differs from config k");
    auto t0 = std::chrono::steady_clock::now();
    Rng root(seed);
    Rng reset_rng = root.child("reset");
    Rng explore_rng = root.child("explore");
    Rng batch_rng = root.child("batch");
    Rng tnoise_rng = root.child("target_noise");
    data::MacroReplay replay(cfg_.replay_capacity);
    Rollout roll(e, pixel);

    std::vector<EvalRow> log;
    EvalDetail detail;
    long eval_round = 0;
    auto do_eval = [&](long env_step) {
      detail = evaluate(e, fm, dec, root.child("eval", eval_round), pixel);
      ++eval_round;
      log.push_back(summarize(detail, env_step, t0));
    };
    do_eval(0);

    std::vector<double> obs = roll.reset(reset_rng.next_u64());
    long env_step = 0;
    long next_eval = cfg_.eval_interval;
    while (env_step < cfg_.total_steps) {
      if (roll.episode_over()) obs = roll.reset(reset_rng.next_u64());
      std::vector<double> feat = fm.encode(obs);
      std::vector<double> z =
          select_macro_action(feat, cfg_.expl_noise, explore_rng, env_step < cfg_.warmup_steps);
      std::vector<data::MacroTransition> tuples =
          execute_macro(roll, fm, dec, z, cfg_.discount, &obs);
      long m = static_cast<long>(tuples.size());
      for (auto& t : tuples) replay.add(std::move(t));
      env_step += m;
      if (env_step > cfg_.warmup_steps && replay.size() >= static_cast<size_t>(cfg_.batch_size))
        for (long j = 0; j < m; ++j) train_step(replay, batch_rng, tnoise_rng);
      if (env_step >= next_eval) {
        do_eval(env_step);
        next_eval += cfg_.eval_interval;
      }
    }
    if (log.empty() || log.back().env_step != env_step) do_eval(env_step);
    if (final_eval) *final_eval = detail;
    return log;
  }

  EvalDetail evaluate(env::Env& e, const FeatureMap& fm, const decoder::ActionDecoder<T>& dec, Rng eval_rng,
                      bool pixel) const {
    EvalDetail d;
    std::unique_ptr<env::Env> clone = e.clone();
    Rollout roll(*clone, pixel);
    for (int ep = 0; ep < cfg_.n_eval; ++ep) {
      uint64_t ep_seed = eval_rng.next_u64();
      std::vector<double> obs = roll.reset(ep_seed);
      double ret = 0;
      while (!roll.episode_over()) {
        std::vector<double> feat = fm.encode(obs);
        std::vector<double> z = select_macro_action(feat, 0.0, eval_rng, false);
        execute_macro(roll, fm, dec, z, cfg_.discount, &obs, &ret);
      }
      d.returns.push_back(ret);
      std::vector<double> pos = clone->position();
      std::vector<double> goal = clone->goal();
      double acc = 0;
      for (size_t i = 0; i < pos.size(); ++i) acc += (pos[i] - goal[i]) * (pos[i] - goal[i]);
      d.final_distances.push_back(std::sqrt(acc));
    }
    return d;
  }

  const Td3Config& config() const { return cfg_; }
  long updates_done() const { return updates_done_; }

  nn::Mlp<T> actor_, actor_tgt_, q1_, q2_, q1_tgt_, q2_tgt_;
  nn::Adam<T> actor_opt_{T(3e-4)}, critic_opt_{T(3e-4)};

  nn::ParamList<T> critic_params() {
    nn::ParamList<T> ps = q1_.params();
    for (auto* p : q2_.params()) ps.push_back(p);
    return ps;
  }

  double update_critics(const MacroBatch<T>& batch, const nn::Tensor<T>& y) {
    int B = batch.s.rows();
    nn::Tape<T> tape;
    int qin = tape.constant(critic_input(batch.s, batch.z, &batch.icol));
    std::vector<int> pids;
    int o1 = q1_.build(tape, qin, &pids);
    int o2 = q2_.build(tape, qin, &pids);
    int yc = tape.constant(y);
    int loss = tape.add(tape.scale(tape.sum_all(tape.square(tape.sub(o1, yc))), T(1) / static_cast<T>(B)),
                        tape.scale(tape.sum_all(tape.square(tape.sub(o2, yc))), T(1) / static_cast<T>(B)));
    tape.backward(loss);
    nn::ConstParamList<T> grads;
    for (int id : pids) grads.push_back(&tape.grad(id));
    critic_opt_.step(critic_params(), grads);
    return static_cast<double>(tape.value(loss).v[0]);
  }

  double update_actor(const MacroBatch<T>& batch) {
    int B = batch.s.rows();
    nn::Tape<T> tape;
    int sc = tape.constant(batch.s);
    std::vector<int> pids;
    int a = actor_.build(tape, sc, &pids);
    int zeros = tape.constant(nn::Tensor<T>::zeros({B, 1}));
    int qin = tape.concat_cols(tape.concat_cols(sc, a), zeros);
    int q = q1_.build(tape, qin, nullptr, /*trainable=*/false);
    int loss = tape.scale(tape.sum_all(q), T(-1) / static_cast<T>(B));
    tape.backward(loss);
    nn::ConstParamList<T> grads;
    for (int id : pids) grads.push_back(&tape.grad(id));
    actor_opt_.step(actor_.params(), grads);
    return static_cast<double>(tape.value(loss).v[0]);
  }

  void sync_targets() {
    nn::polyak_update(actor_tgt_.params(), const_cast<const nn::Mlp<T>&>(actor_).params(),
                      static_cast<T>(cfg_.tau));
    nn::polyak_update(q1_tgt_.params(), const_cast<const nn::Mlp<T>&>(q1_).params(), static_cast<T>(cfg_.tau));
    nn::polyak_update(q2_tgt_.params(), const_cast<const nn::Mlp<T>&>(q2_).params(), static_cast<T>(cfg_.tau));
  }

 private:
  nn::Tensor<T> critic_input(const nn::Tensor<T>& feat, const nn::Tensor<T>& act,
                             const nn::Tensor<T>* icol) const {
    int B = feat.rows();
    nn::Tensor<T> in = nn::Tensor<T>::zeros({B, feat_dim_ + z_dim_ + 1});
    for (int i = 0; i < B; ++i) {
      T* row = in.data() + static_cast<long>(i) * in.cols();
      std::copy(feat.data() + static_cast<long>(i) * feat_dim_, feat.data() + static_cast<long>(i + 1) * feat_dim_,
                row);
      std::copy(act.data() + static_cast<long>(i) * z_dim_, act.data() + static_cast<long>(i + 1) * z_dim_,
                row + feat_dim_);
      row[feat_dim_ + z_dim_] = icol ? icol->v[i] : T(0);
    }
    return in;
  }

  static EvalRow summarize(const EvalDetail& d, long env_step, std::chrono::steady_clock::time_point t0) {
    EvalRow row;
    row.env_step = env_step;
    double n = static_cast<double>(d.returns.size());
    for (double r : d.returns) row.mean_return += r;
    row.mean_return /= n;
    for (double r : d.returns) row.std_return += (r - row.mean_return) * (r - row.mean_return);
    row.std_return = std::sqrt(row.std_return / n);
    for (double f : d.final_distances) row.mean_final_distance += f;
    row.mean_final_distance /= n;
    row.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return row;
  }

  Td3Config cfg_;
  int feat_dim_, z_dim_;
  std::vector<double> discount_pow_;
  long updates_done_ = 0;
};

// Reference TD3 on raw actions. Kept as an independent update path: it is
// the baseline algorithm for comparisons and the oracle the k=1 reduction
// of DynE-TD3 is checked against.
template <class T>
class RawTd3 {
 public:
  struct Batch {
    nn::Tensor<T> s, a, s_next;
    std::vector<T> r;
    std::vector<T> not_done;
  };

  RawTd3(int feat_dim, int act_dim, const Td3Config& cfg, Rng& init_rng)
      : cfg_(cfg), feat_dim_(feat_dim), act_dim_(act_dim) {
    Rng a_rng = init_rng.child("actor");
    actor_ = nn::Mlp<T>::create(feat_dim, repr::default_hidden(), act_dim, a_rng, nn::OutputOp::kTanhScale, T(1));
    Rng q1_rng = init_rng.child("q1");
    q1_ = nn::Mlp<T>::create(feat_dim + act_dim, repr::default_hidden(), 1, q1_rng);
    Rng q2_rng = init_rng.child("q2");
    q2_ = nn::Mlp<T>::create(feat_dim + act_dim, repr::default_hidden(), 1, q2_rng);
    actor_tgt_ = actor_;
    q1_tgt_ = q1_;
    q2_tgt_ = q2_;
    actor_opt_ = nn::Adam<T>(static_cast<T>(cfg.actor_lr));
    actor_opt_.init(actor_.params());
    critic_opt_ = nn::Adam<T>(static_cast<T>(cfg.critic_lr));
    critic_opt_.init(critic_params());
  }

  std::vector<double> select_action(const std::vector<double>& feat, double noise_std, Rng& rng,
                                    bool warmup) const {
    std::vector<double> a(act_dim_);
    if (warmup) {
      for (double& v : a) v = rng.uniform(-1.0, 1.0);
      return a;
    }
    nn::Tensor<T> in({1, feat_dim_}, std::vector<T>(feat.begin(), feat.end()));
    nn::Tensor<T> out = actor_.forward(in);
    for (int d = 0; d < act_dim_; ++d) {
      double v = static_cast<double>(out.v[d]);
      if (noise_std > 0) v += rng.normal() * noise_std;
      a[d] = std::clamp(v, -1.0, 1.0);
    }
    return a;
  }

  Batch gather(const data::TransitionReplay& replay, const std::vector<long>& idx) const {
    int B = static_cast<int>(idx.size());
    Batch b;
    b.s = nn::Tensor<T>::zeros({B, feat_dim_});
    b.a = nn::Tensor<T>::zeros({B, act_dim_});
    b.s_next = nn::Tensor<T>::zeros({B, feat_dim_});
    b.r.resize(B);
    b.not_done.resize(B);
    for (int i = 0; i < B; ++i) {
      const data::FeatTransition& t = replay[idx[i]];
      for (int d = 0; d < feat_dim_; ++d) {
        b.s.v[static_cast<long>(i) * feat_dim_ + d] = static_cast<T>(t.s[d]);
        b.s_next.v[static_cast<long>(i) * feat_dim_ + d] = static_cast<T>(t.s_next[d]);
      }
      for (int d = 0; d < act_dim_; ++d) b.a.v[static_cast<long>(i) * act_dim_ + d] = static_cast<T>(t.a[d]);
      b.r[i] = static_cast<T>(t.r);
      b.not_done[i] = t.done ? T(0) : T(1);
    }
    return b;
  }

  nn::Tensor<T> critic_target(const Batch& batch, Rng& noise_rng) const {
    int B = batch.s.rows();
    nn::Tensor<T> a2 = actor_tgt_.forward(batch.s_next);
    for (int i = 0; i < B; ++i)
      for (int d = 0; d < act_dim_; ++d) {
        double eps = std::clamp(noise_rng.normal() * cfg_.target_noise, -cfg_.noise_clip, cfg_.noise_clip);
        T& v = a2.v[static_cast<long>(i) * act_dim_ + d];
        v = static_cast<T>(std::clamp(static_cast<double>(v) + eps, -1.0, 1.0));
      }
    nn::Tensor<T> qin = critic_input(batch.s_next, a2);
    nn::Tensor<T> t1 = q1_tgt_.forward(qin);
    nn::Tensor<T> t2 = q2_tgt_.forward(qin);
    nn::Tensor<T> y = nn::Tensor<T>::zeros({B, 1});
    for (int i = 0; i < B; ++i)
      y.v[i] = batch.r[i] + batch.not_done[i] * static_cast<T>(cfg_.discount) * std::min(t1.v[i], t2.v[i]);
    return y;
  }

  StepLosses train_step(const data::TransitionReplay& replay, Rng& batch_rng, Rng& noise_rng) {
    if (replay.size() < static_cast<size_t>(cfg_.batch_size))
      throw std::invalid_argument("train_step: replay smaller than batch size");
    std::vector<long> idx = data::sample_indices(static_cast<long>(replay.size()), cfg_.batch_size, batch_rng);
    Batch batch = gather(replay, idx);
    nn::Tensor<T> y = critic_target(batch, noise_rng);
    StepLosses out;
    out.critic_loss = update_critics(batch, y);
    ++updates_done_;
    if (updates_done_ % cfg_.policy_delay == 0) {
      out.actor_loss = update_actor(batch);
      out.actor_updated = true;
      sync_targets();
    }
    return out;
  }

  std::vector<EvalRow> train(env::Env& e, const FeatureMap& fm, uint64_t seed, bool pixel,
                             EvalDetail* final_eval = nullptr) {
    auto t0 = std::chrono::steady_clock::now();
    Rng root(seed);
    Rng reset_rng = root.child("reset");
    Rng explore_rng = root.child("explore");
    Rng batch_rng = root.child("batch");
    Rng tnoise_rng = root.child("target_noise");
    data::TransitionReplay replay(cfg_.replay_capacity);
    Rollout roll(e, pixel);

    std::vector<EvalRow> log;
    EvalDetail detail;
    long eval_round = 0;
    auto do_eval = [&](long env_step) {
      detail = evaluate(e, fm, root.child("eval", eval_round), pixel);
      ++eval_round;
      log.push_back(summarize(detail, env_step, t0));
    };
    do_eval(0);

    std::vector<double> obs = roll.reset(reset_rng.next_u64());
    long next_eval = cfg_.eval_interval;
    for (long env_step = 1; env_step <= cfg_.total_steps; ++env_step) {
      if (roll.episode_over()) obs = roll.reset(reset_rng.next_u64());
      std::vector<double> feat = fm.encode(obs);
      std::vector<double> a =
          select_action(feat, cfg_.expl_noise, explore_rng, env_step <= cfg_.warmup_steps);
      double r = 0;
      bool done = false;
      std::vector<double> next_obs = roll.step(a, &r, &done);
      data::FeatTransition t;
      t.s = std::move(feat);
      t.a = a;
      t.s_next = fm.encode(next_obs);
      t.r = r;
      t.done = done;
      replay.add(std::move(t));
      obs = std::move(next_obs);
      if (env_step > cfg_.warmup_steps && replay.size() >= static_cast<size_t>(cfg_.batch_size))
        train_step(replay, batch_rng, tnoise_rng);
      if (env_step >= next_eval) {
        do_eval(env_step);
        next_eval += cfg_.eval_interval;
      }
    }
    if (log.empty() || log.back().env_step != cfg_.total_steps) do_eval(cfg_.total_steps);
    if (final_eval) *final_eval = detail;
    return log;
  }

  EvalDetail evaluate(env::Env& e, const FeatureMap& fm, Rng eval_rng, bool pixel) const {
    EvalDetail d;
    std::unique_ptr<env::Env> clone = e.clone();
    Rollout roll(*clone, pixel);
    for (int ep = 0; ep < cfg_.n_eval; ++ep) {
      uint64_t ep_seed = eval_rng.next_u64();
      std::vector<double> obs = roll.reset(ep_seed);
      double ret = 0;
      while (!roll.episode_over()) {
        std::vector<double> a = select_action(fm.encode(obs), 0.0, eval_rng, false);
        double r = 0;
        bool done = false;
        obs = roll.step(a, &r, &done);
        ret += r;
      }
      d.returns.push_back(ret);
      std::vector<double> pos = clone->position();
      std::vector<double> goal = clone->goal();
      double acc = 0;
      for (size_t i = 0; i < pos.size(); ++i) acc += (pos[i] - goal[i]) * (pos[i] - goal[i]);
      d.final_distances.push_back(std::sqrt(acc));
    }
    return d;
  }

  const Td3Config& config() const { return cfg_; }

  nn::Mlp<T> actor_, actor_tgt_, q1_, q2_, q1_tgt_, q2_tgt_;
  nn::Adam<T> actor_opt_{T(3e-4)}, critic_opt_{T(3e-4)};

  nn::ParamList<T> critic_params() {
    nn::ParamList<T> ps = q1_.params();
    for (auto* p : q2_.params()) ps.push_back(p);
    return ps;
  }

  double update_critics(const Batch& batch, const nn::Tensor<T>& y) {
    int B = batch.s.rows();
    nn::Tape<T> tape;
    int qin = tape.constant(critic_input(batch.s, batch.a));
    std::vector<int> pids;
    int o1 = q1_.build(tape, qin, &pids);
    int o2 = q2_.build(tape, qin, &pids);
    int yc = tape.constant(y);
    int loss = tape.add(tape.scale(tape.sum_all(tape.square(tape.sub(o1, yc))), T(1) / static_cast<T>(B)),
                        tape.scale(tape.sum_all(tape.square(tape.sub(o2, yc))), T(1) / static_cast<T>(B)));
    tape.backward(loss);
    nn::ConstParamList<T> grads;
    for (int id : pids) grads.push_back(&tape.grad(id));
    critic_opt_.step(critic_params(), grads);
    return static_cast<double>(tape.value(loss).v[0]);
  }

  double update_actor(const Batch& batch) {
    int B = batch.s.rows();
    nn::Tape<T> tape;
    int sc = tape.constant(batch.s);
    std::vector<int> pids;
    int a = actor_.build(tape, sc, &pids);
    int qin = tape.concat_cols(sc, a);
    int q = q1_.build(tape, qin, nullptr, /*trainable=*/false);
    int loss = tape.scale(tape.sum_all(q), T(-1) / static_cast<T>(B));
    tape.backward(loss);
    nn::ConstParamList<T> grads;
    for (int id : pids) grads.push_back(&tape.grad(id));
    actor_opt_.step(actor_.params(), grads);
    return static_cast<double>(tape.value(loss).v[0]);
  }

  void sync_targets() {
    nn::polyak_update(actor_tgt_.params(), const_cast<const nn::Mlp<T>&>(actor_).params(),
                      static_cast<T>(cfg_.tau));
    nn::polyak_update(q1_tgt_.params(), const_cast<const nn::Mlp<T>&>(q1_).params(), static_cast<T>(cfg_.tau));
    nn::polyak_update(q2_tgt_.params(), const_cast<const nn::Mlp<T>&>(q2_).params(), static_cast<T>(cfg_.tau));
  }

 private:
  nn::Tensor<T> critic_input(const nn::Tensor<T>& feat, const nn::Tensor<T>& act) const {
    int B = feat.rows();
    nn::Tensor<T> in = nn::Tensor<T>::zeros({B, feat_dim_ + act_dim_});
    for (int i = 0; i < B; ++i) {
      T* row = in.data() + static_cast<long>(i) * in.cols();
      std::copy(feat.data() + static_cast<long>(i) * feat_dim_, feat.data() + static_cast<long>(i + 1) * feat_dim_,
                row);
      std::copy(act.data() + static_cast<long>(i) * act_dim_, act.data() + static_cast<long>(i + 1) * act_dim_,
                row + feat_dim_);
    }
    return in;
  }

  static EvalRow summarize(const EvalDetail& d, long env_step, std::chrono::steady_clock::time_point t0) {
    EvalRow row;
    row.env_step = env_step;
    double n = static_cast<double>(d.returns.size());
    for (double r : d.returns) row.mean_return += r;
    row.mean_return /= n;
    for (double r : d.returns) row.std_return += (r - row.mean_return) * (r - row.mean_return);
    row.std_return = std::sqrt(row.std_return / n);
    for (double f : d.final_distances) row.mean_final_distance += f;
    row.mean_final_distance /= n;
    row.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return row;
  }

  Td3Config cfg_;
  int feat_dim_, act_dim_;
  long updates_done_ = 0;
};

template <class T>
Checkpoint policy_checkpoint(const DyneTd3<T>& agent, const std::string& algo) {
  Checkpoint c;
  c.kind = "policy";
  c.meta["algo"] = algo;
  c.meta["k"] = agent.config().k;
  c.meta["z_max"] = agent.config().z_max;
  repr::put_mlp(c, "actor", agent.actor_);
  repr::put_mlp(c, "q1", agent.q1_);
  repr::put_mlp(c, "q2", agent.q2_);
  return c;
}

template <class T>
Checkpoint policy_checkpoint(const RawTd3<T>& agent, const std::string& algo) {
  Checkpoint c;
  c.kind = "policy";
  c.meta["algo"] = algo;
  c.meta["k"] = 1;
  c.meta["z_max"] = 1.0;
  repr::put_mlp(c, "actor", agent.actor_);
  repr::put_mlp(c, "q1", agent.q1_);
  repr::put_mlp(c, "q2", agent.q2_);
  return c;
}

}  // namespace dyne::rl
