#include "dyne/analysis.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <numeric>
#include <thread>

#include "dyne/td3.hpp"

namespace dyne::analysis {

namespace {

int bin_of(double d, double diameter, int n_bins) {
  int idx = static_cast<int>(std::floor(d / diameter * n_bins));
  return std::clamp(idx, 0, n_bins - 1);
}

std::vector<double> rank_with_ties(const std::vector<double>& x) {
  size_t n = x.size();
  std::vector<size_t> order(n);
  std::iota(order.begin(), order.end(), size_t{0});
  std::sort(order.begin(), order.end(), [&](size_t a, size_t b) { return x[a] < x[b]; });
  std::vector<double> ranks(n);
  size_t i = 0;
  while (i < n) {
    size_t j = i;
    while (j + 1 < n && x[order[j + 1]] == x[order[i]]) ++j;
    double avg = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
    for (size_t t = i; t <= j; ++t) ranks[order[t]] = avg;
    i = j + 1;
  }
  return ranks;
}

}  // namespace

double spearman(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2) throw std::invalid_argument("spearman: need two equal-length series");
  std::vector<double> rx = rank_with_ties(x), ry = rank_with_ties(y);
  double n = static_cast<double>(x.size());
  double mx = 0, my = 0;
  for (size_t i = 0; i < x.size(); ++i) {
    mx += rx[i];
    my += ry[i];
  }
  mx /= n;
  my /= n;
  double sxy = 0, sxx = 0, syy = 0;
  for (size_t i = 0; i < x.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  if (sxx == 0 || syy == 0) return 0.0;
  return sxy / std::sqrt(sxx * syy);
}

Histogram exploration_histogram(env::Env& e, PolicyKind kind, int horizon, int n_episodes, uint64_t seed,
                                const decoder::ActionDecoder<double>* dec, int k) {
  if (kind == PolicyKind::kDyneRandom) {
    if (!dec) throw std::invalid_argument("exploration_histogram: dyne-random requires a trained decoder");
    k = dec->k;
  }
  const env::EnvSpec& spec = e.spec();
  Histogram h;
  h.edges.resize(kHistogramBins + 1);
  for (int i = 0; i <= kHistogramBins; ++i)
    h.edges[i] = spec.arena_diameter * static_cast<double>(i) / kHistogramBins;
  h.counts.assign(kHistogramBins, 0);

  bool terminal_stat = horizon <= k;
  Rng root(seed);
  for (int ep = 0; ep < n_episodes; ++ep) {
    e.reset(root.child("reset", ep).root_seed());
    Rng policy = root.child("policy", ep);
    std::vector<std::vector<double>> positions;
    positions.push_back(e.position());
    std::vector<std::vector<double>> macro;
    int macro_pos = 0;
    for (int t = 0; t < horizon && !e.episode_over(); ++t) {
      std::vector<double> a;
      if (kind == PolicyKind::kRawRandom) {
        a.resize(spec.action_dim);
        for (double& v : a) v = policy.uniform(-1.0, 1.0);
      } else {
        if (macro_pos == 0) {
          std::vector<double> z(dec->z_a_dim());
          for (double& v : z) v = policy.normal();
          macro = dec->decode(z);
        }
        a = macro[macro_pos];
        macro_pos = (macro_pos + 1) % k;
      }
      e.step(a);
      positions.push_back(e.position());
    }
    std::vector<double> dist = env::distance_from_start(positions);
    double stat = terminal_stat ? dist.back() : *std::max_element(dist.begin(), dist.end());
    ++h.counts[bin_of(stat, spec.arena_diameter, kHistogramBins)];
    ++h.total;
  }
  return h;
}

std::vector<double> visit_ratio(const Histogram& dyne, const Histogram& raw) {
  if (dyne.edges != raw.edges) throw std::invalid_argument("visit_ratio: histogram binning differs");
  if (dyne.total != raw.total) throw std::invalid_argument("visit_ratio: histogram totals differ");
  std::vector<double> ratio(dyne.counts.size());
  for (size_t i = 0; i < ratio.size(); ++i)
    ratio[i] = (static_cast<double>(dyne.counts[i]) + 1.0) / (static_cast<double>(raw.counts[i]) + 1.0);
  return ratio;
}

OutcomeTable export_outcome_embedding(env::Env& e, const repr::DynEModel<double>& model, long n_sequences,
                                      uint64_t seed, int n_pairs) {
  int k = model.cfg.k;
  int act_dim = e.spec().action_dim;
  Rng root(seed);
  e.reset(root.child("start").root_seed());
  std::vector<double> saved = e.save_state();
  std::vector<double> obs0 = e.observe();
  int ds_dim = static_cast<int>(obs0.size());

  OutcomeTable table;
  table.ds_dim = ds_dim;
  table.za_dim = model.z_a_dim();
  table.n = n_sequences;
  table.rows.reserve(n_sequences * (ds_dim + table.za_dim));

  Rng seq_rng = root.child("seqs");
  nn::Tensor<double> a_flat = nn::Tensor<double>::zeros({static_cast<int>(n_sequences), k * act_dim});
  std::vector<std::vector<double>> deltas(n_sequences);
  for (long i = 0; i < n_sequences; ++i) {
    e.restore_state(saved);
    std::vector<double> a(act_dim);
    for (int j = 0; j < k; ++j) {
      for (int d = 0; d < act_dim; ++d) {
        a[d] = seq_rng.uniform(-1.0, 1.0);
        a_flat.v[i * k * act_dim + static_cast<long>(j) * act_dim + d] = a[d];
      }
      e.step(a);
    }
    std::vector<double> obs = e.observe();
    deltas[i].resize(ds_dim);
    for (int d = 0; d < ds_dim; ++d) deltas[i][d] = obs[d] - obs0[d];
  }
  e.restore_state(saved);

  nn::GaussianParams<double> q = model.encode_actions(a_flat);
  for (long i = 0; i < n_sequences; ++i) {
    for (int d = 0; d < ds_dim; ++d) table.rows.push_back(deltas[i][d]);
    for (int d = 0; d < table.za_dim; ++d) table.rows.push_back(q.mean.v[i * table.za_dim + d]);
  }

  if (n_sequences >= 2) {
    Rng pair_rng = root.child("pairs");
    std::vector<double> od, ed;
    od.reserve(n_pairs);
    ed.reserve(n_pairs);
    for (int p = 0; p < n_pairs; ++p) {
      long i = pair_rng.uniform_int(static_cast<int>(n_sequences));
      long j = pair_rng.uniform_int(static_cast<int>(n_sequences));
      while (j == i) j = pair_rng.uniform_int(static_cast<int>(n_sequences));
      double dd = 0, de = 0;
      for (int d = 0; d < ds_dim; ++d) {
        double diff = deltas[i][d] - deltas[j][d];
        dd += diff * diff;
      }
      for (int d = 0; d < table.za_dim; ++d) {
        double diff = q.mean.v[i * table.za_dim + d] - q.mean.v[j * table.za_dim + d];
        de += diff * diff;
      }
      od.push_back(std::sqrt(dd));
      ed.push_back(std::sqrt(de));
    }
    table.correlation = spearman(od, ed);
  }
  return table;
}

EmbeddingValueTable export_embedding_values(env::Env& e, const rl::FeatureMap& fm, const nn::Mlp<double>& actor,
                                            const nn::Mlp<double>& q1, bool critic_has_index_input,
                                            long n_states, uint64_t seed, bool pixel) {
  EmbeddingValueTable table;
  table.state_dim = e.spec().obs_dim;
  table.feat_dim = fm.dim();
  table.n = n_states;
  table.rows.reserve(n_states * (table.state_dim + table.feat_dim + 1));

  Rng root(seed);
  rl::Rollout roll(e, pixel);
  Rng actions = root.child("actions");
  int episode = 0;
  std::vector<double> obs;
  for (long i = 0; i < n_states; ++i) {
    if (i == 0 || roll.episode_over()) obs = roll.reset(root.child("reset", episode++).root_seed());
    std::vector<double> state = e.observe();
    std::vector<double> feat = fm.encode(obs);
    nn::Tensor<double> fin({1, static_cast<int>(feat.size())}, feat);
    nn::Tensor<double> mu = actor.forward(fin);
    std::vector<double> qin_v(feat);
    qin_v.insert(qin_v.end(), mu.v.begin(), mu.v.end());
    if (critic_has_index_input) qin_v.push_back(0.0);
    nn::Tensor<double> qin({1, static_cast<int>(qin_v.size())}, qin_v);
    double value = q1.forward(qin).v[0];

    for (double v : state) table.rows.push_back(v);
    for (double v : feat) table.rows.push_back(v);
    table.rows.push_back(value);

    std::vector<double> a(e.spec().action_dim);
    for (double& v : a) v = actions.uniform(-1.0, 1.0);
    double r = 0;
    bool done = false;
    obs = roll.step(a, &r, &done);
  }
  return table;
}

TrajectoryTable export_trajectories(env::Env& e, PolicyKind kind, int n_episodes, uint64_t seed,
                                    const decoder::ActionDecoder<double>* dec, int k) {
  if (kind == PolicyKind::kDyneRandom) {
    if (!dec) throw std::invalid_argument("export_trajectories: dyne-random requires a trained decoder");
    k = dec->k;
  }
  TrajectoryTable table;
  table.pos_dim = e.spec().position_dim;
  Rng root(seed);
  for (int ep = 0; ep < n_episodes; ++ep) {
    e.reset(root.child("reset", ep).root_seed());
    Rng policy = root.child("policy", ep);
    std::vector<std::vector<double>> macro;
    int macro_pos = 0;
    int step = 0;
    auto emit = [&]() {
      table.rows.push_back(ep);
      table.rows.push_back(step);
      for (double v : e.position()) table.rows.push_back(v);
      ++table.n;
    };
    emit();
    while (!e.episode_over()) {
      std::vector<double> a;
      if (kind == PolicyKind::kRawRandom) {
        a.resize(e.spec().action_dim);
        for (double& v : a) v = policy.uniform(-1.0, 1.0);
      } else {
        if (macro_pos == 0) {
          std::vector<double> z(dec->z_a_dim());
          for (double& v : z) v = policy.normal();
          macro = dec->decode(z);
        }
        a = macro[macro_pos];
        macro_pos = (macro_pos + 1) % k;
      }
      e.step(a);
      ++step;
      emit();
    }
  }
  return table;
}

namespace {

template <class T>
double sweep_run(const data::TransitionDataset& ds, const std::string& env_name, int k, uint64_t seed,
                 long budget, long repr_updates, long decoder_updates) {
  repr::DynEConfig rc;
  rc.k = k;
  rc.n_updates = repr_updates;
  repr::TrainedDynE<T> trained = repr::train_dyne<T>(ds, rc, seed);
  decoder::DecoderConfig dc;
  dc.n_updates = decoder_updates;
  decoder::TrainedDecoder<T> dec = decoder::train_decoder<T>(trained.model.e_a, k, ds.act_dim, dc, seed);

  std::unique_ptr<env::Env> e = env::make_env(env_name);
  rl::Td3Config tc;
  tc.k = k;
  tc.total_steps = budget;
  tc.eval_interval = std::max<long>(1, budget / 10);
  rl::IdentityFeatures fm(e->spec().obs_dim);
  Rng init = Rng(seed).child("rl_init");
  rl::DyneTd3<T> agent(fm.dim(), trained.model.z_a_dim(), tc, init);
  std::vector<rl::EvalRow> log = agent.train(*e, fm, dec.decoder, seed, false);
  return log.back().mean_return;
}

}  // namespace

std::vector<SweepResult> run_k_sweep(const SweepSettings& settings) {
  if (settings.ks.empty() || settings.seeds.empty())
    throw std::invalid_argument("run_k_sweep: need at least one k and one seed");
  std::unique_ptr<env::Env> e = env::make_env(settings.env_name);
  data::TransitionDataset ds =
      data::collect_random(*e, settings.collect_steps, settings.seeds.front(), false);

  struct Task {
    int k;
    uint64_t seed;
    double result = 0;
  };
  std::vector<Task> tasks;
  for (int k : settings.ks)
    for (uint64_t s : settings.seeds) tasks.push_back({k, s, 0});

  std::atomic<size_t> cursor{0};
  auto worker = [&]() {
    for (;;) {
      size_t i = cursor.fetch_add(1);
      if (i >= tasks.size()) return;
      if (settings.precision == "float32")
        tasks[i].result = sweep_run<float>(ds, settings.env_name, tasks[i].k, tasks[i].seed, settings.budget,
                                           settings.repr_updates, settings.decoder_updates);
      else
        tasks[i].result = sweep_run<double>(ds, settings.env_name, tasks[i].k, tasks[i].seed, settings.budget,
                                            settings.repr_updates, settings.decoder_updates);
    }
  };
  int n_workers = std::max(1, settings.workers);
  std::vector<std::thread> pool;
  for (int w = 1; w < n_workers; ++w) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();

  std::vector<SweepResult> results;
  for (int k : settings.ks) {
    SweepResult r;
    r.k = k;
    for (const Task& t : tasks)
      if (t.k == k) r.per_seed.push_back(t.result);
    r.min = *std::min_element(r.per_seed.begin(), r.per_seed.end());
    r.max = *std::max_element(r.per_seed.begin(), r.per_seed.end());
    r.mean = std::accumulate(r.per_seed.begin(), r.per_seed.end(), 0.0) / r.per_seed.size();
    results.push_back(std::move(r));
  }
  return results;
}

}  // namespace dyne::analysis
