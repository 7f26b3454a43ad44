#pragma once

#include <optional>
#include <string>
#include <vector>

#include "dyne/decoder.hpp"
#include "dyne/env.hpp"
#include "dyne/repr.hpp"
#include "dyne/rng.hpp"
#include "dyne/td3.hpp"

namespace dyne::analysis {

enum class PolicyKind { kRawRandom, kDyneRandom };

struct Histogram {
  std::vector<double> edges;  // n_bins + 1, strictly increasing
  std::vector<long> counts;
  long total = 0;
};

constexpr int kHistogramBins = 30;

// Distance-from-start statistics of random exploration. For horizons up to k
// the terminal distance is histogrammed (the k-step reachability view);
// longer horizons histogram the maximum distance reached in the episode.
// dyne-random draws z ~ N(0, I) every k steps and executes decoded actions.
Histogram exploration_histogram(env::Env& e, PolicyKind kind, int horizon, int n_episodes, uint64_t seed,
                                const decoder::ActionDecoder<double>* dec, int k = 4);

// Per-bin (dyne + 1) / (raw + 1); requires identical binning and totals.
std::vector<double> visit_ratio(const Histogram& dyne, const Histogram& raw);

// Spearman rank correlation with average ranks for ties.
double spearman(const std::vector<double>& x, const std::vector<double>& y);

struct OutcomeTable {
  int ds_dim = 0, za_dim = 0;
  std::vector<double> rows;  // n x (ds_dim + za_dim)
  long n = 0;
  std::optional<double> correlation;  // absent when fewer than 2 sequences
};

// Roll n_sequences random k-action sequences from one fixed start state;
// record the raw observation delta and the action-embedding mean, plus the
// Spearman correlation between pairwise outcome and embedding distances over
// an n_pairs subsample.
OutcomeTable export_outcome_embedding(env::Env& e, const repr::DynEModel<double>& model, long n_sequences,
                                      uint64_t seed, int n_pairs = 1000);

struct EmbeddingValueTable {
  int state_dim = 0, feat_dim = 0;
  std::vector<double> rows;  // n x (state_dim + feat_dim + 1)
  long n = 0;
};

// States from a random policy, their features, and Q1(feat, mu(feat), i=0)
// under the supplied policy nets. Dimensionality reduction is left to
// external tools.
EmbeddingValueTable export_embedding_values(env::Env& e, const rl::FeatureMap& fm,
                                            const nn::Mlp<double>& actor, const nn::Mlp<double>& q1,
                                            bool critic_has_index_input, long n_states, uint64_t seed,
                                            bool pixel);

struct TrajectoryTable {
  int pos_dim = 0;
  std::vector<double> rows;  // n x (episode, step, position...)
  long n = 0;
};

TrajectoryTable export_trajectories(env::Env& e, PolicyKind kind, int n_episodes, uint64_t seed,
                                    const decoder::ActionDecoder<double>* dec, int k = 4);

struct SweepResult {
  int k = 0;
  std::vector<double> per_seed;  // mean evaluation return at budget
  double min = 0, mean = 0, max = 0;
};

struct SweepSettings {
  std::string env_name;
  std::vector<int> ks;
  std::vector<uint64_t> seeds;
  long budget = 50000;
  long collect_steps = 100000;
  long repr_updates = 10000;
  long decoder_updates = 4000;
  int workers = 2;
  std::string precision = "float32";
};

// Full pipeline (representation -> decoder -> RL) per (k, seed) on a shared
// random dataset; aggregates final performance per k.
std::vector<SweepResult> run_k_sweep(const SweepSettings& settings);

}  // namespace dyne::analysis
