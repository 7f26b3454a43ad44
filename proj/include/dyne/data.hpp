#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dyne/env.hpp"
#include "dyne/rng.hpp"

namespace dyne::data {

struct Transition {
  std::vector<double> s, a, s_next;
  double r = 0;
  bool done = false;
  int episode_id = 0;
  int step_index = 0;
};

// Column-major storage of transitions collected from one environment.
// Frames (when collected) are stored once per step as intensity codes
// {0,1,2} = value*2, which is lossless for the renderer's three levels.
class TransitionDataset {
 public:
  std::string env_name;
  uint64_t seed = 0;
  uint64_t config_hash = 0;
  int obs_dim = 0;
  int act_dim = 0;
  int episode_length = 0;
  bool has_frames = false;

  std::vector<double> s, a, s_next, r;
  std::vector<uint8_t> done;
  std::vector<int32_t> episode_id, step_index;
  std::vector<uint8_t> frames;           // size() * kFramePixels
  std::vector<uint8_t> terminal_frames;  // one per completed episode

  long size() const { return static_cast<long>(r.size()); }
  Transition get(long i) const;

  const double* obs_at(long i) const { return s.data() + i * obs_dim; }
  const double* next_obs_at(long i) const { return s_next.data() + i * obs_dim; }
  const double* action_at(long i) const { return a.data() + i * act_dim; }

  // Frame stack for the state at step t (oldest first); repeats the
  // episode's first frame when t is near the episode start.
  void frame_stack_at(long t, float* out) const;

  // The two frames a k-step segment starting at t predicts: state frames at
  // t+k-1 and t+k, in that order. Returns false when the trailing frame is
  // unavailable (collection stopped mid-episode).
  bool target_frames_at(long t, int k, float* out) const;

  void save(const std::string& path) const;
  static TransitionDataset load(const std::string& path);
};

// Exactly n_steps transitions under the uniform random behavior policy,
// resetting at episode boundaries. Deterministic per seed.
TransitionDataset collect_random(env::Env& e, long n_steps, uint64_t seed, bool with_frames = false);

// Start indices of all k-step windows that stay within one episode.
std::vector<long> extract_segments(const TransitionDataset& ds, int k);

struct SegmentK {
  std::vector<double> s0;      // s_t
  std::vector<double> a_flat;  // k actions, concatenated
  std::vector<double> s_k;     // s_{t+k}
};
SegmentK get_segment(const TransitionDataset& ds, long start, int k);

struct WhiteningStats {
  std::vector<double> mean, stdv;
  static constexpr double kStdFloor = 1e-6;

  void apply(const double* delta, double* out) const {
    for (size_t d = 0; d < mean.size(); ++d) out[d] = (delta[d] - mean[d]) / stdv[d];
  }
  void unapply(const double* white, double* out) const {
    for (size_t d = 0; d < mean.size(); ++d) out[d] = white[d] * stdv[d] + mean[d];
  }
};

// Population mean/std of delta = s_{t+k} - s_t over the given segments.
WhiteningStats compute_whitening(const TransitionDataset& ds, const std::vector<long>& starts, int k);

// Uniform-with-replacement index sample; throws on an empty store.
std::vector<long> sample_indices(long store_size, int batch_size, Rng& rng);

// One step of a macro-action execution, from the perspective of step i.
struct MacroTransition {
  std::vector<double> s_feat;      // encoded observation where the macro was issued at step i
  std::vector<double> z;           // macro-action
  std::vector<double> s_end_feat;  // encoded observation after the last executed step
  double reward_sum = 0;           // discounted reward over the remaining executed steps
  int step_index = 0;              // i
  int steps_remaining = 0;         // executed steps after (and including) i
  bool done = false;
};

class MacroReplay {
 public:
  explicit MacroReplay(size_t capacity = 1000000) : capacity_(capacity) {}
  void add(MacroTransition t);
  size_t size() const { return buf_.size(); }
  const MacroTransition& operator[](size_t i) const { return buf_[i]; }

 private:
  std::vector<MacroTransition> buf_;
  size_t capacity_;
  size_t next_ = 0;
};

struct FeatTransition {
  std::vector<double> s, a, s_next;
  double r = 0;
  bool done = false;
};

class TransitionReplay {
 public:
  explicit TransitionReplay(size_t capacity = 1000000) : capacity_(capacity) {}
  void add(FeatTransition t);
  size_t size() const { return buf_.size(); }
  const FeatTransition& operator[](size_t i) const { return buf_[i]; }

 private:
  std::vector<FeatTransition> buf_;
  size_t capacity_;
  size_t next_ = 0;
};

}  // namespace dyne::data
