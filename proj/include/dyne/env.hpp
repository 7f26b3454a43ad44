#pragma once

#include <cstdint>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

namespace dyne::env {

constexpr int kFrameSide = 32;
constexpr int kFramePixels = kFrameSide * kFrameSide;
constexpr int kFrameStackDepth = 4;

struct EnvSpec {
  std::string name;
  int obs_dim = 0;
  int action_dim = 0;
  double action_low = -1.0;
  double action_high = 1.0;
  int episode_length = 100;
  double dt = 0.05;
  std::string reward;
  int position_dim = 0;       // width of position() output
  double arena_diameter = 0;  // max distance between two positions
  bool renderable = false;
};

struct StepResult {
  std::vector<double> obs;
  double reward = 0;
  bool done = false;
};

// Deterministic control environment. All randomness enters through the
// reset seed; (seed, action sequence) fully determines a trajectory.
class Env {
 public:
  virtual ~Env() = default;

  virtual const EnvSpec& spec() const = 0;
  virtual std::vector<double> reset(uint64_t seed) = 0;
  virtual StepResult step(const std::vector<double>& action) = 0;
  virtual std::vector<double> observe() const = 0;
  virtual std::vector<double> position() const = 0;
  virtual std::vector<double> goal() const = 0;

  // Full state including goal and step counter, for save/restore rollouts.
  virtual std::vector<double> save_state() const = 0;
  virtual void restore_state(const std::vector<double>& state) = 0;

  // 32x32 grayscale frame, intensities {0, 0.5, 1}. Throws
  // std::runtime_error for environments without rendering.
  virtual void render_frame(float* out) const;

  virtual std::unique_ptr<Env> clone() const = 0;

  int steps_done() const { return steps_done_; }
  bool episode_over() const { return steps_done_ >= spec().episode_length; }

 protected:
  int steps_done_ = 0;
};

std::unique_ptr<Env> make_env(const std::string& name);
std::vector<std::string> env_names();

// Euclidean distance of each position from the first one.
std::vector<double> distance_from_start(const std::vector<std::vector<double>>& positions);

// Rolling stack of the kFrameStackDepth most recent frames; reset fills the
// stack with the initial frame.
class FrameStack {
 public:
  FrameStack() : data_(kFrameStackDepth * kFramePixels, 0.f) {}
  void reset(const float* frame) {
    for (int i = 0; i < kFrameStackDepth; ++i)
      std::copy(frame, frame + kFramePixels, data_.begin() + static_cast<long>(i) * kFramePixels);
  }
  void push(const float* frame) {
    std::copy(data_.begin() + kFramePixels, data_.end(), data_.begin());
    std::copy(frame, frame + kFramePixels, data_.end() - kFramePixels);
  }
  const std::vector<float>& stacked() const { return data_; }

 private:
  std::vector<float> data_;  // oldest frame first
};

}  // namespace dyne::env
