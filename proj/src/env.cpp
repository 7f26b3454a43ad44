#include "dyne/env.hpp"

#include <algorithm>
#include <cmath>

#include "dyne/rng.hpp"

namespace dyne::env {

namespace {

constexpr double kPi = 3.14159265358979323846;
constexpr double kActionPenalty = 0.01;

double clampd(double v, double lo, double hi) { return v < lo ? lo : (v > hi ? hi : v); }

std::vector<double> clamp_action(const std::vector<double>& a, int dim) {
  if (static_cast<int>(a.size()) != dim) throw std::invalid_argument("step: action dimension mismatch");
  std::vector<double> c(a);
  for (double& v : c) v = clampd(v, -1.0, 1.0);
  return c;
}

// World [-1,1] -> pixel column/row.
int to_pixel(double x) {
  int p = static_cast<int>(std::floor((x + 1.0) / 2.0 * kFrameSide));
  return std::clamp(p, 0, kFrameSide - 1);
}

// Goal drawn as a ring (intensity 0.5), agent as a filled disc on top.
void draw_scene(float* out, double ax, double ay, double gx, double gy) {
  std::fill(out, out + kFramePixels, 0.f);
  int gc = to_pixel(gx), gr = to_pixel(gy);
  int ac = to_pixel(ax), ar = to_pixel(ay);
  for (int r = 0; r < kFrameSide; ++r)
    for (int c = 0; c < kFrameSide; ++c) {
      double dg = std::hypot(static_cast<double>(r - gr), static_cast<double>(c - gc));
      if (dg >= 3.25 && dg <= 4.75) out[r * kFrameSide + c] = 0.5f;
    }
  for (int r = 0; r < kFrameSide; ++r)
    for (int c = 0; c < kFrameSide; ++c) {
      double da = std::hypot(static_cast<double>(r - ar), static_cast<double>(c - ac));
      if (da <= 2.0) out[r * kFrameSide + c] = 1.0f;
    }
}

}  // namespace

void Env::render_frame(float*) const {
  throw std::runtime_error("render_frame: environment does not support rendering");
}

std::vector<double> distance_from_start(const std::vector<std::vector<double>>& positions) {
  if (positions.empty()) throw std::invalid_argument("distance_from_start: empty trajectory");
  std::vector<double> out(positions.size());
  const std::vector<double>& p0 = positions.front();
  for (size_t i = 0; i < positions.size(); ++i) {
    double acc = 0;
    for (size_t d = 0; d < p0.size(); ++d) {
      double diff = positions[i][d] - p0[d];
      acc += diff * diff;
    }
    out[i] = std::sqrt(acc);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Point1D: velocity-controlled point on the segment [-1, 1].

class Point1D final : public Env {
 public:
  Point1D() {
    spec_.name = "Point1D";
    spec_.obs_dim = 2;
    spec_.action_dim = 1;
    spec_.reward = "-|x - goal| - 0.01*a^2";
    spec_.position_dim = 1;
    spec_.arena_diameter = 2.0;
    spec_.renderable = true;
  }

  const EnvSpec& spec() const override { return spec_; }

  std::vector<double> reset(uint64_t seed) override {
    Rng rng(seed);
    x_ = rng.uniform(-1.0, 1.0);
    goal_ = rng.uniform(-1.0, 1.0);
    steps_done_ = 0;
    return observe();
  }

  StepResult step(const std::vector<double>& action) override {
    if (episode_over()) throw std::logic_error("step: episode already finished");
    std::vector<double> a = clamp_action(action, 1);
    x_ = clampd(x_ + a[0] * spec_.dt, -1.0, 1.0);
    ++steps_done_;
    StepResult r;
    r.obs = observe();
    r.reward = -std::abs(x_ - goal_) - kActionPenalty * a[0] * a[0];
    r.done = episode_over();
    return r;
  }

  std::vector<double> observe() const override { return {x_, goal_}; }
  std::vector<double> position() const override { return {x_}; }
  std::vector<double> goal() const override { return {goal_}; }

  std::vector<double> save_state() const override { return {x_, goal_, static_cast<double>(steps_done_)}; }
  void restore_state(const std::vector<double>& s) override {
    x_ = s[0];
    goal_ = s[1];
    steps_done_ = static_cast<int>(s[2]);
  }

  void render_frame(float* out) const override { draw_scene(out, x_, 0.0, goal_, 0.0); }

  std::unique_ptr<Env> clone() const override { return std::make_unique<Point1D>(*this); }

 private:
  EnvSpec spec_;
  double x_ = 0, goal_ = 0;
};

// ---------------------------------------------------------------------------
// PointMass2D: force-controlled double integrator in the box [-1, 1]^2.

class PointMass2D final : public Env {
 public:
  PointMass2D() {
    spec_.name = "PointMass2D";
    spec_.obs_dim = 6;
    spec_.action_dim = 2;
    spec_.reward = "-||pos - goal|| - 0.01*||a||^2";
    spec_.position_dim = 2;
    spec_.arena_diameter = 2.0 * std::sqrt(2.0);
    spec_.renderable = true;
  }

  const EnvSpec& spec() const override { return spec_; }

  std::vector<double> reset(uint64_t seed) override {
    Rng rng(seed);
    pos_[0] = rng.uniform(-1.0, 1.0);
    pos_[1] = rng.uniform(-1.0, 1.0);
    vel_[0] = vel_[1] = 0.0;
    goal_[0] = rng.uniform(-1.0, 1.0);
    goal_[1] = rng.uniform(-1.0, 1.0);
    steps_done_ = 0;
    return observe();
  }

  StepResult step(const std::vector<double>& action) override {
    if (episode_over()) throw std::logic_error("step: episode already finished");
    std::vector<double> a = clamp_action(action, 2);
    for (int d = 0; d < 2; ++d) {
      vel_[d] = clampd(vel_[d] + a[d] * spec_.dt, -1.0, 1.0);
      pos_[d] = clampd(pos_[d] + vel_[d] * spec_.dt, -1.0, 1.0);
    }
    ++steps_done_;
    StepResult r;
    r.obs = observe();
    r.reward = -goal_distance() - kActionPenalty * (a[0] * a[0] + a[1] * a[1]);
    r.done = episode_over();
    return r;
  }

  std::vector<double> observe() const override {
    return {pos_[0], pos_[1], vel_[0], vel_[1], goal_[0], goal_[1]};
  }
  std::vector<double> position() const override { return {pos_[0], pos_[1]}; }
  std::vector<double> goal() const override { return {goal_[0], goal_[1]}; }

  std::vector<double> save_state() const override {
    return {pos_[0], pos_[1], vel_[0], vel_[1], goal_[0], goal_[1], static_cast<double>(steps_done_)};
  }
  void restore_state(const std::vector<double>& s) override {
    pos_[0] = s[0];
    pos_[1] = s[1];
    vel_[0] = s[2];
    vel_[1] = s[3];
    goal_[0] = s[4];
    goal_[1] = s[5];
    steps_done_ = static_cast<int>(s[6]);
  }

  void render_frame(float* out) const override { draw_scene(out, pos_[0], pos_[1], goal_[0], goal_[1]); }

  std::unique_ptr<Env> clone() const override { return std::make_unique<PointMass2D>(*this); }

 private:
  double goal_distance() const { return std::hypot(pos_[0] - goal_[0], pos_[1] - goal_[1]); }

  EnvSpec spec_;
  double pos_[2] = {0, 0}, vel_[2] = {0, 0}, goal_[2] = {0, 0};
};

// ---------------------------------------------------------------------------
// Reacher2Link: torque-controlled planar arm, links 0.1 and 0.11.

class Reacher2Link final : public Env {
 public:
  static constexpr double kL1 = 0.1, kL2 = 0.11;
  static constexpr double kGain = 5.0;
  static constexpr double kOmegaMax = 4.0 * kPi;

  Reacher2Link() {
    spec_.name = "Reacher2Link";
    spec_.obs_dim = 8;
    spec_.action_dim = 2;
    spec_.reward = "-||effector - goal|| - 0.01*||a||^2";
    spec_.position_dim = 2;
    spec_.arena_diameter = 2.0 * (kL1 + kL2);
    spec_.renderable = false;
  }

  const EnvSpec& spec() const override { return spec_; }

  std::vector<double> reset(uint64_t seed) override {
    Rng rng(seed);
    theta_[0] = rng.uniform(-kPi, kPi);
    theta_[1] = rng.uniform(-kPi, kPi);
    omega_[0] = omega_[1] = 0.0;
    double radius = rng.uniform(0.05, 0.20);
    double angle = rng.uniform(0.0, 2.0 * kPi);
    goal_[0] = radius * std::cos(angle);
    goal_[1] = radius * std::sin(angle);
    steps_done_ = 0;
    return observe();
  }

  StepResult step(const std::vector<double>& action) override {
    if (episode_over()) throw std::logic_error("step: episode already finished");
    std::vector<double> a = clamp_action(action, 2);
    for (int j = 0; j < 2; ++j) {
      omega_[j] = clampd(omega_[j] + a[j] * spec_.dt * kGain, -kOmegaMax, kOmegaMax);
      theta_[j] += omega_[j] * spec_.dt;
    }
    ++steps_done_;
    StepResult r;
    r.obs = observe();
    r.reward = -goal_distance() - kActionPenalty * (a[0] * a[0] + a[1] * a[1]);
    r.done = episode_over();
    return r;
  }

  std::vector<double> observe() const override {
    return {std::cos(theta_[0]), std::sin(theta_[0]), std::cos(theta_[1]), std::sin(theta_[1]),
            omega_[0],           omega_[1],           goal_[0],            goal_[1]};
  }

  std::vector<double> position() const override {
    auto [x, y] = effector();
    return {x, y};
  }
  std::vector<double> goal() const override { return {goal_[0], goal_[1]}; }

  std::vector<double> save_state() const override {
    return {theta_[0], theta_[1], omega_[0], omega_[1], goal_[0], goal_[1], static_cast<double>(steps_done_)};
  }
  void restore_state(const std::vector<double>& s) override {
    theta_[0] = s[0];
    theta_[1] = s[1];
    omega_[0] = s[2];
    omega_[1] = s[3];
    goal_[0] = s[4];
    goal_[1] = s[5];
    steps_done_ = static_cast<int>(s[6]);
  }

  std::unique_ptr<Env> clone() const override { return std::make_unique<Reacher2Link>(*this); }

 private:
  std::pair<double, double> effector() const {
    double x = kL1 * std::cos(theta_[0]) + kL2 * std::cos(theta_[0] + theta_[1]);
    double y = kL1 * std::sin(theta_[0]) + kL2 * std::sin(theta_[0] + theta_[1]);
    return {x, y};
  }
  double goal_distance() const {
    auto [x, y] = effector();
    return std::hypot(x - goal_[0], y - goal_[1]);
  }

  EnvSpec spec_;
  double theta_[2] = {0, 0}, omega_[2] = {0, 0}, goal_[2] = {0, 0};
};

std::unique_ptr<Env> make_env(const std::string& name) {
  if (name == "Point1D") return std::make_unique<Point1D>();
  if (name == "PointMass2D") return std::make_unique<PointMass2D>();
  if (name == "Reacher2Link") return std::make_unique<Reacher2Link>();
  throw std::invalid_argument("make_env: unknown environment '" + name + "'");
}

std::vector<std::string> env_names() { return {"Point1D", "PointMass2D", "Reacher2Link"}; }

}  // namespace dyne::env
