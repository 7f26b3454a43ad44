#include <doctest.h>

#include <cmath>
#include <set>

#include "dyne/env.hpp"
#include "dyne/rng.hpp"

using namespace dyne;

TEST_CASE("reset determinism and seed variation") {
  for (const std::string& name : env::env_names()) {
    auto e = env::make_env(name);
    std::vector<double> a = e->reset(1234);
    std::vector<double> b = e->reset(1234);
    CHECK(a == b);
    CHECK(static_cast<int>(a.size()) == e->spec().obs_dim);

    // goals differ across seeds with overwhelming probability
    std::set<std::vector<double>> goals;
    for (uint64_t s = 0; s < 100; ++s) {
      e->reset(s);
      goals.insert(e->goal());
    }
    CHECK(goals.size() >= 99);
  }
}

TEST_CASE("episode length and step-after-done") {
  auto e = env::make_env("PointMass2D");
  e->reset(0);
  std::vector<double> a = {0.1, -0.1};
  for (int t = 0; t < 100; ++t) {
    env::StepResult r = e->step(a);
    CHECK(r.done == (t == 99));
  }
  CHECK_THROWS_AS(e->step(a), std::logic_error);
}

TEST_CASE("pointmass euler step") {
  auto e = env::make_env("PointMass2D");
  e->reset(0);
  std::vector<double> s = e->save_state();
  s[0] = 0;
  s[1] = 0;
  s[2] = 0;
  s[3] = 0;  // pos, vel = 0
  e->restore_state(s);
  env::StepResult r = e->step({1.0, 0.0});
  std::vector<double> obs = r.obs;
  CHECK(obs[2] == doctest::Approx(0.05));   // vel x
  CHECK(obs[3] == doctest::Approx(0.0));
  CHECK(obs[0] == doctest::Approx(0.0025));  // pos x
  CHECK(obs[1] == doctest::Approx(0.0));
}

TEST_CASE("pointmass null action keeps position, reward is -distance") {
  auto e = env::make_env("PointMass2D");
  e->reset(7);
  std::vector<double> s = e->save_state();
  s[2] = 0;
  s[3] = 0;  // at rest
  e->restore_state(s);
  std::vector<double> pos_before = e->position();
  env::StepResult r = e->step({0.0, 0.0});
  CHECK(e->position() == pos_before);
  double dist = std::hypot(pos_before[0] - s[4], pos_before[1] - s[5]);
  CHECK(r.reward == doctest::Approx(-dist));
}

TEST_CASE("reacher forward kinematics at zero angles") {
  auto e = env::make_env("Reacher2Link");
  e->reset(0);
  std::vector<double> s = e->save_state();
  s[0] = 0;
  s[1] = 0;
  s[2] = 0;
  s[3] = 0;
  e->restore_state(s);
  std::vector<double> p = e->position();
  CHECK(p[0] == doctest::Approx(0.21));
  CHECK(p[1] == doctest::Approx(0.0));
}

TEST_CASE("rewards never positive, states stay in bounds") {
  for (const std::string& name : env::env_names()) {
    auto e = env::make_env(name);
    Rng rng(5);
    e->reset(5);
    for (int t = 0; t < 100; ++t) {
      std::vector<double> a(e->spec().action_dim);
      for (double& v : a) v = rng.uniform(-3, 3);  // out-of-range gets clamped
      env::StepResult r = e->step(a);
      CHECK(r.reward <= 0.0);
      if (name != "Reacher2Link")
        for (double p : e->position()) {
          CHECK(p >= -1.0);
          CHECK(p <= 1.0);
        }
      else {
        std::vector<double> p = e->position();
        CHECK(std::hypot(p[0], p[1]) <= 0.21 + 1e-12);
      }
    }
  }
}

TEST_CASE("markov property: save/restore reproduces step output") {
  for (const std::string& name : env::env_names()) {
    auto e = env::make_env(name);
    Rng rng(9);
    e->reset(9);
    for (int t = 0; t < 30; ++t) {
      std::vector<double> a(e->spec().action_dim);
      for (double& v : a) v = rng.uniform(-1, 1);
      std::vector<double> snap = e->save_state();
      env::StepResult r1 = e->step(a);
      e->restore_state(snap);
      env::StepResult r2 = e->step(a);
      CHECK(r1.obs == r2.obs);
      CHECK(r1.reward == r2.reward);
      CHECK(r1.done == r2.done);
    }
  }
}

TEST_CASE("trajectory determinism from seed and actions") {
  auto run = [](uint64_t seed) {
    auto e = env::make_env("Reacher2Link");
    Rng rng(seed);
    std::vector<double> trace = e->reset(seed);
    for (int t = 0; t < 100; ++t) {
      std::vector<double> a = {rng.uniform(-1, 1), rng.uniform(-1, 1)};
      env::StepResult r = e->step(a);
      trace.insert(trace.end(), r.obs.begin(), r.obs.end());
    }
    return trace;
  };
  CHECK(run(3) == run(3));
}

TEST_CASE("render centered agent and determinism") {
  auto e = env::make_env("PointMass2D");
  e->reset(0);
  std::vector<double> s = e->save_state();
  s[0] = 0;
  s[1] = 0;
  s[4] = 0.9;
  s[5] = 0.9;  // goal away from center
  e->restore_state(s);
  float f1[env::kFramePixels], f2[env::kFramePixels];
  e->render_frame(f1);
  e->render_frame(f2);
  for (int i = 0; i < env::kFramePixels; ++i) CHECK(f1[i] == f2[i]);
  CHECK(f1[16 * env::kFrameSide + 16] == 1.0f);
  for (int i = 0; i < env::kFramePixels; ++i) {
    CHECK(f1[i] >= 0.0f);
    CHECK(f1[i] <= 1.0f);
  }
}

TEST_CASE("render separates positions half a unit apart") {
  auto e = env::make_env("PointMass2D");
  e->reset(0);
  std::vector<double> s = e->save_state();
  s[4] = -0.9;
  s[5] = -0.9;
  s[0] = 0.0;
  s[1] = 0.0;
  e->restore_state(s);
  float f1[env::kFramePixels];
  e->render_frame(f1);
  s[0] = 0.5;
  e->restore_state(s);
  float f2[env::kFramePixels];
  e->render_frame(f2);
  int diff = 0;
  for (int i = 0; i < env::kFramePixels; ++i)
    if (f1[i] != f2[i]) ++diff;
  CHECK(diff >= 8);
}

TEST_CASE("render unsupported for reacher") {
  auto e = env::make_env("Reacher2Link");
  e->reset(0);
  float f[env::kFramePixels];
  CHECK_THROWS_AS(e->render_frame(f), std::runtime_error);
}

TEST_CASE("distance_from_start") {
  CHECK_THROWS_AS(env::distance_from_start({}), std::invalid_argument);

  // stationary trajectory
  std::vector<std::vector<double>> stat(5, {0.3, -0.2});
  for (double d : env::distance_from_start(stat)) CHECK(d == 0.0);

  // straight-line motion at constant speed on PointMass2D
  auto e = env::make_env("PointMass2D");
  e->reset(0);
  std::vector<double> s = e->save_state();
  s[0] = -0.5;
  s[1] = 0.0;
  s[2] = 0.2;
  s[3] = 0.0;  // constant velocity, zero action
  e->restore_state(s);
  std::vector<std::vector<double>> traj = {e->position()};
  for (int t = 0; t < 10; ++t) {
    e->step({0.0, 0.0});
    traj.push_back(e->position());
  }
  std::vector<double> d = env::distance_from_start(traj);
  for (int t = 0; t <= 10; ++t) CHECK(d[t] == doctest::Approx(0.2 * t * 0.05).epsilon(1e-9));

  // random trajectory matches independent recomputation
  Rng rng(2);
  std::vector<std::vector<double>> rnd;
  for (int t = 0; t < 20; ++t) rnd.push_back({rng.uniform(-1, 1), rng.uniform(-1, 1)});
  std::vector<double> got = env::distance_from_start(rnd);
  for (int t = 0; t < 20; ++t) {
    double dx = rnd[t][0] - rnd[0][0], dy = rnd[t][1] - rnd[0][1];
    CHECK(got[t] == doctest::Approx(std::sqrt(dx * dx + dy * dy)));
  }
}

TEST_CASE("frame stack reset repeats initial frame") {
  auto e = env::make_env("Point1D");
  e->reset(4);
  float frame[env::kFramePixels];
  e->render_frame(frame);
  env::FrameStack fs;
  fs.reset(frame);
  const std::vector<float>& s = fs.stacked();
  for (int j = 0; j < env::kFrameStackDepth; ++j)
    for (int p = 0; p < env::kFramePixels; ++p) CHECK(s[j * env::kFramePixels + p] == frame[p]);
}
