#include "dyne/data.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace dyne::data {

namespace {

constexpr char kMagic[8] = {'D', 'Y', 'N', 'E', 'D', 'S', '0', '1'};

template <class T>
void write_pod(std::ostream& os, const T& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
void write_vec(std::ostream& os, const std::vector<T>& v) {
  uint64_t n = v.size();
  write_pod(os, n);
  os.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(n * sizeof(T)));
}

template <class T>
T read_pod(std::istream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  return v;
}

template <class T>
std::vector<T> read_vec(std::istream& is) {
  uint64_t n = read_pod<uint64_t>(is);
  std::vector<T> v(n);
  is.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(n * sizeof(T)));
  return v;
}

}  // namespace

Transition TransitionDataset::get(long i) const {
  Transition t;
  t.s.assign(obs_at(i), obs_at(i) + obs_dim);
  t.a.assign(action_at(i), action_at(i) + act_dim);
  t.s_next.assign(next_obs_at(i), next_obs_at(i) + obs_dim);
  t.r = r[i];
  t.done = done[i] != 0;
  t.episode_id = episode_id[i];
  t.step_index = step_index[i];
  return t;
}

void TransitionDataset::frame_stack_at(long t, float* out) const {
  long episode_start = t - step_index[t];
  for (int j = 0; j < env::kFrameStackDepth; ++j) {
    long idx = std::max(episode_start, t - (env::kFrameStackDepth - 1) + j);
    const uint8_t* f = frames.data() + idx * env::kFramePixels;
    for (int p = 0; p < env::kFramePixels; ++p) out[j * env::kFramePixels + p] = 0.5f * f[p];
  }
}

bool TransitionDataset::target_frames_at(long t, int k, float* out) const {
  const uint8_t* near = frames.data() + (t + k - 1) * env::kFramePixels;
  for (int p = 0; p < env::kFramePixels; ++p) out[p] = 0.5f * near[p];
  const uint8_t* far = nullptr;
  if (t + k < size() && episode_id[t + k] == episode_id[t]) {
    far = frames.data() + (t + k) * env::kFramePixels;
  } else if (static_cast<size_t>(episode_id[t]) < terminal_frames.size() / env::kFramePixels) {
    far = terminal_frames.data() + static_cast<long>(episode_id[t]) * env::kFramePixels;
  } else {
    return false;
  }
  for (int p = 0; p < env::kFramePixels; ++p) out[env::kFramePixels + p] = 0.5f * far[p];
  return true;
}

void TransitionDataset::save(const std::string& path) const {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("dataset: cannot open '" + path + "' for writing");
  os.write(kMagic, 8);
  write_pod<uint32_t>(os, 1);  // schema version
  uint32_t name_len = static_cast<uint32_t>(env_name.size());
  write_pod(os, name_len);
  os.write(env_name.data(), name_len);
  write_pod(os, seed);
  write_pod(os, config_hash);
  write_pod<int32_t>(os, obs_dim);
  write_pod<int32_t>(os, act_dim);
  write_pod<int32_t>(os, episode_length);
  write_pod<uint8_t>(os, has_frames ? 1 : 0);
  write_vec(os, s);
  write_vec(os, a);
  write_vec(os, s_next);
  write_vec(os, r);
  write_vec(os, done);
  write_vec(os, episode_id);
  write_vec(os, step_index);
  write_vec(os, frames);
  write_vec(os, terminal_frames);
  if (!os) throw std::runtime_error("dataset: write failed for '" + path + "'");
}

TransitionDataset TransitionDataset::load(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("dataset: cannot open '" + path + "'");
  char magic[8];
  is.read(magic, 8);
  if (!is || std::memcmp(magic, kMagic, 8) != 0)
    throw std::runtime_error("dataset: '" + path + "' is not a dyne dataset file");
  uint32_t version = read_pod<uint32_t>(is);
  if (version != 1) throw std::runtime_error("dataset: unsupported schema version");
  TransitionDataset ds;
  uint32_t name_len = read_pod<uint32_t>(is);
  ds.env_name.resize(name_len);
  is.read(ds.env_name.data(), name_len);
  ds.seed = read_pod<uint64_t>(is);
  ds.config_hash = read_pod<uint64_t>(is);
  ds.obs_dim = read_pod<int32_t>(is);
  ds.act_dim = read_pod<int32_t>(is);
  ds.episode_length = read_pod<int32_t>(is);
  ds.has_frames = read_pod<uint8_t>(is) != 0;
  ds.s = read_vec<double>(is);
  ds.a = read_vec<double>(is);
  ds.s_next = read_vec<double>(is);
  ds.r = read_vec<double>(is);
  ds.done = read_vec<uint8_t>(is);
  ds.episode_id = read_vec<int32_t>(is);
  ds.step_index = read_vec<int32_t>(is);
  ds.frames = read_vec<uint8_t>(is);
  ds.terminal_frames = read_vec<uint8_t>(is);
  if (!is) throw std::runtime_error("dataset: truncated file '" + path + "'");
  return ds;
}

namespace {

void quantize_frame(const float* frame, uint8_t* out) {
  for (int p = 0; p < env::kFramePixels; ++p) out[p] = static_cast<uint8_t>(std::lround(frame[p] * 2.f));
}

}  // namespace

TransitionDataset collect_random(env::Env& e, long n_steps, uint64_t seed, bool with_frames) {
  if (n_steps < 1) throw std::invalid_argument("collect_random: n_steps must be >= 1");
  if (with_frames && !e.spec().renderable)
    throw std::runtime_error("collect_random: environment does not support rendering");
  TransitionDataset ds;
  ds.env_name = e.spec().name;
  ds.seed = seed;
  ds.obs_dim = e.spec().obs_dim;
  ds.act_dim = e.spec().action_dim;
  ds.episode_length = e.spec().episode_length;
  ds.has_frames = with_frames;
  ds.s.reserve(n_steps * ds.obs_dim);
  ds.a.reserve(n_steps * ds.act_dim);
  ds.s_next.reserve(n_steps * ds.obs_dim);
  ds.r.reserve(n_steps);

  Rng root(seed);
  Rng actions = root.child("actions");
  float frame[env::kFramePixels];
  uint8_t coded[env::kFramePixels];

  int episode = -1;
  int step_in_episode = 0;
  std::vector<double> obs;
  for (long t = 0; t < n_steps; ++t) {
    if (episode < 0 || e.episode_over()) {
      ++episode;
      step_in_episode = 0;
      obs = e.reset(root.child("reset", static_cast<uint64_t>(episode)).root_seed());
    }
    if (with_frames) {
      e.render_frame(frame);
      quantize_frame(frame, coded);
      ds.frames.insert(ds.frames.end(), coded, coded + env::kFramePixels);
    }
    std::vector<double> act(ds.act_dim);
    for (double& v : act) v = actions.uniform(-1.0, 1.0);
    env::StepResult sr = e.step(act);
    ds.s.insert(ds.s.end(), obs.begin(), obs.end());
    ds.a.insert(ds.a.end(), act.begin(), act.end());
    ds.s_next.insert(ds.s_next.end(), sr.obs.begin(), sr.obs.end());
    ds.r.push_back(sr.reward);
    ds.done.push_back(sr.done ? 1 : 0);
    ds.episode_id.push_back(episode);
    ds.step_index.push_back(step_in_episode);
    if (sr.done && with_frames) {
      e.render_frame(frame);
      quantize_frame(frame, coded);
      ds.terminal_frames.insert(ds.terminal_frames.end(), coded, coded + env::kFramePixels);
    }
    obs = std::move(sr.obs);
    ++step_in_episode;
  }
  return ds;
}

std::vector<long> extract_segments(const TransitionDataset& ds, int k) {
  if (k < 1) throw std::invalid_argument("extract_segments: k must be >= 1");
  std::vector<long> starts;
  for (long t = 0; t + k <= ds.size(); ++t)
    if (ds.episode_id[t] == ds.episode_id[t + k - 1]) starts.push_back(t);
  return starts;
}

SegmentK get_segment(const TransitionDataset& ds, long start, int k) {
  SegmentK seg;
  seg.s0.assign(ds.obs_at(start), ds.obs_at(start) + ds.obs_dim);
  seg.a_flat.reserve(static_cast<size_t>(k) * ds.act_dim);
  for (int j = 0; j < k; ++j)
    seg.a_flat.insert(seg.a_flat.end(), ds.action_at(start + j), ds.action_at(start + j) + ds.act_dim);
  seg.s_k.assign(ds.next_obs_at(start + k - 1), ds.next_obs_at(start + k - 1) + ds.obs_dim);
  return seg;
}

WhiteningStats compute_whitening(const TransitionDataset& ds, const std::vector<long>& starts, int k) {
  if (starts.size() < 2) throw std::invalid_argument("compute_whitening: need at least 2 segments");
  int dim = ds.obs_dim;
  std::vector<double> mean(dim, 0.0), sq(dim, 0.0);
  for (long t : starts) {
    const double* s0 = ds.obs_at(t);
    const double* sk = ds.next_obs_at(t + k - 1);
    for (int d = 0; d < dim; ++d) {
      double delta = sk[d] - s0[d];
      mean[d] += delta;
      sq[d] += delta * delta;
    }
  }
  double n = static_cast<double>(starts.size());
  WhiteningStats ws;
  ws.mean.resize(dim);
  ws.stdv.resize(dim);
  for (int d = 0; d < dim; ++d) {
    ws.mean[d] = mean[d] / n;
    double var = sq[d] / n - ws.mean[d] * ws.mean[d];
    ws.stdv[d] = std::max(std::sqrt(std::max(var, 0.0)), WhiteningStats::kStdFloor);
  }
  return ws;
}

std::vector<long> sample_indices(long store_size, int batch_size, Rng& rng) {
  if (store_size < 1) throw std::invalid_argument("sample_indices: empty store");
  std::vector<long> out(batch_size);
  for (long& i : out) i = rng.uniform_int(static_cast<int>(store_size));
  return out;
}

void MacroReplay::add(MacroTransition t) {
  if (buf_.size() < capacity_) {
    buf_.push_back(std::move(t));
  } else {
    buf_[next_] = std::move(t);
    next_ = (next_ + 1) % capacity_;
  }
}

void TransitionReplay::add(FeatTransition t) {
  if (buf_.size() < capacity_) {
    buf_.push_back(std::move(t));
  } else {
    buf_[next_] = std::move(t);
    next_ = (next_ + 1) % capacity_;
  }
}

}  // namespace dyne::data
