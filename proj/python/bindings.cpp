#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "dyne/analysis.hpp"
#include "dyne/checkpoint.hpp"
#include "dyne/config.hpp"
#include "dyne/data.hpp"
#include "dyne/decoder.hpp"
#include "dyne/env.hpp"
#include "dyne/nn.hpp"
#include "dyne/repr.hpp"
#include "dyne/stages.hpp"

namespace py = pybind11;
using namespace dyne;

namespace {

// Owning wrapper so python holds a concrete object rather than Env&.
class PyEnv {
 public:
  explicit PyEnv(const std::string& name) : env_(env::make_env(name)) {}

  std::vector<double> reset(uint64_t seed) { return env_->reset(seed); }
  py::tuple step(const std::vector<double>& action) {
    env::StepResult r = env_->step(action);
    return py::make_tuple(r.obs, r.reward, r.done);
  }
  std::vector<float> render() {
    std::vector<float> frame(env::kFramePixels);
    env_->render_frame(frame.data());
    return frame;
  }
  std::vector<double> position() const { return env_->position(); }
  std::vector<double> goal() const { return env_->goal(); }
  std::vector<double> save_state() const { return env_->save_state(); }
  void restore_state(const std::vector<double>& s) { env_->restore_state(s); }
  py::dict spec() const {
    const env::EnvSpec& s = env_->spec();
    py::dict d;
    d["name"] = s.name;
    d["obs_dim"] = s.obs_dim;
    d["action_dim"] = s.action_dim;
    d["episode_length"] = s.episode_length;
    d["dt"] = s.dt;
    d["arena_diameter"] = s.arena_diameter;
    d["renderable"] = s.renderable;
    return d;
  }

 private:
  std::unique_ptr<env::Env> env_;
};

class PyDyneModel {
 public:
  explicit PyDyneModel(const std::string& path)
      : model_(repr::from_checkpoint<double>(Checkpoint::load(path, "dyne-model"))) {}

  py::tuple encode_actions(const std::vector<double>& a_flat) {
    nn::Tensor<double> a({1, static_cast<int>(a_flat.size())}, a_flat);
    nn::GaussianParams<double> q = model_.encode_actions(a);
    return py::make_tuple(q.mean.v, q.log_var.v);
  }
  py::tuple encode_state(const std::vector<double>& obs) {
    nn::Tensor<double> s({1, static_cast<int>(obs.size())}, obs);
    nn::GaussianParams<double> q = model_.encode_state(s);
    return py::make_tuple(q.mean.v, q.log_var.v);
  }
  std::vector<double> predict_delta(const std::vector<double>& z_s, const std::vector<double>& z_a) {
    nn::Tensor<double> zs({1, static_cast<int>(z_s.size())}, z_s);
    nn::Tensor<double> za({1, static_cast<int>(z_a.size())}, z_a);
    return model_.predict_delta(zs, za).v;
  }
  int k() const { return model_.cfg.k; }
  int z_a_dim() const { return model_.z_a_dim(); }
  int z_s_dim() const { return model_.z_s_dim(); }

 private:
  repr::DynEModel<double> model_;
};

class PyDecoder {
 public:
  explicit PyDecoder(const std::string& path)
      : dec_(decoder::from_checkpoint<double>(Checkpoint::load(path, "action-decoder"))) {}
  std::vector<std::vector<double>> decode(const std::vector<double>& z) { return dec_.decode(z); }
  int k() const { return dec_.k; }
  int z_a_dim() const { return dec_.z_a_dim(); }

 private:
  decoder::ActionDecoder<double> dec_;
};

void run_stage(const std::string& stage, const std::string& config_text, const std::string& out_dir,
               bool force) {
  RunConfig cfg = RunConfig::parse_text(config_text);
  cli::StageOptions opt;
  opt.out_dir = out_dir;
  opt.force = force;
  if (stage == "collect")
    cli::run_collect(cfg, opt);
  else if (stage == "train-repr")
    cli::run_train_repr(cfg, opt);
  else if (stage == "train-decoder")
    cli::run_train_decoder(cfg, opt);
  else if (stage == "train-rl")
    cli::run_train_rl(cfg, opt);
  else if (stage == "sweep-k")
    cli::run_sweep_k(cfg, opt);
  else if (stage.rfind("analyze:", 0) == 0)
    cli::run_analyze(cfg, stage.substr(8), opt);
  else
    throw ConfigError("run_stage: unknown stage '" + stage + "'");
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Dynamics-aware embeddings: environments, models, and pipeline stages";

  py::register_exception<ConfigError>(m, "ConfigError");
  py::register_exception<DependencyError>(m, "DependencyError");

  py::class_<PyEnv>(m, "Env")
      .def(py::init<const std::string&>(), py::arg("name"))
      .def("reset", &PyEnv::reset, py::arg("seed"))
      .def("step", &PyEnv::step, py::arg("action"))
      .def("render", &PyEnv::render)
      .def("position", &PyEnv::position)
      .def("goal", &PyEnv::goal)
      .def("save_state", &PyEnv::save_state)
      .def("restore_state", &PyEnv::restore_state, py::arg("state"))
      .def("spec", &PyEnv::spec);

  py::class_<PyDyneModel>(m, "DynEModel")
      .def(py::init<const std::string&>(), py::arg("checkpoint_path"))
      .def("encode_actions", &PyDyneModel::encode_actions, py::arg("actions_flat"))
      .def("encode_state", &PyDyneModel::encode_state, py::arg("obs"))
      .def("predict_delta", &PyDyneModel::predict_delta, py::arg("z_s"), py::arg("z_a"))
      .def_property_readonly("k", &PyDyneModel::k)
      .def_property_readonly("z_a_dim", &PyDyneModel::z_a_dim)
      .def_property_readonly("z_s_dim", &PyDyneModel::z_s_dim);

  py::class_<PyDecoder>(m, "ActionDecoder")
      .def(py::init<const std::string&>(), py::arg("checkpoint_path"))
      .def("decode", &PyDecoder::decode, py::arg("z"))
      .def_property_readonly("k", &PyDecoder::k)
      .def_property_readonly("z_a_dim", &PyDecoder::z_a_dim);

  m.def("env_names", &env::env_names);
  m.def(
      "kl_to_std_normal",
      [](const std::vector<double>& mean, const std::vector<double>& log_var) {
        nn::GaussianParams<double> q(
            nn::Tensor<double>({static_cast<int>(mean.size())}, mean),
            nn::Tensor<double>({static_cast<int>(log_var.size())}, log_var));
        return nn::kl_to_std_normal(q);
      },
      py::arg("mean"), py::arg("log_var"));
  m.def("spearman", &analysis::spearman, py::arg("x"), py::arg("y"));
  m.def(
      "collect_random",
      [](const std::string& env_name, long n_steps, uint64_t seed, bool with_frames, const std::string& path) {
        std::unique_ptr<env::Env> e = env::make_env(env_name);
        data::TransitionDataset ds = data::collect_random(*e, n_steps, seed, with_frames);
        if (!path.empty()) ds.save(path);
        return ds.size();
      },
      py::arg("env_name"), py::arg("n_steps"), py::arg("seed"), py::arg("with_frames") = false,
      py::arg("path") = "");
  m.def("run_stage", &run_stage, py::arg("stage"), py::arg("config_text"), py::arg("out_dir"),
        py::arg("force") = false);
}
