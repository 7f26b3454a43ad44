#include "dyne/stages.hpp"

#include <filesystem>
#include <fstream>
#include <sstream>

#include "dyne/analysis.hpp"
#include "dyne/csv.hpp"
#include "dyne/data.hpp"
#include "dyne/decoder.hpp"
#include "dyne/repr.hpp"
#include "dyne/td3.hpp"

namespace dyne::cli {

namespace fs = std::filesystem;

namespace {

std::string hex64(uint64_t v) {
  char buf[20];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

struct StageContext {
  const RunConfig& cfg;
  StageOptions opt;
  std::string env_name;
  uint64_t seed;
  uint64_t config_hash;

  StageContext(const RunConfig& c, const StageOptions& o, const std::string& stage) : cfg(c), opt(o) {
    cfg.validate();
    env_name = cfg.get_str("env", "");
    if (env_name.empty()) throw ConfigError(stage + ": missing required key 'env'");
    seed = static_cast<uint64_t>(cfg.get_int("seed", 1));
    config_hash = cfg.hash();
    fs::create_directories(opt.out_dir);
    std::ofstream snap(path("resolved_" + stage + ".ini"), std::ios::binary);
    snap << cfg.canonical();
  }

  std::string path(const std::string& name) const { return (fs::path(opt.out_dir) / name).string(); }

  void guard_output(const std::string& name) const {
    if (!opt.force && fs::exists(path(name)))
      throw std::runtime_error("output '" + path(name) + "' exists; pass --force to overwrite");
  }

  std::vector<std::string> header() const {
    return {"seed=" + std::to_string(seed), "config_hash=" + hex64(config_hash), "env=" + env_name};
  }

  std::string precision() const {
    std::string p = cfg.get_str("precision", "float64");
    if (p != "float64" && p != "float32") throw ConfigError("precision must be float32 or float64");
    return p;
  }
};

repr::DynEConfig repr_config(const RunConfig& cfg) {
  repr::DynEConfig rc;
  std::string mode = cfg.get_str("repr.mode", "lowd");
  if (mode != "lowd" && mode != "pixel") throw ConfigError("repr.mode must be lowd or pixel");
  rc.mode = mode == "pixel" ? repr::ObsMode::kPixel : repr::ObsMode::kLowDim;
  rc.k = static_cast<int>(cfg.get_int("repr.k", 4));
  rc.z_a_dim = static_cast<int>(cfg.get_int("repr.z_a_dim", 0));
  rc.z_s_dim = static_cast<int>(cfg.get_int("repr.z_s_dim", 100));
  bool pixel = rc.mode == repr::ObsMode::kPixel;
  rc.beta = cfg.get_num("repr.beta", pixel ? 1e-3 : 0.0);
  rc.gamma_a = cfg.get_num("repr.gamma_a", pixel ? 1e-3 : 1e-2);
  rc.kl_cycles = static_cast<int>(cfg.get_int("repr.kl_cycles", 4));
  rc.learning_rate = cfg.get_num("repr.learning_rate", 1e-4);
  rc.batch_size = static_cast<int>(cfg.get_int("repr.batch_size", 256));
  rc.n_updates = cfg.get_int("repr.n_updates", 20000);
  rc.holdout_frac = cfg.get_num("repr.holdout_frac", 0.05);
  rc.likelihood_scale = cfg.get_bool("repr.likelihood_scale", true);
  rc.log_interval = cfg.get_int("repr.log_interval", 100);
  if (rc.k < 1) throw ConfigError("repr.k must be >= 1");
  return rc;
}

rl::Td3Config rl_config(const RunConfig& cfg, int decoder_k) {
  rl::Td3Config tc;
  tc.k = static_cast<int>(cfg.get_int("rl.k", decoder_k));
  tc.discount = cfg.get_num("rl.discount", 0.99);
  tc.tau = cfg.get_num("rl.tau", 0.005);
  tc.expl_noise = cfg.get_num("rl.expl_noise", 0.1);
  tc.target_noise = cfg.get_num("rl.target_noise", 0.2);
  tc.noise_clip = cfg.get_num("rl.noise_clip", 0.5);
  tc.policy_delay = static_cast<int>(cfg.get_int("rl.policy_delay", 2));
  tc.batch_size = static_cast<int>(cfg.get_int("rl.batch_size", 256));
  tc.warmup_steps = cfg.get_int("rl.warmup_steps", 1000);
  tc.actor_lr = cfg.get_num("rl.actor_lr", 3e-4);
  tc.critic_lr = cfg.get_num("rl.critic_lr", 3e-4);
  tc.z_max = cfg.get_num("rl.z_max", 2.0);
  tc.total_steps = cfg.get_int("rl.steps", 50000);
  tc.eval_interval = cfg.get_int("rl.eval_interval", 2500);
  tc.n_eval = static_cast<int>(cfg.get_int("rl.n_eval", 10));
  tc.replay_capacity = static_cast<size_t>(cfg.get_int("rl.replay_capacity", 1000000));
  return tc;
}

void write_eval_csv(const std::string& path, const std::vector<std::string>& header,
                    const std::vector<rl::EvalRow>& rows) {
  CsvWriter csv(path, header, {"env_step", "mean_return", "std_return", "mean_final_distance", "wall_seconds"});
  for (const rl::EvalRow& r : rows)
    csv.row({static_cast<double>(r.env_step), r.mean_return, r.std_return, r.mean_final_distance,
             r.wall_seconds});
}

void write_histogram_csv(const std::string& path, const std::vector<std::string>& header,
                         const analysis::Histogram& h) {
  CsvWriter csv(path, header, {"bin_lo", "bin_hi", "count"});
  for (size_t i = 0; i < h.counts.size(); ++i)
    csv.row({h.edges[i], h.edges[i + 1], static_cast<double>(h.counts[i])});
}

}  // namespace

void run_collect(const RunConfig& cfg, const StageOptions& opt) {
  StageContext ctx(cfg, opt, "collect");
  long n_steps = cfg.get_int("collect.n_steps", 100000);
  bool with_frames = cfg.get_bool("collect.with_frames", false);
  ctx.guard_output("dataset.bin");
  std::unique_ptr<env::Env> e = env::make_env(ctx.env_name);
  data::TransitionDataset ds = data::collect_random(*e, n_steps, ctx.seed, with_frames);
  ds.config_hash = ctx.config_hash;
  ds.save(ctx.path("dataset.bin"));
}

namespace {

template <class T>
void train_repr_impl(const StageContext& ctx, const repr::DynEConfig& rc, const data::TransitionDataset& ds) {
  repr::TrainedDynE<T> trained = repr::train_dyne<T>(ds, rc, ctx.seed);
  Checkpoint c = repr::to_checkpoint(trained.model);
  c.meta["env"] = ctx.env_name;
  c.meta["seed"] = ctx.seed;
  c.meta["config_hash"] = hex64(ctx.config_hash);
  c.meta["heldout_mse_initial"] = trained.heldout_mse_initial;
  c.meta["heldout_mse_final"] = trained.heldout_mse_final;
  c.save(ctx.path("dyne.json"));

  std::vector<std::string> header = ctx.header();
  header.push_back("heldout_mse_initial=" + format_double(trained.heldout_mse_initial));
  header.push_back("heldout_mse_final=" + format_double(trained.heldout_mse_final));
  CsvWriter csv(ctx.path("repr_curve.csv"), header, {"update", "total", "mse", "kl_s", "kl_a", "kl_weight"});
  for (const repr::ReprCurveRow& r : trained.curve)
    csv.row({static_cast<double>(r.update), r.total, r.mse, r.kl_s, r.kl_a, r.kl_weight});
}

}  // namespace

void run_train_repr(const RunConfig& cfg, const StageOptions& opt) {
  StageContext ctx(cfg, opt, "train-repr");
  if (!fs::exists(ctx.path("dataset.bin")))
    throw DependencyError("train-repr: missing '" + ctx.path("dataset.bin") + "' — run the collect stage first");
  ctx.guard_output("dyne.json");
  repr::DynEConfig rc = repr_config(cfg);
  data::TransitionDataset ds = data::TransitionDataset::load(ctx.path("dataset.bin"));
  if (ds.env_name != ctx.env_name)
    throw ConfigError("train-repr: dataset was collected on " + ds.env_name + ", config says " + ctx.env_name);
  if (rc.mode == repr::ObsMode::kPixel && !ds.has_frames)
    throw ConfigError("train-repr: pixel mode requires a dataset collected with frames");
  if (ctx.precision() == "float32")
    train_repr_impl<float>(ctx, rc, ds);
  else
    train_repr_impl<double>(ctx, rc, ds);
}

namespace {

template <class T>
void train_decoder_impl(const StageContext& ctx, const decoder::DecoderConfig& dc) {
  Checkpoint dyne_ck = Checkpoint::load(ctx.path("dyne.json"), "dyne-model");
  repr::DynEModel<T> model = repr::from_checkpoint<T>(dyne_ck);
  decoder::TrainedDecoder<T> trained =
      decoder::train_decoder<T>(model.e_a, model.cfg.k, model.act_dim, dc, ctx.seed);
  Checkpoint c = decoder::to_checkpoint(trained.decoder);
  c.meta["env"] = ctx.env_name;
  c.meta["seed"] = ctx.seed;
  c.meta["config_hash"] = hex64(ctx.config_hash);
  c.save(ctx.path("decoder.json"));
  CsvWriter csv(ctx.path("decoder_curve.csv"), ctx.header(), {"update", "total", "round_trip", "norm"});
  for (const decoder::DecoderCurveRow& r : trained.curve)
    csv.row({static_cast<double>(r.update), r.total, r.round_trip, r.norm});
}

}  // namespace

void run_train_decoder(const RunConfig& cfg, const StageOptions& opt) {
  StageContext ctx(cfg, opt, "train-decoder");
  if (!fs::exists(ctx.path("dyne.json")))
    throw DependencyError("train-decoder: missing '" + ctx.path("dyne.json") +
                          "' — run the train-repr stage first");
  ctx.guard_output("decoder.json");
  decoder::DecoderConfig dc;
  dc.lambda = cfg.get_num("decoder.lambda", 1e-2);
  dc.learning_rate = cfg.get_num("decoder.learning_rate", 1e-4);
  dc.batch_size = static_cast<int>(cfg.get_int("decoder.batch_size", 256));
  dc.n_updates = cfg.get_int("decoder.n_updates", 4000);
  dc.log_interval = cfg.get_int("decoder.log_interval", 50);
  if (ctx.precision() == "float32")
    train_decoder_impl<float>(ctx, dc);
  else
    train_decoder_impl<double>(ctx, dc);
}

namespace {

std::unique_ptr<rl::FeatureMap> make_feature_map(const StageContext& ctx, bool pixel, int obs_dim) {
  if (!pixel) return std::make_unique<rl::IdentityFeatures>(obs_dim);
  Checkpoint dyne_ck = Checkpoint::load(ctx.path("dyne.json"), "dyne-model");
  repr::DynEModel<double> model = repr::from_checkpoint<double>(dyne_ck);
  if (model.identity_es)
    throw ConfigError("train-rl: pixel observations need a pixel-mode dyne model (identity e_s found)");
  return std::make_unique<rl::ConvMeanFeatures>(model.e_s);
}

template <class T>
void train_rl_impl(const StageContext& ctx, const RunConfig& cfg) {
  std::string algo = cfg.get_str("rl.algo", "dyne-td3");
  bool pixel = cfg.get_str("rl.obs", "lowd") == "pixel";
  std::unique_ptr<env::Env> e = env::make_env(ctx.env_name);
  if (pixel && !e->spec().renderable)
    throw ConfigError("train-rl: environment does not support pixel observations");

  if (algo == "dyne-td3") {
    if (!fs::exists(ctx.path("decoder.json")))
      throw DependencyError("train-rl: missing '" + ctx.path("decoder.json") +
                            "' — run the train-decoder stage first");
    Checkpoint dec_ck = Checkpoint::load(ctx.path("decoder.json"), "action-decoder");
    decoder::ActionDecoder<T> dec = decoder::from_checkpoint<T>(dec_ck);
    rl::Td3Config tc = rl_config(cfg, dec.k);
    if (tc.k != dec.k)
      throw ConfigError("train-rl: rl.k=" + std::to_string(tc.k) + " does not match decoder k=" +
                        std::to_string(dec.k));
    if (pixel && !fs::exists(ctx.path("dyne.json")))
      throw DependencyError("train-rl: missing '" + ctx.path("dyne.json") + "' — run the train-repr stage first");
    std::unique_ptr<rl::FeatureMap> fm = make_feature_map(ctx, pixel, e->spec().obs_dim);
    Rng init = Rng(ctx.seed).child("rl_init");
    rl::DyneTd3<T> agent(fm->dim(), dec.z_a_dim(), tc, init);
    std::vector<rl::EvalRow> log = agent.train(*e, *fm, dec, ctx.seed, pixel);
    write_eval_csv(ctx.path("eval.csv"), ctx.header(), log);
    Checkpoint pc = rl::policy_checkpoint(agent, algo);
    pc.meta["env"] = ctx.env_name;
    pc.meta["seed"] = ctx.seed;
    pc.meta["config_hash"] = hex64(ctx.config_hash);
    pc.save(ctx.path("policy.json"));
  } else if (algo == "td3") {
    if (pixel && !fs::exists(ctx.path("dyne.json")))
      throw DependencyError("train-rl: missing '" + ctx.path("dyne.json") + "' — run the train-repr stage first");
    rl::Td3Config tc = rl_config(cfg, 1);
    std::unique_ptr<rl::FeatureMap> fm = make_feature_map(ctx, pixel, e->spec().obs_dim);
    Rng init = Rng(ctx.seed).child("rl_init");
    rl::RawTd3<T> agent(fm->dim(), e->spec().action_dim, tc, init);
    std::vector<rl::EvalRow> log = agent.train(*e, *fm, ctx.seed, pixel);
    write_eval_csv(ctx.path("eval.csv"), ctx.header(), log);
    Checkpoint pc = rl::policy_checkpoint(agent, algo);
    pc.meta["env"] = ctx.env_name;
    pc.meta["seed"] = ctx.seed;
    pc.meta["config_hash"] = hex64(ctx.config_hash);
    pc.save(ctx.path("policy.json"));
  } else {
    throw ConfigError("train-rl: unknown algo '" + algo + "' (expected dyne-td3 or td3)");
  }
}

}  // namespace

void run_train_rl(const RunConfig& cfg, const StageOptions& opt) {
  StageContext ctx(cfg, opt, "train-rl");
  ctx.guard_output("eval.csv");
  ctx.guard_output("policy.json");
  if (ctx.precision() == "float32")
    train_rl_impl<float>(ctx, cfg);
  else
    train_rl_impl<double>(ctx, cfg);
}

void run_analyze(const RunConfig& cfg, const std::string& sub, const StageOptions& opt) {
  StageContext ctx(cfg, opt, "analyze-" + sub);
  std::unique_ptr<env::Env> e = env::make_env(ctx.env_name);

  auto load_decoder = [&]() {
    if (!fs::exists(ctx.path("decoder.json")))
      throw DependencyError("analyze: missing '" + ctx.path("decoder.json") +
                            "' — run the train-decoder stage first");
    return decoder::from_checkpoint<double>(Checkpoint::load(ctx.path("decoder.json"), "action-decoder"));
  };
  auto load_model = [&]() {
    if (!fs::exists(ctx.path("dyne.json")))
      throw DependencyError("analyze: missing '" + ctx.path("dyne.json") + "' — run the train-repr stage first");
    return repr::from_checkpoint<double>(Checkpoint::load(ctx.path("dyne.json"), "dyne-model"));
  };

  if (sub == "exploration") {
    int n_episodes = static_cast<int>(cfg.get_int("analyze.n_episodes", 1000));
    int horizon = static_cast<int>(cfg.get_int("analyze.horizon", 100));
    decoder::ActionDecoder<double> dec = load_decoder();
    ctx.guard_output("visit_ratio.csv");
    analysis::Histogram raw = analysis::exploration_histogram(*e, analysis::PolicyKind::kRawRandom, horizon,
                                                              n_episodes, ctx.seed, nullptr, dec.k);
    analysis::Histogram dyn = analysis::exploration_histogram(*e, analysis::PolicyKind::kDyneRandom, horizon,
                                                              n_episodes, ctx.seed, &dec);
    std::vector<double> ratio = analysis::visit_ratio(dyn, raw);
    write_histogram_csv(ctx.path("exploration_raw.csv"), ctx.header(), raw);
    write_histogram_csv(ctx.path("exploration_dyne.csv"), ctx.header(), dyn);
    CsvWriter csv(ctx.path("visit_ratio.csv"), ctx.header(), {"bin_lo", "bin_hi", "ratio"});
    for (size_t i = 0; i < ratio.size(); ++i) csv.row({raw.edges[i], raw.edges[i + 1], ratio[i]});
  } else if (sub == "outcome-embedding") {
    long n_sequences = cfg.get_int("analyze.n_sequences", 10000);
    int n_pairs = static_cast<int>(cfg.get_int("analyze.n_pairs", 1000));
    repr::DynEModel<double> model = load_model();
    ctx.guard_output("outcome_embedding.csv");
    analysis::OutcomeTable table = analysis::export_outcome_embedding(*e, model, n_sequences, ctx.seed, n_pairs);
    std::vector<std::string> cols;
    for (int d = 0; d < table.ds_dim; ++d) cols.push_back("ds_" + std::to_string(d));
    for (int d = 0; d < table.za_dim; ++d) cols.push_back("mu_" + std::to_string(d));
    CsvWriter csv(ctx.path("outcome_embedding.csv"), ctx.header(), cols);
    int w = table.ds_dim + table.za_dim;
    for (long i = 0; i < table.n; ++i)
      csv.row(std::span<const double>(table.rows.data() + i * w, static_cast<size_t>(w)));
    CsvWriter sum(ctx.path("outcome_summary.csv"), ctx.header(), {"n_sequences", "n_pairs", "spearman"});
    std::string row = std::to_string(table.n) + "," + std::to_string(n_pairs) + ",";
    if (table.correlation) row += format_double(*table.correlation);
    sum.raw_row(row);
  } else if (sub == "embedding-values") {
    long n_states = cfg.get_int("analyze.n_states", 10000);
    if (!fs::exists(ctx.path("policy.json")))
      throw DependencyError("analyze: missing '" + ctx.path("policy.json") + "' — run the train-rl stage first");
    Checkpoint pc = Checkpoint::load(ctx.path("policy.json"), "policy");
    nn::Mlp<double> actor = repr::get_mlp<double>(pc, "actor");
    nn::Mlp<double> q1 = repr::get_mlp<double>(pc, "q1");
    bool has_index = pc.meta.at("algo").get<std::string>() == "dyne-td3";
    bool pixel = cfg.get_str("rl.obs", "lowd") == "pixel";
    std::unique_ptr<rl::FeatureMap> fm = make_feature_map(ctx, pixel, e->spec().obs_dim);
    ctx.guard_output("embedding_values.csv");
    analysis::EmbeddingValueTable table =
        analysis::export_embedding_values(*e, *fm, actor, q1, has_index, n_states, ctx.seed, pixel);
    std::vector<std::string> cols;
    for (int d = 0; d < table.state_dim; ++d) cols.push_back("s_" + std::to_string(d));
    for (int d = 0; d < table.feat_dim; ++d) cols.push_back("f_" + std::to_string(d));
    cols.push_back("value");
    CsvWriter csv(ctx.path("embedding_values.csv"), ctx.header(), cols);
    int w = table.state_dim + table.feat_dim + 1;
    for (long i = 0; i < table.n; ++i)
      csv.row(std::span<const double>(table.rows.data() + i * w, static_cast<size_t>(w)));
  } else if (sub == "trajectories") {
    int n_episodes = static_cast<int>(cfg.get_int("analyze.n_episodes", 10));
    std::string kind_s = cfg.get_str("analyze.policy_kind", "dyne-random");
    analysis::PolicyKind kind;
    if (kind_s == "raw-random")
      kind = analysis::PolicyKind::kRawRandom;
    else if (kind_s == "dyne-random")
      kind = analysis::PolicyKind::kDyneRandom;
    else
      throw ConfigError("analyze.policy_kind must be raw-random or dyne-random");
    decoder::ActionDecoder<double> dec;
    const decoder::ActionDecoder<double>* decp = nullptr;
    if (kind == analysis::PolicyKind::kDyneRandom) {
      dec = load_decoder();
      decp = &dec;
    }
    ctx.guard_output("trajectories.csv");
    analysis::TrajectoryTable table = analysis::export_trajectories(*e, kind, n_episodes, ctx.seed, decp);
    std::vector<std::string> cols = {"episode", "step"};
    for (int d = 0; d < table.pos_dim; ++d) cols.push_back("p_" + std::to_string(d));
    CsvWriter csv(ctx.path("trajectories.csv"), ctx.header(), cols);
    int w = 2 + table.pos_dim;
    for (long i = 0; i < table.n; ++i)
      csv.row(std::span<const double>(table.rows.data() + i * w, static_cast<size_t>(w)));
  } else {
    throw ConfigError("analyze: unknown subcommand '" + sub +
                      "' (expected exploration, outcome-embedding, embedding-values, or trajectories)");
  }
}

void run_sweep_k(const RunConfig& cfg, const StageOptions& opt) {
  StageContext ctx(cfg, opt, "sweep-k");
  analysis::SweepSettings s;
  s.env_name = ctx.env_name;
  std::istringstream ks(cfg.get_str("sweep.ks", "1,2,4,8"));
  for (std::string tok; std::getline(ks, tok, ',');) s.ks.push_back(std::stoi(tok));
  std::istringstream seeds(cfg.get_str("sweep.seeds", "1,2"));
  for (std::string tok; std::getline(seeds, tok, ',');) s.seeds.push_back(std::stoull(tok));
  s.budget = cfg.get_int("sweep.budget", 50000);
  s.collect_steps = cfg.get_int("collect.n_steps", 100000);
  s.repr_updates = cfg.get_int("repr.n_updates", 10000);
  s.decoder_updates = cfg.get_int("decoder.n_updates", 4000);
  s.workers = static_cast<int>(cfg.get_int("sweep.workers", 2));
  s.precision = ctx.precision() == "float32" ? "float32" : "float64";
  ctx.guard_output("ksweep.csv");
  std::vector<analysis::SweepResult> results = analysis::run_k_sweep(s);
  CsvWriter csv(ctx.path("ksweep.csv"), ctx.header(), {"k", "seed_index", "mean_return"});
  for (const analysis::SweepResult& r : results)
    for (size_t i = 0; i < r.per_seed.size(); ++i)
      csv.row({static_cast<double>(r.k), static_cast<double>(i), r.per_seed[i]});
  CsvWriter sum(ctx.path("ksweep_summary.csv"), ctx.header(), {"k", "min", "mean", "max"});
  for (const analysis::SweepResult& r : results) sum.row({static_cast<double>(r.k), r.min, r.mean, r.max});
}

}  // namespace cli
