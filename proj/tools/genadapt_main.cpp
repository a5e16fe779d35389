// genadapt: synthesize a gendered toy corpus, extract features, train a small
// CTC/attention Transformer, fine-tune it on gender subsets, and score WER by
// group. One subcommand per pipeline stage; every run writes its resolved
// configuration next to its outputs.

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "genadapt/ctc.hpp"
#include "genadapt/data.hpp"
#include "genadapt/errors.hpp"
#include "genadapt/eval.hpp"
#include "genadapt/kernels.hpp"
#include "genadapt/model.hpp"
#include "genadapt/optim.hpp"
#include "genadapt/rng.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace genadapt;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitVerifyFail = 1;
constexpr int kExitIo = 2;
constexpr int kExitUsage = 64;

// Ties a CLI11 option to a config-file key with flag > config > default
// precedence, and records the resolved value for the run log.
class OptionSet {
 public:
  explicit OptionSet(CLI::App* cmd) : cmd_(cmd) {
    cmd_->add_option("--config", config_path_, "JSON config file (flags override it)");
  }

  template <typename T>
  CLI::Option* add(const std::string& flag, const std::string& key, T& var,
                   const std::string& desc) {
    CLI::Option* opt = cmd_->add_option(flag, var, desc);
    bind(opt, key, var);
    return opt;
  }

  CLI::Option* add_flag(const std::string& flag, const std::string& key, bool& var,
                        const std::string& desc) {
    CLI::Option* opt = cmd_->add_flag(flag, var, desc);
    bind(opt, key, var);
    return opt;
  }

  // call once after parsing; applies the config file and finalizes `resolved`
  json resolve() {
    loaded_cfg_ = json::object();
    if (!config_path_.empty()) {
      std::ifstream in(config_path_);
      if (!in) throw IoError("cannot open config file " + config_path_);
      try {
        loaded_cfg_ = json::parse(in);
      } catch (const json::exception& e) {
        throw ValidationError("config file " + config_path_ + ": " + e.what());
      }
    }
    for (auto& apply : appliers_) apply(loaded_cfg_);
    json resolved = json::object();
    for (auto& dump : dumpers_) dump(resolved);
    return resolved;
  }

  // did the flag or the config file supply this value?
  bool provided(const CLI::Option* opt, const std::string& key) const {
    return opt->count() > 0 || loaded_cfg_.contains(key);
  }

 private:
  template <typename T>
  void bind(CLI::Option* opt, const std::string& key, T& var) {
    appliers_.push_back([opt, key, &var](const json& cfg) {
      if (opt->count() == 0 && cfg.contains(key)) var = cfg.at(key).get<T>();
    });
    dumpers_.push_back([key, &var](json& out) { out[key] = var; });
  }

  CLI::App* cmd_;
  std::string config_path_;
  json loaded_cfg_ = json::object();
  std::vector<std::function<void(const json&)>> appliers_;
  std::vector<std::function<void(json&)>> dumpers_;
};

std::uint64_t env_seed_or(std::uint64_t fallback) {
  if (const char* env = std::getenv("GENADAPT_SEED")) {
    try {
      return std::stoull(env);
    } catch (...) {
      throw ValidationError("GENADAPT_SEED is not an integer");
    }
  }
  return fallback;
}

void write_resolved_config(const fs::path& out_dir, const std::string& command,
                           const json& resolved) {
  fs::create_directories(out_dir / "logs");
  std::ofstream out(out_dir / "logs" / (command + "_config.json"), std::ios::trunc);
  if (!out) throw IoError("cannot write resolved config under " + out_dir.string());
  out << resolved.dump(2) << "\n";
}

features::FeatureConfig default_feature_config() { return {}; }

data::XVectorStore make_xvector_store(const std::string& spec, std::size_t dim) {
  data::XVectorStore store;
  store.dim = dim;
  if (spec == "stub") {
    store.mode = data::XVectorStore::Mode::stub;
  } else {
    store.mode = data::XVectorStore::Mode::directory;
    store.dir = spec;
  }
  return store;
}

void print_records(const std::vector<optim::EpochRecord>& records) {
  for (const auto& r : records) {
    std::cout << "epoch " << r.epoch << "  train_loss " << r.train_loss;
    if (!std::isnan(r.dev_wer)) std::cout << "  dev_wer " << r.dev_wer;
    std::cout << "  lr " << r.lr_last << "\n";
  }
}

// ---------------------------------------------------------------------------
// synth
// ---------------------------------------------------------------------------

struct SynthArgs {
  std::string out_dir;
  data::ToyCorpusSpec spec;
  std::uint64_t seed = 42;
  bool seed_given = false;
};

int run_synth(SynthArgs& a) {
  a.spec.seed = a.seed_given ? a.seed : env_seed_or(a.seed);
  a.seed = a.spec.seed;
  const data::Manifest m = data::synth_toy_corpus(a.spec, a.out_dir);
  std::cout << (fs::path(a.out_dir) / "manifest.jsonl").string() << "\n";
  std::cout << "wrote " << m.size() << " utterances\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------
// features
// ---------------------------------------------------------------------------

struct FeaturesArgs {
  std::string manifest;
  std::string out_dir;
  std::string type = "fbank";
};

int run_features(FeaturesArgs& a) {
  if (a.type != "fbank" && a.type != "mfcc")
    throw ValidationError("--type must be fbank or mfcc");
  const data::Manifest m = data::load_manifest(a.manifest);
  const fs::path feat_dir = fs::path(a.out_dir) / "features";
  fs::create_directories(feat_dir);
  const features::FeatureConfig cfg = default_feature_config();
  kernels::parallel_for(m.utts.size(), [&](std::size_t i) {
    const data::Utterance& u = m.utts[i];
    const features::Waveform w = features::read_wav(data::resolve_audio(a.manifest, u));
    const features::FeatureMatrix f =
        a.type == "fbank" ? features::log_mel_fbank(w, cfg) : features::mfcc(w, cfg);
    features::write_feature_file(feat_dir / (u.id + ".gafm"), f);
  });
  std::cout << "extracted " << a.type << " features for " << m.size()
            << " utterances into " << feat_dir.string() << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

struct TrainArgs {
  std::string manifest;
  std::string dev_manifest;
  std::string out_dir;
  std::string gender;
  std::string fusion = "none";
  std::string xvector_store = "stub";
  std::string optimizer = "noam";
  std::string resume;
  double split_ratio = 0.9;
  bool no_dev = false;
  int epochs = 100;
  std::size_t batch_size = 8;
  std::size_t d_model = 64;
  std::size_t heads = 4;
  std::size_t enc_layers = 2;
  std::size_t dec_layers = 2;
  std::size_t ff_dim = 128;
  std::size_t xvector_dim = 512;
  double lambda_ctc = 0.3;
  double lr = 0.1;
  double noam_factor = 5.0;
  std::size_t warmup = 25000;
  double clip_norm = 5.0;
  bool skip_infeasible = false;
  std::uint64_t seed = 42;
  bool seed_given = false;
};

int run_train(TrainArgs& a) {
  const std::uint64_t seed = a.seed_given ? a.seed : env_seed_or(a.seed);
  data::Manifest full = data::load_manifest(a.manifest);
  if (!a.gender.empty()) {
    if (a.gender != "M" && a.gender != "F")
      throw ValidationError("--gender must be M or F");
    full = data::filter_gender(full, a.gender[0]);
  }
  if (full.utts.empty()) throw ValidationError("train: manifest is empty after filtering");

  data::Manifest train_m = full, dev_m;
  if (!a.dev_manifest.empty()) {
    dev_m = data::load_manifest(a.dev_manifest);
  } else if (!a.no_dev) {
    std::tie(train_m, dev_m) = data::split_train_dev(full, a.split_ratio, seed);
  }

  optim::TrainSetup setup;
  std::optional<optim::Checkpoint> resume_ckpt;
  if (!a.resume.empty()) {
    resume_ckpt = optim::load_checkpoint(a.resume);
    setup.config = resume_ckpt->config;
    setup.vocab = data::Vocab::from_symbols(resume_ckpt->vocab_symbols);
  } else {
    setup.vocab = data::Vocab::build(full);
    setup.config.d_model = a.d_model;
    setup.config.n_heads = a.heads;
    setup.config.enc_layers = a.enc_layers;
    setup.config.dec_layers = a.dec_layers;
    setup.config.ff_dim = a.ff_dim;
    setup.config.vocab_size = setup.vocab.size();
    setup.config.xvector_dim = a.xvector_dim;
    setup.config.fusion = model::parse_fusion(a.fusion);
    setup.config.lambda_ctc = a.lambda_ctc;
    setup.config.validate();
  }
  setup.manifest_fingerprint = data::manifest_fingerprint(train_m);

  optim::PrepareOptions prep;
  prep.feature_cfg = default_feature_config();
  prep.use_xvectors = setup.config.fusion != model::FusionMode::none;
  prep.xvec_store = make_xvector_store(a.xvector_store, setup.config.xvector_dim);
  prep.cache_dir = fs::path(a.out_dir) / "features";
  setup.train_set = optim::prepare_utterances(train_m, a.manifest, setup.vocab, prep);
  setup.dev_set =
      optim::prepare_utterances(dev_m, a.dev_manifest.empty() ? a.manifest : a.dev_manifest,
                                setup.vocab, prep);

  optim::TrainOptions opts;
  opts.epochs = a.epochs;
  opts.batch_size = a.batch_size;
  opts.clip_norm = a.clip_norm;
  opts.skip_infeasible = a.skip_infeasible;
  opts.seed = seed;
  opts.checkpoint_dir = fs::path(a.out_dir) / "checkpoints";

  optim::TrainResult result;
  if (resume_ckpt) {
    result = optim::resume_train(*resume_ckpt, setup, opts);
  } else {
    optim::OptimSpec spec;
    spec.kind = optim::parse_optim_kind(a.optimizer);
    spec.lr = a.lr;
    spec.schedule.kind = spec.kind == optim::OptimState::Kind::noam_adam
                             ? optim::ScheduleConfig::Kind::noam
                             : optim::ScheduleConfig::Kind::constant;
    spec.schedule.factor = a.noam_factor;
    spec.schedule.warmup_steps = a.warmup;
    spec.schedule.constant_lr = a.lr;
    result = optim::train(setup, spec, opts);
  }

  fs::create_directories(fs::path(a.out_dir) / "logs");
  optim::write_train_log(fs::path(a.out_dir) / "logs" / "train_log.jsonl", result.records);
  print_records(result.records);
  std::cout << "checkpoints in " << opts.checkpoint_dir.string() << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------
// finetune
// ---------------------------------------------------------------------------

struct FinetuneArgs {
  std::string base;
  std::string base_dir;
  int from_epoch = 100;
  std::string manifest;
  std::string dev_manifest;
  std::string out_dir;
  std::string gender;
  std::string optimizer = "adadelta";
  std::string xvector_store = "stub";
  double lr = 0.1;
  std::size_t warmup = 4000;
  int epochs = 20;
  std::vector<std::string> freeze;
  std::size_t batch_size = 8;
  double clip_norm = 5.0;
  bool skip_infeasible = false;
  std::uint64_t seed = 42;
  bool seed_given = false;
};

int run_finetune(FinetuneArgs& a) {
  const std::uint64_t seed = a.seed_given ? a.seed : env_seed_or(a.seed);
  fs::path base_path;
  if (!a.base.empty()) {
    base_path = a.base;
  } else if (!a.base_dir.empty()) {
    base_path = optim::checkpoint_path(a.base_dir, a.from_epoch);
  } else {
    throw ValidationError("finetune: give --base or --base-dir");
  }
  const optim::Checkpoint base = optim::load_checkpoint(base_path);

  data::Manifest subset = data::load_manifest(a.manifest);
  if (!a.gender.empty()) {
    if (a.gender != "M" && a.gender != "F")
      throw ValidationError("--gender must be M or F");
    subset = data::filter_gender(subset, a.gender[0]);
  }

  optim::TrainSetup setup;
  setup.config = base.config;
  setup.vocab = data::Vocab::from_symbols(base.vocab_symbols);
  setup.manifest_fingerprint = data::manifest_fingerprint(subset);

  optim::PrepareOptions prep;
  prep.feature_cfg = default_feature_config();
  prep.use_xvectors = setup.config.fusion != model::FusionMode::none;
  prep.xvec_store = make_xvector_store(a.xvector_store, setup.config.xvector_dim);
  prep.cache_dir = fs::path(a.out_dir) / "features";
  setup.train_set = optim::prepare_utterances(subset, a.manifest, setup.vocab, prep);
  if (!a.dev_manifest.empty()) {
    const data::Manifest dev_m = data::load_manifest(a.dev_manifest);
    setup.dev_set = optim::prepare_utterances(dev_m, a.dev_manifest, setup.vocab, prep);
  }

  optim::FinetuneRecipe recipe;
  recipe.base_epoch = base.epoch;
  recipe.optimizer = optim::parse_optim_kind(a.optimizer);
  recipe.lr = a.lr;
  recipe.warmup = a.warmup;
  recipe.epochs = a.epochs;
  recipe.freeze_patterns = a.freeze;

  optim::TrainOptions opts;
  opts.batch_size = a.batch_size;
  opts.clip_norm = a.clip_norm;
  opts.skip_infeasible = a.skip_infeasible;
  opts.seed = seed;
  opts.checkpoint_dir = fs::path(a.out_dir) / "checkpoints";

  const optim::TrainResult result = optim::finetune(base, recipe, setup, opts);
  fs::create_directories(fs::path(a.out_dir) / "logs");
  optim::write_train_log(fs::path(a.out_dir) / "logs" / "finetune_log.jsonl",
                         result.records);
  print_records(result.records);
  std::cout << "checkpoints in " << opts.checkpoint_dir.string() << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

struct EvalArgs {
  std::vector<std::string> ckpts;
  std::vector<std::string> names;
  std::string hyp_file;
  std::string manifest;
  std::string out_dir;
  std::string group = "gender";
  std::string xvector_store = "stub";
  bool cer = false;
};

int run_eval(EvalArgs& a) {
  const data::Manifest m = data::load_manifest(a.manifest);
  if (m.utts.empty()) throw ValidationError("eval: empty manifest");
  const eval::GroupDimension dim = eval::parse_dimension(a.group);
  std::map<std::string, std::string> id_to_group;
  for (const data::Utterance& u : m.utts) {
    switch (dim) {
      case eval::GroupDimension::gender: id_to_group[u.id] = std::string(1, u.gender); break;
      case eval::GroupDimension::speaker: id_to_group[u.id] = u.speaker; break;
      case eval::GroupDimension::accent: id_to_group[u.id] = u.accent.value_or("none"); break;
    }
  }

  const fs::path reports_dir = fs::path(a.out_dir) / "reports";
  fs::create_directories(reports_dir);
  std::map<std::string, eval::WerReport> reports;

  auto score = [&](const std::string& name,
                   const std::map<std::string, std::string>& hyps) {
    std::vector<eval::ScoredPair> pairs;
    pairs.reserve(m.utts.size());
    for (const data::Utterance& u : m.utts) {
      auto it = hyps.find(u.id);
      if (it == hyps.end()) throw LookupError("eval: no hypothesis for '" + u.id + "'");
      pairs.push_back({u.id, u.text, it->second});
    }
    eval::WerReport report = eval::grouped_report(pairs, id_to_group, dim, a.cer);
    report.model = name;
    std::ofstream(reports_dir / (name + "_" + a.group + ".json"))
        << eval::report_to_json(report) << "\n";
    reports[name] = std::move(report);
  };

  if (!a.hyp_file.empty()) {
    score(fs::path(a.hyp_file).stem().string(), eval::read_hyp_file(a.hyp_file));
  }
  for (std::size_t i = 0; i < a.ckpts.size(); ++i) {
    const optim::Checkpoint ckpt = optim::load_checkpoint(a.ckpts[i]);
    const std::string name =
        i < a.names.size() ? a.names[i] : fs::path(a.ckpts[i]).stem().string();
    const data::Vocab vocab = data::Vocab::from_symbols(ckpt.vocab_symbols);

    optim::PrepareOptions prep;
    prep.feature_cfg = default_feature_config();
    prep.use_xvectors = ckpt.config.fusion != model::FusionMode::none;
    prep.xvec_store = make_xvector_store(a.xvector_store, ckpt.config.xvector_dim);
    const auto set = optim::prepare_utterances(m, a.manifest, vocab, prep);

    const auto decoded = optim::decode_set(ckpt.config, ckpt.params, vocab, set);
    std::map<std::string, std::string> hyps;
    std::vector<eval::ScoredPair> hyp_pairs;
    for (const auto& [id, hyp] : decoded) {
      hyps[id] = hyp;
      hyp_pairs.push_back({id, "", hyp});
    }
    eval::write_hyp_file(reports_dir / (name + "_hyps.jsonl"), hyp_pairs);
    score(name, hyps);
  }
  if (reports.empty())
    throw ValidationError("eval: give at least one --ckpt or a --hyp-file");

  const std::string table = eval::render_table(reports);
  std::ofstream(reports_dir / ("table_" + a.group + ".txt")) << table;
  std::cout << table;
  return kExitOk;
}

// ---------------------------------------------------------------------------
// verify
// ---------------------------------------------------------------------------

struct VerifyArgs {
  std::string suite = "all";
  std::string out_dir = ".";
};

struct SuiteResult {
  std::string name;
  bool passed = false;
  std::string detail;
};

SuiteResult verify_ctc_oracle() {
  Rng rng(20240);
  double worst = 0.0;
  int done = 0;
  while (done < 100) {
    const std::size_t t_len = 1 + rng.randint(6);
    const std::size_t vocab = 2 + rng.randint(3);
    const std::size_t l_len = rng.randint(4);
    ctc::LabelSequence target;
    for (std::size_t i = 0; i < l_len; ++i)
      target.ids.push_back(1 + static_cast<int>(rng.randint(vocab - 1)));
    if (ctc::min_input_frames(target) > t_len) continue;
    numerics::Tensor lat({t_len, vocab});
    for (std::size_t t = 0; t < t_len; ++t) {
      std::vector<double> p(vocab);
      double z = 0.0;
      for (auto& x : p) z += (x = rng.uniform(0.05, 1.0));
      for (std::size_t v = 0; v < vocab; ++v)
        lat.data()[t * vocab + v] = std::log(p[v] / z);
    }
    worst = std::max(worst,
                     std::abs(ctc::ctc_loss(lat, target).loss -
                              ctc::ctc_brute_force(lat, target)));
    ++done;
  }
  return {"ctc-oracle", worst < 1e-9,
          "max |forward-backward - brute force| = " + std::to_string(worst)};
}

SuiteResult verify_grad_check() {
  model::ModelConfig cfg;
  cfg.d_model = 16;
  cfg.n_heads = 2;
  cfg.enc_layers = 1;
  cfg.dec_layers = 1;
  cfg.ff_dim = 32;
  cfg.input_dim = 80;
  cfg.vocab_size = 4;
  cfg.xvector_dim = 64;
  cfg.fusion = model::FusionMode::sum;
  cfg.lambda_ctc = 0.3;
  auto params = model::init_params(cfg, 17);
  Rng rng(18);
  features::FeatureMatrix feats;
  feats.frames = 2;
  feats.dim = 80;
  feats.data.resize(160);
  for (double& v : feats.data) v = rng.uniform(-1, 1);
  XVector xv;
  xv.values.resize(cfg.xvector_dim);
  for (double& v : xv.values) v = rng.uniform(-0.5, 0.5);
  model::Batch batch{{"u", feats, {{2, 3}}, xv}};
  const double err = numerics::grad_check(
      [&](const model::ParamMap& p, model::GradMap* g) {
        return model::forward_loss(batch, cfg, p, g).total;
      },
      params, 1e-6);
  return {"grad-check", err < 1e-4, "max relative error = " + std::to_string(err)};
}

SuiteResult verify_wer_oracle() {
  auto chars = [](const std::string& s) {
    std::vector<std::string> out;
    for (char c : s) out.emplace_back(1, c);
    return out;
  };
  std::function<std::size_t(const std::vector<std::string>&,
                            const std::vector<std::string>&, std::size_t, std::size_t)>
      brute = [&](const std::vector<std::string>& x, const std::vector<std::string>& y,
                  std::size_t i, std::size_t j) -> std::size_t {
    if (i == x.size()) return y.size() - j;
    if (j == y.size()) return x.size() - i;
    return std::min({brute(x, y, i + 1, j + 1) + (x[i] == y[j] ? 0u : 1u),
                     brute(x, y, i + 1, j) + 1, brute(x, y, i, j + 1) + 1});
  };
  Rng rng(31337);
  const std::vector<std::string> alphabet{"a", "b", "c"};
  bool ok = true;
  for (int trial = 0; trial < 200 && ok; ++trial) {
    std::vector<std::string> x, y;
    for (std::size_t i = rng.randint(5); i-- > 0;) x.push_back(alphabet[rng.randint(3)]);
    for (std::size_t i = rng.randint(5); i-- > 0;) y.push_back(alphabet[rng.randint(3)]);
    ok = eval::edit_distance(x, y).total() == brute(x, y, 0, 0);
  }
  ok = ok && eval::edit_distance(chars("kitten"), chars("sitting")).total() == 3;
  const std::vector<eval::ScoredPair> pooled{
      {"u1", "a", "b"}, {"u2", "q w e r t y u i o", "q w e r t y u i o"}};
  ok = ok && std::abs(eval::wer(pooled).first - 0.1) < 1e-15;
  return {"wer-oracle", ok, ok ? "distances match exhaustive search" : "mismatch"};
}

SuiteResult verify_schedule() {
  optim::ScheduleConfig cfg;
  cfg.factor = 1.0;
  cfg.d_model = 64;
  cfg.warmup_steps = 4;
  bool ok = optim::noam_lr(4, cfg) == 0.0625;
  optim::ScheduleConfig full;
  full.factor = 5.0;
  full.d_model = 64;
  full.warmup_steps = 25000;
  const double w = 25000.0;
  const double a = full.factor * std::pow(64.0, -0.5) * std::pow(w, -0.5);
  const double b = full.factor * std::pow(64.0, -0.5) * w * std::pow(w, -1.5);
  ok = ok && std::abs(a - b) < 1e-15;
  return {"schedule", ok, "continuity and spot value"};
}

SuiteResult verify_checkpoint_roundtrip() {
  model::ModelConfig cfg;
  cfg.d_model = 8;
  cfg.n_heads = 2;
  cfg.enc_layers = 1;
  cfg.dec_layers = 1;
  cfg.ff_dim = 16;
  cfg.input_dim = 5;
  cfg.vocab_size = 4;
  cfg.xvector_dim = 8;
  optim::Checkpoint ckpt;
  ckpt.epoch = 2;
  ckpt.config = cfg;
  ckpt.vocab_symbols = {"<blank>", "<sos/eos>", "a", "b"};
  ckpt.params = model::init_params(cfg, 1);
  ckpt.opt = optim::make_optim_state(optim::OptimState::Kind::adadelta, ckpt.params, 0.1, {});
  ckpt.rng_state = Rng(5).serialize();
  ckpt.manifest_fingerprint = "_verify_";
  const fs::path path = fs::temp_directory_path() / "genadapt_verify.ckpt";
  optim::save_checkpoint(ckpt, path);
  const bool ok = optim::checkpoint_bit_equal(ckpt, optim::load_checkpoint(path));
  fs::remove(path);
  return {"checkpoint-roundtrip", ok, ok ? "bit-exact" : "round trip differs"};
}

int run_verify(VerifyArgs& a) {
  const std::vector<std::string> known{"ctc-oracle", "grad-check", "wer-oracle",
                                       "schedule", "checkpoint-roundtrip"};
  std::vector<std::string> to_run;
  if (a.suite == "all") {
    to_run = known;
  } else if (std::find(known.begin(), known.end(), a.suite) != known.end()) {
    to_run = {a.suite};
  } else {
    std::cerr << "unknown verify suite '" << a.suite << "'\n";
    return kExitUsage;
  }
  std::vector<SuiteResult> results;
  for (const std::string& name : to_run) {
    if (name == "ctc-oracle") results.push_back(verify_ctc_oracle());
    else if (name == "grad-check") results.push_back(verify_grad_check());
    else if (name == "wer-oracle") results.push_back(verify_wer_oracle());
    else if (name == "schedule") results.push_back(verify_schedule());
    else results.push_back(verify_checkpoint_roundtrip());
  }
  bool all_ok = true;
  json out = json::array();
  for (const SuiteResult& r : results) {
    all_ok = all_ok && r.passed;
    std::cout << (r.passed ? "[PASS] " : "[FAIL] ") << r.name << ": " << r.detail << "\n";
    out.push_back({{"suite", r.name}, {"passed", r.passed}, {"detail", r.detail}});
  }
  fs::create_directories(a.out_dir);
  std::ofstream(fs::path(a.out_dir) / "verify_results.json") << out.dump(2) << "\n";
  return all_ok ? kExitOk : kExitVerifyFail;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"gender-domain adaptation toolkit for a small CTC/attention ASR model"};
  app.require_subcommand(1);
  int threads = 0;
  app.add_option("--threads", threads, "worker threads (1 forces the serial kernels)");

  SynthArgs synth;
  CLI::App* synth_cmd = app.add_subcommand("synth", "synthesize the gendered toy corpus");
  OptionSet synth_opts(synth_cmd);
  synth_opts.add("--out-dir", "out_dir", synth.out_dir, "output directory")->required();
  synth_opts.add("--speakers-per-gender", "speakers_per_gender",
                 synth.spec.speakers_per_gender, "speakers per gender");
  synth_opts.add("--utts-per-speaker", "utts_per_speaker", synth.spec.utts_per_speaker,
                 "utterances per speaker");
  synth_opts.add("--alphabet", "alphabet", synth.spec.alphabet, "transcript alphabet");
  synth_opts.add("--min-len", "min_len", synth.spec.min_len, "min transcript length");
  synth_opts.add("--max-len", "max_len", synth.spec.max_len, "max transcript length");
  synth_opts.add("--sample-rate", "sample_rate", synth.spec.sample_rate, "sample rate");
  CLI::Option* synth_seed = synth_opts.add("--seed", "seed", synth.seed, "corpus seed");

  FeaturesArgs feat;
  CLI::App* feat_cmd = app.add_subcommand("features", "extract features to GAFM files");
  OptionSet feat_opts(feat_cmd);
  feat_opts.add("--manifest", "manifest", feat.manifest, "corpus manifest")->required();
  feat_opts.add("--out-dir", "out_dir", feat.out_dir, "output directory")->required();
  feat_opts.add("--type", "type", feat.type, "fbank or mfcc");

  TrainArgs train;
  CLI::App* train_cmd = app.add_subcommand("train", "train the acoustic model");
  OptionSet train_opts(train_cmd);
  train_opts.add("--manifest", "manifest", train.manifest, "training manifest")->required();
  train_opts.add("--dev-manifest", "dev_manifest", train.dev_manifest, "dev manifest");
  train_opts.add("--out-dir", "out_dir", train.out_dir, "output directory")->required();
  train_opts.add("--gender", "gender", train.gender, "train on one gender subset (M/F)");
  train_opts.add("--split-ratio", "split_ratio", train.split_ratio,
                 "train share when auto-splitting");
  train_opts.add_flag("--no-dev", "no_dev", train.no_dev, "train on everything, skip dev");
  train_opts.add("--epochs", "epochs", train.epochs, "training epochs");
  train_opts.add("--batch-size", "batch_size", train.batch_size, "batch size");
  train_opts.add("--d-model", "d_model", train.d_model, "model width");
  train_opts.add("--heads", "heads", train.heads, "attention heads");
  train_opts.add("--enc-layers", "enc_layers", train.enc_layers, "encoder layers");
  train_opts.add("--dec-layers", "dec_layers", train.dec_layers, "decoder layers");
  train_opts.add("--ff-dim", "ff_dim", train.ff_dim, "feed-forward width");
  train_opts.add("--lambda-ctc", "lambda_ctc", train.lambda_ctc, "CTC weight in [0,1]");
  train_opts.add("--xvector-fusion", "xvector_fusion", train.fusion,
                 "none, sum, or concat");
  train_opts.add("--xvector-store", "xvector_store", train.xvector_store,
                 "stub or a directory of <speaker>.xv files");
  train_opts.add("--xvector-dim", "xvector_dim", train.xvector_dim, "x-vector dimension");
  train_opts.add("--optimizer", "optimizer", train.optimizer, "noam, adam, or adadelta");
  train_opts.add("--lr", "lr", train.lr, "learning rate for adam/adadelta");
  train_opts.add("--noam-factor", "noam_factor", train.noam_factor, "Noam lr factor");
  train_opts.add("--warmup", "warmup", train.warmup, "Noam warmup steps");
  train_opts.add("--clip-norm", "clip_norm", train.clip_norm, "global gradient clip");
  train_opts.add_flag("--skip-infeasible", "skip_infeasible", train.skip_infeasible,
                      "skip utterances whose target cannot align");
  train_opts.add("--resume", "resume", train.resume, "checkpoint to resume from");
  CLI::Option* train_seed = train_opts.add("--seed", "seed", train.seed, "run seed");

  FinetuneArgs ft;
  CLI::App* ft_cmd = app.add_subcommand("finetune", "adapt a checkpoint on a subset");
  OptionSet ft_opts(ft_cmd);
  ft_opts.add("--base", "base", ft.base, "base checkpoint file");
  ft_opts.add("--base-dir", "base_dir", ft.base_dir, "checkpoint directory");
  ft_opts.add("--from-epoch", "from_epoch", ft.from_epoch,
              "epoch to start from when using --base-dir");
  ft_opts.add("--manifest", "manifest", ft.manifest, "adaptation manifest")->required();
  ft_opts.add("--dev-manifest", "dev_manifest", ft.dev_manifest, "dev manifest");
  ft_opts.add("--out-dir", "out_dir", ft.out_dir, "output directory")->required();
  ft_opts.add("--gender", "gender", ft.gender, "adapt on one gender subset (M/F)");
  ft_opts.add("--optimizer", "optimizer", ft.optimizer, "noam, adam, or adadelta");
  ft_opts.add("--lr", "lr", ft.lr, "learning rate (Noam factor for noam)");
  ft_opts.add("--warmup", "warmup", ft.warmup, "warmup steps (Noam only)");
  ft_opts.add("--epochs", "epochs", ft.epochs, "fine-tuning epochs");
  ft_opts.add("--freeze", "freeze", ft.freeze,
              "parameter-name prefix to freeze (repeatable)");
  ft_opts.add("--batch-size", "batch_size", ft.batch_size, "batch size");
  ft_opts.add("--clip-norm", "clip_norm", ft.clip_norm, "global gradient clip");
  ft_opts.add_flag("--skip-infeasible", "skip_infeasible", ft.skip_infeasible,
                   "skip utterances whose target cannot align");
  ft_opts.add("--xvector-store", "xvector_store", ft.xvector_store,
              "stub or a directory of <speaker>.xv files");
  CLI::Option* ft_seed = ft_opts.add("--seed", "seed", ft.seed, "run seed");

  EvalArgs ev;
  CLI::App* ev_cmd = app.add_subcommand("eval", "decode and report WER by group");
  OptionSet ev_opts(ev_cmd);
  ev_opts.add("--ckpt", "ckpt", ev.ckpts, "checkpoint to evaluate (repeatable)");
  ev_opts.add("--name", "name", ev.names, "model name per --ckpt (repeatable)");
  ev_opts.add("--hyp-file", "hyp_file", ev.hyp_file, "score a hypothesis JSONL instead");
  ev_opts.add("--manifest", "manifest", ev.manifest, "test manifest")->required();
  ev_opts.add("--out-dir", "out_dir", ev.out_dir, "output directory")->required();
  ev_opts.add("--group", "group", ev.group, "gender, speaker, or accent");
  ev_opts.add_flag("--cer", "cer", ev.cer, "character error rate instead of WER");
  ev_opts.add("--xvector-store", "xvector_store", ev.xvector_store,
              "stub or a directory of <speaker>.xv files");

  VerifyArgs vf;
  CLI::App* vf_cmd = app.add_subcommand("verify", "run the oracle suites");
  OptionSet vf_opts(vf_cmd);
  vf_cmd->add_option("suite", vf.suite,
                     "ctc-oracle, grad-check, wer-oracle, schedule, "
                     "checkpoint-roundtrip, or all");
  vf_opts.add("--out-dir", "out_dir", vf.out_dir, "where to write verify_results.json");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  if (threads == 1) kernels::set_exec_mode(kernels::ExecMode::serial);
  else if (threads > 1) kernels::set_num_threads(threads);

  try {
    if (synth_cmd->parsed()) {
      json resolved = synth_opts.resolve();
      synth.seed_given = synth_opts.provided(synth_seed, "seed");
      if (!synth.seed_given) synth.seed = env_seed_or(synth.seed);
      synth.seed_given = true;
      resolved["seed"] = synth.seed;
      write_resolved_config(synth.out_dir, "synth", resolved);
      return run_synth(synth);
    }
    if (feat_cmd->parsed()) {
      const json resolved = feat_opts.resolve();
      write_resolved_config(feat.out_dir, "features", resolved);
      return run_features(feat);
    }
    if (train_cmd->parsed()) {
      json resolved = train_opts.resolve();
      if (!train_opts.provided(train_seed, "seed")) train.seed = env_seed_or(train.seed);
      train.seed_given = true;
      resolved["seed"] = train.seed;
      write_resolved_config(train.out_dir, "train", resolved);
      return run_train(train);
    }
    if (ft_cmd->parsed()) {
      json resolved = ft_opts.resolve();
      if (!ft_opts.provided(ft_seed, "seed")) ft.seed = env_seed_or(ft.seed);
      ft.seed_given = true;
      resolved["seed"] = ft.seed;
      write_resolved_config(ft.out_dir, "finetune", resolved);
      return run_finetune(ft);
    }
    if (ev_cmd->parsed()) {
      const json resolved = ev_opts.resolve();
      write_resolved_config(ev.out_dir, "eval", resolved);
      return run_eval(ev);
    }
    if (vf_cmd->parsed()) {
      vf_opts.resolve();
      return run_verify(vf);
    }
  } catch (const IoError& e) {
    std::cerr << "I/O error: " << e.what() << "\n";
    return kExitIo;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "I/O error: " << e.what() << "\n";
    return kExitIo;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitVerifyFail;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitVerifyFail;
  }
  return kExitUsage;
}
