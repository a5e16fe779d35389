// Acceptance suite: one pass/fail line per criterion. Exercises the toolkit
// end to end — oracle equivalences, gradient checks, schedule and optimizer
// spot values, checkpoint integrity, an overfit sanity run, and the
// gender-adaptation protocol on the synthetic corpus.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <sstream>
#include <vector>

#include "genadapt/ctc.hpp"
#include "genadapt/data.hpp"
#include "genadapt/errors.hpp"
#include "genadapt/eval.hpp"
#include "genadapt/model.hpp"
#include "genadapt/optim.hpp"
#include "genadapt/rng.hpp"

namespace fs = std::filesystem;
using namespace genadapt;
using numerics::Tensor;

namespace {

int g_failures = 0;

void report(int number, const std::string& name, bool passed, const std::string& detail) {
  std::printf("[%s] criterion %d: %s — %s\n", passed ? "PASS" : "FAIL", number,
              name.c_str(), detail.c_str());
  std::fflush(stdout);
  if (!passed) ++g_failures;
}

void run(int number, const std::string& name,
         const std::function<std::pair<bool, std::string>()>& body) {
  try {
    auto [ok, detail] = body();
    report(number, name, ok, detail);
  } catch (const std::exception& e) {
    report(number, name, false, std::string("exception: ") + e.what());
  }
}

double seconds_since(const std::chrono::steady_clock::time_point& t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

fs::path scratch_dir() {
  const fs::path dir = fs::temp_directory_path() / "genadapt_acceptance";
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

// ---- shared model/test fixtures -------------------------------------------

model::ModelConfig grad_check_config(model::FusionMode fusion) {
  model::ModelConfig cfg;
  cfg.d_model = 16;
  cfg.n_heads = 2;
  cfg.enc_layers = 1;
  cfg.dec_layers = 1;
  cfg.ff_dim = 32;
  cfg.input_dim = 80;
  cfg.vocab_size = 4;
  cfg.xvector_dim = 512;
  cfg.fusion = fusion;
  return cfg;
}

model::Batch grad_check_batch(const model::ModelConfig& cfg) {
  Rng rng(404);
  features::FeatureMatrix feats;
  feats.frames = 2;
  feats.dim = cfg.input_dim;
  feats.data.resize(feats.frames * feats.dim);
  for (double& v : feats.data) v = rng.uniform(-1.0, 1.0);
  std::optional<XVector> xvec;
  if (cfg.fusion != model::FusionMode::none)
    xvec = data::lookup_xvector("acceptance_spk", data::XVectorStore{});
  return {{"u0", feats, {{2, 3}}, xvec}};
}

double model_grad_check(const model::ModelConfig& cfg, double lambda) {
  model::ModelConfig c = cfg;
  c.lambda_ctc = lambda;
  const model::Batch batch = grad_check_batch(c);
  const model::ParamMap params = model::init_params(c, 31337);
  return numerics::grad_check(
      [&](const model::ParamMap& p, model::GradMap* g) {
        return model::forward_loss(batch, c, p, g).total;
      },
      params, 1e-6, 1e-8);
}

// prepared training setup from a toy corpus on disk
optim::TrainSetup make_setup(const data::Manifest& train_m, const data::Manifest& dev_m,
                             const fs::path& manifest_path, const data::Vocab& vocab,
                             const model::ModelConfig& cfg) {
  optim::TrainSetup setup;
  setup.config = cfg;
  setup.vocab = vocab;
  setup.manifest_fingerprint = data::manifest_fingerprint(train_m);
  optim::PrepareOptions prep;
  setup.train_set = optim::prepare_utterances(train_m, manifest_path, vocab, prep);
  setup.dev_set = optim::prepare_utterances(dev_m, manifest_path, vocab, prep);
  return setup;
}

model::ModelConfig desk_config(std::size_t vocab_size) {
  model::ModelConfig cfg;  // d_model 64, 4 heads, 2+2 layers, ff 128
  cfg.vocab_size = vocab_size;
  return cfg;
}

optim::OptimSpec desk_noam() {
  optim::OptimSpec spec;
  spec.kind = optim::OptimState::Kind::noam_adam;
  spec.schedule.kind = optim::ScheduleConfig::Kind::noam;
  spec.schedule.factor = 0.2;
  spec.schedule.warmup_steps = 100;
  return spec;
}

double wer_on(const model::ModelConfig& cfg, const model::ParamMap& params,
              const data::Vocab& vocab, const std::vector<optim::PreparedUtt>& set) {
  const auto hyps = optim::decode_set(cfg, params, vocab, set);
  std::vector<eval::ScoredPair> pairs(set.size());
  for (std::size_t i = 0; i < set.size(); ++i)
    pairs[i] = {set[i].id, set[i].ref_text, hyps[i].second};
  return eval::wer(pairs).first;
}

double median3(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  return v[1];
}

// ---- criteria ---------------------------------------------------------------

std::pair<bool, std::string> criterion1_ctc_oracle() {
  const auto t0 = std::chrono::steady_clock::now();
  Rng rng(20250);
  double worst = 0.0;
  int done = 0;
  while (done < 100) {
    const std::size_t t_len = 1 + rng.randint(6);   // T <= 6
    const std::size_t vocab = 2 + rng.randint(3);   // V <= 4
    const std::size_t l_len = rng.randint(4);       // |target| <= 3
    ctc::LabelSequence target;
    for (std::size_t i = 0; i < l_len; ++i)
      target.ids.push_back(1 + static_cast<int>(rng.randint(vocab - 1)));
    if (ctc::min_input_frames(target) > t_len) continue;
    Tensor lat({t_len, vocab});
    for (std::size_t t = 0; t < t_len; ++t) {
      std::vector<double> p(vocab);
      double z = 0.0;
      for (auto& x : p) z += (x = rng.uniform(0.05, 1.0));
      for (std::size_t v = 0; v < vocab; ++v) lat.data()[t * vocab + v] = std::log(p[v] / z);
    }
    worst = std::max(worst, std::abs(ctc::ctc_loss(lat, target).loss -
                                     ctc::ctc_brute_force(lat, target)));
    ++done;
  }
  const double secs = seconds_since(t0);
  std::ostringstream os;
  os << "100 instances, max |Δ| = " << worst << ", " << secs << " s";
  return {worst < 1e-9 && secs < 10.0, os.str()};
}

std::pair<bool, std::string> criterion2_grad_check() {
  const auto t0 = std::chrono::steady_clock::now();
  double worst = 0.0;
  for (double lambda : {0.0, 0.3, 1.0})
    worst = std::max(worst, model_grad_check(grad_check_config(model::FusionMode::sum),
                                             lambda));
  const double secs = seconds_since(t0);
  std::ostringstream os;
  os << "max relative error " << worst << " over lambda in {0, 0.3, 1}, " << secs << " s";
  return {worst < 1e-4 && secs < 60.0, os.str()};
}

std::pair<bool, std::string> criterion3_wer_oracle() {
  // exhaustive search over every pair of 3-symbol strings of length <= 4
  const std::vector<std::string> alphabet{"a", "b", "c"};
  std::vector<std::vector<std::string>> strings{{}};
  std::vector<std::vector<std::string>> frontier{{}};
  for (int len = 1; len <= 4; ++len) {
    std::vector<std::vector<std::string>> next;
    for (const auto& prefix : frontier)
      for (const auto& sym : alphabet) {
        auto s = prefix;
        s.push_back(sym);
        next.push_back(s);
        strings.push_back(std::move(s));
      }
    frontier = std::move(next);
  }
  std::function<std::size_t(const std::vector<std::string>&, const std::vector<std::string>&,
                            std::size_t, std::size_t)>
      brute = [&](const std::vector<std::string>& a, const std::vector<std::string>& b,
                  std::size_t i, std::size_t j) -> std::size_t {
    if (i == a.size()) return b.size() - j;
    if (j == b.size()) return a.size() - i;
    return std::min({brute(a, b, i + 1, j + 1) + (a[i] == b[j] ? 0u : 1u),
                     brute(a, b, i + 1, j) + 1, brute(a, b, i, j + 1) + 1});
  };
  std::size_t mismatches = 0;
  for (const auto& ref : strings)
    for (const auto& hyp : strings)
      if (eval::edit_distance(ref, hyp).total() != brute(ref, hyp, 0, 0)) ++mismatches;

  auto chars = [](const std::string& s) {
    std::vector<std::string> out;
    for (char c : s) out.emplace_back(1, c);
    return out;
  };
  const bool kitten = eval::edit_distance(chars("kitten"), chars("sitting")).total() == 3;
  const std::vector<eval::ScoredPair> pooled{
      {"u1", "a", "b"}, {"u2", "q w e r t y u i o", "q w e r t y u i o"}};
  const bool pooled_ok = eval::wer(pooled).first == 0.1;
  std::ostringstream os;
  os << strings.size() * strings.size() << " pairs, " << mismatches
     << " mismatches; kitten/sitting " << (kitten ? "=3" : "!=3") << "; pooled "
     << (pooled_ok ? "=0.1" : "!=0.1");
  return {mismatches == 0 && kitten && pooled_ok, os.str()};
}

std::pair<bool, std::string> criterion4_noam() {
  optim::ScheduleConfig spot;
  spot.factor = 1.0;
  spot.d_model = 64;
  spot.warmup_steps = 4;
  const bool spot_ok = optim::noam_lr(4, spot) == 0.0625;

  double worst_gap = 0.0;
  for (std::size_t warmup : {4ul, 400ul, 4000ul, 25000ul}) {
    const double w = static_cast<double>(warmup);
    const double factor = 5.0, dm = 64.0;
    const double decay = factor * std::pow(dm, -0.5) * std::pow(w, -0.5);
    const double ramp = factor * std::pow(dm, -0.5) * w * std::pow(w, -1.5);
    worst_gap = std::max(worst_gap, std::abs(decay - ramp));
  }
  std::ostringstream os;
  os << "spot value " << (spot_ok ? "exact 0.0625" : "WRONG") << "; worst branch gap "
     << worst_gap;
  return {spot_ok && worst_gap < 1e-15, os.str()};
}

std::pair<bool, std::string> criterion5_adadelta() {
  model::ParamMap params;
  params.emplace("w", Tensor({1}, {0.0}));
  model::GradMap grads;
  grads.emplace("w", Tensor({1}, {1.0}));
  optim::OptimState st =
      optim::make_optim_state(optim::OptimState::Kind::adadelta, params, 0.1, {});
  optim::optimizer_step(params, grads, st);
  const double delta = params.at("w")[0];

  // hand-derived oracle: E[g^2] = (1-rho) g^2 = 0.05;
  // delta = -lr * sqrt((E[dx^2]+eps)/(E[g^2]+eps)) * g
  const double oracle = -0.1 * std::sqrt((0.0 + 1e-6) / (0.05 + 1e-6));
  const double frozen = -4.4720912343108383e-4;  // the oracle expression, evaluated
  const bool ok = std::abs(delta - oracle) < 1e-8 && std::abs(delta - frozen) < 1e-8;
  std::ostringstream os;
  os << "step = " << delta << ", hand-derived oracle = " << oracle;
  return {ok, os.str()};
}

std::pair<bool, std::string> criterion6_checkpoint(const fs::path& scratch) {
  const fs::path dir = scratch / "c6";
  data::ToyCorpusSpec spec;
  spec.utts_per_speaker = 3;
  spec.seed = 601;
  const data::Manifest m = data::synth_toy_corpus(spec, dir / "corpus");
  const data::Vocab vocab = data::Vocab::build(m);
  model::ModelConfig cfg = desk_config(vocab.size());
  cfg.d_model = 16;
  cfg.n_heads = 2;
  cfg.ff_dim = 32;
  const optim::TrainSetup setup =
      make_setup(m, {}, dir / "corpus" / "manifest.jsonl", vocab, cfg);

  optim::TrainOptions opts;
  opts.epochs = 3;
  opts.batch_size = 4;
  opts.seed = 61;
  opts.checkpoint_dir = dir / "straight";
  const optim::TrainResult full = optim::train(setup, desk_noam(), opts);

  // save/load round trip is bit-exact
  const optim::Checkpoint loaded =
      optim::load_checkpoint(optim::checkpoint_path(dir / "straight", 3));
  const bool roundtrip = optim::checkpoint_bit_equal(full.last, loaded);

  // resume at epoch 2 and finish; loss trace must match bit for bit
  optim::TrainOptions part = opts;
  part.epochs = 2;
  part.checkpoint_dir = dir / "partial";
  optim::train(setup, desk_noam(), part);
  const optim::Checkpoint at2 =
      optim::load_checkpoint(optim::checkpoint_path(dir / "partial", 2));
  optim::TrainOptions cont = opts;
  cont.checkpoint_dir = dir / "resumed";
  const optim::TrainResult resumed = optim::resume_train(at2, setup, cont);
  const bool trace_ok = resumed.records.size() == 1 &&
                        resumed.records[0].train_loss == full.records[2].train_loss &&
                        optim::checkpoint_bit_equal(resumed.last, full.last);
  std::ostringstream os;
  os << "round-trip " << (roundtrip ? "bit-exact" : "DIFFERS") << "; resume trace "
     << (trace_ok ? "bit-identical" : "DIFFERS");
  return {roundtrip && trace_ok, os.str()};
}

std::pair<bool, std::string> criterion7_overfit(const fs::path& scratch) {
  const auto t0 = std::chrono::steady_clock::now();
  const fs::path dir = scratch / "c7";
  data::ToyCorpusSpec spec;  // defaults: 2+2 speakers x 25, alphabet "abcdef"
  spec.seed = 701;
  const data::Manifest m = data::synth_toy_corpus(spec, dir / "corpus");
  const data::Vocab vocab = data::Vocab::build(m);
  const optim::TrainSetup setup =
      make_setup(m, {}, dir / "corpus" / "manifest.jsonl", vocab, desk_config(vocab.size()));

  optim::TrainOptions opts;
  opts.epochs = 30;
  opts.batch_size = 4;
  opts.seed = 71;
  const optim::TrainResult result = optim::train(setup, desk_noam(), opts);

  bool decreasing = true;
  for (int e = 1; e < 5; ++e)
    decreasing = decreasing && result.records[static_cast<std::size_t>(e)].train_loss <
                                   result.records[static_cast<std::size_t>(e - 1)].train_loss;

  // training-set CER with character tokens
  const auto hyps = optim::decode_set(setup.config, result.last.params, vocab, setup.train_set);
  std::vector<eval::ScoredPair> pairs(setup.train_set.size());
  for (std::size_t i = 0; i < pairs.size(); ++i)
    pairs[i] = {setup.train_set[i].id, setup.train_set[i].ref_text, hyps[i].second};
  const double cer = eval::wer(pairs, /*char_level=*/true).first;
  const double secs = seconds_since(t0);
  std::ostringstream os;
  os << "train CER " << cer * 100.0 << "%, first-5-epoch loss "
     << (decreasing ? "strictly decreasing" : "NOT decreasing") << ", " << secs << " s";
  return {cer < 0.10 && decreasing && secs < 15.0 * 60.0, os.str()};
}

std::pair<bool, std::string> criterion8_gender_adaptation(const fs::path& scratch) {
  std::vector<double> base_m, base_f, adapted_m, adapted_f;
  for (std::uint64_t seed : {801ull, 802ull, 803ull}) {
    const fs::path dir = scratch / ("c8_" + std::to_string(seed));
    data::ToyCorpusSpec spec;
    spec.seed = seed;
    const data::Manifest full = data::synth_toy_corpus(spec, dir / "corpus");
    const fs::path manifest_path = dir / "corpus" / "manifest.jsonl";
    auto [train_m, dev_m] = data::split_train_dev(full, 0.9, seed);
    const data::Vocab vocab = data::Vocab::build(full);
    const model::ModelConfig cfg = desk_config(vocab.size());

    // baseline on the full training split, deliberately undertrained so the
    // dev error is positive and adaptable
    optim::TrainSetup setup = make_setup(train_m, dev_m, manifest_path, vocab, cfg);
    optim::TrainOptions opts;
    opts.epochs = 12;
    opts.batch_size = 4;
    opts.seed = seed;
    const optim::TrainResult baseline = optim::train(setup, desk_noam(), opts);

    // the published recipe: 20 epochs, Adadelta lr 0.1, warmup recorded as
    // 4000, no frozen layers, male subset only
    const data::Manifest male_train = data::filter_gender(train_m, 'M');
    optim::TrainSetup male_setup = make_setup(male_train, {}, manifest_path, vocab, cfg);
    optim::FinetuneRecipe recipe;
    recipe.base_epoch = baseline.last.epoch;
    recipe.optimizer = optim::OptimState::Kind::adadelta;
    recipe.lr = 0.1;
    recipe.warmup = 4000;
    recipe.epochs = 20;
    optim::TrainOptions ft_opts;
    ft_opts.batch_size = 4;
    ft_opts.seed = seed;
    const optim::TrainResult adapted =
        optim::finetune(baseline.last, recipe, male_setup, ft_opts);

    const auto prep_gender = [&](char g) {
      optim::PrepareOptions prep;
      return optim::prepare_utterances(data::filter_gender(dev_m, g), manifest_path,
                                       vocab, prep);
    };
    const auto dev_male = prep_gender('M');
    const auto dev_female = prep_gender('F');
    base_m.push_back(wer_on(cfg, baseline.last.params, vocab, dev_male));
    base_f.push_back(wer_on(cfg, baseline.last.params, vocab, dev_female));
    adapted_m.push_back(wer_on(cfg, adapted.last.params, vocab, dev_male));
    adapted_f.push_back(wer_on(cfg, adapted.last.params, vocab, dev_female));
  }
  const double bm = median3(base_m), bf = median3(base_f);
  const double am = median3(adapted_m), af = median3(adapted_f);
  const double male_improvement = bm - am;
  const double female_improvement = bf - af;
  const bool ok = am <= bm && female_improvement <= male_improvement;
  std::ostringstream os;
  os << "median male dev WER " << bm * 100 << "% -> " << am * 100
     << "%; female " << bf * 100 << "% -> " << af * 100 << "%";
  return {ok, os.str()};
}

std::pair<bool, std::string> criterion9_fusion(const fs::path&) {
  Rng rng(909);
  // shape contracts for sum and concat
  bool shapes_ok = true;
  for (model::FusionMode mode : {model::FusionMode::sum, model::FusionMode::concat}) {
    model::ModelConfig cfg = grad_check_config(mode);
    const model::ParamMap params = model::init_params(cfg, 11);
    features::FeatureMatrix feats;
    feats.frames = 5;
    feats.dim = cfg.input_dim;
    feats.data.resize(feats.frames * feats.dim);
    for (double& v : feats.data) v = rng.uniform(-1, 1);
    const XVector xv = data::lookup_xvector("c9", data::XVectorStore{});
    model::Tape tape;
    auto tp = model::register_params(tape, params, false);
    const Tensor& enc = tape.value(model::encode(tape, tp.vars, cfg, feats, xv));
    shapes_ok = shapes_ok && enc.rows() == 5 && enc.cols() == cfg.d_model;
  }

  // fusion_mode=none is bit-identical to a fusion-free build under one seed
  model::ModelConfig cfg_none = grad_check_config(model::FusionMode::none);
  model::ModelConfig cfg_sum = grad_check_config(model::FusionMode::sum);
  const model::ParamMap p_none = model::init_params(cfg_none, 77);
  const model::ParamMap p_sum = model::init_params(cfg_sum, 77);
  bool subset_ok = p_none.size() < p_sum.size();
  for (const auto& [key, t] : p_none)
    subset_ok = subset_ok && p_sum.count(key) == 1 && t.bit_equal(p_sum.at(key));
  features::FeatureMatrix feats;
  feats.frames = 3;
  feats.dim = cfg_none.input_dim;
  feats.data.resize(feats.frames * feats.dim);
  for (double& v : feats.data) v = rng.uniform(-1, 1);
  model::Tape t1, t2;
  const Tensor& e1 = t1.value(model::encode(
      t1, model::register_params(t1, p_none, false).vars, cfg_none, feats, std::nullopt));
  const Tensor& e2 = t2.value(model::encode(
      t2, model::register_params(t2, p_sum, false).vars, cfg_sum, feats, std::nullopt));
  const bool identical = e1.bit_equal(e2);

  // every fusion mode passes the criterion-2 gradient check
  double worst = 0.0;
  for (model::FusionMode mode :
       {model::FusionMode::none, model::FusionMode::sum, model::FusionMode::concat})
    for (double lambda : {0.0, 0.3, 1.0})
      worst = std::max(worst, model_grad_check(grad_check_config(mode), lambda));

  std::ostringstream os;
  os << "shapes " << (shapes_ok ? "ok" : "BAD") << "; none==fusion-free "
     << (identical && subset_ok ? "bit-identical" : "DIFFERS") << "; grad err " << worst;
  return {shapes_ok && subset_ok && identical && worst < 1e-4, os.str()};
}

std::pair<bool, std::string> criterion10_freeze(const fs::path& scratch) {
  const fs::path dir = scratch / "c10";
  data::ToyCorpusSpec spec;
  spec.utts_per_speaker = 3;  // 12 utterances
  spec.seed = 1001;
  const data::Manifest m = data::synth_toy_corpus(spec, dir / "corpus");
  const data::Vocab vocab = data::Vocab::build(m);
  model::ModelConfig cfg = desk_config(vocab.size());
  cfg.d_model = 16;
  cfg.n_heads = 2;
  cfg.ff_dim = 32;
  const optim::TrainSetup setup =
      make_setup(m, {}, dir / "corpus" / "manifest.jsonl", vocab, cfg);

  optim::TrainOptions opts;
  opts.epochs = 1;
  opts.batch_size = 4;
  opts.seed = 13;
  const optim::TrainResult base = optim::train(setup, desk_noam(), opts);

  // recipe with the encoder frozen; 12 utterances / batch 4 = 3 steps per
  // epoch, so 2 epochs give more than 5 steps (exceeding 5 only strengthens
  // the invariance claim); count the actual steps from the optimizer state
  optim::FinetuneRecipe recipe;
  recipe.optimizer = optim::OptimState::Kind::adadelta;
  recipe.lr = 0.1;
  recipe.epochs = 2;
  recipe.freeze_patterns = {"enc."};
  const optim::TrainResult tuned = optim::finetune(base.last, recipe, setup, opts);
  const std::uint64_t steps = tuned.last.opt.step;

  bool enc_frozen = true;
  bool dec_changed = false;
  for (const auto& [key, t] : tuned.last.params) {
    if (key.starts_with("enc."))
      enc_frozen = enc_frozen && t.bit_equal(base.last.params.at(key));
    else if (key.starts_with("dec.") && !t.bit_equal(base.last.params.at(key)))
      dec_changed = true;
  }
  std::ostringstream os;
  os << steps << " steps with enc. frozen: encoder "
     << (enc_frozen ? "bit-identical" : "CHANGED") << ", decoder "
     << (dec_changed ? "changed" : "UNCHANGED");
  return {steps >= 5 && enc_frozen && dec_changed, os.str()};
}

}  // namespace

int main() {
  const fs::path scratch = scratch_dir();
  run(1, "CTC oracle equivalence", criterion1_ctc_oracle);
  run(2, "full-model gradient check", criterion2_grad_check);
  run(3, "WER oracle", criterion3_wer_oracle);
  run(4, "Noam schedule", criterion4_noam);
  run(5, "Adadelta first-step value", criterion5_adadelta);
  run(6, "checkpoint integrity", [&] { return criterion6_checkpoint(scratch); });
  run(7, "overfit sanity", [&] { return criterion7_overfit(scratch); });
  run(8, "gender-adaptation directional property",
      [&] { return criterion8_gender_adaptation(scratch); });
  run(9, "fusion contracts", [&] { return criterion9_fusion(scratch); });
  run(10, "freezing contract", [&] { return criterion10_freeze(scratch); });
  fs::remove_all(scratch);
  if (g_failures > 0) {
    std::printf("%d criterion(s) failed\n", g_failures);
    return 1;
  }
  std::printf("all criteria passed\n");
  return 0;
}
