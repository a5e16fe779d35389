#include "genadapt/optim.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iostream>
#include <limits>
#include <sstream>

#include <json.hpp>

#include "genadapt/errors.hpp"
#include "genadapt/eval.hpp"
#include "genadapt/kernels.hpp"
#include "genadapt/wav.hpp"

namespace genadapt::optim {

using nlohmann::json;

void ScheduleConfig::validate() const {
  if (factor <= 0.0) throw ValidationError("schedule: factor must be positive");
  if (warmup_steps < 1) throw ValidationError("schedule: warmup_steps must be >= 1");
  if (d_model == 0) throw ValidationError("schedule: d_model must be positive");
}

double noam_lr(std::size_t step, const ScheduleConfig& cfg) {
  cfg.validate();
  if (step < 1) throw ContractError("noam_lr: step must be >= 1");
  const double s = static_cast<double>(step);
  const double w = static_cast<double>(cfg.warmup_steps);
  return cfg.factor * std::pow(static_cast<double>(cfg.d_model), -0.5) *
         std::min(std::pow(s, -0.5), s * std::pow(w, -1.5));
}

std::string optim_kind_name(OptimState::Kind k) {
  switch (k) {
    case OptimState::Kind::noam_adam: return "noam";
    case OptimState::Kind::adam: return "adam";
    case OptimState::Kind::adadelta: return "adadelta";
  }
  return "?";
}

OptimState::Kind parse_optim_kind(const std::string& s) {
  if (s == "noam" || s == "noam_adam") return OptimState::Kind::noam_adam;
  if (s == "adam") return OptimState::Kind::adam;
  if (s == "adadelta") return OptimState::Kind::adadelta;
  throw ValidationError("optim: unknown optimizer '" + s + "'");
}

OptimState make_optim_state(OptimState::Kind kind, const ParamMap& params, double lr,
                            const ScheduleConfig& schedule) {
  OptimState st;
  st.kind = kind;
  st.lr = lr;
  st.schedule = schedule;
  for (const auto& [key, t] : params) {
    st.acc1.emplace(key, Tensor::zeros(t.shape()));
    st.acc2.emplace(key, Tensor::zeros(t.shape()));
  }
  return st;
}

namespace {

void check_keys_match(const ParamMap& params, const std::map<std::string, Tensor>& acc,
                      const char* what) {
  if (params.size() != acc.size())
    throw CheckpointError(std::string(what) + ": key count mismatch");
  auto pa = params.begin();
  auto ab = acc.begin();
  for (; pa != params.end(); ++pa, ++ab) {
    if (pa->first != ab->first || !pa->second.same_shape(ab->second))
      throw CheckpointError(std::string(what) + ": key set mismatch at '" + pa->first +
                            "' vs '" + ab->first + "'");
  }
}

}  // namespace

double optimizer_step(ParamMap& params, const GradMap& grads, OptimState& state) {
  check_keys_match(params, state.acc1, "optimizer");
  check_keys_match(params, state.acc2, "optimizer");
  if (grads.size() != params.size())
    throw CheckpointError("optimizer: gradient key set does not match parameters");
  state.step += 1;
  double lr = state.lr;
  if (state.kind == OptimState::Kind::noam_adam)
    lr = noam_lr(state.step, state.schedule);

  auto gp = grads.begin();
  for (auto& [key, p] : params) {
    if (gp == grads.end() || gp->first != key)
      throw CheckpointError("optimizer: gradient missing for '" + key + "'");
    const Tensor& g = gp->second;
    ++gp;
    Tensor& a1 = state.acc1.at(key);
    Tensor& a2 = state.acc2.at(key);
    if (state.kind == OptimState::Kind::adadelta) {
      for (std::size_t i = 0; i < p.size(); ++i) {
        const double gi = g[i];
        a1.data()[i] = state.rho * a1.data()[i] + (1.0 - state.rho) * gi * gi;
        if (gi == 0.0) {
          a2.data()[i] = state.rho * a2.data()[i];
          continue;
        }
        const double delta = -lr *
                             std::sqrt((a2[i] + state.eps_adadelta) /
                                       (a1[i] + state.eps_adadelta)) *
                             gi;
        a2.data()[i] = state.rho * a2.data()[i] + (1.0 - state.rho) * delta * delta;
        p.data()[i] += delta;
      }
    } else {
      const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
      const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
      for (std::size_t i = 0; i < p.size(); ++i) {
        const double gi = g[i];
        a1.data()[i] = state.beta1 * a1.data()[i] + (1.0 - state.beta1) * gi;
        a2.data()[i] = state.beta2 * a2.data()[i] + (1.0 - state.beta2) * gi * gi;
        if (gi == 0.0) continue;
        const double mhat = a1[i] / bc1;
        const double vhat = a2[i] / bc2;
        p.data()[i] -= lr * mhat / (std::sqrt(vhat) + state.eps_adam);
      }
    }
    p.check_finite("parameter '" + key + "' after optimizer step");
  }
  return lr;
}

void validate_freeze_patterns(const ParamMap& params,
                              const std::vector<std::string>& patterns) {
  for (const std::string& pat : patterns) {
    bool hit = false;
    for (const auto& [key, t] : params)
      if (key.starts_with(pat)) {
        hit = true;
        break;
      }
    if (!hit)
      throw ValidationError("freeze pattern '" + pat + "' matches no parameter key");
  }
}

void apply_freeze(GradMap& grads, const std::vector<std::string>& patterns) {
  if (patterns.empty()) return;
  for (auto& [key, g] : grads) {
    for (const std::string& pat : patterns) {
      if (key.starts_with(pat)) {
        std::fill(g.data(), g.data() + g.size(), 0.0);
        break;
      }
    }
  }
}

double clip_global_norm(GradMap& grads, double max_norm) {
  double sq = 0.0;
  for (const auto& [key, g] : grads)
    for (std::size_t i = 0; i < g.size(); ++i) sq += g[i] * g[i];
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const double scale = max_norm / norm;
    for (auto& [key, g] : grads)
      for (std::size_t i = 0; i < g.size(); ++i) g.data()[i] *= scale;
  }
  return norm;
}

// ---------------------------------------------------------------------------
// checkpoint serialization: magic "GACK", u32 version, length-prefixed
// sections (config JSON, parameter tensors, optimizer state, RNG state,
// manifest fingerprint); all integers and doubles little-endian
// ---------------------------------------------------------------------------

namespace {

void wr_bytes(std::ostream& os, const void* p, std::size_t n) {
  os.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
}

void wr_u32(std::ostream& os, std::uint32_t v) { wr_bytes(os, &v, 4); }
void wr_u64(std::ostream& os, std::uint64_t v) { wr_bytes(os, &v, 8); }
void wr_f64(std::ostream& os, double v) { wr_bytes(os, &v, 8); }

void wr_string(std::ostream& os, const std::string& s) {
  wr_u64(os, s.size());
  wr_bytes(os, s.data(), s.size());
}

void rd_bytes(std::istream& is, void* p, std::size_t n, const char* what) {
  is.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
  if (!is) throw CheckpointError(std::string("checkpoint: truncated while reading ") + what);
}

std::uint32_t rd_u32(std::istream& is, const char* what) {
  std::uint32_t v;
  rd_bytes(is, &v, 4, what);
  return v;
}

std::uint64_t rd_u64(std::istream& is, const char* what) {
  std::uint64_t v;
  rd_bytes(is, &v, 8, what);
  return v;
}

double rd_f64(std::istream& is, const char* what) {
  double v;
  rd_bytes(is, &v, 8, what);
  return v;
}

std::string rd_string(std::istream& is, const char* what) {
  const std::uint64_t n = rd_u64(is, what);
  if (n > (1ull << 32)) throw CheckpointError("checkpoint: absurd string length");
  std::string s(n, '\0');
  rd_bytes(is, s.data(), n, what);
  return s;
}

void wr_tensor_map(std::ostream& os, const std::map<std::string, Tensor>& m) {
  wr_u64(os, m.size());
  for (const auto& [key, t] : m) {
    wr_string(os, key);
    wr_u32(os, static_cast<std::uint32_t>(t.shape().size()));
    for (std::size_t e : t.shape()) wr_u64(os, e);
    wr_bytes(os, t.data(), t.size() * sizeof(double));
  }
}

std::map<std::string, Tensor> rd_tensor_map(std::istream& is, const char* what) {
  std::map<std::string, Tensor> m;
  const std::uint64_t count = rd_u64(is, what);
  for (std::uint64_t i = 0; i < count; ++i) {
    const std::string key = rd_string(is, what);
    const std::uint32_t rank = rd_u32(is, what);
    if (rank > 8) throw CheckpointError("checkpoint: absurd tensor rank");
    std::vector<std::size_t> shape(rank);
    std::size_t n = 1;
    for (std::uint32_t r = 0; r < rank; ++r) {
      shape[r] = rd_u64(is, what);
      n *= shape[r];
    }
    std::vector<double> vals(n);
    rd_bytes(is, vals.data(), n * sizeof(double), what);
    Tensor t(std::move(shape), std::move(vals));
    t.set_requires_grad(true);
    if (!m.emplace(key, std::move(t)).second)
      throw CheckpointError("checkpoint: duplicate tensor key '" + key + "'");
  }
  return m;
}

json config_to_json(const model::ModelConfig& c, const std::vector<std::string>& vocab) {
  return json{{"model",
               {{"d_model", c.d_model},
                {"n_heads", c.n_heads},
                {"enc_layers", c.enc_layers},
                {"dec_layers", c.dec_layers},
                {"ff_dim", c.ff_dim},
                {"input_dim", c.input_dim},
                {"vocab_size", c.vocab_size},
                {"xvector_dim", c.xvector_dim},
                {"fusion", model::fusion_name(c.fusion)},
                {"lambda_ctc", c.lambda_ctc}}},
              {"vocab", vocab}};
}

void config_from_json(const json& j, model::ModelConfig& c,
                      std::vector<std::string>& vocab) {
  const json& m = j.at("model");
  c.d_model = m.at("d_model").get<std::size_t>();
  c.n_heads = m.at("n_heads").get<std::size_t>();
  c.enc_layers = m.at("enc_layers").get<std::size_t>();
  c.dec_layers = m.at("dec_layers").get<std::size_t>();
  c.ff_dim = m.at("ff_dim").get<std::size_t>();
  c.input_dim = m.at("input_dim").get<std::size_t>();
  c.vocab_size = m.at("vocab_size").get<std::size_t>();
  c.xvector_dim = m.at("xvector_dim").get<std::size_t>();
  c.fusion = model::parse_fusion(m.at("fusion").get<std::string>());
  c.lambda_ctc = m.at("lambda_ctc").get<double>();
  vocab = j.at("vocab").get<std::vector<std::string>>();
}

constexpr std::uint32_t kCheckpointVersion = 1;

}  // namespace

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  if (ckpt.epoch < 1) throw ContractError("checkpoint: epoch must be >= 1");
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("checkpoint: cannot write " + path.string());
  os.write("GACK", 4);
  wr_u32(os, kCheckpointVersion);
  wr_u64(os, static_cast<std::uint64_t>(ckpt.epoch));
  wr_string(os, config_to_json(ckpt.config, ckpt.vocab_symbols).dump());
  wr_tensor_map(os, ckpt.params);
  wr_u32(os, static_cast<std::uint32_t>(ckpt.opt.kind));
  wr_u64(os, ckpt.opt.step);
  wr_f64(os, ckpt.opt.lr);
  wr_u32(os, static_cast<std::uint32_t>(ckpt.opt.schedule.kind));
  wr_f64(os, ckpt.opt.schedule.factor);
  wr_u64(os, ckpt.opt.schedule.warmup_steps);
  wr_u64(os, ckpt.opt.schedule.d_model);
  wr_f64(os, ckpt.opt.schedule.constant_lr);
  wr_f64(os, ckpt.opt.rho);
  wr_f64(os, ckpt.opt.eps_adadelta);
  wr_f64(os, ckpt.opt.beta1);
  wr_f64(os, ckpt.opt.beta2);
  wr_f64(os, ckpt.opt.eps_adam);
  wr_tensor_map(os, ckpt.opt.acc1);
  wr_tensor_map(os, ckpt.opt.acc2);
  wr_string(os, ckpt.rng_state);
  wr_string(os, ckpt.manifest_fingerprint);
  if (!os) throw IoError("checkpoint: short write to " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("checkpoint: cannot open " + path.string());
  char magic[4];
  rd_bytes(is, magic, 4, "magic");
  if (std::memcmp(magic, "GACK", 4) != 0)
    throw CheckpointError("checkpoint: bad magic in " + path.string());
  Checkpoint c;
  c.version = rd_u32(is, "version");
  if (c.version != kCheckpointVersion)
    throw CheckpointError("checkpoint: unsupported version " + std::to_string(c.version));
  c.epoch = static_cast<int>(rd_u64(is, "epoch"));
  if (c.epoch < 1) throw CheckpointError("checkpoint: epoch < 1");
  json cfg_json;
  try {
    cfg_json = json::parse(rd_string(is, "config"));
    config_from_json(cfg_json, c.config, c.vocab_symbols);
  } catch (const json::exception& e) {
    throw CheckpointError(std::string("checkpoint: malformed config section: ") + e.what());
  }
  c.params = rd_tensor_map(is, "params");
  c.opt.kind = static_cast<OptimState::Kind>(rd_u32(is, "opt kind"));
  c.opt.step = rd_u64(is, "opt step");
  c.opt.lr = rd_f64(is, "opt lr");
  c.opt.schedule.kind = static_cast<ScheduleConfig::Kind>(rd_u32(is, "schedule kind"));
  c.opt.schedule.factor = rd_f64(is, "schedule factor");
  c.opt.schedule.warmup_steps = rd_u64(is, "schedule warmup");
  c.opt.schedule.d_model = rd_u64(is, "schedule d_model");
  c.opt.schedule.constant_lr = rd_f64(is, "schedule lr");
  c.opt.rho = rd_f64(is, "rho");
  c.opt.eps_adadelta = rd_f64(is, "eps_adadelta");
  c.opt.beta1 = rd_f64(is, "beta1");
  c.opt.beta2 = rd_f64(is, "beta2");
  c.opt.eps_adam = rd_f64(is, "eps_adam");
  c.opt.acc1 = rd_tensor_map(is, "acc1");
  c.opt.acc2 = rd_tensor_map(is, "acc2");
  c.rng_state = rd_string(is, "rng state");
  c.manifest_fingerprint = rd_string(is, "fingerprint");

  // structural validation: params must be exactly the key set the config implies
  const auto expected = model::parameter_shapes(c.config);
  if (expected.size() != c.params.size())
    throw CheckpointError("checkpoint: parameter count does not match config");
  for (const auto& [key, shape] : expected) {
    auto it = c.params.find(key);
    if (it == c.params.end() || it->second.shape() != shape)
      throw CheckpointError("checkpoint: parameter '" + key +
                            "' missing or mis-shaped for config");
  }
  check_keys_match(c.params, c.opt.acc1, "checkpoint accumulators");
  check_keys_match(c.params, c.opt.acc2, "checkpoint accumulators");
  if (c.vocab_symbols.size() != c.config.vocab_size)
    throw CheckpointError("checkpoint: vocab table size does not match vocab_size");
  return c;
}

bool checkpoint_bit_equal(const Checkpoint& a, const Checkpoint& b) {
  auto maps_equal = [](const std::map<std::string, Tensor>& x,
                       const std::map<std::string, Tensor>& y) {
    if (x.size() != y.size()) return false;
    auto ix = x.begin();
    auto iy = y.begin();
    for (; ix != x.end(); ++ix, ++iy)
      if (ix->first != iy->first || !ix->second.bit_equal(iy->second)) return false;
    return true;
  };
  return a.version == b.version && a.epoch == b.epoch && a.config == b.config &&
         a.vocab_symbols == b.vocab_symbols && maps_equal(a.params, b.params) &&
         a.opt.kind == b.opt.kind && a.opt.step == b.opt.step && a.opt.lr == b.opt.lr &&
         a.opt.schedule.kind == b.opt.schedule.kind &&
         a.opt.schedule.factor == b.opt.schedule.factor &&
         a.opt.schedule.warmup_steps == b.opt.schedule.warmup_steps &&
         a.opt.schedule.d_model == b.opt.schedule.d_model &&
         a.opt.schedule.constant_lr == b.opt.schedule.constant_lr &&
         maps_equal(a.opt.acc1, b.opt.acc1) && maps_equal(a.opt.acc2, b.opt.acc2) &&
         a.rng_state == b.rng_state && a.manifest_fingerprint == b.manifest_fingerprint;
}

// ---------------------------------------------------------------------------
// data preparation and the training loop
// ---------------------------------------------------------------------------

std::vector<PreparedUtt> prepare_utterances(const data::Manifest& m,
                                            const std::filesystem::path& manifest_path,
                                            const data::Vocab& vocab,
                                            const PrepareOptions& opts) {
  std::vector<PreparedUtt> out(m.utts.size());
  if (!opts.cache_dir.empty()) std::filesystem::create_directories(opts.cache_dir);
  kernels::parallel_for(m.utts.size(), [&](std::size_t i) {
    const data::Utterance& u = m.utts[i];
    PreparedUtt p;
    p.id = u.id;
    p.ref_text = u.text;
    p.speaker = u.speaker;
    p.target = vocab.encode(u.text);
    const std::filesystem::path cache =
        opts.cache_dir.empty() ? std::filesystem::path()
                               : opts.cache_dir / (u.id + ".gafm");
    if (!cache.empty() && std::filesystem::exists(cache)) {
      p.feats = features::read_feature_file(cache);
    } else {
      const features::Waveform w = features::read_wav(data::resolve_audio(manifest_path, u));
      p.feats = features::cmvn(features::log_mel_fbank(w, opts.feature_cfg));
      if (!cache.empty()) features::write_feature_file(cache, p.feats);
    }
    if (opts.use_xvectors) p.xvec = data::lookup_xvector(u.speaker, opts.xvec_store);
    out[i] = std::move(p);
  });
  return out;
}

namespace {

std::vector<std::vector<std::size_t>> make_batches(const std::vector<PreparedUtt>& set,
                                                   std::size_t batch_size) {
  std::vector<std::size_t> idx(set.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    if (set[a].feats.frames != set[b].feats.frames)
      return set[a].feats.frames < set[b].feats.frames;
    return set[a].id < set[b].id;
  });
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t i = 0; i < idx.size(); i += batch_size) {
    batches.emplace_back(idx.begin() + static_cast<std::ptrdiff_t>(i),
                         idx.begin() + static_cast<std::ptrdiff_t>(
                                           std::min(i + batch_size, idx.size())));
  }
  return batches;
}

double dev_wer_of(const model::ModelConfig& cfg, const ParamMap& params,
                  const data::Vocab& vocab, const std::vector<PreparedUtt>& dev) {
  if (dev.empty()) return std::numeric_limits<double>::quiet_NaN();
  const auto hyps = decode_set(cfg, params, vocab, dev);
  std::vector<eval::ScoredPair> pairs(dev.size());
  for (std::size_t i = 0; i < dev.size(); ++i)
    pairs[i] = {dev[i].id, dev[i].ref_text, hyps[i].second};
  return eval::wer(pairs).first;
}

std::vector<PreparedUtt> filter_feasible(const std::vector<PreparedUtt>& set,
                                         bool skip_infeasible) {
  std::vector<PreparedUtt> out;
  out.reserve(set.size());
  for (const PreparedUtt& p : set) {
    if (ctc::min_input_frames(p.target) <= p.feats.frames) {
      out.push_back(p);
    } else if (skip_infeasible) {
      std::cerr << "train: skipping utterance '" << p.id
                << "' (target needs more frames than the audio provides)\n";
    } else {
      throw InfeasibleAlignmentError("utterance '" + p.id +
                                     "' cannot be aligned: target needs " +
                                     std::to_string(ctc::min_input_frames(p.target)) +
                                     " frames, audio has " +
                                     std::to_string(p.feats.frames));
    }
  }
  return out;
}

TrainResult run_epochs(const TrainSetup& setup, const TrainOptions& opts,
                       ParamMap params, OptimState state, Rng rng, int first_epoch) {
  if (opts.epochs < 1) throw ContractError("train: epochs must be >= 1");
  if (first_epoch > opts.epochs)
    throw ContractError("train: checkpoint already at or past the target epoch");
  const std::vector<PreparedUtt> train_set =
      filter_feasible(setup.train_set, opts.skip_infeasible);
  if (train_set.empty()) throw ValidationError("train: no usable training utterances");
  validate_freeze_patterns(params, opts.freeze_patterns);
  if (!opts.checkpoint_dir.empty())
    std::filesystem::create_directories(opts.checkpoint_dir);

  const auto batches = make_batches(train_set, opts.batch_size);
  TrainResult result;
  double lr_last = 0.0;
  for (int epoch = first_epoch; epoch <= opts.epochs; ++epoch) {
    std::vector<std::size_t> order(batches.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    rng.shuffle(order);
    double loss_sum = 0.0;
    for (std::size_t b : order) {
      model::Batch batch;
      batch.reserve(batches[b].size());
      for (std::size_t i : batches[b]) {
        const PreparedUtt& p = train_set[i];
        batch.push_back({p.id, p.feats, p.target, p.xvec});
      }
      GradMap grads;
      const model::LossComponents loss =
          model::forward_loss(batch, setup.config, params, &grads);
      apply_freeze(grads, opts.freeze_patterns);
      clip_global_norm(grads, opts.clip_norm);
      lr_last = optimizer_step(params, grads, state);
      loss_sum += loss.total * static_cast<double>(batch.size());
    }
    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = loss_sum / static_cast<double>(train_set.size());
    rec.dev_wer = dev_wer_of(setup.config, params, setup.vocab, setup.dev_set);
    rec.lr_last = lr_last;
    result.records.push_back(rec);

    Checkpoint ckpt;
    ckpt.epoch = epoch;
    ckpt.config = setup.config;
    ckpt.vocab_symbols = setup.vocab.symbols();
    ckpt.params = params;
    ckpt.opt = state;
    ckpt.rng_state = rng.serialize();
    ckpt.manifest_fingerprint = setup.manifest_fingerprint;
    if (!opts.checkpoint_dir.empty())
      save_checkpoint(ckpt, checkpoint_path(opts.checkpoint_dir, epoch));
    result.last = std::move(ckpt);
  }
  return result;
}

void check_setup_matches(const Checkpoint& ckpt, const TrainSetup& setup) {
  if (!(ckpt.config == setup.config))
    throw CheckpointError("checkpoint config does not match the current model config");
  if (ckpt.vocab_symbols != setup.vocab.symbols())
    throw CheckpointError("checkpoint vocabulary does not match the current vocabulary");
}

}  // namespace

TrainResult train(const TrainSetup& setup, const OptimSpec& opt_spec,
                  const TrainOptions& opts) {
  setup.config.validate();
  ParamMap params = model::init_params(setup.config, opts.seed);
  ScheduleConfig schedule = opt_spec.schedule;
  schedule.d_model = setup.config.d_model;
  OptimState state = make_optim_state(opt_spec.kind, params, opt_spec.lr, schedule);
  Rng rng(mix_seed(opts.seed, "train-loop"));
  return run_epochs(setup, opts, std::move(params), std::move(state), std::move(rng), 1);
}

TrainResult resume_train(const Checkpoint& ckpt, const TrainSetup& setup,
                         const TrainOptions& opts) {
  check_setup_matches(ckpt, setup);
  Rng rng(0);
  rng.deserialize(ckpt.rng_state);
  return run_epochs(setup, opts, ckpt.params, ckpt.opt, std::move(rng), ckpt.epoch + 1);
}

TrainResult finetune(const Checkpoint& base, const FinetuneRecipe& recipe,
                     const TrainSetup& subset_setup, const TrainOptions& opts) {
  check_setup_matches(base, subset_setup);
  if (recipe.epochs < 1) throw ValidationError("finetune: recipe epochs must be >= 1");
  if (subset_setup.train_set.empty())
    throw ValidationError("finetune: subset is empty after filtering");
  validate_freeze_patterns(base.params, recipe.freeze_patterns);

  ScheduleConfig schedule;
  if (recipe.optimizer == OptimState::Kind::noam_adam) {
    schedule.kind = ScheduleConfig::Kind::noam;
    schedule.factor = recipe.lr;  // Noam reads the recipe lr as its factor
    schedule.warmup_steps = recipe.warmup;
  } else {
    schedule.kind = ScheduleConfig::Kind::constant;
    schedule.constant_lr = recipe.lr;
    schedule.warmup_steps = recipe.warmup;  // recorded, not consulted
  }
  schedule.d_model = subset_setup.config.d_model;
  // fresh accumulators and step counter; only the parameters carry over
  OptimState state =
      make_optim_state(recipe.optimizer, base.params, recipe.lr, schedule);

  TrainOptions run_opts = opts;
  run_opts.epochs = recipe.epochs;
  run_opts.freeze_patterns = recipe.freeze_patterns;
  Rng rng(mix_seed(opts.seed, "finetune-loop"));
  return run_epochs(subset_setup, run_opts, base.params, std::move(state), std::move(rng), 1);
}

std::vector<std::pair<std::string, std::string>> decode_set(
    const model::ModelConfig& cfg, const ParamMap& params, const data::Vocab& vocab,
    const std::vector<PreparedUtt>& set) {
  std::vector<std::pair<std::string, std::string>> out(set.size());
  kernels::parallel_for(set.size(), [&](std::size_t i) {
    const Tensor lattice = model::ctc_lattice(cfg, params, set[i].feats, set[i].xvec);
    out[i] = {set[i].id, vocab.decode(ctc::greedy_decode(lattice))};
  });
  return out;
}

std::filesystem::path checkpoint_path(const std::filesystem::path& dir, int epoch) {
  char name[32];
  std::snprintf(name, sizeof(name), "epoch_%03d.ckpt", epoch);
  return dir / name;
}

void write_train_log(const std::filesystem::path& path,
                     const std::vector<EpochRecord>& records) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("train log: cannot write " + path.string());
  for (const EpochRecord& r : records) {
    json j{{"epoch", r.epoch}, {"train_loss", r.train_loss}, {"lr_last", r.lr_last}};
    if (std::isnan(r.dev_wer))
      j["dev_wer"] = nullptr;
    else
      j["dev_wer"] = r.dev_wer;
    out << j.dump() << "\n";
  }
}

}  // namespace genadapt::optim
