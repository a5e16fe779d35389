#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "genadapt/data.hpp"
#include "genadapt/model.hpp"
#include "genadapt/rng.hpp"

namespace genadapt::optim {

using model::GradMap;
using model::ParamMap;
using numerics::Tensor;

struct ScheduleConfig {
  enum class Kind { noam, constant } kind = Kind::noam;
  double factor = 5.0;
  std::size_t warmup_steps = 25000;
  std::size_t d_model = 64;
  double constant_lr = 0.0;

  void validate() const;
};

// lr = factor * d_model^(-1/2) * min(step^(-1/2), step * warmup^(-3/2))
double noam_lr(std::size_t step, const ScheduleConfig& cfg);

struct OptimState {
  enum class Kind { noam_adam, adam, adadelta };
  Kind kind = Kind::noam_adam;
  std::uint64_t step = 0;
  double lr = 0.1;          // constant-lr kinds
  ScheduleConfig schedule;  // noam_adam draws its lr from here
  double rho = 0.95;
  double eps_adadelta = 1e-6;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps_adam = 1e-9;
  // adam: first/second moments; adadelta: E[g^2], E[dx^2]
  std::map<std::string, Tensor> acc1, acc2;
};

std::string optim_kind_name(OptimState::Kind k);
OptimState::Kind parse_optim_kind(const std::string& s);

OptimState make_optim_state(OptimState::Kind kind, const ParamMap& params, double lr,
                            const ScheduleConfig& schedule);

// Advances step and updates every parameter. Elements whose gradient is
// exactly zero (frozen layers) leave the parameter untouched while the
// accumulators decay, so frozen keys stay bit-identical over any number of
// steps. Returns the learning rate used.
double optimizer_step(ParamMap& params, const GradMap& grads, OptimState& state);

// every pattern must prefix-match at least one parameter key
void validate_freeze_patterns(const ParamMap& params,
                              const std::vector<std::string>& patterns);
void apply_freeze(GradMap& grads, const std::vector<std::string>& patterns);

// scales gradients so the global L2 norm is at most max_norm; returns the
// pre-clip norm
double clip_global_norm(GradMap& grads, double max_norm);

struct Checkpoint {
  std::uint32_t version = 1;
  int epoch = 1;
  model::ModelConfig config;
  std::vector<std::string> vocab_symbols;
  ParamMap params;
  OptimState opt;
  std::string rng_state;
  std::string manifest_fingerprint;
};

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);
bool checkpoint_bit_equal(const Checkpoint& a, const Checkpoint& b);

struct FinetuneRecipe {
  int base_epoch = 100;
  OptimState::Kind optimizer = OptimState::Kind::adadelta;
  double lr = 0.1;             // Noam kind reads this as the schedule factor
  std::size_t warmup = 4000;   // consulted only by the Noam schedule
  int epochs = 20;
  std::vector<std::string> freeze_patterns;
};

// one utterance ready for training: normalized features + encoded target
struct PreparedUtt {
  std::string id;
  features::FeatureMatrix feats;
  ctc::LabelSequence target;
  std::optional<XVector> xvec;
  std::string ref_text;
  std::string speaker;
};

struct PrepareOptions {
  features::FeatureConfig feature_cfg;
  bool use_xvectors = false;
  data::XVectorStore xvec_store;
  std::filesystem::path cache_dir;  // empty -> extract without caching
};

std::vector<PreparedUtt> prepare_utterances(const data::Manifest& m,
                                            const std::filesystem::path& manifest_path,
                                            const data::Vocab& vocab,
                                            const PrepareOptions& opts);

struct OptimSpec {
  OptimState::Kind kind = OptimState::Kind::noam_adam;
  double lr = 0.1;
  ScheduleConfig schedule;
};

struct TrainOptions {
  int epochs = 0;
  std::size_t batch_size = 8;
  double clip_norm = 5.0;
  bool skip_infeasible = false;
  std::uint64_t seed = 42;
  std::filesystem::path checkpoint_dir;  // empty -> keep checkpoints in memory only
  std::vector<std::string> freeze_patterns;
};

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0;
  double dev_wer = 0.0;  // NaN when no dev set
  double lr_last = 0.0;
};

struct TrainResult {
  std::vector<EpochRecord> records;
  Checkpoint last;
};

struct TrainSetup {
  model::ModelConfig config;
  data::Vocab vocab;
  std::vector<PreparedUtt> train_set;
  std::vector<PreparedUtt> dev_set;
  std::string manifest_fingerprint;
};

// fresh model + optimizer, epochs 1..opts.epochs, one checkpoint per epoch
TrainResult train(const TrainSetup& setup, const OptimSpec& opt_spec,
                  const TrainOptions& opts);

// continue a run from a checkpoint through opts.epochs; with the same setup
// this reproduces the uninterrupted loss trace bit-exactly
TrainResult resume_train(const Checkpoint& ckpt, const TrainSetup& setup,
                         const TrainOptions& opts);

// parameters carried over, optimizer state replaced per the recipe, training
// continues on the (typically gender-filtered) subset
TrainResult finetune(const Checkpoint& base, const FinetuneRecipe& recipe,
                     const TrainSetup& subset_setup, const TrainOptions& opts);

// greedy-CTC hypotheses for a prepared set (decoding path used by dev scoring
// and cmd_eval)
std::vector<std::pair<std::string, std::string>> decode_set(
    const model::ModelConfig& cfg, const ParamMap& params, const data::Vocab& vocab,
    const std::vector<PreparedUtt>& set);

std::filesystem::path checkpoint_path(const std::filesystem::path& dir, int epoch);

void write_train_log(const std::filesystem::path& path,
                     const std::vector<EpochRecord>& records);

}  // namespace genadapt::optim
