#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "genadapt/autodiff.hpp"
#include "genadapt/ctc.hpp"
#include "genadapt/features.hpp"
#include "genadapt/xvector.hpp"

namespace genadapt::model {

using numerics::GradMap;
using numerics::ParamMap;
using numerics::Tape;
using numerics::Tensor;
using numerics::Var;

enum class FusionMode { none, sum, concat };

std::string fusion_name(FusionMode m);
FusionMode parse_fusion(const std::string& s);

struct ModelConfig {
  std::size_t d_model = 64;
  std::size_t n_heads = 4;
  std::size_t enc_layers = 2;
  std::size_t dec_layers = 2;
  std::size_t ff_dim = 128;
  std::size_t input_dim = 80;
  std::size_t vocab_size = 0;
  std::size_t xvector_dim = 512;
  FusionMode fusion = FusionMode::none;
  double lambda_ctc = 0.3;

  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

// parameter key -> shape; a pure function of the config
std::map<std::string, std::vector<std::size_t>> parameter_shapes(const ModelConfig& cfg);

// Xavier-uniform weights, zero biases, unit layer-norm gains. Each tensor is
// drawn from an RNG keyed by (seed, parameter name), so configs that share a
// key initialize it identically.
ParamMap init_params(const ModelConfig& cfg, std::uint64_t seed);

Tensor positional_encoding(std::size_t t_len, std::size_t d_model);

using VarMap = std::map<std::string, Var>;

struct TapedParams {
  VarMap vars;
  std::map<int, std::string> leaf_names;
};

TapedParams register_params(Tape& tape, const ParamMap& params, bool trainable);

struct AttnParams {
  Var wq, bq, wk, bk, wv, bv, wo, bo;
};

AttnParams attn_params(const VarMap& pv, const std::string& prefix);

// multi-head scaled dot-product attention; causal masks positions j > i
Var attention(Tape& tape, Var queries, Var keys_values, const AttnParams& p,
              std::size_t n_heads, bool causal);

Var encode(Tape& tape, const VarMap& pv, const ModelConfig& cfg,
           const features::FeatureMatrix& feats, const std::optional<XVector>& xvec);

Var fuse_xvector(Tape& tape, const VarMap& pv, const ModelConfig& cfg, Var enc,
                 const XVector& xvec);

// teacher-forced decoder logits for [sos, target]; rows predict the target
// shifted left with eos last
Var decode_train(Tape& tape, const VarMap& pv, const ModelConfig& cfg, Var enc,
                 const ctc::LabelSequence& target);

// encoder CTC head log-probabilities, T x V (inference path)
Tensor ctc_lattice(const ModelConfig& cfg, const ParamMap& params,
                   const features::FeatureMatrix& feats,
                   const std::optional<XVector>& xvec);

struct BatchItem {
  std::string id;
  features::FeatureMatrix feats;
  ctc::LabelSequence target;
  std::optional<XVector> xvec;
};

using Batch = std::vector<BatchItem>;

struct LossComponents {
  double total = 0.0;
  double ctc = 0.0;
  double att = 0.0;
};

// joint loss lambda*CTC + (1-lambda)*attention-CE, mean over the batch.
// Utterances are processed in parallel on separate tapes and combined in
// index order, so the result is identical to the serial path.
LossComponents forward_loss(const Batch& batch, const ModelConfig& cfg,
                            const ParamMap& params, GradMap* grads);

}  // namespace genadapt::model
