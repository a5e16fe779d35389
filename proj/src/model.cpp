#include "genadapt/model.hpp"

#include <cmath>

#include "genadapt/errors.hpp"
#include "genadapt/kernels.hpp"
#include "genadapt/rng.hpp"

namespace genadapt::model {

std::string fusion_name(FusionMode m) {
  switch (m) {
    case FusionMode::none: return "none";
    case FusionMode::sum: return "sum";
    case FusionMode::concat: return "concat";
  }
  return "?";
}

FusionMode parse_fusion(const std::string& s) {
  if (s == "none") return FusionMode::none;
  if (s == "sum") return FusionMode::sum;
  if (s == "concat") return FusionMode::concat;
  throw ValidationError("model: unknown fusion mode '" + s + "'");
}

void ModelConfig::validate() const {
  if (d_model == 0 || d_model % 2 != 0)
    throw ValidationError("model: d_model must be positive and even");
  if (n_heads == 0 || d_model % n_heads != 0)
    throw ValidationError("model: d_model must be divisible by n_heads");
  if (vocab_size < 2) throw ValidationError("model: vocab_size must be >= 2");
  if (!(lambda_ctc >= 0.0 && lambda_ctc <= 1.0))
    throw ValidationError("model: lambda_ctc must be in [0,1]");
  if (enc_layers == 0 || dec_layers == 0)
    throw ValidationError("model: need at least one encoder and decoder layer");
  if (ff_dim == 0 || input_dim == 0 || xvector_dim == 0)
    throw ValidationError("model: zero extent in config");
}

namespace {

void add_attn_shapes(std::map<std::string, std::vector<std::size_t>>& s,
                     const std::string& prefix, std::size_t d) {
  for (const char* m : {"wq", "wk", "wv", "wo"}) s[prefix + m] = {d, d};
  for (const char* b : {"bq", "bk", "bv", "bo"}) s[prefix + b] = {d};
}

void add_norm_shapes(std::map<std::string, std::vector<std::size_t>>& s,
                     const std::string& prefix, std::size_t d) {
  s[prefix + "gain"] = {d};
  s[prefix + "bias"] = {d};
}

void add_ff_shapes(std::map<std::string, std::vector<std::size_t>>& s,
                   const std::string& prefix, std::size_t d, std::size_t ff) {
  s[prefix + "w1"] = {d, ff};
  s[prefix + "b1"] = {ff};
  s[prefix + "w2"] = {ff, d};
  s[prefix + "b2"] = {d};
}

}  // namespace

std::map<std::string, std::vector<std::size_t>> parameter_shapes(const ModelConfig& cfg) {
  cfg.validate();
  std::map<std::string, std::vector<std::size_t>> s;
  const std::size_t d = cfg.d_model;
  s["in_proj.w"] = {cfg.input_dim, d};
  s["in_proj.b"] = {d};
  for (std::size_t i = 0; i < cfg.enc_layers; ++i) {
    const std::string p = "enc." + std::to_string(i) + ".";
    add_attn_shapes(s, p + "attn.", d);
    add_norm_shapes(s, p + "norm1.", d);
    add_norm_shapes(s, p + "norm2.", d);
    add_ff_shapes(s, p + "ff.", d, cfg.ff_dim);
  }
  if (cfg.fusion != FusionMode::none) {
    s["fusion.proj.w"] = {cfg.xvector_dim, d};
    s["fusion.proj.b"] = {d};
    if (cfg.fusion == FusionMode::concat) {
      s["fusion.out.w"] = {2 * d, d};
      s["fusion.out.b"] = {d};
    }
  }
  s["ctc_head.w"] = {d, cfg.vocab_size};
  s["ctc_head.b"] = {cfg.vocab_size};
  s["dec.embed"] = {cfg.vocab_size, d};
  for (std::size_t i = 0; i < cfg.dec_layers; ++i) {
    const std::string p = "dec." + std::to_string(i) + ".";
    add_attn_shapes(s, p + "self_attn.", d);
    add_attn_shapes(s, p + "cross_attn.", d);
    add_norm_shapes(s, p + "norm1.", d);
    add_norm_shapes(s, p + "norm2.", d);
    add_norm_shapes(s, p + "norm3.", d);
    add_ff_shapes(s, p + "ff.", d, cfg.ff_dim);
  }
  s["dec.out.w"] = {d, cfg.vocab_size};
  s["dec.out.b"] = {cfg.vocab_size};
  return s;
}

ParamMap init_params(const ModelConfig& cfg, std::uint64_t seed) {
  ParamMap params;
  for (const auto& [key, shape] : parameter_shapes(cfg)) {
    Tensor t;
    if (key.ends_with("gain")) {
      t = Tensor::filled(shape, 1.0);
    } else if (shape.size() == 1) {
      t = Tensor::zeros(shape);  // every rank-1 parameter is a bias
    } else {
      Rng rng(mix_seed(seed, "param:" + key));
      const double fan_in = static_cast<double>(shape[0]);
      const double fan_out = static_cast<double>(shape[1]);
      const double limit = std::sqrt(6.0 / (fan_in + fan_out));
      t = Tensor::from_fn(shape, [&](std::size_t) { return rng.uniform(-limit, limit); });
    }
    t.set_requires_grad(true);
    params.emplace(key, std::move(t));
  }
  return params;
}

Tensor positional_encoding(std::size_t t_len, std::size_t d_model) {
  if (t_len < 1) throw ContractError("positional_encoding: need T >= 1");
  if (d_model % 2 != 0)
    throw ContractError("positional_encoding: d_model must be even");
  Tensor pe({t_len, d_model});
  for (std::size_t t = 0; t < t_len; ++t) {
    for (std::size_t i = 0; i < d_model / 2; ++i) {
      const double angle =
          static_cast<double>(t) /
          std::pow(10000.0, 2.0 * static_cast<double>(i) / static_cast<double>(d_model));
      pe.data()[t * d_model + 2 * i] = std::sin(angle);
      pe.data()[t * d_model + 2 * i + 1] = std::cos(angle);
    }
  }
  return pe;
}

TapedParams register_params(Tape& tape, const ParamMap& params, bool trainable) {
  TapedParams tp;
  for (const auto& [key, tensor] : params) {
    Tensor copy = tensor;
    copy.set_requires_grad(trainable);
    Var v = tape.leaf(std::move(copy));
    tp.vars.emplace(key, v);
    tp.leaf_names.emplace(v.id, key);
  }
  return tp;
}

namespace {

Var pvar(const VarMap& pv, const std::string& key) {
  auto it = pv.find(key);
  if (it == pv.end()) throw ContractError("model: missing parameter '" + key + "'");
  return it->second;
}

Var linear(Tape& t, Var x, Var w, Var b) { return t.add(t.matmul(x, w), b); }

constexpr double kLnEps = 1e-5;
constexpr double kMaskFill = -1e30;

}  // namespace

AttnParams attn_params(const VarMap& pv, const std::string& prefix) {
  return AttnParams{pvar(pv, prefix + "wq"), pvar(pv, prefix + "bq"),
                    pvar(pv, prefix + "wk"), pvar(pv, prefix + "bk"),
                    pvar(pv, prefix + "wv"), pvar(pv, prefix + "bv"),
                    pvar(pv, prefix + "wo"), pvar(pv, prefix + "bo")};
}

Var attention(Tape& tape, Var queries, Var keys_values, const AttnParams& p,
              std::size_t n_heads, bool causal) {
  const std::size_t d = tape.value(p.wq).cols();
  if (d % n_heads != 0) throw ContractError("attention: d_model not divisible by heads");
  const std::size_t dh = d / n_heads;
  Var q = linear(tape, queries, p.wq, p.bq);
  Var k = linear(tape, keys_values, p.wk, p.bk);
  Var v = linear(tape, keys_values, p.wv, p.bv);
  const std::size_t tq = tape.value(q).rows();
  const std::size_t tk = tape.value(k).rows();
  if (causal && tq != tk)
    throw ContractError("attention: causal mask needs square score matrix");

  std::vector<std::uint8_t> mask;
  if (causal) {
    mask.resize(tq * tk, 0);
    for (std::size_t i = 0; i < tq; ++i)
      for (std::size_t j = i + 1; j < tk; ++j) mask[i * tk + j] = 1;
  }

  Var ctx;
  for (std::size_t h = 0; h < n_heads; ++h) {
    Var qh = tape.slice_cols(q, h * dh, (h + 1) * dh);
    Var kh = tape.slice_cols(k, h * dh, (h + 1) * dh);
    Var vh = tape.slice_cols(v, h * dh, (h + 1) * dh);
    Var scores = tape.scale(tape.matmul(qh, tape.transpose(kh)),
                            1.0 / std::sqrt(static_cast<double>(dh)));
    if (causal) scores = tape.masked_fill(scores, mask, kMaskFill);
    Var ctx_h = tape.matmul(tape.softmax(scores), vh);
    ctx = h == 0 ? ctx_h : tape.concat_cols(ctx, ctx_h);
  }
  return linear(tape, ctx, p.wo, p.bo);
}

namespace {

Var feed_forward(Tape& tape, const VarMap& pv, const std::string& prefix, Var x) {
  Var h = tape.relu(linear(tape, x, pvar(pv, prefix + "w1"), pvar(pv, prefix + "b1")));
  return linear(tape, h, pvar(pv, prefix + "w2"), pvar(pv, prefix + "b2"));
}

Var add_and_norm(Tape& tape, const VarMap& pv, const std::string& prefix, Var x, Var sub) {
  return tape.layer_norm(tape.add(x, sub), pvar(pv, prefix + "gain"),
                         pvar(pv, prefix + "bias"), kLnEps);
}

}  // namespace

Var encode(Tape& tape, const VarMap& pv, const ModelConfig& cfg,
           const features::FeatureMatrix& feats, const std::optional<XVector>& xvec) {
  if (feats.dim != cfg.input_dim)
    throw ValidationError("encode: feature dim " + std::to_string(feats.dim) +
                          " does not match config input dim " +
                          std::to_string(cfg.input_dim));
  if (xvec && cfg.fusion == FusionMode::none)
    throw ContractError("encode: x-vector supplied but fusion_mode is none");
  Tensor x({feats.frames, feats.dim}, feats.data);
  Var h = tape.constant(std::move(x));
  h = linear(tape, h, pvar(pv, "in_proj.w"), pvar(pv, "in_proj.b"));
  h = tape.add(h, tape.constant(positional_encoding(feats.frames, cfg.d_model)));
  for (std::size_t i = 0; i < cfg.enc_layers; ++i) {
    const std::string p = "enc." + std::to_string(i) + ".";
    Var a = attention(tape, h, h, attn_params(pv, p + "attn."), cfg.n_heads, false);
    Var h1 = add_and_norm(tape, pv, p + "norm1.", h, a);
    Var f = feed_forward(tape, pv, p + "ff.", h1);
    h = add_and_norm(tape, pv, p + "norm2.", h1, f);
  }
  if (xvec) h = fuse_xvector(tape, pv, cfg, h, *xvec);
  return h;
}

Var fuse_xvector(Tape& tape, const VarMap& pv, const ModelConfig& cfg, Var enc,
                 const XVector& xvec) {
  if (cfg.fusion == FusionMode::none)
    throw ContractError("fuse_xvector: fusion_mode is none");
  if (xvec.values.size() != cfg.xvector_dim)
    throw FormatError("fuse_xvector: x-vector has " + std::to_string(xvec.values.size()) +
                      " values, config expects " + std::to_string(cfg.xvector_dim));
  Var xv = tape.constant(Tensor({1, cfg.xvector_dim}, xvec.values));
  Var proj = linear(tape, xv, pvar(pv, "fusion.proj.w"), pvar(pv, "fusion.proj.b"));
  if (cfg.fusion == FusionMode::sum) return tape.add(enc, proj);  // row-broadcast
  // concat: tile the projected vector to every frame, then project back to d
  const std::size_t t_len = tape.value(enc).rows();
  Var ones = tape.constant(Tensor::filled({t_len, 1}, 1.0));
  Var tiled = tape.matmul(ones, proj);
  Var cat = tape.concat_cols(enc, tiled);
  return linear(tape, cat, pvar(pv, "fusion.out.w"), pvar(pv, "fusion.out.b"));
}

Var decode_train(Tape& tape, const VarMap& pv, const ModelConfig& cfg, Var enc,
                 const ctc::LabelSequence& target) {
  if (tape.value(enc).size() == 0 || tape.value(enc).rows() == 0)
    throw ContractError("decode_train: empty encoder output");
  std::vector<int> tokens{1};  // sos
  tokens.insert(tokens.end(), target.ids.begin(), target.ids.end());
  Var h = tape.embedding(pvar(pv, "dec.embed"), tokens);
  h = tape.add(h, tape.constant(positional_encoding(tokens.size(), cfg.d_model)));
  for (std::size_t i = 0; i < cfg.dec_layers; ++i) {
    const std::string p = "dec." + std::to_string(i) + ".";
    Var a = attention(tape, h, h, attn_params(pv, p + "self_attn."), cfg.n_heads, true);
    Var h1 = add_and_norm(tape, pv, p + "norm1.", h, a);
    Var c = attention(tape, h1, enc, attn_params(pv, p + "cross_attn."), cfg.n_heads, false);
    Var h2 = add_and_norm(tape, pv, p + "norm2.", h1, c);
    Var f = feed_forward(tape, pv, p + "ff.", h2);
    h = add_and_norm(tape, pv, p + "norm3.", h2, f);
  }
  return linear(tape, h, pvar(pv, "dec.out.w"), pvar(pv, "dec.out.b"));
}

Tensor ctc_lattice(const ModelConfig& cfg, const ParamMap& params,
                   const features::FeatureMatrix& feats,
                   const std::optional<XVector>& xvec) {
  Tape tape;
  TapedParams tp = register_params(tape, params, false);
  Var enc = encode(tape, tp.vars, cfg, feats, xvec);
  Var logits = linear(tape, enc, pvar(tp.vars, "ctc_head.w"), pvar(tp.vars, "ctc_head.b"));
  Var lattice = tape.log(tape.softmax(logits));
  return tape.value(lattice);
}

namespace {

struct UttResult {
  double total = 0.0, ctc = 0.0, att = 0.0;
  GradMap grads;
};

UttResult utterance_loss(const BatchItem& item, const ModelConfig& cfg,
                         const ParamMap& params, bool want_grads) {
  Tape tape;
  TapedParams tp = register_params(tape, params, want_grads);
  Var enc = encode(tape, tp.vars, cfg, item.feats, item.xvec);

  Var ctc_logits =
      linear(tape, enc, pvar(tp.vars, "ctc_head.w"), pvar(tp.vars, "ctc_head.b"));
  Var lattice = tape.log(tape.softmax(ctc_logits));
  Var l_ctc;
  try {
    l_ctc = ctc::ctc_loss_op(tape, lattice, item.target);
  } catch (const InfeasibleAlignmentError& e) {
    throw InfeasibleAlignmentError("utterance '" + item.id + "': " + e.what());
  }

  Var logits = decode_train(tape, tp.vars, cfg, enc, item.target);
  const std::size_t rows = item.target.ids.size() + 1;
  Tensor onehot({rows, cfg.vocab_size});
  for (std::size_t r = 0; r < rows; ++r) {
    const int tgt = r < item.target.ids.size() ? item.target.ids[r] : 1;  // eos last
    onehot.data()[r * cfg.vocab_size + static_cast<std::size_t>(tgt)] = 1.0;
  }
  Var logsm = tape.log(tape.softmax(logits));
  Var l_att = tape.scale(tape.sum(tape.mul(tape.constant(std::move(onehot)), logsm)),
                         -1.0 / static_cast<double>(rows));

  Var total = tape.add(tape.scale(l_ctc, cfg.lambda_ctc),
                       tape.scale(l_att, 1.0 - cfg.lambda_ctc));
  UttResult res;
  res.total = tape.value(total).scalar_value();
  res.ctc = tape.value(l_ctc).scalar_value();
  res.att = tape.value(l_att).scalar_value();
  if (want_grads) {
    std::map<int, Tensor> leaf_grads = tape.backward(total);
    for (auto& [id, g] : leaf_grads) res.grads.emplace(tp.leaf_names.at(id), std::move(g));
  }
  return res;
}

}  // namespace

LossComponents forward_loss(const Batch& batch, const ModelConfig& cfg,
                            const ParamMap& params, GradMap* grads) {
  if (batch.empty()) throw ContractError("forward_loss: empty batch");
  cfg.validate();
  std::vector<UttResult> results(batch.size());
  kernels::parallel_for(batch.size(), [&](std::size_t i) {
    results[i] = utterance_loss(batch[i], cfg, params, grads != nullptr);
  });
  LossComponents out;
  const double inv = 1.0 / static_cast<double>(batch.size());
  if (grads) {
    grads->clear();
    for (const auto& [key, t] : params)
      grads->emplace(key, Tensor::zeros(t.shape()));
  }
  for (const UttResult& r : results) {
    out.total += r.total * inv;
    out.ctc += r.ctc * inv;
    out.att += r.att * inv;
    if (grads)
      for (auto& [key, g] : r.grads) {
        Tensor& acc = grads->at(key);
        for (std::size_t i = 0; i < acc.size(); ++i) acc.data()[i] += g[i] * inv;
      }
  }
  return out;
}

}  // namespace genadapt::model
