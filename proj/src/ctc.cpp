#include "genadapt/ctc.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "genadapt/errors.hpp"

namespace genadapt::ctc {

using numerics::Tensor;

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double log_add(double a, double b) {
  if (a == kNegInf) return b;
  if (b == kNegInf) return a;
  const double hi = std::max(a, b);
  return hi + std::log1p(std::exp(std::min(a, b) - hi));
}

}  // namespace

std::size_t min_input_frames(const LabelSequence& target) {
  std::size_t repeats = 0;
  for (std::size_t i = 1; i < target.ids.size(); ++i)
    if (target.ids[i] == target.ids[i - 1]) ++repeats;
  return target.ids.size() + repeats;
}

void validate_lattice(const Tensor& logprobs) {
  const std::size_t t_len = logprobs.rows(), vocab = logprobs.cols();
  if (logprobs.rank() != 2 || vocab < 2)
    throw ContractError("ctc: lattice must be T x V with V >= 2, got " +
                        numerics::shape_str(logprobs.shape()));
  for (std::size_t t = 0; t < t_len; ++t) {
    double lse = kNegInf;
    for (std::size_t v = 0; v < vocab; ++v) lse = log_add(lse, logprobs.at(t, v));
    if (std::abs(lse) > 1e-9)
      throw ContractError("ctc: lattice row " + std::to_string(t) +
                          " log-sum-exps to " + std::to_string(lse) + ", not 0");
  }
}

void validate_target(const LabelSequence& target, std::size_t vocab) {
  for (int id : target.ids)
    if (id < 1 || static_cast<std::size_t>(id) >= vocab)
      throw ContractError("ctc: target id " + std::to_string(id) +
                          " outside [1, " + std::to_string(vocab - 1) + "]");
}

CtcResult ctc_loss(const Tensor& logprobs, const LabelSequence& target) {
  validate_lattice(logprobs);
  const std::size_t t_len = logprobs.rows(), vocab = logprobs.cols();
  validate_target(target, vocab);
  const std::size_t need = min_input_frames(target);
  if (t_len < need)
    throw InfeasibleAlignmentError("ctc: target needs " + std::to_string(need) +
                                   " frames, lattice has " + std::to_string(t_len));

  const std::size_t l_len = target.ids.size();
  const std::size_t s_len = 2 * l_len + 1;
  auto ext = [&](std::size_t s) -> int {
    return s % 2 == 0 ? kBlank : target.ids[s / 2];
  };
  auto lp = [&](std::size_t t, int v) {
    return logprobs.at(t, static_cast<std::size_t>(v));
  };
  auto skip_allowed = [&](std::size_t s) {
    return s >= 2 && ext(s) != kBlank && ext(s) != ext(s - 2);
  };

  std::vector<double> alpha(t_len * s_len, kNegInf);
  std::vector<double> beta(t_len * s_len, kNegInf);
  alpha[0] = lp(0, kBlank);
  if (s_len > 1) alpha[1] = lp(0, ext(1));
  for (std::size_t t = 1; t < t_len; ++t) {
    for (std::size_t s = 0; s < s_len; ++s) {
      double a = alpha[(t - 1) * s_len + s];
      if (s >= 1) a = log_add(a, alpha[(t - 1) * s_len + s - 1]);
      if (skip_allowed(s)) a = log_add(a, alpha[(t - 1) * s_len + s - 2]);
      alpha[t * s_len + s] = a == kNegInf ? kNegInf : a + lp(t, ext(s));
    }
  }
  double log_p = alpha[(t_len - 1) * s_len + s_len - 1];
  if (s_len > 1) log_p = log_add(log_p, alpha[(t_len - 1) * s_len + s_len - 2]);
  if (log_p == kNegInf)
    throw InfeasibleAlignmentError("ctc: no feasible alignment path");

  beta[(t_len - 1) * s_len + s_len - 1] = lp(t_len - 1, ext(s_len - 1));
  if (s_len > 1) beta[(t_len - 1) * s_len + s_len - 2] = lp(t_len - 1, ext(s_len - 2));
  for (std::size_t t = t_len - 1; t-- > 0;) {
    for (std::size_t s = 0; s < s_len; ++s) {
      double b = beta[(t + 1) * s_len + s];
      if (s + 1 < s_len) b = log_add(b, beta[(t + 1) * s_len + s + 1]);
      if (s + 2 < s_len && skip_allowed(s + 2)) b = log_add(b, beta[(t + 1) * s_len + s + 2]);
      beta[t * s_len + s] = b == kNegInf ? kNegInf : b + lp(t, ext(s));
    }
  }

  // gamma(t,s) = alpha(t,s) + beta(t,s) - lp(t, ext(s)) both include the frame
  // emission once after the correction; grad[t][v] = -sum_{s: ext(s)=v} gamma
  CtcResult res;
  res.loss = -log_p;
  res.grad = Tensor({t_len, vocab});
  for (std::size_t t = 0; t < t_len; ++t) {
    std::vector<double> acc(vocab, kNegInf);
    for (std::size_t s = 0; s < s_len; ++s) {
      const double a = alpha[t * s_len + s];
      const double b = beta[t * s_len + s];
      if (a == kNegInf || b == kNegInf) continue;
      const int v = ext(s);
      acc[static_cast<std::size_t>(v)] =
          log_add(acc[static_cast<std::size_t>(v)], a + b - lp(t, v));
    }
    for (std::size_t v = 0; v < vocab; ++v)
      res.grad.data()[t * vocab + v] =
          acc[v] == kNegInf ? 0.0 : -std::exp(acc[v] - log_p);
  }
  return res;
}

double ctc_brute_force(const Tensor& logprobs, const LabelSequence& target) {
  validate_lattice(logprobs);
  const std::size_t t_len = logprobs.rows(), vocab = logprobs.cols();
  validate_target(target, vocab);
  double paths = std::pow(static_cast<double>(vocab), static_cast<double>(t_len));
  if (paths > 1e6)
    throw ContractError("ctc_brute_force: V^T = " + std::to_string(paths) +
                        " exceeds the 1e6 enumeration bound");

  std::vector<int> path(t_len, 0);
  double total = 0.0;
  while (true) {
    if (collapse_path(path) == target) {
      double lp = 0.0;
      for (std::size_t t = 0; t < t_len; ++t)
        lp += logprobs.at(t, static_cast<std::size_t>(path[t]));
      total += std::exp(lp);
    }
    std::size_t pos = 0;
    while (pos < t_len) {
      if (++path[pos] < static_cast<int>(vocab)) break;
      path[pos] = 0;
      ++pos;
    }
    if (pos == t_len) break;
  }
  if (total <= 0.0)
    throw InfeasibleAlignmentError("ctc_brute_force: target has probability 0");
  return -std::log(total);
}

LabelSequence collapse_path(const std::vector<int>& path) {
  LabelSequence out;
  int prev = -1;
  for (int v : path) {
    if (v != prev && v != kBlank) out.ids.push_back(v);
    prev = v;
  }
  return out;
}

LabelSequence greedy_decode(const Tensor& logprobs) {
  validate_lattice(logprobs);
  const std::size_t t_len = logprobs.rows(), vocab = logprobs.cols();
  std::vector<int> path(t_len);
  for (std::size_t t = 0; t < t_len; ++t) {
    std::size_t best = 0;
    for (std::size_t v = 1; v < vocab; ++v)
      if (logprobs.at(t, v) > logprobs.at(t, best)) best = v;
    path[t] = static_cast<int>(best);
  }
  return collapse_path(path);
}

numerics::Var ctc_loss_op(numerics::Tape& tape, numerics::Var logprobs,
                          const LabelSequence& target) {
  CtcResult res = ctc_loss(tape.value(logprobs), target);
  Tensor grad = std::move(res.grad);
  return tape.custom(
      {logprobs}, Tensor::scalar(res.loss),
      [grad](const numerics::Tape&, const std::vector<double>& gout,
             const std::vector<std::vector<double>*>& gin) {
        if (!gin[0]) return;
        for (std::size_t i = 0; i < grad.size(); ++i) (*gin[0])[i] += gout[0] * grad[i];
      });
}

}  // namespace genadapt::ctc
