#pragma once

#include <vector>

#include "genadapt/autodiff.hpp"
#include "genadapt/tensor.hpp"

namespace genadapt::ctc {

constexpr int kBlank = 0;

// Target token ids; blank never appears, every id in [1, V-1].
struct LabelSequence {
  std::vector<int> ids;

  std::size_t length() const { return ids.size(); }
  bool operator==(const LabelSequence&) const = default;
};

// minimum frames needed to emit the target: L plus one separator blank per
// adjacent equal pair
std::size_t min_input_frames(const LabelSequence& target);

// throws if a row of the T x V log-prob lattice fails to log-sum-exp to 0
// within 1e-9, or ids fall outside [1, V-1]
void validate_lattice(const numerics::Tensor& logprobs);
void validate_target(const LabelSequence& target, std::size_t vocab);

struct CtcResult {
  double loss = 0.0;            // -log P(target | lattice)
  numerics::Tensor grad;        // d loss / d logprobs, T x V
};

// forward-backward over the 2L+1 extended sequence, all in log space
CtcResult ctc_loss(const numerics::Tensor& logprobs, const LabelSequence& target);

// enumerates every V^T path (bound 1e6) and sums those that collapse to the
// target; the test oracle for ctc_loss
double ctc_brute_force(const numerics::Tensor& logprobs, const LabelSequence& target);

// per-frame argmax (ties to the lower id), collapse repeats, drop blanks
LabelSequence greedy_decode(const numerics::Tensor& logprobs);

LabelSequence collapse_path(const std::vector<int>& path);

// records the CTC criterion on a tape: value is the scalar loss, backward
// scales the analytic lattice gradient by the upstream gradient
numerics::Var ctc_loss_op(numerics::Tape& tape, numerics::Var logprobs,
                          const LabelSequence& target);

}  // namespace genadapt::ctc
