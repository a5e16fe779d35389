#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "genadapt/tensor.hpp"

namespace genadapt::numerics {

struct Var {
  int id = -1;
};

using ParamMap = std::map<std::string, Tensor>;
using GradMap = std::map<std::string, Tensor>;

// Reverse-mode tape. Ops append nodes in execution order (inputs always
// precede their consumers); backward() walks the record once in reverse and
// accumulates gradients by summation. A tape lives for one forward/backward
// pass and is rebuilt for the next.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // grad_in[i] is null when input i does not require grad; implementations
  // must accumulate (+=) into the buffers they are given.
  using BackwardFn = std::function<void(const Tape& tape,
                                        const std::vector<double>& grad_out,
                                        const std::vector<std::vector<double>*>& grad_in)>;

  Var leaf(Tensor value);                 // requires_grad taken from the tensor
  Var constant(Tensor value);             // forced requires_grad = false
  const Tensor& value(Var v) const;
  std::size_t num_nodes() const { return nodes_.size(); }

  Var matmul(Var a, Var b);
  Var add(Var a, Var b);                  // same shape, or b a row vector [cols(a)]
  Var scale(Var a, double c);
  Var mul(Var a, Var b);
  Var softmax(Var a);                     // along the last axis
  Var layer_norm(Var x, Var gain, Var bias, double eps);
  Var relu(Var a);
  Var embedding(Var table, const std::vector<int>& ids);
  Var concat_cols(Var a, Var b);
  Var slice_cols(Var a, std::size_t begin, std::size_t end);
  Var slice_rows(Var a, std::size_t begin, std::size_t end);
  Var transpose(Var a);
  Var log(Var a);
  Var exp(Var a);
  Var masked_fill(Var a, const std::vector<std::uint8_t>& mask, double fill);
  Var sum(Var a);                         // reduce all elements to a scalar

  // Extension point for ops whose gradient is computed outside the op set
  // (the CTC criterion). The value is recorded as-is.
  Var custom(std::vector<Var> inputs, Tensor value, BackwardFn fn);

  // Gradient of a scalar loss w.r.t. every requires_grad leaf, keyed by leaf
  // id. Leaves the loss never reaches get a zero tensor of their shape.
  std::map<int, Tensor> backward(Var loss) const;

 private:
  struct Node {
    Tensor value;
    std::vector<int> inputs;
    BackwardFn back;
    bool requires_grad = false;
    bool is_leaf = false;
  };

  Var push(Tensor value, std::vector<int> inputs, BackwardFn back, const char* op);
  const Node& node(Var v) const;

  std::vector<Node> nodes_;
};

// Central-difference check of an analytic gradient. f evaluates the scalar at
// the given parameters and, when grads is non-null, must also fill the
// analytic gradient (one tensor per parameter key). Returns the maximum
// elementwise relative error |analytic - numeric| / max(|analytic|, |numeric|);
// absolute differences at or below `floor` count as exact agreement. f is
// called repeatedly and concurrently, so it must be pure; a
// repeated-evaluation mismatch raises ContractError.
double grad_check(const std::function<double(const ParamMap&, GradMap*)>& f,
                  const ParamMap& params, double eps, double floor = 1e-8);

}  // namespace genadapt::numerics
