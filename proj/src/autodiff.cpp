#include "genadapt/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "genadapt/errors.hpp"
#include "genadapt/kernels.hpp"

namespace genadapt::numerics {

namespace {

void require_2d(const Tensor& t, const char* op) {
  if (t.rank() > 2) throw DimensionError(std::string(op) + ": expects rank <= 2, got " +
                                         shape_str(t.shape()));
}

}  // namespace

const Tape::Node& Tape::node(Var v) const {
  if (v.id < 0 || v.id >= static_cast<int>(nodes_.size()))
    throw ContractError("tape: var id " + std::to_string(v.id) + " is not on this tape");
  return nodes_[static_cast<std::size_t>(v.id)];
}

const Tensor& Tape::value(Var v) const { return node(v).value; }

Var Tape::push(Tensor value, std::vector<int> inputs, BackwardFn back, const char* op) {
  value.check_finite(op);
  bool req = false;
  for (int id : inputs) req = req || nodes_[static_cast<std::size_t>(id)].requires_grad;
  Node n;
  n.value = std::move(value);
  n.inputs = std::move(inputs);
  n.back = std::move(back);
  n.requires_grad = req;
  nodes_.push_back(std::move(n));
  return Var{static_cast<int>(nodes_.size()) - 1};
}

Var Tape::leaf(Tensor value) {
  value.check_finite("leaf");
  Node n;
  n.value = std::move(value);
  n.requires_grad = n.value.requires_grad();
  n.is_leaf = true;
  nodes_.push_back(std::move(n));
  return Var{static_cast<int>(nodes_.size()) - 1};
}

Var Tape::constant(Tensor value) {
  value.set_requires_grad(false);
  return leaf(std::move(value));
}

Var Tape::matmul(Var a, Var b) {
  const Tensor& ta = value(a);
  const Tensor& tb = value(b);
  require_2d(ta, "matmul");
  require_2d(tb, "matmul");
  const std::size_t m = ta.rows(), k = ta.cols(), k2 = tb.rows(), n = tb.cols();
  if (k != k2)
    throw DimensionError("matmul: inner extents differ, " + shape_str(ta.shape()) +
                         " x " + shape_str(tb.shape()));
  Tensor out({m, n});
  kernels::matmul(ta.data(), tb.data(), out.data(), m, k, n);
  const int ia = a.id, ib = b.id;
  return push(
      std::move(out), {ia, ib},
      [ia, ib, m, k, n](const Tape& t, const std::vector<double>& g,
                        const std::vector<std::vector<double>*>& gin) {
        const Tensor& ta = t.value(Var{ia});
        const Tensor& tb = t.value(Var{ib});
        if (gin[0]) {
          // dA += G * B^T
          std::vector<double> bt(n * k);
          for (std::size_t r = 0; r < k; ++r)
            for (std::size_t c = 0; c < n; ++c) bt[c * k + r] = tb[r * n + c];
          std::vector<double> da(m * k);
          kernels::matmul(g.data(), bt.data(), da.data(), m, n, k);
          for (std::size_t i = 0; i < da.size(); ++i) (*gin[0])[i] += da[i];
        }
        if (gin[1]) {
          // dB += A^T * G
          std::vector<double> at(k * m);
          for (std::size_t r = 0; r < m; ++r)
            for (std::size_t c = 0; c < k; ++c) at[c * m + r] = ta[r * k + c];
          std::vector<double> db(k * n);
          kernels::matmul(at.data(), g.data(), db.data(), k, m, n);
          for (std::size_t i = 0; i < db.size(); ++i) (*gin[1])[i] += db[i];
        }
      },
      "matmul");
}

Var Tape::add(Var a, Var b) {
  const Tensor& ta = value(a);
  const Tensor& tb = value(b);
  const bool rowvec = !ta.same_shape(tb);
  if (rowvec && !(tb.rows() == 1 && tb.cols() == ta.cols()))
    throw DimensionError("add: shapes " + shape_str(ta.shape()) + " vs " +
                         shape_str(tb.shape()));
  Tensor out(ta.shape(), ta.values());
  const std::size_t rows = ta.rows(), cols = ta.cols();
  if (rowvec) {
    for (std::size_t i = 0; i < rows; ++i)
      for (std::size_t j = 0; j < cols; ++j) out.data()[i * cols + j] += tb[j];
  } else {
    for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] += tb[i];
  }
  return push(
      std::move(out), {a.id, b.id},
      [rowvec, rows, cols](const Tape&, const std::vector<double>& g,
                           const std::vector<std::vector<double>*>& gin) {
        if (gin[0])
          for (std::size_t i = 0; i < g.size(); ++i) (*gin[0])[i] += g[i];
        if (gin[1]) {
          if (rowvec) {
            for (std::size_t i = 0; i < rows; ++i)
              for (std::size_t j = 0; j < cols; ++j) (*gin[1])[j] += g[i * cols + j];
          } else {
            for (std::size_t i = 0; i < g.size(); ++i) (*gin[1])[i] += g[i];
          }
        }
      },
      "add");
}

Var Tape::scale(Var a, double c) {
  const Tensor& ta = value(a);
  Tensor out(ta.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] = ta[i] * c;
  return push(
      std::move(out), {a.id},
      [c](const Tape&, const std::vector<double>& g,
          const std::vector<std::vector<double>*>& gin) {
        if (!gin[0]) return;
        for (std::size_t i = 0; i < g.size(); ++i) (*gin[0])[i] += g[i] * c;
      },
      "scale");
}

Var Tape::mul(Var a, Var b) {
  const Tensor& ta = value(a);
  const Tensor& tb = value(b);
  if (!ta.same_shape(tb))
    throw DimensionError("mul: shapes " + shape_str(ta.shape()) + " vs " +
                         shape_str(tb.shape()));
  Tensor out(ta.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] = ta[i] * tb[i];
  const int ia = a.id, ib = b.id;
  return push(
      std::move(out), {ia, ib},
      [ia, ib](const Tape& t, const std::vector<double>& g,
               const std::vector<std::vector<double>*>& gin) {
        const Tensor& ta = t.value(Var{ia});
        const Tensor& tb = t.value(Var{ib});
        if (gin[0])
          for (std::size_t i = 0; i < g.size(); ++i) (*gin[0])[i] += g[i] * tb[i];
        if (gin[1])
          for (std::size_t i = 0; i < g.size(); ++i) (*gin[1])[i] += g[i] * ta[i];
      },
      "mul");
}

Var Tape::softmax(Var a) {
  const Tensor& ta = value(a);
  const std::size_t rows = ta.rows(), cols = ta.cols();
  if (cols == 0) throw DimensionError("softmax: empty tensor");
  Tensor out(ta.shape());
  for (std::size_t i = 0; i < rows; ++i) {
    const double* x = ta.data() + i * cols;
    double* y = out.data() + i * cols;
    double mx = x[0];
    for (std::size_t j = 1; j < cols; ++j) mx = std::max(mx, x[j]);
    double z = 0.0;
    for (std::size_t j = 0; j < cols; ++j) {
      y[j] = std::exp(x[j] - mx);
      z += y[j];
    }
    for (std::size_t j = 0; j < cols; ++j) y[j] /= z;
  }
  const int out_id = static_cast<int>(nodes_.size());
  return push(
      std::move(out), {a.id},
      [out_id, rows, cols](const Tape& t, const std::vector<double>& g,
                           const std::vector<std::vector<double>*>& gin) {
        if (!gin[0]) return;
        const Tensor& s = t.value(Var{out_id});
        for (std::size_t i = 0; i < rows; ++i) {
          const double* srow = s.data() + i * cols;
          const double* grow = g.data() + i * cols;
          double dot = 0.0;
          for (std::size_t j = 0; j < cols; ++j) dot += grow[j] * srow[j];
          for (std::size_t j = 0; j < cols; ++j)
            (*gin[0])[i * cols + j] += srow[j] * (grow[j] - dot);
        }
      },
      "softmax");
}

Var Tape::layer_norm(Var x, Var gain, Var bias, double eps) {
  const Tensor& tx = value(x);
  const Tensor& tg = value(gain);
  const Tensor& tb = value(bias);
  const std::size_t rows = tx.rows(), d = tx.cols();
  if (tg.size() != d || tb.size() != d)
    throw DimensionError("layer_norm: gain/bias must have " + std::to_string(d) +
                         " entries");
  Tensor out(tx.shape());
  for (std::size_t i = 0; i < rows; ++i) {
    const double* xr = tx.data() + i * d;
    double* yr = out.data() + i * d;
    double mu = 0.0;
    for (std::size_t j = 0; j < d; ++j) mu += xr[j];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (xr[j] - mu) * (xr[j] - mu);
    var /= static_cast<double>(d);
    const double inv = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < d; ++j) yr[j] = (xr[j] - mu) * inv * tg[j] + tb[j];
  }
  const int ix = x.id, ig = gain.id;
  return push(
      std::move(out), {ix, ig, bias.id},
      [ix, ig, rows, d, eps](const Tape& t, const std::vector<double>& g,
                             const std::vector<std::vector<double>*>& gin) {
        const Tensor& tx = t.value(Var{ix});
        const Tensor& tg = t.value(Var{ig});
        std::vector<double> xhat(d);
        for (std::size_t i = 0; i < rows; ++i) {
          const double* xr = tx.data() + i * d;
          const double* gr = g.data() + i * d;
          double mu = 0.0;
          for (std::size_t j = 0; j < d; ++j) mu += xr[j];
          mu /= static_cast<double>(d);
          double var = 0.0;
          for (std::size_t j = 0; j < d; ++j) var += (xr[j] - mu) * (xr[j] - mu);
          var /= static_cast<double>(d);
          const double inv = 1.0 / std::sqrt(var + eps);
          for (std::size_t j = 0; j < d; ++j) xhat[j] = (xr[j] - mu) * inv;
          if (gin[0]) {
            double m1 = 0.0, m2 = 0.0;
            for (std::size_t j = 0; j < d; ++j) {
              m1 += gr[j] * tg[j];
              m2 += gr[j] * tg[j] * xhat[j];
            }
            m1 /= static_cast<double>(d);
            m2 /= static_cast<double>(d);
            for (std::size_t j = 0; j < d; ++j)
              (*gin[0])[i * d + j] += inv * (gr[j] * tg[j] - m1 - xhat[j] * m2);
          }
          if (gin[1])
            for (std::size_t j = 0; j < d; ++j) (*gin[1])[j] += gr[j] * xhat[j];
          if (gin[2])
            for (std::size_t j = 0; j < d; ++j) (*gin[2])[j] += gr[j];
        }
      },
      "layer_norm");
}

Var Tape::relu(Var a) {
  const Tensor& ta = value(a);
  Tensor out(ta.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] = ta[i] > 0.0 ? ta[i] : 0.0;
  const int ia = a.id;
  return push(
      std::move(out), {ia},
      [ia](const Tape& t, const std::vector<double>& g,
           const std::vector<std::vector<double>*>& gin) {
        if (!gin[0]) return;
        const Tensor& ta = t.value(Var{ia});
        for (std::size_t i = 0; i < g.size(); ++i)
          if (ta[i] > 0.0) (*gin[0])[i] += g[i];
      },
      "relu");
}

Var Tape::embedding(Var table, const std::vector<int>& ids) {
  const Tensor& tt = value(table);
  require_2d(tt, "embedding");
  const std::size_t v = tt.rows(), d = tt.cols();
  if (ids.empty()) throw ContractError("embedding: empty id list");
  for (int id : ids)
    if (id < 0 || static_cast<std::size_t>(id) >= v)
      throw ContractError("embedding: id " + std::to_string(id) + " outside table of " +
                          std::to_string(v) + " rows");
  Tensor out({ids.size(), d});
  for (std::size_t r = 0; r < ids.size(); ++r)
    std::memcpy(out.data() + r * d, tt.data() + static_cast<std::size_t>(ids[r]) * d,
                d * sizeof(double));
  std::vector<int> ids_copy = ids;
  return push(
      std::move(out), {table.id},
      [ids_copy, d](const Tape&, const std::vector<double>& g,
                    const std::vector<std::vector<double>*>& gin) {
        if (!gin[0]) return;
        for (std::size_t r = 0; r < ids_copy.size(); ++r) {
          double* dst = gin[0]->data() + static_cast<std::size_t>(ids_copy[r]) * d;
          const double* src = g.data() + r * d;
          for (std::size_t j = 0; j < d; ++j) dst[j] += src[j];
        }
      },
      "embedding");
}

Var Tape::concat_cols(Var a, Var b) {
  const Tensor& ta = value(a);
  const Tensor& tb = value(b);
  require_2d(ta, "concat");
  require_2d(tb, "concat");
  const std::size_t rows = ta.rows(), ca = ta.cols(), cb = tb.cols();
  if (tb.rows() != rows)
    throw DimensionError("concat: row counts differ, " + shape_str(ta.shape()) + " vs " +
                         shape_str(tb.shape()));
  Tensor out({rows, ca + cb});
  for (std::size_t i = 0; i < rows; ++i) {
    std::memcpy(out.data() + i * (ca + cb), ta.data() + i * ca, ca * sizeof(double));
    std::memcpy(out.data() + i * (ca + cb) + ca, tb.data() + i * cb, cb * sizeof(double));
  }
  return push(
      std::move(out), {a.id, b.id},
      [rows, ca, cb](const Tape&, const std::vector<double>& g,
                     const std::vector<std::vector<double>*>& gin) {
        for (std::size_t i = 0; i < rows; ++i) {
          if (gin[0])
            for (std::size_t j = 0; j < ca; ++j)
              (*gin[0])[i * ca + j] += g[i * (ca + cb) + j];
          if (gin[1])
            for (std::size_t j = 0; j < cb; ++j)
              (*gin[1])[i * cb + j] += g[i * (ca + cb) + ca + j];
        }
      },
      "concat");
}

Var Tape::slice_cols(Var a, std::size_t begin, std::size_t end) {
  const Tensor& ta = value(a);
  require_2d(ta, "slice_cols");
  const std::size_t rows = ta.rows(), cols = ta.cols();
  if (begin >= end || end > cols)
    throw DimensionError("slice_cols: range [" + std::to_string(begin) + "," +
                         std::to_string(end) + ") on " + shape_str(ta.shape()));
  const std::size_t w = end - begin;
  Tensor out({rows, w});
  for (std::size_t i = 0; i < rows; ++i)
    std::memcpy(out.data() + i * w, ta.data() + i * cols + begin, w * sizeof(double));
  return push(
      std::move(out), {a.id},
      [rows, cols, begin, w](const Tape&, const std::vector<double>& g,
                             const std::vector<std::vector<double>*>& gin) {
        if (!gin[0]) return;
        for (std::size_t i = 0; i < rows; ++i)
          for (std::size_t j = 0; j < w; ++j)
            (*gin[0])[i * cols + begin + j] += g[i * w + j];
      },
      "slice_cols");
}

Var Tape::slice_rows(Var a, std::size_t begin, std::size_t end) {
  const Tensor& ta = value(a);
  require_2d(ta, "slice_rows");
  const std::size_t rows = ta.rows(), cols = ta.cols();
  if (begin >= end || end > rows)
    throw DimensionError("slice_rows: range [" + std::to_string(begin) + "," +
                         std::to_string(end) + ") on " + shape_str(ta.shape()));
  const std::size_t h = end - begin;
  Tensor out({h, cols});
  std::memcpy(out.data(), ta.data() + begin * cols, h * cols * sizeof(double));
  return push(
      std::move(out), {a.id},
      [cols, begin, h](const Tape&, const std::vector<double>& g,
                       const std::vector<std::vector<double>*>& gin) {
        if (!gin[0]) return;
        for (std::size_t i = 0; i < h * cols; ++i) (*gin[0])[begin * cols + i] += g[i];
      },
      "slice_rows");
}

Var Tape::transpose(Var a) {
  const Tensor& ta = value(a);
  require_2d(ta, "transpose");
  const std::size_t rows = ta.rows(), cols = ta.cols();
  Tensor out({cols, rows});
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < cols; ++j) out.data()[j * rows + i] = ta[i * cols + j];
  return push(
      std::move(out), {a.id},
      [rows, cols](const Tape&, const std::vector<double>& g,
                   const std::vector<std::vector<double>*>& gin) {
        if (!gin[0]) return;
        for (std::size_t i = 0; i < rows; ++i)
          for (std::size_t j = 0; j < cols; ++j)
            (*gin[0])[i * cols + j] += g[j * rows + i];
      },
      "transpose");
}

Var Tape::log(Var a) {
  const Tensor& ta = value(a);
  Tensor out(ta.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] = std::log(ta[i]);
  const int ia = a.id;
  return push(
      std::move(out), {ia},
      [ia](const Tape& t, const std::vector<double>& g,
           const std::vector<std::vector<double>*>& gin) {
        if (!gin[0]) return;
        const Tensor& ta = t.value(Var{ia});
        for (std::size_t i = 0; i < g.size(); ++i) (*gin[0])[i] += g[i] / ta[i];
      },
      "log");
}

Var Tape::exp(Var a) {
  const Tensor& ta = value(a);
  Tensor out(ta.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] = std::exp(ta[i]);
  const int out_id = static_cast<int>(nodes_.size());
  return push(
      std::move(out), {a.id},
      [out_id](const Tape& t, const std::vector<double>& g,
               const std::vector<std::vector<double>*>& gin) {
        if (!gin[0]) return;
        const Tensor& y = t.value(Var{out_id});
        for (std::size_t i = 0; i < g.size(); ++i) (*gin[0])[i] += g[i] * y[i];
      },
      "exp");
}

Var Tape::masked_fill(Var a, const std::vector<std::uint8_t>& mask, double fill) {
  const Tensor& ta = value(a);
  if (mask.size() != ta.size())
    throw DimensionError("masked_fill: mask size " + std::to_string(mask.size()) +
                         " vs tensor " + shape_str(ta.shape()));
  Tensor out(ta.shape(), ta.values());
  for (std::size_t i = 0; i < out.size(); ++i)
    if (mask[i]) out.data()[i] = fill;
  std::vector<std::uint8_t> mask_copy = mask;
  return push(
      std::move(out), {a.id},
      [mask_copy](const Tape&, const std::vector<double>& g,
                  const std::vector<std::vector<double>*>& gin) {
        if (!gin[0]) return;
        for (std::size_t i = 0; i < g.size(); ++i)
          if (!mask_copy[i]) (*gin[0])[i] += g[i];
      },
      "masked_fill");
}

Var Tape::sum(Var a) {
  const Tensor& ta = value(a);
  double s = 0.0;
  for (std::size_t i = 0; i < ta.size(); ++i) s += ta[i];
  return push(
      Tensor::scalar(s), {a.id},
      [](const Tape&, const std::vector<double>& g,
         const std::vector<std::vector<double>*>& gin) {
        if (!gin[0]) return;
        for (double& x : *gin[0]) x += g[0];
      },
      "sum");
}

Var Tape::custom(std::vector<Var> inputs, Tensor value, BackwardFn fn) {
  std::vector<int> ids;
  ids.reserve(inputs.size());
  for (Var v : inputs) {
    node(v);  // validates
    ids.push_back(v.id);
  }
  return push(std::move(value), std::move(ids), std::move(fn), "custom");
}

std::map<int, Tensor> Tape::backward(Var loss) const {
  const Node& ln = node(loss);
  if (ln.value.size() != 1) throw ContractError("backward: loss must be scalar");
  std::vector<std::vector<double>> bufs(nodes_.size());
  std::vector<char> reached(nodes_.size(), 0);
  for (std::size_t i = 0; i < nodes_.size(); ++i)
    if (nodes_[i].requires_grad) bufs[i].assign(nodes_[i].value.size(), 0.0);
  if (!ln.requires_grad) {
    // loss does not depend on any requires_grad leaf; all gradients are zero
    std::map<int, Tensor> out;
    for (std::size_t i = 0; i < nodes_.size(); ++i)
      if (nodes_[i].is_leaf && nodes_[i].requires_grad)
        out.emplace(static_cast<int>(i), Tensor::zeros(nodes_[i].value.shape()));
    return out;
  }
  bufs[static_cast<std::size_t>(loss.id)][0] = 1.0;
  reached[static_cast<std::size_t>(loss.id)] = 1;
  for (std::size_t idx = nodes_.size(); idx-- > 0;) {
    const Node& n = nodes_[idx];
    if (n.is_leaf || !n.requires_grad || !reached[idx]) continue;
    std::vector<std::vector<double>*> gin(n.inputs.size(), nullptr);
    for (std::size_t i = 0; i < n.inputs.size(); ++i) {
      const std::size_t in = static_cast<std::size_t>(n.inputs[i]);
      if (nodes_[in].requires_grad) {
        gin[i] = &bufs[in];
        reached[in] = 1;
      }
    }
    n.back(*this, bufs[idx], gin);
  }
  std::map<int, Tensor> out;
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    if (!nodes_[i].is_leaf || !nodes_[i].requires_grad) continue;
    Tensor g(nodes_[i].value.shape(), std::move(bufs[i]));
    g.check_finite("gradient of leaf " + std::to_string(i));
    out.emplace(static_cast<int>(i), std::move(g));
  }
  return out;
}

double grad_check(const std::function<double(const ParamMap&, GradMap*)>& f,
                  const ParamMap& params, double eps, double floor) {
  if (eps <= 0.0) throw ContractError("grad_check: eps must be positive");
  const double v1 = f(params, nullptr);
  const double v2 = f(params, nullptr);
  if (std::memcmp(&v1, &v2, sizeof(double)) != 0)
    throw ContractError("grad_check: f is not deterministic");
  GradMap analytic;
  f(params, &analytic);
  for (const auto& [key, t] : params) {
    auto it = analytic.find(key);
    if (it == analytic.end() || !it->second.same_shape(t))
      throw ContractError("grad_check: analytic gradient missing or mis-shaped for " + key);
  }

  struct Element {
    const std::string* key;
    std::size_t idx;
  };
  std::vector<Element> elems;
  for (const auto& [key, t] : params)
    for (std::size_t i = 0; i < t.size(); ++i) elems.push_back({&key, i});

  std::vector<double> errs(elems.size(), 0.0);
  kernels::parallel_for(elems.size(), [&](std::size_t e) {
    const Element& el = elems[e];
    ParamMap work = params;
    Tensor& t = work.at(*el.key);
    const double orig = t[el.idx];
    t.data()[el.idx] = orig + eps;
    const double fp = f(work, nullptr);
    t.data()[el.idx] = orig - eps;
    const double fm = f(work, nullptr);
    const double numeric = (fp - fm) / (2.0 * eps);
    const double a = analytic.at(*el.key)[el.idx];
    const double diff = std::abs(a - numeric);
    // differences inside the absolute floor count as exact agreement
    errs[e] = diff <= floor ? 0.0 : diff / std::max(std::abs(a), std::abs(numeric));
  });
  double mx = 0.0;
  for (double e : errs) mx = std::max(mx, e);
  return mx;
}

}  // namespace genadapt::numerics
