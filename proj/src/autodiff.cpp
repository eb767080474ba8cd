#include "wt/autodiff.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "wt/errors.hpp"

namespace wt {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

ConstMap as_matrix(const double* data, std::size_t rows, std::size_t cols) {
  return ConstMap(data, static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

MutMap as_matrix(double* data, std::size_t rows, std::size_t cols) {
  return MutMap(data, static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

[[noreturn]] void shape_mismatch(const char* op, const Shape& a, const Shape& b) {
  throw DimensionError(std::string(op) + ": incompatible shapes " + shape_string(a) + " and " +
                       shape_string(b));
}

void accumulate(Tensor* slot, const Tensor& delta) {
  if (slot == nullptr) return;
  auto dst = slot->values();
  auto src = delta.values();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

}  // namespace

std::string shape_string(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out << 'x';
    out << shape[i];
  }
  out << ']';
  return out.str();
}

std::size_t shape_product(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

// ---------------------------------------------------------------- Tensor

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)) {
  for (auto d : shape_) {
    if (d == 0) throw DimensionError("tensor extents must be positive, got " + shape_string(shape_));
  }
  values_.assign(shape_product(shape_), fill);
}

Tensor::Tensor(Shape shape, std::vector<double> values)
    : shape_(std::move(shape)), values_(std::move(values)) {
  for (auto d : shape_) {
    if (d == 0) throw DimensionError("tensor extents must be positive, got " + shape_string(shape_));
  }
  if (shape_product(shape_) != values_.size()) {
    throw DimensionError("shape " + shape_string(shape_) + " does not hold " +
                         std::to_string(values_.size()) + " values");
  }
}

Tensor Tensor::matrix(std::initializer_list<std::initializer_list<double>> rows) {
  const std::size_t r = rows.size();
  const std::size_t c = r ? rows.begin()->size() : 0;
  std::vector<double> values;
  values.reserve(r * c);
  for (const auto& row : rows) {
    if (row.size() != c) throw DimensionError("ragged matrix literal");
    values.insert(values.end(), row.begin(), row.end());
  }
  return Tensor({r, c}, std::move(values));
}

Tensor Tensor::vector(std::vector<double> values) {
  const std::size_t n = values.size();
  return Tensor({n}, std::move(values));
}

Tensor Tensor::reshaped(Shape shape) const {
  if (shape_product(shape) != size()) shape_mismatch("reshape", shape_, shape);
  return Tensor(std::move(shape), values_);
}

void Tensor::fill(double value) { std::fill(values_.begin(), values_.end(), value); }

// ---------------------------------------------------------------- Tape

const Tensor& Var::value() const { return tape_->value(*this); }
bool Var::requires_grad() const { return tape_->requires_grad(*this); }

void Tape::check_owned(Var v) const {
  if (!v.valid() || &v.tape() != this || v.id() >= nodes_.size()) {
    throw RecordError("variable does not belong to this record");
  }
}

Var Tape::leaf(Tensor value) {
  nodes_.push_back(Node{std::move(value), {}, true, false, {}});
  return Var(this, nodes_.size() - 1);
}

Var Tape::constant(Tensor value) {
  nodes_.push_back(Node{std::move(value), {}, false, false, {}});
  return Var(this, nodes_.size() - 1);
}

Var Tape::push(Tensor value, std::initializer_list<Var> inputs, BackwardFn backward) {
  return push(std::move(value), std::span<const Var>(inputs.begin(), inputs.size()),
              std::move(backward));
}

Var Tape::push(Tensor value, std::span<const Var> inputs, BackwardFn backward) {
  if (consumed_) throw RecordError("record already swept; start a new record");
  bool needs = false;
  for (const auto& in : inputs) {
    check_owned(in);
    needs = needs || nodes_[in.id()].requires_grad;
  }
  for (double x : value.values()) {
    if (!std::isfinite(x)) {
      throw NumericError("non-finite value produced by an operation", -1);
    }
  }
  nodes_.push_back(Node{std::move(value), {}, needs, false, needs ? std::move(backward) : BackwardFn{}});
  return Var(this, nodes_.size() - 1);
}

const Tensor& Tape::value(Var v) const {
  check_owned(v);
  return nodes_[v.id()].value;
}

bool Tape::requires_grad(Var v) const {
  check_owned(v);
  return nodes_[v.id()].requires_grad;
}

Tensor* Tape::grad_slot(Var v) {
  check_owned(v);
  Node& n = nodes_[v.id()];
  if (!n.requires_grad) return nullptr;
  if (!n.has_grad) {
    n.grad = Tensor(n.value.shape(), 0.0);
    n.has_grad = true;
  }
  return &n.grad;
}

Tensor Tape::grad(Var v) const {
  check_owned(v);
  const Node& n = nodes_[v.id()];
  if (n.has_grad) return n.grad;
  return Tensor(n.value.shape(), 0.0);
}

void Tape::backward(Var loss) {
  check_owned(loss);
  if (consumed_) throw RecordError("stale record: backward already ran on this record");
  if (nodes_[loss.id()].value.size() != 1) {
    throw DimensionError("backward needs a scalar loss, got " +
                         shape_string(nodes_[loss.id()].value.shape()));
  }
  consumed_ = true;
  Tensor* seed = grad_slot(loss);
  if (seed == nullptr) return;
  (*seed)[0] += 1.0;
  for (std::size_t i = loss.id() + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (n.has_grad && n.backward) n.backward(*this, n.grad);
  }
}

// ---------------------------------------------------------------- ops

Var matmul(Var a, Var b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  Tape& tape = a.tape();
  if (av.rank() == 2 && bv.rank() == 2) {
    const std::size_t m = av.dim(0), k = av.dim(1), n = bv.dim(1);
    if (bv.dim(0) != k) shape_mismatch("matmul", av.shape(), bv.shape());
    Tensor out({m, n});
    as_matrix(out.data(), m, n).noalias() = as_matrix(av.data(), m, k) * as_matrix(bv.data(), k, n);
    return tape.push(std::move(out), {a, b}, [a, b, m, k, n](Tape& t, const Tensor& g) {
      const Tensor& av = t.value(a);
      const Tensor& bv = t.value(b);
      if (Tensor* da = t.grad_slot(a)) {
        as_matrix(da->data(), m, k).noalias() +=
            as_matrix(g.data(), m, n) * as_matrix(bv.data(), k, n).transpose();
      }
      if (Tensor* db = t.grad_slot(b)) {
        as_matrix(db->data(), k, n).noalias() +=
            as_matrix(av.data(), m, k).transpose() * as_matrix(g.data(), m, n);
      }
    });
  }
  if (av.rank() == 3 && bv.rank() == 3) {
    const std::size_t batch = av.dim(0), m = av.dim(1), k = av.dim(2), n = bv.dim(2);
    if (bv.dim(0) != batch || bv.dim(1) != k) shape_mismatch("matmul", av.shape(), bv.shape());
    Tensor out({batch, m, n});
    for (std::size_t s = 0; s < batch; ++s) {
      as_matrix(out.data() + s * m * n, m, n).noalias() =
          as_matrix(av.data() + s * m * k, m, k) * as_matrix(bv.data() + s * k * n, k, n);
    }
    return tape.push(std::move(out), {a, b}, [a, b, batch, m, k, n](Tape& t, const Tensor& g) {
      const Tensor& av = t.value(a);
      const Tensor& bv = t.value(b);
      Tensor* da = t.grad_slot(a);
      Tensor* db = t.grad_slot(b);
      for (std::size_t s = 0; s < batch; ++s) {
        auto gs = as_matrix(g.data() + s * m * n, m, n);
        if (da) {
          as_matrix(da->data() + s * m * k, m, k).noalias() +=
              gs * as_matrix(bv.data() + s * k * n, k, n).transpose();
        }
        if (db) {
          as_matrix(db->data() + s * k * n, k, n).noalias() +=
              as_matrix(av.data() + s * m * k, m, k).transpose() * gs;
        }
      }
    });
  }
  shape_mismatch("matmul", av.shape(), bv.shape());
}

namespace {

Tensor transposed(const Tensor& x) {
  const std::size_t batch = x.rank() == 3 ? x.dim(0) : 1;
  const std::size_t r = x.dim(x.rank() - 2), c = x.dim(x.rank() - 1);
  Shape shape = x.shape();
  std::swap(shape[shape.size() - 1], shape[shape.size() - 2]);
  Tensor out(shape);
  for (std::size_t s = 0; s < batch; ++s) {
    as_matrix(out.data() + s * r * c, c, r) = as_matrix(x.data() + s * r * c, r, c).transpose();
  }
  return out;
}

}  // namespace

Var transpose(Var x) {
  const Tensor& xv = x.value();
  if (xv.rank() != 2 && xv.rank() != 3) {
    throw DimensionError("transpose: expected rank 2 or 3, got " + shape_string(xv.shape()));
  }
  return x.tape().push(transposed(xv), {x}, [x](Tape& t, const Tensor& g) {
    accumulate(t.grad_slot(x), transposed(g));
  });
}

Var reshape(Var x, Shape shape) {
  Tensor out = x.value().reshaped(std::move(shape));
  return x.tape().push(std::move(out), {x}, [x](Tape& t, const Tensor& g) {
    Tensor* dx = t.grad_slot(x);
    auto src = g.values();
    auto dst = dx->values();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
  });
}

Var softmax_rows(Var x, const Tensor* mask) {
  const Tensor& xv = x.value();
  const std::size_t cols = xv.cols();
  const std::size_t rows = xv.rows();
  std::size_t mask_period = 0;  // number of mask entries before it repeats
  if (mask) {
    const bool same = mask->shape() == xv.shape();
    const bool tail = mask->rank() == 2 && xv.rank() >= 2 &&
                      mask->dim(0) == xv.dim(xv.rank() - 2) && mask->dim(1) == cols;
    if (!same && !tail) shape_mismatch("softmax_rows mask", xv.shape(), mask->shape());
    mask_period = mask->size();
  }
  Tensor out(xv.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = xv.data() + r * cols;
    const double* m = mask ? mask->data() + (r * cols) % mask_period : nullptr;
    double* o = out.data() + r * cols;
    double peak = -std::numeric_limits<double>::infinity();
    bool any_open = false;
    for (std::size_t c = 0; c < cols; ++c) {
      double v = in[c];
      if (m) {
        if (m[c] > kMaskedThreshold) any_open = true;
        v += m[c];
      }
      o[c] = v;
      peak = std::max(peak, v);
    }
    if (m && !any_open) {
      throw DegenerateRowError("softmax_rows: row " + std::to_string(r) + " is fully masked");
    }
    double total = 0.0;
    for (std::size_t c = 0; c < cols; ++c) {
      if (m && m[c] <= kMaskedThreshold) {
        o[c] = 0.0;
      } else {
        o[c] = std::exp(o[c] - peak);
        total += o[c];
      }
    }
    const double inv = 1.0 / total;
    for (std::size_t c = 0; c < cols; ++c) o[c] *= inv;
  }
  Tensor saved = out;
  return x.tape().push(std::move(out), {x}, [x, rows, cols, yv = std::move(saved)](Tape& t, const Tensor& g) {
    Tensor* dx = t.grad_slot(x);
    for (std::size_t r = 0; r < rows; ++r) {
      const double* yr = yv.data() + r * cols;
      const double* gr = g.data() + r * cols;
      double dot = 0.0;
      for (std::size_t c = 0; c < cols; ++c) dot += yr[c] * gr[c];
      double* d = dx->data() + r * cols;
      for (std::size_t c = 0; c < cols; ++c) d[c] += yr[c] * (gr[c] - dot);
    }
  });
}

Var relu(Var x) {
  Tensor out = x.value();
  for (double& v : out.values()) v = v > 0.0 ? v : 0.0;
  return x.tape().push(std::move(out), {x}, [x](Tape& t, const Tensor& g) {
    Tensor* dx = t.grad_slot(x);
    const Tensor& xv = t.value(x);
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (xv[i] > 0.0) (*dx)[i] += g[i];
    }
  });
}

Var add(Var x, Var y) {
  const Tensor& xv = x.value();
  const Tensor& yv = y.value();
  Tensor out = xv;
  if (xv.shape() == yv.shape()) {
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += yv[i];
    return x.tape().push(std::move(out), {x, y}, [x, y](Tape& t, const Tensor& g) {
      accumulate(t.grad_slot(x), g);
      accumulate(t.grad_slot(y), g);
    });
  }
  if (yv.rank() == 1 && yv.size() == xv.cols()) {
    const std::size_t cols = xv.cols();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += yv[i % cols];
    return x.tape().push(std::move(out), {x, y}, [x, y, cols](Tape& t, const Tensor& g) {
      accumulate(t.grad_slot(x), g);
      if (Tensor* dy = t.grad_slot(y)) {
        for (std::size_t i = 0; i < g.size(); ++i) (*dy)[i % cols] += g[i];
      }
    });
  }
  shape_mismatch("add", xv.shape(), yv.shape());
}

Var mul(Var x, Var y) {
  const Tensor& xv = x.value();
  const Tensor& yv = y.value();
  if (xv.shape() != yv.shape()) shape_mismatch("mul", xv.shape(), yv.shape());
  Tensor out = xv;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= yv[i];
  return x.tape().push(std::move(out), {x, y}, [x, y](Tape& t, const Tensor& g) {
    const Tensor& xv = t.value(x);
    const Tensor& yv = t.value(y);
    if (Tensor* dx = t.grad_slot(x)) {
      for (std::size_t i = 0; i < g.size(); ++i) (*dx)[i] += g[i] * yv[i];
    }
    if (Tensor* dy = t.grad_slot(y)) {
      for (std::size_t i = 0; i < g.size(); ++i) (*dy)[i] += g[i] * xv[i];
    }
  });
}

Var scale(Var x, double c) {
  Tensor out = x.value();
  for (double& v : out.values()) v *= c;
  return x.tape().push(std::move(out), {x}, [x, c](Tape& t, const Tensor& g) {
    Tensor* dx = t.grad_slot(x);
    for (std::size_t i = 0; i < g.size(); ++i) (*dx)[i] += c * g[i];
  });
}

Var scale_by_entry(Var x, Var weights, std::size_t index) {
  const Tensor& wv = weights.value();
  if (index >= wv.size()) {
    throw DimensionError("scale_by_entry: index " + std::to_string(index) + " outside " +
                         shape_string(wv.shape()));
  }
  const double c = wv[index];
  Tensor out = x.value();
  for (double& v : out.values()) v *= c;
  return x.tape().push(std::move(out), {x, weights}, [x, weights, index](Tape& t, const Tensor& g) {
    const double c = t.value(weights)[index];
    if (Tensor* dx = t.grad_slot(x)) {
      for (std::size_t i = 0; i < g.size(); ++i) (*dx)[i] += c * g[i];
    }
    if (Tensor* dw = t.grad_slot(weights)) {
      const Tensor& xv = t.value(x);
      double dot = 0.0;
      for (std::size_t i = 0; i < g.size(); ++i) dot += g[i] * xv[i];
      (*dw)[index] += dot;
    }
  });
}

Var sum(Var x) {
  double total = 0.0;
  for (double v : x.value().values()) total += v;
  return x.tape().push(Tensor::scalar(total), {x}, [x](Tape& t, const Tensor& g) {
    Tensor* dx = t.grad_slot(x);
    for (double& v : dx->values()) v += g[0];
  });
}

Var concat_last_dim(std::span<const Var> parts) {
  if (parts.empty()) throw DimensionError("concat_last_dim: no parts");
  const Tensor& first = parts.front().value();
  const std::size_t rows = first.rows();
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  for (const Var& p : parts) {
    const Tensor& v = p.value();
    Shape lead(v.shape().begin(), v.shape().end() - 1);
    Shape lead0(first.shape().begin(), first.shape().end() - 1);
    if (lead != lead0) shape_mismatch("concat_last_dim", first.shape(), v.shape());
    widths.push_back(v.cols());
    total += v.cols();
  }
  Shape shape = first.shape();
  shape.back() = total;
  Tensor out(shape);
  std::size_t offset = 0;
  for (std::size_t p = 0; p < parts.size(); ++p) {
    const Tensor& v = parts[p].value();
    for (std::size_t r = 0; r < rows; ++r) {
      std::copy_n(v.data() + r * widths[p], widths[p], out.data() + r * total + offset);
    }
    offset += widths[p];
  }
  std::vector<Var> inputs(parts.begin(), parts.end());
  return parts.front().tape().push(
      std::move(out), inputs, [inputs, widths, rows, total](Tape& t, const Tensor& g) {
        std::size_t offset = 0;
        for (std::size_t p = 0; p < inputs.size(); ++p) {
          if (Tensor* d = t.grad_slot(inputs[p])) {
            for (std::size_t r = 0; r < rows; ++r) {
              const double* src = g.data() + r * total + offset;
              double* dst = d->data() + r * widths[p];
              for (std::size_t c = 0; c < widths[p]; ++c) dst[c] += src[c];
            }
          }
          offset += widths[p];
        }
      });
}

Var layer_norm(Var x, Var gain, Var bias, double eps) {
  const Tensor& xv = x.value();
  const std::size_t d = xv.cols();
  const std::size_t rows = xv.rows();
  if (gain.value().shape() != Shape{d}) shape_mismatch("layer_norm gain", xv.shape(), gain.shape());
  if (bias.value().shape() != Shape{d}) shape_mismatch("layer_norm bias", xv.shape(), bias.shape());
  if (d < 2) throw DimensionError("layer_norm needs at least 2 features, got " + shape_string(xv.shape()));
  const Tensor& gv = gain.value();
  const Tensor& bv = bias.value();
  Tensor out(xv.shape());
  std::vector<double> normalized(xv.size());
  std::vector<double> inv_std(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = xv.data() + r * d;
    double mean = 0.0;
    for (std::size_t c = 0; c < d; ++c) mean += in[c];
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t c = 0; c < d; ++c) var += (in[c] - mean) * (in[c] - mean);
    var /= static_cast<double>(d);
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t c = 0; c < d; ++c) {
      const double z = (in[c] - mean) * inv_std[r];
      normalized[r * d + c] = z;
      out[r * d + c] = gv[c] * z + bv[c];
    }
  }
  return x.tape().push(
      std::move(out), {x, gain, bias},
      [x, gain, bias, d, rows, normalized = std::move(normalized),
       inv_std = std::move(inv_std)](Tape& t, const Tensor& g) {
        const Tensor& gv = t.value(gain);
        Tensor* dx = t.grad_slot(x);
        Tensor* dgain = t.grad_slot(gain);
        Tensor* dbias = t.grad_slot(bias);
        std::vector<double> dz(d);
        for (std::size_t r = 0; r < rows; ++r) {
          const double* gr = g.data() + r * d;
          const double* z = normalized.data() + r * d;
          double mean_dz = 0.0, mean_dz_z = 0.0;
          for (std::size_t c = 0; c < d; ++c) {
            if (dgain) (*dgain)[c] += gr[c] * z[c];
            if (dbias) (*dbias)[c] += gr[c];
            dz[c] = gr[c] * gv[c];
            mean_dz += dz[c];
            mean_dz_z += dz[c] * z[c];
          }
          if (!dx) continue;
          mean_dz /= static_cast<double>(d);
          mean_dz_z /= static_cast<double>(d);
          double* out = dx->data() + r * d;
          for (std::size_t c = 0; c < d; ++c) {
            out[c] += inv_std[r] * (dz[c] - mean_dz - z[c] * mean_dz_z);
          }
        }
      });
}

Var dropout(Var x, double p, bool training, Rng& rng) {
  if (!(p >= 0.0 && p < 1.0)) throw ValueError("dropout probability must lie in [0,1), got " + std::to_string(p));
  if (!training || p == 0.0) return x;
  const Tensor& xv = x.value();
  std::vector<double> keep(xv.size());
  std::uniform_real_distribution<double> uniform(0.0, 1.0);
  const double survivor_scale = 1.0 / (1.0 - p);
  Tensor out(xv.shape());
  for (std::size_t i = 0; i < keep.size(); ++i) {
    keep[i] = uniform(rng) < p ? 0.0 : survivor_scale;
    out[i] = xv[i] * keep[i];
  }
  return x.tape().push(std::move(out), {x}, [x, keep = std::move(keep)](Tape& t, const Tensor& g) {
    Tensor* dx = t.grad_slot(x);
    for (std::size_t i = 0; i < g.size(); ++i) (*dx)[i] += g[i] * keep[i];
  });
}

Var dropout(Var x, const DropoutContext* ctx) {
  if (ctx == nullptr || !ctx->training || ctx->p == 0.0) return x;
  if (ctx->rng == nullptr) throw ValueError("dropout context without an rng stream");
  return dropout(x, ctx->p, ctx->training, *ctx->rng);
}

Var embedding_lookup(Var table, std::span<const int> ids) {
  const Tensor& tv = table.value();
  if (tv.rank() != 2) throw DimensionError("embedding table must be rank 2, got " + shape_string(tv.shape()));
  const std::size_t vocab = tv.dim(0), d = tv.dim(1);
  if (ids.empty()) throw DimensionError("embedding_lookup: empty id list");
  Tensor out({ids.size(), d});
  for (std::size_t r = 0; r < ids.size(); ++r) {
    if (ids[r] < 0 || static_cast<std::size_t>(ids[r]) >= vocab) {
      throw ValueError("token id " + std::to_string(ids[r]) + " outside vocabulary of " +
                       std::to_string(vocab));
    }
    std::copy_n(tv.data() + static_cast<std::size_t>(ids[r]) * d, d, out.data() + r * d);
  }
  std::vector<int> saved(ids.begin(), ids.end());
  return table.tape().push(std::move(out), {table}, [table, d, saved = std::move(saved)](Tape& t, const Tensor& g) {
    Tensor* dt = t.grad_slot(table);
    for (std::size_t r = 0; r < saved.size(); ++r) {
      double* dst = dt->data() + static_cast<std::size_t>(saved[r]) * d;
      for (std::size_t c = 0; c < d; ++c) dst[c] += g[r * d + c];
    }
  });
}

}  // namespace wt
