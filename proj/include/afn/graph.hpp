#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <deque>
#include <string>
#include <vector>

#include "afn/errors.hpp"
#include "afn/rng.hpp"
#include "afn/tensor.hpp"

namespace afn {

namespace detail {

// Reductions accumulate in double through eight independent lanes. The lane
// split is part of the numeric contract: it keeps results bit-stable across
// runs while letting the compiler vectorize without reassociation.
template <typename T>
inline double dot_acc(const T* a, const T* b, std::int64_t n) {
  double acc[8] = {0, 0, 0, 0, 0, 0, 0, 0};
  std::int64_t i = 0;
  for (; i + 8 <= n; i += 8)
    for (int k = 0; k < 8; ++k)
      acc[k] += static_cast<double>(a[i + k]) * static_cast<double>(b[i + k]);
  for (; i < n; ++i) acc[i & 7] += static_cast<double>(a[i]) * static_cast<double>(b[i]);
  return ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7]));
}

template <typename T>
inline double sum_acc(const T* a, std::int64_t n) {
  double acc[8] = {0, 0, 0, 0, 0, 0, 0, 0};
  std::int64_t i = 0;
  for (; i + 8 <= n; i += 8)
    for (int k = 0; k < 8; ++k) acc[k] += static_cast<double>(a[i + k]);
  for (; i < n; ++i) acc[i & 7] += static_cast<double>(a[i]);
  return ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7]));
}

/// y[i] += c * x[i]
template <typename T>
inline void axpy_d(double* y, double c, const T* x, std::int64_t n) {
  for (std::int64_t i = 0; i < n; ++i) y[i] += c * static_cast<double>(x[i]);
}

}  // namespace detail

/// Handle to a value recorded on a Graph.
struct Var {
  std::int32_t id = -1;
  bool valid() const { return id >= 0; }
};

/// Recording context for one model: a trainable-parameter registry that
/// persists across steps, plus a tape of operations that is reset per step.
/// Single-writer; one Graph belongs to one training run.
template <typename T>
class Graph {
 public:
  // ---- parameter registry -------------------------------------------------

  struct ParamEntry {
    std::string name;
    Tensor<T> value;
    Tensor<T> grad;  // same shape as value, accumulated by backward()
  };

  int add_param(const std::string& name, Tensor<T> init) {
    check_finite(init, "add_param");
    for (const auto& p : params_)
      if (p.name == name) throw ConfigError("duplicate parameter name: " + name);
    ParamEntry e;
    e.name = name;
    e.grad = Tensor<T>::zeros(init.shape);
    e.value = std::move(init);
    params_.push_back(std::move(e));
    return static_cast<int>(params_.size()) - 1;
  }

  std::size_t num_params() const { return params_.size(); }
  ParamEntry& param_entry(int pid) { return params_.at(static_cast<std::size_t>(pid)); }
  const ParamEntry& param_entry(int pid) const {
    return params_.at(static_cast<std::size_t>(pid));
  }
  const std::vector<ParamEntry>& param_entries() const { return params_; }
  std::vector<ParamEntry>& param_entries() { return params_; }

  int find_param(const std::string& name) const {
    for (std::size_t i = 0; i < params_.size(); ++i)
      if (params_[i].name == name) return static_cast<int>(i);
    return -1;
  }

  std::int64_t scalar_count() const {
    std::int64_t n = 0;
    for (const auto& p : params_) n += p.value.numel();
    return n;
  }

  void zero_grads() {
    for (auto& p : params_)
      std::fill(p.grad.v.begin(), p.grad.v.end(), T(0));
  }

  std::vector<Tensor<T>> snapshot_params() const {
    std::vector<Tensor<T>> out;
    out.reserve(params_.size());
    for (const auto& p : params_) out.push_back(p.value);
    return out;
  }

  void restore_params(const std::vector<Tensor<T>>& snap) {
    if (snap.size() != params_.size())
      throw ShapeError("parameter snapshot size mismatch: " + std::to_string(snap.size()) +
                       " vs " + std::to_string(params_.size()));
    for (std::size_t i = 0; i < snap.size(); ++i) {
      if (!snap[i].same_shape(params_[i].value))
        throw ShapeError("snapshot shape mismatch for " + params_[i].name);
      params_[i].value = snap[i];
    }
  }

  // ---- tape ---------------------------------------------------------------

  /// Drop all recorded operations; the registry survives.
  void reset() { nodes_.clear(); }

  std::size_t num_nodes() const { return nodes_.size(); }

  Var input(Tensor<T> value) {
    check_finite(value, "input");
    return push(Op::Input, std::move(value), {-1, -1, -1});
  }

  Var param(int pid) {
    const auto& e = param_entry(pid);
    check_finite(e.value, "param");
    Node n;
    n.op = Op::Param;
    n.pid = pid;
    n.in = {-1, -1, -1};
    nodes_.push_back(std::move(n));
    return Var{static_cast<std::int32_t>(nodes_.size()) - 1};
  }

  const Tensor<T>& value(Var v) const { return val_of(v.id); }

  /// Gradient w.r.t. a recorded value after backward(); zeros if unreached.
  Tensor<T> grad_or_zero(Var v) const {
    const Node& n = node(v.id);
    if (n.op == Op::Param) return param_entry(n.pid).grad;
    if (n.grad.numel() == 0) return Tensor<T>::zeros(val_of(v.id).shape);
    return n.grad;
  }

  // ---- operations ----------------------------------------------------------

  /// y = x * w^T + b. x is [n x in] (rank 1 means one row), w is [out x in],
  /// b is [out] or an invalid Var for no bias. Output rank follows x.
  Var affine(Var x, Var w, Var b) {
    const Tensor<T>& xv = val_of(x.id);
    const Tensor<T>& wv = val_of(w.id);
    if (wv.rank() != 2)
      throw ShapeError("affine: w must be rank 2, got " + wv.shape_str());
    const std::int64_t in = xv.cols(), n = xv.rows(), out = wv.shape[0];
    if (wv.shape[1] != in)
      throw ShapeError("affine: x " + xv.shape_str() + " does not conform with w " +
                       wv.shape_str());
    const T* bp = nullptr;
    if (b.valid()) {
      const Tensor<T>& bv = val_of(b.id);
      if (bv.numel() != out)
        throw ShapeError("affine: bias " + bv.shape_str() + " does not match w " +
                         wv.shape_str());
      bp = bv.v.data();
    }
    Tensor<T> y = alloc_like(xv, out);
    for (std::int64_t r = 0; r < n; ++r) {
      const T* xr = xv.v.data() + r * in;
      T* yr = y.v.data() + r * out;
      for (std::int64_t o = 0; o < out; ++o) {
        double acc = detail::dot_acc(xr, wv.v.data() + o * in, in);
        yr[o] = static_cast<T>(bp ? acc + static_cast<double>(bp[o]) : acc);
      }
    }
    return push(Op::Affine, std::move(y), {x.id, w.id, b.valid() ? b.id : -1});
  }

  Var relu(Var x) {
    const Tensor<T>& xv = val_of(x.id);
    Tensor<T> y = xv;
    for (auto& e : y.v) e = e > T(0) ? e : T(0);
    return push(Op::Relu, std::move(y), {x.id, -1, -1});
  }

  Var tanh_(Var x) {
    const Tensor<T>& xv = val_of(x.id);
    Tensor<T> y = xv;
    for (auto& e : y.v) e = std::tanh(e);
    return push(Op::Tanh, std::move(y), {x.id, -1, -1});
  }

  /// y = sign(x) * sqrt(|x|). Backward derivative is clamped at
  /// `signed_sqrt_grad_cap` and is 0 exactly at x = 0.
  Var signed_sqrt(Var x) {
    const Tensor<T>& xv = val_of(x.id);
    Tensor<T> y = xv;
    for (auto& e : y.v) {
      double d = static_cast<double>(e);
      e = static_cast<T>(d < 0 ? -std::sqrt(-d) : std::sqrt(d));
    }
    return push(Op::SignedSqrt, std::move(y), {x.id, -1, -1});
  }

  /// Training mode zeroes each element with probability p and scales the
  /// survivors by 1/(1-p); eval mode is the identity. The mask stream is
  /// (key, element) counter-based, so it does not depend on call order.
  Var dropout(Var x, double p, bool training, std::uint64_t key) {
    if (!(p >= 0.0 && p < 1.0))
      throw ConfigError("dropout: p must be in [0,1), got " + std::to_string(p));
    if (!training || p == 0.0) return x;
    const Tensor<T>& xv = val_of(x.id);
    Node n;
    n.op = Op::Dropout;
    n.in = {x.id, -1, -1};
    n.scalar = 1.0 / (1.0 - p);
    n.mask.resize(xv.v.size());
    Tensor<T> y = xv;
    for (std::size_t i = 0; i < y.v.size(); ++i) {
      bool keep = counter_u01(key, i) >= p;
      n.mask[i] = keep ? 1 : 0;
      y.v[i] = keep ? static_cast<T>(y.v[i] * n.scalar) : T(0);
    }
    n.val = std::move(y);
    nodes_.push_back(std::move(n));
    return Var{static_cast<std::int32_t>(nodes_.size()) - 1};
  }

  Var hadamard(Var a, Var b) {
    const Tensor<T>& av = val_of(a.id);
    const Tensor<T>& bv = val_of(b.id);
    if (!av.same_shape(bv))
      throw ShapeError("hadamard: shape mismatch " + av.shape_str() + " vs " + bv.shape_str());
    Tensor<T> y = av;
    for (std::size_t i = 0; i < y.v.size(); ++i) y.v[i] *= bv.v[i];
    return push(Op::Hadamard, std::move(y), {a.id, b.id, -1});
  }

  Var add(Var a, Var b) {
    const Tensor<T>& av = val_of(a.id);
    const Tensor<T>& bv = val_of(b.id);
    if (!av.same_shape(bv))
      throw ShapeError("add: shape mismatch " + av.shape_str() + " vs " + bv.shape_str());
    Tensor<T> y = av;
    for (std::size_t i = 0; i < y.v.size(); ++i) y.v[i] += bv.v[i];
    return push(Op::Add, std::move(y), {a.id, b.id, -1});
  }

  Var scale(Var x, double c) {
    const Tensor<T>& xv = val_of(x.id);
    Tensor<T> y = xv;
    for (auto& e : y.v) e = static_cast<T>(e * c);
    Node n;
    n.op = Op::Scale;
    n.in = {x.id, -1, -1};
    n.scalar = c;
    n.val = std::move(y);
    nodes_.push_back(std::move(n));
    return Var{static_cast<std::int32_t>(nodes_.size()) - 1};
  }

  /// Row-wise sum of k adjacent entries: [n x k*o] -> [n x o],
  /// out[j] = sum_i x[j*k + i].
  Var chunk_sum_pool(Var x, std::int64_t k) {
    const Tensor<T>& xv = val_of(x.id);
    if (k <= 0) throw ConfigError("chunk_sum_pool: k must be positive");
    const std::int64_t c = xv.cols(), n = xv.rows();
    if (c % k != 0)
      throw ShapeError("chunk_sum_pool: width " + std::to_string(c) +
                       " not divisible by k=" + std::to_string(k) + " for " + xv.shape_str());
    const std::int64_t o = c / k;
    Tensor<T> y = alloc_like(xv, o);
    for (std::int64_t r = 0; r < n; ++r) {
      const T* xr = xv.v.data() + r * c;
      T* yr = y.v.data() + r * o;
      for (std::int64_t j = 0; j < o; ++j)
        yr[j] = static_cast<T>(detail::sum_acc(xr + j * k, k));
    }
    Node nd;
    nd.op = Op::ChunkSumPool;
    nd.in = {x.id, -1, -1};
    nd.i0 = k;
    nd.val = std::move(y);
    nodes_.push_back(std::move(nd));
    return Var{static_cast<std::int32_t>(nodes_.size()) - 1};
  }

  /// Row-wise y = x / max(||x||_2, eps).
  Var l2_normalize(Var x, double eps) {
    const Tensor<T>& xv = val_of(x.id);
    const std::int64_t c = xv.cols(), n = xv.rows();
    Tensor<T> y = xv;
    for (std::int64_t r = 0; r < n; ++r) {
      T* yr = y.v.data() + r * c;
      double nrm = std::sqrt(detail::dot_acc(yr, yr, c));
      double inv = 1.0 / (nrm > eps ? nrm : eps);
      for (std::int64_t j = 0; j < c; ++j) yr[j] = static_cast<T>(yr[j] * inv);
    }
    Node nd;
    nd.op = Op::L2Normalize;
    nd.in = {x.id, -1, -1};
    nd.scalar = eps;
    nd.val = std::move(y);
    nodes_.push_back(std::move(nd));
    return Var{static_cast<std::int32_t>(nodes_.size()) - 1};
  }

  Var concat_cols(Var a, Var b) {
    const Tensor<T>& av = val_of(a.id);
    const Tensor<T>& bv = val_of(b.id);
    if (av.rows() != bv.rows())
      throw ShapeError("concat_cols: row mismatch " + av.shape_str() + " vs " + bv.shape_str());
    const std::int64_t n = av.rows(), ca = av.cols(), cb = bv.cols();
    Tensor<T> y = alloc_like(av.rank() >= bv.rank() ? av : bv, ca + cb);
    for (std::int64_t r = 0; r < n; ++r) {
      T* yr = y.v.data() + r * (ca + cb);
      std::copy_n(av.v.data() + r * ca, ca, yr);
      std::copy_n(bv.v.data() + r * cb, cb, yr + ca);
    }
    return push(Op::ConcatCols, std::move(y), {a.id, b.id, -1});
  }

  /// Column slice [lo, hi).
  Var slice_cols(Var x, std::int64_t lo, std::int64_t hi) {
    const Tensor<T>& xv = val_of(x.id);
    const std::int64_t c = xv.cols(), n = xv.rows();
    if (!(0 <= lo && lo < hi && hi <= c))
      throw ShapeError("slice_cols: [" + std::to_string(lo) + "," + std::to_string(hi) +
                       ") out of range for " + xv.shape_str());
    Tensor<T> y = alloc_like(xv, hi - lo);
    for (std::int64_t r = 0; r < n; ++r)
      std::copy_n(xv.v.data() + r * c + lo, hi - lo, y.v.data() + r * (hi - lo));
    Node nd;
    nd.op = Op::SliceCols;
    nd.in = {x.id, -1, -1};
    nd.i0 = lo;
    nd.i1 = hi;
    nd.val = std::move(y);
    nodes_.push_back(std::move(nd));
    return Var{static_cast<std::int32_t>(nodes_.size()) - 1};
  }

  /// Mean over row groups: x is [m x d], `sizes` partitions the m rows into
  /// consecutive segments; output row s is the mean of segment s.
  Var segment_mean(Var x, const std::vector<std::int64_t>& sizes) {
    const Tensor<T>& xv = val_of(x.id);
    const std::int64_t d = xv.cols();
    std::int64_t total = 0;
    for (auto s : sizes) {
      if (s <= 0) throw DataError("segment_mean: empty segment (every claim needs >= 1 image)");
      total += s;
    }
    if (total != xv.rows())
      throw ShapeError("segment_mean: segments cover " + std::to_string(total) + " rows, x is " +
                       xv.shape_str());
    Tensor<T> y = Tensor<T>::zeros({static_cast<std::int64_t>(sizes.size()), d});
    std::int64_t row = 0;
    scratch_.assign(static_cast<std::size_t>(d), 0.0);
    for (std::size_t s = 0; s < sizes.size(); ++s) {
      std::fill(scratch_.begin(), scratch_.end(), 0.0);
      for (std::int64_t i = 0; i < sizes[s]; ++i)
        detail::axpy_d(scratch_.data(), 1.0, xv.v.data() + (row + i) * d, d);
      const double inv = 1.0 / static_cast<double>(sizes[s]);
      T* yr = y.v.data() + static_cast<std::int64_t>(s) * d;
      for (std::int64_t j = 0; j < d; ++j) yr[j] = static_cast<T>(scratch_[j] * inv);
      row += sizes[s];
    }
    Node nd;
    nd.op = Op::SegmentMean;
    nd.in = {x.id, -1, -1};
    nd.segments = sizes;
    nd.val = std::move(y);
    nodes_.push_back(std::move(nd));
    return Var{static_cast<std::int32_t>(nodes_.size()) - 1};
  }

  /// Full 3-way contraction per row: y[r,k] = sum_ij x1[r,i] x2[r,j] core[i,j,k].
  Var bilinear_tucker(Var x1, Var x2, Var core) {
    const Tensor<T>& a = val_of(x1.id);
    const Tensor<T>& b = val_of(x2.id);
    const Tensor<T>& c = val_of(core.id);
    if (c.rank() != 3)
      throw ShapeError("bilinear_tucker: core must be rank 3, got " + c.shape_str());
    const std::int64_t n = a.rows(), c1 = a.cols(), c2 = b.cols();
    const std::int64_t co = c.shape[2];
    if (b.rows() != n || c.shape[0] != c1 || c.shape[1] != c2)
      throw ShapeError("bilinear_tucker: x1 " + a.shape_str() + ", x2 " + b.shape_str() +
                       ", core " + c.shape_str() + " do not conform");
    Tensor<T> y = alloc_like(a, co);
    scratch_.assign(static_cast<std::size_t>(co), 0.0);
    for (std::int64_t r = 0; r < n; ++r) {
      std::fill(scratch_.begin(), scratch_.end(), 0.0);
      const T* ar = a.v.data() + r * c1;
      const T* br = b.v.data() + r * c2;
      for (std::int64_t i = 0; i < c1; ++i) {
        const double ai = static_cast<double>(ar[i]);
        if (ai == 0.0) continue;
        const T* ci = c.v.data() + i * c2 * co;
        for (std::int64_t j = 0; j < c2; ++j)
          detail::axpy_d(scratch_.data(), ai * static_cast<double>(br[j]), ci + j * co, co);
      }
      T* yr = y.v.data() + r * co;
      for (std::int64_t k = 0; k < co; ++k) yr[k] = static_cast<T>(scratch_[k]);
    }
    return push(Op::BilinearTucker, std::move(y), {x1.id, x2.id, core.id});
  }

  /// Mean over rows of -log softmax(logits)[label]. Stable via max shift.
  Var softmax_cross_entropy(Var logits, const std::vector<int>& labels) {
    const Tensor<T>& lv = val_of(logits.id);
    const std::int64_t n = lv.rows(), c = lv.cols();
    if (c != 2) throw ShapeError("softmax_cross_entropy: expected 2 logits, got " + lv.shape_str());
    if (static_cast<std::int64_t>(labels.size()) != n)
      throw ShapeError("softmax_cross_entropy: " + std::to_string(labels.size()) +
                       " labels for " + std::to_string(n) + " rows");
    double total = 0.0;
    for (std::int64_t r = 0; r < n; ++r) {
      int y = labels[static_cast<std::size_t>(r)];
      if (y != 0 && y != 1) throw ConfigError("softmax_cross_entropy: label must be 0 or 1");
      const double l0 = lv.at(r, 0), l1 = lv.at(r, 1);
      const double m = l0 > l1 ? l0 : l1;
      const double lse = m + std::log(std::exp(l0 - m) + std::exp(l1 - m));
      total += lse - (y == 0 ? l0 : l1);
    }
    Node nd;
    nd.op = Op::SoftmaxXent;
    nd.in = {logits.id, -1, -1};
    nd.labels = labels;
    nd.val = Tensor<T>::scalar(static_cast<T>(total / static_cast<double>(n)));
    check_finite(nd.val, "softmax_cross_entropy");
    nodes_.push_back(std::move(nd));
    return Var{static_cast<std::int32_t>(nodes_.size()) - 1};
  }

  Var sum_all(Var x) {
    const Tensor<T>& xv = val_of(x.id);
    Tensor<T> y = Tensor<T>::scalar(static_cast<T>(detail::sum_acc(xv.v.data(), xv.numel())));
    return push(Op::SumAll, std::move(y), {x.id, -1, -1});
  }

  // ---- backward -----------------------------------------------------------

  /// Reverse-topological accumulation from a scalar loss into every reachable
  /// node and, through Param leaves, into the registry's grad buffers.
  /// Unreached parameters keep whatever grads they had (zero after zero_grads).
  void backward(Var loss) {
    Node& ln = node(loss.id);
    if (val_of(loss.id).numel() != 1)
      throw ShapeError("backward: loss must be scalar, got " + val_of(loss.id).shape_str());
    for (auto& n : nodes_) n.grad = Tensor<T>();  // each call owns its node grads
    ensure_grad(loss.id);
    ln.grad.v[0] = T(1);
    for (std::int32_t id = loss.id; id >= 0; --id) {
      Node& n = node(id);
      if (n.op == Op::Param) {
        if (n.grad.numel() != 0) {
          auto& g = param_entry(n.pid).grad;
          for (std::size_t i = 0; i < g.v.size(); ++i) g.v[i] += n.grad.v[i];
        }
        continue;
      }
      if (n.grad.numel() == 0) continue;  // not on the path to the loss
      backprop_node(id);
    }
  }

  double signed_sqrt_grad_cap = 1e6;

 private:
  enum class Op : std::uint8_t {
    Input,
    Param,
    Affine,
    Relu,
    Tanh,
    SignedSqrt,
    Dropout,
    Hadamard,
    Add,
    Scale,
    ChunkSumPool,
    L2Normalize,
    ConcatCols,
    SliceCols,
    SegmentMean,
    BilinearTucker,
    SoftmaxXent,
    SumAll,
  };

  struct Node {
    Op op;
    Tensor<T> val;   // empty for Param (value lives in the registry)
    Tensor<T> grad;  // lazily allocated
    std::array<std::int32_t, 3> in{-1, -1, -1};
    int pid = -1;
    std::int64_t i0 = 0, i1 = 0;
    double scalar = 0.0;
    std::vector<std::uint8_t> mask;
    std::vector<std::int64_t> segments;
    std::vector<int> labels;
  };

  // deque keeps value() references stable while later ops are recorded
  std::deque<Node> nodes_;
  std::vector<ParamEntry> params_;
  std::vector<double> scratch_;

  Node& node(std::int32_t id) { return nodes_.at(static_cast<std::size_t>(id)); }
  const Node& node(std::int32_t id) const { return nodes_.at(static_cast<std::size_t>(id)); }

  const Tensor<T>& val_of(std::int32_t id) const {
    const Node& n = node(id);
    return n.op == Op::Param ? param_entry(n.pid).value : n.val;
  }

  Var push(Op op, Tensor<T> val, std::array<std::int32_t, 3> in) {
    check_finite(val, "op output");
    Node n;
    n.op = op;
    n.val = std::move(val);
    n.in = in;
    nodes_.push_back(std::move(n));
    return Var{static_cast<std::int32_t>(nodes_.size()) - 1};
  }

  /// Output tensor with the row structure of `like` and `c` columns.
  static Tensor<T> alloc_like(const Tensor<T>& like, std::int64_t c) {
    if (like.rank() <= 1) return Tensor<T>::zeros({c});
    return Tensor<T>::zeros({like.rows(), c});
  }

  Tensor<T>& ensure_grad(std::int32_t id) {
    Node& n = node(id);
    if (n.grad.numel() == 0) n.grad = Tensor<T>::zeros(val_of(id).shape);
    return n.grad;
  }

  void backprop_node(std::int32_t id) {
    Node& n = node(id);
    const Tensor<T>& gy = n.grad;
    switch (n.op) {
      case Op::Input:
      case Op::Param:
        return;
      case Op::Affine: {
        const Tensor<T>& x = val_of(n.in[0]);
        const Tensor<T>& w = val_of(n.in[1]);
        const std::int64_t rows = x.rows(), in_c = x.cols(), out_c = w.shape[0];
        {  // dX = dY * W, accumulated per row in double
          Tensor<T>& gx = ensure_grad(n.in[0]);
          scratch_.assign(static_cast<std::size_t>(in_c), 0.0);
          for (std::int64_t r = 0; r < rows; ++r) {
            std::fill(scratch_.begin(), scratch_.end(), 0.0);
            const T* gyr = gy.v.data() + r * out_c;
            for (std::int64_t o = 0; o < out_c; ++o)
              detail::axpy_d(scratch_.data(), static_cast<double>(gyr[o]),
                             w.v.data() + o * in_c, in_c);
            T* gxr = gx.v.data() + r * in_c;
            for (std::int64_t i = 0; i < in_c; ++i)
              gxr[i] = static_cast<T>(static_cast<double>(gxr[i]) + scratch_[i]);
          }
        }
        {  // dW = dY^T * X
          Tensor<T>& gw = ensure_grad(n.in[1]);
          scratch_.assign(static_cast<std::size_t>(out_c * in_c), 0.0);
          for (std::int64_t r = 0; r < rows; ++r) {
            const T* gyr = gy.v.data() + r * out_c;
            const T* xr = x.v.data() + r * in_c;
            for (std::int64_t o = 0; o < out_c; ++o)
              if (gyr[o] != T(0))
                detail::axpy_d(scratch_.data() + o * in_c, static_cast<double>(gyr[o]), xr, in_c);
          }
          for (std::int64_t i = 0; i < out_c * in_c; ++i)
            gw.v[static_cast<std::size_t>(i)] =
                static_cast<T>(static_cast<double>(gw.v[static_cast<std::size_t>(i)]) +
                               scratch_[static_cast<std::size_t>(i)]);
        }
        if (n.in[2] >= 0) {  // db = column sums of dY
          Tensor<T>& gb = ensure_grad(n.in[2]);
          for (std::int64_t o = 0; o < out_c; ++o) {
            double acc = 0.0;
            for (std::int64_t r = 0; r < rows; ++r)
              acc += static_cast<double>(gy.v[static_cast<std::size_t>(r * out_c + o)]);
            gb.v[static_cast<std::size_t>(o)] =
                static_cast<T>(static_cast<double>(gb.v[static_cast<std::size_t>(o)]) + acc);
          }
        }
        return;
      }
      case Op::Relu: {
        const Tensor<T>& x = val_of(n.in[0]);
        Tensor<T>& gx = ensure_grad(n.in[0]);
        for (std::size_t i = 0; i < gx.v.size(); ++i)
          if (x.v[i] > T(0)) gx.v[i] += gy.v[i];
        return;
      }
      case Op::Tanh: {
        Tensor<T>& gx = ensure_grad(n.in[0]);
        for (std::size_t i = 0; i < gx.v.size(); ++i)
          gx.v[i] += gy.v[i] * (T(1) - n.val.v[i] * n.val.v[i]);
        return;
      }
      case Op::SignedSqrt: {
        Tensor<T>& gx = ensure_grad(n.in[0]);
        const double cap = signed_sqrt_grad_cap;
        for (std::size_t i = 0; i < gx.v.size(); ++i) {
          const double ay = std::abs(static_cast<double>(n.val.v[i]));
          if (ay == 0.0) continue;  // subgradient 0 at the kink
          double d = 0.5 / ay;
          if (d > cap) d = cap;
          gx.v[i] += static_cast<T>(static_cast<double>(gy.v[i]) * d);
        }
        return;
      }
      case Op::Dropout: {
        Tensor<T>& gx = ensure_grad(n.in[0]);
        for (std::size_t i = 0; i < gx.v.size(); ++i)
          if (n.mask[i]) gx.v[i] += static_cast<T>(static_cast<double>(gy.v[i]) * n.scalar);
        return;
      }
      case Op::Hadamard: {
        const Tensor<T>& a = val_of(n.in[0]);
        const Tensor<T>& b = val_of(n.in[1]);
        Tensor<T>& ga = ensure_grad(n.in[0]);
        for (std::size_t i = 0; i < ga.v.size(); ++i) ga.v[i] += gy.v[i] * b.v[i];
        Tensor<T>& gb = ensure_grad(n.in[1]);
        for (std::size_t i = 0; i < gb.v.size(); ++i) gb.v[i] += gy.v[i] * a.v[i];
        return;
      }
      case Op::Add: {
        Tensor<T>& ga = ensure_grad(n.in[0]);
        for (std::size_t i = 0; i < ga.v.size(); ++i) ga.v[i] += gy.v[i];
        Tensor<T>& gb = ensure_grad(n.in[1]);
        for (std::size_t i = 0; i < gb.v.size(); ++i) gb.v[i] += gy.v[i];
        return;
      }
      case Op::Scale: {
        Tensor<T>& gx = ensure_grad(n.in[0]);
        for (std::size_t i = 0; i < gx.v.size(); ++i)
          gx.v[i] += static_cast<T>(static_cast<double>(gy.v[i]) * n.scalar);
        return;
      }
      case Op::ChunkSumPool: {
        const Tensor<T>& x = val_of(n.in[0]);
        Tensor<T>& gx = ensure_grad(n.in[0]);
        const std::int64_t k = n.i0, c = x.cols(), o = c / k, rows = x.rows();
        for (std::int64_t r = 0; r < rows; ++r) {
          const T* gyr = gy.v.data() + r * o;
          T* gxr = gx.v.data() + r * c;
          for (std::int64_t j = 0; j < o; ++j)
            for (std::int64_t i = 0; i < k; ++i) gxr[j * k + i] += gyr[j];
        }
        return;
      }
      case Op::L2Normalize: {
        const Tensor<T>& x = val_of(n.in[0]);
        Tensor<T>& gx = ensure_grad(n.in[0]);
        const std::int64_t c = x.cols(), rows = x.rows();
        for (std::int64_t r = 0; r < rows; ++r) {
          const T* xr = x.v.data() + r * c;
          const T* yr = n.val.v.data() + r * c;
          const T* gyr = gy.v.data() + r * c;
          T* gxr = gx.v.data() + r * c;
          const double nrm = std::sqrt(detail::dot_acc(xr, xr, c));
          if (nrm > n.scalar) {
            const double ydg = detail::dot_acc(yr, gyr, c);
            const double inv = 1.0 / nrm;
            for (std::int64_t j = 0; j < c; ++j)
              gxr[j] += static_cast<T>((static_cast<double>(gyr[j]) -
                                        static_cast<double>(yr[j]) * ydg) *
                                       inv);
          } else {
            const double inv = 1.0 / n.scalar;
            for (std::int64_t j = 0; j < c; ++j)
              gxr[j] += static_cast<T>(static_cast<double>(gyr[j]) * inv);
          }
        }
        return;
      }
      case Op::ConcatCols: {
        const Tensor<T>& a = val_of(n.in[0]);
        const Tensor<T>& b = val_of(n.in[1]);
        const std::int64_t rows = a.rows(), ca = a.cols(), cb = b.cols();
        Tensor<T>& ga = ensure_grad(n.in[0]);
        Tensor<T>& gb = ensure_grad(n.in[1]);
        for (std::int64_t r = 0; r < rows; ++r) {
          const T* gyr = gy.v.data() + r * (ca + cb);
          T* gar = ga.v.data() + r * ca;
          T* gbr = gb.v.data() + r * cb;
          for (std::int64_t j = 0; j < ca; ++j) gar[j] += gyr[j];
          for (std::int64_t j = 0; j < cb; ++j) gbr[j] += gyr[ca + j];
        }
        return;
      }
      case Op::SliceCols: {
        const Tensor<T>& x = val_of(n.in[0]);
        Tensor<T>& gx = ensure_grad(n.in[0]);
        const std::int64_t c = x.cols(), rows = x.rows(), lo = n.i0, hi = n.i1;
        for (std::int64_t r = 0; r < rows; ++r) {
          const T* gyr = gy.v.data() + r * (hi - lo);
          T* gxr = gx.v.data() + r * c;
          for (std::int64_t j = 0; j < hi - lo; ++j) gxr[lo + j] += gyr[j];
        }
        return;
      }
      case Op::SegmentMean: {
        const Tensor<T>& x = val_of(n.in[0]);
        Tensor<T>& gx = ensure_grad(n.in[0]);
        const std::int64_t d = x.cols();
        std::int64_t row = 0;
        for (std::size_t s = 0; s < n.segments.size(); ++s) {
          const double inv = 1.0 / static_cast<double>(n.segments[s]);
          const T* gyr = gy.v.data() + static_cast<std::int64_t>(s) * d;
          for (std::int64_t i = 0; i < n.segments[s]; ++i) {
            T* gxr = gx.v.data() + (row + i) * d;
            for (std::int64_t j = 0; j < d; ++j)
              gxr[j] += static_cast<T>(static_cast<double>(gyr[j]) * inv);
          }
          row += n.segments[s];
        }
        return;
      }
      case Op::BilinearTucker: {
        const Tensor<T>& a = val_of(n.in[0]);
        const Tensor<T>& b = val_of(n.in[1]);
        const Tensor<T>& c = val_of(n.in[2]);
        const std::int64_t rows = a.rows(), c1 = a.cols(), c2 = b.cols(), co = c.shape[2];
        Tensor<T>& ga = ensure_grad(n.in[0]);
        Tensor<T>& gb = ensure_grad(n.in[1]);
        Tensor<T>& gc = ensure_grad(n.in[2]);
        scratch_.assign(static_cast<std::size_t>(c1 * c2 * co), 0.0);
        for (std::int64_t r = 0; r < rows; ++r) {
          const T* ar = a.v.data() + r * c1;
          const T* br = b.v.data() + r * c2;
          const T* gyr = gy.v.data() + r * co;
          for (std::int64_t i = 0; i < c1; ++i) {
            double acc = 0.0;
            const T* ci = c.v.data() + i * c2 * co;
            for (std::int64_t j = 0; j < c2; ++j) {
              const double t = detail::dot_acc(ci + j * co, gyr, co);
              acc += static_cast<double>(br[j]) * t;
              detail::axpy_d(scratch_.data() + (i * c2 + j) * co,
                             static_cast<double>(ar[i]) * static_cast<double>(br[j]), gyr, co);
            }
            ga.v[static_cast<std::size_t>(r * c1 + i)] += static_cast<T>(acc);
          }
          for (std::int64_t j = 0; j < c2; ++j) {
            double acc = 0.0;
            for (std::int64_t i = 0; i < c1; ++i)
              acc += static_cast<double>(ar[i]) *
                     detail::dot_acc(c.v.data() + (i * c2 + j) * co, gyr, co);
            gb.v[static_cast<std::size_t>(r * c2 + j)] += static_cast<T>(acc);
          }
        }
        for (std::size_t i = 0; i < gc.v.size(); ++i)
          gc.v[i] = static_cast<T>(static_cast<double>(gc.v[i]) + scratch_[i]);
        return;
      }
      case Op::SoftmaxXent: {
        const Tensor<T>& x = val_of(n.in[0]);
        Tensor<T>& gx = ensure_grad(n.in[0]);
        const std::int64_t rows = x.rows();
        const double up = static_cast<double>(gy.v[0]) / static_cast<double>(rows);
        for (std::int64_t r = 0; r < rows; ++r) {
          const double l0 = x.at(r, 0), l1 = x.at(r, 1);
          const double m = l0 > l1 ? l0 : l1;
          const double e0 = std::exp(l0 - m), e1 = std::exp(l1 - m);
          const double z = e0 + e1;
          const int y = n.labels[static_cast<std::size_t>(r)];
          gx.v[static_cast<std::size_t>(r * 2 + 0)] +=
              static_cast<T>((e0 / z - (y == 0 ? 1.0 : 0.0)) * up);
          gx.v[static_cast<std::size_t>(r * 2 + 1)] +=
              static_cast<T>((e1 / z - (y == 1 ? 1.0 : 0.0)) * up);
        }
        return;
      }
      case Op::SumAll: {
        Tensor<T>& gx = ensure_grad(n.in[0]);
        const T g = gy.v[0];
        for (auto& e : gx.v) e += g;
        return;
      }
    }
  }
};

}  // namespace afn
