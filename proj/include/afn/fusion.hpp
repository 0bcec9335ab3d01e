#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "afn/graph.hpp"
#include "afn/init.hpp"

namespace afn {

enum class FusionKind {
  ConcatMlp,
  LinearSum,
  Mlb,
  Mfb,
  Mfh,
  Block,
  BlockTucker,
};

std::string to_string(FusionKind k);
FusionKind fusion_kind_from_string(const std::string& s);

/// Declarative description of one fusion block. Hyperparameter defaults
/// follow the canonical implementations of each strategy.
struct FusionConfig {
  FusionKind kind = FusionKind::ConcatMlp;
  int d1 = 0, d2 = 0;  // input widths
  int mm_dim = 1600;
  int out_dim = 1600;
  int chunks = 20;      // block variants
  int rank = 15;        // block
  int pool_k = 5;       // mfb / mfh sum-pool factor
  int mfh_stages = 2;
  std::vector<int> mlp_hidden = {500, 500};  // concat_mlp
  double dropout_p = 0.5;                    // input dropout, pre-projection
  bool normalize = true;  // signed_sqrt + l2 on mfb/mfh/block variants

  /// Throws ConfigError; messages carry the offending numbers.
  void validate() const;

  /// Forward output width: out_dim, except mfh concatenates per-stage outputs.
  int output_length() const;

  std::string to_json() const;
  static FusionConfig from_json(const std::string& text);
};

/// Exact trainable-scalar count, computed from the config alone.
std::int64_t parameter_count(const FusionConfig& cfg);

/// Ambient state a forward pass needs: train/eval mode plus the (seed, step)
/// pair that the counter-based dropout streams key on.
struct FwdCtx {
  bool training = false;
  std::uint64_t seed = 0;
  std::uint64_t step = 0;
};

inline std::uint64_t dropout_key(const FwdCtx& ctx, const std::string& site) {
  return key_combine(key_combine(ctx.seed, key_of(site)), ctx.step);
}

/// One differentiable fusion block. Parameters are registered on the Graph at
/// construction under `prefix`; forward records onto the same graph and works
/// for single rows and batches alike.
template <typename T>
class FusionBlock {
 public:
  FusionBlock(Graph<T>& g, FusionConfig cfg, std::string prefix, std::uint64_t init_seed)
      : cfg_(std::move(cfg)), prefix_(std::move(prefix)) {
    cfg_.validate();
    auto mat = [&](const std::string& name, std::int64_t rows, std::int64_t cols) {
      const std::string full = prefix_ + "/" + name;
      return g.add_param(full, init_uniform_fan_in<T>({rows, cols}, cols, init_seed, full));
    };
    auto bias = [&](const std::string& name, std::int64_t n) {
      return g.add_param(prefix_ + "/" + name, Tensor<T>::zeros({n}));
    };

    switch (cfg_.kind) {
      case FusionKind::ConcatMlp: {
        std::int64_t prev = cfg_.d1 + cfg_.d2;
        for (std::size_t i = 0; i < cfg_.mlp_hidden.size(); ++i) {
          const auto w = cfg_.mlp_hidden[i];
          mlp_w_.push_back(mat("mlp" + std::to_string(i) + "_w", w, prev));
          mlp_b_.push_back(bias("mlp" + std::to_string(i) + "_b", w));
          prev = w;
        }
        wout_ = mat("out_w", cfg_.out_dim, prev);
        bout_ = bias("out_b", cfg_.out_dim);
        break;
      }
      case FusionKind::LinearSum:
        u_ = mat("w1", cfg_.mm_dim, cfg_.d1);
        v_ = mat("w2", cfg_.mm_dim, cfg_.d2);
        wout_ = mat("out_w", cfg_.out_dim, cfg_.mm_dim);
        break;
      case FusionKind::Mlb:
        u_ = mat("u", cfg_.mm_dim, cfg_.d1);
        v_ = mat("v", cfg_.mm_dim, cfg_.d2);
        wout_ = mat("p", cfg_.out_dim, cfg_.mm_dim);
        break;
      case FusionKind::Mfb:
        u_ = mat("u", cfg_.mm_dim, cfg_.d1);
        v_ = mat("v", cfg_.mm_dim, cfg_.d2);
        break;
      case FusionKind::Mfh:
        for (int s = 0; s < cfg_.mfh_stages; ++s) {
          stage_u_.push_back(mat("stage" + std::to_string(s) + "_u", cfg_.mm_dim, cfg_.d1));
          stage_v_.push_back(mat("stage" + std::to_string(s) + "_v", cfg_.mm_dim, cfg_.d2));
        }
        break;
      case FusionKind::Block: {
        u_ = mat("u", cfg_.mm_dim, cfg_.d1);
        v_ = mat("v", cfg_.mm_dim, cfg_.d2);
        const std::int64_t cw = cfg_.mm_dim / cfg_.chunks;
        const std::int64_t ow = cfg_.out_dim / cfg_.chunks;
        for (int c = 0; c < cfg_.chunks; ++c) {
          // rows are output-component-major with rank inner, so a k-pool over
          // rank sums the R bilinear terms of each output component
          chunk_a_.push_back(mat("chunk" + std::to_string(c) + "_a", ow * cfg_.rank, cw));
          chunk_b_.push_back(mat("chunk" + std::to_string(c) + "_b", ow * cfg_.rank, cw));
        }
        wout_ = mat("out_w", cfg_.out_dim, cfg_.out_dim);
        break;
      }
      case FusionKind::BlockTucker: {
        u_ = mat("u", cfg_.mm_dim, cfg_.d1);
        v_ = mat("v", cfg_.mm_dim, cfg_.d2);
        const std::int64_t cw = cfg_.mm_dim / cfg_.chunks;
        const std::int64_t ow = cfg_.out_dim / cfg_.chunks;
        for (int c = 0; c < cfg_.chunks; ++c) {
          const std::string full = prefix_ + "/core" + std::to_string(c);
          cores_.push_back(g.add_param(
              full, init_normal<T>({cw, cw, ow}, 1.0 / static_cast<double>(cw), init_seed, full)));
        }
        wout_ = mat("out_w", cfg_.out_dim, cfg_.out_dim);
        break;
      }
    }
  }

  const FusionConfig& config() const { return cfg_; }

  Var forward(Graph<T>& g, Var x1, Var x2, const FwdCtx& ctx) const {
    check_input(g, x1, cfg_.d1, "x1");
    check_input(g, x2, cfg_.d2, "x2");
    x1 = g.dropout(x1, cfg_.dropout_p, ctx.training, dropout_key(ctx, prefix_ + "/drop_x1"));
    x2 = g.dropout(x2, cfg_.dropout_p, ctx.training, dropout_key(ctx, prefix_ + "/drop_x2"));

    switch (cfg_.kind) {
      case FusionKind::ConcatMlp: {
        Var h = g.concat_cols(x1, x2);
        for (std::size_t i = 0; i < mlp_w_.size(); ++i) {
          h = g.relu(g.affine(h, g.param(mlp_w_[i]), g.param(mlp_b_[i])));
          h = g.dropout(h, cfg_.dropout_p, ctx.training,
                        dropout_key(ctx, prefix_ + "/drop_h" + std::to_string(i)));
        }
        return g.affine(h, g.param(wout_), g.param(bout_));
      }
      case FusionKind::LinearSum: {
        Var s = g.add(g.affine(x1, g.param(u_), Var{}), g.affine(x2, g.param(v_), Var{}));
        return g.affine(s, g.param(wout_), Var{});
      }
      case FusionKind::Mlb: {
        Var a = g.affine(x1, g.param(u_), Var{});
        Var b = g.affine(x2, g.param(v_), Var{});
        if (!linear_variant) {
          a = g.tanh_(a);
          b = g.tanh_(b);
        }
        return g.affine(g.hadamard(a, b), g.param(wout_), Var{});
      }
      case FusionKind::Mfb: {
        Var z = g.hadamard(g.affine(x1, g.param(u_), Var{}), g.affine(x2, g.param(v_), Var{}));
        return pool_and_normalize(g, z);
      }
      case FusionKind::Mfh: {
        Var carry;  // pre-pool product of the previous stage
        Var out;
        for (std::size_t s = 0; s < stage_u_.size(); ++s) {
          Var z = g.hadamard(g.affine(x1, g.param(stage_u_[s]), Var{}),
                             g.affine(x2, g.param(stage_v_[s]), Var{}));
          if (carry.valid()) z = g.hadamard(z, carry);
          carry = z;
          Var o = pool_and_normalize(g, z);
          out = out.valid() ? g.concat_cols(out, o) : o;
        }
        return out;
      }
      case FusionKind::Block: {
        Var x1p = g.affine(x1, g.param(u_), Var{});
        Var x2p = g.affine(x2, g.param(v_), Var{});
        const std::int64_t cw = cfg_.mm_dim / cfg_.chunks;
        Var z;
        for (int c = 0; c < cfg_.chunks; ++c) {
          Var s1 = g.slice_cols(x1p, c * cw, (c + 1) * cw);
          Var s2 = g.slice_cols(x2p, c * cw, (c + 1) * cw);
          Var h = g.hadamard(g.affine(s1, g.param(chunk_a_[static_cast<std::size_t>(c)]), Var{}),
                             g.affine(s2, g.param(chunk_b_[static_cast<std::size_t>(c)]), Var{}));
          Var pooled = g.chunk_sum_pool(h, cfg_.rank);
          z = z.valid() ? g.concat_cols(z, pooled) : pooled;
        }
        if (cfg_.normalize) z = g.l2_normalize(g.signed_sqrt(z), kNormEps);
        return g.affine(z, g.param(wout_), Var{});
      }
      case FusionKind::BlockTucker: {
        Var x1p = g.affine(x1, g.param(u_), Var{});
        Var x2p = g.affine(x2, g.param(v_), Var{});
        const std::int64_t cw = cfg_.mm_dim / cfg_.chunks;
        Var z;
        for (int c = 0; c < cfg_.chunks; ++c) {
          Var s1 = g.slice_cols(x1p, c * cw, (c + 1) * cw);
          Var s2 = g.slice_cols(x2p, c * cw, (c + 1) * cw);
          Var fused = g.bilinear_tucker(s1, s2, g.param(cores_[static_cast<std::size_t>(c)]));
          z = z.valid() ? g.concat_cols(z, fused) : fused;
        }
        if (cfg_.normalize) z = g.l2_normalize(g.signed_sqrt(z), kNormEps);
        return g.affine(z, g.param(wout_), Var{});
      }
    }
    throw ConfigError("unreachable fusion kind");
  }

  /// Tests only: drop the tanh in mlb to expose the bilinear sign structure.
  bool linear_variant = false;

  static constexpr double kNormEps = 1e-12;

 private:
  FusionConfig cfg_;
  std::string prefix_;
  int u_ = -1, v_ = -1, wout_ = -1, bout_ = -1;
  std::vector<int> mlp_w_, mlp_b_;
  std::vector<int> stage_u_, stage_v_;
  std::vector<int> chunk_a_, chunk_b_;
  std::vector<int> cores_;

  static void check_input(Graph<T>& g, Var x, int want, const char* which) {
    const auto& t = g.value(x);
    if (t.cols() != want)
      throw ShapeError(std::string("fusion ") + which + " expects width " +
                       std::to_string(want) + ", got " + t.shape_str());
  }

  Var pool_and_normalize(Graph<T>& g, Var z) const {
    Var pooled = g.chunk_sum_pool(z, cfg_.pool_k);
    if (!cfg_.normalize) return pooled;
    return g.l2_normalize(g.signed_sqrt(pooled), kNormEps);
  }
};

}  // namespace afn
