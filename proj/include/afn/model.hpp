#pragma once

#include <algorithm>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "afn/errors.hpp"
#include "afn/features.hpp"
#include "afn/fusion.hpp"
#include "afn/graph.hpp"
#include "afn/init.hpp"
#include "afn/metrics.hpp"

namespace afn {

// ---------------------------------------------------------------------------
// Architectures and feature identifiers
// ---------------------------------------------------------------------------

enum class Arch {
  Unimodal,
  Bimodal,
  ConcatAll,
  ConcatWoText,
  SlowFusion,
  AutoFraudNet,
  AutoFraudNetHeads,
};

std::string to_string(Arch a);
Arch arch_from_string(const std::string& s);

enum class FeatureId { CDS, UD, SPUD, Struct, Text };

std::string to_string(FeatureId f);
FeatureId feature_from_string(const std::string& s);

enum class Modality { Visual, Tabular, Text };

Modality modality_of(FeatureId f);
std::string to_string(Modality m);

/// Every cross-modality feature pair, in a fixed order: the four
/// visual x tabular pairs first, then each non-text feature with Text.
std::vector<std::pair<FeatureId, FeatureId>> enumerate_pairs();

/// Claim-level feature widths. Defaults match the data contract; tests shrink
/// them so end-to-end gradient checks stay cheap.
struct FeatureDims {
  int cds = kVisualFeatDim;
  int ud = kVisualFeatDim;
  int spud = kSpudDim;
  int struct_dim = kStructDim;
  int text = kTextDim;
  int image_emb = kImageEmbDim;

  int of(FeatureId f) const {
    switch (f) {
      case FeatureId::CDS: return cds;
      case FeatureId::UD: return ud;
      case FeatureId::SPUD: return spud;
      case FeatureId::Struct: return struct_dim;
      case FeatureId::Text: return text;
    }
    return 0;
  }
};

// ---------------------------------------------------------------------------
// Model configuration
// ---------------------------------------------------------------------------

/// `fusion1` is the bimodal block, and for the slow-fusion family the template
/// applied to both first-layer blocks (input widths are filled per pair).
/// `fusion2` is the slow-fusion second layer. AutoFraudNet replaces the second
/// layer with one fully connected layer on the concatenated outputs.
struct ModelConfig {
  Arch arch = Arch::AutoFraudNet;
  FeatureId feature = FeatureId::CDS;  // unimodal only
  FeatureId pair_a = FeatureId::CDS;   // bimodal only
  FeatureId pair_b = FeatureId::SPUD;
  FusionConfig fusion1;
  FusionConfig fusion2;
  std::vector<int> mlp_hidden = {500, 500};  // unimodal / concat trunk
  double dropout_p = 0.5;                    // trunk dropout
  int encoder_hidden = 200;
  // Loss weights over (f1, f2, c); the defaults keep the sum unweighted.
  double w_f1 = 1.0, w_f2 = 1.0, w_c = 1.0;
  FeatureDims dims;

  ModelConfig() {
    fusion1.kind = FusionKind::BlockTucker;
    fusion2.kind = FusionKind::BlockTucker;
  }

  bool has_heads() const { return arch == Arch::AutoFraudNetHeads; }
  void validate() const;
  std::string to_json() const;
  static ModelConfig from_json(const std::string& text);
};

/// Feature vectors a given architecture consumes, in concat order.
std::vector<FeatureId> required_features(const ModelConfig& cfg);

/// Analytic scalar-parameter count; must equal what construction registers.
std::int64_t parameter_count(const ModelConfig& cfg);

// ---------------------------------------------------------------------------
// Dataset tensors: claim records flattened once, gathered per batch
// ---------------------------------------------------------------------------

template <typename T>
struct DatasetTensors {
  std::vector<std::string> claim_ids;
  std::vector<int> labels;
  Tensor<T> spud;     // [N x spud]
  Tensor<T> structs;  // [N x struct]
  Tensor<T> text;     // [N x text]; zero rows where absent
  std::vector<std::uint8_t> has_text;
  Tensor<T> cds_images;  // [M x image_emb], claims back to back
  Tensor<T> ud_images;   // [M x image_emb]
  std::vector<std::int64_t> image_offset;  // per claim
  std::vector<std::int64_t> image_count;

  std::int64_t size() const { return static_cast<std::int64_t>(labels.size()); }
};

template <typename T>
DatasetTensors<T> build_dataset_tensors(const std::vector<ClaimRecord>& claims) {
  DatasetTensors<T> out;
  const auto n = static_cast<std::int64_t>(claims.size());
  if (n == 0) throw DataError("dataset holds no claims");
  std::int64_t total_images = 0;
  for (const auto& rec : claims) {
    validate_claim(rec);
    total_images += static_cast<std::int64_t>(rec.images.size());
  }
  out.claim_ids.reserve(static_cast<std::size_t>(n));
  out.labels.reserve(static_cast<std::size_t>(n));
  out.spud = Tensor<T>::zeros({n, kSpudDim});
  out.structs = Tensor<T>::zeros({n, kStructDim});
  out.text = Tensor<T>::zeros({n, kTextDim});
  out.has_text.assign(static_cast<std::size_t>(n), 0);
  out.cds_images = Tensor<T>::zeros({total_images, kImageEmbDim});
  out.ud_images = Tensor<T>::zeros({total_images, kImageEmbDim});
  out.image_offset.resize(static_cast<std::size_t>(n));
  out.image_count.resize(static_cast<std::size_t>(n));

  std::int64_t img = 0;
  for (std::int64_t i = 0; i < n; ++i) {
    const auto& rec = claims[static_cast<std::size_t>(i)];
    out.claim_ids.push_back(rec.claim_id);
    out.labels.push_back(rec.label);
    const auto spud = aggregate_spud(rec.images);
    for (int j = 0; j < kSpudDim; ++j)
      out.spud.at(i, j) = static_cast<T>(spud[static_cast<std::size_t>(j)]);
    for (int j = 0; j < kStructDim; ++j)
      out.structs.at(i, j) = static_cast<T>(rec.struct_onehot[static_cast<std::size_t>(j)]);
    if (rec.text_emb.has_value()) {
      out.has_text[static_cast<std::size_t>(i)] = 1;
      for (int j = 0; j < kTextDim; ++j)
        out.text.at(i, j) = static_cast<T>((*rec.text_emb)[static_cast<std::size_t>(j)]);
    }
    out.image_offset[static_cast<std::size_t>(i)] = img;
    out.image_count[static_cast<std::size_t>(i)] =
        static_cast<std::int64_t>(rec.images.size());
    for (const auto& im : rec.images) {
      for (int j = 0; j < kImageEmbDim; ++j) {
        out.cds_images.at(img, j) = static_cast<T>(im.cds_emb[static_cast<std::size_t>(j)]);
        out.ud_images.at(img, j) = static_cast<T>(im.ud_emb[static_cast<std::size_t>(j)]);
      }
      ++img;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Model
// ---------------------------------------------------------------------------

struct ModelOutputs {
  Var logits_c;   // [b x 2]
  Var logits_f1;  // heads architecture only
  Var logits_f2;
  Var a_f1;  // fusion activations where the architecture defines them
  Var a_f2;
  Var a_c;
  bool has_heads = false;
};

/// Scalar loss values plus the graph node to backprop. For the heads
/// architecture total = w_f1*l_f1 + w_f2*l_f2 + w_c*l_c; otherwise l_c alone.
struct LossBundle {
  double l_f1 = 0.0;
  double l_f2 = 0.0;
  double l_c = 0.0;
  double total = 0.0;
  Var total_var;
};

template <typename T>
class Model {
 public:
  explicit Model(ModelConfig cfg, std::uint64_t init_seed = 0) : cfg_(std::move(cfg)) {
    cfg_.validate();
    const FeatureDims& dm = cfg_.dims;
    const auto feats = required_features(cfg_);
    auto needs = [&](FeatureId f) {
      return std::find(feats.begin(), feats.end(), f) != feats.end();
    };
    if (needs(FeatureId::CDS))
      enc_cds_ = VisualEncoder<T>(g_, "enc_cds", cfg_.encoder_hidden, init_seed, dm.cds,
                                  dm.image_emb);
    if (needs(FeatureId::UD))
      enc_ud_ = VisualEncoder<T>(g_, "enc_ud", cfg_.encoder_hidden, init_seed, dm.ud,
                                 dm.image_emb);

    switch (cfg_.arch) {
      case Arch::Unimodal:
        build_trunk(dm.of(cfg_.feature), init_seed);
        break;
      case Arch::Bimodal: {
        auto fc = instantiate(cfg_.fusion1, dm.of(cfg_.pair_a), dm.of(cfg_.pair_b));
        fusion_.emplace(g_, fc, "fusion", init_seed);
        add_head("head_c", fc.output_length(), init_seed, head_c_w_, head_c_b_);
        break;
      }
      case Arch::ConcatAll:
      case Arch::ConcatWoText: {
        int width = 0;
        for (auto f : feats) width += dm.of(f);
        build_trunk(width, init_seed);
        break;
      }
      case Arch::SlowFusion:
      case Arch::AutoFraudNet:
      case Arch::AutoFraudNetHeads: {
        auto c1 = instantiate(cfg_.fusion1, dm.cds, dm.spud);
        auto c2 = instantiate(cfg_.fusion1, dm.ud, dm.struct_dim);
        f1_.emplace(g_, c1, "f1", init_seed);
        f2_.emplace(g_, c2, "f2", init_seed);
        const int o1 = c1.output_length(), o2 = c2.output_length();
        if (cfg_.arch == Arch::SlowFusion) {
          auto c3 = instantiate(cfg_.fusion2, o1, o2);
          fusion2_.emplace(g_, c3, "fusion2", init_seed);
          add_head("head_c", c3.output_length(), init_seed, head_c_w_, head_c_b_);
        } else {
          add_head("head_c", o1 + o2, init_seed, head_c_w_, head_c_b_);
          if (cfg_.has_heads()) {
            add_head("head_f1", o1, init_seed, head_f1_w_, head_f1_b_);
            add_head("head_f2", o2, init_seed, head_f2_w_, head_f2_b_);
          }
        }
        break;
      }
    }
  }

  const ModelConfig& config() const { return cfg_; }
  Graph<T>& graph() { return g_; }
  const Graph<T>& graph() const { return g_; }

  /// Records one batch on the tape. Does not reset the graph; callers own the
  /// tape lifecycle (the trainer resets before every step).
  ModelOutputs forward(const DatasetTensors<T>& data, const std::vector<std::int64_t>& idx,
                       const FwdCtx& ctx) {
    check_index(data, idx);
    ModelOutputs out;
    switch (cfg_.arch) {
      case Arch::Unimodal: {
        Var x = feature_var(data, idx, cfg_.feature, ctx);
        out.logits_c = trunk_forward(x, ctx);
        break;
      }
      case Arch::Bimodal: {
        Var x1 = feature_var(data, idx, cfg_.pair_a, ctx);
        Var x2 = feature_var(data, idx, cfg_.pair_b, ctx);
        out.a_c = fusion_->forward(g_, x1, x2, ctx);
        out.logits_c = g_.affine(out.a_c, g_.param(head_c_w_), g_.param(head_c_b_));
        break;
      }
      case Arch::ConcatAll:
      case Arch::ConcatWoText: {
        Var cat;
        for (auto f : required_features(cfg_)) {
          Var x = feature_var(data, idx, f, ctx);
          cat = cat.valid() ? g_.concat_cols(cat, x) : x;
        }
        out.logits_c = trunk_forward(cat, ctx);
        break;
      }
      case Arch::SlowFusion:
      case Arch::AutoFraudNet:
      case Arch::AutoFraudNetHeads: {
        Var a_cds = feature_var(data, idx, FeatureId::CDS, ctx);
        Var a_ud = feature_var(data, idx, FeatureId::UD, ctx);
        Var a_spud = feature_var(data, idx, FeatureId::SPUD, ctx);
        Var a_struct = feature_var(data, idx, FeatureId::Struct, ctx);
        out.a_f1 = f1_->forward(g_, a_cds, a_spud, ctx);
        out.a_f2 = f2_->forward(g_, a_ud, a_struct, ctx);
        if (cfg_.arch == Arch::SlowFusion) {
          out.a_c = fusion2_->forward(g_, out.a_f1, out.a_f2, ctx);
        } else {
          out.a_c = g_.concat_cols(out.a_f1, out.a_f2);
        }
        out.logits_c = g_.affine(out.a_c, g_.param(head_c_w_), g_.param(head_c_b_));
        if (cfg_.has_heads()) {
          out.has_heads = true;
          out.logits_f1 = g_.affine(out.a_f1, g_.param(head_f1_w_), g_.param(head_f1_b_));
          out.logits_f2 = g_.affine(out.a_f2, g_.param(head_f2_w_), g_.param(head_f2_b_));
        }
        break;
      }
    }
    return out;
  }

  /// Forward + cross-entropy on the batch labels.
  LossBundle loss(const DatasetTensors<T>& data, const std::vector<std::int64_t>& idx,
                  const FwdCtx& ctx) {
    auto outs = forward(data, idx, ctx);
    std::vector<int> labels;
    labels.reserve(idx.size());
    for (auto i : idx) labels.push_back(data.labels[static_cast<std::size_t>(i)]);

    LossBundle b;
    Var l_c = g_.softmax_cross_entropy(outs.logits_c, labels);
    b.l_c = static_cast<double>(g_.value(l_c).v[0]);
    if (outs.has_heads) {
      Var l_f1 = g_.softmax_cross_entropy(outs.logits_f1, labels);
      Var l_f2 = g_.softmax_cross_entropy(outs.logits_f2, labels);
      b.l_f1 = static_cast<double>(g_.value(l_f1).v[0]);
      b.l_f2 = static_cast<double>(g_.value(l_f2).v[0]);
      Var t = g_.add(weighted(l_f1, cfg_.w_f1), weighted(l_f2, cfg_.w_f2));
      b.total_var = g_.add(t, weighted(l_c, cfg_.w_c));
    } else {
      b.total_var = weighted(l_c, cfg_.w_c);
    }
    b.total = static_cast<double>(g_.value(b.total_var).v[0]);
    return b;
  }

  /// Eval-mode fraud probabilities. Resets the graph between chunks, so any
  /// Vars held by the caller are invalidated.
  std::vector<double> scores(const DatasetTensors<T>& data,
                             const std::vector<std::int64_t>& idx) {
    std::vector<double> out;
    out.reserve(idx.size());
    const std::int64_t chunk = 256;
    FwdCtx eval;
    for (std::size_t lo = 0; lo < idx.size(); lo += static_cast<std::size_t>(chunk)) {
      const auto hi = std::min(idx.size(), lo + static_cast<std::size_t>(chunk));
      std::vector<std::int64_t> part(idx.begin() + static_cast<std::ptrdiff_t>(lo),
                                     idx.begin() + static_cast<std::ptrdiff_t>(hi));
      g_.reset();
      auto outs = forward(data, part, eval);
      const auto& logits = g_.value(outs.logits_c);
      for (std::int64_t r = 0; r < logits.rows(); ++r) {
        const double d = static_cast<double>(logits.at(r, 0)) -
                         static_cast<double>(logits.at(r, 1));
        out.push_back(1.0 / (1.0 + std::exp(d)));
      }
    }
    g_.reset();
    return out;
  }

  ScoredSet scored_set(const DatasetTensors<T>& data, const std::vector<std::int64_t>& idx) {
    ScoredSet s;
    s.scores = scores(data, idx);
    s.labels.reserve(idx.size());
    for (auto i : idx) s.labels.push_back(data.labels[static_cast<std::size_t>(i)]);
    return s;
  }

 private:
  static FusionConfig instantiate(FusionConfig cfg, int d1, int d2) {
    cfg.d1 = d1;
    cfg.d2 = d2;
    cfg.validate();
    return cfg;
  }

  void add_head(const std::string& name, int in_dim, std::uint64_t seed, int& w, int& b) {
    w = g_.add_param(name + "/w",
                     init_uniform_fan_in<T>({2, in_dim}, in_dim, seed, name + "/w"));
    b = g_.add_param(name + "/b", Tensor<T>::zeros({2}));
  }

  void build_trunk(int in_dim, std::uint64_t seed) {
    int prev = in_dim;
    for (std::size_t i = 0; i < cfg_.mlp_hidden.size(); ++i) {
      const int h = cfg_.mlp_hidden[i];
      const std::string stem = "mlp/" + std::to_string(i);
      int w = g_.add_param(stem + "_w",
                           init_uniform_fan_in<T>({h, prev}, prev, seed, stem + "_w"));
      int b = g_.add_param(stem + "_b", Tensor<T>::zeros({h}));
      mlp_.emplace_back(w, b);
      prev = h;
    }
    add_head("head_c", prev, seed, head_c_w_, head_c_b_);
  }

  Var trunk_forward(Var x, const FwdCtx& ctx) {
    Var h = x;
    for (std::size_t i = 0; i < mlp_.size(); ++i) {
      h = g_.affine(h, g_.param(mlp_[i].first), g_.param(mlp_[i].second));
      h = g_.relu(h);
      h = g_.dropout(h, cfg_.dropout_p, ctx.training,
                     dropout_key(ctx, "mlp/drop" + std::to_string(i)));
    }
    return g_.affine(h, g_.param(head_c_w_), g_.param(head_c_b_));
  }

  Var weighted(Var loss, double w) { return w == 1.0 ? loss : g_.scale(loss, w); }

  void check_index(const DatasetTensors<T>& data, const std::vector<std::int64_t>& idx) {
    if (idx.empty()) throw DataError("batch holds no claims");
    for (auto i : idx)
      if (i < 0 || i >= data.size())
        throw DataError("claim index " + std::to_string(i) + " outside dataset of " +
                        std::to_string(data.size()));
  }

  /// Gather one claim-level feature matrix [b x dim] for the batch.
  Var feature_var(const DatasetTensors<T>& data, const std::vector<std::int64_t>& idx,
                  FeatureId f, const FwdCtx& ctx) {
    (void)ctx;
    switch (f) {
      case FeatureId::CDS:
        return encode_stream(data, idx, data.cds_images, enc_cds_);
      case FeatureId::UD:
        return encode_stream(data, idx, data.ud_images, enc_ud_);
      case FeatureId::SPUD:
        return g_.input(gather_rows(data.spud, idx));
      case FeatureId::Struct:
        return g_.input(gather_rows(data.structs, idx));
      case FeatureId::Text: {
        for (auto i : idx)
          if (!data.has_text[static_cast<std::size_t>(i)])
            throw DataError("claim " + data.claim_ids[static_cast<std::size_t>(i)] +
                            ": missing required modality Text");
        return g_.input(gather_rows(data.text, idx));
      }
    }
    throw ConfigError("unknown feature id");
  }

  Var encode_stream(const DatasetTensors<T>& data, const std::vector<std::int64_t>& idx,
                    const Tensor<T>& images, const VisualEncoder<T>& enc) {
    std::int64_t total = 0;
    for (auto i : idx) total += data.image_count[static_cast<std::size_t>(i)];
    const std::int64_t width = images.cols();
    auto stack = Tensor<T>::zeros({total, width});
    std::vector<std::int64_t> segments;
    segments.reserve(idx.size());
    std::int64_t r = 0;
    for (auto i : idx) {
      const auto off = data.image_offset[static_cast<std::size_t>(i)];
      const auto cnt = data.image_count[static_cast<std::size_t>(i)];
      std::copy_n(images.v.begin() + off * width, cnt * width, stack.v.begin() + r * width);
      r += cnt;
      segments.push_back(cnt);
    }
    Var per_image = enc.forward(g_, g_.input(std::move(stack)));
    return g_.segment_mean(per_image, segments);
  }

  static Tensor<T> gather_rows(const Tensor<T>& m, const std::vector<std::int64_t>& idx) {
    const std::int64_t width = m.cols();
    auto out = Tensor<T>::zeros({static_cast<std::int64_t>(idx.size()), width});
    for (std::size_t r = 0; r < idx.size(); ++r)
      std::copy_n(m.v.begin() + idx[r] * width, width,
                  out.v.begin() + static_cast<std::int64_t>(r) * width);
    return out;
  }

  ModelConfig cfg_;
  Graph<T> g_;
  VisualEncoder<T> enc_cds_, enc_ud_;
  std::optional<FusionBlock<T>> fusion_;   // bimodal
  std::optional<FusionBlock<T>> f1_, f2_;  // slow-fusion first layer
  std::optional<FusionBlock<T>> fusion2_;  // slow-fusion second layer
  std::vector<std::pair<int, int>> mlp_;
  int head_c_w_ = -1, head_c_b_ = -1;
  int head_f1_w_ = -1, head_f1_b_ = -1;
  int head_f2_w_ = -1, head_f2_b_ = -1;
};

}  // namespace afn
