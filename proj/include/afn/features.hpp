#pragma once

#include <optional>
#include <string>
#include <vector>

#include "afn/graph.hpp"
#include "afn/init.hpp"

namespace afn {

// Feature geometry fixed by the data contract.
inline constexpr int kImageEmbDim = 720;   // CDS / UD image embeddings
inline constexpr int kPartCount = 21;      // vehicle parts scored per image
inline constexpr int kVisualFeatDim = 50;  // claim-level A_CDS / A_UD width
inline constexpr int kSpudDim = 126;       // 2 score sets x 3 stats x 21 parts
inline constexpr int kStructDim = 87;      // one-hot structured feature
inline constexpr int kTextDim = 768;       // opaque text embedding

/// One photo's precomputed model outputs.
struct ImageRecord {
  std::vector<float> cds_emb;   // [720]
  std::vector<float> ud_emb;    // [720]
  std::vector<float> part_vis;  // [21], each in [0,1]
  std::vector<float> ud_score;  // [21], each in [0,1]
};

/// One claim's raw multimodal inputs.
struct ClaimRecord {
  std::string claim_id;
  int label = 0;  // 1 = fraudulent
  std::vector<ImageRecord> images;
  std::vector<float> struct_onehot;               // [87], entries 0/1
  std::optional<std::vector<float>> text_emb;     // [768] when present
};

/// The claim-level feature vectors a model consumes.
template <typename T>
struct ClaimFeatureSet {
  std::vector<T> a_cds;    // [50]
  std::vector<T> a_ud;     // [50]
  std::vector<T> a_spud;   // [126]
  std::vector<T> a_struct; // [87]
  std::optional<std::vector<T>> a_text;  // [768]
};

/// Throws DataError naming the first offending field.
void validate_claim(const ClaimRecord& rec);

/// Score pair for a part absent from an image: invisible and undamaged.
inline std::pair<float, float> impute_absent_part(int part_index) {
  if (part_index < 0 || part_index >= kPartCount)
    throw ConfigError("impute_absent_part: index " + std::to_string(part_index) +
                      " outside [0," + std::to_string(kPartCount) + ")");
  return {0.0f, 0.0f};
}

/// Max/min/mean of part_vis then ud_score over a claim's images.
/// Layout: [vis-max[21], vis-min[21], vis-mean[21],
///          ud-max[21],  ud-min[21],  ud-mean[21]].
std::vector<float> aggregate_spud(const std::vector<ImageRecord>& images);

/// Two affine layers 720 -> hidden -> 50 with ReLU between, one instance per
/// visual stream. Parameters live in the shared Graph registry.
template <typename T>
struct VisualEncoder {
  int w1 = -1, b1 = -1, w2 = -1, b2 = -1;
  int hidden = 0;

  VisualEncoder() = default;

  /// in_dim/out_dim default to the data contract; tests shrink them.
  VisualEncoder(Graph<T>& g, const std::string& prefix, int hidden_width, std::uint64_t seed,
                int out_dim = kVisualFeatDim, int in_dim = kImageEmbDim) {
    if (hidden_width <= 0)
      throw ConfigError("encoder hidden width must be positive, got " +
                        std::to_string(hidden_width));
    hidden = hidden_width;
    w1 = g.add_param(prefix + "/w1",
                     init_uniform_fan_in<T>({hidden, in_dim}, in_dim, seed, prefix + "/w1"));
    b1 = g.add_param(prefix + "/b1", Tensor<T>::zeros({hidden}));
    w2 = g.add_param(prefix + "/w2",
                     init_uniform_fan_in<T>({out_dim, hidden}, hidden, seed, prefix + "/w2"));
    b2 = g.add_param(prefix + "/b2", Tensor<T>::zeros({out_dim}));
  }

  /// [n x 720] image embeddings -> [n x 50] per-image representations.
  Var forward(Graph<T>& g, Var images) const {
    Var h = g.relu(g.affine(images, g.param(w1), g.param(b1)));
    return g.affine(h, g.param(w2), g.param(b2));
  }
};

/// Encode a claim's images and average-pool to one 50-d row. Differentiable
/// through both layers and the mean.
template <typename T>
Var encode_image_set(Graph<T>& g, const VisualEncoder<T>& enc, Var images) {
  const auto n = g.value(images).rows();
  return g.segment_mean(enc.forward(g, images), {n});
}

/// Materialize every claim-level feature (eval-mode encoders). `require_text`
/// reflects what the target model consumes; AutoFraudNet runs text-free.
template <typename T>
ClaimFeatureSet<T> assemble_feature_set(Graph<T>& g, const ClaimRecord& rec,
                                        const VisualEncoder<T>& enc_cds,
                                        const VisualEncoder<T>& enc_ud, bool require_text) {
  validate_claim(rec);
  if (require_text && !rec.text_emb.has_value())
    throw DataError("claim " + rec.claim_id + ": missing required modality Text");

  const auto n = static_cast<std::int64_t>(rec.images.size());
  auto stack = [&](auto member) {
    auto t = Tensor<T>::zeros({n, kImageEmbDim});
    for (std::int64_t i = 0; i < n; ++i) {
      const auto& src = rec.images[static_cast<std::size_t>(i)].*member;
      for (int j = 0; j < kImageEmbDim; ++j)
        t.v[static_cast<std::size_t>(i * kImageEmbDim + j)] =
            static_cast<T>(src[static_cast<std::size_t>(j)]);
    }
    return t;
  };

  ClaimFeatureSet<T> out;
  out.a_cds = g.value(encode_image_set(g, enc_cds, g.input(stack(&ImageRecord::cds_emb)))).v;
  out.a_ud = g.value(encode_image_set(g, enc_ud, g.input(stack(&ImageRecord::ud_emb)))).v;

  const auto spud = aggregate_spud(rec.images);
  out.a_spud.assign(spud.begin(), spud.end());
  out.a_struct.assign(rec.struct_onehot.begin(), rec.struct_onehot.end());
  if (rec.text_emb.has_value())
    out.a_text.emplace(rec.text_emb->begin(), rec.text_emb->end());
  return out;
}

}  // namespace afn
