#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "afn/features.hpp"
#include "afn/model.hpp"

namespace afn {

// ---------------------------------------------------------------------------
// Synthetic claims with a planted cross-modal signal
// ---------------------------------------------------------------------------

/// The label depends on two latent factors: a visual one feeding the image
/// embeddings and part scores, and a tabular one feeding the structured
/// one-hots and the (heavily noised) text embedding. The interaction term
/// beta * s_v * s_t is a sign product no single modality can resolve.
struct SynthConfig {
  std::int64_t n_claims = 20000;
  double fraud_rate = 0.03;
  int min_images = 1;
  int max_images = 6;
  int latent_v = 2;  // visual latent width
  int latent_t = 2;  // tabular latent width
  double beta = 2.2;     // cross-modal interaction strength
  double alpha_v = 0.8;  // visual-only leak
  double alpha_t = 0.6;  // tabular-only leak
  double sigma = 1.0;    // global feature-noise scale
  std::uint64_t seed = 1;

  void validate() const;
  std::string to_json() const;
  static SynthConfig from_json(const std::string& text);
};

/// Per-claim latent summaries, exposed for oracle studies; b0 is the
/// intercept calibrated so the expected fraud rate matches the config.
struct SynthLatents {
  std::vector<double> s_v, s_t;
  double b0 = 0.0;
};

std::vector<ClaimRecord> generate_synthetic(const SynthConfig& cfg,
                                            SynthLatents* latents = nullptr);

// ---------------------------------------------------------------------------
// Claim files: one JSON object per line
// ---------------------------------------------------------------------------

void save_claims(const std::vector<ClaimRecord>& claims, const std::string& path);

/// Validates every record; errors carry the 1-based line number and the field
/// path. Claims without text load fine and keep text absent.
std::vector<ClaimRecord> load_claims(const std::string& path);

// ---------------------------------------------------------------------------
// Checkpoints: magic, manifest, then raw little-endian f32 arrays
// ---------------------------------------------------------------------------

void save_checkpoint(Model<float>& model, const std::string& path);

/// Rebuilds the model from the embedded config and restores every parameter
/// bit-exactly. When `expected` is given, a checkpoint whose config differs
/// (say arch A loaded as arch B) raises ConfigError instead of loading.
Model<float> load_checkpoint(const std::string& path, const ModelConfig* expected = nullptr);

/// The config echo alone, without materializing parameters.
ModelConfig load_checkpoint_config(const std::string& path);

}  // namespace afn
