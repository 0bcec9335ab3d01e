#include "afn/model.hpp"

#include <cmath>

#include "json.hpp"

namespace afn {

using json = nlohmann::json;

std::string to_string(Arch a) {
  switch (a) {
    case Arch::Unimodal: return "unimodal";
    case Arch::Bimodal: return "bimodal";
    case Arch::ConcatAll: return "concat_all";
    case Arch::ConcatWoText: return "concat_wo_text";
    case Arch::SlowFusion: return "slow_fusion";
    case Arch::AutoFraudNet: return "autofraudnet";
    case Arch::AutoFraudNetHeads: return "autofraudnet_heads";
  }
  return "?";
}

Arch arch_from_string(const std::string& s) {
  for (Arch a : {Arch::Unimodal, Arch::Bimodal, Arch::ConcatAll, Arch::ConcatWoText,
                 Arch::SlowFusion, Arch::AutoFraudNet, Arch::AutoFraudNetHeads})
    if (s == to_string(a)) return a;
  throw ConfigError(
      "unknown arch '" + s +
      "'; expected one of unimodal, bimodal, concat_all, concat_wo_text, slow_fusion, "
      "autofraudnet, autofraudnet_heads");
}

std::string to_string(FeatureId f) {
  switch (f) {
    case FeatureId::CDS: return "CDS";
    case FeatureId::UD: return "UD";
    case FeatureId::SPUD: return "SPUD";
    case FeatureId::Struct: return "Struct";
    case FeatureId::Text: return "Text";
  }
  return "?";
}

FeatureId feature_from_string(const std::string& s) {
  for (FeatureId f : {FeatureId::CDS, FeatureId::UD, FeatureId::SPUD, FeatureId::Struct,
                      FeatureId::Text})
    if (s == to_string(f)) return f;
  throw ConfigError("unknown feature '" + s +
                    "'; expected one of CDS, UD, SPUD, Struct, Text");
}

Modality modality_of(FeatureId f) {
  switch (f) {
    case FeatureId::CDS:
    case FeatureId::UD: return Modality::Visual;
    case FeatureId::SPUD:
    case FeatureId::Struct: return Modality::Tabular;
    case FeatureId::Text: return Modality::Text;
  }
  return Modality::Text;
}

std::string to_string(Modality m) {
  switch (m) {
    case Modality::Visual: return "visual";
    case Modality::Tabular: return "tabular";
    case Modality::Text: return "text";
  }
  return "?";
}

std::vector<std::pair<FeatureId, FeatureId>> enumerate_pairs() {
  std::vector<std::pair<FeatureId, FeatureId>> out;
  for (FeatureId v : {FeatureId::CDS, FeatureId::UD})
    for (FeatureId t : {FeatureId::SPUD, FeatureId::Struct}) out.emplace_back(v, t);
  for (FeatureId f : {FeatureId::CDS, FeatureId::UD, FeatureId::SPUD, FeatureId::Struct})
    out.emplace_back(f, FeatureId::Text);
  return out;
}

std::vector<FeatureId> required_features(const ModelConfig& cfg) {
  switch (cfg.arch) {
    case Arch::Unimodal: return {cfg.feature};
    case Arch::Bimodal: return {cfg.pair_a, cfg.pair_b};
    case Arch::ConcatAll:
      return {FeatureId::CDS, FeatureId::UD, FeatureId::SPUD, FeatureId::Struct,
              FeatureId::Text};
    case Arch::ConcatWoText:
    case Arch::SlowFusion:
    case Arch::AutoFraudNet:
    case Arch::AutoFraudNetHeads:
      return {FeatureId::CDS, FeatureId::UD, FeatureId::SPUD, FeatureId::Struct};
  }
  return {};
}

void ModelConfig::validate() const {
  if (encoder_hidden <= 0)
    throw ConfigError("encoder_hidden must be positive, got " +
                      std::to_string(encoder_hidden));
  for (int h : mlp_hidden)
    if (h <= 0)
      throw ConfigError("mlp_hidden entries must be positive, got " + std::to_string(h));
  if (!(dropout_p >= 0.0 && dropout_p < 1.0))
    throw ConfigError("dropout_p must lie in [0,1), got " + std::to_string(dropout_p));
  for (double w : {w_f1, w_f2, w_c})
    if (!std::isfinite(w) || w < 0.0)
      throw ConfigError("loss weights must be finite and non-negative");
  for (int d : {dims.cds, dims.ud, dims.spud, dims.struct_dim, dims.text, dims.image_emb})
    if (d <= 0) throw ConfigError("feature dims must be positive");
  if (arch == Arch::Bimodal && modality_of(pair_a) == modality_of(pair_b))
    throw ConfigError("bimodal pair (" + to_string(pair_a) + ", " + to_string(pair_b) +
                      ") shares modality " + to_string(modality_of(pair_a)) +
                      "; pick one feature per modality");
}

std::string ModelConfig::to_json() const {
  json j;
  j["arch"] = to_string(arch);
  j["feature"] = to_string(feature);
  j["pair"] = {to_string(pair_a), to_string(pair_b)};
  j["fusion1"] = json::parse(fusion1.to_json());
  j["fusion2"] = json::parse(fusion2.to_json());
  j["mlp_hidden"] = mlp_hidden;
  j["dropout_p"] = dropout_p;
  j["encoder_hidden"] = encoder_hidden;
  j["loss_weights"] = {w_f1, w_f2, w_c};
  j["dims"] = {{"cds", dims.cds},       {"ud", dims.ud},
               {"spud", dims.spud},     {"struct", dims.struct_dim},
               {"text", dims.text},     {"image_emb", dims.image_emb}};
  return j.dump();
}

ModelConfig ModelConfig::from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("model config is not valid JSON: ") + e.what());
  }
  if (!j.is_object()) throw ConfigError("model config must be a JSON object");

  ModelConfig cfg;
  try {
    for (const auto& [key, value] : j.items()) {
      if (key == "arch")
        cfg.arch = arch_from_string(value.get<std::string>());
      else if (key == "feature")
        cfg.feature = feature_from_string(value.get<std::string>());
      else if (key == "pair") {
        auto p = value.get<std::vector<std::string>>();
        if (p.size() != 2)
          throw ConfigError("pair must hold exactly two features, got " +
                            std::to_string(p.size()));
        cfg.pair_a = feature_from_string(p[0]);
        cfg.pair_b = feature_from_string(p[1]);
      } else if (key == "fusion1")
        cfg.fusion1 = FusionConfig::from_json(value.dump());
      else if (key == "fusion2")
        cfg.fusion2 = FusionConfig::from_json(value.dump());
      else if (key == "mlp_hidden")
        cfg.mlp_hidden = value.get<std::vector<int>>();
      else if (key == "dropout_p")
        cfg.dropout_p = value.get<double>();
      else if (key == "encoder_hidden")
        cfg.encoder_hidden = value.get<int>();
      else if (key == "loss_weights") {
        auto w = value.get<std::vector<double>>();
        if (w.size() != 3)
          throw ConfigError("loss_weights must hold exactly three values, got " +
                            std::to_string(w.size()));
        cfg.w_f1 = w[0];
        cfg.w_f2 = w[1];
        cfg.w_c = w[2];
      } else if (key == "dims") {
        for (const auto& [dk, dv] : value.items()) {
          if (dk == "cds")
            cfg.dims.cds = dv.get<int>();
          else if (dk == "ud")
            cfg.dims.ud = dv.get<int>();
          else if (dk == "spud")
            cfg.dims.spud = dv.get<int>();
          else if (dk == "struct")
            cfg.dims.struct_dim = dv.get<int>();
          else if (dk == "text")
            cfg.dims.text = dv.get<int>();
          else if (dk == "image_emb")
            cfg.dims.image_emb = dv.get<int>();
          else
            throw ConfigError("unknown dims key: " + dk);
        }
      } else
        throw ConfigError("unknown model config key: " + key);
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("model config field has the wrong type: ") + e.what());
  }
  return cfg;
}

std::int64_t parameter_count(const ModelConfig& cfg) {
  cfg.validate();
  const FeatureDims& dm = cfg.dims;
  auto encoder = [&](int out) {
    return static_cast<std::int64_t>(dm.image_emb + 1) * cfg.encoder_hidden +
           static_cast<std::int64_t>(cfg.encoder_hidden + 1) * out;
  };
  auto head = [](std::int64_t in) { return (in + 1) * 2; };
  auto trunk = [&](std::int64_t in) {
    std::int64_t total = 0, prev = in;
    for (int h : cfg.mlp_hidden) {
      total += (prev + 1) * h;
      prev = h;
    }
    return total + head(prev);
  };
  auto fill = [](FusionConfig f, int a, int b) {
    f.d1 = a;
    f.d2 = b;
    f.validate();
    return f;
  };

  std::int64_t total = 0;
  const auto feats = required_features(cfg);
  auto needs = [&](FeatureId f) {
    return std::find(feats.begin(), feats.end(), f) != feats.end();
  };
  if (needs(FeatureId::CDS)) total += encoder(dm.cds);
  if (needs(FeatureId::UD)) total += encoder(dm.ud);

  switch (cfg.arch) {
    case Arch::Unimodal:
      total += trunk(dm.of(cfg.feature));
      break;
    case Arch::Bimodal: {
      auto f = fill(cfg.fusion1, dm.of(cfg.pair_a), dm.of(cfg.pair_b));
      total += parameter_count(f) + head(f.output_length());
      break;
    }
    case Arch::ConcatAll:
    case Arch::ConcatWoText: {
      std::int64_t width = 0;
      for (auto f : feats) width += dm.of(f);
      total += trunk(width);
      break;
    }
    case Arch::SlowFusion:
    case Arch::AutoFraudNet:
    case Arch::AutoFraudNetHeads: {
      auto c1 = fill(cfg.fusion1, dm.cds, dm.spud);
      auto c2 = fill(cfg.fusion1, dm.ud, dm.struct_dim);
      total += parameter_count(c1) + parameter_count(c2);
      const std::int64_t o1 = c1.output_length(), o2 = c2.output_length();
      if (cfg.arch == Arch::SlowFusion) {
        auto c3 = fill(cfg.fusion2, static_cast<int>(o1), static_cast<int>(o2));
        total += parameter_count(c3) + head(c3.output_length());
      } else {
        total += head(o1 + o2);
        if (cfg.has_heads()) total += head(o1) + head(o2);
      }
      break;
    }
  }
  return total;
}

}  // namespace afn
