#include "afn/fusion.hpp"

#include "afn/errors.hpp"
#include "json.hpp"

namespace afn {

using nlohmann::json;

std::string to_string(FusionKind k) {
  switch (k) {
    case FusionKind::ConcatMlp: return "concat_mlp";
    case FusionKind::LinearSum: return "linear_sum";
    case FusionKind::Mlb: return "mlb";
    case FusionKind::Mfb: return "mfb";
    case FusionKind::Mfh: return "mfh";
    case FusionKind::Block: return "block";
    case FusionKind::BlockTucker: return "block_tucker";
  }
  throw ConfigError("unknown fusion kind enum value");
}

FusionKind fusion_kind_from_string(const std::string& s) {
  for (FusionKind k : {FusionKind::ConcatMlp, FusionKind::LinearSum, FusionKind::Mlb,
                       FusionKind::Mfb, FusionKind::Mfh, FusionKind::Block,
                       FusionKind::BlockTucker})
    if (to_string(k) == s) return k;
  throw ConfigError("unknown fusion kind: " + s +
                    " (expected one of concat_mlp, linear_sum, mlb, mfb, mfh, block, "
                    "block_tucker)");
}

void FusionConfig::validate() const {
  auto positive = [](const char* name, int v) {
    if (v <= 0)
      throw ConfigError(std::string(name) + " must be positive, got " + std::to_string(v));
  };
  positive("d1", d1);
  positive("d2", d2);
  positive("mm_dim", mm_dim);
  positive("out_dim", out_dim);
  if (!(dropout_p >= 0.0 && dropout_p < 1.0))
    throw ConfigError("dropout_p must be in [0,1), got " + std::to_string(dropout_p));

  switch (kind) {
    case FusionKind::ConcatMlp:
      for (int h : mlp_hidden) positive("mlp_hidden entry", h);
      break;
    case FusionKind::LinearSum:
    case FusionKind::Mlb:
      break;
    case FusionKind::Mfh:
      positive("mfh_stages", mfh_stages);
      [[fallthrough]];
    case FusionKind::Mfb:
      positive("pool_k", pool_k);
      if (mm_dim % pool_k != 0)
        throw ConfigError("divisibility violation: mm_dim " + std::to_string(mm_dim) +
                          " not divisible by pool_k " + std::to_string(pool_k));
      if (out_dim * pool_k != mm_dim)
        throw ConfigError("divisibility violation: " + to_string(kind) +
                          " requires mm_dim = pool_k * out_dim, got mm_dim " +
                          std::to_string(mm_dim) + ", pool_k " + std::to_string(pool_k) +
                          ", out_dim " + std::to_string(out_dim));
      break;
    case FusionKind::Block:
      positive("rank", rank);
      [[fallthrough]];
    case FusionKind::BlockTucker:
      positive("chunks", chunks);
      if (mm_dim % chunks != 0)
        throw ConfigError("divisibility violation: mm_dim " + std::to_string(mm_dim) +
                          " not divisible by chunks " + std::to_string(chunks));
      if (out_dim % chunks != 0)
        throw ConfigError("divisibility violation: out_dim " + std::to_string(out_dim) +
                          " not divisible by chunks " + std::to_string(chunks));
      break;
  }
}

int FusionConfig::output_length() const {
  return kind == FusionKind::Mfh ? mfh_stages * out_dim : out_dim;
}

std::string FusionConfig::to_json() const {
  json j;
  j["kind"] = to_string(kind);
  j["in_dims"] = {d1, d2};
  j["mm_dim"] = mm_dim;
  j["out_dim"] = out_dim;
  j["chunks"] = chunks;
  j["rank"] = rank;
  j["pool_k"] = pool_k;
  j["mfh_stages"] = mfh_stages;
  j["mlp_hidden"] = mlp_hidden;
  j["dropout_p"] = dropout_p;
  j["normalize"] = normalize;
  return j.dump();
}

FusionConfig FusionConfig::from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("fusion config is not valid JSON: ") + e.what());
  }
  if (!j.is_object()) throw ConfigError("fusion config must be a JSON object");

  FusionConfig cfg;
  try {
    for (const auto& [key, value] : j.items()) {
      if (key == "kind")
        cfg.kind = fusion_kind_from_string(value.get<std::string>());
      else if (key == "in_dims") {
        auto dims = value.get<std::vector<int>>();
        if (dims.size() != 2)
          throw ConfigError("in_dims must hold exactly two widths, got " +
                            std::to_string(dims.size()));
        cfg.d1 = dims[0];
        cfg.d2 = dims[1];
      } else if (key == "mm_dim")
        cfg.mm_dim = value.get<int>();
      else if (key == "out_dim")
        cfg.out_dim = value.get<int>();
      else if (key == "chunks")
        cfg.chunks = value.get<int>();
      else if (key == "rank")
        cfg.rank = value.get<int>();
      else if (key == "pool_k")
        cfg.pool_k = value.get<int>();
      else if (key == "mfh_stages")
        cfg.mfh_stages = value.get<int>();
      else if (key == "mlp_hidden")
        cfg.mlp_hidden = value.get<std::vector<int>>();
      else if (key == "dropout_p")
        cfg.dropout_p = value.get<double>();
      else if (key == "normalize")
        cfg.normalize = value.get<bool>();
      else
        throw ConfigError("unknown fusion config key: " + key);
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("fusion config field has the wrong type: ") + e.what());
  }
  return cfg;
}

std::int64_t parameter_count(const FusionConfig& cfg) {
  cfg.validate();
  const std::int64_t d1 = cfg.d1, d2 = cfg.d2, mm = cfg.mm_dim, out = cfg.out_dim;
  switch (cfg.kind) {
    case FusionKind::ConcatMlp: {
      std::int64_t total = 0, prev = d1 + d2;
      for (int h : cfg.mlp_hidden) {
        total += (prev + 1) * h;
        prev = h;
      }
      return total + (prev + 1) * out;
    }
    case FusionKind::LinearSum:
    case FusionKind::Mlb:
      return mm * d1 + mm * d2 + out * mm;
    case FusionKind::Mfb:
      return mm * d1 + mm * d2;
    case FusionKind::Mfh:
      return static_cast<std::int64_t>(cfg.mfh_stages) * (mm * d1 + mm * d2);
    case FusionKind::Block: {
      const std::int64_t cw = mm / cfg.chunks, ow = out / cfg.chunks;
      return mm * d1 + mm * d2 + cfg.chunks * 2 * (ow * cfg.rank) * cw + out * out;
    }
    case FusionKind::BlockTucker: {
      const std::int64_t cw = mm / cfg.chunks, ow = out / cfg.chunks;
      return mm * d1 + mm * d2 + cfg.chunks * cw * cw * ow + out * out;
    }
  }
  throw ConfigError("unreachable fusion kind");
}

}  // namespace afn
