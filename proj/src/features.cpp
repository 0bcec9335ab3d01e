#include "afn/features.hpp"

#include <algorithm>

#include "afn/errors.hpp"

namespace afn {

namespace {

void check_len(const std::string& claim, const char* field, std::size_t got, std::size_t want) {
  if (got != want)
    throw DataError("claim " + claim + ": " + field + " expected " + std::to_string(want) +
                    " values, got " + std::to_string(got));
}

void check_unit_range(const std::string& claim, const char* field, const std::vector<float>& v) {
  for (float x : v)
    if (!(x >= 0.0f && x <= 1.0f))
      throw DataError("claim " + claim + ": " + field + " value " + std::to_string(x) +
                      " outside [0,1]");
}

}  // namespace

void validate_claim(const ClaimRecord& rec) {
  if (rec.label != 0 && rec.label != 1)
    throw DataError("claim " + rec.claim_id + ": label must be 0 or 1, got " +
                    std::to_string(rec.label));
  if (rec.images.empty())
    throw DataError("claim " + rec.claim_id + ": needs at least one image");
  for (const auto& im : rec.images) {
    check_len(rec.claim_id, "cds_emb", im.cds_emb.size(), kImageEmbDim);
    check_len(rec.claim_id, "ud_emb", im.ud_emb.size(), kImageEmbDim);
    check_len(rec.claim_id, "part_vis", im.part_vis.size(), kPartCount);
    check_len(rec.claim_id, "ud_score", im.ud_score.size(), kPartCount);
    check_unit_range(rec.claim_id, "part_vis", im.part_vis);
    check_unit_range(rec.claim_id, "ud_score", im.ud_score);
  }
  check_len(rec.claim_id, "struct_onehot", rec.struct_onehot.size(), kStructDim);
  for (float x : rec.struct_onehot)
    if (x != 0.0f && x != 1.0f)
      throw DataError("claim " + rec.claim_id + ": struct_onehot entry " + std::to_string(x) +
                      " must be 0 or 1");
  if (rec.text_emb.has_value())
    check_len(rec.claim_id, "text_emb", rec.text_emb->size(), kTextDim);
}

std::vector<float> aggregate_spud(const std::vector<ImageRecord>& images) {
  if (images.empty()) throw DataError("aggregate_spud: needs at least one image");
  for (const auto& im : images) {
    check_len("<spud>", "part_vis", im.part_vis.size(), kPartCount);
    check_len("<spud>", "ud_score", im.ud_score.size(), kPartCount);
    check_unit_range("<spud>", "part_vis", im.part_vis);
    check_unit_range("<spud>", "ud_score", im.ud_score);
  }

  std::vector<float> out;
  out.reserve(kSpudDim);
  auto emit = [&](std::vector<float> ImageRecord::*member) {
    // stat-major: the whole max block, then min, then mean (part-major inside)
    for (int stat = 0; stat < 3; ++stat) {
      for (int p = 0; p < kPartCount; ++p) {
        float mx = -1.0f, mn = 2.0f;
        double sum = 0.0;
        for (const auto& im : images) {
          const float x = (im.*member)[static_cast<std::size_t>(p)];
          mx = std::max(mx, x);
          mn = std::min(mn, x);
          sum += static_cast<double>(x);
        }
        if (stat == 0) out.push_back(mx);
        if (stat == 1) out.push_back(mn);
        if (stat == 2) out.push_back(static_cast<float>(sum / static_cast<double>(images.size())));
      }
    }
  };
  emit(&ImageRecord::part_vis);
  emit(&ImageRecord::ud_score);
  return out;
}

}  // namespace afn
