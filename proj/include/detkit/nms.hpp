#pragma once

#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

#include "detkit/detections.hpp"

namespace detkit {

enum class NmsKind { kNaive, kSoft, kAdj };

NmsKind nms_kind_from_string(std::string_view s);
const char* to_string(NmsKind kind);

struct NmsConfig {
  NmsKind kind = NmsKind::kAdj;
  double hard_threshold = 0.5;  // IoU strictly above this suppresses in the hard pass
  double sigma = 0.5;           // Gaussian decay width of the soft pass
  double score_floor = 1e-5;    // boxes whose score falls below this are dropped
};

// One survivor of an NMS pass: index into the input group plus final score.
struct NmsSurvivor {
  std::uint32_t index = 0;
  double score = 0.0;
};

// All passes operate on one (image, category) group and return survivors in
// descending final-score order. Score ties break toward the larger box area,
// then input order.
std::vector<NmsSurvivor> nms_naive(std::span<const Detection> dets, double iou_threshold);

// Iterative Gaussian soft-NMS: the current maximum is moved to the keep set
// and every remaining score is multiplied by exp(-iou^2 / sigma) against it.
std::vector<NmsSurvivor> nms_soft(std::span<const Detection> dets, double sigma,
                                  double score_floor);

// Hard pass at cfg.hard_threshold, then the soft pass over its survivors.
std::vector<NmsSurvivor> nms_adj(std::span<const Detection> dets, const NmsConfig& cfg);

std::vector<NmsSurvivor> run_nms(std::span<const Detection> dets, const NmsConfig& cfg);

// Per-(image, category) NMS over a whole set; groups are independent and the
// outputs are concatenated in canonical group order regardless of threads.
DetectionSet apply_nms(const DetectionSet& dets, const NmsConfig& cfg, int threads = 1);

}  // namespace detkit
