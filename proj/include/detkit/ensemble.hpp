#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <utility>
#include <vector>

#include "detkit/evaluation.hpp"
#include "detkit/nms.hpp"

namespace detkit {

struct VotingConfig {
  int k = 4;               // voter cap per surviving box
  double match_iou = 0.5;  // voter eligibility threshold
  double score_bonus = 0.05;
  double box_self_weight = 0.7;
  double box_voter_weight = 0.3;
};

struct ClassWeightTable {
  // (model index, category) -> multiplier in [0, 1]
  std::map<std::pair<int, int>, double> weight;
  // pairs defaulted to 0 because the model had no AP for the category
  std::vector<std::pair<int, int>> missing;
};

// weight(m, c) = AP(m, c) / max over models of AP(., c); 0 when the max is 0.
ClassWeightTable pfdet_weights(const std::vector<std::map<int, double>>& per_model_ap);

// Multiplies every detection's score by its model's category weight.
std::vector<DetectionSet> apply_class_weights(std::vector<DetectionSet> sets,
                                              const ClassWeightTable& table);

struct TaggedDetection {
  Detection det;
  int source = 0;
};

// Vote step over one (image, category) group. <survivors> are the output of
// an NMS pass over <pooled>, with their post-NMS scores. Each survivor
// collects up to k same-category other-source voters at or above match_iou,
// ranked by IoU: the score gains 0.05 per voter score (clamped to 1) and the
// corners blend 0.7/0.3 with the voter mean. The source-ok masks implement
// element dropout: sources absent from score_source_ok contribute no score
// bonus; a survivor from a source absent from box_source_ok has its box
// replaced by the plain mean of its box-eligible voters. Empty masks allow
// every source.
std::vector<Detection> vote_survivors(std::span<const TaggedDetection> pooled,
                                      std::span<const TaggedDetection> survivors,
                                      const VotingConfig& cfg,
                                      std::span<const std::uint8_t> score_source_ok = {},
                                      std::span<const std::uint8_t> box_source_ok = {});

// Pools one (image, category) group across sources, runs the configured NMS
// on the pool and votes the survivors.
std::vector<Detection> vote_group(const std::vector<std::vector<Detection>>& per_source,
                                  const VotingConfig& cfg, const NmsConfig& nms_cfg);

DetectionSet ensemble_detections(const std::vector<DetectionSet>& sets,
                                 const VotingConfig& cfg, const NmsConfig& nms_cfg,
                                 int threads = 1);

// Weighted mean of per-stage classification scores. Throws when the vectors
// differ in length or the weights sum to zero.
double cascade_fuse(std::span<const double> stage_scores,
                    std::span<const double> stage_weights);

std::vector<double> default_cascade_weights();  // {0.75, 1, 0.25, 0.25}

}  // namespace detkit
