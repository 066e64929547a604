#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <utility>

#include "detkit/detections.hpp"

namespace detkit {

// Which object total divides the pair count. kCategoryI follows the
// configured cond(i, j) = C_ij / C_i; kCategoryJ is the conventional
// alternative C_ij / C_j.
enum class CondDenominator { kCategoryI, kCategoryJ };

struct CooccurrenceModel {
  // category -> C_i, total annotated objects of that category
  std::map<int, std::int64_t> object_count;
  // (i, j) -> C_ij, objects of i located in images that contain at least one j
  std::map<std::pair<int, int>, std::int64_t> pair_count;
  CondDenominator denom = CondDenominator::kCategoryI;

  // 0 for unseen categories/pairs and for 0/0
  double cond(int i, int j) const;
};

CooccurrenceModel build_cooccurrence(const GroundTruthSet& gts,
                                     CondDenominator denom = CondDenominator::kCategoryI);

// Per image, raises the top box of each category toward the co-occurrence
// bound: with s_j the image's max confidence per category, the support for i
// is the max-product closure of s_j * cond(i, j) over j != i, and the top
// category-i box moves lambda of the way up to it. Scores never decrease,
// never exceed 1, geometry never changes; at lambda = 1 the result is a
// fixpoint, so rescoring twice equals rescoring once.
DetectionSet rescore_detections(const DetectionSet& dets, const CooccurrenceModel& model,
                                double lambda);

// CSV rows: i,j,c_i,c_ij,cond
void save_cooccurrence_csv(const CooccurrenceModel& model, const Vocab& vocab,
                           const std::filesystem::path& path);

}  // namespace detkit
