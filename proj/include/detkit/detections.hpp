#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "detkit/geometry.hpp"
#include "detkit/vocab.hpp"

namespace detkit {

struct Detection {
  int image = -1;      // interned image id
  int category = -1;   // interned label id
  double score = 0.0;  // confidence in [0,1]
  BBox box;

  bool operator==(const Detection&) const = default;
};

// All detections of one model. Immutable after loading; <roster> keeps every
// image mentioned by the source file (including ones with no boxes) so
// writers can reproduce it.
struct DetectionSet {
  std::string source_id;
  std::vector<Detection> items;
  std::vector<int> roster;  // distinct image ids, ascending
};

struct GroundTruthBox {
  int image = -1;
  int category = -1;
  BBox box;
  bool is_group_of = false;
};

struct GroundTruthSet {
  std::vector<GroundTruthBox> boxes;
  std::vector<int> roster;  // corpus images, ascending; superset of box images
};

struct GroupKey {
  int image = -1;
  int category = -1;
  auto operator<=>(const GroupKey&) const = default;
};

// Indices into the flat collection grouped per (image, category). Map order
// is the canonical group order used when group results are concatenated.
using GroupIndex = std::map<GroupKey, std::vector<std::uint32_t>>;

GroupIndex group_detections(const std::vector<Detection>& items);
GroupIndex group_ground_truth(const std::vector<GroundTruthBox>& boxes);

// distinct annotated categories per image, ascending
std::map<int, std::vector<int>> categories_by_image(const GroundTruthSet& gts);

std::vector<int> roster_union(const std::vector<int>& a, const std::vector<int>& b);
std::vector<int> roster_from_items(const std::vector<Detection>& items);

struct ExpandOptions {
  // Reject detections whose category the hierarchy does not know. Evaluation
  // relaxes this so partial hierarchies do not abort a run.
  bool require_known = true;
};

// Duplicates every record to all ancestor categories with the same box and
// score; a record whose (image, ancestor, box) is already present is not
// added twice. Idempotent.
DetectionSet expand_hierarchy(const DetectionSet& dets, const CategoryHierarchy& h,
                              const Vocab& vocab, const ExpandOptions& opts = {});
GroundTruthSet expand_hierarchy(const GroundTruthSet& gts, const CategoryHierarchy& h,
                                const Vocab& vocab, const ExpandOptions& opts = {});

}  // namespace detkit
