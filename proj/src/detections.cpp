#include "detkit/detections.hpp"

#include <algorithm>
#include <cstring>
#include <unordered_set>

#include "detkit/errors.hpp"

namespace detkit {

namespace {

// identity of one record for expansion dedup: image, category and exact box
// bits (plus the group flag for ground truth)
struct RecordKey {
  int image;
  int category;
  BBox box;
  bool flag;

  bool operator==(const RecordKey&) const = default;
};

struct RecordKeyHash {
  std::size_t operator()(const RecordKey& k) const {
    auto mix = [](std::size_t h, std::size_t v) {
      return h ^ (v + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2));
    };
    auto bits = [](double d) {
      std::size_t out;
      std::memcpy(&out, &d, sizeof(double));
      return out;
    };
    std::size_t h = std::hash<int>{}(k.image);
    h = mix(h, std::hash<int>{}(k.category));
    h = mix(h, bits(k.box.x_min));
    h = mix(h, bits(k.box.y_min));
    h = mix(h, bits(k.box.x_max));
    h = mix(h, bits(k.box.y_max));
    h = mix(h, k.flag ? 1u : 0u);
    return h;
  }
};

using RecordSet = std::unordered_set<RecordKey, RecordKeyHash>;

// ancestors per category, resolved once per expansion
class AncestorCache {
 public:
  AncestorCache(const CategoryHierarchy& h, const Vocab& vocab, bool require_known)
      : h_(h), vocab_(vocab), require_known_(require_known) {}

  const std::vector<int>& get(int category) {
    auto it = cache_.find(category);
    if (it != cache_.end()) return it->second;
    if (!h_.contains(category)) {
      if (require_known_) {
        throw InputError("category '" + vocab_.labels.name(category) +
                         "' is not part of the hierarchy");
      }
      return cache_.emplace(category, std::vector<int>{}).first->second;
    }
    return cache_.emplace(category, h_.ancestors(category)).first->second;
  }

 private:
  const CategoryHierarchy& h_;
  const Vocab& vocab_;
  bool require_known_;
  std::unordered_map<int, std::vector<int>> cache_;
};

}  // namespace

GroupIndex group_detections(const std::vector<Detection>& items) {
  GroupIndex index;
  for (std::uint32_t i = 0; i < items.size(); ++i) {
    index[GroupKey{items[i].image, items[i].category}].push_back(i);
  }
  return index;
}

GroupIndex group_ground_truth(const std::vector<GroundTruthBox>& boxes) {
  GroupIndex index;
  for (std::uint32_t i = 0; i < boxes.size(); ++i) {
    index[GroupKey{boxes[i].image, boxes[i].category}].push_back(i);
  }
  return index;
}

std::map<int, std::vector<int>> categories_by_image(const GroundTruthSet& gts) {
  std::map<int, std::vector<int>> out;
  for (int image : gts.roster) out[image];
  for (const auto& box : gts.boxes) out[box.image].push_back(box.category);
  for (auto& [image, cats] : out) {
    std::sort(cats.begin(), cats.end());
    cats.erase(std::unique(cats.begin(), cats.end()), cats.end());
  }
  return out;
}

std::vector<int> roster_union(const std::vector<int>& a, const std::vector<int>& b) {
  std::vector<int> out;
  out.reserve(a.size() + b.size());
  std::set_union(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(out));
  return out;
}

std::vector<int> roster_from_items(const std::vector<Detection>& items) {
  std::vector<int> out;
  out.reserve(items.size());
  for (const auto& d : items) out.push_back(d.image);
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

DetectionSet expand_hierarchy(const DetectionSet& dets, const CategoryHierarchy& h,
                              const Vocab& vocab, const ExpandOptions& opts) {
  DetectionSet out = dets;
  RecordSet seen;
  seen.reserve(dets.items.size() * 2);
  for (const auto& d : dets.items) {
    seen.insert(RecordKey{d.image, d.category, d.box, false});
  }
  AncestorCache ancestors(h, vocab, opts.require_known);
  for (const auto& d : dets.items) {
    for (int parent : ancestors.get(d.category)) {
      RecordKey key{d.image, parent, d.box, false};
      if (seen.insert(key).second) {
        out.items.push_back(Detection{d.image, parent, d.score, d.box});
      }
    }
  }
  return out;
}

GroundTruthSet expand_hierarchy(const GroundTruthSet& gts, const CategoryHierarchy& h,
                                const Vocab& vocab, const ExpandOptions& opts) {
  GroundTruthSet out = gts;
  RecordSet seen;
  seen.reserve(gts.boxes.size() * 2);
  for (const auto& b : gts.boxes) {
    seen.insert(RecordKey{b.image, b.category, b.box, b.is_group_of});
  }
  AncestorCache ancestors(h, vocab, opts.require_known);
  for (const auto& b : gts.boxes) {
    for (int parent : ancestors.get(b.category)) {
      RecordKey key{b.image, parent, b.box, b.is_group_of};
      if (seen.insert(key).second) {
        out.boxes.push_back(GroundTruthBox{b.image, parent, b.box, b.is_group_of});
      }
    }
  }
  return out;
}

}  // namespace detkit
