#include "detkit/evaluation.hpp"

#include <algorithm>
#include <tuple>

#include "detkit/errors.hpp"
#include "detkit/parallel.hpp"

namespace detkit {

namespace {

// global detection order: score desc, image name asc, corners asc, input
// order; evaluation must not depend on file row order
struct CanonicalOrder {
  const std::vector<Detection>& items;
  const std::vector<int>& image_rank;

  bool operator()(std::uint32_t a, std::uint32_t b) const {
    const Detection& da = items[a];
    const Detection& db = items[b];
    if (da.score != db.score) return da.score > db.score;
    const int ra = image_rank[da.image];
    const int rb = image_rank[db.image];
    if (ra != rb) return ra < rb;
    const auto ka = std::tie(da.box.x_min, da.box.y_min, da.box.x_max, da.box.y_max);
    const auto kb = std::tie(db.box.x_min, db.box.y_min, db.box.x_max, db.box.y_max);
    if (ka != kb) return ka < kb;
    return a < b;
  }
};

}  // namespace

std::vector<Verdict> match_image_category(std::span<const Detection> dets_sorted,
                                          std::span<const GroundTruthBox> gts,
                                          const EvalConfig& cfg) {
  std::vector<std::size_t> instances;
  std::vector<std::size_t> groups;
  for (std::size_t i = 0; i < gts.size(); ++i) {
    (gts[i].is_group_of ? groups : instances).push_back(i);
  }
  std::vector<char> matched(instances.size(), 0);
  std::vector<Verdict> verdicts;
  verdicts.reserve(dets_sorted.size());
  for (const auto& det : dets_sorted) {
    double best_iou = 0.0;
    std::int64_t best = -1;
    for (std::size_t g = 0; g < instances.size(); ++g) {
      if (matched[g]) continue;
      const double overlap = iou(det.box, gts[instances[g]].box);
      if (overlap >= cfg.iou_threshold && overlap > best_iou) {
        best_iou = overlap;
        best = static_cast<std::int64_t>(g);
      }
    }
    if (best >= 0) {
      matched[best] = 1;
      verdicts.push_back(Verdict::kTruePositive);
      continue;
    }
    bool ignored = false;
    for (std::size_t g : groups) {
      if (ioa(det.box, gts[g].box) >= cfg.group_of_ioa_threshold) {
        ignored = true;
        break;
      }
    }
    verdicts.push_back(ignored ? Verdict::kIgnored : Verdict::kFalsePositive);
  }
  return verdicts;
}

double average_precision(std::span<const Verdict> verdicts_sorted, int n_gt) {
  if (n_gt <= 0) throw InvariantError("average_precision called with no ground truth");
  std::vector<double> recall;
  std::vector<double> precision;
  int tp = 0;
  int fp = 0;
  for (const Verdict v : verdicts_sorted) {
    if (v == Verdict::kIgnored) continue;
    if (v == Verdict::kTruePositive) {
      ++tp;
    } else {
      ++fp;
    }
    recall.push_back(static_cast<double>(tp) / n_gt);
    precision.push_back(static_cast<double>(tp) / (tp + fp));
  }
  // precision envelope from the right, then the exact staircase area
  double ap = 0.0;
  double envelope = 0.0;
  for (std::size_t i = precision.size(); i-- > 0;) {
    envelope = std::max(envelope, precision[i]);
    const double prev_recall = i == 0 ? 0.0 : recall[i - 1];
    ap += (recall[i] - prev_recall) * envelope;
  }
  return ap;
}

EvalReport evaluate(const DetectionSet& dets_in, const GroundTruthSet& gts_in,
                    const CategoryHierarchy& hierarchy, const EvalConfig& cfg,
                    const Vocab& vocab, int threads) {
  const bool expand = cfg.expand_hierarchy && !hierarchy.empty();
  const ExpandOptions lenient{.require_known = false};
  const DetectionSet dets =
      expand ? expand_hierarchy(dets_in, hierarchy, vocab, lenient) : dets_in;
  const GroundTruthSet gts =
      expand ? expand_hierarchy(gts_in, hierarchy, vocab, lenient) : gts_in;

  const std::vector<int> image_rank = vocab.images.lexicographic_ranks();
  const GroupIndex det_groups = group_detections(dets.items);
  const GroupIndex gt_groups = group_ground_truth(gts.boxes);

  // verdict per detection, filled group by group
  std::vector<Verdict> verdict(dets.items.size(), Verdict::kFalsePositive);
  for (const auto& [key, idx] : det_groups) {
    std::vector<std::uint32_t> order = idx;
    std::sort(order.begin(), order.end(), CanonicalOrder{dets.items, image_rank});
    std::vector<Detection> local;
    local.reserve(order.size());
    for (std::uint32_t i : order) local.push_back(dets.items[i]);
    std::vector<GroundTruthBox> local_gt;
    if (auto it = gt_groups.find(key); it != gt_groups.end()) {
      for (std::uint32_t i : it->second) local_gt.push_back(gts.boxes[i]);
    }
    const auto group_verdicts = match_image_category(local, local_gt, cfg);
    for (std::size_t i = 0; i < order.size(); ++i) verdict[order[i]] = group_verdicts[i];
  }

  // category universe and per-category ground-truth instance counts
  std::map<int, CategoryReport> per_category;
  for (const auto& box : gts.boxes) {
    auto& report = per_category[box.category];
    if (!box.is_group_of) ++report.n_gt;
  }
  for (const auto& det : dets.items) per_category[det.category];

  std::vector<int> categories;
  categories.reserve(per_category.size());
  for (const auto& [category, report] : per_category) categories.push_back(category);

  // per-category detection streams in canonical order
  std::map<int, std::vector<std::uint32_t>> streams;
  for (std::uint32_t i = 0; i < dets.items.size(); ++i) {
    streams[dets.items[i].category].push_back(i);
  }

  parallel_for(categories.size(), threads, [&](std::size_t ci) {
    const int category = categories[ci];
    CategoryReport& report = per_category.at(category);
    std::vector<Verdict> stream;
    if (auto it = streams.find(category); it != streams.end()) {
      std::vector<std::uint32_t> order = it->second;
      std::sort(order.begin(), order.end(), CanonicalOrder{dets.items, image_rank});
      stream.reserve(order.size());
      for (std::uint32_t i : order) {
        stream.push_back(verdict[i]);
        switch (verdict[i]) {
          case Verdict::kTruePositive: ++report.tp; break;
          case Verdict::kFalsePositive: ++report.fp; break;
          case Verdict::kIgnored: ++report.ignored; break;
        }
      }
    }
    report.included = report.n_gt > 0;
    report.ap = report.included ? average_precision(stream, report.n_gt) : 0.0;
  });

  EvalReport out;
  out.per_category = std::move(per_category);
  double sum = 0.0;
  for (const auto& [category, report] : out.per_category) {
    if (!report.included) continue;
    sum += report.ap;
    ++out.included_categories;
  }
  out.map = out.included_categories > 0 ? sum / out.included_categories : 0.0;
  return out;
}

std::map<int, double> ap_by_category(const EvalReport& report) {
  std::map<int, double> out;
  for (const auto& [category, r] : report.per_category) {
    if (r.included) out[category] = r.ap;
  }
  return out;
}

}  // namespace detkit
