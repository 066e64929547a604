#include "detkit/nms.hpp"

#include <algorithm>
#include <cmath>

#include "detkit/errors.hpp"
#include "detkit/parallel.hpp"

namespace detkit {

NmsKind nms_kind_from_string(std::string_view s) {
  if (s == "naive") return NmsKind::kNaive;
  if (s == "soft") return NmsKind::kSoft;
  if (s == "adj") return NmsKind::kAdj;
  throw InputError("unknown NMS kind '" + std::string(s) + "' (naive|soft|adj)");
}

const char* to_string(NmsKind kind) {
  switch (kind) {
    case NmsKind::kNaive: return "naive";
    case NmsKind::kSoft: return "soft";
    case NmsKind::kAdj: return "adj";
  }
  return "?";
}

namespace {

// score desc, larger area first, then input order
bool selection_before(const Detection& a, std::uint32_t ia, double score_a,
                      const Detection& b, std::uint32_t ib, double score_b) {
  if (score_a != score_b) return score_a > score_b;
  const double area_a = a.box.area();
  const double area_b = b.box.area();
  if (area_a != area_b) return area_a > area_b;
  return ia < ib;
}

}  // namespace

std::vector<NmsSurvivor> nms_naive(std::span<const Detection> dets, double iou_threshold) {
  std::vector<std::uint32_t> order(dets.size());
  for (std::uint32_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](std::uint32_t a, std::uint32_t b) {
    return selection_before(dets[a], a, dets[a].score, dets[b], b, dets[b].score);
  });
  std::vector<NmsSurvivor> kept;
  for (std::uint32_t i : order) {
    bool suppressed = false;
    for (const auto& k : kept) {
      if (iou(dets[k.index].box, dets[i].box) > iou_threshold) {
        suppressed = true;
        break;
      }
    }
    if (!suppressed) kept.push_back(NmsSurvivor{i, dets[i].score});
  }
  return kept;
}

std::vector<NmsSurvivor> nms_soft(std::span<const Detection> dets, double sigma,
                                  double score_floor) {
  if (sigma <= 0.0) throw InputError("soft-NMS sigma must be positive");
  std::vector<double> score(dets.size());
  std::vector<char> alive(dets.size());
  for (std::uint32_t i = 0; i < dets.size(); ++i) {
    score[i] = dets[i].score;
    alive[i] = score[i] >= score_floor;
  }
  std::vector<NmsSurvivor> kept;
  kept.reserve(dets.size());
  while (true) {
    std::int64_t best = -1;
    for (std::uint32_t i = 0; i < dets.size(); ++i) {
      if (!alive[i]) continue;
      if (best < 0 || selection_before(dets[i], i, score[i], dets[best],
                                       static_cast<std::uint32_t>(best), score[best])) {
        best = i;
      }
    }
    if (best < 0) break;
    alive[best] = false;
    kept.push_back(NmsSurvivor{static_cast<std::uint32_t>(best), score[best]});
    for (std::uint32_t j = 0; j < dets.size(); ++j) {
      if (!alive[j]) continue;
      const double overlap = iou(dets[best].box, dets[j].box);
      score[j] *= std::exp(-(overlap * overlap) / sigma);
      if (score[j] < score_floor) alive[j] = false;
    }
  }
  return kept;
}

std::vector<NmsSurvivor> nms_adj(std::span<const Detection> dets, const NmsConfig& cfg) {
  const auto stage1 = nms_naive(dets, cfg.hard_threshold);
  std::vector<Detection> survivors;
  survivors.reserve(stage1.size());
  for (const auto& s : stage1) survivors.push_back(dets[s.index]);
  auto stage2 = nms_soft(survivors, cfg.sigma, cfg.score_floor);
  for (auto& s : stage2) s.index = stage1[s.index].index;
  return stage2;
}

std::vector<NmsSurvivor> run_nms(std::span<const Detection> dets, const NmsConfig& cfg) {
  switch (cfg.kind) {
    case NmsKind::kNaive: return nms_naive(dets, cfg.hard_threshold);
    case NmsKind::kSoft: return nms_soft(dets, cfg.sigma, cfg.score_floor);
    case NmsKind::kAdj: return nms_adj(dets, cfg);
  }
  throw InvariantError("unhandled NMS kind");
}

DetectionSet apply_nms(const DetectionSet& dets, const NmsConfig& cfg, int threads) {
  const GroupIndex groups = group_detections(dets.items);
  std::vector<const std::vector<std::uint32_t>*> group_list;
  group_list.reserve(groups.size());
  for (const auto& [key, idx] : groups) group_list.push_back(&idx);

  std::vector<std::vector<Detection>> results(group_list.size());
  parallel_for(group_list.size(), threads, [&](std::size_t g) {
    const auto& idx = *group_list[g];
    std::vector<Detection> local;
    local.reserve(idx.size());
    for (std::uint32_t i : idx) local.push_back(dets.items[i]);
    for (const auto& s : run_nms(local, cfg)) {
      Detection d = local[s.index];
      d.score = s.score;
      results[g].push_back(d);
    }
  });

  DetectionSet out;
  out.source_id = dets.source_id;
  out.roster = dets.roster;
  for (const auto& r : results) out.items.insert(out.items.end(), r.begin(), r.end());
  return out;
}

}  // namespace detkit
