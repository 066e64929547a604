#include "detkit/ensemble.hpp"

#include <algorithm>
#include <numeric>

#include "detkit/errors.hpp"
#include "detkit/parallel.hpp"

namespace detkit {

ClassWeightTable pfdet_weights(const std::vector<std::map<int, double>>& per_model_ap) {
  // best AP per category over all models
  std::map<int, double> best;
  for (const auto& model : per_model_ap) {
    for (const auto& [category, ap] : model) {
      auto [it, inserted] = best.emplace(category, ap);
      if (!inserted) it->second = std::max(it->second, ap);
    }
  }
  ClassWeightTable table;
  for (int m = 0; m < static_cast<int>(per_model_ap.size()); ++m) {
    for (const auto& [category, top] : best) {
      const auto it = per_model_ap[m].find(category);
      if (it == per_model_ap[m].end()) {
        table.weight[{m, category}] = 0.0;
        table.missing.emplace_back(m, category);
      } else {
        table.weight[{m, category}] = top > 0.0 ? it->second / top : 0.0;
      }
    }
  }
  return table;
}

std::vector<DetectionSet> apply_class_weights(std::vector<DetectionSet> sets,
                                              const ClassWeightTable& table) {
  for (int m = 0; m < static_cast<int>(sets.size()); ++m) {
    for (auto& det : sets[m].items) {
      const auto it = table.weight.find({m, det.category});
      const double w = it == table.weight.end() ? 0.0 : it->second;
      det.score *= w;
    }
  }
  return sets;
}

namespace {

bool source_allowed(std::span<const std::uint8_t> mask, int source) {
  if (mask.empty()) return true;
  return source >= 0 && source < static_cast<int>(mask.size()) && mask[source] != 0;
}

}  // namespace

std::vector<Detection> vote_survivors(std::span<const TaggedDetection> pooled,
                                      std::span<const TaggedDetection> survivors,
                                      const VotingConfig& cfg,
                                      std::span<const std::uint8_t> score_source_ok,
                                      std::span<const std::uint8_t> box_source_ok) {
  if (cfg.k < 1) throw InputError("voting requires k >= 1");
  std::vector<Detection> merged;
  merged.reserve(survivors.size());

  struct Voter {
    double overlap;
    std::size_t index;  // into pooled
  };
  std::vector<Voter> candidates;

  for (const auto& survivor : survivors) {
    candidates.clear();
    for (std::size_t p = 0; p < pooled.size(); ++p) {
      if (pooled[p].source == survivor.source) continue;
      const double overlap = iou(survivor.det.box, pooled[p].det.box);
      if (overlap >= cfg.match_iou) candidates.push_back(Voter{overlap, p});
    }
    std::stable_sort(candidates.begin(), candidates.end(),
                     [](const Voter& a, const Voter& b) { return a.overlap > b.overlap; });

    double bonus = 0.0;
    int score_voters = 0;
    double sum_x_min = 0.0, sum_y_min = 0.0, sum_x_max = 0.0, sum_y_max = 0.0;
    int box_voters = 0;
    for (const Voter& v : candidates) {
      const TaggedDetection& voter = pooled[v.index];
      if (score_voters < cfg.k && source_allowed(score_source_ok, voter.source)) {
        bonus += voter.det.score;
        ++score_voters;
      }
      if (box_voters < cfg.k && source_allowed(box_source_ok, voter.source)) {
        sum_x_min += voter.det.box.x_min;
        sum_y_min += voter.det.box.y_min;
        sum_x_max += voter.det.box.x_max;
        sum_y_max += voter.det.box.y_max;
        ++box_voters;
      }
      if (score_voters >= cfg.k && box_voters >= cfg.k) break;
    }

    Detection out = survivor.det;
    out.score = std::min(1.0, survivor.det.score + cfg.score_bonus * bonus);
    if (box_voters > 0) {
      const BBox& own = survivor.det.box;
      if (source_allowed(box_source_ok, survivor.source)) {
        const double wv = cfg.box_voter_weight / box_voters;
        out.box.x_min = cfg.box_self_weight * own.x_min + wv * sum_x_min;
        out.box.y_min = cfg.box_self_weight * own.y_min + wv * sum_y_min;
        out.box.x_max = cfg.box_self_weight * own.x_max + wv * sum_x_max;
        out.box.y_max = cfg.box_self_weight * own.y_max + wv * sum_y_max;
      } else {
        // a score-only survivor takes its geometry from the matched partners
        out.box.x_min = sum_x_min / box_voters;
        out.box.y_min = sum_y_min / box_voters;
        out.box.x_max = sum_x_max / box_voters;
        out.box.y_max = sum_y_max / box_voters;
      }
    }
    merged.push_back(out);
  }
  return merged;
}

std::vector<Detection> vote_group(const std::vector<std::vector<Detection>>& per_source,
                                  const VotingConfig& cfg, const NmsConfig& nms_cfg) {
  std::vector<TaggedDetection> pooled;
  for (int s = 0; s < static_cast<int>(per_source.size()); ++s) {
    for (const auto& det : per_source[s]) pooled.push_back(TaggedDetection{det, s});
  }
  std::vector<Detection> plain;
  plain.reserve(pooled.size());
  for (const auto& t : pooled) plain.push_back(t.det);

  std::vector<TaggedDetection> survivors;
  for (const auto& s : run_nms(plain, nms_cfg)) {
    survivors.push_back(TaggedDetection{plain[s.index], pooled[s.index].source});
    survivors.back().det.score = s.score;
  }
  return vote_survivors(pooled, survivors, cfg);
}

DetectionSet ensemble_detections(const std::vector<DetectionSet>& sets,
                                 const VotingConfig& cfg, const NmsConfig& nms_cfg,
                                 int threads) {
  // pool everything with source tags, then merge per (image, category)
  std::vector<TaggedDetection> all;
  for (int s = 0; s < static_cast<int>(sets.size()); ++s) {
    for (const auto& det : sets[s].items) all.push_back(TaggedDetection{det, s});
  }
  std::map<GroupKey, std::vector<std::uint32_t>> groups;
  for (std::uint32_t i = 0; i < all.size(); ++i) {
    groups[GroupKey{all[i].det.image, all[i].det.category}].push_back(i);
  }
  std::vector<const std::vector<std::uint32_t>*> group_list;
  group_list.reserve(groups.size());
  for (const auto& [key, idx] : groups) group_list.push_back(&idx);

  std::vector<std::vector<Detection>> results(group_list.size());
  parallel_for(group_list.size(), threads, [&](std::size_t g) {
    std::vector<TaggedDetection> pooled;
    pooled.reserve(group_list[g]->size());
    for (std::uint32_t i : *group_list[g]) pooled.push_back(all[i]);
    std::vector<Detection> plain;
    plain.reserve(pooled.size());
    for (const auto& t : pooled) plain.push_back(t.det);
    std::vector<TaggedDetection> survivors;
    for (const auto& s : run_nms(plain, nms_cfg)) {
      survivors.push_back(TaggedDetection{plain[s.index], pooled[s.index].source});
      survivors.back().det.score = s.score;
    }
    results[g] = vote_survivors(pooled, survivors, cfg);
  });

  DetectionSet out;
  out.source_id = "ensemble";
  for (const auto& set : sets) out.roster = roster_union(out.roster, set.roster);
  for (const auto& r : results) out.items.insert(out.items.end(), r.begin(), r.end());
  return out;
}

double cascade_fuse(std::span<const double> stage_scores,
                    std::span<const double> stage_weights) {
  if (stage_scores.size() != stage_weights.size()) {
    throw InputError("cascade fusion needs one weight per stage score");
  }
  if (stage_scores.empty()) throw InputError("cascade fusion needs at least one stage");
  const double total = std::accumulate(stage_weights.begin(), stage_weights.end(), 0.0);
  if (total <= 0.0) throw InputError("cascade stage weights must not sum to zero");
  double fused = 0.0;
  for (std::size_t i = 0; i < stage_scores.size(); ++i) {
    fused += stage_weights[i] * stage_scores[i];
  }
  return fused / total;
}

std::vector<double> default_cascade_weights() { return {0.75, 1.0, 0.25, 0.25}; }

}  // namespace detkit
