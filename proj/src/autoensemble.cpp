#include "detkit/autoensemble.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <random>
#include <set>

#include <json.hpp>

#include "detkit/errors.hpp"
#include "detkit/parallel.hpp"

namespace detkit {

MergeSource merge_source_from_string(std::string_view s) {
  if (s == "both") return MergeSource::kBoth;
  if (s == "left_only") return MergeSource::kLeftOnly;
  if (s == "right_only") return MergeSource::kRightOnly;
  throw InputError("unknown merge source '" + std::string(s) +
                   "' (both|left_only|right_only)");
}

const char* to_string(MergeSource s) {
  switch (s) {
    case MergeSource::kBoth: return "both";
    case MergeSource::kLeftOnly: return "left_only";
    case MergeSource::kRightOnly: return "right_only";
  }
  return "?";
}

bool merge_params_valid(const MergeParams& p) {
  if (p.score_weight_left < 0.0 || p.score_weight_left > 2.0) return false;
  if (p.score_weight_right < 0.0 || p.score_weight_right > 2.0) return false;
  if (p.match_iou < 0.0 || p.match_iou > 1.0) return false;
  // jointly cover both children: a child dropped from boxes must still
  // contribute scores and vice versa
  const bool left_covered = p.box_source != MergeSource::kRightOnly ||
                            p.score_source != MergeSource::kRightOnly;
  const bool right_covered = p.box_source != MergeSource::kLeftOnly ||
                             p.score_source != MergeSource::kLeftOnly;
  return left_covered && right_covered;
}

EnsemblePlan EnsemblePlan::leaf(std::string source_id) {
  EnsemblePlan plan;
  plan.leaf_ = true;
  plan.source_id_ = std::move(source_id);
  return plan;
}

EnsemblePlan EnsemblePlan::merge(EnsemblePlan left, EnsemblePlan right, MergeParams params) {
  EnsemblePlan plan;
  plan.leaf_ = false;
  plan.params_ = params;
  plan.left_ = std::make_unique<EnsemblePlan>(std::move(left));
  plan.right_ = std::make_unique<EnsemblePlan>(std::move(right));
  return plan;
}

EnsemblePlan::EnsemblePlan(const EnsemblePlan& other)
    : leaf_(other.leaf_), source_id_(other.source_id_), params_(other.params_) {
  if (other.left_) left_ = std::make_unique<EnsemblePlan>(*other.left_);
  if (other.right_) right_ = std::make_unique<EnsemblePlan>(*other.right_);
}

EnsemblePlan& EnsemblePlan::operator=(const EnsemblePlan& other) {
  if (this == &other) return *this;
  EnsemblePlan copy(other);
  *this = std::move(copy);
  return *this;
}

std::vector<std::string> EnsemblePlan::leaf_ids() const {
  std::vector<std::string> out;
  if (leaf_) {
    out.push_back(source_id_);
    return out;
  }
  for (const std::string& id : left_->leaf_ids()) out.push_back(id);
  for (const std::string& id : right_->leaf_ids()) out.push_back(id);
  return out;
}

std::vector<EnsemblePlan*> EnsemblePlan::merge_nodes_post_order() {
  std::vector<EnsemblePlan*> out;
  if (leaf_) return out;
  for (EnsemblePlan* n : left_->merge_nodes_post_order()) out.push_back(n);
  for (EnsemblePlan* n : right_->merge_nodes_post_order()) out.push_back(n);
  out.push_back(this);
  return out;
}

void EnsemblePlan::validate() const {
  const auto ids = leaf_ids();
  std::set<std::string> unique(ids.begin(), ids.end());
  if (unique.size() != ids.size()) {
    throw InputError("ensemble plan uses a source more than once");
  }
  if (!leaf_) {
    if (!left_ || !right_) throw InvariantError("merge node without two children");
    if (!merge_params_valid(params_)) {
      throw InputError("merge parameters out of range or dropping a whole child");
    }
    left_->validate();
    right_->validate();
  } else if (source_id_.empty()) {
    throw InputError("leaf without a source id");
  }
}

std::string EnsemblePlan::canonical_key() const {
  if (leaf_) return "L(" + source_id_ + ")";
  char buf[128];
  std::snprintf(buf, sizeof(buf), "M(%.17g,%.17g,%s,%s,%s,%.17g;", params_.score_weight_left,
                params_.score_weight_right, to_string(params_.box_source),
                to_string(params_.score_source), to_string(params_.nms_kind),
                params_.match_iou);
  return buf + left_->canonical_key() + ";" + right_->canonical_key() + ")";
}

std::map<std::string, int> EnsemblePlan::leaf_depths() const {
  std::map<std::string, int> out;
  struct Walk {
    void operator()(const EnsemblePlan& node, int depth, std::map<std::string, int>& out) {
      if (node.is_leaf()) {
        out[node.source_id()] = depth;
        return;
      }
      (*this)(node.left(), depth + 1, out);
      (*this)(node.right(), depth + 1, out);
    }
  };
  Walk{}(*this, 0, out);
  return out;
}

namespace {

nlohmann::ordered_json plan_json(const EnsemblePlan& plan) {
  if (plan.is_leaf()) return nlohmann::ordered_json{{"leaf", plan.source_id()}};
  const MergeParams& p = plan.params();
  nlohmann::ordered_json params{
      {"score_weight_left", p.score_weight_left},
      {"score_weight_right", p.score_weight_right},
      {"box_source", to_string(p.box_source)},
      {"score_source", to_string(p.score_source)},
      {"nms", to_string(p.nms_kind)},
      {"match_iou", p.match_iou},
  };
  return nlohmann::ordered_json{{"merge",
                                 {{"params", params},
                                  {"left", plan_json(plan.left())},
                                  {"right", plan_json(plan.right())}}}};
}

EnsemblePlan plan_from(const nlohmann::json& node) {
  if (node.contains("leaf")) {
    if (!node["leaf"].is_string()) throw InputError("plan leaf must name a source");
    return EnsemblePlan::leaf(node["leaf"].get<std::string>());
  }
  if (!node.contains("merge")) {
    throw InputError("plan node must be either {\"leaf\":...} or {\"merge\":...}");
  }
  const auto& merge = node["merge"];
  if (!merge.contains("left") || !merge.contains("right")) {
    throw InputError("plan merge node needs left and right children");
  }
  MergeParams params;
  if (merge.contains("params")) {
    const auto& p = merge["params"];
    if (p.contains("score_weight_left")) params.score_weight_left = p["score_weight_left"];
    if (p.contains("score_weight_right")) params.score_weight_right = p["score_weight_right"];
    if (p.contains("box_source")) {
      params.box_source = merge_source_from_string(p["box_source"].get<std::string>());
    }
    if (p.contains("score_source")) {
      params.score_source = merge_source_from_string(p["score_source"].get<std::string>());
    }
    if (p.contains("nms")) params.nms_kind = nms_kind_from_string(p["nms"].get<std::string>());
    if (p.contains("match_iou")) params.match_iou = p["match_iou"];
  }
  return EnsemblePlan::merge(plan_from(merge["left"]), plan_from(merge["right"]), params);
}

}  // namespace

std::string plan_to_json(const EnsemblePlan& plan) { return plan_json(plan).dump(2) + "\n"; }

EnsemblePlan plan_from_json(const std::string& text) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw InputError(std::string("invalid plan JSON: ") + e.what());
  }
  EnsemblePlan plan = plan_from(doc);
  plan.validate();
  return plan;
}

namespace {

DetectionSet merge_children(DetectionSet left, DetectionSet right, const MergeParams& params,
                            const VotingConfig& voting, int threads) {
  for (auto& det : left.items) {
    det.score = std::min(1.0, det.score * params.score_weight_left);
  }
  for (auto& det : right.items) {
    det.score = std::min(1.0, det.score * params.score_weight_right);
  }

  std::vector<TaggedDetection> all;
  all.reserve(left.items.size() + right.items.size());
  for (const auto& det : left.items) all.push_back(TaggedDetection{det, 0});
  for (const auto& det : right.items) all.push_back(TaggedDetection{det, 1});

  const std::array<std::uint8_t, 2> score_ok{
      static_cast<std::uint8_t>(params.score_source != MergeSource::kRightOnly ? 1 : 0),
      static_cast<std::uint8_t>(params.score_source != MergeSource::kLeftOnly ? 1 : 0)};
  const std::array<std::uint8_t, 2> box_ok{
      static_cast<std::uint8_t>(params.box_source != MergeSource::kRightOnly ? 1 : 0),
      static_cast<std::uint8_t>(params.box_source != MergeSource::kLeftOnly ? 1 : 0)};

  NmsConfig nms_cfg;
  nms_cfg.kind = params.nms_kind;
  VotingConfig vote_cfg = voting;
  vote_cfg.match_iou = params.match_iou;

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
    results[g] = vote_survivors(pooled, survivors, vote_cfg, score_ok, box_ok);
  });

  DetectionSet out;
  out.source_id = "(" + left.source_id + "+" + right.source_id + ")";
  out.roster = roster_union(left.roster, right.roster);
  for (const auto& r : results) out.items.insert(out.items.end(), r.begin(), r.end());
  return out;
}

}  // namespace

DetectionSet execute_plan(const EnsemblePlan& plan,
                          const std::map<std::string, DetectionSet>& inputs,
                          const VotingConfig& voting, int threads) {
  plan.validate();
  struct Exec {
    const std::map<std::string, DetectionSet>& inputs;
    const VotingConfig& voting;
    int threads;

    DetectionSet operator()(const EnsemblePlan& node) {
      if (node.is_leaf()) {
        const auto it = inputs.find(node.source_id());
        if (it == inputs.end()) {
          throw InputError("plan references unknown source '" + node.source_id() + "'");
        }
        return it->second;
      }
      return merge_children((*this)(node.left()), (*this)(node.right()), node.params(),
                            voting, threads);
    }
  };
  return Exec{inputs, voting, threads}(plan);
}

FoldSplit make_folds(const GroundTruthSet& gts, const SearchConfig& cfg) {
  const double total_fraction =
      cfg.train_fraction + cfg.fold_a_fraction + cfg.fold_b_fraction;
  if (std::abs(total_fraction - 1.0) > 1e-9) {
    throw InputError("split fractions must sum to 1");
  }
  const std::array<double, 3> fractions{cfg.train_fraction, cfg.fold_a_fraction,
                                        cfg.fold_b_fraction};

  std::map<int, std::map<int, int>> image_cat_counts;
  std::map<int, std::int64_t> cat_totals;
  for (const auto& box : gts.boxes) {
    ++image_cat_counts[box.image][box.category];
    ++cat_totals[box.category];
  }

  std::vector<int> images = gts.roster;
  std::mt19937_64 rng(cfg.seed);
  std::shuffle(images.begin(), images.end(), rng);

  FoldSplit folds;
  std::array<std::map<int, std::int64_t>, 3> placed_cat;
  std::array<std::int64_t, 3> placed_images{0, 0, 0};
  const auto n_images = static_cast<double>(images.size());

  for (int image : images) {
    double best_score = -std::numeric_limits<double>::infinity();
    int best_split = 0;
    for (int s = 0; s < 3; ++s) {
      double score = 0.0;
      const auto it = image_cat_counts.find(image);
      if (it != image_cat_counts.end() && !it->second.empty()) {
        for (const auto& [category, count] : it->second) {
          const double target = fractions[s] * static_cast<double>(cat_totals[category]);
          const double deficit = target - static_cast<double>(placed_cat[s][category]);
          score += static_cast<double>(count) * deficit / (target + 1.0);
        }
      } else {
        const double target = fractions[s] * n_images;
        score = (target - static_cast<double>(placed_images[s])) / (target + 1.0);
      }
      if (score > best_score) {
        best_score = score;
        best_split = s;
      }
    }
    folds.split_of_image[image] = best_split;
    folds.images[best_split].push_back(image);
    ++placed_images[best_split];
    const auto it = image_cat_counts.find(image);
    if (it != image_cat_counts.end()) {
      for (const auto& [category, count] : it->second) {
        placed_cat[best_split][category] += count;
      }
    }
  }
  for (auto& list : folds.images) std::sort(list.begin(), list.end());
  return folds;
}

GroundTruthSet filter_to_images(const GroundTruthSet& gts, const FoldSplit& folds, int split) {
  GroundTruthSet out;
  for (int image : gts.roster) {
    const auto it = folds.split_of_image.find(image);
    if (it != folds.split_of_image.end() && it->second == split) out.roster.push_back(image);
  }
  for (const auto& box : gts.boxes) {
    const auto it = folds.split_of_image.find(box.image);
    if (it != folds.split_of_image.end() && it->second == split) out.boxes.push_back(box);
  }
  return out;
}

DetectionSet filter_to_images(const DetectionSet& dets, const FoldSplit& folds, int split) {
  DetectionSet out;
  out.source_id = dets.source_id;
  for (int image : dets.roster) {
    const auto it = folds.split_of_image.find(image);
    if (it != folds.split_of_image.end() && it->second == split) out.roster.push_back(image);
  }
  for (const auto& det : dets.items) {
    const auto it = folds.split_of_image.find(det.image);
    if (it != folds.split_of_image.end() && it->second == split) out.items.push_back(det);
  }
  return out;
}

PlanSearch::PlanSearch(const std::vector<DetectionSet>& leaves, const GroundTruthSet& gt,
                       const CategoryHierarchy& hierarchy, const Vocab& vocab,
                       SearchConfig cfg)
    : hierarchy_(hierarchy), vocab_(vocab), cfg_(std::move(cfg)) {
  if (leaves.empty()) throw InputError("plan search needs at least one detection set");
  folds_ = make_folds(gt, cfg_);
  gt_a_ = filter_to_images(gt, folds_, 1);
  gt_b_ = filter_to_images(gt, folds_, 2);
  for (const auto& set : leaves) {
    if (set.source_id.empty()) throw InputError("every leaf needs a source id");
    if (inputs_a_.count(set.source_id) > 0) {
      throw InputError("duplicate source id '" + set.source_id + "'");
    }
    leaf_ids_.push_back(set.source_id);
    inputs_a_[set.source_id] = filter_to_images(set, folds_, 1);
    inputs_b_[set.source_id] = filter_to_images(set, folds_, 2);
  }
}

double PlanSearch::fitness_uncached(const EnsemblePlan& plan, int fold) const {
  const auto& inputs = fold == 1 ? inputs_a_ : inputs_b_;
  const auto& gt = fold == 1 ? gt_a_ : gt_b_;
  const DetectionSet merged = execute_plan(plan, inputs, cfg_.voting, 1);
  return evaluate(merged, gt, hierarchy_, cfg_.eval, vocab_, 1).map;
}

double PlanSearch::fitness(const EnsemblePlan& plan, int fold) {
  const std::pair<std::string, int> key{plan.canonical_key(), fold};
  {
    std::lock_guard<std::mutex> lock(cache_mu_);
    const auto it = fitness_cache_.find(key);
    if (it != fitness_cache_.end()) return it->second;
  }
  const double value = fitness_uncached(plan, fold);
  std::lock_guard<std::mutex> lock(cache_mu_);
  fitness_cache_.emplace(key, value);
  return value;
}

EnsemblePlan PlanSearch::search_architecture(std::vector<double>* trace) {
  std::vector<EnsemblePlan> pool;
  pool.reserve(leaf_ids_.size());
  for (const std::string& id : leaf_ids_) pool.push_back(EnsemblePlan::leaf(id));

  // singletons seed the running best: pass-through stays admissible
  EnsemblePlan best_plan = pool.front();
  double best_fitness = -1.0;
  for (const auto& plan : pool) {
    const double f = fitness(plan, 1);
    if (f > best_fitness) {
      best_fitness = f;
      best_plan = plan;
    }
  }
  if (trace != nullptr) trace->push_back(best_fitness);

  while (pool.size() > 1) {
    std::vector<std::pair<std::size_t, std::size_t>> pairs;
    for (std::size_t i = 0; i < pool.size(); ++i) {
      for (std::size_t j = i + 1; j < pool.size(); ++j) pairs.emplace_back(i, j);
    }
    std::vector<double> fits(pairs.size());
    parallel_for(pairs.size(), cfg_.threads, [&](std::size_t p) {
      fits[p] = fitness(EnsemblePlan::merge(pool[pairs[p].first], pool[pairs[p].second]), 1);
    });
    // lexicographically first pair wins ties
    std::size_t winner = 0;
    for (std::size_t p = 1; p < pairs.size(); ++p) {
      if (fits[p] > fits[winner]) winner = p;
    }
    EnsemblePlan merged = EnsemblePlan::merge(pool[pairs[winner].first],
                                              pool[pairs[winner].second]);
    if (fits[winner] > best_fitness) {
      best_fitness = fits[winner];
      best_plan = merged;
    }
    if (trace != nullptr) trace->push_back(best_fitness);
    pool.erase(pool.begin() + static_cast<std::ptrdiff_t>(pairs[winner].second));
    pool.erase(pool.begin() + static_cast<std::ptrdiff_t>(pairs[winner].first));
    pool.push_back(std::move(merged));
  }
  return best_plan;
}

int PlanSearch::search_operators(EnsemblePlan& plan) {
  const auto nodes = plan.merge_nodes_post_order();
  if (nodes.empty() || cfg_.budget_per_node <= 0) return 0;

  enum class Dim { kWeightLeft, kWeightRight, kBoxSource, kScoreSource, kNms, kMatchIou };
  const std::array<Dim, 6> dims{Dim::kWeightLeft, Dim::kWeightRight, Dim::kBoxSource,
                                Dim::kScoreSource, Dim::kNms, Dim::kMatchIou};
  const std::array<MergeSource, 3> sources{MergeSource::kBoth, MergeSource::kLeftOnly,
                                           MergeSource::kRightOnly};
  const std::array<NmsKind, 3> nms_kinds{NmsKind::kNaive, NmsKind::kSoft, NmsKind::kAdj};

  auto candidates_for = [&](const MergeParams& current, Dim dim) {
    std::vector<MergeParams> out;
    auto push = [&](MergeParams p) {
      if (!(p == current) && merge_params_valid(p)) out.push_back(p);
    };
    switch (dim) {
      case Dim::kWeightLeft:
        for (double w : cfg_.weight_grid) {
          MergeParams p = current;
          p.score_weight_left = w;
          push(p);
        }
        break;
      case Dim::kWeightRight:
        for (double w : cfg_.weight_grid) {
          MergeParams p = current;
          p.score_weight_right = w;
          push(p);
        }
        break;
      case Dim::kBoxSource:
        for (MergeSource s : sources) {
          MergeParams p = current;
          p.box_source = s;
          push(p);
        }
        break;
      case Dim::kScoreSource:
        for (MergeSource s : sources) {
          MergeParams p = current;
          p.score_source = s;
          push(p);
        }
        break;
      case Dim::kNms:
        for (NmsKind kind : nms_kinds) {
          MergeParams p = current;
          p.nms_kind = kind;
          push(p);
        }
        break;
      case Dim::kMatchIou:
        for (double m : cfg_.match_iou_grid) {
          MergeParams p = current;
          p.match_iou = m;
          push(p);
        }
        break;
    }
    return out;
  };

  auto mean_fold_fitness = [&](const EnsemblePlan& candidate) {
    return 0.5 * (fitness(candidate, 1) + fitness(candidate, 2));
  };

  std::vector<int> spent(nodes.size(), 0);
  int total_evaluations = 0;
  bool improved = true;
  while (improved) {
    improved = false;
    for (std::size_t n = 0; n < nodes.size(); ++n) {
      for (const Dim dim : dims) {
        const int remaining = cfg_.budget_per_node - spent[n];
        if (remaining <= 0) break;
        auto candidates = candidates_for(nodes[n]->params(), dim);
        if (candidates.size() > static_cast<std::size_t>(remaining)) {
          candidates.resize(static_cast<std::size_t>(remaining));
        }
        if (candidates.empty()) continue;

        const double baseline = mean_fold_fitness(plan);
        std::vector<double> fits(candidates.size());
        parallel_for(candidates.size(), cfg_.threads, [&](std::size_t c) {
          EnsemblePlan trial = plan;
          trial.merge_nodes_post_order()[n]->mutable_params() = candidates[c];
          fits[c] = mean_fold_fitness(trial);
        });
        spent[n] += static_cast<int>(candidates.size());
        total_evaluations += static_cast<int>(candidates.size());

        std::size_t best = 0;
        for (std::size_t c = 1; c < candidates.size(); ++c) {
          if (fits[c] > fits[best]) best = c;
        }
        if (fits[best] > baseline) {
          nodes[n]->mutable_params() = candidates[best];
          improved = true;
        }
      }
    }
  }
  return total_evaluations;
}

SearchResult PlanSearch::run() {
  SearchResult result;
  for (const std::string& id : leaf_ids_) {
    result.leaf_fold_a_map[id] = fitness(EnsemblePlan::leaf(id), 1);
  }
  result.plan = search_architecture(&result.architecture_trace);
  result.operator_evaluations = search_operators(result.plan);
  result.fold_a_map = fitness(result.plan, 1);
  result.fold_b_map = fitness(result.plan, 2);
  result.leaf_depth = result.plan.leaf_depths();
  return result;
}

}  // namespace detkit
