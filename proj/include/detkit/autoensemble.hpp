#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <unordered_map>
#include <vector>

#include "detkit/ensemble.hpp"

namespace detkit {

enum class MergeSource { kBoth, kLeftOnly, kRightOnly };

MergeSource merge_source_from_string(std::string_view s);
const char* to_string(MergeSource s);

struct MergeParams {
  double score_weight_left = 1.0;   // [0, 2]; scaled scores clamp at 1
  double score_weight_right = 1.0;  // [0, 2]
  MergeSource box_source = MergeSource::kBoth;
  MergeSource score_source = MergeSource::kBoth;
  NmsKind nms_kind = NmsKind::kAdj;
  double match_iou = 0.5;  // voter threshold of the vote step

  bool operator==(const MergeParams&) const = default;
};

// The box and score sources must jointly cover both children.
bool merge_params_valid(const MergeParams& p);

// Binary plan tree: leaves name detection sets, merge nodes carry the
// operator parameters. Value type with deep copy.
class EnsemblePlan {
 public:
  static EnsemblePlan leaf(std::string source_id);
  static EnsemblePlan merge(EnsemblePlan left, EnsemblePlan right, MergeParams params = {});

  EnsemblePlan(const EnsemblePlan& other);
  EnsemblePlan& operator=(const EnsemblePlan& other);
  EnsemblePlan(EnsemblePlan&&) = default;
  EnsemblePlan& operator=(EnsemblePlan&&) = default;

  bool is_leaf() const { return leaf_; }
  const std::string& source_id() const { return source_id_; }
  const EnsemblePlan& left() const { return *left_; }
  const EnsemblePlan& right() const { return *right_; }
  const MergeParams& params() const { return params_; }
  MergeParams& mutable_params() { return params_; }

  std::vector<std::string> leaf_ids() const;  // in-order
  // merge nodes in post-order (children before parents, root last)
  std::vector<EnsemblePlan*> merge_nodes_post_order();

  // throws InputError on duplicate leaves, invalid params or ranges
  void validate() const;

  // stable textual identity used as the fitness-cache key
  std::string canonical_key() const;

  std::map<std::string, int> leaf_depths() const;

 private:
  EnsemblePlan() = default;

  bool leaf_ = true;
  std::string source_id_;
  MergeParams params_;
  std::unique_ptr<EnsemblePlan> left_;
  std::unique_ptr<EnsemblePlan> right_;
};

// JSON plan format: {"leaf": id} or
// {"merge": {"left":..., "right":..., "params": {...}}}
std::string plan_to_json(const EnsemblePlan& plan);
EnsemblePlan plan_from_json(const std::string& text);

// Bottom-up execution. Each merge scales child scores by its weights (clamped
// at 1), pools the children as two sources, runs the configured NMS on every
// (image, category) group and votes the survivors under the node's element
// dropout. Leaves are looked up in <inputs> by source id.
DetectionSet execute_plan(const EnsemblePlan& plan,
                          const std::map<std::string, DetectionSet>& inputs,
                          const VotingConfig& voting = {}, int threads = 1);

struct SearchConfig {
  double train_fraction = 0.8;
  double fold_a_fraction = 0.1;
  double fold_b_fraction = 0.1;
  // candidate evaluations allowed per merge node during operator search;
  // 0 leaves the plan untouched
  int budget_per_node = 50;
  std::vector<double> weight_grid = {0.25, 0.5, 0.75, 1.0, 1.25, 1.5};
  std::vector<double> match_iou_grid = {0.4, 0.5, 0.6};
  std::uint64_t seed = 0;
  int threads = 1;
  EvalConfig eval;
  VotingConfig voting;
};

// 0 = train, 1 = fold A, 2 = fold B
struct FoldSplit {
  std::unordered_map<int, int> split_of_image;
  std::array<std::vector<int>, 3> images;
};

// Stratified assignment: images are shuffled by seed and greedily placed in
// the split with the largest per-category deficit, keeping each fold's
// category counts near the global distribution.
FoldSplit make_folds(const GroundTruthSet& gts, const SearchConfig& cfg);

GroundTruthSet filter_to_images(const GroundTruthSet& gts, const FoldSplit& folds, int split);
DetectionSet filter_to_images(const DetectionSet& dets, const FoldSplit& folds, int split);

struct SearchResult {
  EnsemblePlan plan = EnsemblePlan::leaf("");
  // running best fold-A mAP per agglomeration step; non-decreasing
  std::vector<double> architecture_trace;
  double fold_a_map = 0.0;
  double fold_b_map = 0.0;
  std::map<std::string, double> leaf_fold_a_map;
  std::map<std::string, int> leaf_depth;  // in the final plan
  int operator_evaluations = 0;
};

// Two-stage plan search: greedy pairwise agglomeration of the tree under
// default operators (fold-A fitness), then per-node coordinate descent over
// the operator grid (mean of fold A and B).
class PlanSearch {
 public:
  PlanSearch(const std::vector<DetectionSet>& leaves, const GroundTruthSet& gt,
             const CategoryHierarchy& hierarchy, const Vocab& vocab, SearchConfig cfg);

  // Returns the best plan seen across the agglomeration, which is never worse
  // on fold A than the best single leaf. <trace> records the running best.
  EnsemblePlan search_architecture(std::vector<double>* trace = nullptr);

  // Coordinate descent over merge nodes, bottom-up, repeated until a full
  // pass improves nothing or budgets run out. Never worsens mean-fold
  // fitness. Returns the number of candidate evaluations.
  int search_operators(EnsemblePlan& plan);

  SearchResult run();

  // cached mAP of the executed plan on fold 1 (A) or 2 (B)
  double fitness(const EnsemblePlan& plan, int fold);

  const FoldSplit& folds() const { return folds_; }

 private:
  double fitness_uncached(const EnsemblePlan& plan, int fold) const;

  const CategoryHierarchy& hierarchy_;
  const Vocab& vocab_;
  SearchConfig cfg_;
  FoldSplit folds_;
  std::vector<std::string> leaf_ids_;
  std::map<std::string, DetectionSet> inputs_a_;
  std::map<std::string, DetectionSet> inputs_b_;
  GroundTruthSet gt_a_;
  GroundTruthSet gt_b_;
  std::mutex cache_mu_;
  std::map<std::pair<std::string, int>, double> fitness_cache_;
};

}  // namespace detkit
