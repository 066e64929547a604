#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <random>
#include <span>
#include <vector>

#include "detkit/detections.hpp"

namespace detkit {

// Class-aware image sampling: draw a category uniformly among those with at
// least one image, then an image uniformly from that category's list.
struct SamplingPlan {
  std::vector<int> categories;  // ascending, each with >= 1 image
  std::map<int, std::vector<int>> images_by_category;
  std::map<int, double> image_probability;  // sums to 1

  int draw(std::mt19937_64& rng) const;  // returns an image id
};

SamplingPlan build_sampling_plan(const GroundTruthSet& gts);
void save_sampling_plan_csv(const SamplingPlan& plan, const Vocab& vocab,
                            const std::filesystem::path& path);

// Throws InputError on mismatched dimensions or a zero vector.
double cosine_similarity(std::span<const double> v1, std::span<const double> v2);

// Final classification-layer weights, one row per category.
struct ClassifierWeights {
  std::vector<int> categories;  // row order
  std::vector<std::vector<double>> rows;
  int dimension = 0;

  std::optional<int> row_of(int category) const;
};

// Text file, one row per line: label followed by the weight values.
ClassifierWeights load_classifier_weights(const std::filesystem::path& path, Vocab& vocab);

struct ExpertSelection {
  std::vector<int> c_pos;  // ascending
  std::vector<int> c_neg;  // ascending
  std::map<int, double> neg_similarity;  // c_neg member -> max cosine vs C_pos
  std::vector<int> images_pos;  // filled when ground truth is supplied
  std::vector<int> images_neg;
};

// C_neg = categories outside C_pos whose max cosine similarity against any
// C_pos row exceeds the threshold. With ground truth, also reports the image
// subsets containing each side (the positive:negative ratio is reported, not
// enforced).
ExpertSelection select_expert_categories(std::span<const int> c_pos,
                                         const ClassifierWeights& weights,
                                         double threshold,
                                         const GroundTruthSet* gts = nullptr);

enum class AnchorMetric { kIouDistance, kLogEuclidean };

AnchorMetric anchor_metric_from_string(std::string_view s);
const char* to_string(AnchorMetric m);

struct AnchorBox {
  double w = 0.0;
  double h = 0.0;
};

struct AnchorSet {
  std::vector<AnchorBox> anchors;
  double mean_distance = 0.0;  // final mean within-cluster distance
  int iterations = 0;
};

// Lloyd's iteration with seeded k-means++ initialization. The objective is
// checked each round and the loop stops as soon as it fails to improve, so
// the reported objective never increases across iterations. Throws when
// k exceeds the number of boxes.
AnchorSet kmeans_anchors(std::span<const AnchorBox> boxes, int k, AnchorMetric metric,
                         std::uint64_t seed, std::vector<double>* objective_trace = nullptr);

// (w, h) for every ratio x scale combination: w = scale / sqrt(ratio),
// h = scale * sqrt(ratio).
std::vector<AnchorBox> anchor_grid(std::span<const double> ratios,
                                   std::span<const double> scales);

// Nearest grid anchor per center under log-euclidean distance.
std::vector<AnchorBox> snap_to_grid(std::span<const AnchorBox> centers,
                                    std::span<const AnchorBox> grid);

// Empirical distribution of r = long side of box / long side of image,
// binned uniformly; sampling inverts the CDF with linear interpolation and
// clamps into [stat_min, min(mem_max, stat_max)].
class ScaleDistribution {
 public:
  static ScaleDistribution from_ratios(std::vector<double> ratios, int bins = 1024);

  void set_bounds(double stat_min, double stat_max, double mem_max);

  double sample(double u) const;

  double stat_min() const { return stat_min_; }
  double stat_max() const { return stat_max_; }
  double mem_max() const { return mem_max_; }

 private:
  double inverse_cdf(double u) const;

  double lo_ = 0.0, hi_ = 0.0;       // observed ratio range
  std::vector<double> cdf_;          // value at each bin's right edge
  double stat_min_ = 0.0, stat_max_ = 1.0, mem_max_ = 1.0;
};

// max(width, height) per ground-truth box, in normalized units
std::vector<double> box_scale_ratios(const GroundTruthSet& gts);

}  // namespace detkit
