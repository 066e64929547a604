#include "detkit/classtools.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>

#include "detkit/errors.hpp"
#include "detkit/io.hpp"

namespace detkit {

int SamplingPlan::draw(std::mt19937_64& rng) const {
  if (categories.empty()) throw InvariantError("sampling plan has no categories");
  std::uniform_int_distribution<std::size_t> pick_category(0, categories.size() - 1);
  const auto& images = images_by_category.at(categories[pick_category(rng)]);
  std::uniform_int_distribution<std::size_t> pick_image(0, images.size() - 1);
  return images[pick_image(rng)];
}

SamplingPlan build_sampling_plan(const GroundTruthSet& gts) {
  SamplingPlan plan;
  for (const auto& box : gts.boxes) {
    plan.images_by_category[box.category].push_back(box.image);
  }
  if (plan.images_by_category.empty()) {
    throw InputError("cannot build a sampling plan from ground truth without boxes");
  }
  for (auto& [category, images] : plan.images_by_category) {
    std::sort(images.begin(), images.end());
    images.erase(std::unique(images.begin(), images.end()), images.end());
    plan.categories.push_back(category);
  }
  const double categories_present = static_cast<double>(plan.categories.size());
  for (const auto& [category, images] : plan.images_by_category) {
    const double per_image = 1.0 / (categories_present * images.size());
    for (int image : images) plan.image_probability[image] += per_image;
  }
  return plan;
}

void save_sampling_plan_csv(const SamplingPlan& plan, const Vocab& vocab,
                            const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot open '" + path.string() + "' for writing");
  out << "image_id,probability\n";
  std::vector<std::pair<std::string, double>> rows;
  for (const auto& [image, p] : plan.image_probability) {
    rows.emplace_back(vocab.images.name(image), p);
  }
  std::sort(rows.begin(), rows.end());
  for (const auto& [name, p] : rows) out << name << ',' << format_fixed6(p) << "\n";
}

double cosine_similarity(std::span<const double> v1, std::span<const double> v2) {
  if (v1.size() != v2.size()) {
    throw InputError("cosine similarity needs vectors of equal dimension");
  }
  if (v1.empty()) throw InputError("cosine similarity needs non-empty vectors");
  double dot = 0.0, n1 = 0.0, n2 = 0.0;
  for (std::size_t i = 0; i < v1.size(); ++i) {
    dot += v1[i] * v2[i];
    n1 += v1[i] * v1[i];
    n2 += v2[i] * v2[i];
  }
  if (n1 == 0.0 || n2 == 0.0) throw InputError("cosine similarity of a zero vector");
  return dot / (std::sqrt(n1) * std::sqrt(n2));
}

ClassifierWeights load_classifier_weights(const std::filesystem::path& path, Vocab& vocab) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open '" + path.string() + "' for reading");
  ClassifierWeights weights;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::istringstream fields(line);
    std::string label;
    fields >> label;
    std::vector<double> row;
    std::string token;
    while (fields >> token) {
      double value = 0.0;
      const auto [ptr, ec] = std::from_chars(token.data(), token.data() + token.size(), value);
      if (ec != std::errc{} || ptr != token.data() + token.size()) {
        throw InputError(path.string() + ":" + std::to_string(line_no) +
                         ": cannot parse weight '" + token + "'");
      }
      row.push_back(value);
    }
    if (row.empty()) {
      throw InputError(path.string() + ":" + std::to_string(line_no) +
                       ": row '" + label + "' has no weights");
    }
    if (weights.dimension == 0) {
      weights.dimension = static_cast<int>(row.size());
    } else if (static_cast<int>(row.size()) != weights.dimension) {
      throw InputError(path.string() + ":" + std::to_string(line_no) +
                       ": row dimension " + std::to_string(row.size()) +
                       " differs from " + std::to_string(weights.dimension));
    }
    weights.categories.push_back(vocab.labels.intern(label));
    weights.rows.push_back(std::move(row));
  }
  if (weights.rows.empty()) throw InputError(path.string() + ": no weight rows");
  return weights;
}

std::optional<int> ClassifierWeights::row_of(int category) const {
  for (std::size_t i = 0; i < categories.size(); ++i) {
    if (categories[i] == category) return static_cast<int>(i);
  }
  return std::nullopt;
}

ExpertSelection select_expert_categories(std::span<const int> c_pos,
                                         const ClassifierWeights& weights,
                                         double threshold, const GroundTruthSet* gts) {
  if (c_pos.empty()) throw InputError("expert selection needs at least one positive category");
  ExpertSelection out;
  out.c_pos.assign(c_pos.begin(), c_pos.end());
  std::sort(out.c_pos.begin(), out.c_pos.end());
  out.c_pos.erase(std::unique(out.c_pos.begin(), out.c_pos.end()), out.c_pos.end());

  std::vector<int> pos_rows;
  for (int category : out.c_pos) {
    const auto row = weights.row_of(category);
    if (!row) {
      throw InvariantError("positive category id " + std::to_string(category) +
                           " is missing from the classifier weights");
    }
    pos_rows.push_back(*row);
  }

  for (std::size_t r = 0; r < weights.categories.size(); ++r) {
    const int category = weights.categories[r];
    if (std::binary_search(out.c_pos.begin(), out.c_pos.end(), category)) continue;
    double best = -1.0;
    for (int pr : pos_rows) {
      best = std::max(best, cosine_similarity(weights.rows[r], weights.rows[pr]));
    }
    if (best > threshold) {
      out.c_neg.push_back(category);
      out.neg_similarity[category] = best;
    }
  }
  std::sort(out.c_neg.begin(), out.c_neg.end());

  if (gts != nullptr) {
    const auto present = categories_by_image(*gts);
    std::set<int> pos_set(out.c_pos.begin(), out.c_pos.end());
    std::set<int> neg_set(out.c_neg.begin(), out.c_neg.end());
    for (const auto& [image, cats] : present) {
      bool has_pos = false, has_neg = false;
      for (int c : cats) {
        has_pos = has_pos || pos_set.count(c) > 0;
        has_neg = has_neg || neg_set.count(c) > 0;
      }
      if (has_pos) out.images_pos.push_back(image);
      if (has_neg) out.images_neg.push_back(image);
    }
  }
  return out;
}

AnchorMetric anchor_metric_from_string(std::string_view s) {
  if (s == "iou") return AnchorMetric::kIouDistance;
  if (s == "logwh") return AnchorMetric::kLogEuclidean;
  throw InputError("unknown anchor metric '" + std::string(s) + "' (iou|logwh)");
}

const char* to_string(AnchorMetric m) {
  return m == AnchorMetric::kIouDistance ? "iou" : "logwh";
}

namespace {

double shape_iou(const AnchorBox& a, const AnchorBox& b) {
  const double inter = std::min(a.w, b.w) * std::min(a.h, b.h);
  const double uni = a.w * a.h + b.w * b.h - inter;
  if (uni <= 0.0) return 0.0;
  return inter / uni;
}

double anchor_distance(const AnchorBox& a, const AnchorBox& b, AnchorMetric metric) {
  if (metric == AnchorMetric::kIouDistance) return 1.0 - shape_iou(a, b);
  const double dw = std::log(a.w) - std::log(b.w);
  const double dh = std::log(a.h) - std::log(b.h);
  return std::sqrt(dw * dw + dh * dh);
}

AnchorBox cluster_center(std::span<const AnchorBox> boxes,
                         std::span<const int> assignment, int cluster,
                         AnchorMetric metric, const AnchorBox& fallback) {
  double sw = 0.0, sh = 0.0;
  int n = 0;
  for (std::size_t i = 0; i < boxes.size(); ++i) {
    if (assignment[i] != cluster) continue;
    if (metric == AnchorMetric::kLogEuclidean) {
      sw += std::log(boxes[i].w);
      sh += std::log(boxes[i].h);
    } else {
      sw += boxes[i].w;
      sh += boxes[i].h;
    }
    ++n;
  }
  if (n == 0) return fallback;
  if (metric == AnchorMetric::kLogEuclidean) {
    return AnchorBox{std::exp(sw / n), std::exp(sh / n)};
  }
  return AnchorBox{sw / n, sh / n};
}

}  // namespace

AnchorSet kmeans_anchors(std::span<const AnchorBox> boxes, int k, AnchorMetric metric,
                         std::uint64_t seed, std::vector<double>* objective_trace) {
  if (k < 1) throw InputError("k must be at least 1");
  if (static_cast<std::size_t>(k) > boxes.size()) {
    throw InputError("k = " + std::to_string(k) + " exceeds the number of boxes (" +
                     std::to_string(boxes.size()) + ")");
  }
  for (const auto& b : boxes) {
    if (!(b.w > 0.0) || !(b.h > 0.0)) {
      throw InputError("anchor clustering needs strictly positive box dimensions");
    }
  }

  std::mt19937_64 rng(seed);
  std::vector<AnchorBox> centers;
  centers.reserve(k);
  // k-means++ seeding
  std::uniform_int_distribution<std::size_t> first(0, boxes.size() - 1);
  centers.push_back(boxes[first(rng)]);
  std::vector<double> d2(boxes.size());
  while (static_cast<int>(centers.size()) < k) {
    double total = 0.0;
    for (std::size_t i = 0; i < boxes.size(); ++i) {
      double best = std::numeric_limits<double>::infinity();
      for (const auto& c : centers) best = std::min(best, anchor_distance(boxes[i], c, metric));
      d2[i] = best * best;
      total += d2[i];
    }
    std::size_t chosen = 0;
    if (total > 0.0) {
      std::uniform_real_distribution<double> u(0.0, total);
      double cut = u(rng);
      for (std::size_t i = 0; i < boxes.size(); ++i) {
        cut -= d2[i];
        if (cut <= 0.0) {
          chosen = i;
          break;
        }
      }
    } else {
      chosen = first(rng);
    }
    centers.push_back(boxes[chosen]);
  }

  auto assign = [&](std::vector<int>& assignment) {
    double objective = 0.0;
    for (std::size_t i = 0; i < boxes.size(); ++i) {
      double best = std::numeric_limits<double>::infinity();
      int arg = 0;
      for (int c = 0; c < k; ++c) {
        const double d = anchor_distance(boxes[i], centers[c], metric);
        if (d < best) {
          best = d;
          arg = c;
        }
      }
      assignment[i] = arg;
      objective += best;
    }
    return objective / static_cast<double>(boxes.size());
  };

  std::vector<int> assignment(boxes.size(), 0);
  double objective = assign(assignment);
  if (objective_trace != nullptr) objective_trace->push_back(objective);
  AnchorSet result;
  result.anchors = centers;
  result.mean_distance = objective;

  constexpr int kMaxIterations = 100;
  for (int iter = 0; iter < kMaxIterations; ++iter) {
    std::vector<AnchorBox> updated(k);
    for (int c = 0; c < k; ++c) {
      updated[c] = cluster_center(boxes, assignment, c, metric, centers[c]);
    }
    centers = updated;
    const double next = assign(assignment);
    // the mean update is not the exact minimizer under the IoU metric, so a
    // worsening step is discarded and the previous state kept
    if (next >= objective - 1e-15) {
      if (next < objective) {
        result.anchors = centers;
        result.mean_distance = next;
        result.iterations = iter + 1;
        if (objective_trace != nullptr) objective_trace->push_back(next);
      }
      break;
    }
    objective = next;
    result.anchors = centers;
    result.mean_distance = next;
    result.iterations = iter + 1;
    if (objective_trace != nullptr) objective_trace->push_back(next);
  }
  return result;
}

std::vector<AnchorBox> anchor_grid(std::span<const double> ratios,
                                   std::span<const double> scales) {
  std::vector<AnchorBox> grid;
  grid.reserve(ratios.size() * scales.size());
  for (const double scale : scales) {
    for (const double ratio : ratios) {
      if (ratio <= 0.0 || scale <= 0.0) {
        throw InputError("anchor grid ratios and scales must be positive");
      }
      grid.push_back(AnchorBox{scale / std::sqrt(ratio), scale * std::sqrt(ratio)});
    }
  }
  return grid;
}

std::vector<AnchorBox> snap_to_grid(std::span<const AnchorBox> centers,
                                    std::span<const AnchorBox> grid) {
  if (grid.empty()) throw InputError("cannot snap to an empty grid");
  std::vector<AnchorBox> out;
  out.reserve(centers.size());
  for (const auto& c : centers) {
    double best = std::numeric_limits<double>::infinity();
    AnchorBox snapped = grid[0];
    for (const auto& g : grid) {
      const double d = anchor_distance(c, g, AnchorMetric::kLogEuclidean);
      if (d < best) {
        best = d;
        snapped = g;
      }
    }
    out.push_back(snapped);
  }
  return out;
}

ScaleDistribution ScaleDistribution::from_ratios(std::vector<double> ratios, int bins) {
  if (ratios.empty()) throw InputError("scale distribution needs at least one ratio");
  if (bins < 1) throw InputError("scale distribution needs at least one bin");
  for (double r : ratios) {
    if (!(r > 0.0)) throw InputError("scale ratios must be positive");
  }
  ScaleDistribution dist;
  const auto [lo, hi] = std::minmax_element(ratios.begin(), ratios.end());
  dist.lo_ = *lo;
  dist.hi_ = *hi;
  dist.stat_min_ = dist.lo_;
  dist.stat_max_ = dist.hi_;
  dist.mem_max_ = dist.hi_;
  if (dist.lo_ == dist.hi_) {
    dist.cdf_ = {1.0};
    return dist;
  }
  std::vector<std::int64_t> counts(bins, 0);
  const double width = (dist.hi_ - dist.lo_) / bins;
  for (double r : ratios) {
    int bin = static_cast<int>((r - dist.lo_) / width);
    bin = std::clamp(bin, 0, bins - 1);
    ++counts[bin];
  }
  dist.cdf_.resize(bins);
  double cum = 0.0;
  for (int b = 0; b < bins; ++b) {
    cum += static_cast<double>(counts[b]) / static_cast<double>(ratios.size());
    dist.cdf_[b] = cum;
  }
  dist.cdf_.back() = 1.0;
  return dist;
}

void ScaleDistribution::set_bounds(double stat_min, double stat_max, double mem_max) {
  if (!(stat_min <= stat_max) || !(mem_max > 0.0)) {
    throw InputError("scale bounds must satisfy stat_min <= stat_max and mem_max > 0");
  }
  stat_min_ = stat_min;
  stat_max_ = stat_max;
  mem_max_ = mem_max;
}

double ScaleDistribution::inverse_cdf(double u) const {
  if (lo_ == hi_) return lo_;
  const int bins = static_cast<int>(cdf_.size());
  const double width = (hi_ - lo_) / bins;
  double prev = 0.0;
  for (int b = 0; b < bins; ++b) {
    if (u <= cdf_[b]) {
      const double mass = cdf_[b] - prev;
      const double f = mass > 0.0 ? (u - prev) / mass : 0.0;
      return lo_ + (b + f) * width;
    }
    prev = cdf_[b];
  }
  return hi_;
}

double ScaleDistribution::sample(double u) const {
  if (u < 0.0 || u > 1.0) throw InputError("inverse-CDF draw must lie in [0,1]");
  const double upper = std::min(mem_max_, stat_max_);
  return std::clamp(inverse_cdf(u), stat_min_, std::max(stat_min_, upper));
}

std::vector<double> box_scale_ratios(const GroundTruthSet& gts) {
  std::vector<double> ratios;
  ratios.reserve(gts.boxes.size());
  for (const auto& box : gts.boxes) {
    const double r = std::max(box.box.width(), box.box.height());
    if (r > 0.0) ratios.push_back(r);
  }
  return ratios;
}

}  // namespace detkit
