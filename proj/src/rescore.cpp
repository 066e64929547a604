#include "detkit/rescore.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <tuple>

#include "detkit/errors.hpp"
#include "detkit/io.hpp"

namespace detkit {

double CooccurrenceModel::cond(int i, int j) const {
  const auto pair_it = pair_count.find({i, j});
  if (pair_it == pair_count.end()) return 0.0;
  const int denom_category = denom == CondDenominator::kCategoryI ? i : j;
  const auto count_it = object_count.find(denom_category);
  if (count_it == object_count.end() || count_it->second == 0) return 0.0;
  // C_ij <= C_i always; under the alternate denominator C_ij may exceed C_j,
  // so the ratio is capped to keep cond a probability
  return std::min(1.0, static_cast<double>(pair_it->second) /
                           static_cast<double>(count_it->second));
}

CooccurrenceModel build_cooccurrence(const GroundTruthSet& gts, CondDenominator denom) {
  CooccurrenceModel model;
  model.denom = denom;

  const auto present = categories_by_image(gts);
  std::map<int, std::map<int, std::int64_t>> per_image_objects;
  for (const auto& box : gts.boxes) {
    ++model.object_count[box.category];
    ++per_image_objects[box.image][box.category];
  }
  for (const auto& [image, objects] : per_image_objects) {
    const auto& cats = present.at(image);
    for (const auto& [i, n] : objects) {
      for (int j : cats) model.pair_count[{i, j}] += n;
    }
  }
  return model;
}

DetectionSet rescore_detections(const DetectionSet& dets, const CooccurrenceModel& model,
                                double lambda) {
  if (lambda < 0.0 || lambda > 1.0) throw InputError("lambda must lie in [0,1]");
  DetectionSet out = dets;
  if (lambda == 0.0 || out.items.empty()) return out;

  // top-scoring detection per (image, category); the canonical winner among
  // ties is the one with the smallest corners, then input order
  std::map<GroupKey, std::uint32_t> top;
  for (std::uint32_t i = 0; i < out.items.size(); ++i) {
    const Detection& d = out.items[i];
    auto [it, inserted] = top.emplace(GroupKey{d.image, d.category}, i);
    if (inserted) continue;
    const Detection& cur = out.items[it->second];
    const auto ki = std::tie(d.box.x_min, d.box.y_min, d.box.x_max, d.box.y_max);
    const auto kc = std::tie(cur.box.x_min, cur.box.y_min, cur.box.x_max, cur.box.y_max);
    if (d.score > cur.score || (d.score == cur.score && ki < kc)) it->second = i;
  }

  // per image: max-product closure of s_j * cond(i, j), then the blend raise
  std::map<int, std::vector<std::pair<int, std::uint32_t>>> by_image;
  for (const auto& [key, idx] : top) by_image[key.image].emplace_back(key.category, idx);

  for (const auto& [image, cats] : by_image) {
    const std::size_t n = cats.size();
    if (n < 2) continue;
    std::vector<double> support(n);
    for (std::size_t i = 0; i < n; ++i) support[i] = out.items[cats[i].second].score;
    // factors stay <= 1, so simple paths dominate and n passes reach the fixpoint
    for (std::size_t pass = 0; pass < n; ++pass) {
      bool changed = false;
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
          if (i == j) continue;
          const double bound = support[j] * model.cond(cats[i].first, cats[j].first);
          if (bound > support[i]) {
            support[i] = bound;
            changed = true;
          }
        }
      }
      if (!changed) break;
    }
    for (std::size_t i = 0; i < n; ++i) {
      Detection& det = out.items[cats[i].second];
      if (support[i] > det.score) {
        // lambda == 1 assigns the bound itself so the result is an exact fixpoint
        det.score = lambda == 1.0 ? support[i]
                                  : det.score + lambda * (support[i] - det.score);
      }
    }
  }
  return out;
}

void save_cooccurrence_csv(const CooccurrenceModel& model, const Vocab& vocab,
                           const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot open '" + path.string() + "' for writing");
  out << "i,j,c_i,c_ij,cond\n";
  std::vector<std::tuple<std::string, std::string, int, int>> rows;
  for (const auto& [pair, count] : model.pair_count) {
    rows.emplace_back(vocab.labels.name(pair.first), vocab.labels.name(pair.second),
                      pair.first, pair.second);
  }
  std::sort(rows.begin(), rows.end());
  for (const auto& [name_i, name_j, i, j] : rows) {
    const auto count_it = model.object_count.find(i);
    const std::int64_t c_i = count_it == model.object_count.end() ? 0 : count_it->second;
    out << name_i << ',' << name_j << ',' << c_i << ',' << model.pair_count.at({i, j})
        << ',' << format_fixed6(model.cond(i, j)) << "\n";
  }
}

}  // namespace detkit
