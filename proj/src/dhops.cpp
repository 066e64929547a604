#include "detkit/dhops.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "detkit/errors.hpp"

namespace detkit {

FeatureGrid::FeatureGrid(int height, int width, int channels, double fill)
    : h_(height), w_(width), ch_(channels) {
  if (height < 1 || width < 1 || channels < 1) {
    throw InputError("feature grid dimensions must be at least 1x1x1");
  }
  v_.assign(static_cast<std::size_t>(height) * width * channels, fill);
}

double& FeatureGrid::at(int y, int x, int c) {
  return v_[(static_cast<std::size_t>(y) * w_ + x) * ch_ + c];
}

double FeatureGrid::at(int y, int x, int c) const {
  return v_[(static_cast<std::size_t>(y) * w_ + x) * ch_ + c];
}

double FeatureGrid::sample_bilinear(double x, double y, int c) const {
  x = std::clamp(x, 0.0, static_cast<double>(w_ - 1));
  y = std::clamp(y, 0.0, static_cast<double>(h_ - 1));
  const int x0 = static_cast<int>(std::floor(x));
  const int y0 = static_cast<int>(std::floor(y));
  const int x1 = std::min(x0 + 1, w_ - 1);
  const int y1 = std::min(y0 + 1, h_ - 1);
  const double fx = x - x0;
  const double fy = y - y0;
  const double top = at(y0, x0, c) * (1.0 - fx) + at(y0, x1, c) * fx;
  const double bottom = at(y1, x0, c) * (1.0 - fx) + at(y1, x1, c) * fx;
  return top * (1.0 - fy) + bottom * fy;
}

OffsetField OffsetField::zeros(int k) {
  OffsetField f;
  f.k = k;
  f.v.assign(static_cast<std::size_t>(k) * k, {0.0, 0.0});
  return f;
}

namespace {

void validate_roi(const FeatureGrid& x, const RoiSpec& roi) {
  if (roi.bins < 1) throw InputError("RoI needs at least one bin per side");
  if (!(roi.width > 0.0) || !(roi.height > 0.0)) {
    throw InputError("RoI width and height must be positive");
  }
  const double x_end = roi.x0 + roi.width;
  const double y_end = roi.y0 + roi.height;
  if (roi.x0 < 0.0 || roi.y0 < 0.0 || x_end > x.width() - 1 || y_end > x.height() - 1) {
    throw InputError("RoI extends outside the feature grid lattice");
  }
}

void validate_offset(const std::array<double, 2>& o) {
  if (!std::isfinite(o[0]) || !std::isfinite(o[1])) {
    throw InputError("offsets must be finite");
  }
}

// sample positions of bin (i, j): covered integer lattice points, or the bin
// center when the bin covers none
void bin_samples(const RoiSpec& roi, int i, int j,
                 std::vector<std::pair<double, double>>& points) {
  points.clear();
  const double bw = roi.width / roi.bins;
  const double bh = roi.height / roi.bins;
  const double xs = roi.x0 + j * bw;
  const double xe = xs + bw;
  const double ys = roi.y0 + i * bh;
  const double ye = ys + bh;
  const int ix0 = static_cast<int>(std::ceil(xs));
  const int ix1 = static_cast<int>(std::floor(xe));
  const int iy0 = static_cast<int>(std::ceil(ys));
  const int iy1 = static_cast<int>(std::floor(ye));
  if (ix0 > ix1 || iy0 > iy1) {
    points.emplace_back((xs + xe) / 2.0, (ys + ye) / 2.0);
    return;
  }
  for (int iy = iy0; iy <= iy1; ++iy) {
    for (int ix = ix0; ix <= ix1; ++ix) points.emplace_back(ix, iy);
  }
}

void bin_samples_regular2x2(const RoiSpec& roi, int i, int j,
                            std::vector<std::pair<double, double>>& points) {
  points.clear();
  const double bw = roi.width / roi.bins;
  const double bh = roi.height / roi.bins;
  const double xs = roi.x0 + j * bw;
  const double ys = roi.y0 + i * bh;
  for (int sy = 0; sy < 2; ++sy) {
    for (int sx = 0; sx < 2; ++sx) {
      points.emplace_back(xs + (sx + 0.5) * bw / 2.0, ys + (sy + 0.5) * bh / 2.0);
    }
  }
}

FeatureGrid pool_with_offsets(const FeatureGrid& x, const RoiSpec& roi,
                              const OffsetField& offsets, const PoolOptions& opts) {
  validate_roi(x, roi);
  const int k = roi.bins;
  FeatureGrid out(k, k, x.channels());
  std::vector<std::pair<double, double>> points;
  for (int i = 0; i < k; ++i) {
    for (int j = 0; j < k; ++j) {
      auto [dx, dy] = offsets.at(i, j);
      validate_offset({dx, dy});
      if (opts.normalize_offsets) {
        dx *= roi.width;
        dy *= roi.height;
      }
      if (opts.sampling == BinSampling::kLattice) {
        bin_samples(roi, i, j, points);
      } else {
        bin_samples_regular2x2(roi, i, j, points);
      }
      for (int c = 0; c < x.channels(); ++c) {
        double sum = 0.0;
        for (const auto& [px, py] : points) {
          sum += x.sample_bilinear(px + dx, py + dy, c);
        }
        out.at(i, j, c) = sum / static_cast<double>(points.size());
      }
    }
  }
  return out;
}

}  // namespace

FeatureGrid dhpool_cls(const FeatureGrid& x, const RoiSpec& roi, const OffsetField& offsets,
                       const PoolOptions& opts) {
  if (offsets.k != roi.bins ||
      offsets.v.size() != static_cast<std::size_t>(roi.bins) * roi.bins) {
    throw InputError("per-bin offset field must be bins x bins x 2");
  }
  return pool_with_offsets(x, roi, offsets, opts);
}

FeatureGrid dhpool_reg(const FeatureGrid& x, const RoiSpec& roi,
                       const std::array<double, 2>& offset, const PoolOptions& opts) {
  validate_offset(offset);
  OffsetField uniform = OffsetField::zeros(roi.bins);
  for (auto& o : uniform.v) o = offset;
  return pool_with_offsets(x, roi, uniform, opts);
}

double cml_cls(double score_original, double score_decoupled, double margin) {
  if (margin < 0.0) throw InputError("margin must be non-negative");
  return std::max(0.0, score_original - score_decoupled + margin);
}

double cml_reg(double iou_original, double iou_decoupled, double margin) {
  if (margin < 0.0) throw InputError("margin must be non-negative");
  return std::max(0.0, iou_original - iou_decoupled + margin);
}

}  // namespace detkit
