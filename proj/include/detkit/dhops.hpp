#pragma once

#include <array>
#include <vector>

namespace detkit {

// Dense H x W x C feature map with bilinear sampling. Positions live on the
// integer lattice [0, W-1] x [0, H-1]; out-of-range samples clamp to the
// border.
class FeatureGrid {
 public:
  FeatureGrid(int height, int width, int channels, double fill = 0.0);

  double& at(int y, int x, int c);
  double at(int y, int x, int c) const;
  double sample_bilinear(double x, double y, int c) const;

  int height() const { return h_; }
  int width() const { return w_; }
  int channels() const { return ch_; }

 private:
  int h_ = 0, w_ = 0, ch_ = 0;
  std::vector<double> v_;
};

// Region pooled into bins x bins cells. The unshifted region must lie within
// the grid's lattice.
struct RoiSpec {
  double x0 = 0.0;   // top-left corner, grid coordinates
  double y0 = 0.0;
  double width = 0.0;
  double height = 0.0;
  int bins = 1;      // k, cells per side
};

// Per-bin 2-vector offsets (dx, dy) for the classification route.
struct OffsetField {
  int k = 0;
  std::vector<std::array<double, 2>> v;  // row-major, v[i * k + j] for bin (i, j)

  static OffsetField zeros(int k);
  const std::array<double, 2>& at(int i, int j) const { return v[i * k + j]; }
  std::array<double, 2>& at(int i, int j) { return v[i * k + j]; }
};

enum class BinSampling {
  // integer lattice points covered by the bin's sub-rectangle; bins covering
  // none sample once at their center
  kLattice,
  // fixed 2x2 regular samples per bin at sub-cell centers
  kRegular2x2,
};

struct PoolOptions {
  BinSampling sampling = BinSampling::kLattice;
  // scale offsets by the region's width/height before applying them
  bool normalize_offsets = false;
};

// Offset-shifted average pooling: bin (i, j) is the mean of the feature
// sampled at its points shifted by the bin's offset, per channel. The result
// is a bins x bins x channels grid. Throws on non-finite offsets, a bad
// offset shape, or a region outside the grid.
FeatureGrid dhpool_cls(const FeatureGrid& x, const RoiSpec& roi, const OffsetField& offsets,
                       const PoolOptions& opts = {});

// Same pooling with one global offset shared by every bin.
FeatureGrid dhpool_reg(const FeatureGrid& x, const RoiSpec& roi,
                       const std::array<double, 2>& offset, const PoolOptions& opts = {});

// Hinge margins: the decoupled head must beat the original score (or IoU) by
// the margin before its loss reaches zero.
double cml_cls(double score_original, double score_decoupled, double margin);
double cml_reg(double iou_original, double iou_decoupled, double margin);

}  // namespace detkit
