#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <utility>

#include "detkit/detections.hpp"

namespace detkit {

// image id -> (width, height), used to convert pixel-space inputs to
// normalized coordinates at the I/O boundary.
using ImageDims = std::map<std::string, std::pair<double, double>>;

struct LoadOptions {
  // Clamp out-of-range coordinates/scores into their legal range instead of
  // rejecting the row.
  bool clamp_out_of_range = false;
  const ImageDims* pixel_dims = nullptr;
};

// CSV with header ImageID,Width,Height
ImageDims load_image_dims(const std::filesystem::path& path);

// Detection files come in two dialects, decided by the header line:
//   ImageId,PredictionString            repeated "Label Score XMin YMin XMax YMax"
//   image_id,label,score,x_min,y_min,x_max,y_max   one record per row
DetectionSet load_detections(const std::filesystem::path& path, Vocab& vocab,
                             const LoadOptions& opts = {});
void save_detections_openimages(const DetectionSet& dets, const Vocab& vocab,
                                const std::filesystem::path& path);
void save_detections_flat(const DetectionSet& dets, const Vocab& vocab,
                          const std::filesystem::path& path);

// CSV with columns ImageID,LabelName,XMin,XMax,YMin,YMax,IsGroupOf (the
// X-before-Y column order); extra columns are tolerated on load.
GroundTruthSet load_annotations(const std::filesystem::path& path, Vocab& vocab,
                                const LoadOptions& opts = {});
void save_annotations(const GroundTruthSet& gts, const Vocab& vocab,
                      const std::filesystem::path& path);

// Hierarchy files: nested JSON records (LabelName with a Subcategory list)
// or a flat two-column child,parent CSV. The loader validates acyclicity.
CategoryHierarchy load_hierarchy(const std::filesystem::path& path, Vocab& vocab);
void save_hierarchy_csv(const CategoryHierarchy& h, const Vocab& vocab,
                        const std::filesystem::path& path);

// Fixed 6-decimal rendering used by every writer.
std::string format_fixed6(double v);

}  // namespace detkit
