#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "detkit/autoensemble.hpp"
#include "detkit/classtools.hpp"
#include "detkit/dhops.hpp"
#include "detkit/ensemble.hpp"
#include "detkit/errors.hpp"
#include "detkit/evaluation.hpp"
#include "detkit/io.hpp"
#include "detkit/nms.hpp"
#include "detkit/rescore.hpp"

namespace fs = std::filesystem;
using detkit::InputError;
using detkit::Vocab;
using ordered_json = nlohmann::ordered_json;

namespace {

constexpr const char* kVersion = "0.1.0";

// exit codes: 0 ok, 1 usage, 2 input validation, 3 internal failure
constexpr int kExitUsage = 1;
constexpr int kExitInput = 2;
constexpr int kExitInternal = 3;

struct GlobalOptions {
  std::string out_dir = ".";
  std::uint64_t seed = 0;
  int threads = 1;
};

struct RunRecord {
  ordered_json parameters = ordered_json::object();
  std::vector<std::string> inputs;
  std::vector<std::string> outputs;
};

fs::path resolve_out(const GlobalOptions& global, const std::string& given,
                     const char* fallback) {
  if (!given.empty()) return fs::path(given);
  return fs::path(global.out_dir) / fallback;
}

void write_manifest(const GlobalOptions& global, const std::string& subcommand,
                    const RunRecord& record, double wall_ms) {
  ordered_json manifest;
  manifest["tool"] = "detkit";
  manifest["version"] = kVersion;
  manifest["subcommand"] = subcommand;
  manifest["parameters"] = record.parameters;
  manifest["inputs"] = record.inputs;
  manifest["outputs"] = record.outputs;
  manifest["seed"] = global.seed;
  manifest["threads"] = global.threads;
  manifest["wall_time_ms"] = wall_ms;
  std::ofstream out(fs::path(global.out_dir) / "manifest.json", std::ios::binary);
  if (!out) throw InputError("cannot write the run manifest in '" + global.out_dir + "'");
  out << manifest.dump(2) << "\n";
}

std::vector<std::string> split_list(const std::string& csv) {
  std::vector<std::string> out;
  std::stringstream stream(csv);
  std::string item;
  while (std::getline(stream, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::vector<double> split_doubles(const std::string& csv) {
  std::vector<double> out;
  for (const auto& item : split_list(csv)) out.push_back(std::stod(item));
  return out;
}

struct NamedSets {
  std::vector<detkit::DetectionSet> sets;
};

NamedSets load_detection_sets(const std::vector<std::string>& files,
                              const std::string& source_ids, Vocab& vocab,
                              const detkit::LoadOptions& opts) {
  NamedSets out;
  std::vector<std::string> ids = split_list(source_ids);
  if (!ids.empty() && ids.size() != files.size()) {
    throw InputError("--source-ids must name every detection file");
  }
  std::map<std::string, int> seen;
  for (std::size_t i = 0; i < files.size(); ++i) {
    detkit::DetectionSet set = detkit::load_detections(files[i], vocab, opts);
    if (!ids.empty()) set.source_id = ids[i];
    if (++seen[set.source_id] > 1) {
      throw InputError("duplicate source id '" + set.source_id +
                       "'; disambiguate with --source-ids");
    }
    out.sets.push_back(std::move(set));
  }
  return out;
}

std::vector<std::map<int, double>> load_ap_table(const fs::path& path, Vocab& vocab,
                                                 const std::vector<detkit::DetectionSet>& sets) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open '" + path.string() + "' for reading");
  std::string line;
  int line_no = 0;
  if (!std::getline(in, line)) throw InputError(path.string() + ": empty AP table");
  ++line_no;
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != "model,label,ap") {
    throw InputError(path.string() + ":1: expected header 'model,label,ap'");
  }
  std::map<std::string, int> model_index;
  for (int i = 0; i < static_cast<int>(sets.size()); ++i) {
    model_index[sets[i].source_id] = i;
  }
  std::vector<std::map<int, double>> table(sets.size());
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::stringstream row(line);
    std::string model, label, ap_text;
    if (!std::getline(row, model, ',') || !std::getline(row, label, ',') ||
        !std::getline(row, ap_text)) {
      throw InputError(path.string() + ":" + std::to_string(line_no) +
                       ": expected 'model,label,ap'");
    }
    const auto it = model_index.find(model);
    if (it == model_index.end()) continue;  // table may cover extra models
    table[it->second][vocab.labels.intern(label)] = std::stod(ap_text);
  }
  return table;
}

void save_detections(const detkit::DetectionSet& set, const Vocab& vocab,
                     const fs::path& path, const std::string& format) {
  if (format == "flat") {
    detkit::save_detections_flat(set, vocab, path);
  } else {
    detkit::save_detections_openimages(set, vocab, path);
  }
}

// ---------------------------------------------------------------------------
// subcommand argument bags

struct EvalArgs {
  std::string dets, gt, hierarchy, image_dims, out;
  bool no_expand = false;
  bool clamp = false;
  double iou_thr = 0.5;
  double group_ioa_thr = 0.5;
};

struct NmsArgs {
  std::string dets, out;
  std::string kind = "adj";
  std::string format = "openimages";
  double thr = 0.5;
  double sigma = 0.5;
  double score_floor = 1e-5;
  bool clamp = false;
};

struct EnsembleArgs {
  std::vector<std::string> dets;
  std::string source_ids, ap_table, plan, out;
  std::string format = "openimages";
  std::string nms_kind = "adj";
  double nms_thr = 0.5;
  double sigma = 0.5;
  double score_floor = 1e-5;
  int k = 4;
  double match_iou = 0.5;
  bool clamp = false;
};

struct SearchArgs {
  std::vector<std::string> dets;
  std::string source_ids, gt, hierarchy, out;
  int folds = 2;
  int budget = 50;
  bool clamp = false;
};

struct RescoreArgs {
  std::string dets, gt, out, matrix_out;
  std::string denominator = "ci";
  std::string format = "openimages";
  double lambda = 0.5;
  bool clamp = false;
};

struct ExpandArgs {
  std::string dets, hierarchy, out;
  std::string format = "openimages";
  bool clamp = false;
};

struct SamplePlanArgs {
  std::string gt, out;
};

struct ExpertArgs {
  std::string weights, pos, gt, out;
  double thr = 0.25;
};

struct AnchorsArgs {
  std::string gt, out;
  std::string metric = "iou";
  std::string snap_ratios, snap_scales;
  int k = 18;
};

struct CropScaleArgs {
  std::string gt, out;
  double min = -1.0, max = -1.0, mem_max = -1.0;
  int n = 10;
  int bins = 1024;
};

struct DhDemoArgs {
  std::vector<int> grid;       // H W CH
  std::vector<double> roi;     // x y w h
  std::string grid_file, offset_file;
  std::vector<double> reg_offset{0.0, 0.0};
  std::vector<double> scores;  // S_original S_decoupled
  std::vector<double> ious;    // IoU_original IoU_decoupled
  double margin = 0.2;
  std::string sampling = "lattice";
  bool normalize_offsets = false;
  int bins = 2;
};

struct ValidateArgs {
  std::string dets, gt, hierarchy, image_dims;
  bool allow_degenerate = false;
  bool clamp = false;
};

// ---------------------------------------------------------------------------

RunRecord cmd_eval(const GlobalOptions& global, const EvalArgs& args) {
  Vocab vocab;
  detkit::LoadOptions load;
  load.clamp_out_of_range = args.clamp;
  detkit::ImageDims dims;
  if (!args.image_dims.empty()) {
    dims = detkit::load_image_dims(args.image_dims);
    load.pixel_dims = &dims;
  }
  const auto gts = detkit::load_annotations(args.gt, vocab, load);
  const auto dets = detkit::load_detections(args.dets, vocab, load);
  detkit::CategoryHierarchy hierarchy;
  if (!args.hierarchy.empty()) hierarchy = detkit::load_hierarchy(args.hierarchy, vocab);

  detkit::EvalConfig cfg;
  cfg.iou_threshold = args.iou_thr;
  cfg.group_of_ioa_threshold = args.group_ioa_thr;
  cfg.expand_hierarchy = !args.no_expand;
  const auto report = detkit::evaluate(dets, gts, hierarchy, cfg, vocab, global.threads);

  const fs::path out_path = resolve_out(global, args.out, "eval_report.csv");
  std::ofstream out(out_path, std::ios::binary);
  if (!out) throw InputError("cannot open '" + out_path.string() + "' for writing");
  out << "category,ap,n_gt,n_tp,n_fp\n";
  std::vector<std::pair<std::string, const detkit::CategoryReport*>> rows;
  int excluded = 0;
  for (const auto& [category, r] : report.per_category) {
    if (r.included) {
      rows.emplace_back(vocab.labels.name(category), &r);
    } else {
      ++excluded;
      std::cout << "warning: category " << vocab.labels.name(category)
                << " has no ground-truth instances; excluded from mAP\n";
    }
  }
  std::sort(rows.begin(), rows.end());
  for (const auto& [name, r] : rows) {
    out << name << ',' << detkit::format_fixed6(r->ap) << ',' << r->n_gt << ',' << r->tp
        << ',' << r->fp << "\n";
  }
  std::cout << "mAP " << detkit::format_fixed6(report.map) << " over "
            << report.included_categories << " categories (" << excluded << " excluded)\n";

  RunRecord record;
  record.parameters = {{"iou_threshold", args.iou_thr},
                       {"group_of_ioa_threshold", args.group_ioa_thr},
                       {"expand_hierarchy", !args.no_expand}};
  record.inputs = {args.dets, args.gt};
  if (!args.hierarchy.empty()) record.inputs.push_back(args.hierarchy);
  record.outputs = {out_path.string()};
  return record;
}

RunRecord cmd_nms(const GlobalOptions& global, const NmsArgs& args) {
  Vocab vocab;
  detkit::LoadOptions load;
  load.clamp_out_of_range = args.clamp;
  const auto dets = detkit::load_detections(args.dets, vocab, load);
  detkit::NmsConfig cfg;
  cfg.kind = detkit::nms_kind_from_string(args.kind);
  cfg.hard_threshold = args.thr;
  cfg.sigma = args.sigma;
  cfg.score_floor = args.score_floor;
  const auto result = detkit::apply_nms(dets, cfg, global.threads);
  const fs::path out_path = resolve_out(global, args.out, "nms_output.csv");
  save_detections(result, vocab, out_path, args.format);
  std::cout << "kept " << result.items.size() << " of " << dets.items.size()
            << " detections\n";

  RunRecord record;
  record.parameters = {{"nms", args.kind},
                       {"nms_thr", args.thr},
                       {"sigma", args.sigma},
                       {"score_floor", args.score_floor}};
  record.inputs = {args.dets};
  record.outputs = {out_path.string()};
  return record;
}

RunRecord cmd_expand(const GlobalOptions& global, const ExpandArgs& args) {
  Vocab vocab;
  detkit::LoadOptions load;
  load.clamp_out_of_range = args.clamp;
  const auto dets = detkit::load_detections(args.dets, vocab, load);
  const auto hierarchy = detkit::load_hierarchy(args.hierarchy, vocab);
  const auto expanded = detkit::expand_hierarchy(dets, hierarchy, vocab);
  const fs::path out_path = resolve_out(global, args.out, "expanded.csv");
  save_detections(expanded, vocab, out_path, args.format);
  std::cout << "expanded " << dets.items.size() << " detections to "
            << expanded.items.size() << "\n";

  RunRecord record;
  record.inputs = {args.dets, args.hierarchy};
  record.outputs = {out_path.string()};
  return record;
}

RunRecord cmd_ensemble(const GlobalOptions& global, const EnsembleArgs& args) {
  Vocab vocab;
  detkit::LoadOptions load;
  load.clamp_out_of_range = args.clamp;
  NamedSets named = load_detection_sets(args.dets, args.source_ids, vocab, load);

  RunRecord record;
  record.inputs = args.dets;

  if (!args.ap_table.empty()) {
    const auto table = load_ap_table(args.ap_table, vocab, named.sets);
    const auto weights = detkit::pfdet_weights(table);
    for (const auto& missing : weights.missing) {
      std::cout << "warning: model " << named.sets[missing.first].source_id
                << " has no AP for category " << vocab.labels.name(missing.second)
                << "; weight 0\n";
    }
    named.sets = detkit::apply_class_weights(std::move(named.sets), weights);
    record.inputs.push_back(args.ap_table);
  }

  detkit::DetectionSet merged;
  if (!args.plan.empty()) {
    std::ifstream plan_in(args.plan);
    if (!plan_in) throw InputError("cannot open '" + args.plan + "' for reading");
    std::stringstream buffer;
    buffer << plan_in.rdbuf();
    const auto plan = detkit::plan_from_json(buffer.str());
    std::map<std::string, detkit::DetectionSet> inputs;
    for (auto& set : named.sets) inputs[set.source_id] = std::move(set);
    detkit::VotingConfig voting;
    voting.k = args.k;
    merged = detkit::execute_plan(plan, inputs, voting, global.threads);
    record.inputs.push_back(args.plan);
  } else {
    detkit::VotingConfig voting;
    voting.k = args.k;
    voting.match_iou = args.match_iou;
    detkit::NmsConfig nms_cfg;
    nms_cfg.kind = detkit::nms_kind_from_string(args.nms_kind);
    nms_cfg.hard_threshold = args.nms_thr;
    nms_cfg.sigma = args.sigma;
    nms_cfg.score_floor = args.score_floor;
    merged = detkit::ensemble_detections(named.sets, voting, nms_cfg, global.threads);
  }

  const fs::path out_path = resolve_out(global, args.out, "ensemble.csv");
  save_detections(merged, vocab, out_path, args.format);
  std::cout << "merged " << args.dets.size() << " sets into " << merged.items.size()
            << " detections\n";
  record.parameters = {{"k", args.k},
                       {"match_iou", args.match_iou},
                       {"nms", args.nms_kind},
                       {"plan", args.plan}};
  record.outputs = {out_path.string()};
  return record;
}

RunRecord cmd_search(const GlobalOptions& global, const SearchArgs& args) {
  if (args.folds != 2) throw InputError("the search uses exactly two validation folds");
  Vocab vocab;
  detkit::LoadOptions load;
  load.clamp_out_of_range = args.clamp;
  const auto gts = detkit::load_annotations(args.gt, vocab, load);
  NamedSets named = load_detection_sets(args.dets, args.source_ids, vocab, load);
  detkit::CategoryHierarchy hierarchy;
  if (!args.hierarchy.empty()) hierarchy = detkit::load_hierarchy(args.hierarchy, vocab);

  detkit::SearchConfig cfg;
  cfg.budget_per_node = args.budget;
  cfg.seed = global.seed;
  cfg.threads = global.threads;
  detkit::PlanSearch search(named.sets, gts, hierarchy, vocab, cfg);
  const detkit::SearchResult result = search.run();

  const fs::path out_path = resolve_out(global, args.out, "plan.json");
  {
    std::ofstream out(out_path, std::ios::binary);
    if (!out) throw InputError("cannot open '" + out_path.string() + "' for writing");
    out << detkit::plan_to_json(result.plan);
  }
  std::cout << "fold-A mAP " << detkit::format_fixed6(result.fold_a_map) << ", fold-B mAP "
            << detkit::format_fixed6(result.fold_b_map) << " after "
            << result.operator_evaluations << " operator evaluations\n";
  std::cout << "architecture trace:";
  for (double f : result.architecture_trace) std::cout << ' ' << detkit::format_fixed6(f);
  std::cout << "\n";
  for (const auto& [leaf, depth] : result.leaf_depth) {
    std::cout << "leaf " << leaf << " depth " << depth << " fold-A mAP "
              << detkit::format_fixed6(result.leaf_fold_a_map.at(leaf)) << "\n";
  }

  RunRecord record;
  record.parameters = {{"folds", args.folds}, {"budget", args.budget}};
  record.inputs = args.dets;
  record.inputs.push_back(args.gt);
  if (!args.hierarchy.empty()) record.inputs.push_back(args.hierarchy);
  record.outputs = {out_path.string()};
  return record;
}

RunRecord cmd_rescore(const GlobalOptions& global, const RescoreArgs& args) {
  Vocab vocab;
  detkit::LoadOptions load;
  load.clamp_out_of_range = args.clamp;
  const auto gts = detkit::load_annotations(args.gt, vocab, load);
  const auto dets = detkit::load_detections(args.dets, vocab, load);
  const auto denom = args.denominator == "cj" ? detkit::CondDenominator::kCategoryJ
                                              : detkit::CondDenominator::kCategoryI;
  if (args.denominator != "ci" && args.denominator != "cj") {
    throw InputError("--denominator must be ci or cj");
  }
  const auto model = detkit::build_cooccurrence(gts, denom);
  const auto rescored = detkit::rescore_detections(dets, model, args.lambda);

  const fs::path out_path = resolve_out(global, args.out, "rescored.csv");
  save_detections(rescored, vocab, out_path, args.format);
  const fs::path matrix_path = resolve_out(global, args.matrix_out, "cooccurrence.csv");
  detkit::save_cooccurrence_csv(model, vocab, matrix_path);

  int raised = 0;
  for (std::size_t i = 0; i < dets.items.size(); ++i) {
    if (rescored.items[i].score > dets.items[i].score) ++raised;
  }
  std::cout << "raised " << raised << " of " << dets.items.size() << " detections\n";

  RunRecord record;
  record.parameters = {{"lambda", args.lambda}, {"denominator", args.denominator}};
  record.inputs = {args.dets, args.gt};
  record.outputs = {out_path.string(), matrix_path.string()};
  return record;
}

RunRecord cmd_sample_plan(const GlobalOptions& global, const SamplePlanArgs& args) {
  Vocab vocab;
  const auto gts = detkit::load_annotations(args.gt, vocab);
  const auto plan = detkit::build_sampling_plan(gts);
  const fs::path out_path = resolve_out(global, args.out, "plan.csv");
  detkit::save_sampling_plan_csv(plan, vocab, out_path);
  std::cout << "plan over " << plan.image_probability.size() << " images, "
            << plan.categories.size() << " categories\n";

  RunRecord record;
  record.inputs = {args.gt};
  record.outputs = {out_path.string()};
  return record;
}

RunRecord cmd_expert_classes(const GlobalOptions& global, const ExpertArgs& args) {
  Vocab vocab;
  const auto weights = detkit::load_classifier_weights(args.weights, vocab);
  std::vector<int> c_pos;
  for (const auto& label : split_list(args.pos)) {
    const auto id = vocab.labels.find(label);
    if (!id || !weights.row_of(*id)) {
      throw InputError("positive category '" + label + "' is not in the weight matrix");
    }
    c_pos.push_back(*id);
  }
  std::optional<detkit::GroundTruthSet> gts;
  if (!args.gt.empty()) gts = detkit::load_annotations(args.gt, vocab);
  const auto selection = detkit::select_expert_categories(
      c_pos, weights, args.thr, gts ? &*gts : nullptr);

  const fs::path out_path = resolve_out(global, args.out, "expert_classes.csv");
  std::ofstream out(out_path, std::ios::binary);
  if (!out) throw InputError("cannot open '" + out_path.string() + "' for writing");
  out << "label,side,max_cosine\n";
  std::vector<std::string> pos_names;
  for (int c : selection.c_pos) pos_names.push_back(vocab.labels.name(c));
  std::sort(pos_names.begin(), pos_names.end());
  for (const auto& name : pos_names) out << name << ",positive,\n";
  std::vector<std::pair<std::string, double>> neg_rows;
  for (int c : selection.c_neg) {
    neg_rows.emplace_back(vocab.labels.name(c), selection.neg_similarity.at(c));
  }
  std::sort(neg_rows.begin(), neg_rows.end());
  for (const auto& [name, cos] : neg_rows) {
    out << name << ",negative," << detkit::format_fixed6(cos) << "\n";
  }
  std::cout << selection.c_pos.size() << " positive, " << selection.c_neg.size()
            << " negative categories\n";
  if (gts) {
    std::cout << "images: " << selection.images_pos.size() << " positive vs "
              << selection.images_neg.size() << " negative";
    if (!selection.images_pos.empty()) {
      std::cout << " (ratio 1:"
                << detkit::format_fixed6(static_cast<double>(selection.images_neg.size()) /
                                         static_cast<double>(selection.images_pos.size()))
                << ", target is close to 1:3)";
    }
    std::cout << "\n";
  }

  RunRecord record;
  record.parameters = {{"pos", args.pos}, {"thr", args.thr}};
  record.inputs = {args.weights};
  if (!args.gt.empty()) record.inputs.push_back(args.gt);
  record.outputs = {out_path.string()};
  return record;
}

RunRecord cmd_anchors(const GlobalOptions& global, const AnchorsArgs& args) {
  Vocab vocab;
  const auto gts = detkit::load_annotations(args.gt, vocab);
  std::vector<detkit::AnchorBox> boxes;
  int degenerate = 0;
  for (const auto& b : gts.boxes) {
    const double w = b.box.width();
    const double h = b.box.height();
    if (w > 0.0 && h > 0.0) {
      boxes.push_back({w, h});
    } else {
      ++degenerate;
    }
  }
  if (degenerate > 0) {
    std::cout << "skipped " << degenerate << " degenerate boxes\n";
  }
  const auto metric = detkit::anchor_metric_from_string(args.metric);
  const auto anchors = detkit::kmeans_anchors(boxes, args.k, metric, global.seed);

  std::vector<detkit::AnchorBox> snapped;
  const bool snap = !args.snap_ratios.empty() && !args.snap_scales.empty();
  if (snap) {
    const auto ratios = split_doubles(args.snap_ratios);
    const auto scales = split_doubles(args.snap_scales);
    const auto grid = detkit::anchor_grid(ratios, scales);
    snapped = detkit::snap_to_grid(anchors.anchors, grid);
  }

  const fs::path out_path = resolve_out(global, args.out, "anchors.csv");
  std::ofstream out(out_path, std::ios::binary);
  if (!out) throw InputError("cannot open '" + out_path.string() + "' for writing");
  out << (snap ? "w,h,snapped_w,snapped_h\n" : "w,h\n");
  std::vector<std::size_t> order(anchors.anchors.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    const auto& A = anchors.anchors[a];
    const auto& B = anchors.anchors[b];
    return std::tie(A.w, A.h) < std::tie(B.w, B.h);
  });
  for (std::size_t i : order) {
    out << detkit::format_fixed6(anchors.anchors[i].w) << ','
        << detkit::format_fixed6(anchors.anchors[i].h);
    if (snap) {
      out << ',' << detkit::format_fixed6(snapped[i].w) << ','
          << detkit::format_fixed6(snapped[i].h);
    }
    out << "\n";
  }
  std::cout << "k=" << args.k << " mean within-cluster distance "
            << detkit::format_fixed6(anchors.mean_distance) << " after "
            << anchors.iterations << " iterations\n";

  RunRecord record;
  record.parameters = {{"k", args.k}, {"metric", args.metric}};
  record.inputs = {args.gt};
  record.outputs = {out_path.string()};
  return record;
}

RunRecord cmd_crop_scale(const GlobalOptions& global, const CropScaleArgs& args) {
  Vocab vocab;
  const auto gts = detkit::load_annotations(args.gt, vocab);
  auto dist = detkit::ScaleDistribution::from_ratios(detkit::box_scale_ratios(gts), args.bins);
  const double stat_min = args.min >= 0.0 ? args.min : dist.stat_min();
  const double stat_max = args.max >= 0.0 ? args.max : dist.stat_max();
  const double mem_max = args.mem_max >= 0.0 ? args.mem_max : dist.mem_max();
  dist.set_bounds(stat_min, stat_max, mem_max);

  std::mt19937_64 rng(global.seed);
  std::uniform_real_distribution<double> uniform(0.0, 1.0);
  const fs::path out_path = resolve_out(global, args.out, "crop_scales.csv");
  std::ofstream out(out_path, std::ios::binary);
  if (!out) throw InputError("cannot open '" + out_path.string() + "' for writing");
  out << "u,scale\n";
  for (int i = 0; i < args.n; ++i) {
    const double u = uniform(rng);
    out << detkit::format_fixed6(u) << ',' << detkit::format_fixed6(dist.sample(u)) << "\n";
  }
  std::cout << "sampled " << args.n << " scales in ["
            << detkit::format_fixed6(stat_min) << ", "
            << detkit::format_fixed6(std::min(mem_max, stat_max)) << "]\n";

  RunRecord record;
  record.parameters = {{"min", stat_min}, {"max", stat_max}, {"mem_max", mem_max},
                       {"n", args.n}, {"bins", args.bins}};
  record.inputs = {args.gt};
  record.outputs = {out_path.string()};
  return record;
}

detkit::FeatureGrid demo_grid(const DhDemoArgs& args) {
  const int h = args.grid[0];
  const int w = args.grid[1];
  const int ch = args.grid[2];
  detkit::FeatureGrid grid(h, w, ch);
  if (!args.grid_file.empty()) {
    std::ifstream in(args.grid_file);
    if (!in) throw InputError("cannot open '" + args.grid_file + "' for reading");
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        for (int c = 0; c < ch; ++c) {
          if (!(in >> grid.at(y, x, c))) {
            throw InputError(args.grid_file + ": expected " + std::to_string(h * w * ch) +
                             " values");
          }
        }
      }
    }
  } else {
    // deterministic ramp so the demo runs without a data file
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        for (int c = 0; c < ch; ++c) grid.at(y, x, c) = x + y + c;
      }
    }
  }
  return grid;
}

detkit::OffsetField demo_offsets(const DhDemoArgs& args) {
  auto offsets = detkit::OffsetField::zeros(args.bins);
  if (args.offset_file.empty()) return offsets;
  std::ifstream in(args.offset_file);
  if (!in) throw InputError("cannot open '" + args.offset_file + "' for reading");
  for (auto& o : offsets.v) {
    if (!(in >> o[0] >> o[1])) {
      throw InputError(args.offset_file + ": expected " +
                       std::to_string(args.bins * args.bins * 2) + " values");
    }
  }
  return offsets;
}

void print_pooled(const char* title, const detkit::FeatureGrid& pooled, std::ostream& os) {
  os << title << "\n";
  for (int c = 0; c < pooled.channels(); ++c) {
    os << " channel " << c << "\n";
    for (int i = 0; i < pooled.height(); ++i) {
      os << " ";
      for (int j = 0; j < pooled.width(); ++j) {
        os << ' ' << detkit::format_fixed6(pooled.at(i, j, c));
      }
      os << "\n";
    }
  }
}

void save_pooled_csv(const detkit::FeatureGrid& pooled, const fs::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot open '" + path.string() + "' for writing");
  out << "bin_row,bin_col,channel,value\n";
  for (int i = 0; i < pooled.height(); ++i) {
    for (int j = 0; j < pooled.width(); ++j) {
      for (int c = 0; c < pooled.channels(); ++c) {
        out << i << ',' << j << ',' << c << ',' << detkit::format_fixed6(pooled.at(i, j, c))
            << "\n";
      }
    }
  }
}

RunRecord cmd_dh_demo(const GlobalOptions& global, const DhDemoArgs& args) {
  const auto grid = demo_grid(args);
  detkit::RoiSpec roi;
  roi.x0 = args.roi[0];
  roi.y0 = args.roi[1];
  roi.width = args.roi[2];
  roi.height = args.roi[3];
  roi.bins = args.bins;
  detkit::PoolOptions opts;
  opts.sampling = args.sampling == "regular" ? detkit::BinSampling::kRegular2x2
                                             : detkit::BinSampling::kLattice;
  opts.normalize_offsets = args.normalize_offsets;

  const auto offsets = demo_offsets(args);
  const auto pooled_cls = detkit::dhpool_cls(grid, roi, offsets, opts);
  const auto pooled_reg =
      detkit::dhpool_reg(grid, roi, {args.reg_offset[0], args.reg_offset[1]}, opts);
  print_pooled("classification pooling", pooled_cls, std::cout);
  print_pooled("regression pooling", pooled_reg, std::cout);

  const fs::path cls_path = fs::path(global.out_dir) / "pooled_cls.csv";
  const fs::path reg_path = fs::path(global.out_dir) / "pooled_reg.csv";
  save_pooled_csv(pooled_cls, cls_path);
  save_pooled_csv(pooled_reg, reg_path);

  if (args.scores.size() == 2) {
    std::cout << "cml_cls(" << args.scores[0] << ", " << args.scores[1] << ", " << args.margin
              << ") = "
              << detkit::format_fixed6(
                     detkit::cml_cls(args.scores[0], args.scores[1], args.margin))
              << "\n";
  }
  if (args.ious.size() == 2) {
    std::cout << "cml_reg(" << args.ious[0] << ", " << args.ious[1] << ", " << args.margin
              << ") = "
              << detkit::format_fixed6(
                     detkit::cml_reg(args.ious[0], args.ious[1], args.margin))
              << "\n";
  }

  RunRecord record;
  record.parameters = {{"grid", args.grid}, {"roi", args.roi}, {"bins", args.bins},
                       {"sampling", args.sampling},
                       {"normalize_offsets", args.normalize_offsets},
                       {"margin", args.margin}};
  if (!args.grid_file.empty()) record.inputs.push_back(args.grid_file);
  if (!args.offset_file.empty()) record.inputs.push_back(args.offset_file);
  record.outputs = {cls_path.string(), reg_path.string()};
  return record;
}

RunRecord cmd_validate(const GlobalOptions& global, const ValidateArgs& args) {
  (void)global;
  if (args.dets.empty() && args.gt.empty() && args.hierarchy.empty()) {
    throw InputError("validate needs at least one of --dets, --gt, --hierarchy");
  }
  Vocab vocab;
  detkit::LoadOptions load;
  load.clamp_out_of_range = args.clamp;
  detkit::ImageDims dims;
  if (!args.image_dims.empty()) {
    dims = detkit::load_image_dims(args.image_dims);
    load.pixel_dims = &dims;
  }
  RunRecord record;
  int degenerate = 0;
  if (!args.dets.empty()) {
    const auto dets = detkit::load_detections(args.dets, vocab, load);
    std::set<int> categories;
    for (const auto& d : dets.items) {
      categories.insert(d.category);
      if (d.box.area() <= 0.0) ++degenerate;
    }
    std::cout << args.dets << ": " << dets.items.size() << " detections, "
              << dets.roster.size() << " images, " << categories.size() << " categories\n";
    record.inputs.push_back(args.dets);
  }
  if (!args.gt.empty()) {
    const auto gts = detkit::load_annotations(args.gt, vocab, load);
    std::set<int> categories;
    int groups = 0;
    for (const auto& b : gts.boxes) {
      categories.insert(b.category);
      if (b.is_group_of) ++groups;
      if (b.box.area() <= 0.0) ++degenerate;
    }
    std::cout << args.gt << ": " << gts.boxes.size() << " boxes (" << groups
              << " group-of), " << gts.roster.size() << " images, " << categories.size()
              << " categories\n";
    record.inputs.push_back(args.gt);
  }
  if (!args.hierarchy.empty()) {
    const auto hierarchy = detkit::load_hierarchy(args.hierarchy, vocab);
    std::cout << args.hierarchy << ": " << hierarchy.universe().size() << " labels, "
              << hierarchy.edge_count() << " edges, acyclic\n";
    record.inputs.push_back(args.hierarchy);
  }
  if (degenerate > 0) {
    if (!args.allow_degenerate) {
      throw InputError(std::to_string(degenerate) +
                       " degenerate (zero-area) boxes found; rerun with --allow-degenerate "
                       "to accept them");
    }
    std::cout << "warning: " << degenerate << " degenerate (zero-area) boxes\n";
  }
  record.parameters = {{"allow_degenerate", args.allow_degenerate}};
  return record;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"post-processing toolkit for object detection"};
  app.require_subcommand(1);
  app.set_config("--config", "", "key=value configuration file; flags override it");

  GlobalOptions global;
  app.add_option("--out-dir", global.out_dir, "directory for artifacts and the run manifest")
      ->capture_default_str();
  app.add_option("--seed", global.seed, "seed for every randomized procedure")
      ->capture_default_str();
  app.add_option("--threads", global.threads, "worker threads; results do not depend on it")
      ->envname("DETKIT_THREADS")
      ->capture_default_str();

  EvalArgs eval_args;
  auto* eval_cmd = app.add_subcommand("eval", "AP@0.5 / mAP evaluation report");
  eval_cmd->add_option("--dets", eval_args.dets, "detection file")->required();
  eval_cmd->add_option("--gt", eval_args.gt, "annotation file")->required();
  eval_cmd->add_option("--hierarchy", eval_args.hierarchy, "hierarchy file");
  eval_cmd->add_option("--image-dims", eval_args.image_dims, "pixel-dimension sidecar CSV");
  eval_cmd->add_flag("--no-expand", eval_args.no_expand, "skip hierarchy expansion");
  eval_cmd->add_flag("--clamp", eval_args.clamp, "clamp out-of-range inputs");
  eval_cmd->add_option("--iou-thr", eval_args.iou_thr)->capture_default_str();
  eval_cmd->add_option("--group-ioa-thr", eval_args.group_ioa_thr)->capture_default_str();
  eval_cmd->add_option("--out", eval_args.out, "report CSV path");

  NmsArgs nms_args;
  auto* nms_cmd = app.add_subcommand("nms", "per-(image, category) NMS");
  nms_cmd->add_option("--dets", nms_args.dets, "detection file")->required();
  nms_cmd->add_option("--nms", nms_args.kind, "naive|soft|adj")->capture_default_str();
  nms_cmd->add_option("--nms-thr", nms_args.thr)->capture_default_str();
  nms_cmd->add_option("--sigma", nms_args.sigma)->capture_default_str();
  nms_cmd->add_option("--score-floor", nms_args.score_floor)->capture_default_str();
  nms_cmd->add_option("--format", nms_args.format, "openimages|flat")->capture_default_str();
  nms_cmd->add_flag("--clamp", nms_args.clamp, "clamp out-of-range inputs");
  nms_cmd->add_option("--out", nms_args.out, "output CSV path");

  ExpandArgs expand_args;
  auto* expand_cmd = app.add_subcommand("expand", "hierarchy expansion of detections");
  expand_cmd->add_option("--dets", expand_args.dets, "detection file")->required();
  expand_cmd->add_option("--hierarchy", expand_args.hierarchy, "hierarchy file")->required();
  expand_cmd->add_option("--format", expand_args.format, "openimages|flat")
      ->capture_default_str();
  expand_cmd->add_flag("--clamp", expand_args.clamp, "clamp out-of-range inputs");
  expand_cmd->add_option("--out", expand_args.out, "output CSV path");

  EnsembleArgs ensemble_args;
  auto* ensemble_cmd = app.add_subcommand("ensemble", "merge detection sets by voting");
  ensemble_cmd->add_option("--dets", ensemble_args.dets, "detection files")
      ->required()
      ->expected(-1);
  ensemble_cmd->add_option("--source-ids", ensemble_args.source_ids,
                           "comma-separated ids matching --dets order");
  ensemble_cmd->add_option("--ap-table", ensemble_args.ap_table,
                           "per-model AP CSV (model,label,ap) for score reweighting");
  ensemble_cmd->add_option("--plan", ensemble_args.plan, "replay a searched plan JSON");
  ensemble_cmd->add_option("--k", ensemble_args.k)->capture_default_str();
  ensemble_cmd->add_option("--match-iou", ensemble_args.match_iou)->capture_default_str();
  ensemble_cmd->add_option("--nms", ensemble_args.nms_kind, "naive|soft|adj")
      ->capture_default_str();
  ensemble_cmd->add_option("--nms-thr", ensemble_args.nms_thr)->capture_default_str();
  ensemble_cmd->add_option("--sigma", ensemble_args.sigma)->capture_default_str();
  ensemble_cmd->add_option("--score-floor", ensemble_args.score_floor)->capture_default_str();
  ensemble_cmd->add_option("--format", ensemble_args.format, "openimages|flat")
      ->capture_default_str();
  ensemble_cmd->add_flag("--clamp", ensemble_args.clamp, "clamp out-of-range inputs");
  ensemble_cmd->add_option("--out", ensemble_args.out, "output CSV path");

  SearchArgs search_args;
  auto* search_cmd = app.add_subcommand("search", "auto-ensemble plan search");
  search_cmd->add_option("--dets", search_args.dets, "detection files")
      ->required()
      ->expected(-1);
  search_cmd->add_option("--source-ids", search_args.source_ids,
                         "comma-separated ids matching --dets order");
  search_cmd->add_option("--gt", search_args.gt, "annotation file")->required();
  search_cmd->add_option("--hierarchy", search_args.hierarchy, "hierarchy file");
  search_cmd->add_option("--folds", search_args.folds)->capture_default_str();
  search_cmd->add_option("--budget", search_args.budget, "operator evaluations per node")
      ->capture_default_str();
  search_cmd->add_flag("--clamp", search_args.clamp, "clamp out-of-range inputs");
  search_cmd->add_option("--out", search_args.out, "plan JSON path");

  RescoreArgs rescore_args;
  auto* rescore_cmd = app.add_subcommand("rescore", "co-occurrence confidence raising");
  rescore_cmd->add_option("--dets", rescore_args.dets, "detection file")->required();
  rescore_cmd->add_option("--gt", rescore_args.gt, "annotation file")->required();
  rescore_cmd->add_option("--lambda", rescore_args.lambda, "blend toward the bound in [0,1]")
      ->capture_default_str();
  rescore_cmd->add_option("--denominator", rescore_args.denominator,
                          "cond denominator: ci (C_ij/C_i) or cj (C_ij/C_j)")
      ->capture_default_str();
  rescore_cmd->add_option("--format", rescore_args.format, "openimages|flat")
      ->capture_default_str();
  rescore_cmd->add_flag("--clamp", rescore_args.clamp, "clamp out-of-range inputs");
  rescore_cmd->add_option("--out", rescore_args.out, "rescored CSV path");
  rescore_cmd->add_option("--matrix-out", rescore_args.matrix_out,
                          "co-occurrence matrix CSV path");

  SamplePlanArgs sample_args;
  auto* sample_cmd = app.add_subcommand("sample-plan", "class-aware sampling plan");
  sample_cmd->add_option("--gt", sample_args.gt, "annotation file")->required();
  sample_cmd->add_option("--out", sample_args.out, "plan CSV path");

  ExpertArgs expert_args;
  auto* expert_cmd = app.add_subcommand("expert-classes",
                                        "confusable-category selection for expert models");
  expert_cmd->add_option("--weights", expert_args.weights, "classifier weight matrix file")
      ->required();
  expert_cmd->add_option("--pos", expert_args.pos, "comma-separated positive categories")
      ->required();
  expert_cmd->add_option("--thr", expert_args.thr)->capture_default_str();
  expert_cmd->add_option("--gt", expert_args.gt, "annotation file for image subsets");
  expert_cmd->add_option("--out", expert_args.out, "selection CSV path");

  AnchorsArgs anchors_args;
  auto* anchors_cmd = app.add_subcommand("anchors", "k-means anchor shapes");
  anchors_cmd->add_option("--gt", anchors_args.gt, "annotation file")->required();
  anchors_cmd->add_option("--k", anchors_args.k)->capture_default_str();
  anchors_cmd->add_option("--metric", anchors_args.metric, "iou|logwh")->capture_default_str();
  anchors_cmd->add_option("--snap-ratios", anchors_args.snap_ratios,
                          "comma-separated ratios for grid snapping");
  anchors_cmd->add_option("--snap-scales", anchors_args.snap_scales,
                          "comma-separated scales for grid snapping");
  anchors_cmd->add_option("--out", anchors_args.out, "anchors CSV path");

  CropScaleArgs crop_args;
  auto* crop_cmd = app.add_subcommand("crop-scale", "crop-scale sampling distribution");
  crop_cmd->add_option("--gt", crop_args.gt, "annotation file")->required();
  crop_cmd->add_option("--min", crop_args.min, "s_stat_min (default: observed minimum)");
  crop_cmd->add_option("--max", crop_args.max, "s_stat_max (default: observed maximum)");
  crop_cmd->add_option("--mem-max", crop_args.mem_max, "s_mem_max cap");
  crop_cmd->add_option("--n", crop_args.n, "number of draws")->capture_default_str();
  crop_cmd->add_option("--bins", crop_args.bins)->capture_default_str();
  crop_cmd->add_option("--out", crop_args.out, "samples CSV path");

  DhDemoArgs dh_args;
  auto* dh_cmd = app.add_subcommand("dh-demo", "offset-shifted RoI pooling demo");
  dh_cmd->add_option("--grid", dh_args.grid, "H W CH")->required()->expected(3);
  dh_cmd->add_option("--roi", dh_args.roi, "x y w h")->required()->expected(4);
  dh_cmd->add_option("--bins", dh_args.bins, "bins per side")->capture_default_str();
  dh_cmd->add_option("--grid-file", dh_args.grid_file,
                     "feature values, whitespace-separated (default: ramp)");
  dh_cmd->add_option("--offset-file", dh_args.offset_file,
                     "per-bin offsets, bins*bins pairs of dx dy");
  dh_cmd->add_option("--reg-offset", dh_args.reg_offset, "global dx dy")->expected(2);
  dh_cmd->add_option("--scores", dh_args.scores, "original and decoupled scores")
      ->expected(2);
  dh_cmd->add_option("--ious", dh_args.ious, "original and decoupled IoUs")->expected(2);
  dh_cmd->add_option("--margin", dh_args.margin)->capture_default_str();
  dh_cmd->add_option("--sampling", dh_args.sampling, "lattice|regular")
      ->capture_default_str();
  dh_cmd->add_flag("--normalize-offsets", dh_args.normalize_offsets,
                   "scale offsets by the region size");

  ValidateArgs validate_args;
  auto* validate_cmd = app.add_subcommand("validate", "check input files");
  validate_cmd->add_option("--dets", validate_args.dets, "detection file");
  validate_cmd->add_option("--gt", validate_args.gt, "annotation file");
  validate_cmd->add_option("--hierarchy", validate_args.hierarchy, "hierarchy file");
  validate_cmd->add_option("--image-dims", validate_args.image_dims,
                           "pixel-dimension sidecar CSV");
  validate_cmd->add_flag("--allow-degenerate", validate_args.allow_degenerate,
                         "accept zero-area boxes");
  validate_cmd->add_flag("--clamp", validate_args.clamp, "clamp out-of-range inputs");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitUsage;
  }

  const auto started = std::chrono::steady_clock::now();
  try {
    if (global.threads < 1) throw InputError("--threads must be at least 1");
    std::filesystem::create_directories(global.out_dir);
    RunRecord record;
    std::string name;
    if (app.got_subcommand(eval_cmd)) {
      name = "eval";
      record = cmd_eval(global, eval_args);
    } else if (app.got_subcommand(nms_cmd)) {
      name = "nms";
      record = cmd_nms(global, nms_args);
    } else if (app.got_subcommand(expand_cmd)) {
      name = "expand";
      record = cmd_expand(global, expand_args);
    } else if (app.got_subcommand(ensemble_cmd)) {
      name = "ensemble";
      record = cmd_ensemble(global, ensemble_args);
    } else if (app.got_subcommand(search_cmd)) {
      name = "search";
      record = cmd_search(global, search_args);
    } else if (app.got_subcommand(rescore_cmd)) {
      name = "rescore";
      record = cmd_rescore(global, rescore_args);
    } else if (app.got_subcommand(sample_cmd)) {
      name = "sample-plan";
      record = cmd_sample_plan(global, sample_args);
    } else if (app.got_subcommand(expert_cmd)) {
      name = "expert-classes";
      record = cmd_expert_classes(global, expert_args);
    } else if (app.got_subcommand(anchors_cmd)) {
      name = "anchors";
      record = cmd_anchors(global, anchors_args);
    } else if (app.got_subcommand(crop_cmd)) {
      name = "crop-scale";
      record = cmd_crop_scale(global, crop_args);
    } else if (app.got_subcommand(dh_cmd)) {
      name = "dh-demo";
      record = cmd_dh_demo(global, dh_args);
    } else if (app.got_subcommand(validate_cmd)) {
      name = "validate";
      record = cmd_validate(global, validate_args);
    }
    const auto elapsed = std::chrono::duration<double, std::milli>(
        std::chrono::steady_clock::now() - started);
    write_manifest(global, name, record, elapsed.count());
  } catch (const InputError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitInput;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return kExitInternal;
  }
  return 0;
}
