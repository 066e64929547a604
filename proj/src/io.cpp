#include "detkit/io.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "detkit/errors.hpp"

namespace detkit {

namespace {

constexpr const char* kOpenImagesHeader = "ImageId,PredictionString";
constexpr const char* kFlatHeader = "image_id,label,score,x_min,y_min,x_max,y_max";
constexpr const char* kAnnotationHeader = "ImageID,LabelName,XMin,XMax,YMin,YMax,IsGroupOf";
constexpr const char* kDimsHeader = "ImageID,Width,Height";

[[noreturn]] void fail_at(const std::filesystem::path& file, int line, const std::string& msg) {
  throw InputError(file.string() + ":" + std::to_string(line) + ": " + msg);
}

std::ifstream open_input(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open '" + path.string() + "' for reading");
  return in;
}

std::ofstream open_output(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot open '" + path.string() + "' for writing");
  return out;
}

bool next_line(std::istream& in, std::string& line, int& line_no) {
  if (!std::getline(in, line)) return false;
  if (!line.empty() && line.back() == '\r') line.pop_back();
  ++line_no;
  return true;
}

std::vector<std::string_view> split_csv(std::string_view line) {
  std::vector<std::string_view> fields;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = line.find(',', start);
    if (pos == std::string_view::npos) {
      fields.push_back(line.substr(start));
      break;
    }
    fields.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
  return fields;
}

std::vector<std::string_view> split_ws(std::string_view s) {
  std::vector<std::string_view> tokens;
  std::size_t i = 0;
  while (i < s.size()) {
    while (i < s.size() && s[i] == ' ') ++i;
    std::size_t j = i;
    while (j < s.size() && s[j] != ' ') ++j;
    if (j > i) tokens.push_back(s.substr(i, j - i));
    i = j;
  }
  return tokens;
}

double parse_double(std::string_view text, const char* field,
                    const std::filesystem::path& file, int line) {
  double value = 0.0;
  const char* begin = text.data();
  const char* end = begin + text.size();
  auto [ptr, ec] = std::from_chars(begin, end, value);
  if (ec != std::errc{} || ptr != end) {
    fail_at(file, line, std::string("field ") + field + ": cannot parse number from '" +
                            std::string(text) + "'");
  }
  return value;
}

double checked_unit(double v, const char* field, bool clamp,
                    const std::filesystem::path& file, int line) {
  if (v >= 0.0 && v <= 1.0) return v;
  if (clamp) return std::min(1.0, std::max(0.0, v));
  fail_at(file, line, std::string("field ") + field + ": value " + std::to_string(v) +
                          " outside [0,1] (pass a clamp option to coerce)");
}

struct RawBox {
  double x_min, y_min, x_max, y_max;
};

BBox finish_box(RawBox r, std::string_view image, const LoadOptions& opts,
                const std::filesystem::path& file, int line) {
  if (opts.pixel_dims != nullptr) {
    auto it = opts.pixel_dims->find(std::string(image));
    if (it == opts.pixel_dims->end()) {
      fail_at(file, line, "image '" + std::string(image) + "' missing from the dimensions file");
    }
    const auto [w, h] = it->second;
    r.x_min /= w;
    r.x_max /= w;
    r.y_min /= h;
    r.y_max /= h;
  }
  BBox box;
  box.x_min = checked_unit(r.x_min, "XMin", opts.clamp_out_of_range, file, line);
  box.y_min = checked_unit(r.y_min, "YMin", opts.clamp_out_of_range, file, line);
  box.x_max = checked_unit(r.x_max, "XMax", opts.clamp_out_of_range, file, line);
  box.y_max = checked_unit(r.y_max, "YMax", opts.clamp_out_of_range, file, line);
  if (box.x_min > box.x_max || box.y_min > box.y_max) {
    fail_at(file, line, "inverted box corners (min exceeds max)");
  }
  return box;
}

void add_to_roster(std::vector<int>& roster, int image) { roster.push_back(image); }

void finish_roster(std::vector<int>& roster) {
  std::sort(roster.begin(), roster.end());
  roster.erase(std::unique(roster.begin(), roster.end()), roster.end());
}

// detections of one image arranged for writing: label asc, score desc,
// corners asc, original order
std::vector<std::uint32_t> write_order(const std::vector<Detection>& items,
                                       const std::vector<std::uint32_t>& idx,
                                       const Vocab& vocab) {
  std::vector<std::uint32_t> order = idx;
  std::sort(order.begin(), order.end(), [&](std::uint32_t a, std::uint32_t b) {
    const Detection& da = items[a];
    const Detection& db = items[b];
    const std::string& la = vocab.labels.name(da.category);
    const std::string& lb = vocab.labels.name(db.category);
    if (la != lb) return la < lb;
    if (da.score != db.score) return da.score > db.score;
    const auto ka = std::tie(da.box.x_min, da.box.y_min, da.box.x_max, da.box.y_max);
    const auto kb = std::tie(db.box.x_min, db.box.y_min, db.box.x_max, db.box.y_max);
    if (ka != kb) return ka < kb;
    return a < b;
  });
  return order;
}

// images grouped and ordered by name for writing
std::vector<std::pair<std::string, std::vector<std::uint32_t>>> images_by_name(
    const std::vector<Detection>& items, const std::vector<int>& roster, const Vocab& vocab) {
  std::map<std::string, std::vector<std::uint32_t>> by_name;
  for (int image : roster) by_name[vocab.images.name(image)];
  for (std::uint32_t i = 0; i < items.size(); ++i) {
    by_name[vocab.images.name(items[i].image)].push_back(i);
  }
  return {by_name.begin(), by_name.end()};
}

}  // namespace

std::string format_fixed6(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  return buf;
}

ImageDims load_image_dims(const std::filesystem::path& path) {
  auto in = open_input(path);
  std::string line;
  int line_no = 0;
  if (!next_line(in, line, line_no) || line != kDimsHeader) {
    fail_at(path, 1, std::string("expected header '") + kDimsHeader + "'");
  }
  ImageDims dims;
  while (next_line(in, line, line_no)) {
    if (line.empty()) continue;
    const auto fields = split_csv(line);
    if (fields.size() != 3) fail_at(path, line_no, "expected 3 fields");
    const double w = parse_double(fields[1], "Width", path, line_no);
    const double h = parse_double(fields[2], "Height", path, line_no);
    if (w <= 0.0 || h <= 0.0) fail_at(path, line_no, "non-positive image dimensions");
    dims[std::string(fields[0])] = {w, h};
  }
  return dims;
}

DetectionSet load_detections(const std::filesystem::path& path, Vocab& vocab,
                             const LoadOptions& opts) {
  auto in = open_input(path);
  std::string line;
  int line_no = 0;
  if (!next_line(in, line, line_no)) {
    fail_at(path, 1, "empty file, expected a header line");
  }

  DetectionSet set;
  set.source_id = path.stem().string();

  if (line == kOpenImagesHeader) {
    while (next_line(in, line, line_no)) {
      if (line.empty()) continue;
      const std::size_t comma = line.find(',');
      if (comma == std::string::npos) fail_at(path, line_no, "missing PredictionString field");
      const std::string_view image_name(line.data(), comma);
      if (image_name.empty()) fail_at(path, line_no, "field ImageId: empty");
      const int image = vocab.images.intern(image_name);
      add_to_roster(set.roster, image);
      const auto tokens = split_ws(std::string_view(line).substr(comma + 1));
      if (tokens.size() % 6 != 0) {
        fail_at(path, line_no,
                "PredictionString token count is not a multiple of 6 (Label Score "
                "XMin YMin XMax YMax)");
      }
      for (std::size_t t = 0; t < tokens.size(); t += 6) {
        Detection d;
        d.image = image;
        d.category = vocab.labels.intern(tokens[t]);
        d.score = checked_unit(parse_double(tokens[t + 1], "Score", path, line_no), "Score",
                               opts.clamp_out_of_range, path, line_no);
        RawBox raw{parse_double(tokens[t + 2], "XMin", path, line_no),
                   parse_double(tokens[t + 3], "YMin", path, line_no),
                   parse_double(tokens[t + 4], "XMax", path, line_no),
                   parse_double(tokens[t + 5], "YMax", path, line_no)};
        d.box = finish_box(raw, image_name, opts, path, line_no);
        set.items.push_back(d);
      }
    }
  } else if (line == kFlatHeader) {
    while (next_line(in, line, line_no)) {
      if (line.empty()) continue;
      const auto fields = split_csv(line);
      if (fields.size() != 7) fail_at(path, line_no, "expected 7 fields");
      if (fields[0].empty()) fail_at(path, line_no, "field image_id: empty");
      Detection d;
      d.image = vocab.images.intern(fields[0]);
      d.category = vocab.labels.intern(fields[1]);
      d.score = checked_unit(parse_double(fields[2], "score", path, line_no), "score",
                             opts.clamp_out_of_range, path, line_no);
      RawBox raw{parse_double(fields[3], "x_min", path, line_no),
                 parse_double(fields[4], "y_min", path, line_no),
                 parse_double(fields[5], "x_max", path, line_no),
                 parse_double(fields[6], "y_max", path, line_no)};
      d.box = finish_box(raw, fields[0], opts, path, line_no);
      add_to_roster(set.roster, d.image);
      set.items.push_back(d);
    }
  } else {
    fail_at(path, 1, std::string("unrecognized header; expected '") + kOpenImagesHeader +
                         "' or '" + kFlatHeader + "'");
  }
  finish_roster(set.roster);
  return set;
}

void save_detections_openimages(const DetectionSet& dets, const Vocab& vocab,
                                const std::filesystem::path& path) {
  auto out = open_output(path);
  out << kOpenImagesHeader << "\n";
  for (const auto& [name, idx] : images_by_name(dets.items, dets.roster, vocab)) {
    out << name << ",";
    bool first = true;
    for (std::uint32_t i : write_order(dets.items, idx, vocab)) {
      const Detection& d = dets.items[i];
      if (!first) out << ' ';
      first = false;
      out << vocab.labels.name(d.category) << ' ' << format_fixed6(d.score) << ' '
          << format_fixed6(d.box.x_min) << ' ' << format_fixed6(d.box.y_min) << ' '
          << format_fixed6(d.box.x_max) << ' ' << format_fixed6(d.box.y_max);
    }
    out << "\n";
  }
}

void save_detections_flat(const DetectionSet& dets, const Vocab& vocab,
                          const std::filesystem::path& path) {
  auto out = open_output(path);
  out << kFlatHeader << "\n";
  for (const auto& [name, idx] : images_by_name(dets.items, dets.roster, vocab)) {
    for (std::uint32_t i : write_order(dets.items, idx, vocab)) {
      const Detection& d = dets.items[i];
      out << name << ',' << vocab.labels.name(d.category) << ',' << format_fixed6(d.score)
          << ',' << format_fixed6(d.box.x_min) << ',' << format_fixed6(d.box.y_min) << ','
          << format_fixed6(d.box.x_max) << ',' << format_fixed6(d.box.y_max) << "\n";
    }
  }
}

GroundTruthSet load_annotations(const std::filesystem::path& path, Vocab& vocab,
                                const LoadOptions& opts) {
  auto in = open_input(path);
  std::string line;
  int line_no = 0;
  if (!next_line(in, line, line_no)) fail_at(path, 1, "empty file, expected a header line");
  const auto header = split_csv(line);
  auto column = [&](const char* name) {
    for (std::size_t i = 0; i < header.size(); ++i) {
      if (header[i] == name) return i;
    }
    fail_at(path, 1, std::string("header misses required column '") + name + "'");
  };
  const std::size_t c_image = column("ImageID");
  const std::size_t c_label = column("LabelName");
  const std::size_t c_xmin = column("XMin");
  const std::size_t c_xmax = column("XMax");
  const std::size_t c_ymin = column("YMin");
  const std::size_t c_ymax = column("YMax");
  const std::size_t c_group = column("IsGroupOf");

  GroundTruthSet set;
  while (next_line(in, line, line_no)) {
    if (line.empty()) continue;
    const auto fields = split_csv(line);
    if (fields.size() < header.size()) {
      fail_at(path, line_no, "expected " + std::to_string(header.size()) + " fields, found " +
                                 std::to_string(fields.size()));
    }
    if (fields[c_image].empty()) fail_at(path, line_no, "field ImageID: empty");
    GroundTruthBox b;
    b.image = vocab.images.intern(fields[c_image]);
    b.category = vocab.labels.intern(fields[c_label]);
    RawBox raw{parse_double(fields[c_xmin], "XMin", path, line_no),
               parse_double(fields[c_ymin], "YMin", path, line_no),
               parse_double(fields[c_xmax], "XMax", path, line_no),
               parse_double(fields[c_ymax], "YMax", path, line_no)};
    b.box = finish_box(raw, fields[c_image], opts, path, line_no);
    if (fields[c_group] == "0") {
      b.is_group_of = false;
    } else if (fields[c_group] == "1") {
      b.is_group_of = true;
    } else {
      fail_at(path, line_no, "field IsGroupOf: expected 0 or 1, found '" +
                                 std::string(fields[c_group]) + "'");
    }
    add_to_roster(set.roster, b.image);
    set.boxes.push_back(b);
  }
  finish_roster(set.roster);
  return set;
}

void save_annotations(const GroundTruthSet& gts, const Vocab& vocab,
                      const std::filesystem::path& path) {
  auto out = open_output(path);
  out << kAnnotationHeader << "\n";
  std::vector<std::uint32_t> order(gts.boxes.size());
  for (std::uint32_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](std::uint32_t a, std::uint32_t b) {
    const auto& ba = gts.boxes[a];
    const auto& bb = gts.boxes[b];
    const std::string& ia = vocab.images.name(ba.image);
    const std::string& ib = vocab.images.name(bb.image);
    if (ia != ib) return ia < ib;
    const std::string& la = vocab.labels.name(ba.category);
    const std::string& lb = vocab.labels.name(bb.category);
    if (la != lb) return la < lb;
    const auto ka = std::tie(ba.box.x_min, ba.box.y_min, ba.box.x_max, ba.box.y_max,
                             ba.is_group_of);
    const auto kb = std::tie(bb.box.x_min, bb.box.y_min, bb.box.x_max, bb.box.y_max,
                             bb.is_group_of);
    if (ka != kb) return ka < kb;
    return a < b;
  });
  for (std::uint32_t i : order) {
    const auto& b = gts.boxes[i];
    out << vocab.images.name(b.image) << ',' << vocab.labels.name(b.category) << ','
        << format_fixed6(b.box.x_min) << ',' << format_fixed6(b.box.x_max) << ','
        << format_fixed6(b.box.y_min) << ',' << format_fixed6(b.box.y_max) << ','
        << (b.is_group_of ? '1' : '0') << "\n";
  }
}

namespace {

void walk_hierarchy_json(const nlohmann::json& node, CategoryHierarchy& h, Vocab& vocab,
                         const std::filesystem::path& path) {
  if (!node.is_object() || !node.contains("LabelName")) {
    throw InputError(path.string() + ": every hierarchy record needs a LabelName");
  }
  const int label = vocab.labels.intern(node["LabelName"].get<std::string>());
  if (node.contains("Subcategory")) {
    for (const auto& child : node["Subcategory"]) {
      if (!child.is_object() || !child.contains("LabelName")) {
        throw InputError(path.string() + ": every hierarchy record needs a LabelName");
      }
      const int child_label = vocab.labels.intern(child["LabelName"].get<std::string>());
      h.add_edge(child_label, label);
      walk_hierarchy_json(child, h, vocab, path);
    }
  }
}

}  // namespace

CategoryHierarchy load_hierarchy(const std::filesystem::path& path, Vocab& vocab) {
  auto in = open_input(path);
  std::stringstream buffer;
  buffer << in.rdbuf();
  const std::string text = buffer.str();

  CategoryHierarchy h;
  const std::size_t first = text.find_first_not_of(" \t\r\n");
  if (first != std::string::npos && text[first] == '{') {
    nlohmann::json doc;
    try {
      doc = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
      throw InputError(path.string() + ": invalid hierarchy JSON: " + e.what());
    }
    walk_hierarchy_json(doc, h, vocab, path);
  } else {
    std::stringstream lines(text);
    std::string line;
    int line_no = 0;
    while (next_line(lines, line, line_no)) {
      if (line.empty()) continue;
      if (line_no == 1 && line == "child,parent") continue;
      const auto fields = split_csv(line);
      if (fields.size() != 2 || fields[0].empty() || fields[1].empty()) {
        fail_at(path, line_no, "expected 'child,parent'");
      }
      h.add_edge(vocab.labels.intern(fields[0]), vocab.labels.intern(fields[1]));
    }
  }
  h.validate_acyclic(vocab.labels);
  return h;
}

void save_hierarchy_csv(const CategoryHierarchy& h, const Vocab& vocab,
                        const std::filesystem::path& path) {
  auto out = open_output(path);
  out << "child,parent\n";
  std::vector<std::pair<std::string, std::string>> rows;
  for (int child : h.universe()) {
    for (int parent : h.parents(child)) {
      rows.emplace_back(vocab.labels.name(child), vocab.labels.name(parent));
    }
  }
  std::sort(rows.begin(), rows.end());
  for (const auto& [child, parent] : rows) out << child << ',' << parent << "\n";
}

}  // namespace detkit
