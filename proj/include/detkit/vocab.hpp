#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace detkit {

// Interns strings to dense ids, assigned in first-seen order. Hot paths work
// on ids; names are only needed at the I/O boundary.
class StringPool {
 public:
  int intern(std::string_view s);
  std::optional<int> find(std::string_view s) const;
  const std::string& name(int id) const;
  int size() const { return static_cast<int>(names_.size()); }

  // ranks[id] = position of name(id) in lexicographic order over the pool
  std::vector<int> lexicographic_ranks() const;

 private:
  struct Hash {
    using is_transparent = void;
    std::size_t operator()(std::string_view s) const {
      return std::hash<std::string_view>{}(s);
    }
  };
  std::vector<std::string> names_;
  std::unordered_map<std::string, int, Hash, std::equal_to<>> ids_;
};

// Shared interning context for one run: category labels and image ids.
struct Vocab {
  StringPool labels;
  StringPool images;
};

// child -> parent links over interned labels. A child may have several
// parents; the graph must stay acyclic.
class CategoryHierarchy {
 public:
  void add_edge(int child, int parent);
  bool contains(int label) const;
  bool empty() const { return members_.empty(); }

  // distinct labels touched by any edge, ascending
  std::vector<int> universe() const;

  // direct parents of a label (empty when it has none)
  const std::vector<int>& parents(int label) const;

  // transitive ancestors excluding the label itself, ascending
  std::vector<int> ancestors(int label) const;

  // throws InputError naming a label on a cycle
  void validate_acyclic(const StringPool& labels) const;

  std::size_t edge_count() const;

 private:
  std::unordered_map<int, std::vector<int>> parents_;
  std::vector<int> members_;  // sorted unique
};

}  // namespace detkit
