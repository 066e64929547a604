#include "detkit/vocab.hpp"

#include <algorithm>
#include <numeric>
#include <unordered_set>

#include "detkit/errors.hpp"

namespace detkit {

int StringPool::intern(std::string_view s) {
  auto it = ids_.find(s);
  if (it != ids_.end()) return it->second;
  const int id = static_cast<int>(names_.size());
  names_.emplace_back(s);
  ids_.emplace(names_.back(), id);
  return id;
}

std::optional<int> StringPool::find(std::string_view s) const {
  auto it = ids_.find(s);
  if (it == ids_.end()) return std::nullopt;
  return it->second;
}

const std::string& StringPool::name(int id) const {
  return names_.at(static_cast<std::size_t>(id));
}

std::vector<int> StringPool::lexicographic_ranks() const {
  std::vector<int> order(names_.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](int a, int b) { return names_[a] < names_[b]; });
  std::vector<int> ranks(names_.size());
  for (std::size_t r = 0; r < order.size(); ++r) ranks[order[r]] = static_cast<int>(r);
  return ranks;
}

void CategoryHierarchy::add_edge(int child, int parent) {
  auto& ps = parents_[child];
  if (std::find(ps.begin(), ps.end(), parent) == ps.end()) ps.push_back(parent);
  for (int label : {child, parent}) {
    auto it = std::lower_bound(members_.begin(), members_.end(), label);
    if (it == members_.end() || *it != label) members_.insert(it, label);
  }
}

bool CategoryHierarchy::contains(int label) const {
  return std::binary_search(members_.begin(), members_.end(), label);
}

std::vector<int> CategoryHierarchy::universe() const { return members_; }

const std::vector<int>& CategoryHierarchy::parents(int label) const {
  static const std::vector<int> kNone;
  auto it = parents_.find(label);
  return it == parents_.end() ? kNone : it->second;
}

std::vector<int> CategoryHierarchy::ancestors(int label) const {
  std::vector<int> out;
  std::unordered_set<int> seen{label};
  std::vector<int> stack{label};
  while (!stack.empty()) {
    const int cur = stack.back();
    stack.pop_back();
    for (int p : parents(cur)) {
      if (seen.insert(p).second) {
        out.push_back(p);
        stack.push_back(p);
      }
    }
  }
  std::sort(out.begin(), out.end());
  return out;
}

void CategoryHierarchy::validate_acyclic(const StringPool& labels) const {
  // 0 unseen, 1 on stack, 2 done
  std::unordered_map<int, int> state;
  for (int start : members_) {
    if (state[start] == 2) continue;
    std::vector<std::pair<int, std::size_t>> stack{{start, 0}};
    state[start] = 1;
    while (!stack.empty()) {
      auto& [node, next] = stack.back();
      const auto& ps = parents(node);
      if (next < ps.size()) {
        const int p = ps[next++];
        if (state[p] == 1) {
          throw InputError("hierarchy contains a cycle through label '" +
                           labels.name(p) + "'");
        }
        if (state[p] == 0) {
          state[p] = 1;
          stack.emplace_back(p, 0);
        }
      } else {
        state[node] = 2;
        stack.pop_back();
      }
    }
  }
}

std::size_t CategoryHierarchy::edge_count() const {
  std::size_t n = 0;
  for (const auto& [child, ps] : parents_) n += ps.size();
  return n;
}

}  // namespace detkit
