#include "emc2/dataset.hpp"

#include <algorithm>
#include <map>
#include <string>

#include "emc2/errors.hpp"

namespace emc2 {

void Dataset::validate() const {
  if (anchors.empty()) throw ConfigError("dataset: no anchors");
  if (positives.size() != anchors.size() || neg_lists.size() != anchors.size()) {
    throw ConfigError("dataset: anchors/positives/neg_lists size mismatch");
  }
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (items[i].id != static_cast<int>(i)) {
      throw ConfigError("dataset: item id " + std::to_string(items[i].id) +
                        " does not match its index " + std::to_string(i));
    }
  }
  if (m_neg < 1) throw ConfigError("dataset: m_neg must be >= 1");
  for (std::size_t k = 0; k < anchors.size(); ++k) {
    if (static_cast<int>(neg_lists[k].size()) != m_neg) {
      throw ConfigError("dataset: negative set of anchor " + std::to_string(k) +
                        " has size " + std::to_string(neg_lists[k].size()) +
                        ", expected " + std::to_string(m_neg));
    }
    auto in_range = [&](int id) { return id >= 0 && id < static_cast<int>(items.size()); };
    if (!in_range(anchors[k]) || !in_range(positives[k])) {
      throw ConfigError("dataset: anchor/positive id out of range");
    }
    for (int id : neg_lists[k]) {
      if (!in_range(id)) throw ConfigError("dataset: negative id out of range");
      if (neg_rule == NegRule::AllButSelf &&
          items[id].base_id == items[anchors[k]].base_id) {
        throw ConfigError("dataset: own augmentation in all-but-self negative set");
      }
    }
  }
}

Dataset build_all_but_self(std::vector<Item> items) {
  Dataset d;
  d.neg_rule = NegRule::AllButSelf;
  d.items = std::move(items);

  std::map<int, std::vector<int>> groups;
  for (const auto& it : d.items) groups[it.base_id].push_back(it.id);
  if (groups.size() < 2) throw ConfigError("all-but-self needs at least two base items");

  std::size_t views_per_base = groups.begin()->second.size();
  for (const auto& [base, views] : groups) {
    if (views.size() != views_per_base) {
      throw ConfigError("all-but-self: base " + std::to_string(base) + " has " +
                        std::to_string(views.size()) + " views, expected " +
                        std::to_string(views_per_base) + " (uneven negative sets)");
    }
    // a single view per base pairs with itself (un-augmented data)
  }

  // Re-key bases densely in ascending base_id order so chain tables can be
  // indexed by base id directly.
  d.base_views.reserve(groups.size());
  int dense = 0;
  for (auto& [base, views] : groups) {
    std::sort(views.begin(), views.end());
    for (int id : views) d.items[id].base_id = dense;
    d.base_views.push_back(views);
    ++dense;
  }

  for (const auto& views : d.base_views) {
    for (std::size_t v = 0; v < views.size(); ++v) {
      d.anchors.push_back(views[v]);
      d.positives.push_back(views[(v + 1) % views.size()]);
    }
  }

  const int total = static_cast<int>(d.items.size());
  d.m_neg = total - static_cast<int>(views_per_base);
  for (int a : d.anchors) {
    std::vector<int> negs;
    negs.reserve(d.m_neg);
    const int own_base = d.items[a].base_id;
    for (int id = 0; id < total; ++id) {
      if (d.items[id].base_id != own_base) negs.push_back(id);
    }
    d.neg_lists.push_back(std::move(negs));
  }
  d.validate();
  return d;
}

Dataset build_explicit(std::vector<Item> items, std::vector<int> anchors,
                       std::vector<int> positives,
                       std::vector<std::vector<int>> neg_lists) {
  Dataset d;
  d.neg_rule = NegRule::Explicit;
  d.items = std::move(items);
  d.anchors = std::move(anchors);
  d.positives = std::move(positives);
  d.neg_lists = std::move(neg_lists);
  if (d.neg_lists.empty() || d.neg_lists.front().empty()) {
    throw ConfigError("explicit dataset: empty negative set");
  }
  d.m_neg = static_cast<int>(d.neg_lists.front().size());
  std::map<int, std::vector<int>> groups;
  for (const auto& it : d.items) groups[it.base_id].push_back(it.id);
  int dense = 0;
  for (auto& [base, views] : groups) {
    for (int id : views) d.items[id].base_id = dense;
    d.base_views.push_back(views);
    ++dense;
  }
  d.validate();
  return d;
}

}  // namespace emc2
