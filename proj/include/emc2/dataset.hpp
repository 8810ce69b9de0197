#pragma once

#include <vector>

#include "emc2/item.hpp"

namespace emc2 {

enum class NegRule { AllButSelf, Explicit };

// Anchors with one stored positive each and a fixed-size negative set per
// anchor. Anchor k is items[anchors[k]] paired with items[positives[k]];
// neg_lists[k] holds item ids. All negative sets share the same size m_neg;
// uneven sets are rejected at construction.
struct Dataset {
  std::vector<Item> items;  // id == index
  std::vector<int> anchors;
  std::vector<int> positives;
  std::vector<std::vector<int>> neg_lists;
  std::vector<std::vector<int>> base_views;  // base id -> view item ids
  NegRule neg_rule = NegRule::AllButSelf;
  int m_neg = 0;

  int num_anchors() const { return static_cast<int>(anchors.size()); }
  int num_bases() const { return static_cast<int>(base_views.size()); }

  const Item& anchor_item(int k) const { return items[anchors[k]]; }
  const Item& positive_item(int k) const { return items[positives[k]]; }

  void validate() const;
};

// Groups items by base_id and pairs each view with the next view of the same
// base (cyclically); negatives are every view of the other bases. Requires
// at least two bases and at least two views per base.
Dataset build_all_but_self(std::vector<Item> items);

// Caller-provided pairs and negative lists; sizes must be uniform.
Dataset build_explicit(std::vector<Item> items, std::vector<int> anchors,
                       std::vector<int> positives,
                       std::vector<std::vector<int>> neg_lists);

}  // namespace emc2
