#pragma once

#include <vector>

namespace emc2 {

// One data point. For feature encoders the payload is `features`; for the
// embedding-table encoder the payload is the id itself (the table row).
// `base_id` groups augmented views of the same underlying source item.
struct Item {
  int id = -1;
  int base_id = -1;
  std::vector<double> features;
};

}  // namespace emc2
