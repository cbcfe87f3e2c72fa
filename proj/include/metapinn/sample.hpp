#pragma once

#include <string>
#include <vector>

#include "metapinn/tensor.hpp"

namespace metapinn {

/// One training example: a (window x features) slice of sensor history, the
/// normalized run-time at its final row, and the remaining-life label there.
struct SampleWindow {
  Tensor features;
  double run_time = 0.0;
  double rul = 0.0;
};

/// A task for episodic training: disjoint support and query sample lists
/// drawn from one degradation trajectory.
struct MetaTask {
  int id = 0;
  std::vector<SampleWindow> support;
  std::vector<SampleWindow> query;
  std::string provenance;  // unit id and segment bounds, for reporting
};

}  // namespace metapinn
