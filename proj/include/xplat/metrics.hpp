#pragma once

#include <cstddef>
#include <span>

namespace xplat {

struct MetricsReport {
  double mse = 0.0;
  double r2 = 0.0;
  // Mean of ((label - pred) / label)^2; NaN when a label is zero.
  double rmse = 0.0;
  std::size_t count = 0;
};

// Throws ConfigError on empty or unequal inputs, NumericError when the labels
// have zero variance. A zero label leaves rmse as NaN instead of throwing;
// require_rmse turns that into a NumericError.
MetricsReport compute_metrics(std::span<const double> preds, std::span<const double> labels,
                              bool require_rmse = false);

}  // namespace xplat
