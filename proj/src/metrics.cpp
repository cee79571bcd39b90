#include "xplat/metrics.hpp"

#include <cmath>
#include <limits>
#include <string>

#include "xplat/error.hpp"

namespace xplat {

MetricsReport compute_metrics(std::span<const double> preds, std::span<const double> labels, bool require_rmse) {
  if (preds.empty()) throw ConfigError("metrics need at least one prediction");
  if (preds.size() != labels.size())
    throw ConfigError("metrics given " + std::to_string(preds.size()) + " predictions for " +
                      std::to_string(labels.size()) + " labels");
  const double n = static_cast<double>(preds.size());
  double mean = 0.0;
  for (double y : labels) mean += y;
  mean /= n;
  double sse = 0.0, sst = 0.0, rel = 0.0;
  bool zero_label = false;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const double e = labels[i] - preds[i];
    sse += e * e;
    sst += (labels[i] - mean) * (labels[i] - mean);
    if (labels[i] == 0.0)
      zero_label = true;
    else
      rel += (e / labels[i]) * (e / labels[i]);
  }
  if (sst == 0.0) throw NumericError("R^2 undefined: labels have zero variance");
  if (zero_label && require_rmse) throw NumericError("relative MSE undefined: a label is zero");
  MetricsReport r;
  r.count = preds.size();
  r.mse = sse / n;
  r.r2 = 1.0 - sse / sst;
  r.rmse = zero_label ? std::numeric_limits<double>::quiet_NaN() : rel / n;
  return r;
}

}  // namespace xplat
