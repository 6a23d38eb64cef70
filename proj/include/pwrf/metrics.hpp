#pragma once

#include <vector>

#include "pwrf/tensor.hpp"

// Saliency / segmentation evaluation. Pure functions on (H,W) maps, no tape.

namespace pwrf::metrics {

struct BinaryEvalPair {
  Tensor prediction;    // (H,W), values in [0,1]
  Tensor ground_truth;  // (H,W), values in {0,1}
};

// Validates ranges and shapes.
BinaryEvalPair make_pair(const Tensor& prediction, const Tensor& ground_truth);

enum class ThresholdMode { adaptive, mean };

double mae(const BinaryEvalPair& pair);

struct FMeasure {
  double value = 0.0;
  bool empty_gt = false;  // no positive ground truth; value defined as 0
};
FMeasure f_measure(const BinaryEvalPair& pair, double beta2, ThresholdMode mode);

double e_measure(const BinaryEvalPair& pair, ThresholdMode mode);

// Structure measure, alpha*S_object + (1-alpha)*S_region.
double s_measure(const BinaryEvalPair& pair, double alpha = 0.5);

struct Miou {
  std::vector<double> per_class;  // IoU per class id; meaningless where !present
  std::vector<bool> present;      // class appears in prediction or ground truth
  double mean = 0.0;              // over present classes only
};
Miou miou(const Tensor& pred_classes, const Tensor& gt_classes, std::int64_t num_classes);

// Pixel accuracy, used by probe comparisons.
double accuracy(const Tensor& pred_classes, const Tensor& gt_classes);

}  // namespace pwrf::metrics
