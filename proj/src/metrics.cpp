#include "pwrf/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace pwrf::metrics {

namespace {

constexpr double kEps = std::numeric_limits<double>::epsilon();

double mean_of(const std::vector<double>& v) {
  double acc = 0.0;
  for (double x : v) acc += x;
  return acc / static_cast<double>(v.size());
}

std::vector<unsigned char> binarize(const std::vector<double>& p, double threshold) {
  std::vector<unsigned char> b(p.size());
  for (std::size_t i = 0; i < p.size(); ++i) b[i] = p[i] >= threshold ? 1 : 0;
  return b;
}

// min(2*mean, 1), floored at the smallest normal so an exactly-zero map
// binarizes to all background rather than all foreground.
double adaptive_threshold(const std::vector<double>& p) {
  return std::max(std::min(2.0 * mean_of(p), 1.0), std::numeric_limits<double>::min());
}

// 256 uniform levels strictly inside (0,1]; binarization is >= t, so a
// perfect binary prediction scores 1 at every level.
double mean_mode_level(int i) { return (static_cast<double>(i) + 1.0) / 256.0; }

double f_at(const std::vector<unsigned char>& bin, const std::vector<double>& g, double beta2) {
  double tp = 0.0, pred_pos = 0.0, gt_pos = 0.0;
  for (std::size_t i = 0; i < bin.size(); ++i) {
    pred_pos += bin[i];
    gt_pos += g[i];
    if (bin[i]) tp += g[i];
  }
  if (pred_pos == 0.0 || gt_pos == 0.0) return 0.0;
  const double precision = tp / pred_pos;
  const double recall = tp / gt_pos;
  const double denom = beta2 * precision + recall;
  if (denom == 0.0) return 0.0;
  return (1.0 + beta2) * precision * recall / denom;
}

double e_at(const std::vector<unsigned char>& bin, const std::vector<double>& g) {
  const std::size_t n = bin.size();
  double gt_sum = 0.0;
  for (double v : g) gt_sum += v;
  double acc = 0.0;
  if (gt_sum == 0.0) {
    for (std::size_t i = 0; i < n; ++i) acc += 1.0 - bin[i];
  } else if (gt_sum == static_cast<double>(n)) {
    for (std::size_t i = 0; i < n; ++i) acc += bin[i];
  } else {
    double bin_mean = 0.0;
    for (std::size_t i = 0; i < n; ++i) bin_mean += bin[i];
    bin_mean /= static_cast<double>(n);
    const double gt_mean = gt_sum / static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) {
      const double dfm = bin[i] - bin_mean;
      const double dgt = g[i] - gt_mean;
      const double align = 2.0 * dfm * dgt / (dfm * dfm + dgt * dgt + kEps);
      acc += (align + 1.0) * (align + 1.0) / 4.0;
    }
  }
  return acc / static_cast<double>(n);
}

}  // namespace

BinaryEvalPair make_pair(const Tensor& prediction, const Tensor& ground_truth) {
  check_shape(prediction.rank() == 2 && ground_truth.rank() == 2 &&
                  prediction.shape() == ground_truth.shape(),
              "eval pair: maps must be (H,W) with equal shapes");
  for (double v : prediction.values())
    check_contract(v >= 0.0 && v <= 1.0, "eval pair: prediction outside [0,1]");
  for (double v : ground_truth.values())
    check_contract(v == 0.0 || v == 1.0, "eval pair: ground truth must be binary");
  return BinaryEvalPair{prediction, ground_truth};
}

double mae(const BinaryEvalPair& pair) {
  const auto& p = pair.prediction.values();
  const auto& g = pair.ground_truth.values();
  double acc = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) acc += std::fabs(p[i] - g[i]);
  return acc / static_cast<double>(p.size());
}

FMeasure f_measure(const BinaryEvalPair& pair, double beta2, ThresholdMode mode) {
  check_contract(beta2 > 0.0, "f_measure: beta2 must be positive");
  const auto& p = pair.prediction.values();
  const auto& g = pair.ground_truth.values();
  FMeasure out;
  double gt_pos = 0.0;
  for (double v : g) gt_pos += v;
  out.empty_gt = gt_pos == 0.0;
  if (mode == ThresholdMode::adaptive) {
    out.value = f_at(binarize(p, adaptive_threshold(p)), g, beta2);
  } else {
    double acc = 0.0;
    for (int i = 0; i < 256; ++i) acc += f_at(binarize(p, mean_mode_level(i)), g, beta2);
    out.value = acc / 256.0;
  }
  return out;
}

double e_measure(const BinaryEvalPair& pair, ThresholdMode mode) {
  const auto& p = pair.prediction.values();
  const auto& g = pair.ground_truth.values();
  if (mode == ThresholdMode::adaptive) return e_at(binarize(p, adaptive_threshold(p)), g);
  double acc = 0.0;
  for (int i = 0; i < 256; ++i) acc += e_at(binarize(p, mean_mode_level(i)), g);
  return acc / 256.0;
}

namespace {

// 2x/(x^2+1+sigma_x), means and deviation taken over one region.
double s_object_region(const std::vector<double>& pred, const std::vector<double>& region_mask) {
  double n = 0.0, mean = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (region_mask[i] != 0.0) {
      n += 1.0;
      mean += pred[i];
    }
  }
  if (n == 0.0) return 0.0;
  mean /= n;
  double var = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i)
    if (region_mask[i] != 0.0) var += (pred[i] - mean) * (pred[i] - mean);
  const double sd = n > 1.0 ? std::sqrt(var / (n - 1.0)) : 0.0;
  return 2.0 * mean / (mean * mean + 1.0 + sd + kEps);
}

double s_object(const std::vector<double>& p, const std::vector<double>& g) {
  std::vector<double> fg(p.size()), bg(p.size()), inv_g(p.size());
  for (std::size_t i = 0; i < p.size(); ++i) {
    fg[i] = g[i] != 0.0 ? p[i] : 0.0;
    bg[i] = g[i] == 0.0 ? 1.0 - p[i] : 0.0;
    inv_g[i] = 1.0 - g[i];
  }
  const double u = mean_of(g);
  return u * s_object_region(fg, g) + (1.0 - u) * s_object_region(bg, inv_g);
}

// Block SSIM of the region-aware term.
double ssim_block(const std::vector<double>& p, const std::vector<double>& g, std::int64_t W,
                  std::int64_t r0, std::int64_t r1, std::int64_t c0, std::int64_t c1) {
  const double n = static_cast<double>((r1 - r0) * (c1 - c0));
  if (n <= 0.0) return 1.0;  // empty block carries zero weight
  double xm = 0.0, ym = 0.0;
  for (std::int64_t r = r0; r < r1; ++r)
    for (std::int64_t c = c0; c < c1; ++c) {
      xm += p[static_cast<std::size_t>(r * W + c)];
      ym += g[static_cast<std::size_t>(r * W + c)];
    }
  xm /= n;
  ym /= n;
  double sx = 0.0, sy = 0.0, sxy = 0.0;
  for (std::int64_t r = r0; r < r1; ++r)
    for (std::int64_t c = c0; c < c1; ++c) {
      const double dx = p[static_cast<std::size_t>(r * W + c)] - xm;
      const double dy = g[static_cast<std::size_t>(r * W + c)] - ym;
      sx += dx * dx;
      sy += dy * dy;
      sxy += dx * dy;
    }
  sx /= n - 1.0 + kEps;
  sy /= n - 1.0 + kEps;
  sxy /= n - 1.0 + kEps;
  const double a = 4.0 * xm * ym * sxy;
  const double b = (xm * xm + ym * ym) * (sx + sy);
  if (a != 0.0) return a / (b + kEps);
  return b == 0.0 ? 1.0 : 0.0;
}

double s_region(const std::vector<double>& p, const std::vector<double>& g, std::int64_t H,
                std::int64_t W) {
  // Ground-truth centroid, 1-based rounding per the reference definition.
  double total = 0.0;
  for (double v : g) total += v;
  std::int64_t X, Y;
  if (total == 0.0) {
    X = static_cast<std::int64_t>(std::round(static_cast<double>(W) / 2.0));
    Y = static_cast<std::int64_t>(std::round(static_cast<double>(H) / 2.0));
  } else {
    double xs = 0.0, ys = 0.0;
    for (std::int64_t r = 0; r < H; ++r)
      for (std::int64_t c = 0; c < W; ++c) {
        const double v = g[static_cast<std::size_t>(r * W + c)];
        xs += v * static_cast<double>(c + 1);
        ys += v * static_cast<double>(r + 1);
      }
    X = static_cast<std::int64_t>(std::round(xs / total));
    Y = static_cast<std::int64_t>(std::round(ys / total));
  }
  X = std::clamp<std::int64_t>(X, 1, W);
  Y = std::clamp<std::int64_t>(Y, 1, H);

  const double area = static_cast<double>(H * W);
  const double w1 = static_cast<double>(X * Y) / area;
  const double w2 = static_cast<double>((W - X) * Y) / area;
  const double w3 = static_cast<double>(X * (H - Y)) / area;
  const double w4 = 1.0 - w1 - w2 - w3;

  const double q1 = ssim_block(p, g, W, 0, Y, 0, X);
  const double q2 = ssim_block(p, g, W, 0, Y, X, W);
  const double q3 = ssim_block(p, g, W, Y, H, 0, X);
  const double q4 = ssim_block(p, g, W, Y, H, X, W);
  return w1 * q1 + w2 * q2 + w3 * q3 + w4 * q4;
}

}  // namespace

double s_measure(const BinaryEvalPair& pair, double alpha) {
  check_contract(alpha >= 0.0 && alpha <= 1.0, "s_measure: alpha must lie in [0,1]");
  const auto& p = pair.prediction.values();
  const auto& g = pair.ground_truth.values();
  const double y = mean_of(g);
  if (y == 0.0) return 1.0 - mean_of(p);
  if (y == 1.0) return mean_of(p);
  const double s = alpha * s_object(p, g) +
                   (1.0 - alpha) * s_region(p, g, pair.prediction.dim(0), pair.prediction.dim(1));
  return std::max(s, 0.0);
}

Miou miou(const Tensor& pred_classes, const Tensor& gt_classes, std::int64_t num_classes) {
  check_shape(pred_classes.shape() == gt_classes.shape(), "miou: shape mismatch");
  check_contract(num_classes >= 1, "miou: num_classes must be >= 1");
  std::vector<double> tp(static_cast<std::size_t>(num_classes), 0.0);
  std::vector<double> fp(tp.size(), 0.0), fn(tp.size(), 0.0);
  const auto& p = pred_classes.values();
  const auto& g = gt_classes.values();
  for (std::size_t i = 0; i < p.size(); ++i) {
    const auto pi = static_cast<std::int64_t>(p[i]);
    const auto gi = static_cast<std::int64_t>(g[i]);
    check_contract(static_cast<double>(pi) == p[i] && pi >= 0 && pi < num_classes,
                   "miou: prediction class id out of range");
    check_contract(static_cast<double>(gi) == g[i] && gi >= 0 && gi < num_classes,
                   "miou: ground-truth class id out of range");
    if (pi == gi) {
      tp[static_cast<std::size_t>(pi)] += 1.0;
    } else {
      fp[static_cast<std::size_t>(pi)] += 1.0;
      fn[static_cast<std::size_t>(gi)] += 1.0;
    }
  }
  Miou out;
  out.per_class.assign(static_cast<std::size_t>(num_classes), 0.0);
  out.present.assign(static_cast<std::size_t>(num_classes), false);
  double acc = 0.0;
  int n_present = 0;
  for (std::size_t k = 0; k < tp.size(); ++k) {
    const double denom = tp[k] + fp[k] + fn[k];
    if (denom == 0.0) continue;  // absent from both maps
    out.present[k] = true;
    out.per_class[k] = tp[k] / denom;
    acc += out.per_class[k];
    ++n_present;
  }
  out.mean = n_present > 0 ? acc / static_cast<double>(n_present) : 0.0;
  return out;
}

double accuracy(const Tensor& pred_classes, const Tensor& gt_classes) {
  check_shape(pred_classes.shape() == gt_classes.shape(), "accuracy: shape mismatch");
  const auto& p = pred_classes.values();
  const auto& g = gt_classes.values();
  double hit = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) hit += p[i] == g[i] ? 1.0 : 0.0;
  return hit / static_cast<double>(p.size());
}

}  // namespace pwrf::metrics
