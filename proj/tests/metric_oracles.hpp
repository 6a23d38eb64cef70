#pragma once

// Scalar-loop oracles for the evaluation metrics, written straight from the
// definitions and independent of the library implementation. Shared by the
// unit tests and the acceptance suite.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

namespace metric_oracles {

inline constexpr double kEps = 2.220446049250313e-16;



inline double o_mae(const std::vector<double>& p, const std::vector<double>& g) {
  double s = 0;
  for (std::size_t i = 0; i < p.size(); ++i) s += p[i] > g[i] ? p[i] - g[i] : g[i] - p[i];
  return s / static_cast<double>(p.size());
}

inline double o_f_single(const std::vector<double>& p, const std::vector<double>& g, double beta2,
                  double thr) {
  double tp = 0, fp = 0, fn = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const bool pos = p[i] >= thr;
    const bool gt = g[i] != 0.0;
    if (pos && gt) tp += 1;
    if (pos && !gt) fp += 1;
    if (!pos && gt) fn += 1;
  }
  if (tp + fp == 0 || tp + fn == 0) return 0.0;
  const double prec = tp / (tp + fp), rec = tp / (tp + fn);
  if (beta2 * prec + rec == 0) return 0.0;
  return (1 + beta2) * prec * rec / (beta2 * prec + rec);
}

inline double o_f(const std::vector<double>& p, const std::vector<double>& g, double beta2, bool adaptive) {
  if (adaptive) {
    double m = 0;
    for (double v : p) m += v;
    m = std::max(std::min(2.0 * m / static_cast<double>(p.size()), 1.0), 2.2250738585072014e-308);
    return o_f_single(p, g, beta2, m);
  }
  double acc = 0;
  for (int i = 0; i < 256; ++i) acc += o_f_single(p, g, beta2, (i + 1) / 256.0);
  return acc / 256.0;
}

inline double o_e_single(const std::vector<double>& p, const std::vector<double>& g, double thr) {
  const std::size_t n = p.size();
  std::vector<double> fm(n);
  for (std::size_t i = 0; i < n; ++i) fm[i] = p[i] >= thr ? 1.0 : 0.0;
  double gsum = 0;
  for (double v : g) gsum += v;
  double acc = 0;
  if (gsum == 0) {
    for (std::size_t i = 0; i < n; ++i) acc += 1.0 - fm[i];
  } else if (gsum == static_cast<double>(n)) {
    for (std::size_t i = 0; i < n; ++i) acc += fm[i];
  } else {
    double mf = 0, mg = 0;
    for (std::size_t i = 0; i < n; ++i) {
      mf += fm[i];
      mg += g[i];
    }
    mf /= static_cast<double>(n);
    mg /= static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) {
      const double a = fm[i] - mf, b = g[i] - mg;
      const double xi = 2.0 * a * b / (a * a + b * b + kEps);
      acc += (xi + 1.0) * (xi + 1.0) / 4.0;
    }
  }
  return acc / static_cast<double>(n);
}

inline double o_e(const std::vector<double>& p, const std::vector<double>& g, bool adaptive) {
  if (adaptive) {
    double m = 0;
    for (double v : p) m += v;
    m = std::max(std::min(2.0 * m / static_cast<double>(p.size()), 1.0), 2.2250738585072014e-308);
    return o_e_single(p, g, m);
  }
  double acc = 0;
  for (int i = 0; i < 256; ++i) acc += o_e_single(p, g, (i + 1) / 256.0);
  return acc / 256.0;
}

inline double o_region_score(const std::vector<double>& p, const std::vector<double>& g, bool fg) {
  double n = 0, mean = 0;
  for (std::size_t i = 0; i < p.size(); ++i)
    if ((g[i] != 0.0) == fg) {
      n += 1;
      mean += fg ? p[i] : 1.0 - p[i];
    }
  if (n == 0) return 0.0;
  mean /= n;
  double var = 0;
  for (std::size_t i = 0; i < p.size(); ++i)
    if ((g[i] != 0.0) == fg) {
      const double d = (fg ? p[i] : 1.0 - p[i]) - mean;
      var += d * d;
    }
  const double sd = n > 1 ? std::sqrt(var / (n - 1)) : 0.0;
  return 2.0 * mean / (mean * mean + 1.0 + sd + kEps);
}

inline double o_block_ssim(const std::vector<double>& p, const std::vector<double>& g, std::int64_t W,
                    std::int64_t r0, std::int64_t r1, std::int64_t c0, std::int64_t c1) {
  const double n = static_cast<double>((r1 - r0) * (c1 - c0));
  if (n <= 0) return 1.0;
  double mx = 0, my = 0;
  for (auto r = r0; r < r1; ++r)
    for (auto c = c0; c < c1; ++c) {
      mx += p[static_cast<std::size_t>(r * W + c)];
      my += g[static_cast<std::size_t>(r * W + c)];
    }
  mx /= n;
  my /= n;
  double sx = 0, sy = 0, sxy = 0;
  for (auto r = r0; r < r1; ++r)
    for (auto c = c0; c < c1; ++c) {
      const double a = p[static_cast<std::size_t>(r * W + c)] - mx;
      const double b = g[static_cast<std::size_t>(r * W + c)] - my;
      sx += a * a;
      sy += b * b;
      sxy += a * b;
    }
  sx /= n - 1 + kEps;
  sy /= n - 1 + kEps;
  sxy /= n - 1 + kEps;
  const double alpha = 4 * mx * my * sxy;
  const double beta = (mx * mx + my * my) * (sx + sy);
  if (alpha != 0) return alpha / (beta + kEps);
  return beta == 0 ? 1.0 : 0.0;
}

inline double o_s(const std::vector<double>& p, const std::vector<double>& g, std::int64_t H,
           std::int64_t W, double alpha) {
  double gm = 0;
  for (double v : g) gm += v;
  const double y = gm / static_cast<double>(H * W);
  double pm = 0;
  for (double v : p) pm += v;
  pm /= static_cast<double>(H * W);
  if (y == 0) return 1.0 - pm;
  if (y == 1) return pm;

  const double so = y * o_region_score(p, g, true) + (1 - y) * o_region_score(p, g, false);

  std::int64_t X, Y;
  if (gm == 0) {
    X = static_cast<std::int64_t>(std::round(W / 2.0));
    Y = static_cast<std::int64_t>(std::round(H / 2.0));
  } else {
    double xs = 0, ys = 0;
    for (std::int64_t r = 0; r < H; ++r)
      for (std::int64_t c = 0; c < W; ++c) {
        xs += g[static_cast<std::size_t>(r * W + c)] * static_cast<double>(c + 1);
        ys += g[static_cast<std::size_t>(r * W + c)] * static_cast<double>(r + 1);
      }
    X = static_cast<std::int64_t>(std::round(xs / gm));
    Y = static_cast<std::int64_t>(std::round(ys / gm));
  }
  X = std::clamp<std::int64_t>(X, 1, W);
  Y = std::clamp<std::int64_t>(Y, 1, H);
  const double area = static_cast<double>(H * W);
  const double w1 = static_cast<double>(X * Y) / area;
  const double w2 = static_cast<double>((W - X) * Y) / area;
  const double w3 = static_cast<double>(X * (H - Y)) / area;
  const double w4 = 1 - w1 - w2 - w3;
  const double sr = w1 * o_block_ssim(p, g, W, 0, Y, 0, X) +
                    w2 * o_block_ssim(p, g, W, 0, Y, X, W) +
                    w3 * o_block_ssim(p, g, W, Y, H, 0, X) +
                    w4 * o_block_ssim(p, g, W, Y, H, X, W);
  return std::max(alpha * so + (1 - alpha) * sr, 0.0);
}

inline double o_miou(const std::vector<double>& p, const std::vector<double>& g, std::int64_t K) {
  double acc = 0;
  int present = 0;
  for (std::int64_t k = 0; k < K; ++k) {
    double inter = 0, uni = 0;
    for (std::size_t i = 0; i < p.size(); ++i) {
      const bool a = static_cast<std::int64_t>(p[i]) == k;
      const bool b = static_cast<std::int64_t>(g[i]) == k;
      if (a && b) inter += 1;
      if (a || b) uni += 1;
    }
    if (uni == 0) continue;
    acc += inter / uni;
    ++present;
  }
  return present ? acc / present : 0.0;
}


}  // namespace metric_oracles
