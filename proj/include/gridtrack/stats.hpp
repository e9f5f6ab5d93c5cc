#pragma once

#include <algorithm>
#include <cmath>
#include <span>

namespace gridtrack {

struct Summary {
  double mean{0.0};
  double sd{0.0};  // sample form (n - 1); 0 for a single value
  double min{0.0};
  double max{0.0};
  std::size_t n{0};
};

inline Summary summarize(std::span<const double> values) {
  Summary s;
  s.n = values.size();
  if (values.empty()) return s;
  double sum = 0.0;
  for (double v : values) sum += v;
  s.mean = sum / static_cast<double>(s.n);
  if (s.n > 1) {
    double sq = 0.0;
    for (double v : values) sq += (v - s.mean) * (v - s.mean);
    s.sd = std::sqrt(sq / static_cast<double>(s.n - 1));
  }
  const auto [lo, hi] = std::minmax_element(values.begin(), values.end());
  s.min = *lo;
  s.max = *hi;
  return s;
}

}  // namespace gridtrack
