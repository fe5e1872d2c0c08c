#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "pmaint/error.hpp"
#include "pmaint/telemetry.hpp"

namespace pmaint {

struct LofParams {
  std::size_t k = 10;
  std::size_t window_size = 256;
  double reach_floor = 1e-9;

  void validate() const {
    if (k < 1) throw Error(ErrorKind::validation, "lof k must be >= 1");
    if (window_size < 1) throw Error(ErrorKind::validation, "lof window_size must be >= 1");
    if (!(reach_floor > 0.0) || !std::isfinite(reach_floor))
      throw Error(ErrorKind::validation, "lof reach_floor must be finite and > 0");
  }

  bool operator==(const LofParams&) const = default;
};

inline double euclidean(std::span<const double> a, std::span<const double> b) {
  double sum = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    sum += d * d;
  }
  return std::sqrt(sum);
}

namespace detail {

// Local Outlier Factor of one query point over the data set window + {point}.
// Only the neighborhoods reachable from the query are materialized, so the cost
// is O(|N(p)| * |N(o)| * n) rather than the full O(n^2) batch.
class LofQuery {
 public:
  LofQuery(std::span<const double> point, std::span<const FeatureVector> window,
           const LofParams& params)
      : point_(point), window_(window), params_(params) {}

  double score() {
    const std::size_t p = window_.size();
    const auto& neighbors = neighborhood(p);
    const double lrd_p = lrd(p);
    double sum = 0.0;
    for (std::size_t o : neighbors) sum += lrd(o) / lrd_p;
    return sum / static_cast<double>(neighbors.size());
  }

 private:
  struct Neighborhood {
    double k_distance = 0.0;
    std::vector<std::size_t> members;
  };

  std::span<const double> at(std::size_t i) const {
    return i == window_.size() ? point_ : std::span<const double>(window_[i]);
  }

  double dist(std::size_t i, std::size_t j) const { return euclidean(at(i), at(j)); }

  const Neighborhood& hood(std::size_t i) {
    if (auto it = cache_.find(i); it != cache_.end()) return it->second;
    const std::size_t n = window_.size() + 1;
    std::vector<double> d;
    d.reserve(n - 1);
    for (std::size_t j = 0; j < n; ++j)
      if (j != i) d.push_back(dist(i, j));
    std::vector<double> sorted = d;
    std::nth_element(sorted.begin(), sorted.begin() + static_cast<std::ptrdiff_t>(params_.k - 1),
                     sorted.end());
    Neighborhood h;
    h.k_distance = sorted[params_.k - 1];
    // Ties at the k-distance are all members (|N_k| may exceed k).
    std::size_t idx = 0;
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i) continue;
      if (d[idx++] <= h.k_distance) h.members.push_back(j);
    }
    return cache_.emplace(i, std::move(h)).first->second;
  }

  const std::vector<std::size_t>& neighborhood(std::size_t i) { return hood(i).members; }

  double lrd(std::size_t i) {
    if (auto it = lrd_cache_.find(i); it != lrd_cache_.end()) return it->second;
    const auto& members = hood(i).members;
    double sum = 0.0;
    for (std::size_t o : members)
      sum += std::max({hood(o).k_distance, dist(i, o), params_.reach_floor});
    const double value = static_cast<double>(members.size()) / sum;
    lrd_cache_.emplace(i, value);
    return value;
  }

  std::span<const double> point_;
  std::span<const FeatureVector> window_;
  const LofParams& params_;
  std::unordered_map<std::size_t, Neighborhood> cache_;
  std::unordered_map<std::size_t, double> lrd_cache_;
};

inline void check_finite(std::span<const double> v) {
  for (double x : v)
    if (!std::isfinite(x)) throw Error(ErrorKind::invalid_input, "non-finite feature value");
}

}  // namespace detail

/// LOF of `point` within the data set formed by `window` plus the point itself.
/// Returns exactly 1.0 while the window holds fewer than k + 1 points.
inline double lof_score(std::span<const double> point, std::span<const FeatureVector> window,
                        const LofParams& params) {
  params.validate();
  detail::check_finite(point);
  for (const auto& w : window) {
    if (w.size() != point.size())
      throw Error(ErrorKind::schema_mismatch,
                  "window vector has dimension " + std::to_string(w.size()) + ", expected " +
                      std::to_string(point.size()));
    detail::check_finite(w);
  }
  if (window.size() < params.k + 1) return 1.0;

  const double score = detail::LofQuery(point, window, params).score();
  if (!std::isfinite(score))
    throw Error(ErrorKind::invalid_input, "LOF overflowed for the given magnitudes");
  return score;
}

}  // namespace pmaint
