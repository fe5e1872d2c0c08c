#pragma once

// Test-only reference implementations, naive on purpose.

#include <algorithm>
#include <cmath>
#include <map>
#include <string>
#include <vector>

namespace oracle {

using Point = std::vector<double>;

inline double dist(const Point& a, const Point& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(s);
}

/// Batch LOF over the whole data set (full distance matrix), returning the LOF of
/// every point. Neighborhoods include all ties at the k-distance.
inline std::vector<double> batch_lof(const std::vector<Point>& data, std::size_t k, double floor) {
  const std::size_t n = data.size();
  std::vector<std::vector<double>> d(n, std::vector<double>(n, 0.0));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) d[i][j] = dist(data[i], data[j]);

  std::vector<double> kdist(n);
  std::vector<std::vector<std::size_t>> hood(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> others;
    for (std::size_t j = 0; j < n; ++j)
      if (j != i) others.push_back(d[i][j]);
    std::sort(others.begin(), others.end());
    kdist[i] = others[k - 1];
    for (std::size_t j = 0; j < n; ++j)
      if (j != i && d[i][j] <= kdist[i]) hood[i].push_back(j);
  }
  std::vector<double> lrd(n);
  for (std::size_t i = 0; i < n; ++i) {
    double total = 0.0;
    for (std::size_t o : hood[i]) total += std::max(std::max(kdist[o], d[i][o]), floor);
    lrd[i] = 1.0 / (total / static_cast<double>(hood[i].size()));
  }
  std::vector<double> lof(n);
  for (std::size_t i = 0; i < n; ++i) {
    double total = 0.0;
    for (std::size_t o : hood[i]) total += lrd[o];
    lof[i] = (total / static_cast<double>(hood[i].size())) / lrd[i];
  }
  return lof;
}

/// LOF of `point` in window + {point}, via the batch routine.
inline double query_lof(const std::vector<Point>& window, const Point& point, std::size_t k, double floor) {
  std::vector<Point> data = window;
  data.push_back(point);
  return batch_lof(data, k, floor).back();
}

struct Example {
  Point x;
  std::string label;
};

struct Linear {
  std::map<std::string, std::pair<Point, double>> w;

  std::string predict(const Point& x) const {
    std::string best;
    double top = 0.0;
    bool first = true;
    for (const auto& [label, wb] : w) {
      double s = wb.second;
      for (std::size_t i = 0; i < x.size(); ++i) s += wb.first[i] * x[i];
      if (first || s > top) {
        best = label;
        top = s;
        first = false;
      }
    }
    return best;
  }
};

/// Multiclass averaged perceptron, written as "keep every intermediate model and
/// average them at the end".
inline Linear batch_perceptron(const std::vector<Example>& data, std::size_t dim, std::size_t passes) {
  Linear cur;
  for (const auto& e : data) cur.w.emplace(e.label, std::make_pair(Point(dim, 0.0), 0.0));
  std::vector<Linear> history;
  for (std::size_t p = 0; p < passes; ++p)
    for (const auto& e : data) {
      const auto guess = cur.predict(e.x);
      if (guess != e.label) {
        for (std::size_t i = 0; i < dim; ++i) {
          cur.w[e.label].first[i] += e.x[i];
          cur.w[guess].first[i] -= e.x[i];
        }
        cur.w[e.label].second += 1.0;
        cur.w[guess].second -= 1.0;
      }
      history.push_back(cur);
    }
  Linear avg;
  for (const auto& [label, wb] : cur.w) avg.w[label] = {Point(dim, 0.0), 0.0};
  for (const auto& h : history)
    for (const auto& [label, wb] : h.w) {
      for (std::size_t i = 0; i < dim; ++i) avg.w[label].first[i] += wb.first[i] / static_cast<double>(history.size());
      avg.w[label].second += wb.second / static_cast<double>(history.size());
    }
  return avg;
}

}  // namespace oracle
