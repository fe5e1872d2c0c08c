#pragma once

#include <cmath>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "pmaint/error.hpp"
#include "pmaint/telemetry.hpp"

namespace pmaint {

struct LabelWeights {
  std::vector<double> weights;
  double bias = 0.0;

  bool operator==(const LabelWeights&) const = default;
};

struct Labeled {
  std::string label;
  double confidence = 0.0;

  bool operator==(const Labeled&) const = default;
};

/// Multiclass linear scorer. Labels are kept sorted so iteration order doubles as
/// the lexicographic tie-break.
struct LinearClassifier {
  std::map<std::string, LabelWeights> labels;

  bool empty() const { return labels.empty(); }

  std::optional<std::size_t> dimension() const {
    if (labels.empty()) return std::nullopt;
    return labels.begin()->second.weights.size();
  }

  void validate() const {
    const auto dim = dimension();
    for (const auto& [label, lw] : labels) {
      if (label.empty()) throw Error(ErrorKind::validation, "classifier label is empty");
      if (lw.weights.size() != *dim)
        throw Error(ErrorKind::validation, "classifier weight vectors differ in dimension");
      for (double w : lw.weights)
        if (!std::isfinite(w)) throw Error(ErrorKind::validation, "non-finite classifier weight");
      if (!std::isfinite(lw.bias)) throw Error(ErrorKind::validation, "non-finite classifier bias");
    }
  }

  double score(const LabelWeights& lw, std::span<const double> x) const {
    double s = lw.bias;
    for (std::size_t i = 0; i < x.size(); ++i) s += lw.weights[i] * x[i];
    return s;
  }

  /// Highest-scoring label (smallest label on ties) and its margin over the runner-up.
  /// With a single label the margin is measured against an implicit zero score.
  std::optional<Labeled> argmax(std::span<const double> x) const {
    if (labels.empty()) return std::nullopt;
    if (x.size() != *dimension())
      throw Error(ErrorKind::schema_mismatch,
                  "feature dimension " + std::to_string(x.size()) + " != classifier dimension " +
                      std::to_string(*dimension()));
    const std::string* best = nullptr;
    double top = 0.0;
    double second = 0.0;
    bool have_second = false;
    for (const auto& [label, lw] : labels) {
      const double s = score(lw, x);
      if (best == nullptr) {
        best = &label;
        top = s;
      } else if (s > top) {
        second = top;
        have_second = true;
        best = &label;
        top = s;
      } else if (!have_second || s > second) {
        second = s;
        have_second = true;
      }
    }
    return Labeled{*best, top - (have_second ? second : 0.0)};
  }

  bool operator==(const LinearClassifier&) const = default;
};

/// Margin-abstaining classification; nullopt means Unlabeled.
inline std::optional<Labeled> classify(std::span<const double> features,
                                       const LinearClassifier& classifier,
                                       double confidence_margin) {
  auto best = classifier.argmax(features);
  if (!best || best->confidence < confidence_margin) return std::nullopt;
  return best;
}

struct TrainingExample {
  FeatureVector features;
  std::string label;
};

/// Multiclass averaged perceptron, examples visited in the given order for `passes`
/// epochs. Every label seen in the data gets a weight vector.
inline LinearClassifier train_averaged_perceptron(std::span<const TrainingExample> examples,
                                                  std::size_t dimension, std::size_t passes = 10) {
  LinearClassifier live;
  for (const auto& ex : examples) {
    if (ex.features.size() != dimension)
      throw Error(ErrorKind::schema_mismatch, "training example has the wrong dimension");
    live.labels.try_emplace(ex.label, LabelWeights{std::vector<double>(dimension, 0.0), 0.0});
  }
  LinearClassifier total = live;
  std::size_t steps = 0;
  for (std::size_t pass = 0; pass < passes; ++pass) {
    for (const auto& ex : examples) {
      const auto predicted = live.argmax(ex.features);
      if (predicted->label != ex.label) {
        auto& good = live.labels.at(ex.label);
        auto& bad = live.labels.at(predicted->label);
        for (std::size_t i = 0; i < dimension; ++i) {
          good.weights[i] += ex.features[i];
          bad.weights[i] -= ex.features[i];
        }
        good.bias += 1.0;
        bad.bias -= 1.0;
      }
      for (auto& [label, acc] : total.labels) {
        const auto& cur = live.labels.at(label);
        for (std::size_t i = 0; i < dimension; ++i) acc.weights[i] += cur.weights[i];
        acc.bias += cur.bias;
      }
      ++steps;
    }
  }
  if (steps == 0) return live;
  for (auto& [label, acc] : total.labels) {
    for (double& w : acc.weights) w /= static_cast<double>(steps);
    acc.bias /= static_cast<double>(steps);
  }
  return total;
}

}  // namespace pmaint
