#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "pmaint/classifier.hpp"
#include "pmaint/edge_gateway.hpp"
#include "pmaint/error.hpp"
#include "pmaint/event_store.hpp"
#include "pmaint/lof.hpp"
#include "pmaint/message_bus.hpp"
#include "pmaint/random.hpp"
#include "pmaint/telemetry.hpp"

namespace pmaint {

struct SensorWeight {
  std::string sensor_id;
  double weight = 1.0;

  bool operator==(const SensorWeight&) const = default;
};

using PartSensorMap = std::map<std::string, std::vector<SensorWeight>>;

/// Part with the largest weighted deviation; ties go to the smallest part_id.
inline std::string localize_part(const std::map<std::string, double>& deviations,
                                 const PartSensorMap& map) {
  if (map.empty()) throw Error(ErrorKind::catalog, "part-sensor map is empty");
  for (const auto& [id, dev] : deviations)
    if (!(dev >= 0.0)) throw Error(ErrorKind::invalid_input, "negative deviation for " + id);
  const std::string* best = nullptr;
  double best_sum = 0.0;
  for (const auto& [part, sensors] : map) {
    double sum = 0.0;
    for (const auto& sw : sensors)
      if (auto it = deviations.find(sw.sensor_id); it != deviations.end()) sum += sw.weight * it->second;
    if (best == nullptr || sum > best_sum) {
      best = &part;
      best_sum = sum;
    }
  }
  return *best;
}

struct DiagnosedAnomaly {
  AnomalyReport report;
  double refined_score = 0.0;
  std::string suspect_part_id;
  std::optional<std::string> severity_label;
  SimMs diagnosed_ts = 0;
};

inline ojson diagnosis_to_json(const DiagnosedAnomaly& d) {
  return {{"report_id", d.report.report_id},
          {"vehicle_id", d.report.vehicle_id},
          {"episode_id", d.report.episode_id},
          {"window", {{"first_ts", d.report.first_ts}, {"last_ts", d.report.last_ts}}},
          {"edge_score", d.report.score},
          {"edge_label", d.report.label ? ojson(*d.report.label) : ojson()},
          {"model_version", d.report.model_version},
          {"refined_score", d.refined_score},
          {"suspect_part_id", d.suspect_part_id},
          {"severity_label", d.severity_label ? ojson(*d.severity_label) : ojson()},
          {"diagnosed_ts", d.diagnosed_ts}};
}

/// Cloud-side re-scoring of a report: LOF of the gated frame against the fleet
/// reference set, part localization and classification with the cloud model.
inline DiagnosedAnomaly deep_analyze(const AnomalyReport& report, std::span<const FeatureVector> reference,
                                     const PartSensorMap& map, const ModelSnapshot& cloud_model, SimMs now) {
  if (report.raw_frames.empty()) throw Error(ErrorKind::validation, "report carries no frames");
  std::set<std::string> mapped;
  for (const auto& [part, sensors] : map)
    for (const auto& sw : sensors) mapped.insert(sw.sensor_id);
  for (const auto& [id, dev] : report.feature_deviations)
    if (!mapped.contains(id)) throw Error(ErrorKind::catalog, "sensor " + id + " maps to no part");

  const FeatureVector point = standardize(report.gated_frame(), cloud_model.scaling);
  DiagnosedAnomaly d;
  d.report = report;
  d.refined_score = lof_score(point, reference, cloud_model.lof);
  d.suspect_part_id = localize_part(report.feature_deviations, map);
  if (auto labeled = classify(point, cloud_model.classifier, cloud_model.confidence_margin))
    d.severity_label = labeled->label;
  d.diagnosed_ts = now;
  return d;
}

struct JudgeRecord {
  std::string report_id;
  std::optional<std::string> predicted_label;
  std::optional<std::string> true_label;
  double refined_score = 0.0;
  SimMs ts = 0;
};

inline ojson judge_to_json(const JudgeRecord& j) {
  return {{"report_id", j.report_id},
          {"predicted_label", j.predicted_label ? ojson(*j.predicted_label) : ojson()},
          {"true_label", j.true_label ? ojson(*j.true_label) : ojson()},
          {"refined_score", j.refined_score},
          {"ts", j.ts}};
}

/// Raw frames kept by the cloud: historical normal data plus every report's frames.
struct RawStore {
  std::vector<TelemetryFrame> normal;
  std::map<std::string, std::vector<TelemetryFrame>> by_report;

  void add_normal(TelemetryFrame f) { normal.push_back(std::move(f)); }
  void add_report(const AnomalyReport& r) { by_report[r.report_id] = r.raw_frames; }

  const TelemetryFrame* gated_frame(const std::string& report_id) const {
    const auto it = by_report.find(report_id);
    if (it == by_report.end() || it->second.empty()) return nullptr;
    return &it->second.back();
  }
};

/// Population mean/stddev per sensor over the given frames.
inline Scaling fit_scaling(std::span<const TelemetryFrame> frames) {
  std::map<std::string, std::pair<double, std::size_t>> sums;
  for (const auto& f : frames)
    for (const auto& [id, v] : f.readings) {
      sums[id].first += v;
      sums[id].second += 1;
    }
  Scaling out;
  for (const auto& [id, s] : sums) out[id].mean = s.first / static_cast<double>(s.second);
  std::map<std::string, double> sq;
  for (const auto& f : frames)
    for (const auto& [id, v] : f.readings) {
      const double d = v - out[id].mean;
      sq[id] += d * d;
    }
  for (auto& [id, sc] : out) sc.stddev = std::sqrt(sq[id] / static_cast<double>(sums[id].second));
  return out;
}

struct LabeledPoint {
  std::string report_id;
  TelemetryFrame frame;
  std::string label;
};

/// Labeled points in judge-record order; records without a true label or raw frame are skipped.
inline std::vector<LabeledPoint> labeled_points(std::span<const JudgeRecord> history, const RawStore& raw) {
  std::vector<LabeledPoint> out;
  for (const auto& rec : history) {
    if (!rec.true_label) continue;
    if (const auto* f = raw.gated_frame(rec.report_id)) out.push_back({rec.report_id, *f, *rec.true_label});
  }
  return out;
}

/// Holdout = the last 20% of the labeled points (at least one).
inline std::size_t holdout_size(std::size_t labeled) { return labeled - (labeled * 4) / 5; }

inline double holdout_accuracy(const ModelSnapshot& model, std::span<const LabeledPoint> holdout) {
  if (holdout.empty()) return 0.0;
  std::size_t hits = 0;
  for (const auto& lp : holdout) {
    const auto got = classify(standardize(lp.frame, model.scaling), model.classifier, model.confidence_margin);
    if (got && got->label == lp.label) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(holdout.size());
}

struct ModelRelease {
  ModelSnapshot snapshot;
  double candidate_accuracy = 0.0;
  double incumbent_accuracy = 0.0;
  std::vector<std::string> holdout_report_ids;
};

/// Retrains on the labeled history and returns a release only when the candidate
/// beats the incumbent on the holdout split. Ties keep the incumbent.
inline std::optional<ModelRelease> update_model(std::span<const JudgeRecord> history, const RawStore& raw,
                                                const ModelSnapshot& current, std::size_t passes = 10) {
  const auto points = labeled_points(history, raw);
  if (points.empty()) return std::nullopt;

  ModelSnapshot candidate = current;
  candidate.version = current.version + 1;
  if (!raw.normal.empty()) {
    Scaling fitted = fit_scaling(raw.normal);
    for (auto& [id, sc] : candidate.scaling)
      if (auto it = fitted.find(id); it != fitted.end()) sc = it->second;
  }

  const std::size_t n_hold = holdout_size(points.size());
  const std::span<const LabeledPoint> all(points);
  const auto train = all.first(points.size() - n_hold);
  const auto hold = all.last(n_hold);

  std::vector<TrainingExample> examples;
  examples.reserve(train.size());
  for (const auto& lp : train) examples.push_back({standardize(lp.frame, candidate.scaling), lp.label});
  candidate.classifier = train_averaged_perceptron(examples, candidate.scaling.size(), passes);

  ModelRelease release;
  release.candidate_accuracy = holdout_accuracy(candidate, hold);
  release.incumbent_accuracy = holdout_accuracy(current, hold);
  if (!(release.candidate_accuracy > release.incumbent_accuracy)) return std::nullopt;
  for (const auto& lp : hold) release.holdout_report_ids.push_back(lp.report_id);
  release.snapshot = std::move(candidate);
  return release;
}

inline std::size_t distribute_model(const ModelSnapshot& snapshot, Broker& bus, SimMs now) {
  return bus.publish(Envelope{"model/v" + std::to_string(snapshot.version), std::string(kModelTopic), now,
                              std::string(kModelSchema), snapshot_to_json(snapshot).dump(), 1},
                     "cloud");
}

struct CloudConfig {
  std::size_t reference_capacity = 4096;
  std::size_t update_every = 100;  // new judge records between update attempts
  std::size_t perceptron_passes = 10;
  std::string update_trigger = "platform_operator";  // or "customer"
};

/// The cloud analyzer: reference reservoir, raw store, judge history and the model
/// release cycle. Writes its events to the shared store.
class CloudAnalyzer {
 public:
  CloudAnalyzer(ModelSnapshot initial, PartSensorMap map, CloudConfig config, std::uint64_t seed,
                EventStore& store)
      : model_(std::move(initial)), map_(std::move(map)), config_(std::move(config)), rng_(seed), store_(store) {
    model_.validate();
  }

  const ModelSnapshot& model() const { return model_; }
  const RawStore& raw_store() const { return raw_; }
  const std::vector<JudgeRecord>& judge_records() const { return judge_; }
  const std::vector<ModelRelease>& releases() const { return releases_; }
  const std::vector<FeatureVector>& reference() const { return reference_; }

  /// Reservoir-samples a normal frame into the fleet reference set.
  void add_reference(const TelemetryFrame& frame) {
    raw_.add_normal(frame);
    ++reference_seen_;
    if (reference_raw_.size() < config_.reference_capacity) {
      reference_raw_.push_back(frame);
      reference_.push_back(standardize(frame, model_.scaling));
      return;
    }
    const auto j = static_cast<std::size_t>(rng_.uniform_int(0, static_cast<std::int64_t>(reference_seen_) - 1));
    if (j < config_.reference_capacity) {
      reference_raw_[j] = frame;
      reference_[j] = standardize(frame, model_.scaling);
    }
  }

  DiagnosedAnomaly analyze(const AnomalyReport& report, SimMs now) {
    raw_.add_report(report);
    auto d = deep_analyze(report, reference_, map_, model_, now);
    diagnoses_[report.report_id] = d;
    store_.append(now, "anomaly.diagnosed", diagnosis_to_json(d));
    return d;
  }

  /// Closes the loop for one report once its true label is known (operator input or
  /// ground truth).
  void record_judgement(const std::string& report_id, std::optional<std::string> true_label, SimMs now) {
    const auto it = diagnoses_.find(report_id);
    if (it == diagnoses_.end()) throw Error(ErrorKind::validation, "no diagnosis for report " + report_id);
    JudgeRecord rec{report_id, it->second.severity_label, std::move(true_label), it->second.refined_score, now};
    store_.append(now, "judge.recorded", judge_to_json(rec));
    judge_.push_back(std::move(rec));
    ++since_update_;
  }

  void add_judge_record(JudgeRecord rec, const std::vector<TelemetryFrame>& frames) {
    raw_.by_report[rec.report_id] = frames;
    store_.append(rec.ts, "judge.recorded", judge_to_json(rec));
    judge_.push_back(std::move(rec));
    ++since_update_;
  }

  bool update_due() const { return config_.update_every > 0 && since_update_ >= config_.update_every; }

  /// Runs update_model when the cadence is due; a release replaces the cloud model.
  std::optional<ModelRelease> maybe_update(SimMs now) {
    if (!update_due()) return std::nullopt;
    since_update_ = 0;
    auto release = update_model(judge_, raw_, model_, config_.perceptron_passes);
    store_.append(now, "model.evaluated",
                  {{"current_version", model_.version}, {"released", release.has_value()},
                   {"candidate_accuracy", release ? ojson(release->candidate_accuracy) : ojson()},
                   {"judge_records", judge_.size()}});
    if (!release) return std::nullopt;
    model_ = release->snapshot;
    for (std::size_t i = 0; i < reference_raw_.size(); ++i)
      reference_[i] = standardize(reference_raw_[i], model_.scaling);
    store_.append(now, "model.released",
                  {{"version", model_.version},
                   {"candidate_accuracy", release->candidate_accuracy},
                   {"incumbent_accuracy", release->incumbent_accuracy},
                   {"holdout", release->holdout_report_ids},
                   {"trigger", config_.update_trigger}});
    releases_.push_back(*release);
    return release;
  }

 private:
  ModelSnapshot model_;
  PartSensorMap map_;
  CloudConfig config_;
  Rng rng_;
  EventStore& store_;
  RawStore raw_;
  std::vector<TelemetryFrame> reference_raw_;
  std::vector<FeatureVector> reference_;
  std::uint64_t reference_seen_ = 0;
  std::map<std::string, DiagnosedAnomaly> diagnoses_;
  std::vector<JudgeRecord> judge_;
  std::vector<ModelRelease> releases_;
  std::size_t since_update_ = 0;
};

}  // namespace pmaint
