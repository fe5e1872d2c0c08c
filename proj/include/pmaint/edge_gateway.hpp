#pragma once

#include <cstdint>
#include <deque>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "pmaint/classifier.hpp"
#include "pmaint/error.hpp"
#include "pmaint/lof.hpp"
#include "pmaint/message_bus.hpp"
#include "pmaint/telemetry.hpp"

namespace pmaint {

inline constexpr std::string_view kModelTopic = "fleet/model";
inline constexpr std::string_view kReportSchema = "anomaly_report/1";
inline constexpr std::string_view kModelSchema = "model_snapshot/1";

inline std::string anomaly_topic(std::string_view vehicle_id) {
  return "fleet/" + std::string(vehicle_id) + "/anomaly";
}

struct ModelSnapshot {
  std::uint64_t version = 1;
  Scaling scaling;
  LinearClassifier classifier;
  LofParams lof;
  double alert_threshold = 2.0;
  double confidence_margin = 0.0;

  void validate() const {
    if (version < 1) throw Error(ErrorKind::validation, "model version must be >= 1");
    lof.validate();
    classifier.validate();
    if (!std::isfinite(alert_threshold))
      throw Error(ErrorKind::validation, "alert_threshold must be finite");
    if (!(confidence_margin >= 0.0) || !std::isfinite(confidence_margin))
      throw Error(ErrorKind::validation, "confidence_margin must be finite and >= 0");
    for (const auto& [id, sc] : scaling)
      if (!std::isfinite(sc.mean) || !(sc.stddev >= 0.0) || !std::isfinite(sc.stddev))
        throw Error(ErrorKind::validation, "bad scaling entry for " + id);
    if (const auto dim = classifier.dimension(); dim && *dim != scaling.size())
      throw Error(ErrorKind::validation, "classifier dimension does not match scaling");
  }

  bool operator==(const ModelSnapshot&) const = default;
};

inline nlohmann::ordered_json classifier_to_json(const LinearClassifier& c) {
  auto out = nlohmann::ordered_json::object();
  for (const auto& [label, lw] : c.labels) out[label] = {{"weights", lw.weights}, {"bias", lw.bias}};
  return out;
}

inline LinearClassifier classifier_from_json(const nlohmann::ordered_json& j) {
  LinearClassifier c;
  for (const auto& [label, lw] : j.items())
    c.labels[label] = {lw.at("weights").get<std::vector<double>>(), lw.at("bias").get<double>()};
  return c;
}

inline nlohmann::ordered_json scaling_to_json(const Scaling& s) {
  auto out = nlohmann::ordered_json::object();
  for (const auto& [id, sc] : s) out[id] = {{"mean", sc.mean}, {"stddev", sc.stddev}};
  return out;
}

inline Scaling scaling_from_json(const nlohmann::ordered_json& j) {
  Scaling s;
  for (const auto& [id, sc] : j.items()) s[id] = {sc.at("mean").get<double>(), sc.at("stddev").get<double>()};
  return s;
}

inline nlohmann::ordered_json snapshot_to_json(const ModelSnapshot& m) {
  return {{"version", m.version},
          {"scaling", scaling_to_json(m.scaling)},
          {"classifier", classifier_to_json(m.classifier)},
          {"lof", {{"k", m.lof.k}, {"window_size", m.lof.window_size}, {"reach_floor", m.lof.reach_floor}}},
          {"alert_threshold", m.alert_threshold},
          {"confidence_margin", m.confidence_margin}};
}

inline ModelSnapshot snapshot_from_json(const nlohmann::ordered_json& j) {
  try {
    ModelSnapshot m;
    m.version = j.at("version").get<std::uint64_t>();
    m.scaling = scaling_from_json(j.at("scaling"));
    m.classifier = classifier_from_json(j.at("classifier"));
    const auto& lof = j.at("lof");
    m.lof = {lof.at("k").get<std::size_t>(), lof.at("window_size").get<std::size_t>(),
             lof.at("reach_floor").get<double>()};
    m.alert_threshold = j.at("alert_threshold").get<double>();
    m.confidence_margin = j.at("confidence_margin").get<double>();
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::validation, std::string("malformed model snapshot: ") + e.what());
  }
}

struct AnomalyReport {
  std::string report_id;
  std::string vehicle_id;
  std::string episode_id;
  SimMs first_ts = 0;
  SimMs last_ts = 0;
  double score = 0.0;
  std::optional<std::string> label;
  std::optional<double> confidence;
  std::map<std::string, double> feature_deviations;
  std::uint64_t model_version = 0;
  std::vector<TelemetryFrame> raw_frames;  // context frames, gated frame last

  const TelemetryFrame& gated_frame() const { return raw_frames.back(); }

  bool operator==(const AnomalyReport&) const = default;
};

/// Field order is part of the log format.
inline nlohmann::ordered_json report_to_json(const AnomalyReport& r) {
  nlohmann::ordered_json frames = nlohmann::ordered_json::array();
  for (const auto& f : r.raw_frames) frames.push_back(frame_to_json(f));
  nlohmann::ordered_json dev = nlohmann::ordered_json::object();
  for (const auto& [id, v] : r.feature_deviations) dev[id] = v;
  return {{"report_id", r.report_id},
          {"vehicle_id", r.vehicle_id},
          {"episode_id", r.episode_id},
          {"window", {{"first_ts", r.first_ts}, {"last_ts", r.last_ts}}},
          {"score", r.score},
          {"label", r.label ? nlohmann::ordered_json(*r.label) : nlohmann::ordered_json()},
          {"confidence", r.confidence ? nlohmann::ordered_json(*r.confidence) : nlohmann::ordered_json()},
          {"feature_deviations", dev},
          {"model_version", r.model_version},
          {"raw_frames", frames}};
}

inline AnomalyReport report_from_json(const nlohmann::ordered_json& j) {
  AnomalyReport r;
  r.report_id = j.at("report_id").get<std::string>();
  r.vehicle_id = j.at("vehicle_id").get<std::string>();
  r.episode_id = j.at("episode_id").get<std::string>();
  r.first_ts = j.at("window").at("first_ts").get<SimMs>();
  r.last_ts = j.at("window").at("last_ts").get<SimMs>();
  r.score = j.at("score").get<double>();
  if (!j.at("label").is_null()) r.label = j.at("label").get<std::string>();
  if (!j.at("confidence").is_null()) r.confidence = j.at("confidence").get<double>();
  for (const auto& [id, v] : j.at("feature_deviations").items()) r.feature_deviations[id] = v.get<double>();
  r.model_version = j.at("model_version").get<std::uint64_t>();
  for (const auto& f : j.at("raw_frames")) r.raw_frames.push_back(frame_from_json(f));
  if (r.raw_frames.empty()) throw Error(ErrorKind::validation, "report carries no frames");
  return r;
}

// Gate -----------------------------------------------------------------------

struct GateState {
  SimMs cooldown_until = std::numeric_limits<SimMs>::min();
  std::optional<std::string> open_episode_id;
  std::uint64_t episodes_opened = 0;

  bool operator==(const GateState&) const = default;
};

enum class GateAction { pass, emit, suppress };

struct GateDecision {
  GateAction action = GateAction::pass;
  std::optional<std::string> episode_id;
};

/// Threshold-plus-cooldown gate. Episode ids are `<prefix>/ep<n>`, n counting from 1.
inline std::pair<GateDecision, GateState> gate(double score, SimMs report_ts, double alert_threshold,
                                               SimMs cooldown_ms, GateState state,
                                               std::string_view episode_prefix) {
  if (!(score > alert_threshold)) {
    if (report_ts >= state.cooldown_until) state.open_episode_id.reset();
    return {{GateAction::pass, std::nullopt}, std::move(state)};
  }
  if (report_ts >= state.cooldown_until) {
    state.episodes_opened += 1;
    state.open_episode_id =
        std::string(episode_prefix) + "/ep" + std::to_string(state.episodes_opened);
    state.cooldown_until = std::max(state.cooldown_until, report_ts + cooldown_ms);
    return {{GateAction::emit, state.open_episode_id}, std::move(state)};
  }
  return {{GateAction::suppress, state.open_episode_id}, std::move(state)};
}

// Gateway --------------------------------------------------------------------

struct GatewayConfig {
  SimMs cooldown_ms = 60'000;
  std::size_t context_frames = 4;  // frames preceding the gated one attached to a report
};

struct IngestResult {
  double score = 1.0;
  GateDecision decision;
  std::vector<Envelope> envelopes;
  std::vector<AnomalyReport> reports;
};

/// One vehicle's edge node. Single-threaded; talks to the rest of the system only
/// through the envelopes it returns and the snapshots it is handed.
class EdgeGateway {
 public:
  EdgeGateway(std::string vehicle_id, ModelSnapshot initial, GatewayConfig config = {})
      : vehicle_id_(std::move(vehicle_id)), model_(std::move(initial)), config_(config) {
    model_.validate();
  }

  const std::string& vehicle_id() const { return vehicle_id_; }
  const ModelSnapshot& model() const { return model_; }
  std::uint64_t model_version() const { return model_.version; }
  const GateState& gate_state() const { return gate_; }
  std::size_t window_size() const { return window_.size(); }

  const std::map<std::string, std::vector<TelemetryFrame>>& episode_buffers() const {
    return episode_frames_;
  }

  IngestResult ingest(const TelemetryFrame& frame) {
    if (frame.vehicle_id != vehicle_id_)
      throw Error(ErrorKind::validation, "frame for " + frame.vehicle_id + " sent to gateway " + vehicle_id_);
    if (!raw_.empty() && frame.timestamp <= raw_.back().timestamp)
      throw Error(ErrorKind::invalid_input, "frame timestamps must strictly increase");

    const FeatureVector features = standardize(frame, model_.scaling);
    if (restandardize_) {
      window_.clear();
      for (const auto& f : raw_) window_.push_back(standardize(f, model_.scaling));
      restandardize_ = false;
    }

    IngestResult result;
    result.score = lof_score(features, window_, model_.lof);
    auto [decision, next] = gate(result.score, frame.timestamp, model_.alert_threshold,
                                 config_.cooldown_ms, gate_, vehicle_id_);
    gate_ = std::move(next);
    result.decision = decision;

    if (decision.action == GateAction::emit) {
      AnomalyReport report = build_report(frame, features, result.score, *decision.episode_id);
      result.envelopes.push_back(Envelope{report.report_id, anomaly_topic(vehicle_id_), frame.timestamp,
                                          std::string(kReportSchema), report_to_json(report).dump(), 1});
      result.reports.push_back(std::move(report));
    } else if (decision.action == GateAction::suppress) {
      episode_frames_[*decision.episode_id].push_back(frame);
    }

    raw_.push_back(frame);
    window_.push_back(features);
    trim();
    return result;
  }

  /// Applies `snapshot` iff it is newer than the current model. Throws (without
  /// changing state) when the snapshot is malformed.
  bool apply_model(const ModelSnapshot& snapshot) {
    snapshot.validate();
    if (snapshot.version <= model_.version) return false;
    model_ = snapshot;
    restandardize_ = true;
    trim();
    return true;
  }

 private:
  AnomalyReport build_report(const TelemetryFrame& frame, const FeatureVector& features, double score,
                             const std::string& episode_id) {
    AnomalyReport r;
    r.report_id = vehicle_id_ + "/r" + std::to_string(++reports_emitted_);
    r.vehicle_id = vehicle_id_;
    r.episode_id = episode_id;
    r.score = score;
    if (auto labeled = classify(features, model_.classifier, model_.confidence_margin)) {
      r.label = labeled->label;
      r.confidence = labeled->confidence;
    }
    std::size_t i = 0;
    for (const auto& [id, value] : frame.readings) r.feature_deviations[id] = std::abs(features[i++]);
    r.model_version = model_.version;
    const std::size_t ctx = std::min(config_.context_frames, raw_.size());
    r.raw_frames.assign(raw_.end() - static_cast<std::ptrdiff_t>(ctx), raw_.end());
    r.raw_frames.push_back(frame);
    r.first_ts = r.raw_frames.front().timestamp;
    r.last_ts = frame.timestamp;
    return r;
  }

  void trim() {
    while (raw_.size() > model_.lof.window_size) {
      raw_.pop_front();
      if (!window_.empty()) window_.erase(window_.begin());
    }
  }

  std::string vehicle_id_;
  ModelSnapshot model_;
  GatewayConfig config_;
  GateState gate_;
  std::deque<TelemetryFrame> raw_;
  std::vector<FeatureVector> window_;
  bool restandardize_ = false;
  std::uint64_t reports_emitted_ = 0;
  std::map<std::string, std::vector<TelemetryFrame>> episode_frames_;
};

}  // namespace pmaint
