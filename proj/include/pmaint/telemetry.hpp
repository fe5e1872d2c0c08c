#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <set>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "pmaint/error.hpp"
#include "pmaint/random.hpp"

namespace pmaint {

/// Simulated time, integer milliseconds from epoch 0.
using SimMs = std::int64_t;

using FeatureVector = std::vector<double>;

struct SensorSpec {
  std::string sensor_id;
  std::string unit;
  double baseline_mean = 0.0;
  double baseline_stddev = 0.0;
};

struct Route {
  std::string origin;
  std::string destination;
  SimMs departure_ts = 0;
  SimMs arrival_ts = 0;
};

struct VehicleProfile {
  std::string vehicle_id;
  std::vector<SensorSpec> sensors;
  Route route;
  SimMs sample_period = 1000;

  void validate() const {
    if (vehicle_id.empty()) throw Error(ErrorKind::validation, "vehicle_id is empty");
    if (sensors.empty())
      throw Error(ErrorKind::validation, "vehicle " + vehicle_id + " has no sensors");
    if (sample_period <= 0)
      throw Error(ErrorKind::validation, "vehicle " + vehicle_id + " sample_period must be > 0");
    if (route.departure_ts >= route.arrival_ts)
      throw Error(ErrorKind::validation,
                  "vehicle " + vehicle_id + " departure_ts must precede arrival_ts");
    std::set<std::string> ids;
    for (const auto& s : sensors) {
      if (s.sensor_id.empty())
        throw Error(ErrorKind::validation, "vehicle " + vehicle_id + " has an empty sensor_id");
      if (!ids.insert(s.sensor_id).second)
        throw Error(ErrorKind::validation,
                    "vehicle " + vehicle_id + " duplicates sensor_id " + s.sensor_id);
      if (!(s.baseline_stddev >= 0.0) || !std::isfinite(s.baseline_stddev) ||
          !std::isfinite(s.baseline_mean))
        throw Error(ErrorKind::validation,
                    "sensor " + s.sensor_id + " needs finite mean and stddev >= 0");
    }
  }

  /// Sensor ids in the canonical (sorted) order used for readings and features.
  std::vector<std::string> sensor_ids() const {
    std::set<std::string> ids;
    for (const auto& s : sensors) ids.insert(s.sensor_id);
    return {ids.begin(), ids.end()};
  }

  std::vector<SimMs> sample_times() const {
    std::vector<SimMs> out;
    for (SimMs t = route.departure_ts; t <= route.arrival_ts; t += sample_period) out.push_back(t);
    return out;
  }
};

struct TelemetryFrame {
  std::string vehicle_id;
  SimMs timestamp = 0;
  std::map<std::string, double> readings;

  bool operator==(const TelemetryFrame&) const = default;
};

struct Drift {
  double rate_per_ms = 0.0;
};

struct Spike {
  double magnitude = 0.0;
  std::int64_t every_n = 1;  // fires on the first post-onset sample and every n-th after
};

struct VarianceInflation {
  double factor = 1.0;
};

using SignaturePattern = std::variant<Drift, Spike, VarianceInflation>;

struct FailureSignature {
  std::string signature_id;
  std::string vehicle_id;
  std::vector<std::string> affected_sensors;
  SimMs onset_ts = 0;
  SignaturePattern pattern;
  std::string true_part_id;
  std::string true_label;

  void validate(const VehicleProfile& profile) const {
    if (affected_sensors.empty())
      throw Error(ErrorKind::validation, "signature " + signature_id + " affects no sensors");
    if (onset_ts < profile.route.departure_ts || onset_ts > profile.route.arrival_ts)
      throw Error(ErrorKind::validation,
                  "signature " + signature_id + " onset outside the route interval");
    const bool finite = std::visit(
        [](const auto& p) {
          using P = std::decay_t<decltype(p)>;
          if constexpr (std::is_same_v<P, Drift>) return std::isfinite(p.rate_per_ms);
          else if constexpr (std::is_same_v<P, Spike>) return std::isfinite(p.magnitude) && p.every_n >= 1;
          else return std::isfinite(p.factor);
        },
        pattern);
    if (!finite)
      throw Error(ErrorKind::validation, "signature " + signature_id + " has a non-finite pattern");
  }
};

/// Produces one frame at time `t`. Consumes exactly one Gaussian draw per sensor (in
/// sensor_id order) regardless of which signatures are active, so the stream before a
/// signature's onset is identical to the signature-free stream.
inline TelemetryFrame generate_frame(const VehicleProfile& profile, SimMs t, Rng& gen_state,
                                     std::span<const FailureSignature> active_signatures = {}) {
  const auto& route = profile.route;
  if (t < route.departure_ts || t > route.arrival_ts)
    throw Error(ErrorKind::out_of_route,
                "t=" + std::to_string(t) + " outside route of " + profile.vehicle_id);
  if ((t - route.departure_ts) % profile.sample_period != 0)
    throw Error(ErrorKind::invalid_input, "t=" + std::to_string(t) + " is off the sample grid");

  std::map<std::string, const SensorSpec*> by_id;
  for (const auto& s : profile.sensors) by_id.emplace(s.sensor_id, &s);

  TelemetryFrame frame{profile.vehicle_id, t, {}};
  for (const auto& [id, spec] : by_id) {
    const double noise = gen_state.gaussian();
    double inflation = 1.0;
    double offset = 0.0;
    for (const auto& sig : active_signatures) {
      if (sig.vehicle_id != profile.vehicle_id || t < sig.onset_ts) continue;
      if (std::find(sig.affected_sensors.begin(), sig.affected_sensors.end(), id) ==
          sig.affected_sensors.end())
        continue;
      std::visit(
          [&](const auto& p) {
            using P = std::decay_t<decltype(p)>;
            if constexpr (std::is_same_v<P, Drift>) {
              offset += p.rate_per_ms * static_cast<double>(t - sig.onset_ts);
            } else if constexpr (std::is_same_v<P, Spike>) {
              const SimMs period = profile.sample_period;
              const SimMs lag = sig.onset_ts - route.departure_ts;
              const SimMs first = route.departure_ts + ((lag + period - 1) / period) * period;
              if (((t - first) / period) % p.every_n == 0) offset += p.magnitude;
            } else {
              inflation *= p.factor;
            }
          },
          sig.pattern);
    }
    frame.readings.emplace(id, spec->baseline_mean + spec->baseline_stddev * inflation * noise + offset);
  }
  return frame;
}

struct SensorScale {
  double mean = 0.0;
  double stddev = 1.0;

  bool operator==(const SensorScale&) const = default;
};

using Scaling = std::map<std::string, SensorScale>;

inline Scaling baseline_scaling(const VehicleProfile& profile) {
  Scaling out;
  for (const auto& s : profile.sensors) out[s.sensor_id] = {s.baseline_mean, s.baseline_stddev};
  return out;
}

/// Features are emitted in the frame's reading order (sorted sensor_id).
inline FeatureVector standardize(const TelemetryFrame& frame, const Scaling& scaling) {
  FeatureVector out;
  out.reserve(frame.readings.size());
  for (const auto& [id, value] : frame.readings) {
    const auto it = scaling.find(id);
    if (it == scaling.end())
      throw Error(ErrorKind::schema_mismatch, "no scaling entry for sensor " + id);
    const auto& sc = it->second;
    out.push_back(sc.stddev == 0.0 ? 0.0 : (value - sc.mean) / sc.stddev);
  }
  return out;
}

inline std::map<std::string, double> destandardize(const FeatureVector& features,
                                                   const std::vector<std::string>& sensor_ids,
                                                   const Scaling& scaling) {
  if (features.size() != sensor_ids.size())
    throw Error(ErrorKind::schema_mismatch, "feature/sensor count mismatch");
  std::map<std::string, double> out;
  for (std::size_t i = 0; i < features.size(); ++i) {
    const auto& sc = scaling.at(sensor_ids[i]);
    out[sensor_ids[i]] = features[i] * sc.stddev + sc.mean;
  }
  return out;
}

// JSON ---------------------------------------------------------------------

using ojson = nlohmann::ordered_json;

inline ojson frame_to_json(const TelemetryFrame& f) {
  ojson readings = ojson::object();
  for (const auto& [id, v] : f.readings) readings[id] = v;
  return ojson{{"vehicle_id", f.vehicle_id}, {"timestamp", f.timestamp}, {"readings", readings}};
}

inline TelemetryFrame frame_from_json(const ojson& j) {
  TelemetryFrame f;
  f.vehicle_id = j.at("vehicle_id").get<std::string>();
  f.timestamp = j.at("timestamp").get<SimMs>();
  for (const auto& [id, v] : j.at("readings").items()) f.readings[id] = v.get<double>();
  return f;
}

}  // namespace pmaint
