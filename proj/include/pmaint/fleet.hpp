#pragma once

#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "pmaint/random.hpp"
#include "pmaint/scenario.hpp"

namespace pmaint {

/// Knobs for a synthetic fleet: identical vehicles flying round-robin legs between
/// a ring of locations, a chosen number of which carry a single-spike failure.
struct FleetParams {
  std::uint64_t seed = 42;
  std::size_t vehicles = 50;
  std::size_t sensors = 4;
  SimMs sample_period_ms = 60'000;
  SimMs trip_ms = 3 * 3'600'000;
  SimMs departure_stagger_ms = 0;  // vehicle i departs at (i % 12) * stagger
  std::size_t failures = 10;
  double spike_sigma = 20.0;
  std::int64_t spike_every_n = 1'000'000;  // one spike per trip
  double onset_fraction = 0.25;
  bool printers = true;  // one printer at every location
  std::int64_t print_minutes = 60;
  std::int64_t stock_per_depot = 0;
  std::vector<std::string> locations = {"HND", "ITM", "CTS", "FUK"};
  SimMs transit_ms = 90 * 60'000;
  LofParams lof{20, 64, 1e-9};
  std::size_t reference_frames_per_vehicle = 16;
  double alert_threshold = 2.0;
  SimMs cooldown_ms = 60 * 60'000;
};

inline std::string sensor_name(std::size_t i) { return "s" + std::to_string(i); }

inline Scenario make_fleet_scenario(const FleetParams& fp) {
  Scenario s;
  s.seed = fp.seed;
  s.cooldown_ms = fp.cooldown_ms;
  s.lof = fp.lof;
  s.thresholds.alert_threshold = fp.alert_threshold;
  s.thresholds.confidence_margin = 0.5;
  s.thresholds.order_threshold = 100.0;
  s.thresholds.horizon_ms = fp.trip_ms;
  s.cloud.reference_frames_per_vehicle = fp.reference_frames_per_vehicle;

  s.topology.locations = fp.locations;
  for (std::size_t a = 0; a < fp.locations.size(); ++a)
    for (std::size_t b = a + 1; b < fp.locations.size(); ++b)
      s.topology.set_transit(fp.locations[a], fp.locations[b], fp.transit_ms);
  for (const auto& loc : fp.locations) {
    s.topology.depots.push_back({"depot-" + loc, loc});
    if (fp.printers) s.topology.printers.push_back({"printer-" + loc, loc});
  }

  std::vector<SensorSpec> sensors;
  for (std::size_t i = 0; i < fp.sensors; ++i)
    sensors.push_back({sensor_name(i), "u", 100.0 + 10.0 * static_cast<double>(i), 1.0 + 0.5 * static_cast<double>(i)});

  std::vector<std::string> categories;
  for (std::size_t i = 0; i < fp.sensors; ++i) {
    const auto part = "part-" + sensor_name(i);
    categories.push_back("cat-" + sensor_name(i));
    s.parts[part] = {part, categories.back(), fp.print_minutes, 30, 2.0, 50.0};
    s.part_sensors[part] = {{sensor_name(i), 1.0}};
    s.damage_table["fault-" + sensor_name(i)] = 1000.0;
    LabelWeights lw{std::vector<double>(fp.sensors, 0.0), -5.0};
    lw.weights[i] = 1.0;
    s.classifier.labels["fault-" + sensor_name(i)] = lw;
    for (const auto& loc : fp.locations)
      if (fp.stock_per_depot > 0) s.inventory.push_back({"depot-" + loc, part, fp.stock_per_depot});
  }
  s.classifier.labels["normal"] = {std::vector<double>(fp.sensors, 0.0), 0.0};

  for (const auto& loc : fp.locations)
    s.staff.push_back({"staff-" + loc, loc, {categories.begin(), categories.end()}, 0, 1'000'000'000'000});

  for (std::size_t i = 0; i < fp.vehicles; ++i) {
    VehicleProfile v;
    v.vehicle_id = "v" + std::to_string(i);
    v.sensors = sensors;
    v.sample_period = fp.sample_period_ms;
    const SimMs dep = static_cast<SimMs>(i % 12) * fp.departure_stagger_ms;
    v.route = {fp.locations[i % fp.locations.size()], fp.locations[(i + 1) % fp.locations.size()], dep, dep + fp.trip_ms};
    s.vehicles.push_back(std::move(v));
  }

  // Fisher-Yates over vehicle indices with the library Rng, so the choice is portable.
  std::vector<std::size_t> order(fp.vehicles);
  std::iota(order.begin(), order.end(), 0);
  Rng pick(derive_seed(fp.seed, "fleet/failures"));
  for (std::size_t i = order.size(); i > 1; --i)
    std::swap(order[i - 1], order[static_cast<std::size_t>(pick.uniform_int(0, static_cast<std::int64_t>(i) - 1))]);
  for (std::size_t f = 0; f < std::min(fp.failures, fp.vehicles); ++f) {
    const auto& v = s.vehicles[order[f]];
    const std::size_t sensor = f % fp.sensors;
    const auto samples = static_cast<SimMs>(fp.onset_fraction * static_cast<double>(fp.trip_ms / fp.sample_period_ms));
    FailureSignature g;
    g.signature_id = "sig-" + std::to_string(f);
    g.vehicle_id = v.vehicle_id;
    g.affected_sensors = {sensor_name(sensor)};
    g.onset_ts = v.route.departure_ts + samples * fp.sample_period_ms;
    g.pattern = Spike{fp.spike_sigma * sensors[sensor].baseline_stddev, fp.spike_every_n};
    g.true_part_id = "part-" + sensor_name(sensor);
    g.true_label = "fault-" + sensor_name(sensor);
    s.signatures.push_back(std::move(g));
  }
  return s;
}

}  // namespace pmaint
