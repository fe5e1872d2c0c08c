#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "pmaint/backend_coord.hpp"
#include "pmaint/cloud_analyzer.hpp"
#include "pmaint/edge_gateway.hpp"
#include "pmaint/error.hpp"
#include "pmaint/message_bus.hpp"
#include "pmaint/telemetry.hpp"

namespace pmaint {

inline constexpr int kScenarioSchema = 1;

struct Thresholds {
  double alert_threshold = 2.0;
  double confidence_margin = 0.5;
  double order_threshold = 100.0;
  double logistic_a = 2.0;
  double logistic_s0 = 2.0;
  SimMs horizon_ms = 3'600'000;
};

struct StockEntry {
  std::string depot_id;
  std::string part_id;
  std::int64_t count = 0;
};

struct CloudSettings {
  CloudConfig config;
  std::size_t reference_frames_per_vehicle = 64;
  SimMs label_delay_ms = 0;
};

struct Scenario {
  std::uint64_t seed = 0;
  std::vector<VehicleProfile> vehicles;
  std::vector<FailureSignature> signatures;
  Topology topology;
  PartCatalog parts;
  PartSensorMap part_sensors;
  std::map<std::string, double> damage_table;
  std::vector<StockEntry> inventory;
  std::vector<StaffMember> staff;
  Thresholds thresholds;
  FaultModel faults;
  SimMs cooldown_ms = 60'000;
  std::size_t context_frames = 4;
  CloudSettings cloud;
  LofParams lof;
  std::optional<Scaling> scaling;  // pooled vehicle baselines when absent
  LinearClassifier classifier;

  /// Pooled mixture of the vehicles' baseline distributions, per sensor.
  Scaling pooled_scaling() const {
    std::map<std::string, std::vector<const SensorSpec*>> by_sensor;
    for (const auto& v : vehicles)
      for (const auto& s : v.sensors) by_sensor[s.sensor_id].push_back(&s);
    Scaling out;
    for (const auto& [id, specs] : by_sensor) {
      double mean = 0.0;
      double second = 0.0;
      for (const auto* s : specs) {
        mean += s->baseline_mean;
        second += s->baseline_stddev * s->baseline_stddev + s->baseline_mean * s->baseline_mean;
      }
      const auto n = static_cast<double>(specs.size());
      mean /= n;
      second /= n;
      out[id] = {mean, std::sqrt(std::max(0.0, second - mean * mean))};
    }
    return out;
  }

  ModelSnapshot initial_model() const {
    ModelSnapshot m;
    m.version = 1;
    m.scaling = scaling ? *scaling : pooled_scaling();
    m.classifier = classifier;
    m.lof = lof;
    m.alert_threshold = thresholds.alert_threshold;
    m.confidence_margin = thresholds.confidence_margin;
    return m;
  }

  BackendConfig backend_config() const {
    BackendConfig c;
    c.order_threshold = thresholds.order_threshold;
    c.impact = {thresholds.logistic_a, thresholds.logistic_s0};
    c.horizon_ms = thresholds.horizon_ms;
    c.damage_table = damage_table;
    return c;
  }

  const VehicleProfile* vehicle(const std::string& id) const {
    for (const auto& v : vehicles)
      if (v.vehicle_id == id) return &v;
    return nullptr;
  }

  /// Checks every invariant and cross-reference eagerly.
  void validate() const {
    std::set<std::string> vehicle_ids;
    std::set<std::string> sensors;
    for (const auto& v : vehicles) {
      v.validate();
      if (!vehicle_ids.insert(v.vehicle_id).second)
        throw Error(ErrorKind::validation, "duplicate vehicle_id " + v.vehicle_id);
      if (!topology.has_location(v.route.origin))
        throw Error(ErrorKind::dangling_reference, "vehicle " + v.vehicle_id + " origin " + v.route.origin);
      if (!topology.has_location(v.route.destination))
        throw Error(ErrorKind::dangling_reference, "vehicle " + v.vehicle_id + " destination " + v.route.destination);
      for (const auto& s : v.sensors) sensors.insert(s.sensor_id);
    }
    topology.validate();

    std::set<std::string> sig_ids;
    for (const auto& sig : signatures) {
      if (!sig_ids.insert(sig.signature_id).second)
        throw Error(ErrorKind::validation, "duplicate signature_id " + sig.signature_id);
      const auto* v = vehicle(sig.vehicle_id);
      if (v == nullptr)
        throw Error(ErrorKind::dangling_reference, "signature " + sig.signature_id + " names unknown vehicle " + sig.vehicle_id);
      for (const auto& s : sig.affected_sensors) {
        const auto ids = v->sensor_ids();
        if (std::find(ids.begin(), ids.end(), s) == ids.end())
          throw Error(ErrorKind::dangling_reference, "signature " + sig.signature_id + " names unknown sensor " + s);
      }
      if (!parts.contains(sig.true_part_id))
        throw Error(ErrorKind::dangling_reference, "signature " + sig.signature_id + " names unknown part " + sig.true_part_id);
      sig.validate(*v);
    }

    for (const auto& [id, part] : parts) {
      if (id != part.part_id) throw Error(ErrorKind::validation, "part key mismatch for " + id);
      if (part.print_minutes < 0 || part.service_minutes < 0)
        throw Error(ErrorKind::validation, "part " + id + " has negative durations");
    }
    std::set<std::string> mapped;
    for (const auto& [part, weights] : part_sensors) {
      if (!parts.contains(part)) throw Error(ErrorKind::dangling_reference, "part-sensor map names unknown part " + part);
      for (const auto& sw : weights) {
        if (!sensors.contains(sw.sensor_id))
          throw Error(ErrorKind::dangling_reference, "part " + part + " maps unknown sensor " + sw.sensor_id);
        if (!(sw.weight >= 0.0) || !std::isfinite(sw.weight))
          throw Error(ErrorKind::validation, "part " + part + " has a bad weight");
        mapped.insert(sw.sensor_id);
      }
    }
    for (const auto& s : sensors)
      if (!mapped.contains(s)) throw Error(ErrorKind::validation, "sensor " + s + " maps to no part");

    std::set<std::string> depots;
    for (const auto& d : topology.depots) depots.insert(d.id);
    for (const auto& e : inventory) {
      if (!depots.contains(e.depot_id)) throw Error(ErrorKind::dangling_reference, "inventory names unknown depot " + e.depot_id);
      if (!parts.contains(e.part_id)) throw Error(ErrorKind::dangling_reference, "inventory names unknown part " + e.part_id);
      if (e.count < 0) throw Error(ErrorKind::validation, "negative inventory count");
    }
    std::set<std::string> staff_ids;
    for (const auto& s : staff) {
      if (!staff_ids.insert(s.staff_id).second) throw Error(ErrorKind::validation, "duplicate staff_id " + s.staff_id);
      if (!topology.has_location(s.location))
        throw Error(ErrorKind::dangling_reference, "staff " + s.staff_id + " at unknown location " + s.location);
      if (s.available_from > s.available_until)
        throw Error(ErrorKind::validation, "staff " + s.staff_id + " availability window is inverted");
    }
    faults.validate();
    if (cooldown_ms < 0) throw Error(ErrorKind::validation, "cooldown_ms must be >= 0");
    if (cloud.label_delay_ms < 0) throw Error(ErrorKind::validation, "label_delay_ms must be >= 0");
    const auto model = initial_model();
    model.validate();
    for (const auto& s : sensors)
      if (!model.scaling.contains(s)) throw Error(ErrorKind::validation, "no scaling for sensor " + s);
  }
};

// JSON reading with field paths in error messages --------------------------------

namespace detail {

class Reader {
 public:
  Reader(const ojson& j, std::string path) : j_(j), path_(std::move(path)) {}

  bool has(std::string_view key) const { return j_.is_object() && j_.contains(std::string(key)); }

  Reader at(std::string_view key) const {
    if (!has(key)) fail(std::string(key), "missing field");
    return Reader(j_.at(std::string(key)), child(key));
  }

  Reader at(std::size_t i) const { return Reader(j_.at(i), path_ + "[" + std::to_string(i) + "]"); }

  std::size_t size() const {
    if (!j_.is_array()) fail("", "expected an array");
    return j_.size();
  }

  template <typename T>
  T get(std::string_view key) const {
    return at(key).as<T>();
  }

  template <typename T>
  T get_or(std::string_view key, T fallback) const {
    return has(key) ? at(key).as<T>() : fallback;
  }

  template <typename T>
  T as() const {
    try {
      return j_.get<T>();
    } catch (const nlohmann::json::exception&) {
      throw Error(ErrorKind::parse, path_ + ": wrong type (" + std::string(j_.type_name()) + ")");
    }
  }

  const ojson& raw() const { return j_; }
  const std::string& path() const { return path_; }

  [[noreturn]] void fail(const std::string& key, const std::string& what) const {
    throw Error(ErrorKind::parse, (key.empty() ? path_ : child(key)) + ": " + what);
  }

 private:
  std::string child(std::string_view key) const { return path_.empty() ? std::string(key) : path_ + "." + std::string(key); }

  const ojson& j_;
  std::string path_;
};

inline SignaturePattern read_pattern(const Reader& r) {
  const auto type = r.get<std::string>("type");
  if (type == "drift") return Drift{r.get<double>("rate_per_ms")};
  if (type == "spike") return Spike{r.get<double>("magnitude"), r.get_or<std::int64_t>("every_n", 1)};
  if (type == "variance_inflation") return VarianceInflation{r.get<double>("factor")};
  r.fail("type", "unknown pattern '" + type + "'");
}

inline ojson pattern_to_json(const SignaturePattern& p) {
  return std::visit(
      [](const auto& x) -> ojson {
        using P = std::decay_t<decltype(x)>;
        if constexpr (std::is_same_v<P, Drift>) return {{"type", "drift"}, {"rate_per_ms", x.rate_per_ms}};
        else if constexpr (std::is_same_v<P, Spike>) return {{"type", "spike"}, {"magnitude", x.magnitude}, {"every_n", x.every_n}};
        else return {{"type", "variance_inflation"}, {"factor", x.factor}};
      },
      p);
}

}  // namespace detail

inline Scenario scenario_from_json(const ojson& doc) {
  using detail::Reader;
  const Reader root(doc, "");
  if (!doc.is_object()) root.fail("", "scenario must be an object");
  const auto schema = root.get<int>("schema");
  if (schema != kScenarioSchema) root.fail("schema", "unsupported schema version " + std::to_string(schema));

  Scenario s;
  s.seed = root.get<std::uint64_t>("seed");

  const auto vehicles = root.at("vehicles");
  for (std::size_t i = 0; i < vehicles.size(); ++i) {
    const auto v = vehicles.at(i);
    VehicleProfile p;
    p.vehicle_id = v.get<std::string>("vehicle_id");
    p.sample_period = v.get<SimMs>("sample_period_ms");
    const auto route = v.at("route");
    p.route = {route.get<std::string>("origin"), route.get<std::string>("destination"),
               route.get<SimMs>("departure_ts"), route.get<SimMs>("arrival_ts")};
    const auto sensors = v.at("sensors");
    for (std::size_t k = 0; k < sensors.size(); ++k) {
      const auto sr = sensors.at(k);
      p.sensors.push_back({sr.get<std::string>("sensor_id"), sr.get_or<std::string>("unit", ""),
                           sr.get<double>("mean"), sr.get<double>("stddev")});
    }
    s.vehicles.push_back(std::move(p));
  }

  if (root.has("signatures")) {
    const auto sigs = root.at("signatures");
    for (std::size_t i = 0; i < sigs.size(); ++i) {
      const auto g = sigs.at(i);
      s.signatures.push_back({g.get<std::string>("signature_id"), g.get<std::string>("vehicle_id"),
                              g.get<std::vector<std::string>>("sensors"), g.get<SimMs>("onset_ts"),
                              detail::read_pattern(g.at("pattern")), g.get<std::string>("true_part_id"),
                              g.get<std::string>("true_label")});
    }
  }

  const auto topo = root.at("topology");
  s.topology.locations = topo.get<std::vector<std::string>>("locations");
  if (topo.has("transit")) {
    const auto transit = topo.at("transit");
    for (std::size_t i = 0; i < transit.size(); ++i) {
      const auto t = transit.at(i);
      s.topology.set_transit(t.get<std::string>("from"), t.get<std::string>("to"), t.get<SimMs>("ms"));
    }
  }
  for (const auto* key : {"depots", "printers"}) {
    if (!topo.has(key)) continue;
    const auto sites = topo.at(key);
    auto& target = std::string_view(key) == "depots" ? s.topology.depots : s.topology.printers;
    for (std::size_t i = 0; i < sites.size(); ++i)
      target.push_back({sites.at(i).get<std::string>("id"), sites.at(i).get<std::string>("location")});
  }

  const auto parts = root.at("parts");
  for (std::size_t i = 0; i < parts.size(); ++i) {
    const auto p = parts.at(i);
    PartInfo info{p.get<std::string>("part_id"), p.get<std::string>("category"),
                  p.get_or<std::int64_t>("print_minutes", 60), p.get_or<std::int64_t>("service_minutes", 30),
                  p.get_or<double>("holding_cost_per_day", 0.0), p.get_or<double>("print_cost", 0.0)};
    if (s.parts.contains(info.part_id)) p.fail("part_id", "duplicate part " + info.part_id);
    auto& weights = s.part_sensors[info.part_id];
    if (p.has("sensors")) {
      const auto ws = p.at("sensors");
      for (std::size_t k = 0; k < ws.size(); ++k)
        weights.push_back({ws.at(k).get<std::string>("sensor_id"), ws.at(k).get_or<double>("weight", 1.0)});
    }
    s.parts.emplace(info.part_id, std::move(info));
  }

  if (root.has("damage_table")) s.damage_table = root.get<std::map<std::string, double>>("damage_table");

  if (root.has("inventory")) {
    const auto inv = root.at("inventory");
    for (std::size_t i = 0; i < inv.size(); ++i)
      s.inventory.push_back({inv.at(i).get<std::string>("depot_id"), inv.at(i).get<std::string>("part_id"),
                             inv.at(i).get<std::int64_t>("count")});
  }

  if (root.has("staff")) {
    const auto staff = root.at("staff");
    for (std::size_t i = 0; i < staff.size(); ++i) {
      const auto m = staff.at(i);
      const auto skills = m.get<std::vector<std::string>>("skills");
      s.staff.push_back({m.get<std::string>("staff_id"), m.get<std::string>("location"),
                         std::set<std::string>(skills.begin(), skills.end()), m.get<SimMs>("available_from"),
                         m.get<SimMs>("available_until")});
    }
  }

  if (root.has("thresholds")) {
    const auto t = root.at("thresholds");
    auto& th = s.thresholds;
    th.alert_threshold = t.get_or("alert_threshold", th.alert_threshold);
    th.confidence_margin = t.get_or("confidence_margin", th.confidence_margin);
    th.order_threshold = t.get_or("order_threshold", th.order_threshold);
    th.logistic_a = t.get_or("logistic_a", th.logistic_a);
    th.logistic_s0 = t.get_or("logistic_s0", th.logistic_s0);
    th.horizon_ms = t.get_or("horizon_ms", th.horizon_ms);
  }

  if (root.has("faults")) {
    const auto f = root.at("faults");
    auto& fm = s.faults;
    fm.latency_ms = f.get_or("latency_ms", fm.latency_ms);
    fm.drop_probability = f.get_or("drop_probability", fm.drop_probability);
    fm.duplicate_probability = f.get_or("duplicate_probability", fm.duplicate_probability);
    if (f.has("max_retries") && f.at("max_retries").raw().is_string()) {
      if (f.get<std::string>("max_retries") != "unbounded") f.fail("max_retries", "expected an integer or \"unbounded\"");
      fm.max_retries = FaultModel::unbounded_retries;
    } else {
      fm.max_retries = f.get_or("max_retries", fm.max_retries);
    }
    fm.retry_backoff_ms = f.get_or("retry_backoff_ms", fm.retry_backoff_ms);
  }

  s.cooldown_ms = root.get_or("cooldown_ms", s.cooldown_ms);
  s.context_frames = root.get_or("context_frames", s.context_frames);

  if (root.has("cloud")) {
    const auto c = root.at("cloud");
    auto& cs = s.cloud;
    cs.config.reference_capacity = c.get_or("reference_capacity", cs.config.reference_capacity);
    cs.config.update_every = c.get_or("update_every", cs.config.update_every);
    cs.config.perceptron_passes = c.get_or("perceptron_passes", cs.config.perceptron_passes);
    cs.config.update_trigger = c.get_or("update_trigger", cs.config.update_trigger);
    cs.reference_frames_per_vehicle = c.get_or("reference_frames_per_vehicle", cs.reference_frames_per_vehicle);
    cs.label_delay_ms = c.get_or("label_delay_ms", cs.label_delay_ms);
  }

  if (root.has("lof")) {
    const auto l = root.at("lof");
    s.lof.k = l.get_or("k", s.lof.k);
    s.lof.window_size = l.get_or("window_size", s.lof.window_size);
    s.lof.reach_floor = l.get_or("reach_floor", s.lof.reach_floor);
  }

  try {
    if (root.has("scaling")) s.scaling = scaling_from_json(root.at("scaling").raw());
    if (root.has("classifier")) s.classifier = classifier_from_json(root.at("classifier").raw());
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::parse, std::string("scaling/classifier: ") + e.what());
  }

  s.validate();
  return s;
}

inline ojson scenario_to_json(const Scenario& s) {
  ojson vehicles = ojson::array();
  for (const auto& v : s.vehicles) {
    ojson sensors = ojson::array();
    for (const auto& sp : v.sensors)
      sensors.push_back({{"sensor_id", sp.sensor_id}, {"unit", sp.unit}, {"mean", sp.baseline_mean}, {"stddev", sp.baseline_stddev}});
    vehicles.push_back({{"vehicle_id", v.vehicle_id},
                        {"sample_period_ms", v.sample_period},
                        {"route", {{"origin", v.route.origin}, {"destination", v.route.destination},
                                   {"departure_ts", v.route.departure_ts}, {"arrival_ts", v.route.arrival_ts}}},
                        {"sensors", sensors}});
  }
  ojson sigs = ojson::array();
  for (const auto& g : s.signatures)
    sigs.push_back({{"signature_id", g.signature_id}, {"vehicle_id", g.vehicle_id}, {"sensors", g.affected_sensors},
                    {"onset_ts", g.onset_ts}, {"pattern", detail::pattern_to_json(g.pattern)},
                    {"true_part_id", g.true_part_id}, {"true_label", g.true_label}});
  ojson transit = ojson::array();
  for (const auto& [pair, ms] : s.topology.transit_ms)
    if (pair.first < pair.second) transit.push_back({{"from", pair.first}, {"to", pair.second}, {"ms", ms}});
  auto sites = [](const std::vector<Site>& xs) {
    ojson out = ojson::array();
    for (const auto& x : xs) out.push_back({{"id", x.id}, {"location", x.location}});
    return out;
  };
  ojson parts = ojson::array();
  for (const auto& [id, p] : s.parts) {
    ojson ws = ojson::array();
    if (auto it = s.part_sensors.find(id); it != s.part_sensors.end())
      for (const auto& sw : it->second) ws.push_back({{"sensor_id", sw.sensor_id}, {"weight", sw.weight}});
    parts.push_back({{"part_id", id}, {"category", p.category}, {"print_minutes", p.print_minutes},
                     {"service_minutes", p.service_minutes}, {"holding_cost_per_day", p.holding_cost_per_day},
                     {"print_cost", p.print_cost}, {"sensors", ws}});
  }
  ojson damage = ojson::object();
  for (const auto& [label, cost] : s.damage_table) damage[label] = cost;
  ojson inventory = ojson::array();
  for (const auto& e : s.inventory) inventory.push_back({{"depot_id", e.depot_id}, {"part_id", e.part_id}, {"count", e.count}});
  ojson staff = ojson::array();
  for (const auto& m : s.staff)
    staff.push_back({{"staff_id", m.staff_id}, {"location", m.location},
                     {"skills", std::vector<std::string>(m.skills.begin(), m.skills.end())},
                     {"available_from", m.available_from}, {"available_until", m.available_until}});
  const auto& th = s.thresholds;
  const auto& fm = s.faults;
  ojson out{{"schema", kScenarioSchema},
            {"seed", s.seed},
            {"vehicles", vehicles},
            {"signatures", sigs},
            {"topology", {{"locations", s.topology.locations}, {"transit", transit},
                          {"depots", sites(s.topology.depots)}, {"printers", sites(s.topology.printers)}}},
            {"parts", parts},
            {"damage_table", damage},
            {"inventory", inventory},
            {"staff", staff},
            {"thresholds", {{"alert_threshold", th.alert_threshold}, {"confidence_margin", th.confidence_margin},
                            {"order_threshold", th.order_threshold}, {"logistic_a", th.logistic_a},
                            {"logistic_s0", th.logistic_s0}, {"horizon_ms", th.horizon_ms}}},
            {"faults", {{"latency_ms", fm.latency_ms}, {"drop_probability", fm.drop_probability},
                        {"duplicate_probability", fm.duplicate_probability},
                        {"max_retries", fm.max_retries == FaultModel::unbounded_retries ? ojson("unbounded") : ojson(fm.max_retries)},
                        {"retry_backoff_ms", fm.retry_backoff_ms}}},
            {"cooldown_ms", s.cooldown_ms},
            {"context_frames", s.context_frames},
            {"cloud", {{"reference_capacity", s.cloud.config.reference_capacity},
                       {"update_every", s.cloud.config.update_every},
                       {"perceptron_passes", s.cloud.config.perceptron_passes},
                       {"update_trigger", s.cloud.config.update_trigger},
                       {"reference_frames_per_vehicle", s.cloud.reference_frames_per_vehicle},
                       {"label_delay_ms", s.cloud.label_delay_ms}}},
            {"lof", {{"k", s.lof.k}, {"window_size", s.lof.window_size}, {"reach_floor", s.lof.reach_floor}}}};
  if (s.scaling) out["scaling"] = scaling_to_json(*s.scaling);
  out["classifier"] = classifier_to_json(s.classifier);
  return out;
}

/// Parses and validates a scenario file. JSON syntax errors carry line/column.
inline Scenario load_scenario(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::parse, "cannot open scenario " + path.string());
  ojson doc;
  try {
    doc = ojson::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(ErrorKind::parse, path.string() + ": " + e.what());
  }
  return scenario_from_json(doc);
}

}  // namespace pmaint
