#pragma once

#include <algorithm>
#include <cstdint>
#include <future>
#include <map>
#include <optional>
#include <queue>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <thread>
#include <tuple>
#include <vector>

#include "pmaint/backend_coord.hpp"
#include "pmaint/cloud_analyzer.hpp"
#include "pmaint/edge_gateway.hpp"
#include "pmaint/event_store.hpp"
#include "pmaint/message_bus.hpp"
#include "pmaint/random.hpp"
#include "pmaint/scenario.hpp"
#include "pmaint/telemetry.hpp"

namespace pmaint {

struct SignatureDetection {
  std::string signature_id;
  bool detected = false;
  std::optional<SimMs> latency_ms;
};

/// Rates are nullopt ("not applicable") when their denominator is empty.
struct SimulationReport {
  std::string mode = "platform";
  std::vector<SignatureDetection> detection;
  std::optional<double> precision;
  std::optional<double> recall;
  std::optional<double> readiness_rate;
  std::optional<double> delayed_service_rate;
  double stock_cost = 0.0;
  double print_cost = 0.0;
  std::size_t episodes = 0;
  std::size_t orders = 0;
  std::size_t arrivals = 0;
  std::size_t notifications = 0;
  std::size_t dead_letters = 0;
  std::size_t model_releases = 0;
  std::string event_log_path;
};

inline ojson optional_json(const std::optional<double>& v) { return v ? ojson(*v) : ojson(); }

inline ojson report_to_json(const SimulationReport& r) {
  ojson detection = ojson::array();
  for (const auto& d : r.detection)
    detection.push_back({{"signature_id", d.signature_id}, {"detected", d.detected},
                         {"latency_ms", d.latency_ms ? ojson(*d.latency_ms) : ojson()}});
  return {{"mode", r.mode},
          {"detection", detection},
          {"precision", optional_json(r.precision)},
          {"recall", optional_json(r.recall)},
          {"readiness_rate", optional_json(r.readiness_rate)},
          {"delayed_service_rate", optional_json(r.delayed_service_rate)},
          {"stock_cost", r.stock_cost},
          {"print_cost", r.print_cost},
          {"counts", {{"episodes", r.episodes}, {"orders", r.orders}, {"arrivals", r.arrivals},
                      {"notifications", r.notifications}, {"dead_letters", r.dead_letters},
                      {"model_releases", r.model_releases}}},
          {"event_log", r.event_log_path}};
}

inline std::string report_to_csv(const SimulationReport& r) {
  auto cell = [](const std::optional<double>& v) { return v ? ojson(*v).dump() : std::string(); };
  std::ostringstream out;
  out << "metric,value\n"
      << "mode," << r.mode << '\n'
      << "precision," << cell(r.precision) << '\n'
      << "recall," << cell(r.recall) << '\n'
      << "readiness_rate," << cell(r.readiness_rate) << '\n'
      << "delayed_service_rate," << cell(r.delayed_service_rate) << '\n'
      << "stock_cost," << ojson(r.stock_cost).dump() << '\n'
      << "print_cost," << ojson(r.print_cost).dump() << '\n'
      << "episodes," << r.episodes << '\n'
      << "orders," << r.orders << '\n'
      << "arrivals," << r.arrivals << '\n'
      << "notifications," << r.notifications << '\n'
      << "dead_letters," << r.dead_letters << '\n'
      << "model_releases," << r.model_releases << '\n';
  out << "signature_id,detected,latency_ms\n";
  for (const auto& d : r.detection)
    out << d.signature_id << ',' << (d.detected ? "true" : "false") << ','
        << (d.latency_ms ? std::to_string(*d.latency_ms) : std::string()) << '\n';
  return out.str();
}

/// Checks the log's framing: contiguous offsets, non-decreasing time, run.start first
/// and run.end last.
inline void check_log_integrity(std::span<const EventRecord> log) {
  if (log.empty()) throw Error(ErrorKind::integrity, "empty event log");
  if (log.front().kind != "run.start") throw Error(ErrorKind::integrity, "log does not begin with run.start");
  if (log.back().kind != "run.end") throw Error(ErrorKind::integrity, "log is truncated (no run.end)");
  for (std::size_t i = 0; i < log.size(); ++i) {
    if (log[i].offset != i) throw Error(ErrorKind::integrity, "offset gap at index " + std::to_string(i));
    if (i > 0 && log[i].ts < log[i - 1].ts)
      throw Error(ErrorKind::integrity, "timestamp decreases at offset " + std::to_string(i));
  }
}

/// Folds a complete log into the report. Ground truth comes from the run.start payload.
inline SimulationReport compute_metrics(std::span<const EventRecord> log) {
  check_log_integrity(log);
  const auto& start = log.front().payload;

  struct Truth {
    std::string id, vehicle, part;
    SimMs onset;
  };
  std::map<std::string, SimMs> arrival_of;
  for (const auto& v : start.at("vehicles")) arrival_of[v.at("vehicle_id").get<std::string>()] = v.at("arrival_ts").get<SimMs>();
  std::vector<Truth> truth;
  for (const auto& s : start.at("signatures"))
    truth.push_back({s.at("signature_id").get<std::string>(), s.at("vehicle_id").get<std::string>(),
                     s.at("true_part_id").get<std::string>(), s.at("onset_ts").get<SimMs>()});
  std::map<std::string, std::pair<double, double>> costs;  // part -> (holding per day, print)
  for (const auto& p : start.at("parts"))
    costs[p.at("part_id").get<std::string>()] = {p.at("holding_cost_per_day").get<double>(), p.at("print_cost").get<double>()};
  const double horizon_days = static_cast<double>(start.at("horizon_ms").get<SimMs>()) / 86'400'000.0;

  SimulationReport rep;
  rep.mode = start.at("mode").get<std::string>();

  struct Episode {
    std::string vehicle;
    SimMs first, last;
  };
  std::vector<Episode> episodes;
  std::map<std::string, std::string> order_vehicle, order_part;
  std::map<std::string, bool> order_ready;
  std::vector<std::string> arrivals;
  for (const auto& r : log) {
    const auto& p = r.payload;
    if (r.kind == "anomaly.reported") {
      episodes.push_back({p.at("vehicle_id").get<std::string>(), p.at("window").at("first_ts").get<SimMs>(),
                          p.at("window").at("last_ts").get<SimMs>()});
    } else if (r.kind == "order.created") {
      const auto id = p.at("order_id").get<std::string>();
      order_vehicle[id] = p.at("vehicle_id").get<std::string>();
      order_part[id] = p.at("part_id").get<std::string>();
      order_ready[id] = false;
    } else if (r.kind == "order.ready") {
      order_ready[p.at("order_id").get<std::string>()] = true;
    } else if (r.kind == "vehicle.arrived") {
      arrivals.push_back(p.at("vehicle_id").get<std::string>());
    } else if (r.kind == "stock.init") {
      const auto part = p.at("part_id").get<std::string>();
      rep.stock_cost += static_cast<double>(p.at("count").get<std::int64_t>()) * costs[part].first * horizon_days;
    } else if (r.kind == "print.enqueued") {
      rep.print_cost += costs[p.at("part_id").get<std::string>()].second;
    } else if (r.kind == "ops.notify") {
      ++rep.notifications;
    } else if (r.kind == "bus.dead_letter") {
      ++rep.dead_letters;
    } else if (r.kind == "model.released") {
      ++rep.model_releases;
    }
  }

  auto matches = [&](const Episode& e, const Truth& t) {
    return e.vehicle == t.vehicle && e.first <= arrival_of.at(t.vehicle) && e.last >= t.onset;
  };
  std::size_t matched_episodes = 0;
  for (const auto& e : episodes)
    if (std::any_of(truth.begin(), truth.end(), [&](const Truth& t) { return matches(e, t); })) ++matched_episodes;
  std::size_t matched_truth = 0;
  for (const auto& t : truth) {
    SignatureDetection d{t.id, false, std::nullopt};
    for (const auto& e : episodes) {
      if (!matches(e, t)) continue;
      d.detected = true;
      const SimMs latency = e.last - t.onset;
      if (!d.latency_ms || latency < *d.latency_ms) d.latency_ms = latency;
    }
    if (d.detected) ++matched_truth;
    rep.detection.push_back(std::move(d));
  }
  rep.episodes = episodes.size();
  if (!episodes.empty()) rep.precision = static_cast<double>(matched_episodes) / static_cast<double>(episodes.size());
  if (!truth.empty()) rep.recall = static_cast<double>(matched_truth) / static_cast<double>(truth.size());

  rep.orders = order_ready.size();
  if (!order_ready.empty()) {
    const auto ready = std::count_if(order_ready.begin(), order_ready.end(), [](const auto& kv) { return kv.second; });
    rep.readiness_rate = static_cast<double>(ready) / static_cast<double>(order_ready.size());
  }

  rep.arrivals = arrivals.size();
  if (!arrivals.empty()) {
    std::size_t delayed = 0;
    for (const auto& vehicle : arrivals) {
      bool lacking = false;
      for (const auto& t : truth) {
        if (t.vehicle != vehicle) continue;
        const bool covered = std::any_of(order_ready.begin(), order_ready.end(), [&](const auto& kv) {
          return kv.second && order_vehicle[kv.first] == vehicle && order_part[kv.first] == t.part;
        });
        if (!covered) lacking = true;
      }
      if (lacking) ++delayed;
    }
    rep.delayed_service_rate = static_cast<double>(delayed) / static_cast<double>(arrivals.size());
  }
  return rep;
}

struct RunOptions {
  bool baseline = false;  // failures found only by inspection at arrival
  bool parallel = false;  // ingest same-instant frames of different gateways concurrently
};

struct RunResult {
  SimulationReport report;
  std::vector<EventRecord> log;
  Views views;
  RawStore raw_store;
  std::vector<ModelRelease> releases;
  std::map<std::string, std::uint64_t> gateway_versions;
};

namespace detail {

class Simulation {
 public:
  Simulation(const Scenario& scenario, RunOptions options)
      : sc_(scenario),
        opt_(options),
        bus_(scenario.faults, derive_seed(scenario.seed, "bus")),
        cloud_(scenario.initial_model(), scenario.part_sensors, scenario.cloud.config,
               derive_seed(scenario.seed, "reference"), store_),
        backend_(store_, scenario.parts, scenario.topology, scenario.staff, routes(scenario), scenario.backend_config()) {}

  RunResult run() {
    append(0, "run.start", start_payload());
    for (const auto& e : sc_.inventory)
      append(0, "stock.init", {{"depot_id", e.depot_id}, {"part_id", e.part_id}, {"count", e.count}});
    if (!sc_.vehicles.empty()) {
      append(0, "model.initial", {{"version", cloud_.model().version}});
      if (!opt_.baseline) setup_platform();
    }
    for (const auto& v : sc_.vehicles) {
      if (!opt_.baseline) push({v.route.departure_ts, kFrame, v.vehicle_id, 0, {}, {}});
      push({v.route.arrival_ts, kArrival, v.vehicle_id, 0, {}, {}});
    }

    while (true) {
      const auto bus_due = bus_.next_due();
      if (!bus_due && queue_.empty()) break;
      if (bus_due && (queue_.empty() || *bus_due <= queue_.top().ts)) {
        deliver(*bus_due);
        continue;
      }
      const auto ev = queue_.top();
      queue_.pop();
      now_ = ev.ts;
      switch (ev.cls) {
        case kFrame: frames(ev); break;
        case kLabel: label(ev); break;
        case kReady: backend_.mark_ready(ev.report_id, now_); break;
        case kArrival: arrival(ev); break;
      }
    }
    append(now_, "run.end", {{"events", store_.records().size() + 1}});

    RunResult result;
    result.log = store_.records();
    result.views = store_.views();
    result.report = compute_metrics(result.log);
    result.raw_store = cloud_.raw_store();
    result.releases = cloud_.releases();
    for (const auto& [id, gw] : gateways_) result.gateway_versions[id] = gw.model_version();
    return result;
  }

 private:
  enum Cls { kFrame = 0, kLabel = 1, kReady = 2, kArrival = 3 };

  struct SimEvent {
    SimMs ts;
    int cls;
    std::string vehicle;
    std::size_t index;
    std::string report_id;  // order id for kReady
    std::optional<std::string> label;
    std::uint64_t seq = 0;

    bool operator>(const SimEvent& o) const { return std::tie(ts, cls, seq) > std::tie(o.ts, o.cls, o.seq); }
  };

  static std::map<std::string, Route> routes(const Scenario& s) {
    std::map<std::string, Route> out;
    for (const auto& v : s.vehicles) out[v.vehicle_id] = v.route;
    return out;
  }

  ojson start_payload() const {
    ojson vehicles = ojson::array();
    SimMs first = 0, last = 0;
    for (std::size_t i = 0; i < sc_.vehicles.size(); ++i) {
      const auto& v = sc_.vehicles[i];
      vehicles.push_back({{"vehicle_id", v.vehicle_id}, {"destination", v.route.destination},
                          {"departure_ts", v.route.departure_ts}, {"arrival_ts", v.route.arrival_ts}});
      first = i == 0 ? v.route.departure_ts : std::min(first, v.route.departure_ts);
      last = i == 0 ? v.route.arrival_ts : std::max(last, v.route.arrival_ts);
    }
    ojson sigs = ojson::array();
    for (const auto& g : sc_.signatures)
      sigs.push_back({{"signature_id", g.signature_id}, {"vehicle_id", g.vehicle_id}, {"onset_ts", g.onset_ts},
                      {"true_part_id", g.true_part_id}, {"true_label", g.true_label}});
    ojson parts = ojson::array();
    for (const auto& [id, p] : sc_.parts)
      parts.push_back({{"part_id", id}, {"holding_cost_per_day", p.holding_cost_per_day}, {"print_cost", p.print_cost}});
    return {{"schema", kScenarioSchema}, {"mode", opt_.baseline ? "baseline" : "platform"}, {"seed", sc_.seed},
            {"horizon_ms", last - first}, {"vehicles", vehicles}, {"signatures", sigs}, {"parts", parts}};
  }

  void setup_platform() {
    const auto model = sc_.initial_model();
    for (const auto& v : sc_.vehicles) {
      gateways_.emplace(v.vehicle_id, EdgeGateway(v.vehicle_id, model, {sc_.cooldown_ms, sc_.context_frames}));
      telemetry_rng_.emplace(v.vehicle_id, Rng(derive_seed(sc_.seed, "telemetry/" + v.vehicle_id)));
      times_.emplace(v.vehicle_id, v.sample_times());
      for (const auto& g : sc_.signatures)
        if (g.vehicle_id == v.vehicle_id) signatures_[v.vehicle_id].push_back(g);
      bus_.subscribe("gw/" + v.vehicle_id, kModelTopic);
    }
    bus_.subscribe("cloud", "fleet/+/anomaly");
    bus_.subscribe("erp", kOrderTopic);
    bus_.subscribe("vendor", "vendor/print/+");
    bus_.subscribe("ops", kNotifyTopic);

    // Historical normal flights seed the cloud's reference set and raw store.
    for (const auto& v : sc_.vehicles) {
      Rng history(derive_seed(sc_.seed, "history/" + v.vehicle_id));
      const auto& times = times_.at(v.vehicle_id);
      for (std::size_t i = 0; i < sc_.cloud.reference_frames_per_vehicle; ++i)
        cloud_.add_reference(generate_frame(v, times[i % times.size()], history));
    }
    append(0, "cloud.reference_loaded", {{"frames", cloud_.raw_store().normal.size()},
                                         {"reference_size", cloud_.reference().size()}});
  }

  void push(SimEvent e) {
    e.seq = seq_++;
    queue_.push(std::move(e));
  }

  std::uint64_t append(SimMs ts, std::string kind, ojson payload) { return store_.append(ts, std::move(kind), std::move(payload)); }

  void flush_bus() {
    for (const auto& e : bus_.drain_events()) {
      ojson p{{"message_id", e.message_id}, {"topic", e.topic}};
      if (e.kind == BusEvent::Kind::publish) p["receipt"] = e.receipt;
      else {
        p["client_id"] = e.client_id;
        p["attempt"] = e.attempt;
      }
      append(e.ts, std::string(to_string(e.kind)), p);
    }
  }

  void record_error(std::string_view module, const std::exception& e) {
    append(now_, "error", {{"module", module}, {"message", e.what()}});
  }

  // All gateways due at the same instant are ingested as one batch.
  void frames(const SimEvent& first) {
    std::vector<SimEvent> batch{first};
    while (!queue_.empty() && queue_.top().ts == first.ts && queue_.top().cls == kFrame) {
      batch.push_back(queue_.top());
      queue_.pop();
    }
    std::vector<TelemetryFrame> generated(batch.size());
    for (std::size_t i = 0; i < batch.size(); ++i) {
      const auto& v = *sc_.vehicle(batch[i].vehicle);
      generated[i] = generate_frame(v, first.ts, telemetry_rng_.at(v.vehicle_id), signatures_[v.vehicle_id]);
    }

    struct Outcome {
      std::optional<IngestResult> result;
      std::string error;
    };
    std::vector<Outcome> outcomes(batch.size());
    auto work = [&](std::size_t i) {
      try {
        outcomes[i].result = gateways_.at(batch[i].vehicle).ingest(generated[i]);
      } catch (const std::exception& e) {
        outcomes[i].error = e.what();
      }
    };
    if (opt_.parallel && batch.size() > 1) {
      const std::size_t workers = std::max<std::size_t>(1, std::min<std::size_t>(batch.size(), std::thread::hardware_concurrency()));
      std::vector<std::future<void>> futures;
      for (std::size_t w = 0; w < workers; ++w)
        futures.push_back(std::async(std::launch::async, [&, w] {
          for (std::size_t i = w; i < batch.size(); i += workers) work(i);
        }));
      for (auto& f : futures) f.get();
    } else {
      for (std::size_t i = 0; i < batch.size(); ++i) work(i);
    }

    for (std::size_t i = 0; i < batch.size(); ++i) {
      const auto& vehicle = batch[i].vehicle;
      if (!outcomes[i].error.empty()) {
        append(now_, "error", {{"module", "edge_gateway"}, {"vehicle_id", vehicle}, {"message", outcomes[i].error}});
      } else {
        const auto& res = *outcomes[i].result;
        if (res.decision.action == GateAction::suppress)
          append(now_, "edge.suppressed", {{"vehicle_id", vehicle}, {"episode_id", *res.decision.episode_id}, {"score", res.score}});
        for (std::size_t r = 0; r < res.reports.size(); ++r) {
          const auto& rep = res.reports[r];
          append(now_, "anomaly.reported",
                 {{"report_id", rep.report_id}, {"vehicle_id", rep.vehicle_id}, {"episode_id", rep.episode_id},
                  {"window", {{"first_ts", rep.first_ts}, {"last_ts", rep.last_ts}}}, {"score", rep.score},
                  {"label", rep.label ? ojson(*rep.label) : ojson()},
                  {"confidence", rep.confidence ? ojson(*rep.confidence) : ojson()},
                  {"model_version", rep.model_version}});
          bus_.publish(res.envelopes[r], vehicle);
        }
        flush_bus();
      }
      const auto next = batch[i].index + 1;
      if (next < times_.at(vehicle).size()) push({times_.at(vehicle)[next], kFrame, vehicle, next, {}, {}});
    }
  }

  void deliver(SimMs until) {
    now_ = until;
    auto deliveries = bus_.deliver(until);
    flush_bus();
    for (const auto& d : deliveries) {
      try {
        dispatch(d);
      } catch (const Error& e) {
        record_error(d.client_id, e);
      } catch (const nlohmann::json::exception& e) {
        record_error(d.client_id, e);
      }
      flush_bus();
    }
    schedule_ready();
  }

  // Orders planned since the last look get a wake-up when their part lands.
  void schedule_ready() {
    const auto& records = store_.records();
    for (; scanned_ < records.size(); ++scanned_) {
      if (records[scanned_].kind != "order.fulfilling") continue;
      const auto& o = store_.views().orders.at(records[scanned_].payload.at("order_id").get<std::string>());
      if (o.status == OrderStatus::fulfilling && o.plan->ready_ts <= o.deadline)
        push({std::max(o.plan->ready_ts, now_), kReady, o.vehicle_id, 0, o.order_id, {}});
    }
  }

  void dispatch(const Delivery& d) {
    const auto& env = d.envelope;
    if (d.client_id == "cloud") {
      const auto report = report_from_json(ojson::parse(env.payload));
      const auto diagnosis = cloud_.analyze(report, now_);
      push({now_ + sc_.cloud.label_delay_ms, kLabel, report.vehicle_id, 0, report.report_id, true_label(report)});
      backend_.handle_diagnosis(diagnosis, &bus_, now_);
    } else if (d.client_id == "erp") {
      backend_.handle_order_request(ojson::parse(env.payload), &bus_, now_);
    } else if (d.client_id.starts_with("gw/")) {
      const auto vehicle = d.client_id.substr(3);
      auto& gw = gateways_.at(vehicle);
      const auto snapshot = snapshot_from_json(ojson::parse(env.payload));
      const bool applied = gw.apply_model(snapshot);
      append(now_, applied ? "model.applied" : "model.rejected",
             {{"vehicle_id", vehicle}, {"version", snapshot.version}, {"current_version", gw.model_version()}});
    }
  }

  /// Ground-truth stand-in for the operator's verdict on a report.
  std::optional<std::string> true_label(const AnomalyReport& r) const {
    const auto* v = sc_.vehicle(r.vehicle_id);
    const FailureSignature* best = nullptr;
    for (const auto& g : sc_.signatures)
      if (g.vehicle_id == r.vehicle_id && g.onset_ts <= r.last_ts && r.last_ts <= v->route.arrival_ts &&
          (best == nullptr || g.onset_ts > best->onset_ts))
        best = &g;
    return best ? best->true_label : std::string("normal");
  }

  void label(const SimEvent& ev) {
    cloud_.record_judgement(ev.report_id, ev.label, now_);
    if (auto release = cloud_.maybe_update(now_)) {
      distribute_model(release->snapshot, bus_, now_);
      flush_bus();
    }
  }

  void arrival(const SimEvent& ev) {
    append(now_, "vehicle.arrived", {{"vehicle_id", ev.vehicle}});
    if (opt_.baseline) {
      for (const auto& g : sc_.signatures)
        if (g.vehicle_id == ev.vehicle) backend_.inspection_order(ev.vehicle, g.true_part_id, g.signature_id, now_);
    }
    backend_.handle_arrival(ev.vehicle, now_);
    schedule_ready();
  }

  const Scenario& sc_;
  RunOptions opt_;
  EventStore store_;
  Broker bus_;
  CloudAnalyzer cloud_;
  BackendCoordinator backend_;
  std::map<std::string, EdgeGateway> gateways_;
  std::map<std::string, Rng> telemetry_rng_;
  std::map<std::string, std::vector<SimMs>> times_;
  std::map<std::string, std::vector<FailureSignature>> signatures_;
  std::priority_queue<SimEvent, std::vector<SimEvent>, std::greater<>> queue_;
  std::uint64_t seq_ = 0;
  std::size_t scanned_ = 0;
  SimMs now_ = 0;
};

}  // namespace detail

/// Runs the scenario end to end on a single discrete-event timeline.
inline RunResult run(const Scenario& scenario, const RunOptions& options = {}) {
  scenario.validate();
  return detail::Simulation(scenario, options).run();
}

struct BaselineComparison {
  SimulationReport platform;
  SimulationReport baseline;
};

inline BaselineComparison compare_baseline(const Scenario& scenario) {
  return {run(scenario, {false, false}).report, run(scenario, {true, false}).report};
}

}  // namespace pmaint
