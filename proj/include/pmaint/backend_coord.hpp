#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include "pmaint/cloud_analyzer.hpp"
#include "pmaint/error.hpp"
#include "pmaint/event_store.hpp"
#include "pmaint/message_bus.hpp"
#include "pmaint/telemetry.hpp"

namespace pmaint {

inline constexpr std::string_view kOrderTopic = "erp/order";
inline constexpr std::string_view kNotifyTopic = "ops/notify";

inline std::string print_topic(std::string_view printer_id) {
  return "vendor/print/" + std::string(printer_id);
}

struct PartInfo {
  std::string part_id;
  std::string category;
  std::int64_t print_minutes = 60;
  std::int64_t service_minutes = 30;
  double holding_cost_per_day = 0.0;
  double print_cost = 0.0;
};

using PartCatalog = std::map<std::string, PartInfo>;

struct Site {
  std::string id;
  std::string location;
};

struct StaffMember {
  std::string staff_id;
  std::string location;
  std::set<std::string> skills;
  SimMs available_from = 0;
  SimMs available_until = 0;
};

struct Topology {
  std::vector<std::string> locations;
  std::map<std::pair<std::string, std::string>, SimMs> transit_ms;
  std::vector<Site> depots;
  std::vector<Site> printers;

  void set_transit(const std::string& a, const std::string& b, SimMs ms) {
    transit_ms[{a, b}] = ms;
    transit_ms[{b, a}] = ms;
  }

  bool has_location(const std::string& id) const {
    return std::find(locations.begin(), locations.end(), id) != locations.end();
  }

  SimMs transit(const std::string& from, const std::string& to) const {
    if (from == to) return 0;
    const auto it = transit_ms.find({from, to});
    if (it == transit_ms.end()) throw Error(ErrorKind::catalog, "no transit time " + from + " -> " + to);
    return it->second;
  }

  void validate() const {
    std::set<std::string> locs(locations.begin(), locations.end());
    if (locs.size() != locations.size()) throw Error(ErrorKind::validation, "duplicate location id");
    for (const auto& [pair, ms] : transit_ms) {
      if (!locs.contains(pair.first)) throw Error(ErrorKind::dangling_reference, "unknown location " + pair.first);
      if (!locs.contains(pair.second)) throw Error(ErrorKind::dangling_reference, "unknown location " + pair.second);
      if (ms < 0) throw Error(ErrorKind::validation, "negative transit time");
      if (pair.first == pair.second && ms != 0) throw Error(ErrorKind::validation, "transit(x,x) must be 0");
      const auto back = transit_ms.find({pair.second, pair.first});
      if (back == transit_ms.end() || back->second != ms)
        throw Error(ErrorKind::validation, "transit matrix not symmetric for " + pair.first + "/" + pair.second);
    }
    for (const auto& a : locations)
      for (const auto& b : locations)
        if (a != b && !transit_ms.contains({a, b}))
          throw Error(ErrorKind::validation, "missing transit time " + a + " -> " + b);
    std::set<std::string> ids;
    for (const auto* sites : {&depots, &printers})
      for (const auto& s : *sites) {
        if (!ids.insert(s.id).second) throw Error(ErrorKind::validation, "duplicate site id " + s.id);
        if (!locs.contains(s.location))
          throw Error(ErrorKind::dangling_reference, "site " + s.id + " at unknown location " + s.location);
      }
  }
};

// Impact ---------------------------------------------------------------------

struct ImpactParams {
  double a = 2.0;   // logistic slope
  double s0 = 2.0;  // logistic midpoint
};

struct ImpactAssessment {
  double probability = 0.0;
  double damage = 0.0;
  double impact = 0.0;
  SimMs horizon_ms = 0;
};

inline double logistic(double x) { return 1.0 / (1.0 + std::exp(-x)); }

inline ImpactAssessment evaluate_impact(const DiagnosedAnomaly& d, SimMs horizon_ms,
                                        const std::map<std::string, double>& damage_table,
                                        const ImpactParams& params) {
  ImpactAssessment out;
  out.horizon_ms = horizon_ms;
  out.probability = logistic(params.a * (d.refined_score - params.s0));
  const auto it = damage_table.find(d.severity_label.value_or("Unlabeled"));
  out.damage = it == damage_table.end() ? 0.0 : it->second;
  out.impact = out.probability * out.damage;
  return out;
}

enum class Action { order, notify_operator, log };

inline std::string_view to_string(Action a) {
  switch (a) {
    case Action::order: return "Order";
    case Action::notify_operator: return "NotifyOperator";
    case Action::log: return "Log";
  }
  return "Unknown";
}

inline Action decide_action(const ImpactAssessment& assessment, const DiagnosedAnomaly& d, double order_threshold) {
  if (!d.severity_label) return Action::notify_operator;
  return assessment.impact >= order_threshold ? Action::order : Action::log;
}

// Fulfillment ----------------------------------------------------------------

/// Enumerates stock and print candidates and picks the earliest ready_ts
/// (ties: stock before print, then smallest source id). nullopt when there is
/// neither stock nor a printer.
inline std::optional<FulfillmentPlan> plan_fulfillment(const std::string& part_id, const std::string& destination,
                                                       SimMs now, const Views& views, const Topology& topology,
                                                       const PartCatalog& parts) {
  const auto& part = parts.at(part_id);
  std::vector<FulfillmentPlan> candidates;
  for (const auto& depot : topology.depots) {
    if (views.stock_of(depot.id, part_id) <= 0) continue;
    FulfillmentPlan p;
    p.source = PlanSource::stock;
    p.source_id = depot.id;
    p.availability_ts = now;
    p.delivery_depart_ts = now;
    p.transit_ms = topology.transit(depot.location, destination);
    p.ready_ts = std::max(p.availability_ts, p.delivery_depart_ts) + p.transit_ms;
    candidates.push_back(std::move(p));
  }
  for (const auto& printer : topology.printers) {
    const SimMs start = std::max(now, views.printer_free_at(printer.id));
    const SimMs finish = start + part.print_minutes * 60'000;
    FulfillmentPlan p;
    p.source = PlanSource::print;
    p.source_id = printer.id;
    p.job = PrintJob{{}, printer.id, part_id, {}, start, finish};
    p.availability_ts = finish;
    p.delivery_depart_ts = finish;
    p.transit_ms = topology.transit(printer.location, destination);
    p.ready_ts = std::max(p.availability_ts, p.delivery_depart_ts) + p.transit_ms;
    candidates.push_back(std::move(p));
  }
  if (candidates.empty()) return std::nullopt;
  return *std::min_element(candidates.begin(), candidates.end(), [](const auto& x, const auto& y) {
    return std::tuple(x.ready_ts, x.source != PlanSource::stock, x.source_id) <
           std::tuple(y.ready_ts, y.source != PlanSource::stock, y.source_id);
  });
}

/// Earliest-available qualified staff member at `location` covering the service window.
inline std::optional<std::string> choose_staff(const std::string& location, const std::string& category,
                                               SimMs arrival_ts, SimMs service_ms,
                                               const std::vector<StaffMember>& roster) {
  const StaffMember* best = nullptr;
  for (const auto& s : roster) {
    if (s.location != location || !s.skills.contains(category)) continue;
    if (s.available_from > arrival_ts || s.available_until < arrival_ts + service_ms) continue;
    if (best == nullptr || std::tie(s.available_from, s.staff_id) < std::tie(best->available_from, best->staff_id))
      best = &s;
  }
  if (best == nullptr) return std::nullopt;
  return best->staff_id;
}

// Coordinator ----------------------------------------------------------------

struct BackendConfig {
  double order_threshold = 100.0;
  ImpactParams impact;
  SimMs horizon_ms = 3'600'000;
  std::map<std::string, double> damage_table;
};

/// ERP/vendor/staff workflow over the shared event store. Decisions read the
/// materialized views; every state change is an appended event.
class BackendCoordinator {
 public:
  BackendCoordinator(EventStore& store, PartCatalog parts, Topology topology, std::vector<StaffMember> roster,
                     std::map<std::string, Route> routes, BackendConfig config)
      : store_(store),
        parts_(std::move(parts)),
        topology_(std::move(topology)),
        roster_(std::move(roster)),
        routes_(std::move(routes)),
        config_(std::move(config)) {}

  const BackendConfig& config() const { return config_; }

  /// Impact evaluation and action for one diagnosis. Orders are requested through
  /// `erp/order` when a bus is given, otherwise handled inline.
  Action handle_diagnosis(const DiagnosedAnomaly& d, Broker* bus, SimMs now) {
    const auto assessment = evaluate_impact(d, config_.horizon_ms, config_.damage_table, config_.impact);
    const Action action = decide_action(assessment, d, config_.order_threshold);
    store_.append(now, "impact.assessed",
                  {{"report_id", d.report.report_id},
                   {"vehicle_id", d.report.vehicle_id},
                   {"probability", assessment.probability},
                   {"damage", assessment.damage},
                   {"impact", assessment.impact},
                   {"horizon_ms", assessment.horizon_ms},
                   {"action", to_string(action)}});
    if (action == Action::notify_operator) {
      notify(now, bus, {{"reason", "unlabeled_anomaly"}, {"report_id", d.report.report_id},
                        {"vehicle_id", d.report.vehicle_id}});
    } else if (action == Action::order) {
      ojson request{{"report_id", d.report.report_id},
                    {"vehicle_id", d.report.vehicle_id},
                    {"part_id", d.suspect_part_id},
                    {"episode_id", d.report.episode_id}};
      if (bus != nullptr) {
        bus->publish(Envelope{"order-request/" + d.report.report_id, std::string(kOrderTopic), now, "order_request/1",
                              request.dump(), 1},
                     "cloud");
      } else {
        handle_order_request(request, nullptr, now);
      }
    }
    return action;
  }

  /// ERP side of an order request: create (idempotent), fulfill, staff.
  MaintenanceOrder handle_order_request(const ojson& request, Broker* bus, SimMs now) {
    const auto order = create_order(request.at("vehicle_id").get<std::string>(), request.at("part_id").get<std::string>(),
                                    request.at("episode_id").get<std::string>(), request.at("report_id").get<std::string>(),
                                    "platform", now);
    if (order.status == OrderStatus::created) {
      if (fulfill_order(order.order_id, bus, now)) assign_staff(order.order_id, bus, now);
    }
    return store_.views().orders.at(order.order_id);
  }

  MaintenanceOrder create_order(const std::string& vehicle_id, const std::string& part_id, const std::string& episode_id,
                                const std::string& report_id, const std::string& trigger, SimMs now,
                                std::optional<SimMs> deadline = std::nullopt) {
    const auto& views = store_.views();
    if (auto existing = views.find_order(vehicle_id, part_id, episode_id)) return views.orders.at(*existing);
    if (!parts_.contains(part_id)) throw Error(ErrorKind::catalog, "unknown part " + part_id);
    const auto& route = route_of(vehicle_id);
    const std::string order_id = "ord-" + std::to_string(views.orders.size() + 1);
    store_.append(now, "order.created",
                  {{"order_id", order_id},
                   {"vehicle_id", vehicle_id},
                   {"part_id", part_id},
                   {"episode_id", episode_id},
                   {"report_id", report_id},
                   {"trigger", trigger},
                   {"destination", route.destination},
                   {"deadline", deadline.value_or(route.arrival_ts)}});
    return store_.views().orders.at(order_id);
  }

  std::optional<FulfillmentPlan> fulfill_order(const std::string& order_id, Broker* bus, SimMs now) {
    const auto order = store_.views().orders.at(order_id);
    if (order.status != OrderStatus::created)
      throw Error(ErrorKind::validation, "order " + order_id + " is not in Created");
    auto plan = plan_fulfillment(order.part_id, order.destination, now, store_.views(), topology_, parts_);
    if (!plan) {
      store_.append(now, "order.manual_review", {{"order_id", order_id}, {"reason", "unfulfillable"}});
      notify(now, bus, {{"reason", "unfulfillable"}, {"order_id", order_id}, {"vehicle_id", order.vehicle_id}});
      return std::nullopt;
    }
    if (plan->source == PlanSource::stock) {
      store_.append(now, "stock.decrement", {{"depot_id", plan->source_id}, {"part_id", order.part_id}, {"order_id", order_id}});
    } else {
      std::size_t jobs = 0;
      for (const auto& [printer, queue] : store_.views().printer_queues) jobs += queue.size();
      plan->job->job_id = "job-" + std::to_string(jobs + 1);
      plan->job->order_id = order_id;
      store_.append(now, "print.enqueued", job_to_json(*plan->job));
      if (bus != nullptr)
        bus->publish(Envelope{"print/" + plan->job->job_id, print_topic(plan->source_id), now, "print_job/1",
                              job_to_json(*plan->job).dump(), 1},
                     "erp");
    }
    store_.append(now, "order.fulfilling",
                  {{"order_id", order_id}, {"plan", plan_to_json(*plan)}, {"late_at_plan", plan->ready_ts > order.deadline}});
    return plan;
  }

  std::optional<std::string> assign_staff(const std::string& order_id, Broker* bus, SimMs now) {
    const auto order = store_.views().orders.at(order_id);
    const auto& part = parts_.at(order.part_id);
    auto staff = choose_staff(order.destination, part.category, order.deadline, part.service_minutes * 60'000, roster_);
    if (staff) {
      store_.append(now, "order.staffed", {{"order_id", order_id}, {"staff_id", *staff}});
    } else {
      store_.append(now, "order.unstaffed", {{"order_id", order_id}});
      notify(now, bus, {{"reason", "unstaffed"}, {"order_id", order_id}, {"vehicle_id", order.vehicle_id}});
    }
    return staff;
  }

  /// Marks a fulfilling order Ready once its part is at the destination, if that
  /// happens by the deadline. Returns whether the order changed.
  bool mark_ready(const std::string& order_id, SimMs now) {
    const auto& o = store_.views().orders.at(order_id);
    if (o.status != OrderStatus::fulfilling || o.plan->ready_ts > now || o.plan->ready_ts > o.deadline) return false;
    store_.append(now, "order.ready", {{"order_id", order_id}, {"ready_ts", o.plan->ready_ts}});
    return true;
  }

  /// Arrival: fulfilling orders of the vehicle still pending resolve to Ready or
  /// Late, then maintenance is conducted with whatever is ready.
  void handle_arrival(const std::string& vehicle_id, SimMs now) {
    std::vector<std::string> pending;
    for (const auto& [id, o] : store_.views().orders)
      if (o.vehicle_id == vehicle_id && o.status == OrderStatus::fulfilling) pending.push_back(id);
    for (const auto& id : pending) {
      const auto& o = store_.views().orders.at(id);
      const bool on_time = o.plan->ready_ts <= o.deadline;
      store_.append(now, on_time ? "order.ready" : "order.late", {{"order_id", id}, {"ready_ts", o.plan->ready_ts}});
    }
    std::vector<std::string> ready;
    for (const auto& [id, o] : store_.views().orders)
      if (o.vehicle_id == vehicle_id && o.status == OrderStatus::ready) ready.push_back(id);
    store_.append(now, "maintenance.conducted", {{"vehicle_id", vehicle_id}, {"ready_orders", ready}});
  }

  /// Baseline path: a failure found by inspection at arrival is ordered with the
  /// arrival itself as the deadline.
  void inspection_order(const std::string& vehicle_id, const std::string& part_id, const std::string& finding_id,
                        SimMs now) {
    const auto order = create_order(vehicle_id, part_id, "inspection/" + finding_id, "", "inspection", now, now);
    if (order.status == OrderStatus::created && fulfill_order(order.order_id, nullptr, now))
      assign_staff(order.order_id, nullptr, now);
  }

 private:
  const Route& route_of(const std::string& vehicle_id) const {
    const auto it = routes_.find(vehicle_id);
    if (it == routes_.end()) throw Error(ErrorKind::catalog, "no route for vehicle " + vehicle_id);
    return it->second;
  }

  void notify(SimMs now, Broker* bus, ojson payload) {
    const std::size_t n = store_.views().notifications.size() + 1;
    payload["notification_id"] = "note-" + std::to_string(n);
    store_.append(now, "ops.notify", payload);
    if (bus != nullptr)
      bus->publish(Envelope{"notify/" + std::to_string(n), std::string(kNotifyTopic), now, "notification/1",
                            payload.dump(), 1},
                   "erp");
  }

  EventStore& store_;
  PartCatalog parts_;
  Topology topology_;
  std::vector<StaffMember> roster_;
  std::map<std::string, Route> routes_;
  BackendConfig config_;
};

}  // namespace pmaint
