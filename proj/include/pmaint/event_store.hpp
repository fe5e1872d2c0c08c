#pragma once

#include <cstdint>
#include <istream>
#include <limits>
#include <map>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <string_view>
#include <tuple>
#include <vector>

#include <nlohmann/json.hpp>

#include "pmaint/error.hpp"
#include "pmaint/telemetry.hpp"

namespace pmaint {

using ojson = nlohmann::ordered_json;

struct EventRecord {
  std::uint64_t offset = 0;
  SimMs ts = 0;
  std::string kind;
  ojson payload;

  bool operator==(const EventRecord&) const = default;
};

inline ojson record_to_json(const EventRecord& r) {
  return {{"offset", r.offset}, {"ts", r.ts}, {"kind", r.kind}, {"payload", r.payload}};
}

// Backend workflow objects -------------------------------------------------------

struct PrintJob {
  std::string job_id;
  std::string printer_id;
  std::string part_id;
  std::string order_id;
  SimMs start_ts = 0;
  SimMs finish_ts = 0;

  bool operator==(const PrintJob&) const = default;
};

enum class PlanSource { stock, print };

struct FulfillmentPlan {
  PlanSource source = PlanSource::stock;
  std::string source_id;  // depot or printer
  std::optional<PrintJob> job;
  SimMs availability_ts = 0;
  SimMs delivery_depart_ts = 0;
  SimMs transit_ms = 0;
  SimMs ready_ts = 0;  // = max(availability_ts, delivery_depart_ts) + transit_ms

  bool operator==(const FulfillmentPlan&) const = default;
};

enum class OrderStatus { created, fulfilling, ready, late, manual_review };

inline std::string_view to_string(OrderStatus s) {
  switch (s) {
    case OrderStatus::created: return "Created";
    case OrderStatus::fulfilling: return "Fulfilling";
    case OrderStatus::ready: return "Ready";
    case OrderStatus::late: return "Late";
    case OrderStatus::manual_review: return "ManualReview";
  }
  return "Unknown";
}

struct MaintenanceOrder {
  std::string order_id;
  std::string vehicle_id;
  std::string part_id;
  std::string episode_id;
  std::string report_id;
  std::string trigger;  // "platform" or "inspection"
  std::string destination;
  SimMs deadline = 0;
  OrderStatus status = OrderStatus::created;
  std::optional<std::string> staff_id;
  bool unstaffed = false;
  bool late_at_plan = false;
  std::optional<FulfillmentPlan> plan;

  bool open() const { return status == OrderStatus::created || status == OrderStatus::fulfilling; }

  bool operator==(const MaintenanceOrder&) const = default;
};

inline ojson job_to_json(const PrintJob& j) {
  return {{"job_id", j.job_id},     {"printer_id", j.printer_id}, {"part_id", j.part_id},
          {"order_id", j.order_id}, {"start_ts", j.start_ts},     {"finish_ts", j.finish_ts}};
}

inline PrintJob job_from_json(const ojson& j) {
  return {j.at("job_id").get<std::string>(),   j.at("printer_id").get<std::string>(),
          j.at("part_id").get<std::string>(),  j.at("order_id").get<std::string>(),
          j.at("start_ts").get<SimMs>(),       j.at("finish_ts").get<SimMs>()};
}

inline ojson plan_to_json(const FulfillmentPlan& p) {
  return {{"source", p.source == PlanSource::stock ? "stock" : "print"},
          {"source_id", p.source_id},
          {"job", p.job ? job_to_json(*p.job) : ojson()},
          {"availability_ts", p.availability_ts},
          {"delivery_depart_ts", p.delivery_depart_ts},
          {"transit_ms", p.transit_ms},
          {"ready_ts", p.ready_ts}};
}

inline FulfillmentPlan plan_from_json(const ojson& j) {
  FulfillmentPlan p;
  p.source = j.at("source").get<std::string>() == "stock" ? PlanSource::stock : PlanSource::print;
  p.source_id = j.at("source_id").get<std::string>();
  if (!j.at("job").is_null()) p.job = job_from_json(j.at("job"));
  p.availability_ts = j.at("availability_ts").get<SimMs>();
  p.delivery_depart_ts = j.at("delivery_depart_ts").get<SimMs>();
  p.transit_ms = j.at("transit_ms").get<SimMs>();
  p.ready_ts = j.at("ready_ts").get<SimMs>();
  return p;
}

inline ojson order_to_json(const MaintenanceOrder& o) {
  return {{"order_id", o.order_id},
          {"vehicle_id", o.vehicle_id},
          {"part_id", o.part_id},
          {"episode_id", o.episode_id},
          {"report_id", o.report_id},
          {"trigger", o.trigger},
          {"destination", o.destination},
          {"deadline", o.deadline},
          {"status", to_string(o.status)},
          {"staff_id", o.staff_id ? ojson(*o.staff_id) : ojson()},
          {"unstaffed", o.unstaffed},
          {"late_at_plan", o.late_at_plan},
          {"plan", o.plan ? plan_to_json(*o.plan) : ojson()}};
}

// Materialized views -----------------------------------------------------------

/// Every view is a left fold of the event log; `apply` is the only mutator.
struct Views {
  std::map<std::string, MaintenanceOrder> orders;
  std::map<std::tuple<std::string, std::string, std::string>, std::string> order_keys;
  std::map<std::string, std::map<std::string, std::int64_t>> stock;  // depot -> part -> count
  std::map<std::string, std::vector<PrintJob>> printer_queues;
  std::vector<ojson> notifications;

  static constexpr std::string_view names[] = {"open_orders", "orders", "stock_levels",
                                               "printer_queues", "notifications"};

  void apply(const EventRecord& r) {
    const auto& p = r.payload;
    const auto& k = r.kind;
    if (k == "stock.init" || k == "stock.restock") {
      stock[p.at("depot_id").get<std::string>()][p.at("part_id").get<std::string>()] +=
          p.at("count").get<std::int64_t>();
    } else if (k == "stock.decrement") {
      auto& count = stock[p.at("depot_id").get<std::string>()][p.at("part_id").get<std::string>()];
      if (count <= 0) throw Error(ErrorKind::integrity, "stock would go negative at offset " + std::to_string(r.offset));
      count -= 1;
    } else if (k == "print.enqueued") {
      PrintJob job = job_from_json(p);
      auto& queue = printer_queues[job.printer_id];
      if (!queue.empty() && job.start_ts < queue.back().finish_ts)
        throw Error(ErrorKind::integrity, "overlapping print job " + job.job_id);
      queue.push_back(std::move(job));
    } else if (k == "order.created") {
      MaintenanceOrder o;
      o.order_id = p.at("order_id").get<std::string>();
      o.vehicle_id = p.at("vehicle_id").get<std::string>();
      o.part_id = p.at("part_id").get<std::string>();
      o.episode_id = p.at("episode_id").get<std::string>();
      o.report_id = p.at("report_id").get<std::string>();
      o.trigger = p.at("trigger").get<std::string>();
      o.destination = p.at("destination").get<std::string>();
      o.deadline = p.at("deadline").get<SimMs>();
      order_keys[{o.vehicle_id, o.part_id, o.episode_id}] = o.order_id;
      orders[o.order_id] = std::move(o);
    } else if (k == "order.fulfilling") {
      auto& o = order(p, r);
      transition(o, OrderStatus::created, OrderStatus::fulfilling, r);
      o.plan = plan_from_json(p.at("plan"));
      o.late_at_plan = p.at("late_at_plan").get<bool>();
    } else if (k == "order.ready") {
      transition(order(p, r), OrderStatus::fulfilling, OrderStatus::ready, r);
    } else if (k == "order.late") {
      transition(order(p, r), OrderStatus::fulfilling, OrderStatus::late, r);
    } else if (k == "order.manual_review") {
      transition(order(p, r), OrderStatus::created, OrderStatus::manual_review, r);
    } else if (k == "order.staffed") {
      order(p, r).staff_id = p.at("staff_id").get<std::string>();
    } else if (k == "order.unstaffed") {
      order(p, r).unstaffed = true;
    } else if (k == "ops.notify") {
      notifications.push_back(p);
    }
  }

  std::optional<std::string> find_order(const std::string& vehicle, const std::string& part,
                                        const std::string& episode) const {
    if (auto it = order_keys.find({vehicle, part, episode}); it != order_keys.end()) return it->second;
    return std::nullopt;
  }

  SimMs printer_free_at(const std::string& printer_id) const {
    const auto it = printer_queues.find(printer_id);
    if (it == printer_queues.end() || it->second.empty()) return std::numeric_limits<SimMs>::min();
    return it->second.back().finish_ts;
  }

  std::int64_t stock_of(const std::string& depot, const std::string& part) const {
    const auto d = stock.find(depot);
    if (d == stock.end()) return 0;
    const auto c = d->second.find(part);
    return c == d->second.end() ? 0 : c->second;
  }

  ojson view(std::string_view name) const {
    if (name == "open_orders" || name == "orders") {
      ojson out = ojson::array();
      for (const auto& [id, o] : orders)
        if (name == "orders" || o.open()) out.push_back(order_to_json(o));
      return out;
    }
    if (name == "stock_levels") {
      ojson out = ojson::object();
      for (const auto& [depot, parts] : stock) {
        ojson d = ojson::object();
        for (const auto& [part, count] : parts) d[part] = count;
        out[depot] = d;
      }
      return out;
    }
    if (name == "printer_queues") {
      ojson out = ojson::object();
      for (const auto& [printer, jobs] : printer_queues) {
        ojson q = ojson::array();
        for (const auto& j : jobs) q.push_back(job_to_json(j));
        out[printer] = q;
      }
      return out;
    }
    if (name == "notifications") {
      ojson out = ojson::array();
      for (const auto& n : notifications) out.push_back(n);
      return out;
    }
    throw Error(ErrorKind::unknown_view, std::string(name));
  }

  ojson all_views() const {
    ojson out = ojson::object();
    for (auto name : names) out[std::string(name)] = view(name);
    return out;
  }

 private:
  MaintenanceOrder& order(const ojson& p, const EventRecord& r) {
    const auto id = p.at("order_id").get<std::string>();
    const auto it = orders.find(id);
    if (it == orders.end())
      throw Error(ErrorKind::integrity, "event at offset " + std::to_string(r.offset) + " names unknown order " + id);
    return it->second;
  }

  static void transition(MaintenanceOrder& o, OrderStatus from, OrderStatus to, const EventRecord& r) {
    if (o.status != from)
      throw Error(ErrorKind::integrity, "order " + o.order_id + " cannot go " + std::string(to_string(o.status)) +
                                            " -> " + std::string(to_string(to)) + " at offset " +
                                            std::to_string(r.offset));
    o.status = to;
  }
};

// Store --------------------------------------------------------------------------

/// Append-only, single-writer event log with live views.
class EventStore {
 public:
  std::uint64_t append(SimMs ts, std::string kind, ojson payload) {
    if (!records_.empty() && ts < records_.back().ts)
      throw Error(ErrorKind::integrity, "event '" + kind + "' at ts " + std::to_string(ts) +
                                            " precedes ts " + std::to_string(records_.back().ts));
    EventRecord r{records_.size(), ts, std::move(kind), std::move(payload)};
    views_.apply(r);
    records_.push_back(std::move(r));
    return records_.back().offset;
  }

  const std::vector<EventRecord>& records() const { return records_; }
  const Views& views() const { return views_; }
  ojson query_view(std::string_view name) const { return views_.view(name); }

  static Views fold(std::span<const EventRecord> log) {
    Views v;
    for (const auto& r : log) v.apply(r);
    return v;
  }

  void write_jsonl(std::ostream& out) const {
    for (const auto& r : records_) out << record_to_json(r).dump() << '\n';
  }

 private:
  std::vector<EventRecord> records_;
  Views views_;
};

/// Parses a JSON-lines log, checking offsets are contiguous from 0 and timestamps
/// never decrease.
inline std::vector<EventRecord> read_event_log(std::istream& in) {
  std::vector<EventRecord> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    EventRecord r;
    try {
      const auto j = ojson::parse(line);
      r.offset = j.at("offset").get<std::uint64_t>();
      r.ts = j.at("ts").get<SimMs>();
      r.kind = j.at("kind").get<std::string>();
      r.payload = j.at("payload");
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorKind::integrity, "line " + std::to_string(line_no) + ": " + e.what());
    }
    if (r.offset != out.size())
      throw Error(ErrorKind::integrity, "line " + std::to_string(line_no) + ": offset " +
                                            std::to_string(r.offset) + " breaks contiguity");
    if (!out.empty() && r.ts < out.back().ts)
      throw Error(ErrorKind::integrity, "line " + std::to_string(line_no) + ": timestamp goes backwards");
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace pmaint
