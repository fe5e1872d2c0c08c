#include <random>

#include <gtest/gtest.h>

#include "pmaint/backend_coord.hpp"

namespace pmaint {
namespace {

constexpr SimMs kMin = 60'000;

DiagnosedAnomaly diagnosis(double score, std::optional<std::string> label, std::string part = "pump",
                           std::string vehicle = "v1", std::string episode = "v1/ep1") {
  DiagnosedAnomaly d;
  d.report.report_id = vehicle + "/r-" + episode;
  d.report.vehicle_id = vehicle;
  d.report.episode_id = episode;
  d.refined_score = score;
  d.severity_label = std::move(label);
  d.suspect_part_id = std::move(part);
  return d;
}

// Impact ---------------------------------------------------------------------------

TEST(Impact, LogisticMidpointAndClosedForm) {
  const std::map<std::string, double> damage{{"leak", 1000.0}};
  const auto mid = evaluate_impact(diagnosis(2.0, "leak"), 0, damage, {2.0, 2.0});
  EXPECT_EQ(mid.probability, 0.5);
  EXPECT_EQ(mid.impact, 500.0);
  const auto at3 = evaluate_impact(diagnosis(3.0, "leak"), 0, damage, {2.0, 2.0});
  EXPECT_DOUBLE_EQ(at3.probability, 0.88079707797788231);  // 1 / (1 + e^-2)
  EXPECT_EQ(at3.impact, at3.probability * at3.damage);
}

TEST(Impact, ZeroOrMissingDamageAnnihilates) {
  const std::map<std::string, double> damage{{"leak", 0.0}};
  EXPECT_EQ(evaluate_impact(diagnosis(50.0, "leak"), 0, damage, {}).impact, 0.0);
  EXPECT_EQ(evaluate_impact(diagnosis(50.0, std::nullopt), 0, damage, {}).impact, 0.0);
  EXPECT_EQ(evaluate_impact(diagnosis(50.0, "other"), 0, damage, {}).damage, 0.0);
}

TEST(Impact, MonotoneInScoreAndDamage) {
  std::mt19937_64 gen(4);
  std::uniform_real_distribution<double> u(0.0, 10.0);
  for (int i = 0; i < 1000; ++i) {
    const double s1 = u(gen), s2 = u(gen), d1 = u(gen) * 100, d2 = u(gen) * 100;
    const std::map<std::string, double> t1{{"x", d1}}, t2{{"x", d2}};
    const auto lo = evaluate_impact(diagnosis(std::min(s1, s2), "x"), 0, t1, {});
    const auto hi = evaluate_impact(diagnosis(std::max(s1, s2), "x"), 0, t1, {});
    EXPECT_LE(lo.impact, hi.impact);
    EXPECT_LE(evaluate_impact(diagnosis(s1, "x"), 0, std::min(d1, d2) == d1 ? t1 : t2, {}).impact,
              evaluate_impact(diagnosis(s1, "x"), 0, std::max(d1, d2) == d1 ? t1 : t2, {}).impact);
    EXPECT_GE(lo.probability, 0.0);
    EXPECT_LE(hi.probability, 1.0);
  }
}

TEST(DecideAction, Rules) {
  ImpactAssessment a;
  a.impact = 100.0;
  EXPECT_EQ(decide_action(a, diagnosis(5, std::nullopt), 100.0), Action::notify_operator);
  EXPECT_EQ(decide_action(a, diagnosis(5, "leak"), 100.0), Action::order);
  a.impact = std::nextafter(100.0, 0.0);
  EXPECT_EQ(decide_action(a, diagnosis(5, "leak"), 100.0), Action::log);
}

// Fulfillment and staffing ---------------------------------------------------------

struct World {
  PartCatalog parts{{"pump", {"pump", "hydraulic", 60, 30}}, {"seal", {"seal", "hydraulic", 45, 30}}};
  Topology topo;
  std::vector<StaffMember> roster;
  std::map<std::string, Route> routes;

  World() {
    topo.locations = {"HND", "ITM"};
    topo.set_transit("HND", "ITM", 90 * kMin);
    topo.depots = {{"dep-HND", "HND"}, {"dep-ITM", "ITM"}};
    topo.printers = {{"pr-HND", "HND"}};
    roster = {{"alice", "HND", {"hydraulic"}, 0, 10 * 60 * kMin}};
    routes["v1"] = {"ITM", "HND", 0, 120 * kMin};
    routes["v2"] = {"ITM", "HND", 0, 120 * kMin};
  }
};

TEST(PlanFulfillment, LocalStockWins) {
  World w;
  EventStore s;
  s.append(0, "stock.init", {{"depot_id", "dep-HND"}, {"part_id", "pump"}, {"count", 1}});
  const auto plan = plan_fulfillment("pump", "HND", 10 * kMin, s.views(), w.topo, w.parts);
  ASSERT_TRUE(plan);
  EXPECT_EQ(plan->source, PlanSource::stock);
  EXPECT_EQ(plan->source_id, "dep-HND");
  EXPECT_EQ(plan->ready_ts, 10 * kMin);
  EXPECT_FALSE(plan->job);
}

TEST(PlanFulfillment, PrintOnTimeWithNoStock) {
  World w;
  EventStore s;
  const auto plan = plan_fulfillment("pump", "HND", 0, s.views(), w.topo, w.parts);
  ASSERT_TRUE(plan);
  EXPECT_EQ(plan->source, PlanSource::print);
  EXPECT_EQ(plan->ready_ts, 60 * kMin);
  EXPECT_LE(plan->ready_ts, w.routes["v1"].arrival_ts);
  EXPECT_EQ(plan->job->finish_ts, plan->job->start_ts + 60 * kMin);
}

TEST(PlanFulfillment, RemoteStockVersusLocalPrintByEnumeration) {
  World w;
  EventStore s;
  s.append(0, "stock.init", {{"depot_id", "dep-ITM"}, {"part_id", "pump"}, {"count", 3}});
  const SimMs now = 5 * kMin;
  // Enumerate candidates by hand: remote stock = now + 90 min, local print = now + 60 min.
  const SimMs stock_ready = now + 90 * kMin;
  const SimMs print_ready = now + 60 * kMin;
  const auto plan = plan_fulfillment("pump", "HND", now, s.views(), w.topo, w.parts);
  ASSERT_TRUE(plan);
  EXPECT_EQ(plan->ready_ts, std::min(stock_ready, print_ready));
  EXPECT_EQ(plan->source, PlanSource::print);
  // Destination ITM flips it: local stock now vs print 60 + 90.
  const auto other = plan_fulfillment("pump", "ITM", now, s.views(), w.topo, w.parts);
  EXPECT_EQ(other->source, PlanSource::stock);
  EXPECT_EQ(other->ready_ts, now);
}

TEST(PlanFulfillment, TieGoesToStockThenId) {
  World w;
  w.parts["pump"].print_minutes = 90;
  w.topo.depots.push_back({"dep-AAA", "HND"});
  EventStore s;
  s.append(0, "stock.init", {{"depot_id", "dep-ITM"}, {"part_id", "pump"}, {"count", 1}});
  const auto plan = plan_fulfillment("pump", "HND", 0, s.views(), w.topo, w.parts);
  EXPECT_EQ(plan->source, PlanSource::stock);
  w.topo.depots.clear();
  w.topo.printers = {{"pr-b", "HND"}, {"pr-a", "HND"}};
  EXPECT_EQ(plan_fulfillment("pump", "HND", 0, s.views(), w.topo, w.parts)->source_id, "pr-a");
}

TEST(PlanFulfillment, NothingAvailable) {
  World w;
  w.topo.printers.clear();
  EventStore s;
  EXPECT_FALSE(plan_fulfillment("pump", "HND", 0, s.views(), w.topo, w.parts));
}

TEST(ChooseStaff, Cases) {
  std::vector<StaffMember> roster{{"zed", "HND", {"hydraulic"}, 0, 1000 * kMin}};
  EXPECT_EQ(choose_staff("HND", "hydraulic", 100 * kMin, 30 * kMin, roster), std::optional<std::string>("zed"));
  EXPECT_FALSE(choose_staff("HND", "electrical", 100 * kMin, 30 * kMin, roster));
  EXPECT_FALSE(choose_staff("ITM", "hydraulic", 100 * kMin, 30 * kMin, roster));
  EXPECT_FALSE(choose_staff("HND", "hydraulic", 990 * kMin, 30 * kMin, roster));  // window too short

  std::mt19937_64 gen(12);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<StaffMember> three;
    for (const char* id : {"c", "a", "b"})
      three.push_back({id, "HND", {"hydraulic"}, static_cast<SimMs>(gen() % 50) * kMin, 500 * kMin});
    const auto got = choose_staff("HND", "hydraulic", 100 * kMin, 30 * kMin, three);
    const StaffMember* best = &three[0];
    for (const auto& s : three)
      if (s.available_from < best->available_from ||
          (s.available_from == best->available_from && s.staff_id < best->staff_id))
        best = &s;
    EXPECT_EQ(got, std::optional<std::string>(best->staff_id));
  }
}

// Coordinator ----------------------------------------------------------------------

BackendConfig config() {
  BackendConfig c;
  c.damage_table = {{"leak", 1000.0}};
  return c;
}

TEST(Coordinator, OrderPathPrintsAndStaffs) {
  World w;
  EventStore s;
  BackendCoordinator bc(s, w.parts, w.topo, w.roster, w.routes, config());
  EXPECT_EQ(bc.handle_diagnosis(diagnosis(9.0, "leak"), nullptr, 10 * kMin), Action::order);
  const auto& o = s.views().orders.at("ord-1");
  EXPECT_EQ(o.status, OrderStatus::fulfilling);
  EXPECT_EQ(o.plan->source, PlanSource::print);
  EXPECT_EQ(o.plan->ready_ts, 70 * kMin);
  EXPECT_EQ(o.staff_id, std::optional<std::string>("alice"));
  EXPECT_EQ(o.deadline, 120 * kMin);
  EXPECT_FALSE(o.late_at_plan);
  std::vector<std::string> kinds;
  for (const auto& r : s.records()) kinds.push_back(r.kind);
  EXPECT_EQ(kinds, (std::vector<std::string>{"impact.assessed", "order.created", "print.enqueued",
                                             "order.fulfilling", "order.staffed"}));
  bc.handle_arrival("v1", 120 * kMin);
  EXPECT_EQ(s.views().orders.at("ord-1").status, OrderStatus::ready);
  EXPECT_EQ(s.records().back().kind, "maintenance.conducted");
}

TEST(Coordinator, OrderSoundnessFromLog) {
  World w;
  EventStore s;
  BackendCoordinator bc(s, w.parts, w.topo, w.roster, w.routes, config());
  bc.handle_diagnosis(diagnosis(2.0, "leak"), nullptr, 0);           // 500 ≥ 100
  bc.handle_diagnosis(diagnosis(-3.0, "leak", "seal"), nullptr, 0);  // tiny impact → Log
  bc.handle_diagnosis(diagnosis(9.0, std::nullopt, "seal"), nullptr, 0);
  double last_impact = -1.0;
  std::size_t created = 0;
  for (const auto& r : s.records()) {
    if (r.kind == "impact.assessed") last_impact = r.payload.at("impact").get<double>();
    if (r.kind == "order.created") {
      ++created;
      EXPECT_GE(last_impact, 100.0);
    }
  }
  EXPECT_EQ(created, 1u);
  EXPECT_EQ(s.views().notifications.size(), 1u);
  EXPECT_EQ(s.views().notifications[0].at("reason"), "unlabeled_anomaly");
}

TEST(Coordinator, CreateOrderIsIdempotentPerEpisode) {
  World w;
  EventStore s;
  BackendCoordinator bc(s, w.parts, w.topo, w.roster, w.routes, config());
  const auto a = bc.create_order("v1", "pump", "v1/ep1", "r1", "platform", 0);
  const auto n = s.records().size();
  const auto b = bc.create_order("v1", "pump", "v1/ep1", "r2", "platform", 0);
  EXPECT_EQ(a.order_id, b.order_id);
  EXPECT_EQ(s.records().size(), n);
  const auto c = bc.create_order("v1", "seal", "v1/ep1", "r3", "platform", 0);
  EXPECT_NE(c.order_id, a.order_id);
  EXPECT_THROW(bc.create_order("v1", "nope", "v1/ep1", "r", "platform", 0), Error);
  EXPECT_THROW(bc.create_order("ghost", "pump", "e", "r", "platform", 0), Error);
}

TEST(Coordinator, UnstaffedFlagsAndNotifies) {
  World w;
  w.roster.clear();
  EventStore s;
  BackendCoordinator bc(s, w.parts, w.topo, w.roster, w.routes, config());
  bc.handle_diagnosis(diagnosis(9.0, "leak"), nullptr, 0);
  const auto& o = s.views().orders.at("ord-1");
  EXPECT_TRUE(o.unstaffed);
  EXPECT_FALSE(o.staff_id);
  EXPECT_EQ(s.views().notifications.back().at("reason"), "unstaffed");
}

TEST(Coordinator, UnfulfillableGoesToManualReview) {
  World w;
  w.topo.printers.clear();
  EventStore s;
  BackendCoordinator bc(s, w.parts, w.topo, w.roster, w.routes, config());
  bc.handle_diagnosis(diagnosis(9.0, "leak"), nullptr, 0);
  EXPECT_EQ(s.views().orders.at("ord-1").status, OrderStatus::manual_review);
  EXPECT_EQ(s.views().notifications.back().at("reason"), "unfulfillable");
}

TEST(Coordinator, PrintersNeverOverlapAndLateOrdersResolveLate) {
  World w;
  EventStore s;
  BackendCoordinator bc(s, w.parts, w.topo, w.roster, w.routes, config());
  for (int i = 0; i < 3; ++i)
    bc.handle_diagnosis(diagnosis(9.0, "leak", "pump", "v1", "v1/ep" + std::to_string(i)), nullptr, 0);
  const auto& q = s.views().printer_queues.at("pr-HND");
  ASSERT_EQ(q.size(), 3u);
  for (std::size_t i = 1; i < q.size(); ++i) EXPECT_GE(q[i].start_ts, q[i - 1].finish_ts);
  bc.handle_arrival("v1", 120 * kMin);
  EXPECT_EQ(s.views().orders.at("ord-1").status, OrderStatus::ready);
  EXPECT_EQ(s.views().orders.at("ord-2").status, OrderStatus::ready);
  EXPECT_EQ(s.views().orders.at("ord-3").status, OrderStatus::late);
  EXPECT_TRUE(s.views().orders.at("ord-3").late_at_plan);
}

TEST(Coordinator, BusRoutesOrderRequests) {
  World w;
  EventStore s;
  Broker bus;
  BackendCoordinator bc(s, w.parts, w.topo, w.roster, w.routes, config());
  bus.subscribe("erp", kOrderTopic, [&](const Delivery& d) {
    bc.handle_order_request(ojson::parse(d.envelope.payload), &bus, d.delivered_ts);
  });
  std::vector<std::string> vendor;
  bus.subscribe("vendor", "vendor/print/+", [&](const Delivery& d) { vendor.push_back(d.envelope.topic); });
  bc.handle_diagnosis(diagnosis(9.0, "leak"), &bus, 0);
  EXPECT_TRUE(s.views().orders.empty());
  bus.deliver(0);
  EXPECT_EQ(s.views().orders.size(), 1u);
  bus.deliver(0);
  EXPECT_EQ(vendor, std::vector<std::string>{"vendor/print/pr-HND"});
}

// Event store ----------------------------------------------------------------------

TEST(EventStore, FirstOffsetZeroAndContiguous) {
  EventStore s;
  EXPECT_EQ(s.append(5, "x", ojson::object()), 0u);
  EXPECT_EQ(s.append(5, "y", ojson::object()), 1u);
  try {
    s.append(4, "z", ojson::object());
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::integrity);
  }
}

TEST(EventStore, OpenOrdersEmptyAfterCreatedFulfillingReady) {
  EventStore s;
  s.append(0, "order.created", {{"order_id", "o"}, {"vehicle_id", "v"}, {"part_id", "p"}, {"episode_id", "e"},
                                {"report_id", "r"}, {"trigger", "platform"}, {"destination", "HND"}, {"deadline", 10}});
  EXPECT_EQ(s.query_view("open_orders").size(), 1u);
  FulfillmentPlan plan{PlanSource::stock, "d", std::nullopt, 0, 0, 0, 0};
  s.append(0, "order.fulfilling", {{"order_id", "o"}, {"plan", plan_to_json(plan)}, {"late_at_plan", false}});
  EXPECT_EQ(s.query_view("open_orders").size(), 1u);
  s.append(1, "order.ready", {{"order_id", "o"}, {"ready_ts", 0}});
  EXPECT_TRUE(s.query_view("open_orders").empty());
  EXPECT_EQ(s.query_view("orders").size(), 1u);
  EXPECT_THROW(s.append(2, "order.late", {{"order_id", "o"}, {"ready_ts", 0}}), Error);
}

TEST(EventStore, UnknownViewThrows) {
  EventStore s;
  try {
    s.query_view("bogus");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::unknown_view);
  }
}

TEST(EventStore, StockNeverNegativeAndConserved) {
  EventStore s;
  s.append(0, "stock.init", {{"depot_id", "d"}, {"part_id", "p"}, {"count", 2}});
  s.append(0, "stock.decrement", {{"depot_id", "d"}, {"part_id", "p"}, {"order_id", "o1"}});
  s.append(0, "stock.restock", {{"depot_id", "d"}, {"part_id", "p"}, {"count", 1}});
  s.append(0, "stock.decrement", {{"depot_id", "d"}, {"part_id", "p"}, {"order_id", "o2"}});
  s.append(0, "stock.decrement", {{"depot_id", "d"}, {"part_id", "p"}, {"order_id", "o3"}});
  EXPECT_EQ(s.views().stock_of("d", "p"), 0);
  EXPECT_THROW(s.append(0, "stock.decrement", {{"depot_id", "d"}, {"part_id", "p"}, {"order_id", "o4"}}), Error);
}

TEST(EventStore, OverlappingPrintJobRejected) {
  EventStore s;
  s.append(0, "print.enqueued", job_to_json({"j1", "pr", "p", "o1", 0, 100}));
  EXPECT_THROW(s.append(0, "print.enqueued", job_to_json({"j2", "pr", "p", "o2", 50, 150})), Error);
}

TEST(EventStore, ReplayOfLongLogMatchesLiveViewsByteForByte) {
  World w;
  for (int v = 3; v <= 60; ++v) w.routes["v" + std::to_string(v)] = {"ITM", v % 2 ? "HND" : "ITM", 0, 400 * kMin};
  w.roster.push_back({"bob", "ITM", {"hydraulic"}, 0, 1000 * kMin});
  EventStore s;
  s.append(0, "stock.init", {{"depot_id", "dep-ITM"}, {"part_id", "seal"}, {"count", 5}});
  BackendCoordinator bc(s, w.parts, w.topo, w.roster, w.routes, config());
  std::mt19937_64 gen(99);
  SimMs now = 0;
  while (s.records().size() < 500) {
    now += static_cast<SimMs>(gen() % 5) * kMin;
    const std::string vid = "v" + std::to_string(3 + gen() % 58);
    const bool labeled = gen() % 4 != 0;
    bc.handle_diagnosis(diagnosis(1.0 + static_cast<double>(gen() % 80) / 10.0,
                                  labeled ? std::optional<std::string>("leak") : std::nullopt,
                                  gen() % 2 ? "pump" : "seal", vid, vid + "/ep" + std::to_string(gen() % 3)),
                        nullptr, now);
    if (gen() % 7 == 0) bc.handle_arrival(vid, now);
  }
  ASSERT_GE(s.records().size(), 500u);
  const auto replayed = EventStore::fold(s.records());
  EXPECT_EQ(replayed.all_views().dump(), s.views().all_views().dump());

  std::stringstream ss;
  s.write_jsonl(ss);
  const auto reread = read_event_log(ss);
  EXPECT_EQ(reread, s.records());
  EXPECT_EQ(EventStore::fold(reread).all_views().dump(), s.views().all_views().dump());
}

TEST(EventLog, ReaderRejectsGapsAndBackwardsTime) {
  std::stringstream gap(R"({"offset":0,"ts":0,"kind":"a","payload":{}}
{"offset":2,"ts":0,"kind":"b","payload":{}}
)");
  EXPECT_THROW(read_event_log(gap), Error);
  std::stringstream back(R"({"offset":0,"ts":5,"kind":"a","payload":{}}
{"offset":1,"ts":4,"kind":"b","payload":{}}
)");
  EXPECT_THROW(read_event_log(back), Error);
  std::stringstream junk("{not json\n");
  EXPECT_THROW(read_event_log(junk), Error);
}

TEST(Topology, Validation) {
  World w;
  EXPECT_NO_THROW(w.topo.validate());
  auto t = w.topo;
  t.transit_ms[{"HND", "ITM"}] = 5;
  EXPECT_THROW(t.validate(), Error);
  t = w.topo;
  t.printers.push_back({"pr-X", "NRT"});
  try {
    t.validate();
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::dangling_reference);
  }
  t = w.topo;
  t.locations.push_back("NRT");
  EXPECT_THROW(t.validate(), Error);
}

}  // namespace
}  // namespace pmaint
