#include <map>

#include <gtest/gtest.h>

#include "bus_laws.hpp"
#include "pmaint/message_bus.hpp"

namespace pmaint {
namespace {

Envelope env(std::string id, std::string topic, SimMs ts = 0, std::string payload = "x") {
  return {std::move(id), std::move(topic), ts, "t/1", std::move(payload), 1};
}

TEST(TopicMatches, LawTable) {
  ASSERT_GE(topic_laws().size(), 30u);
  for (const auto& law : topic_laws())
    EXPECT_EQ(topic_matches(law.filter, law.topic), law.matches) << law.filter << " vs " << law.topic;
}

TEST(TopicMatches, InvalidFiltersRejected) {
  for (const auto& f : bad_filters()) {
    try {
      topic_matches(f, "fleet/7");
      ADD_FAILURE() << f;
    } catch (const Error& e) {
      EXPECT_EQ(e.kind(), ErrorKind::invalid_filter) << f;
    }
  }
}

TEST(TopicMatches, WildcardFreeFilterIsEquality) {
  const std::vector<std::string> topics{"a", "a/b", "a/b/c", "b/a", "fleet/1/anomaly", "fleet/1"};
  for (const auto& f : topics)
    for (const auto& t : topics) EXPECT_EQ(topic_matches(f, t), f == t);
  for (const auto& t : topics) EXPECT_TRUE(topic_matches("#", t));
}

TEST(Broker, ZeroSubscribersReceiptZeroButLogged) {
  Broker b;
  EXPECT_EQ(b.publish(env("m1", "fleet/1/anomaly")), 0u);
  EXPECT_EQ(b.log().size(), 1u);
  EXPECT_TRUE(b.deliver(1'000'000).empty());
  EXPECT_TRUE(b.dead_letters().empty());
}

TEST(Broker, FanOutReceipt) {
  Broker b;
  b.subscribe("a", "fleet/#");
  b.subscribe("b", "fleet/#");
  b.subscribe("c", "erp/order");
  EXPECT_EQ(b.publish(env("m1", "fleet/1/anomaly")), 2u);
}

TEST(Broker, RejectsDuplicateIdAndBadTopic) {
  Broker b;
  b.publish(env("m1", "a/b"));
  try {
    b.publish(env("m1", "a/b"));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::duplicate_id);
  }
  try {
    b.publish(env("m2", "a/+"));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::invalid_topic);
  }
  EXPECT_THROW(b.publish(env("m3", "a//b")), Error);
}

TEST(Broker, FaultFreeOrderEqualsPublishOrder) {
  Broker b;
  std::vector<std::string> got;
  b.subscribe("s", "#", [&](const Delivery& d) { got.push_back(d.envelope.message_id); });
  std::vector<std::string> sent;
  for (int i = 0; i < 50; ++i) {
    sent.push_back("m" + std::to_string(i));
    b.publish(env(sent.back(), i % 2 ? "a/x" : "a/y", i), i % 3 ? "p1" : "p2");
  }
  b.deliver(1000);
  EXPECT_EQ(got, sent);
}

TEST(Broker, NothingDeliveredBeforeDue) {
  Broker b({.latency_ms = 0});
  int calls = 0;
  b.subscribe("s", "#", [&](const Delivery&) { ++calls; });
  b.publish(env("m", "a", 500));
  b.deliver(499);
  EXPECT_EQ(calls, 0);
  EXPECT_EQ(b.next_due(), std::optional<SimMs>(500));
  b.deliver(500);
  EXPECT_EQ(calls, 1);
}

TEST(Broker, SeededDropReplay) {
  // drop 0.5, max_retries 10, seed 7; values frozen from an independent replay of
  // the raw engine stream.
  FaultModel f;
  f.drop_probability = 0.5;
  f.max_retries = 10;
  f.retry_backoff_ms = 1000;
  Broker b(f, 7);
  std::vector<std::pair<std::uint32_t, SimMs>> landed;
  b.subscribe("s", "t", [&](const Delivery& d) { landed.emplace_back(d.envelope.attempt, d.delivered_ts); });
  for (int i = 0; i < 8; ++i) b.publish(env("m" + std::to_string(i), "t", 0), "p");
  b.deliver(1'000'000);
  const std::vector<std::pair<std::uint32_t, SimMs>> expected{
      {1, 0}, {2, 1000}, {2, 2000}, {2, 3000}, {1, 3000}, {2, 4000}, {1, 4000}, {1, 4000}};
  EXPECT_EQ(landed, expected);
}

TEST(Broker, RetryExhaustionDeadLetters) {
  FaultModel f;
  f.drop_probability = 0.999999;
  f.max_retries = 2;
  Broker b(f, 1);
  int calls = 0;
  b.subscribe("s", "t", [&](const Delivery&) { ++calls; });
  b.publish(env("m", "t"));
  b.deliver(1'000'000);
  EXPECT_EQ(calls, 0);
  ASSERT_EQ(b.dead_letters().size(), 1u);
  EXPECT_EQ(b.dead_letters()[0].attempt, 3u);
  std::size_t drops = 0;
  for (const auto& e : b.events()) drops += e.kind == BusEvent::Kind::drop;
  EXPECT_EQ(drops, 3u);
}

TEST(Broker, DuplicateDrawInvokesHandlerOnce) {
  FaultModel f;
  f.duplicate_probability = 0.999999;
  Broker b(f, 3);
  std::map<std::string, int> calls;
  b.subscribe("s", "t", [&](const Delivery& d) { ++calls[d.envelope.message_id]; });
  for (int i = 0; i < 20; ++i) b.publish(env("m" + std::to_string(i), "t"));
  b.deliver(10);
  EXPECT_EQ(calls.size(), 20u);
  for (const auto& [id, n] : calls) EXPECT_EQ(n, 1) << id;
  std::size_t suppressed = 0;
  for (const auto& e : b.events()) suppressed += e.kind == BusEvent::Kind::duplicate_suppressed;
  EXPECT_EQ(suppressed, 20u);
}

struct Trace {
  std::vector<std::tuple<std::string, std::string, SimMs, std::uint32_t>> deliveries;
  std::size_t dead = 0;
};

Trace faulty_run(std::uint64_t seed, std::uint32_t retries) {
  FaultModel f{.latency_ms = 40, .drop_probability = 0.4, .duplicate_probability = 0.3,
               .max_retries = retries, .retry_backoff_ms = 25};
  Broker b(f, seed);
  Trace tr;
  for (const char* c : {"a", "b"})
    b.subscribe(c, c == std::string("a") ? "fleet/#" : "fleet/+/anomaly", [&tr, c](const Delivery& d) {
      tr.deliveries.emplace_back(c, d.envelope.message_id, d.delivered_ts, d.envelope.attempt);
    });
  for (int i = 0; i < 300; ++i)
    b.publish(env("m" + std::to_string(i), "fleet/" + std::to_string(i % 4) + "/anomaly", i * 3),
              "gw" + std::to_string(i % 4));
  b.deliver(std::numeric_limits<SimMs>::max());
  tr.dead = b.dead_letters().size();
  return tr;
}

TEST(Broker, DeterministicForSeed) {
  const auto a = faulty_run(11, 3);
  const auto b = faulty_run(11, 3);
  EXPECT_EQ(a.deliveries, b.deliveries);
  EXPECT_EQ(a.dead, b.dead);
  EXPECT_NE(a.deliveries, faulty_run(12, 3).deliveries);
}

TEST(Broker, AtLeastOnceFifoWithUnboundedRetries) {
  const auto tr = faulty_run(5, FaultModel::unbounded_retries);
  EXPECT_EQ(tr.dead, 0u);
  EXPECT_EQ(tr.deliveries.size(), 600u);
  std::map<std::pair<std::string, std::string>, int> last;  // (client, topic) -> last index
  std::map<std::pair<std::string, std::string>, int> count;
  SimMs prev_ts = 0;
  for (const auto& [client, id, ts, attempt] : tr.deliveries) {
    EXPECT_EQ(++count[std::make_pair(client, id)], 1);
    const int n = std::stoi(id.substr(1));
    const auto key = std::make_pair(client, std::to_string(n % 4));
    if (last.contains(key)) EXPECT_GT(n, last[key]);
    last[key] = n;
    EXPECT_GE(attempt, 1u);
    EXPECT_GE(ts, prev_ts);
    prev_ts = ts;
  }
}

TEST(Broker, ReentrantPublishIsDeferred) {
  Broker b;
  std::vector<std::string> order;
  b.subscribe("relay", "in", [&](const Delivery& d) {
    order.push_back("in:" + d.envelope.message_id);
    b.publish(env("out-" + d.envelope.message_id, "out", d.delivered_ts));
  });
  b.subscribe("sink", "out", [&](const Delivery& d) { order.push_back("out:" + d.envelope.message_id); });
  b.publish(env("1", "in"));
  b.publish(env("2", "in"));
  b.deliver(0);
  EXPECT_EQ(order, (std::vector<std::string>{"in:1", "in:2"}));
  b.deliver(0);
  EXPECT_EQ(order, (std::vector<std::string>{"in:1", "in:2", "out:out-1", "out:out-2"}));
}

TEST(Broker, SubscribeFromHandlerRejected) {
  Broker b;
  b.subscribe("s", "t", [&](const Delivery&) { b.subscribe("x", "t"); });
  b.publish(env("m", "t"));
  EXPECT_THROW(b.deliver(0), Error);
}

TEST(Envelope, JsonRoundTripWithBinaryPayload) {
  std::string payload{"\x00\x01\xff{\"a\":1}", 9};
  const Envelope e{"id-1", "fleet/3/anomaly", 1234, "anomaly_report/1", payload, 2};
  const auto j = envelope_to_json(e);
  std::vector<std::string> keys;
  for (const auto& [k, v] : j.items()) keys.push_back(k);
  EXPECT_EQ(keys, (std::vector<std::string>{"id", "topic", "ts", "schema", "attempt", "payload"}));
  EXPECT_EQ(envelope_from_json(j), e);
  EXPECT_EQ(base64_encode("hello"), "aGVsbG8=");
  EXPECT_THROW(base64_decode("!!!"), Error);
}

TEST(FaultModel, Validation) {
  EXPECT_THROW(Broker(FaultModel{.drop_probability = 1.0}), Error);
  EXPECT_THROW(Broker(FaultModel{.latency_ms = -1}), Error);
  EXPECT_THROW(Broker(FaultModel{.retry_backoff_ms = 0}), Error);
}

}  // namespace
}  // namespace pmaint
