#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <tuple>
#include <unordered_set>
#include <utility>
#include <vector>

#include <sodium.h>

#include <nlohmann/json.hpp>

#include "pmaint/error.hpp"
#include "pmaint/random.hpp"
#include "pmaint/telemetry.hpp"

namespace pmaint {

// Topics ---------------------------------------------------------------------

inline std::vector<std::string> split_topic(std::string_view topic) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto slash = topic.find('/', start);
    out.emplace_back(topic.substr(start, slash == std::string_view::npos ? topic.npos : slash - start));
    if (slash == std::string_view::npos) break;
    start = slash + 1;
  }
  return out;
}

/// Publish topics: non-empty segments, no wildcards.
inline void validate_topic(std::string_view topic) {
  for (const auto& seg : split_topic(topic)) {
    if (seg.empty()) throw Error(ErrorKind::invalid_topic, "empty segment in '" + std::string(topic) + "'");
    if (seg.find_first_of("+#") != std::string::npos)
      throw Error(ErrorKind::invalid_topic, "wildcard in publish topic '" + std::string(topic) + "'");
  }
}

inline void validate_filter(const std::vector<std::string>& filter) {
  for (std::size_t i = 0; i < filter.size(); ++i) {
    const auto& seg = filter[i];
    if (seg.empty()) throw Error(ErrorKind::invalid_filter, "empty filter segment");
    const bool has_wild = seg.find_first_of("+#") != std::string::npos;
    if (has_wild && seg != "+" && seg != "#")
      throw Error(ErrorKind::invalid_filter, "wildcard must occupy a whole segment: " + seg);
    if (seg == "#" && i + 1 != filter.size())
      throw Error(ErrorKind::invalid_filter, "'#' allowed only as the final segment");
  }
}

/// MQTT 3.1.1 wildcard match: `+` is exactly one level, a trailing `#` is zero or
/// more remaining levels.
inline bool topic_matches(const std::vector<std::string>& filter,
                          const std::vector<std::string>& topic) {
  validate_filter(filter);
  std::size_t i = 0;
  for (; i < filter.size(); ++i) {
    if (filter[i] == "#") return true;
    if (i >= topic.size()) return false;
    if (filter[i] != "+" && filter[i] != topic[i]) return false;
  }
  return i == topic.size();
}

inline bool topic_matches(std::string_view filter, std::string_view topic) {
  return topic_matches(split_topic(filter), split_topic(topic));
}

// Envelope -------------------------------------------------------------------

struct Envelope {
  std::string message_id;
  std::string topic;
  SimMs publish_ts = 0;
  std::string schema_tag;
  std::string payload;
  std::uint32_t attempt = 1;

  bool operator==(const Envelope&) const = default;
};

inline std::string base64_encode(std::string_view bytes) {
  if (sodium_init() < 0) throw Error(ErrorKind::integrity, "libsodium failed to initialise");
  std::string out(sodium_base64_encoded_len(bytes.size(), sodium_base64_VARIANT_ORIGINAL), '\0');
  sodium_bin2base64(out.data(), out.size(), reinterpret_cast<const unsigned char*>(bytes.data()),
                    bytes.size(), sodium_base64_VARIANT_ORIGINAL);
  out.resize(out.size() - 1);  // trailing NUL
  return out;
}

inline std::string base64_decode(std::string_view text) {
  if (sodium_init() < 0) throw Error(ErrorKind::integrity, "libsodium failed to initialise");
  std::string out(text.size(), '\0');
  std::size_t len = 0;
  if (sodium_base642bin(reinterpret_cast<unsigned char*>(out.data()), out.size(), text.data(),
                        text.size(), nullptr, &len, nullptr, sodium_base64_VARIANT_ORIGINAL) != 0)
    throw Error(ErrorKind::parse, "invalid base64 payload");
  out.resize(len);
  return out;
}

inline nlohmann::ordered_json envelope_to_json(const Envelope& e) {
  return {{"id", e.message_id}, {"topic", e.topic},     {"ts", e.publish_ts},
          {"schema", e.schema_tag}, {"attempt", e.attempt}, {"payload", base64_encode(e.payload)}};
}

inline Envelope envelope_from_json(const nlohmann::ordered_json& j) {
  Envelope e;
  e.message_id = j.at("id").get<std::string>();
  e.topic = j.at("topic").get<std::string>();
  e.publish_ts = j.at("ts").get<SimMs>();
  e.schema_tag = j.at("schema").get<std::string>();
  e.attempt = j.at("attempt").get<std::uint32_t>();
  e.payload = base64_decode(j.at("payload").get<std::string>());
  return e;
}

// Broker ---------------------------------------------------------------------

struct FaultModel {
  static constexpr std::uint32_t unbounded_retries = std::numeric_limits<std::uint32_t>::max();

  SimMs latency_ms = 0;  // each copy is delayed by a uniform draw in [0, latency_ms]
  double drop_probability = 0.0;
  double duplicate_probability = 0.0;
  std::uint32_t max_retries = 3;
  SimMs retry_backoff_ms = 1000;

  void validate() const {
    if (latency_ms < 0) throw Error(ErrorKind::validation, "latency_ms must be >= 0");
    if (!(drop_probability >= 0.0 && drop_probability < 1.0))
      throw Error(ErrorKind::validation, "drop_probability must be in [0, 1)");
    if (!(duplicate_probability >= 0.0 && duplicate_probability < 1.0))
      throw Error(ErrorKind::validation, "duplicate_probability must be in [0, 1)");
    if (retry_backoff_ms <= 0) throw Error(ErrorKind::validation, "retry_backoff_ms must be > 0");
  }
};

struct Delivery {
  std::string client_id;
  Envelope envelope;
  SimMs delivered_ts = 0;
};

struct BusEvent {
  enum class Kind { publish, deliver, drop, duplicate_suppressed, dead_letter };
  Kind kind;
  SimMs ts = 0;
  std::string message_id;
  std::string topic;
  std::string client_id;  // empty for publish
  std::uint32_t attempt = 1;
  std::size_t receipt = 0;  // publish only
};

inline std::string_view to_string(BusEvent::Kind k) {
  switch (k) {
    case BusEvent::Kind::publish: return "bus.publish";
    case BusEvent::Kind::deliver: return "bus.deliver";
    case BusEvent::Kind::drop: return "bus.drop";
    case BusEvent::Kind::duplicate_suppressed: return "bus.duplicate_suppressed";
    case BusEvent::Kind::dead_letter: return "bus.dead_letter";
  }
  return "bus.unknown";
}

/// In-process broker with at-least-once delivery and subscriber-side dedup.
///
/// Each subscription keeps one FIFO per (publisher, topic); only the head of a FIFO
/// is eligible for delivery, so a dropped head holds back its successors until it is
/// retried or dead-lettered. Ready heads are served in (due time, publish order).
class Broker {
 public:
  using Handler = std::function<void(const Delivery&)>;

  explicit Broker(FaultModel faults = {}, std::uint64_t seed = 0)
      : faults_(faults), rng_(seed) {
    faults_.validate();
  }

  Broker(const Broker&) = delete;
  Broker& operator=(const Broker&) = delete;

  void subscribe(std::string client_id, std::string_view filter, Handler handler = {}) {
    if (delivering_) throw Error(ErrorKind::validation, "subscribe called from a delivery handler");
    auto segments = split_topic(filter);
    validate_filter(segments);
    subs_.push_back(Subscription{std::move(client_id), std::move(segments), std::move(handler), {}, {}});
  }

  /// Returns how many subscription queues received a copy.
  std::size_t publish(Envelope envelope, const std::string& publisher = {}) {
    validate_topic(envelope.topic);
    if (envelope.message_id.empty())
      throw Error(ErrorKind::validation, "envelope message_id is empty");
    if (!ids_.insert(envelope.message_id).second)
      throw Error(ErrorKind::duplicate_id, "message_id already published: " + envelope.message_id);
    envelope.attempt = 1;

    const auto topic = split_topic(envelope.topic);
    std::vector<std::size_t> targets;
    for (std::size_t i = 0; i < subs_.size(); ++i)
      if (topic_matches(subs_[i].filter, topic)) targets.push_back(i);

    events_.push_back({BusEvent::Kind::publish, envelope.publish_ts, envelope.message_id,
                       envelope.topic, {}, 1, targets.size()});
    log_.push_back(envelope);
    const std::size_t receipt = targets.size();
    PendingPublish pending{std::move(envelope), publisher, std::move(targets)};
    if (delivering_) deferred_.push_back(std::move(pending));
    else enqueue(std::move(pending));
    return receipt;
  }

  /// Attempts every delivery due at or before `until`, invoking handlers for first
  /// receptions. Publishes made from handlers are enqueued after the round ends.
  std::vector<Delivery> deliver(SimMs until) {
    std::vector<Delivery> out;
    delivering_ = true;
    while (!ready_.empty() && std::get<0>(*ready_.begin()) <= until) {
      const auto [due, seq, sub_index, stream_key] = *ready_.begin();
      ready_.erase(ready_.begin());
      auto& sub = subs_[sub_index];
      auto& stream = sub.streams.at(stream_key);
      auto& head = stream.front();

      if (rng_.bernoulli(faults_.drop_probability)) {
        events_.push_back({BusEvent::Kind::drop, due, head.envelope.message_id, head.envelope.topic,
                           sub.client_id, head.envelope.attempt, 0});
        if (faults_.max_retries == FaultModel::unbounded_retries ||
            head.envelope.attempt <= faults_.max_retries) {
          head.envelope.attempt += 1;
          head.due = due + faults_.retry_backoff_ms;
          ready_.emplace(head.due, head.seq, sub_index, stream_key);
        } else {
          events_.push_back({BusEvent::Kind::dead_letter, due, head.envelope.message_id,
                             head.envelope.topic, sub.client_id, head.envelope.attempt, 0});
          dead_letters_.push_back(head.envelope);
          advance(sub_index, stream_key, due);
        }
        continue;
      }

      const bool duplicated = rng_.bernoulli(faults_.duplicate_probability);
      const int copies = duplicated ? 2 : 1;
      for (int c = 0; c < copies; ++c) {
        if (!sub.seen_ids.insert(head.envelope.message_id).second) {
          events_.push_back({BusEvent::Kind::duplicate_suppressed, due, head.envelope.message_id,
                             head.envelope.topic, sub.client_id, head.envelope.attempt, 0});
          continue;
        }
        events_.push_back({BusEvent::Kind::deliver, due, head.envelope.message_id,
                           head.envelope.topic, sub.client_id, head.envelope.attempt, 0});
        Delivery d{sub.client_id, head.envelope, due};
        if (sub.handler) sub.handler(d);
        out.push_back(std::move(d));
      }
      advance(sub_index, stream_key, due);
    }
    delivering_ = false;
    auto deferred = std::move(deferred_);
    deferred_.clear();
    for (auto& p : deferred) enqueue(std::move(p));
    return out;
  }

  std::optional<SimMs> next_due() const {
    if (ready_.empty()) return std::nullopt;
    return std::get<0>(*ready_.begin());
  }

  std::size_t subscriber_count() const { return subs_.size(); }
  const std::vector<Envelope>& log() const { return log_; }
  const std::vector<Envelope>& dead_letters() const { return dead_letters_; }
  const std::vector<BusEvent>& events() const { return events_; }

  std::vector<BusEvent> drain_events() {
    auto out = std::move(events_);
    events_.clear();
    return out;
  }

 private:
  using StreamKey = std::pair<std::string, std::string>;  // (publisher, topic)

  struct Pending {
    Envelope envelope;
    SimMs due = 0;
    std::uint64_t seq = 0;
  };

  struct Subscription {
    std::string client_id;
    std::vector<std::string> filter;
    Handler handler;
    std::map<StreamKey, std::deque<Pending>> streams;
    std::unordered_set<std::string> seen_ids;
  };

  struct PendingPublish {
    Envelope envelope;
    std::string publisher;
    std::vector<std::size_t> targets;
  };

  void enqueue(PendingPublish p) {
    const std::uint64_t seq = next_seq_++;
    for (std::size_t sub_index : p.targets) {
      const SimMs due = p.envelope.publish_ts + rng_.uniform_int(0, faults_.latency_ms);
      StreamKey key{p.publisher, p.envelope.topic};
      auto& stream = subs_[sub_index].streams[key];
      stream.push_back(Pending{p.envelope, due, seq});
      if (stream.size() == 1) ready_.emplace(due, seq, sub_index, key);
    }
  }

  // Pops the head and makes the successor eligible no earlier than `now`.
  void advance(std::size_t sub_index, const StreamKey& key, SimMs now) {
    auto& stream = subs_[sub_index].streams.at(key);
    stream.pop_front();
    if (stream.empty()) return;
    auto& next = stream.front();
    next.due = std::max(next.due, now);
    ready_.emplace(next.due, next.seq, sub_index, key);
  }

  FaultModel faults_;
  Rng rng_;
  std::vector<Subscription> subs_;
  std::set<std::tuple<SimMs, std::uint64_t, std::size_t, StreamKey>> ready_;
  std::unordered_set<std::string> ids_;
  std::vector<Envelope> log_;
  std::vector<Envelope> dead_letters_;
  std::vector<BusEvent> events_;
  std::vector<PendingPublish> deferred_;
  std::uint64_t next_seq_ = 0;
  bool delivering_ = false;
};

}  // namespace pmaint
