#pragma once

#include <atomic>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>
#include <vector>

#include "twinforge/core/clock.hpp"
#include "twinforge/store/record_file.hpp"

namespace twinforge::bus {

using Headers = std::map<std::string, std::string>;

struct Message {
  std::uint64_t offset = 0;
  TimestampNs timestamp = 0;
  Headers headers;
  std::string payload;
};

struct TopicInfo {
  std::string name;
  std::uint64_t end_offset = 0;  // next offset to be assigned
  std::size_t segments = 0;
};

struct QueueInfo {
  std::string name;
  std::size_t pending = 0;
  std::size_t in_flight = 0;
};

class Bus;
namespace detail {
struct TopicState;
struct QueueState;
}  // namespace detail

// A reader positioned on one topic. With a group, the starting position is
// the group's committed offset and commit() persists progress.
class Subscription {
 public:
  Subscription(Bus& bus, std::string topic, std::optional<std::string> group, std::uint64_t position);

  // Next message, or nullopt after `timeout` with nothing new. Throws
  // Error(Unavailable) when the bus crashed after this subscription was made.
  std::optional<Message> poll(std::chrono::milliseconds timeout);
  std::vector<Message> poll_batch(std::size_t max, std::chrono::milliseconds timeout);

  // Persists position() for the group.
  void commit();
  void seek(std::uint64_t offset) { position_ = offset; }
  std::uint64_t position() const noexcept { return position_; }
  const std::string& topic() const noexcept { return topic_; }

 private:
  Bus* bus_;
  std::string topic_;
  std::optional<std::string> group_;
  std::uint64_t position_;
  std::uint64_t generation_;
};

// A message taken from a queue. Destroying it without ack() hands the
// message back to the queue for redelivery.
class Delivery {
 public:
  Delivery(std::shared_ptr<detail::QueueState> q, std::uint64_t id, Message m, unsigned delivery_count);
  ~Delivery();
  Delivery(Delivery&& other) noexcept;
  Delivery& operator=(Delivery&&) = delete;
  Delivery(const Delivery&) = delete;
  Delivery& operator=(const Delivery&) = delete;

  const Message& message() const noexcept { return message_; }
  std::uint64_t id() const noexcept { return id_; }
  unsigned delivery_count() const noexcept { return delivery_count_; }
  void ack();
  void nack();

 private:
  friend class Bus;
  std::shared_ptr<detail::QueueState> queue_;
  std::uint64_t id_;
  Message message_;
  unsigned delivery_count_;
  bool settled_ = false;
};

// Durable single-node pub-sub: append-only topics with consumer-group
// offsets, plus acknowledged queues. All operations are thread-safe.
class Bus {
 public:
  struct Options {
    std::filesystem::path dir;
    store::Durability durability = store::Durability::Write;
    std::uint64_t segment_bytes = 16u << 20;
    const Clock* clock = &system_clock();
  };

  explicit Bus(Options options);
  ~Bus();
  Bus(const Bus&) = delete;
  Bus& operator=(const Bus&) = delete;

  // Topics
  void create_topic(const std::string& name);
  bool has_topic(const std::string& name) const;
  std::vector<TopicInfo> topics() const;
  TopicInfo topic_info(const std::string& name) const;
  // Durable before returning; auto-creates the topic.
  std::uint64_t publish(const std::string& topic, const Headers& headers, std::string_view payload);
  std::vector<Message> read(const std::string& topic, std::uint64_t from, std::size_t max) const;

  std::uint64_t committed_offset(const std::string& topic, const std::string& group) const;
  void commit_offset(const std::string& topic, const std::string& group, std::uint64_t next_offset);

  Subscription subscribe(const std::string& topic, const std::string& group);
  Subscription subscribe_from(const std::string& topic, std::uint64_t offset);
  Subscription subscribe_latest(const std::string& topic);

  // Queues
  void create_queue(const std::string& name);
  bool has_queue(const std::string& name) const;
  std::vector<QueueInfo> queues() const;
  QueueInfo queue_info(const std::string& name) const;
  std::uint64_t enqueue(const std::string& queue, const Headers& headers, std::string_view payload);
  std::optional<Delivery> dequeue(const std::string& queue, std::chrono::milliseconds timeout);

  // Fault injection: crash() drops all in-memory state and fails every
  // call with Unavailable until recover() reloads from disk.
  void crash();
  void recover();
  bool available() const noexcept { return available_.load(); }
  std::uint64_t generation() const noexcept { return generation_.load(); }

  const std::filesystem::path& dir() const noexcept { return options_.dir; }

 private:
  friend class Subscription;

  std::shared_ptr<detail::TopicState> topic_state(const std::string& name, bool create) const;
  std::shared_ptr<detail::QueueState> queue_state(const std::string& name, bool create) const;
  void check_available() const;
  void load_all();

  Options options_;
  mutable std::shared_mutex mu_;
  mutable std::map<std::string, std::shared_ptr<detail::TopicState>> topics_;
  mutable std::map<std::string, std::shared_ptr<detail::QueueState>> queues_;
  std::atomic<bool> available_{true};
  std::atomic<std::uint64_t> generation_{1};
};

}  // namespace twinforge::bus
