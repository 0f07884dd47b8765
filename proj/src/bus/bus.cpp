#include "twinforge/bus/bus.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <condition_variable>
#include <deque>
#include <fstream>
#include <set>

#include "twinforge/core/error.hpp"

namespace twinforge::bus {

namespace fs = std::filesystem;
using namespace std::chrono_literals;

namespace {

constexpr char kEnqueue = 1;
constexpr char kAck = 2;

void encode_headers(std::string& out, const Headers& headers) {
  store::put_u32(out, static_cast<std::uint32_t>(headers.size()));
  for (const auto& [k, v] : headers) {
    store::put_u32(out, static_cast<std::uint32_t>(k.size()));
    out.append(k);
    store::put_u32(out, static_cast<std::uint32_t>(v.size()));
    out.append(v);
  }
}

Headers decode_headers(std::string_view in, std::size_t& pos) {
  Headers headers;
  const auto n = store::get_u32(in, pos);
  for (std::uint32_t i = 0; i < n; ++i) {
    const auto klen = store::get_u32(in, pos);
    std::string k(store::get_bytes(in, pos, klen));
    const auto vlen = store::get_u32(in, pos);
    headers.emplace(std::move(k), std::string(store::get_bytes(in, pos, vlen)));
  }
  return headers;
}

std::string encode_message(const Message& m) {
  std::string body;
  body.reserve(32 + m.payload.size());
  store::put_u64(body, m.offset);
  store::put_u64(body, static_cast<std::uint64_t>(m.timestamp));
  encode_headers(body, m.headers);
  store::put_u32(body, static_cast<std::uint32_t>(m.payload.size()));
  body.append(m.payload);
  return body;
}

Message decode_message(std::string_view body) {
  std::size_t pos = 0;
  Message m;
  m.offset = store::get_u64(body, pos);
  m.timestamp = static_cast<TimestampNs>(store::get_u64(body, pos));
  m.headers = decode_headers(body, pos);
  const auto plen = store::get_u32(body, pos);
  m.payload = std::string(store::get_bytes(body, pos, plen));
  return m;
}

std::string segment_name(std::uint64_t base) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%020llu.log", static_cast<unsigned long long>(base));
  return buf;
}

[[noreturn]] void throw_unavailable() { throw Error(Errc::Unavailable, "bus is down"); }

}  // namespace

namespace detail {

struct TopicState {
  struct Segment {
    std::uint64_t base = 0;
    fs::path path;
    int read_fd = -1;
  };
  struct Location {
    std::uint32_t segment;
    std::uint64_t position;
  };

  std::string name;
  fs::path dir;
  store::Durability durability;
  std::uint64_t segment_bytes;

  mutable std::mutex mu;
  std::condition_variable cv;
  std::vector<Segment> segments;
  std::vector<Location> index;  // offset -> location
  store::RecordWriter writer;
  bool dead = false;

  TopicState(std::string n, fs::path d, store::Durability dur, std::uint64_t seg_bytes)
      : name(std::move(n)), dir(std::move(d)), durability(dur), segment_bytes(seg_bytes) {
    fs::create_directories(dir / "groups");
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(dir))
      if (entry.is_regular_file() && entry.path().extension() == ".log") files.push_back(entry.path());
    std::sort(files.begin(), files.end());
    for (const auto& file : files) {
      Segment seg;
      seg.base = std::stoull(file.stem().string());
      seg.path = file;
      const auto seg_idx = static_cast<std::uint32_t>(segments.size());
      store::scan_records(file, [&](std::uint64_t position, std::string_view body) {
        std::size_t pos = 0;
        const auto offset = store::get_u64(body, pos);
        if (offset != index.size())
          throw Error(Errc::Corrupt, "topic " + name + ": offset " + std::to_string(offset) + " out of sequence");
        index.push_back(Location{seg_idx, position});
      });
      seg.read_fd = ::open(file.c_str(), O_RDONLY | O_CLOEXEC);
      if (seg.read_fd < 0) throw Error(Errc::IoError, "open " + file.string());
      segments.push_back(std::move(seg));
    }
    if (segments.empty()) roll();
    else writer = store::RecordWriter(segments.back().path, durability);
  }

  ~TopicState() {
    for (auto& s : segments)
      if (s.read_fd >= 0) ::close(s.read_fd);
  }

  void roll() {
    Segment seg;
    seg.base = index.size();
    seg.path = dir / segment_name(seg.base);
    writer = store::RecordWriter(seg.path, durability);
    seg.read_fd = ::open(seg.path.c_str(), O_RDONLY | O_CLOEXEC);
    if (seg.read_fd < 0) throw Error(Errc::IoError, "open " + seg.path.string());
    segments.push_back(std::move(seg));
  }

  std::uint64_t end() const { return index.size(); }

  // Caller holds mu.
  Message read_locked(std::uint64_t offset) const {
    const auto& loc = index.at(offset);
    return decode_message(store::read_record_at(segments[loc.segment].read_fd, loc.position));
  }

  fs::path group_file(const std::string& group) const {
    return dir / "groups" / (store::escape_name(group) + ".offset");
  }
};

struct QueueState {
  struct Entry {
    Message message;
    unsigned deliveries = 0;
  };

  std::string name;
  fs::path path;
  store::Durability durability;

  std::mutex mu;
  std::condition_variable cv;
  store::RecordWriter writer;
  std::deque<std::uint64_t> pending;
  std::map<std::uint64_t, Entry> entries;
  std::set<std::uint64_t> in_flight;
  std::uint64_t next_id = 0;
  bool dead = false;

  QueueState(std::string n, const fs::path& dir, store::Durability dur)
      : name(std::move(n)), path(dir / "queue.log"), durability(dur) {
    fs::create_directories(dir);
    std::set<std::uint64_t> order;
    store::scan_records(path, [&](std::uint64_t, std::string_view body) {
      std::size_t pos = 0;
      const char type = store::get_bytes(body, pos, 1)[0];
      const auto id = store::get_u64(body, pos);
      next_id = std::max(next_id, id + 1);
      if (type == kEnqueue) {
        Message m;
        m.offset = id;
        m.timestamp = static_cast<TimestampNs>(store::get_u64(body, pos));
        m.headers = decode_headers(body, pos);
        const auto plen = store::get_u32(body, pos);
        m.payload = std::string(store::get_bytes(body, pos, plen));
        entries[id] = Entry{std::move(m), 0};
        order.insert(id);
      } else if (type == kAck) {
        entries.erase(id);
        order.erase(id);
      } else {
        throw Error(Errc::Corrupt, "queue " + name + ": unknown record type");
      }
    });
    pending.assign(order.begin(), order.end());
    writer = store::RecordWriter(path, durability);
  }

  // Caller holds mu.
  void truncate_if_drained() {
    if (!entries.empty() || writer.size() < (1u << 20)) return;
    writer.close();
    fs::resize_file(path, 0);
    writer = store::RecordWriter(path, durability);
  }
};

}  // namespace detail

// ---------------------------------------------------------------- Subscription

Subscription::Subscription(Bus& bus, std::string topic, std::optional<std::string> group, std::uint64_t position)
    : bus_(&bus), topic_(std::move(topic)), group_(std::move(group)), position_(position),
      generation_(bus.generation()) {}

std::optional<Message> Subscription::poll(std::chrono::milliseconds timeout) {
  auto batch = poll_batch(1, timeout);
  if (batch.empty()) return std::nullopt;
  return std::move(batch.front());
}

std::vector<Message> Subscription::poll_batch(std::size_t max, std::chrono::milliseconds timeout) {
  if (!bus_->available() || bus_->generation() != generation_) throw_unavailable();
  auto state = bus_->topic_state(topic_, true);
  std::unique_lock lock(state->mu);
  if (timeout.count() > 0) state->cv.wait_for(lock, timeout, [&] { return state->dead || state->end() > position_; });
  if (state->dead) throw_unavailable();
  std::vector<Message> out;
  while (out.size() < max && position_ < state->end()) out.push_back(state->read_locked(position_++));
  return out;
}

void Subscription::commit() {
  if (!group_) return;
  if (bus_->generation() != generation_) throw_unavailable();
  bus_->commit_offset(topic_, *group_, position_);
}

// ---------------------------------------------------------------- Delivery

Delivery::Delivery(std::shared_ptr<detail::QueueState> q, std::uint64_t id, Message m, unsigned delivery_count)
    : queue_(std::move(q)), id_(id), message_(std::move(m)), delivery_count_(delivery_count) {}

Delivery::Delivery(Delivery&& other) noexcept
    : queue_(std::move(other.queue_)), id_(other.id_), message_(std::move(other.message_)),
      delivery_count_(other.delivery_count_), settled_(std::exchange(other.settled_, true)) {}

Delivery::~Delivery() {
  if (!settled_ && queue_) {
    try {
      nack();
    } catch (...) {
    }
  }
}

void Delivery::ack() {
  if (settled_) return;
  std::lock_guard lock(queue_->mu);
  if (queue_->dead) throw_unavailable();
  std::string body(1, kAck);
  store::put_u64(body, id_);
  queue_->writer.append(body);
  queue_->in_flight.erase(id_);
  queue_->entries.erase(id_);
  settled_ = true;
  queue_->truncate_if_drained();
}

void Delivery::nack() {
  if (settled_) return;
  settled_ = true;
  std::lock_guard lock(queue_->mu);
  if (queue_->dead) return;
  if (queue_->in_flight.erase(id_) != 0) {
    queue_->pending.push_front(id_);
    queue_->cv.notify_one();
  }
}

// ---------------------------------------------------------------- Bus

Bus::Bus(Options options) : options_(std::move(options)) {
  fs::create_directories(options_.dir / "topics");
  fs::create_directories(options_.dir / "queues");
  load_all();
}

Bus::~Bus() {
  std::unique_lock lock(mu_);
  for (auto& [_, t] : topics_) {
    std::lock_guard tl(t->mu);
    t->dead = true;
    t->cv.notify_all();
  }
  for (auto& [_, q] : queues_) {
    std::lock_guard ql(q->mu);
    q->dead = true;
    q->cv.notify_all();
  }
}

void Bus::load_all() {
  std::unique_lock lock(mu_);
  for (const auto& entry : fs::directory_iterator(options_.dir / "topics")) {
    if (!entry.is_directory()) continue;
    const auto name = store::unescape_name(entry.path().filename().string());
    topics_[name] = std::make_shared<detail::TopicState>(name, entry.path(), options_.durability, options_.segment_bytes);
  }
  for (const auto& entry : fs::directory_iterator(options_.dir / "queues")) {
    if (!entry.is_directory()) continue;
    const auto name = store::unescape_name(entry.path().filename().string());
    queues_[name] = std::make_shared<detail::QueueState>(name, entry.path(), options_.durability);
  }
}

void Bus::check_available() const {
  if (!available_.load()) throw_unavailable();
}

std::shared_ptr<detail::TopicState> Bus::topic_state(const std::string& name, bool create) const {
  check_available();
  {
    std::shared_lock lock(mu_);
    if (auto it = topics_.find(name); it != topics_.end()) return it->second;
  }
  if (!create) throw Error(Errc::NotFound, "no topic '" + name + "'");
  if (name.empty()) throw Error(Errc::InvalidArgument, "topic name is empty");
  std::unique_lock lock(mu_);
  check_available();
  auto& slot = topics_[name];
  if (!slot)
    slot = std::make_shared<detail::TopicState>(name, options_.dir / "topics" / store::escape_name(name),
                                                options_.durability, options_.segment_bytes);
  return slot;
}

std::shared_ptr<detail::QueueState> Bus::queue_state(const std::string& name, bool create) const {
  check_available();
  {
    std::shared_lock lock(mu_);
    if (auto it = queues_.find(name); it != queues_.end()) return it->second;
  }
  if (!create) throw Error(Errc::NotFound, "no queue '" + name + "'");
  if (name.empty()) throw Error(Errc::InvalidArgument, "queue name is empty");
  std::unique_lock lock(mu_);
  check_available();
  auto& slot = queues_[name];
  if (!slot)
    slot = std::make_shared<detail::QueueState>(name, options_.dir / "queues" / store::escape_name(name),
                                                options_.durability);
  return slot;
}

void Bus::create_topic(const std::string& name) { topic_state(name, true); }

bool Bus::has_topic(const std::string& name) const {
  check_available();
  std::shared_lock lock(mu_);
  return topics_.count(name) != 0;
}

std::vector<TopicInfo> Bus::topics() const {
  check_available();
  std::vector<std::shared_ptr<detail::TopicState>> states;
  {
    std::shared_lock lock(mu_);
    for (const auto& [_, t] : topics_) states.push_back(t);
  }
  std::vector<TopicInfo> out;
  for (const auto& t : states) {
    std::lock_guard lock(t->mu);
    out.push_back(TopicInfo{t->name, t->end(), t->segments.size()});
  }
  return out;
}

TopicInfo Bus::topic_info(const std::string& name) const {
  auto t = topic_state(name, false);
  std::lock_guard lock(t->mu);
  return TopicInfo{t->name, t->end(), t->segments.size()};
}

std::uint64_t Bus::publish(const std::string& topic, const Headers& headers, std::string_view payload) {
  auto t = topic_state(topic, true);
  std::lock_guard lock(t->mu);
  if (t->dead) throw_unavailable();
  Message m;
  m.offset = t->end();
  m.timestamp = options_.clock->now();
  m.headers = headers;
  m.payload = std::string(payload);
  if (t->writer.size() >= t->segment_bytes) t->roll();
  const auto position = t->writer.append(encode_message(m));
  t->index.push_back(detail::TopicState::Location{static_cast<std::uint32_t>(t->segments.size() - 1), position});
  t->cv.notify_all();
  return m.offset;
}

std::vector<Message> Bus::read(const std::string& topic, std::uint64_t from, std::size_t max) const {
  auto t = topic_state(topic, false);
  std::lock_guard lock(t->mu);
  if (t->dead) throw_unavailable();
  std::vector<Message> out;
  for (auto o = from; o < t->end() && out.size() < max; ++o) out.push_back(t->read_locked(o));
  return out;
}

std::uint64_t Bus::committed_offset(const std::string& topic, const std::string& group) const {
  auto t = topic_state(topic, true);
  std::ifstream in(t->group_file(group));
  std::uint64_t v = 0;
  if (in >> v) return v;
  return 0;
}

void Bus::commit_offset(const std::string& topic, const std::string& group, std::uint64_t next_offset) {
  auto t = topic_state(topic, true);
  std::lock_guard lock(t->mu);
  if (t->dead) throw_unavailable();
  store::write_file_atomic(t->group_file(group), std::to_string(next_offset), options_.durability);
}

Subscription Bus::subscribe(const std::string& topic, const std::string& group) {
  return Subscription(*this, topic, group, committed_offset(topic, group));
}

Subscription Bus::subscribe_from(const std::string& topic, std::uint64_t offset) {
  topic_state(topic, true);
  return Subscription(*this, topic, std::nullopt, offset);
}

Subscription Bus::subscribe_latest(const std::string& topic) {
  auto t = topic_state(topic, true);
  std::lock_guard lock(t->mu);
  return Subscription(*this, topic, std::nullopt, t->end());
}

void Bus::create_queue(const std::string& name) { queue_state(name, true); }

bool Bus::has_queue(const std::string& name) const {
  check_available();
  std::shared_lock lock(mu_);
  return queues_.count(name) != 0;
}

std::vector<QueueInfo> Bus::queues() const {
  check_available();
  std::vector<std::shared_ptr<detail::QueueState>> states;
  {
    std::shared_lock lock(mu_);
    for (const auto& [_, q] : queues_) states.push_back(q);
  }
  std::vector<QueueInfo> out;
  for (const auto& q : states) {
    std::lock_guard lock(q->mu);
    out.push_back(QueueInfo{q->name, q->pending.size(), q->in_flight.size()});
  }
  return out;
}

QueueInfo Bus::queue_info(const std::string& name) const {
  auto q = queue_state(name, false);
  std::lock_guard lock(q->mu);
  return QueueInfo{q->name, q->pending.size(), q->in_flight.size()};
}

std::uint64_t Bus::enqueue(const std::string& queue, const Headers& headers, std::string_view payload) {
  auto q = queue_state(queue, true);
  std::lock_guard lock(q->mu);
  if (q->dead) throw_unavailable();
  const auto id = q->next_id++;
  Message m;
  m.offset = id;
  m.timestamp = options_.clock->now();
  m.headers = headers;
  m.payload = std::string(payload);
  std::string body(1, kEnqueue);
  store::put_u64(body, id);
  store::put_u64(body, static_cast<std::uint64_t>(m.timestamp));
  encode_headers(body, m.headers);
  store::put_u32(body, static_cast<std::uint32_t>(m.payload.size()));
  body.append(m.payload);
  q->writer.append(body);
  q->entries[id] = detail::QueueState::Entry{std::move(m), 0};
  q->pending.push_back(id);
  q->cv.notify_one();
  return id;
}

std::optional<Delivery> Bus::dequeue(const std::string& queue, std::chrono::milliseconds timeout) {
  auto q = queue_state(queue, true);
  std::unique_lock lock(q->mu);
  if (timeout.count() > 0) q->cv.wait_for(lock, timeout, [&] { return q->dead || !q->pending.empty(); });
  if (q->dead) throw_unavailable();
  if (q->pending.empty()) return std::nullopt;
  const auto id = q->pending.front();
  q->pending.pop_front();
  q->in_flight.insert(id);
  auto& entry = q->entries.at(id);
  ++entry.deliveries;
  return Delivery(q, id, entry.message, entry.deliveries);
}

void Bus::crash() {
  std::unique_lock lock(mu_);
  available_.store(false);
  generation_.fetch_add(1);
  for (auto& [_, t] : topics_) {
    std::lock_guard tl(t->mu);
    t->dead = true;
    t->cv.notify_all();
  }
  for (auto& [_, q] : queues_) {
    std::lock_guard ql(q->mu);
    q->dead = true;
    q->cv.notify_all();
  }
  topics_.clear();
  queues_.clear();
}

void Bus::recover() {
  if (available_.load()) return;
  load_all();
  available_.store(true);
}

}  // namespace twinforge::bus
