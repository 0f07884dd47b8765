#include "twinforge/registry/registry.hpp"

#include <algorithm>
#include <cstdio>
#include <deque>
#include <functional>
#include <map>
#include <set>
#include <cstring>

#include "twinforge/core/error.hpp"

namespace twinforge::registry {

namespace {

constexpr const char* kThingPrefix = "thing/";
constexpr const char* kPolicyPrefix = "policy/";
constexpr const char* kOutboxPrefix = "outbox/";
constexpr std::size_t kMaxInstantiation = 10'000;

const std::string kIsType(managed::kIsType);
const std::string kType(managed::kType);
const std::string kParent(managed::kParent);
const std::string kChildren(managed::kChildren);

bool raw_is_type(const TwinRecord& r) {
  auto it = r.attributes.find(kIsType);
  return it != r.attributes.end() && it->is_boolean() && it->get<bool>();
}

std::optional<ThingId> twin_parent(const TwinRecord& r) {
  auto it = r.attributes.find(kParent);
  if (it == r.attributes.end() || !it->is_string()) return std::nullopt;
  return parse_thing_id(it->get<std::string>());
}

Json& children_of(TwinRecord& r) {
  auto& c = r.attributes[kChildren];
  if (!c.is_object()) c = Json::object();
  return c;
}

Json& type_parents_of(TwinRecord& r) {
  auto& p = r.attributes[kParent];
  if (!p.is_object()) p = Json::object();
  return p;
}

std::vector<ThingId> keys_as_ids(const Json& obj) {
  std::vector<ThingId> out;
  if (!obj.is_object()) return out;
  for (const auto& [k, _] : obj.items()) out.push_back(parse_thing_id(k));
  return out;
}

TwinRecord hidden(TwinRecord r) {
  r.attributes.erase(kIsType);
  return r;
}

Envelope event(const ThingId& id, Action action, std::string path, Json value, const bus::Headers& headers) {
  Envelope e{make_topic(id, Channel::Events, action), std::move(path), std::move(value), {}};
  e.headers.insert(headers.begin(), headers.end());
  return e;
}

std::string thing_key(const ThingId& id) { return kThingPrefix + id.str(); }

void reject_managed(const Json& attributes) {
  if (!attributes.is_object()) throw Error(Errc::BadValue, "attributes must be an object");
  for (const auto& [k, _] : attributes.items())
    if (managed::is_managed_key(k))
      throw Error(Errc::ManagedAttributeViolation, "attribute '" + k + "' is managed by the registry");
}

}  // namespace

DeleteMode parse_delete_mode(std::string_view text) {
  if (text.empty() || text == "orphan") return DeleteMode::Orphan;
  if (text == "cascade") return DeleteMode::Cascade;
  throw Error(Errc::InvalidArgument, "delete mode must be 'orphan' or 'cascade'");
}

struct Registry::State {
  explicit State(const std::filesystem::path& path, store::Durability durability) : kv(path, durability) {
    for (const auto& [key, value] : kv.scan(kThingPrefix)) {
      auto rec = twin_from_json(value);
      things.emplace(rec.thing_id, std::move(rec));
    }
    for (const auto& [key, value] : kv.scan(kPolicyPrefix)) {
      auto p = policy_from_json(value);
      policies.emplace(p.policy_id, std::move(p));
    }
    for (const auto& [key, _] : kv.scan(kOutboxPrefix))
      outbox_seq = std::max<std::uint64_t>(outbox_seq, std::stoull(key.substr(std::strlen(kOutboxPrefix))) + 1);
  }

  const TwinRecord& at(const ThingId& id) const {
    auto it = things.find(id);
    if (it == things.end()) throw Error(Errc::NotFound, "no thing '" + id.str() + "'");
    return it->second;
  }

  std::string next_outbox_key() {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%020llu", static_cast<unsigned long long>(outbox_seq++));
    return kOutboxPrefix + std::string(buf);
  }

  store::KvLog kv;
  std::map<ThingId, TwinRecord> things;  // raw, managed attributes included
  std::map<std::string, Policy> policies;
  std::uint64_t outbox_seq = 0;
};

// Pending edits of one mutation, applied to the cache only after the log
// write succeeds.
namespace {

class Changeset {
 public:
  explicit Changeset(const std::map<ThingId, TwinRecord>& base) : base_(base) {}

  bool exists(const ThingId& id) const {
    if (auto it = edits_.find(id); it != edits_.end()) return it->second.has_value();
    return base_.count(id) != 0;
  }

  TwinRecord& edit(const ThingId& id) {
    auto it = edits_.find(id);
    if (it == edits_.end()) {
      auto b = base_.find(id);
      if (b == base_.end()) throw Error(Errc::NotFound, "no thing '" + id.str() + "'");
      it = edits_.emplace(id, b->second).first;
    }
    if (!it->second) throw Error(Errc::NotFound, "no thing '" + id.str() + "'");
    return *it->second;
  }

  const TwinRecord& view(const ThingId& id) {
    return edit(id);
  }

  void put(TwinRecord r) {
    auto id = r.thing_id;
    edits_[id] = std::move(r);
  }

  void erase(const ThingId& id) { edits_[id] = std::nullopt; }

  const std::map<ThingId, std::optional<TwinRecord>>& edits() const { return edits_; }

 private:
  const std::map<ThingId, TwinRecord>& base_;
  std::map<ThingId, std::optional<TwinRecord>> edits_;
};

std::vector<store::KvLog::Op> to_ops(const Changeset& cs) {
  std::vector<store::KvLog::Op> ops;
  for (const auto& [id, rec] : cs.edits()) {
    if (rec) ops.push_back({thing_key(id), std::optional<Json>(std::in_place, to_json(*rec))});
    else ops.push_back({thing_key(id), std::nullopt});
  }
  return ops;
}

void apply_to_cache(std::map<ThingId, TwinRecord>& cache, const Changeset& cs) {
  for (const auto& [id, rec] : cs.edits()) {
    if (rec) cache[id] = *rec;
    else cache.erase(id);
  }
}

}  // namespace

Registry::Registry(bus::Bus& bus, Options options) : bus_(bus), options_(std::move(options)) {
  std::filesystem::create_directories(options_.data_dir);
  state_ = std::make_unique<State>(options_.data_dir / "registry.kv", options_.durability);
  try {
    publish_outbox(*state_);
  } catch (const Error&) {
  }
}

Registry::~Registry() = default;

Registry::State& Registry::state() const {
  if (!state_) throw Error(Errc::Unavailable, "registry is down");
  return *state_;
}

bool Registry::available() const noexcept {
  std::shared_lock lock(mu_);
  return state_ != nullptr;
}

void Registry::crash() {
  std::unique_lock lock(mu_);
  state_.reset();
}

void Registry::recover() {
  std::unique_lock lock(mu_);
  if (state_) return;
  state_ = std::make_unique<State>(options_.data_dir / "registry.kv", options_.durability);
  try {
    publish_outbox(*state_);
  } catch (const Error&) {
  }
}

void Registry::commit(State& s, std::vector<store::KvLog::Op> ops, std::vector<Envelope> events) {
  for (auto& e : events) {
    validate_envelope(e);
    ops.push_back({s.next_outbox_key(), std::optional<Json>(std::in_place, to_json(e))});
  }
  s.kv.commit(ops);
  try {
    publish_outbox(s);
  } catch (const Error&) {
    // Events stay in the outbox until the bus is back.
  }
}

void Registry::publish_outbox(State& s) {
  std::vector<store::KvLog::Op> done;
  try {
    for (const auto& [key, value] : s.kv.scan(kOutboxPrefix)) {
      const auto e = envelope_from_json(value);
      bus_.publish(options_.event_topic, e.headers, value.dump());
      done.push_back({key, std::nullopt});
    }
  } catch (...) {
    s.kv.commit(done);
    throw;
  }
  s.kv.commit(done);
}

void Registry::flush_outbox() {
  std::unique_lock lock(mu_);
  publish_outbox(state());
}

// ---------------------------------------------------------------- policies

void Registry::put_policy(const Policy& policy) {
  validate_policy(policy);
  std::unique_lock lock(mu_);
  auto& s = state();
  s.kv.put(kPolicyPrefix + policy.policy_id, to_json(policy));
  s.policies[policy.policy_id] = policy;
}

Policy Registry::get_policy(const std::string& policy_id) const {
  std::shared_lock lock(mu_);
  const auto& s = state();
  auto it = s.policies.find(policy_id);
  if (it == s.policies.end()) throw Error(Errc::NotFound, "no policy '" + policy_id + "'");
  return it->second;
}

std::vector<Policy> Registry::list_policies() const {
  std::shared_lock lock(mu_);
  std::vector<Policy> out;
  for (const auto& [_, p] : state().policies) out.push_back(p);
  return out;
}

// ---------------------------------------------------------------- creation

TwinRecord Registry::create_twin(const TwinRecord& proto, const std::optional<ThingId>& parent,
                                 const bus::Headers& headers) {
  reject_managed(proto.attributes);
  std::unique_lock lock(mu_);
  auto& s = state();
  if (s.things.count(proto.thing_id)) throw Error(Errc::DuplicateId, proto.thing_id.str() + " already exists");
  if (!s.policies.count(proto.policy_id)) throw Error(Errc::UnknownPolicy, "no policy '" + proto.policy_id + "'");

  Changeset cs(s.things);
  TwinRecord rec = proto;
  rec.attributes[kIsType] = false;
  rec.attributes[kParent] = nullptr;
  rec.attributes[kChildren] = Json::object();
  std::vector<Envelope> events;
  if (parent) {
    if (!s.things.count(*parent)) throw Error(Errc::NotFound, "no thing '" + parent->str() + "'");
    auto& p = cs.edit(*parent);
    if (raw_is_type(p)) throw Error(Errc::KindMismatch, parent->str() + " is a type");
    rec.attributes[kParent] = parent->str();
    children_of(p)[rec.thing_id.str()] = 1;
    events.push_back(event(*parent, Action::Modify, "/attributes/children", children_of(p), headers));
  }
  events.insert(events.begin(), event(rec.thing_id, Action::Create, "/", to_json(hidden(rec)), headers));
  cs.put(rec);
  commit(s, to_ops(cs), std::move(events));
  apply_to_cache(s.things, cs);
  return hidden(rec);
}

TwinRecord Registry::create_type(const TwinRecord& proto, const bus::Headers& headers) {
  reject_managed(proto.attributes);
  std::unique_lock lock(mu_);
  auto& s = state();
  if (s.things.count(proto.thing_id)) throw Error(Errc::DuplicateId, proto.thing_id.str() + " already exists");
  if (!s.policies.count(proto.policy_id)) throw Error(Errc::UnknownPolicy, "no policy '" + proto.policy_id + "'");
  TwinRecord rec = proto;
  rec.attributes[kIsType] = true;
  rec.attributes[kParent] = Json::object();
  rec.attributes[kChildren] = Json::object();
  Changeset cs(s.things);
  cs.put(rec);
  commit(s, to_ops(cs), {event(rec.thing_id, Action::Create, "/", to_json(hidden(rec)), headers)});
  apply_to_cache(s.things, cs);
  return hidden(rec);
}

// ---------------------------------------------------------------- links

void Registry::link(const ThingId& parent, const ThingId& child) {
  std::unique_lock lock(mu_);
  auto& s = state();
  const auto& p = s.at(parent);
  const auto& c = s.at(child);
  const bool types = raw_is_type(p);
  if (types != raw_is_type(c)) throw Error(Errc::KindMismatch, "cannot link a twin and a type");
  if (parent == child) throw Error(Errc::CycleCreated, parent.str() + " cannot be its own child");

  Changeset cs(s.things);
  if (!types) {
    if (twin_parent(c)) throw Error(Errc::TwinAlreadyHasParent, child.str() + " already has a parent");
    for (auto a = std::optional<ThingId>(parent); a; a = twin_parent(s.at(*a)))
      if (*a == child) throw Error(Errc::CycleCreated, child.str() + " is an ancestor of " + parent.str());
    cs.edit(child).attributes[kParent] = parent.str();
    children_of(cs.edit(parent))[child.str()] = 1;
  } else {
    // parent must not be reachable from child through children edges
    std::set<ThingId> seen;
    std::vector<ThingId> stack{child};
    while (!stack.empty()) {
      auto cur = stack.back();
      stack.pop_back();
      if (cur == parent) throw Error(Errc::CycleCreated, "linking " + parent.str() + " -> " + child.str());
      if (!seen.insert(cur).second) continue;
      for (auto& next : keys_as_ids(s.at(cur).attributes.value(kChildren, Json::object()))) stack.push_back(next);
    }
    type_parents_of(cs.edit(child))[parent.str()] = 1;
    auto& mult = children_of(cs.edit(parent))[child.str()];
    mult = mult.is_number_integer() ? mult.get<int>() + 1 : 1;
  }
  std::vector<Envelope> events{
      event(parent, Action::Modify, "/attributes/children", cs.view(parent).attributes.at(kChildren), {})};
  // A repeated type link only raises the multiplicity; the child is unchanged.
  if (cs.view(child) != s.at(child))
    events.push_back(event(child, Action::Modify, "/attributes/parent", cs.view(child).attributes.at(kParent), {}));
  commit(s, to_ops(cs), std::move(events));
  apply_to_cache(s.things, cs);
}

void Registry::unlink(const ThingId& parent, const ThingId& child) {
  std::unique_lock lock(mu_);
  auto& s = state();
  const auto& p = s.at(parent);
  s.at(child);
  const auto children = p.attributes.value(kChildren, Json::object());
  if (!children.contains(child.str()))
    throw Error(Errc::NotFound, child.str() + " is not a child of " + parent.str());
  Changeset cs(s.things);
  children_of(cs.edit(parent)).erase(child.str());
  if (raw_is_type(p)) type_parents_of(cs.edit(child)).erase(parent.str());
  else cs.edit(child).attributes[kParent] = nullptr;
  std::vector<Envelope> events{
      event(parent, Action::Modify, "/attributes/children", cs.view(parent).attributes.at(kChildren), {})};
  // A repeated type link only raises the multiplicity; the child is unchanged.
  if (cs.view(child) != s.at(child))
    events.push_back(event(child, Action::Modify, "/attributes/parent", cs.view(child).attributes.at(kParent), {}));
  commit(s, to_ops(cs), std::move(events));
  apply_to_cache(s.things, cs);
}

// ---------------------------------------------------------------- instantiation

std::vector<TwinRecord> Registry::instantiate_from_type(const ThingId& type_id, const ThingId& new_id,
                                                        const std::string& policy_id) {
  std::unique_lock lock(mu_);
  auto& s = state();
  if (!raw_is_type(s.at(type_id))) throw Error(Errc::NotAType, type_id.str() + " is not a type");
  if (!s.policies.count(policy_id)) throw Error(Errc::UnknownPolicy, "no policy '" + policy_id + "'");

  std::vector<TwinRecord> created;
  std::function<void(const ThingId&, const ThingId&, const std::optional<ThingId>&)> expand =
      [&](const ThingId& type, const ThingId& id, const std::optional<ThingId>& parent) {
        if (created.size() >= kMaxInstantiation)
          throw Error(Errc::InvalidArgument, "instantiation of " + type_id.str() + " exceeds " +
                                                 std::to_string(kMaxInstantiation) + " twins");
        if (s.things.count(id)) throw Error(Errc::DuplicateId, id.str() + " already exists");
        const auto& t = s.at(type);
        TwinRecord rec;
        rec.thing_id = id;
        rec.policy_id = policy_id;
        rec.attributes = Json::object();
        for (const auto& [k, v] : t.attributes.items())
          if (!managed::is_managed_key(k)) rec.attributes[k] = v;
        rec.features = t.features;
        rec.attributes[kIsType] = false;
        rec.attributes[kType] = type.str();
        rec.attributes[kParent] = parent ? Json(parent->str()) : Json(nullptr);
        rec.attributes[kChildren] = Json::object();
        const auto index = created.size();
        created.push_back(rec);
        const Json kids = t.attributes.value(kChildren, Json::object());
        for (const auto& [child_type, mult] : kids.items()) {
          const auto child_type_id = parse_thing_id(child_type);
          const int m = mult.is_number_integer() ? mult.get<int>() : 1;
          for (int k = 1; k <= m; ++k) {
            ThingId child_id{id.ns, id.name + "_" + child_type_id.name + "_" + std::to_string(k)};
            created[index].attributes[kChildren][child_id.str()] = 1;
            expand(child_type_id, child_id, id);
          }
        }
      };
  expand(type_id, new_id, std::nullopt);

  std::set<ThingId> unique_ids;
  for (const auto& r : created)
    if (!unique_ids.insert(r.thing_id).second) throw Error(Errc::DuplicateId, r.thing_id.str() + " generated twice");

  Changeset cs(s.things);
  std::vector<Envelope> events;
  for (const auto& r : created) {
    cs.put(r);
    events.push_back(event(r.thing_id, Action::Create, "/", to_json(hidden(r)), {}));
  }
  commit(s, to_ops(cs), std::move(events));
  apply_to_cache(s.things, cs);
  std::vector<TwinRecord> out;
  for (const auto& r : created) out.push_back(hidden(r));
  return out;
}

// ---------------------------------------------------------------- reads

TwinRecord Registry::get(const ThingId& id) const {
  std::shared_lock lock(mu_);
  return hidden(state().at(id));
}

bool Registry::exists(const ThingId& id) const {
  std::shared_lock lock(mu_);
  return state().things.count(id) != 0;
}

bool Registry::is_type(const ThingId& id) const {
  std::shared_lock lock(mu_);
  return raw_is_type(state().at(id));
}

std::vector<ThingId> Registry::list_twins() const {
  std::shared_lock lock(mu_);
  std::vector<ThingId> out;
  for (const auto& [id, r] : state().things)
    if (!raw_is_type(r)) out.push_back(id);
  std::sort(out.begin(), out.end(), [](const ThingId& a, const ThingId& b) { return a.str() < b.str(); });
  return out;
}

std::vector<ThingId> Registry::list_types() const {
  std::shared_lock lock(mu_);
  std::vector<ThingId> out;
  for (const auto& [id, r] : state().things)
    if (raw_is_type(r)) out.push_back(id);
  std::sort(out.begin(), out.end(), [](const ThingId& a, const ThingId& b) { return a.str() < b.str(); });
  return out;
}

std::vector<ThingId> Registry::list_root_twins() const {
  std::shared_lock lock(mu_);
  std::vector<ThingId> out;
  for (const auto& [id, r] : state().things)
    if (!raw_is_type(r) && !twin_parent(r)) out.push_back(id);
  std::sort(out.begin(), out.end(), [](const ThingId& a, const ThingId& b) { return a.str() < b.str(); });
  return out;
}

std::vector<ThingId> Registry::list_children(const ThingId& id) const {
  std::shared_lock lock(mu_);
  auto out = keys_as_ids(state().at(id).attributes.value(kChildren, Json::object()));
  std::sort(out.begin(), out.end(), [](const ThingId& a, const ThingId& b) { return a.str() < b.str(); });
  return out;
}

std::vector<ThingId> Registry::list_parents(const ThingId& id) const {
  std::shared_lock lock(mu_);
  const auto& r = state().at(id);
  if (!raw_is_type(r)) {
    auto p = twin_parent(r);
    return p ? std::vector<ThingId>{*p} : std::vector<ThingId>{};
  }
  auto out = keys_as_ids(r.attributes.value(kParent, Json::object()));
  std::sort(out.begin(), out.end(), [](const ThingId& a, const ThingId& b) { return a.str() < b.str(); });
  return out;
}

std::vector<TwinRecord> Registry::raw_records() const {
  std::shared_lock lock(mu_);
  std::vector<TwinRecord> out;
  for (const auto& [_, r] : state().things) out.push_back(r);
  return out;
}

// ---------------------------------------------------------------- deletion

std::vector<ThingId> Registry::remove(const ThingId& id, DeleteMode mode) {
  std::unique_lock lock(mu_);
  auto& s = state();
  const auto& target = s.at(id);
  const bool type = raw_is_type(target);
  if (type && mode == DeleteMode::Cascade) throw Error(Errc::CascadeOnType, "types can only be deleted as orphan");

  Changeset cs(s.things);
  std::vector<ThingId> removed;
  std::set<ThingId> touched;

  if (!type) {
    std::vector<ThingId> doomed{id};
    if (mode == DeleteMode::Cascade) {
      std::deque<ThingId> frontier{id};
      while (!frontier.empty()) {
        auto cur = frontier.front();
        frontier.pop_front();
        for (auto& c : keys_as_ids(s.at(cur).attributes.value(kChildren, Json::object()))) {
          doomed.push_back(c);
          frontier.push_back(c);
        }
      }
    } else {
      for (auto& c : keys_as_ids(target.attributes.value(kChildren, Json::object()))) {
        cs.edit(c).attributes[kParent] = nullptr;
        touched.insert(c);
      }
    }
    if (auto p = twin_parent(target)) {
      children_of(cs.edit(*p)).erase(id.str());
      touched.insert(*p);
    }
    for (auto& d : doomed) {
      cs.erase(d);
      removed.push_back(d);
    }
  } else {
    for (auto& c : keys_as_ids(target.attributes.value(kChildren, Json::object()))) {
      type_parents_of(cs.edit(c)).erase(id.str());
      touched.insert(c);
    }
    for (auto& p : keys_as_ids(target.attributes.value(kParent, Json::object()))) {
      children_of(cs.edit(p)).erase(id.str());
      touched.insert(p);
    }
    cs.erase(id);
    removed.push_back(id);
  }

  std::vector<Envelope> events;
  for (const auto& d : removed) events.push_back(event(d, Action::Delete, "/", nullptr, {}));
  for (const auto& t : touched) {
    const auto& r = cs.view(t);
    events.push_back(event(t, Action::Modify, "/attributes",
                           Json{{kParent, r.attributes.at(kParent)}, {kChildren, r.attributes.at(kChildren)}}, {}));
  }
  commit(s, to_ops(cs), std::move(events));
  apply_to_cache(s.things, cs);
  return removed;
}

// ---------------------------------------------------------------- update

TwinRecord Registry::update(const ThingId& id, const Envelope& command, const std::string& subject) {
  validate_envelope(command);
  std::unique_lock lock(mu_);
  auto& s = state();
  const auto& current = s.at(id);
  auto pit = s.policies.find(current.policy_id);
  if (pit == s.policies.end() || !pit->second.can_write(subject))
    throw Error(Errc::Forbidden, "'" + subject + "' may not write " + id.str());

  // Managed attributes are guarded by apply_envelope; apply on the hidden
  // view so the stored flags cannot be observed or replaced.
  auto applied = apply_envelope(current, command);
  for (const auto& key : {kIsType, kType, kParent, kChildren}) {
    if (current.attributes.contains(key)) applied.attributes[key] = current.attributes.at(key);
    else applied.attributes.erase(key);
  }
  if (applied.policy_id != current.policy_id && !s.policies.count(applied.policy_id))
    throw Error(Errc::UnknownPolicy, "no policy '" + applied.policy_id + "'");

  bus::Headers headers = command.headers;
  headers[header::kOriginator] = subject;
  Changeset cs(s.things);
  cs.put(applied);
  commit(s, to_ops(cs), {event(id, Action::Modify, command.path, command.value, headers)});
  apply_to_cache(s.things, cs);
  options_.metrics->add(metric::kTwinUpdates);
  return hidden(applied);
}

}  // namespace twinforge::registry
