#pragma once

#include <filesystem>
#include <memory>
#include <optional>
#include <shared_mutex>
#include <string>
#include <vector>

#include "twinforge/bus/bus.hpp"
#include "twinforge/core/envelope.hpp"
#include "twinforge/core/metrics.hpp"
#include "twinforge/core/policy.hpp"
#include "twinforge/store/kv_log.hpp"

namespace twinforge::registry {

inline constexpr const char* kEventTopic = "twin-events";

enum class DeleteMode { Orphan, Cascade };

DeleteMode parse_delete_mode(std::string_view text);

// Stores twins and types, enforces the hierarchy rules and publishes one
// event envelope per affected thing for every successful mutation.
//
// Twins (isType=false) form a forest: `parent` is a single id or null and
// every `children` multiplicity is 1. Types (isType=true) form a DAG:
// `parent` maps each parent id to 1 and `children` maps child ids to a
// multiplicity >= 1. Links never mix the two kinds.
class Registry {
 public:
  struct Options {
    std::filesystem::path data_dir;
    std::string event_topic = kEventTopic;
    store::Durability durability = store::Durability::Write;
    std::shared_ptr<Metrics> metrics = std::make_shared<Metrics>();
  };

  Registry(bus::Bus& bus, Options options);
  ~Registry();
  Registry(const Registry&) = delete;
  Registry& operator=(const Registry&) = delete;

  // Policies
  void put_policy(const Policy& policy);
  Policy get_policy(const std::string& policy_id) const;
  // Ordered by policy id.
  std::vector<Policy> list_policies() const;

  // `proto` supplies id, policy, attributes and features. With `parent`,
  // the new twin is linked under it in the same atomic step.
  TwinRecord create_twin(const TwinRecord& proto, const std::optional<ThingId>& parent = std::nullopt,
                         const bus::Headers& headers = {});
  TwinRecord create_type(const TwinRecord& proto, const bus::Headers& headers = {});

  void link(const ThingId& parent, const ThingId& child);
  void unlink(const ThingId& parent, const ThingId& child);

  // Creates a twin from a type and, recursively, `multiplicity` child twins
  // per child-type edge named "<name>_<childTypeName>_<k>". Returns the
  // created twins, root first.
  std::vector<TwinRecord> instantiate_from_type(const ThingId& type_id, const ThingId& new_id,
                                                const std::string& policy_id);

  // The record without the isType attribute.
  TwinRecord get(const ThingId& id) const;
  bool exists(const ThingId& id) const;
  bool is_type(const ThingId& id) const;

  // Lexicographic by rendered id.
  std::vector<ThingId> list_twins() const;
  std::vector<ThingId> list_types() const;
  std::vector<ThingId> list_root_twins() const;
  std::vector<ThingId> list_children(const ThingId& id) const;
  std::vector<ThingId> list_parents(const ThingId& id) const;

  // Returns the removed ids. Cascade removes the whole twin subtree; types
  // only support orphan deletion.
  std::vector<ThingId> remove(const ThingId& id, DeleteMode mode);

  // Applies a modify envelope on behalf of `subject`, which needs write
  // permission in the twin's policy. The emitted event carries the
  // applied path and value with `subject` as originator.
  TwinRecord update(const ThingId& id, const Envelope& command, const std::string& subject);

  // Raw records including managed attributes, for diagnostics and tests.
  std::vector<TwinRecord> raw_records() const;

  // Re-publishes events that were persisted but could not be delivered.
  void flush_outbox();

  void crash();
  void recover();
  bool available() const noexcept;

 private:
  struct State;

  State& state() const;
  void commit(State& s, std::vector<store::KvLog::Op> ops, std::vector<Envelope> events);
  void publish_outbox(State& s);

  bus::Bus& bus_;
  Options options_;
  mutable std::shared_mutex mu_;
  std::unique_ptr<State> state_;
};

}  // namespace twinforge::registry
