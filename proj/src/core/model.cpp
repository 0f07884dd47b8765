#include <algorithm>
#include <cctype>
#include <optional>

#include "twinforge/core/envelope.hpp"
#include "twinforge/core/error.hpp"
#include "twinforge/core/policy.hpp"

namespace twinforge {

// ---------------------------------------------------------------- ThingId

bool is_valid_id_part(std::string_view part) noexcept {
  if (part.empty()) return false;
  return std::none_of(part.begin(), part.end(), [](char c) {
    return c == ':' || c == '/' || std::isspace(static_cast<unsigned char>(c));
  });
}

ThingId parse_thing_id(std::string_view text) {
  const auto colon = text.find(':');
  if (colon == std::string_view::npos || text.find(':', colon + 1) != std::string_view::npos)
    throw Error(Errc::MalformedId, "'" + std::string(text) + "' must contain exactly one ':'");
  auto ns = text.substr(0, colon);
  auto name = text.substr(colon + 1);
  if (!is_valid_id_part(ns) || !is_valid_id_part(name))
    throw Error(Errc::MalformedId, "'" + std::string(text) + "' has an empty or invalid part");
  return ThingId{std::string(ns), std::string(name)};
}

// ---------------------------------------------------------------- Twin

bool managed::is_managed_key(std::string_view key) noexcept {
  return key == kIsType || key == kType || key == kParent || key == kChildren;
}

bool is_scalar_or_null(const Json& v) noexcept {
  return v.is_null() || v.is_number() || v.is_string() || v.is_boolean();
}

Json features_to_json(const std::map<std::string, FeatureState>& features) {
  Json out = Json::object();
  for (const auto& [name, state] : features) {
    Json props = Json::object();
    for (const auto& [k, v] : state.properties) props[k] = v;
    out[name] = Json{{"properties", std::move(props)}};
  }
  return out;
}

namespace {

FeatureState feature_from_json(const std::string& name, const Json& j) {
  if (!j.is_object()) throw Error(Errc::BadValue, "feature '" + name + "' must be an object");
  auto it = j.find("properties");
  FeatureState state;
  if (it == j.end()) return state;
  if (!it->is_object()) throw Error(Errc::BadValue, "feature '" + name + "' properties must be an object");
  for (const auto& [k, v] : it->items()) {
    if (!is_scalar_or_null(v))
      throw Error(Errc::BadValue, "property '" + name + "." + k + "' must be a scalar or null");
    state.properties[k] = v;
  }
  return state;
}

}  // namespace

std::map<std::string, FeatureState> features_from_json(const Json& j) {
  if (j.is_null()) return {};
  if (!j.is_object()) throw Error(Errc::BadValue, "features must be an object");
  std::map<std::string, FeatureState> out;
  for (const auto& [name, f] : j.items()) out[name] = feature_from_json(name, f);
  return out;
}

Json to_json(const TwinRecord& t) {
  return Json{{"thingId", t.thing_id.str()},
              {"policyId", t.policy_id},
              {"attributes", t.attributes},
              {"features", features_to_json(t.features)}};
}

TwinRecord twin_from_json(const Json& j) {
  if (!j.is_object()) throw Error(Errc::BadValue, "twin must be a JSON object");
  TwinRecord t;
  auto id = j.find("thingId");
  if (id == j.end() || !id->is_string()) throw Error(Errc::BadValue, "thingId must be a string");
  t.thing_id = parse_thing_id(id->get<std::string>());
  if (auto p = j.find("policyId"); p != j.end()) {
    if (!p->is_string()) throw Error(Errc::BadValue, "policyId must be a string");
    t.policy_id = p->get<std::string>();
  }
  if (auto a = j.find("attributes"); a != j.end() && !a->is_null()) {
    if (!a->is_object()) throw Error(Errc::BadValue, "attributes must be an object");
    t.attributes = *a;
  }
  if (auto f = j.find("features"); f != j.end()) t.features = features_from_json(*f);
  return t;
}

// ---------------------------------------------------------------- Policy

namespace {

// Exact entry first, then "prefix:*" entries matching the subject.
std::optional<Permission> permission_for(const Policy& p, const std::string& subject) {
  if (auto it = p.entries.find(subject); it != p.entries.end()) return it->second;
  std::optional<Permission> out;
  for (const auto& [key, perm] : p.entries) {
    if (key.size() < 2 || key.compare(key.size() - 2, 2, ":*") != 0) continue;
    if (subject.compare(0, key.size() - 1, key, 0, key.size() - 1) != 0) continue;
    if (!out) out = Permission{};
    out->read = out->read || perm.read;
    out->write = out->write || perm.write;
  }
  return out;
}

}  // namespace

bool Policy::can_read(const std::string& subject) const {
  auto p = permission_for(*this, subject);
  return p && (p->read || p->write);
}

bool Policy::can_write(const std::string& subject) const {
  auto p = permission_for(*this, subject);
  return p && p->write;
}

void validate_policy(const Policy& p) {
  if (p.policy_id.empty()) throw Error(Errc::InvalidArgument, "policyId is empty");
  const bool any_writer =
      std::any_of(p.entries.begin(), p.entries.end(), [](const auto& e) { return e.second.write; });
  if (!any_writer) throw Error(Errc::InvalidArgument, "policy '" + p.policy_id + "' has no subject with write");
}

Json to_json(const Policy& p) {
  Json entries = Json::object();
  for (const auto& [subject, perm] : p.entries) entries[subject] = {{"read", perm.read}, {"write", perm.write}};
  return Json{{"policyId", p.policy_id}, {"entries", std::move(entries)}};
}

Policy policy_from_json(const Json& j) {
  if (!j.is_object()) throw Error(Errc::BadValue, "policy must be a JSON object");
  Policy p;
  p.policy_id = j.value("policyId", std::string());
  if (auto e = j.find("entries"); e != j.end()) {
    if (!e->is_object()) throw Error(Errc::BadValue, "policy entries must be an object");
    for (const auto& [subject, perm] : e->items()) {
      if (!perm.is_object()) throw Error(Errc::BadValue, "permission for '" + subject + "' must be an object");
      p.entries[subject] = Permission{perm.value("read", false), perm.value("write", false)};
    }
  }
  return p;
}

// ---------------------------------------------------------------- Envelope

std::string_view to_string(Action a) noexcept {
  switch (a) {
    case Action::Create: return "create";
    case Action::Modify: return "modify";
    case Action::Delete: return "delete";
  }
  return "";
}

std::string make_topic(const ThingId& id, Channel channel, Action action) {
  std::string t = id.ns + "/" + id.name + "/things/twin/";
  t += channel == Channel::Commands ? "commands/" : "events/";
  t += to_string(action);
  return t;
}

namespace {

std::vector<std::string_view> split_on(std::string_view s, char sep) {
  std::vector<std::string_view> parts;
  std::size_t start = 0;
  while (true) {
    auto pos = s.find(sep, start);
    parts.push_back(s.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return parts;
}

}  // namespace

TopicParts parse_topic(std::string_view topic) {
  const auto parts = split_on(topic, '/');
  if (parts.size() != 6)
    throw Error(Errc::BadTopic, "topic '" + std::string(topic) + "' must have 6 segments");
  if (!is_valid_id_part(parts[0]) || !is_valid_id_part(parts[1]))
    throw Error(Errc::BadTopic, "topic '" + std::string(topic) + "' has an invalid thing id");
  if (parts[2] != "things" || parts[3] != "twin")
    throw Error(Errc::BadTopic, "topic '" + std::string(topic) + "' must address things/twin");
  TopicParts out{ThingId{std::string(parts[0]), std::string(parts[1])}, Channel::Commands, Action::Modify};
  if (parts[4] == "commands") out.channel = Channel::Commands;
  else if (parts[4] == "events") out.channel = Channel::Events;
  else throw Error(Errc::BadTopic, "unsupported channel '" + std::string(parts[4]) + "'");
  if (parts[5] == "modify") out.action = Action::Modify;
  else if (parts[5] == "create") out.action = Action::Create;
  else if (parts[5] == "delete") out.action = Action::Delete;
  else throw Error(Errc::BadTopic, "unsupported action '" + std::string(parts[5]) + "'");
  return out;
}

std::vector<std::string> split_path(std::string_view path) {
  if (path.empty() || path.front() != '/') throw Error(Errc::BadPath, "path '" + std::string(path) + "' must start with '/'");
  if (path == "/") return {};
  std::vector<std::string> out;
  for (auto seg : split_on(path.substr(1), '/')) {
    if (seg.empty()) throw Error(Errc::BadPath, "path '" + std::string(path) + "' has an empty segment");
    out.emplace_back(seg);
  }
  return out;
}

namespace {

void require_properties_object(const Json& props, const std::string& where) {
  if (!props.is_object()) throw Error(Errc::BadValue, where + " properties must be an object");
  for (const auto& [k, v] : props.items())
    if (!is_scalar_or_null(v)) throw Error(Errc::BadValue, where + "." + k + " must be a scalar or null");
}

void require_feature_object(const Json& f, const std::string& name) {
  if (!f.is_object()) throw Error(Errc::BadValue, "feature '" + name + "' must be an object");
  auto it = f.find("properties");
  if (it == f.end()) throw Error(Errc::BadValue, "feature '" + name + "' lacks a properties object");
  require_properties_object(*it, "feature '" + name + "'");
}

void require_features_object(const Json& v) {
  if (!v.is_object()) throw Error(Errc::BadValue, "features value must be an object");
  for (const auto& [name, f] : v.items()) require_feature_object(f, name);
}

// Checks that the path is addressable and `value` has the right shape.
void validate_path_value(const std::vector<std::string>& segs, const Json& value, bool value_required) {
  if (segs.empty()) {
    if (!value_required) return;
    if (!value.is_object()) throw Error(Errc::BadValue, "value at '/' must be an object");
    if (auto a = value.find("attributes"); a != value.end() && !a->is_object())
      throw Error(Errc::BadValue, "attributes must be an object");
    if (auto f = value.find("features"); f != value.end()) require_features_object(*f);
    return;
  }
  const auto& root = segs[0];
  if (root == "policyId") {
    if (segs.size() != 1) throw Error(Errc::BadPath, "policyId has no sub-paths");
    if (value_required && !value.is_string()) throw Error(Errc::BadValue, "policyId value must be a string");
    return;
  }
  if (root == "attributes") {
    if (value_required && segs.size() == 1 && !value.is_object())
      throw Error(Errc::BadValue, "attributes value must be an object");
    return;
  }
  if (root != "features") throw Error(Errc::BadPath, "unsupported path root '" + root + "'");
  if (segs.size() > 4) throw Error(Errc::BadPath, "feature paths end at a property");
  if (segs.size() >= 3 && segs[2] != "properties")
    throw Error(Errc::BadPath, "feature sub-path must be 'properties'");
  if (!value_required) return;
  switch (segs.size()) {
    case 1: require_features_object(value); break;
    case 2: require_feature_object(value, segs[1]); break;
    case 3: require_properties_object(value, "feature '" + segs[1] + "'"); break;
    case 4:
      if (!is_scalar_or_null(value))
        throw Error(Errc::BadValue, "property value at '" + segs[1] + "." + segs[3] + "' must be a scalar or null");
      break;
  }
}

}  // namespace

void validate_envelope(const Envelope& e) {
  const auto parts = parse_topic(e.topic);
  if (e.path.empty()) throw Error(Errc::BadPath, "path is empty");
  const auto segs = split_path(e.path);
  switch (parts.action) {
    case Action::Create:
      if (!segs.empty()) throw Error(Errc::BadPath, "create must address '/'");
      if (!e.value.is_object()) throw Error(Errc::BadValue, "create value must be an object");
      validate_path_value(segs, e.value, true);
      break;
    case Action::Modify:
      validate_path_value(segs, e.value, true);
      break;
    case Action::Delete:
      validate_path_value(segs, e.value, false);
      if (!e.value.is_null()) throw Error(Errc::BadValue, "delete carries no value");
      break;
  }
}

bool is_valid_envelope(const Envelope& e) noexcept {
  try {
    validate_envelope(e);
    return true;
  } catch (const Error&) {
    return false;
  }
}

void merge_into(Json& target, const Json& patch) {
  if (!patch.is_object() || !target.is_object()) {
    target = patch;
    return;
  }
  for (const auto& [k, v] : patch.items()) {
    auto it = target.find(k);
    if (it != target.end() && it->is_object() && v.is_object()) merge_into(*it, v);
    else target[k] = v;
  }
}

namespace {

void guard_managed(const std::vector<std::string>& segs, const Json& value) {
  auto check_attrs = [](const Json& attrs) {
    if (!attrs.is_object()) return;
    for (const auto& [k, _] : attrs.items())
      if (managed::is_managed_key(k))
        throw Error(Errc::ManagedAttributeViolation, "attribute '" + k + "' is managed by the registry");
  };
  if (segs.empty()) {
    if (auto a = value.find("attributes"); a != value.end()) check_attrs(*a);
  } else if (segs[0] == "attributes") {
    if (segs.size() == 1) check_attrs(value);
    else if (managed::is_managed_key(segs[1]))
      throw Error(Errc::ManagedAttributeViolation, "attribute '" + segs[1] + "' is managed by the registry");
  }
}

}  // namespace

TwinRecord apply_envelope(const TwinRecord& t, const Envelope& e) {
  const auto parts = parse_topic(e.topic);
  if (parts.thing_id != t.thing_id)
    throw Error(Errc::BadTopic, "envelope addresses " + parts.thing_id.str() + ", not " + t.thing_id.str());
  if (parts.action != Action::Modify) throw Error(Errc::BadTopic, "only modify envelopes can be applied");
  const auto segs = split_path(e.path);
  guard_managed(segs, e.value);

  Json doc = to_json(t);
  if (segs.empty()) {
    if (auto id = e.value.find("thingId"); id != e.value.end() && *id != doc["thingId"])
      throw Error(Errc::BadValue, "thingId cannot be changed");
    merge_into(doc, e.value);
  } else {
    Json* cur = &doc;
    for (std::size_t i = 0; i + 1 < segs.size(); ++i) {
      if (!cur->is_object())
        throw Error(Errc::PathNotApplicable, "'" + segs[i - 1] + "' in " + e.path + " is not an object");
      auto it = cur->find(segs[i]);
      if (it == cur->end() || it->is_null()) {
        (*cur)[segs[i]] = Json::object();
        it = cur->find(segs[i]);
      }
      cur = &*it;
    }
    if (!cur->is_object())
      throw Error(Errc::PathNotApplicable, "parent of " + e.path + " is not an object");
    Json& slot = (*cur)[segs.back()];
    if (e.value.is_object() && !slot.is_null() && !slot.is_object())
      throw Error(Errc::PathNotApplicable, e.path + " holds a non-object");
    if (slot.is_null() && e.value.is_object()) slot = Json::object();
    merge_into(slot, e.value);
  }
  return twin_from_json(doc);
}

Json to_json(const Envelope& e) {
  Json headers = Json::object();
  for (const auto& [k, v] : e.headers) headers[k] = v;
  return Json{{"topic", e.topic}, {"path", e.path}, {"value", e.value}, {"headers", std::move(headers)}};
}

Envelope envelope_from_json(const Json& j) {
  if (!j.is_object()) throw Error(Errc::BadValue, "envelope must be a JSON object");
  Envelope e;
  auto topic = j.find("topic");
  if (topic == j.end() || !topic->is_string()) throw Error(Errc::BadTopic, "topic must be a string");
  e.topic = topic->get<std::string>();
  if (auto p = j.find("path"); p != j.end()) {
    if (!p->is_string()) throw Error(Errc::BadPath, "path must be a string");
    e.path = p->get<std::string>();
  }
  if (auto v = j.find("value"); v != j.end()) e.value = *v;
  if (auto h = j.find("headers"); h != j.end() && !h->is_null()) {
    if (!h->is_object()) throw Error(Errc::BadValue, "headers must be an object");
    for (const auto& [k, v] : h->items()) e.headers[k] = v.is_string() ? v.get<std::string>() : v.dump();
  }
  return e;
}

}  // namespace twinforge
