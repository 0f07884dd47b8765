#include "twinforge/gateway/gateway.hpp"

#include <openssl/crypto.h>
#include <openssl/evp.h>
#include <openssl/rand.h>

#include <cmath>
#include <cstring>
#include <map>

#include "twinforge/bus/dead_letter.hpp"
#include "twinforge/core/error.hpp"

namespace twinforge::gateway {

namespace {

constexpr const char* kTenantPrefix = "tenant/";
constexpr const char* kDevicePrefix = "device/";

std::string to_hex(const unsigned char* p, std::size_t n) {
  static constexpr char kDigits[] = "0123456789abcdef";
  std::string out;
  out.reserve(n * 2);
  for (std::size_t i = 0; i < n; ++i) {
    out.push_back(kDigits[p[i] >> 4]);
    out.push_back(kDigits[p[i] & 0xf]);
  }
  return out;
}

std::string sha256_hex(const std::string& data) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(data.data(), data.size(), digest, &len, EVP_sha256(), nullptr) != 1)
    throw Error(Errc::IoError, "sha256 failed");
  return to_hex(digest, len);
}

const Json* lookup(const Json& doc, const std::string& source) {
  if (source.empty()) return &doc;
  if (source.front() == '/') {
    const Json::json_pointer ptr(source);
    return doc.contains(ptr) ? &doc.at(ptr) : nullptr;
  }
  const Json* cur = &doc;
  std::size_t start = 0;
  while (start <= source.size()) {
    auto dot = source.find('.', start);
    if (dot == std::string::npos) dot = source.size();
    const auto key = source.substr(start, dot - start);
    if (!cur->is_object()) return nullptr;
    auto it = cur->find(key);
    if (it == cur->end()) return nullptr;
    cur = &*it;
    start = dot + 1;
  }
  return cur;
}

[[noreturn]] void mapping_failed(const std::string& why) { throw Error(Errc::MappingFailed, why); }

std::string timestamp_header(const Json& v, const std::string& format) {
  if (format == "iso8601") {
    if (!v.is_string()) mapping_failed("timestamp is not a string");
    try {
      return std::to_string(parse_iso8601(v.get<std::string>()));
    } catch (const Error& e) {
      mapping_failed(e.what());
    }
  }
  if (!v.is_number()) mapping_failed("timestamp is not a number");
  if (format == "epoch_ns") return std::to_string(v.get<std::int64_t>());
  const double scale = format == "epoch_s" ? 1e9 : format == "epoch_ms" ? 1e6 : 0;
  if (scale == 0) mapping_failed("unknown timestamp format '" + format + "'");
  return std::to_string(static_cast<std::int64_t>(std::llround(v.get<double>() * scale)));
}

bool looks_like_envelope(const Json& j) {
  return j.is_object() && j.contains("topic") && j.contains("path") && j["topic"].is_string() &&
         j["path"].is_string();
}

struct Device {
  std::string username;
  std::string hash;
};

struct Tenant {
  PayloadMapper mapper;
  std::map<std::string, Device> devices;
};

std::string device_key(const std::string& tenant, const std::string& device) {
  return kDevicePrefix + store::escape_name(tenant) + "/" + store::escape_name(device);
}

}  // namespace

// ---------------------------------------------------------------- mapper

PayloadMapper::PayloadMapper(std::vector<MappingRule> rules) : rules_(std::move(rules)) {
  for (const auto& r : rules_) {
    if (r.target.empty() == r.header.empty())
      throw Error(Errc::InvalidArgument, "mapping rule for '" + r.source + "' needs exactly one of target/header");
    if (!r.target.empty()) split_path(r.target);
  }
}

Envelope PayloadMapper::map(const ThingId& thing, const Json& payload) const {
  std::vector<std::pair<std::vector<std::string>, Json>> writes;
  std::map<std::string, std::string> headers;
  for (const auto& r : rules_) {
    const Json* v = lookup(payload, r.source);
    if (!v) {
      if (r.optional) continue;
      mapping_failed("field '" + r.source + "' missing");
    }
    if (!r.header.empty()) {
      headers[r.header] = r.header == header::kTimestamp ? timestamp_header(*v, r.format)
                                                         : (v->is_string() ? v->get<std::string>() : v->dump());
    } else {
      writes.emplace_back(split_path(r.target), *v);
    }
  }
  if (writes.empty()) mapping_failed("no mapped fields");

  Envelope e;
  e.topic = make_topic(thing, Channel::Commands, Action::Modify);
  e.headers = std::move(headers);
  if (writes.size() == 1) {
    e.path = writes[0].first.empty() ? "/" : "";
    for (const auto& s : writes[0].first) e.path += "/" + s;
    e.value = writes[0].second;
  } else {
    std::size_t common = writes[0].first.size();
    for (const auto& [segs, _] : writes) {
      common = std::min(common, segs.size());
      for (std::size_t i = 0; i < common; ++i)
        if (segs[i] != writes[0].first[i]) common = i;
    }
    Json value = Json::object();
    for (const auto& [segs, v] : writes) {
      if (segs.size() == common) mapping_failed("overlapping mapping targets");
      Json* cur = &value;
      for (std::size_t i = common; i + 1 < segs.size(); ++i) {
        cur = &(*cur)[segs[i]];
        if (!cur->is_null() && !cur->is_object()) mapping_failed("overlapping mapping targets");
      }
      if (cur->contains(segs.back())) mapping_failed("overlapping mapping targets");
      (*cur)[segs.back()] = v;
    }
    e.path = common == 0 ? "/" : "";
    for (std::size_t i = 0; i < common; ++i) e.path += "/" + writes[0].first[i];
    e.value = std::move(value);
  }
  try {
    validate_envelope(e);
  } catch (const Error& err) {
    mapping_failed(err.what());
  }
  return e;
}

Json to_json(const PayloadMapper& m) {
  Json rules = Json::array();
  for (const auto& r : m.rules()) {
    Json j{{"source", r.source}};
    if (!r.target.empty()) j["target"] = r.target;
    if (!r.header.empty()) {
      j["header"] = r.header;
      j["format"] = r.format;
    }
    if (r.optional) j["optional"] = true;
    rules.push_back(std::move(j));
  }
  return Json{{"rules", rules}};
}

PayloadMapper mapper_from_json(const Json& j) {
  if (j.is_null()) return {};
  if (!j.is_object() || !j.value("rules", Json::array()).is_array())
    throw Error(Errc::InvalidArgument, "mapper must be an object with a 'rules' array");
  std::vector<MappingRule> rules;
  for (const auto& r : j.value("rules", Json::array())) {
    if (!r.is_object() || !r.contains("source") || !r["source"].is_string())
      throw Error(Errc::InvalidArgument, "mapping rule needs a string 'source'");
    MappingRule rule;
    rule.source = r["source"].get<std::string>();
    rule.target = r.value("target", "");
    rule.header = r.value("header", "");
    rule.format = r.value("format", "iso8601");
    rule.optional = r.value("optional", false);
    rules.push_back(std::move(rule));
  }
  return PayloadMapper(std::move(rules));
}

// ---------------------------------------------------------------- credentials

std::string telemetry_topic(const std::string& tenant_id) { return "telemetry/" + tenant_id; }

std::string hash_password(const std::string& password) {
  unsigned char salt[16];
  if (RAND_bytes(salt, sizeof salt) != 1) throw Error(Errc::IoError, "no randomness for salt");
  const auto salt_hex = to_hex(salt, sizeof salt);
  return salt_hex + "$" + sha256_hex(salt_hex + password);
}

bool verify_password(const std::string& password, const std::string& stored) {
  const auto sep = stored.find('$');
  if (sep == std::string::npos) return false;
  const auto expected = stored.substr(sep + 1);
  const auto actual = sha256_hex(stored.substr(0, sep) + password);
  return actual.size() == expected.size() && CRYPTO_memcmp(actual.data(), expected.data(), actual.size()) == 0;
}

// ---------------------------------------------------------------- gateway

struct Gateway::State {
  State(const std::filesystem::path& path, store::Durability durability) : kv(path, durability) {
    for (const auto& [key, value] : kv.scan(kTenantPrefix))
      tenants[store::unescape_name(key.substr(std::strlen(kTenantPrefix)))].mapper =
          mapper_from_json(value.value("mapper", Json()));
    for (const auto& [_, value] : kv.scan(kDevicePrefix))
      tenants[value.at("tenant").get<std::string>()].devices[value.at("device").get<std::string>()] =
          Device{value.at("username").get<std::string>(), value.at("hash").get<std::string>()};
  }

  Tenant& tenant(const std::string& id) {
    auto it = tenants.find(id);
    if (it == tenants.end()) throw Error(Errc::UnknownTenant, "no tenant '" + id + "'");
    return it->second;
  }

  store::KvLog kv;
  std::map<std::string, Tenant> tenants;
};

Gateway::Gateway(bus::Bus& bus, Options options) : bus_(bus), options_(std::move(options)) {
  std::filesystem::create_directories(options_.data_dir);
  state_ = std::make_unique<State>(options_.data_dir / "gateway.kv", options_.durability);
}

Gateway::~Gateway() = default;

Gateway::State& Gateway::state() const {
  if (!state_) throw Error(Errc::Unavailable, "gateway is down");
  return *state_;
}

void Gateway::crash() {
  std::lock_guard lock(mu_);
  state_.reset();
}

void Gateway::recover() {
  std::lock_guard lock(mu_);
  if (!state_) state_ = std::make_unique<State>(options_.data_dir / "gateway.kv", options_.durability);
}

bool Gateway::available() const noexcept {
  std::lock_guard lock(mu_);
  return state_ != nullptr;
}

void Gateway::create_tenant(const std::string& tenant_id, const PayloadMapper& mapper) {
  if (!is_valid_id_part(tenant_id)) throw Error(Errc::InvalidArgument, "invalid tenant id '" + tenant_id + "'");
  std::lock_guard lock(mu_);
  auto& s = state();
  if (s.tenants.count(tenant_id)) throw Error(Errc::DuplicateId, "tenant '" + tenant_id + "' exists");
  s.kv.put(kTenantPrefix + store::escape_name(tenant_id), Json{{"mapper", to_json(mapper)}});
  s.tenants[tenant_id].mapper = mapper;
  bus_.create_topic(telemetry_topic(tenant_id));
}

void Gateway::delete_tenant(const std::string& tenant_id) {
  std::lock_guard lock(mu_);
  auto& s = state();
  auto& t = s.tenant(tenant_id);
  std::vector<store::KvLog::Op> ops{{kTenantPrefix + store::escape_name(tenant_id), std::nullopt}};
  for (const auto& [device, _] : t.devices) ops.push_back({device_key(tenant_id, device), std::nullopt});
  s.kv.commit(ops);
  s.tenants.erase(tenant_id);
}

void Gateway::set_mapper(const std::string& tenant_id, const PayloadMapper& mapper) {
  std::lock_guard lock(mu_);
  auto& s = state();
  auto& t = s.tenant(tenant_id);
  s.kv.put(kTenantPrefix + store::escape_name(tenant_id), Json{{"mapper", to_json(mapper)}});
  t.mapper = mapper;
}

std::vector<std::string> Gateway::list_tenants() const {
  std::lock_guard lock(mu_);
  std::vector<std::string> out;
  for (const auto& [id, _] : state().tenants) out.push_back(id);
  return out;
}

TenantInfo Gateway::tenant(const std::string& tenant_id) const {
  std::lock_guard lock(mu_);
  const auto& t = state().tenant(tenant_id);
  TenantInfo info{tenant_id, {}, t.mapper};
  for (const auto& [id, d] : t.devices) info.devices.push_back({id, d.username});
  return info;
}

void Gateway::register_device(const std::string& tenant_id, const std::string& device_id,
                              const Credentials& credentials) {
  if (device_id.empty()) throw Error(Errc::InvalidArgument, "empty device id");
  if (credentials.username.empty()) throw Error(Errc::InvalidArgument, "empty username");
  std::lock_guard lock(mu_);
  auto& s = state();
  auto& t = s.tenant(tenant_id);
  if (t.devices.count(device_id)) throw Error(Errc::DuplicateDevice, device_id + " already registered");
  for (const auto& [id, d] : t.devices)
    if (d.username == credentials.username)
      throw Error(Errc::Conflict, "username '" + credentials.username + "' is taken in tenant " + tenant_id);
  Device d{credentials.username, hash_password(credentials.password)};
  s.kv.put(device_key(tenant_id, device_id),
           Json{{"tenant", tenant_id}, {"device", device_id}, {"username", d.username}, {"hash", d.hash}});
  t.devices[device_id] = std::move(d);
}

void Gateway::remove_device(const std::string& tenant_id, const std::string& device_id) {
  std::lock_guard lock(mu_);
  auto& s = state();
  auto& t = s.tenant(tenant_id);
  if (!t.devices.count(device_id)) throw Error(Errc::NotFound, "no device '" + device_id + "'");
  s.kv.erase(device_key(tenant_id, device_id));
  t.devices.erase(device_id);
}

std::uint64_t Gateway::ingest(const std::string& tenant_id, const std::string& device_id,
                              const Credentials& credentials, std::string_view payload,
                              const bus::Headers& headers) {
  PayloadMapper mapper;
  {
    std::lock_guard lock(mu_);
    auto& t = state().tenant(tenant_id);
    auto it = t.devices.find(device_id);
    if (it == t.devices.end() || it->second.username != credentials.username ||
        !verify_password(credentials.password, it->second.hash)) {
      options_.metrics->add(metric::kAuthFailures);
      throw Error(Errc::AuthFailed, "bad credentials for device '" + device_id + "'");
    }
    mapper = t.mapper;
  }

  bus::Headers out = headers;
  out[header::kDeviceId] = device_id;
  std::optional<ThingId> thing;
  try {
    thing = parse_thing_id(device_id);
  } catch (const Error&) {
  }

  std::string body;
  try {
    Json doc;
    try {
      doc = Json::parse(payload);
    } catch (const Json::parse_error& e) {
      mapping_failed(std::string("payload is not JSON: ") + e.what());
    }
    if (looks_like_envelope(doc)) {
      Envelope e;
      try {
        e = envelope_from_json(doc);
        validate_envelope(e);
      } catch (const Error& err) {
        mapping_failed(err.what());
      }
      if (thing && parse_topic(e.topic).thing_id != *thing)
        mapping_failed("envelope addresses " + parse_topic(e.topic).thing_id.str() + ", not the device's twin");
      for (const auto& [k, v] : e.headers) out.emplace(k, v);
      body = std::string(payload);
    } else {
      if (!thing) mapping_failed("device id '" + device_id + "' is not a thing id");
      if (mapper.empty()) mapping_failed("tenant has no payload mapper");
      auto e = mapper.map(*thing, doc);
      for (const auto& [k, v] : e.headers) out.emplace(k, v);
      body = twinforge::to_json(e).dump();
    }
  } catch (const Error& err) {
    if (err.code() != Errc::MappingFailed) throw;
    bus::Headers dl = out;
    dl["tenant"] = tenant_id;
    bus::dead_letter(bus_, *options_.metrics, "gateway", err.what(), std::move(dl), payload);
    throw;
  }
  if (!out.count(header::kTimestamp)) out[header::kTimestamp] = std::to_string(options_.clock->now());
  const auto offset = bus_.publish(telemetry_topic(tenant_id), out, body);
  options_.metrics->add(metric::kIngested);
  return offset;
}

bus::Subscription Gateway::subscribe_telemetry(const std::string& tenant_id) {
  {
    std::lock_guard lock(mu_);
    state().tenant(tenant_id);
  }
  return bus_.subscribe_latest(telemetry_topic(tenant_id));
}

bus::Subscription Gateway::subscribe_telemetry(const std::string& tenant_id, const std::string& group) {
  {
    std::lock_guard lock(mu_);
    state().tenant(tenant_id);
  }
  return bus_.subscribe(telemetry_topic(tenant_id), group);
}

}  // namespace twinforge::gateway
