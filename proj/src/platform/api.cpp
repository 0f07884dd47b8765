#include <openssl/evp.h>

#include <functional>
#include <stdexcept>

#include "twinforge/core/clock.hpp"
#include "twinforge/platform/api.hpp"
#include "twinforge/platform/platform.hpp"

namespace twinforge::platform {

namespace {

struct Call {
  const ApiRequest& req;
  std::map<std::string, std::string> params;

  const std::string& p(const std::string& name) const { return params.at(name); }
  ThingId id(const std::string& name = "id") const { return parse_thing_id(p(name)); }

  std::optional<std::string> q(const std::string& name) const {
    auto it = req.query.find(name);
    if (it == req.query.end()) return std::nullopt;
    return it->second;
  }

  Json json() const {
    try {
      return Json::parse(req.body);
    } catch (const Json::parse_error& e) {
      throw Error(Errc::InvalidArgument, std::string("body is not JSON: ") + e.what());
    }
  }
};

using Handler = std::function<ApiResponse(Platform&, const HttpApi::Options&, const Call&)>;

ApiResponse ok(const Json& j, int status = 200) { return {status, j.dump(), "application/json"}; }
ApiResponse text(std::string body, std::string type) { return {200, std::move(body), std::move(type)}; }

Json ids_json(const std::vector<ThingId>& ids) {
  Json out = Json::array();
  for (const auto& id : ids) out.push_back(id.str());
  return out;
}

Json tenant_json(const gateway::TenantInfo& t) {
  Json devices = Json::array();
  for (const auto& d : t.devices) devices.push_back({{"deviceId", d.device_id}, {"username", d.username}});
  return {{"tenantId", t.tenant_id}, {"devices", devices}, {"mapper", gateway::to_json(t.mapper)}};
}

std::string required(const Json& j, const char* key) {
  if (!j.is_object() || !j.contains(key) || !j[key].is_string())
    throw Error(Errc::InvalidArgument, std::string("body needs a string '") + key + "'");
  return j[key].get<std::string>();
}

TimestampNs time_param(const std::string& text) {
  if (text.find('T') != std::string::npos) return parse_iso8601(text);
  try {
    std::size_t used = 0;
    const auto v = std::stoll(text, &used);
    if (used == text.size()) return v;
  } catch (const std::exception&) {
  }
  throw Error(Errc::InvalidArgument, "time must be ISO 8601 or integer nanoseconds: " + text);
}

std::size_t count_param(const Call& c, const char* name, std::size_t fallback) {
  auto v = c.q(name);
  if (!v) return fallback;
  try {
    return std::stoull(*v);
  } catch (const std::exception&) {
    throw Error(Errc::InvalidArgument, std::string(name) + " must be a number");
  }
}

bool flag_param(const Call& c, const char* name) {
  auto v = c.q(name);
  return v && (*v == "true" || *v == "1" || v->empty());
}

ApiResponse ts_query(Platform& p, const Call& c) {
  auto store = p.timeseries();
  std::vector<timeseries::Point> points;
  timeseries::Query q;
  if (auto v = c.q("from")) q.from = time_param(*v);
  if (auto v = c.q("to")) q.to = time_param(*v);
  if (auto v = c.q("originator")) q.originator = *v;
  const auto thing = c.q("thing");
  const auto feature = c.q("feature");
  const auto property = c.q("property");
  for (const auto& key : store->series()) {
    if (thing && key.thing_id.str() != *thing) continue;
    if (feature && key.feature != *feature) continue;
    if (property && key.property != *property) continue;
    q.thing_id = key.thing_id;
    q.feature = key.feature;
    q.property = key.property;
    auto part = store->query(q);
    points.insert(points.end(), part.begin(), part.end());
  }
  const auto format = c.q("format").value_or("json");
  if (format == "csv") return text(timeseries::to_csv(points), "text/csv");
  if (format == "jsonl") return text(timeseries::to_jsonl(points), "application/x-ndjson");
  if (format != "json") throw Error(Errc::InvalidArgument, "format must be json, jsonl or csv");
  Json out = Json::array();
  for (const auto& pt : points) out.push_back(timeseries::to_json(pt));
  return ok(out);
}

gateway::Credentials basic_credentials(const ApiRequest& req) {
  auto it = req.headers.find("authorization");
  if (it == req.headers.end() || it->second.rfind("Basic ", 0) != 0)
    throw Error(Errc::AuthFailed, "basic credentials required");
  const std::string encoded = it->second.substr(6);
  std::string decoded(encoded.size(), '\0');
  const int n = EVP_DecodeBlock(reinterpret_cast<unsigned char*>(decoded.data()),
                                reinterpret_cast<const unsigned char*>(encoded.data()), static_cast<int>(encoded.size()));
  if (n < 0) throw Error(Errc::AuthFailed, "malformed basic credentials");
  // EVP_DecodeBlock counts the padding as output bytes.
  std::size_t len = static_cast<std::size_t>(n);
  for (auto r = encoded.rbegin(); r != encoded.rend() && *r == '='; ++r) --len;
  decoded.resize(len);
  const auto colon = decoded.find(':');
  if (colon == std::string::npos) throw Error(Errc::AuthFailed, "malformed basic credentials");
  return {decoded.substr(0, colon), decoded.substr(colon + 1)};
}

Json message_json(const bus::Message& m) {
  return {{"offset", m.offset}, {"timestamp", m.timestamp}, {"headers", m.headers}, {"payload", m.payload}};
}

const std::map<std::string, Handler>& handlers() {
  using O = HttpApi::Options;
  static const std::map<std::string, Handler> table{
      {"GET /health",
       [](Platform& p, const O&, const Call&) {
         Json services = Json::object();
         bool all = true;
         for (auto s : kServices) {
           services[std::string(to_string(s))] = p.alive(s);
           all = all && p.alive(s);
         }
         return ok({{"status", all ? "ok" : "degraded"}, {"services", services}});
       }},
      {"GET /metrics",
       [](Platform& p, const O&, const Call&) { return text(p.metrics().render_text(), "text/plain; version=0.0.4"); }},
      {"GET /api/scene", [](Platform&, const O& o, const Call&) { return ok(o.scene); }},

      // Policies
      {"GET /api/policies",
       [](Platform& p, const O&, const Call&) {
         Json out = Json::array();
         for (const auto& pol : p.registry().list_policies()) out.push_back(to_json(pol));
         return ok(out);
       }},
      {"GET /api/policies/:id",
       [](Platform& p, const O&, const Call& c) { return ok(to_json(p.registry().get_policy(c.p("id")))); }},
      {"PUT /api/policies/:id",
       [](Platform& p, const O&, const Call& c) {
         Json body = c.json();
         body["policyId"] = c.p("id");
         auto pol = policy_from_json(body);
         p.registry().put_policy(pol);
         return ok(to_json(pol));
       }},

      // Things
      {"GET /api/things",
       [](Platform& p, const O&, const Call& c) {
         return ok(ids_json(flag_param(c, "roots") ? p.registry().list_root_twins() : p.registry().list_twins()));
       }},
      {"POST /api/things",
       [](Platform& p, const O&, const Call& c) {
         Json body = c.json();
         std::optional<ThingId> parent;
         if (body.is_object() && body.contains("parent")) {
           parent = parse_thing_id(required(body, "parent"));
           body.erase("parent");
         }
         return ok(to_json(p.registry().create_twin(twin_from_json(body), parent)), 201);
       }},
      {"GET /api/things/:id", [](Platform& p, const O&, const Call& c) { return ok(to_json(p.registry().get(c.id()))); }},
      {"DELETE /api/things/:id",
       [](Platform& p, const O&, const Call& c) {
         const auto mode = registry::parse_delete_mode(c.q("mode").value_or("orphan"));
         return ok({{"removed", ids_json(p.registry().remove(c.id(), mode))}});
       }},
      {"GET /api/things/:id/children",
       [](Platform& p, const O&, const Call& c) { return ok(ids_json(p.registry().list_children(c.id()))); }},
      {"GET /api/things/:id/parents",
       [](Platform& p, const O&, const Call& c) { return ok(ids_json(p.registry().list_parents(c.id()))); }},
      {"PUT /api/things/:id/children/:child",
       [](Platform& p, const O&, const Call& c) {
         p.registry().link(c.id(), c.id("child"));
         return ok({{"parent", c.p("id")}, {"child", c.p("child")}});
       }},
      {"DELETE /api/things/:id/children/:child",
       [](Platform& p, const O&, const Call& c) {
         p.registry().unlink(c.id(), c.id("child"));
         return ok({{"parent", c.p("id")}, {"child", c.p("child")}});
       }},
      {"POST /api/things/:id/commands",
       [](Platform& p, const O&, const Call& c) {
         const auto subject = c.q("subject").value_or("api");
         return ok(to_json(p.registry().update(c.id(), envelope_from_json(c.json()), subject)));
       }},

      // Types
      {"GET /api/types", [](Platform& p, const O&, const Call&) { return ok(ids_json(p.registry().list_types())); }},
      {"POST /api/types",
       [](Platform& p, const O&, const Call& c) {
         return ok(to_json(p.registry().create_type(twin_from_json(c.json()))), 201);
       }},
      {"GET /api/types/:id",
       [](Platform& p, const O&, const Call& c) {
         if (!p.registry().is_type(c.id())) throw Error(Errc::NotFound, "no type " + c.p("id"));
         return ok(to_json(p.registry().get(c.id())));
       }},
      {"DELETE /api/types/:id",
       [](Platform& p, const O&, const Call& c) {
         if (!p.registry().is_type(c.id())) throw Error(Errc::NotFound, "no type " + c.p("id"));
         return ok({{"removed", ids_json(p.registry().remove(c.id(), registry::DeleteMode::Orphan))}});
       }},
      {"POST /api/types/:id/instantiate",
       [](Platform& p, const O&, const Call& c) {
         const Json body = c.json();
         Json out = Json::array();
         for (const auto& t : p.registry().instantiate_from_type(c.id(), parse_thing_id(required(body, "thingId")),
                                                                 required(body, "policyId")))
           out.push_back(to_json(t));
         return ok(out, 201);
       }},

      // Gateway
      {"GET /api/tenants",
       [](Platform& p, const O&, const Call&) {
         Json out = Json::array();
         for (const auto& t : p.gateway().list_tenants()) out.push_back(tenant_json(p.gateway().tenant(t)));
         return ok(out);
       }},
      {"POST /api/tenants",
       [](Platform& p, const O&, const Call& c) {
         const Json body = c.json();
         const auto id = required(body, "tenantId");
         p.create_tenant(id, gateway::mapper_from_json(body.value("mapper", Json())));
         return ok(tenant_json(p.gateway().tenant(id)), 201);
       }},
      {"GET /api/tenants/:id",
       [](Platform& p, const O&, const Call& c) { return ok(tenant_json(p.gateway().tenant(c.p("id")))); }},
      {"DELETE /api/tenants/:id",
       [](Platform& p, const O&, const Call& c) {
         p.delete_tenant(c.p("id"));
         return ok({{"removed", c.p("id")}});
       }},
      {"PUT /api/tenants/:id/mapper",
       [](Platform& p, const O&, const Call& c) {
         p.gateway().set_mapper(c.p("id"), gateway::mapper_from_json(c.json()));
         return ok(tenant_json(p.gateway().tenant(c.p("id"))));
       }},
      {"POST /api/tenants/:id/devices",
       [](Platform& p, const O&, const Call& c) {
         const Json body = c.json();
         p.gateway().register_device(c.p("id"), required(body, "deviceId"),
                                     {required(body, "username"), required(body, "password")});
         return ok(tenant_json(p.gateway().tenant(c.p("id"))), 201);
       }},
      {"DELETE /api/tenants/:id/devices/:device",
       [](Platform& p, const O&, const Call& c) {
         p.gateway().remove_device(c.p("id"), c.p("device"));
         return ok(tenant_json(p.gateway().tenant(c.p("id"))));
       }},
      {"POST /ingest/:tenant/:device",
       [](Platform& p, const O&, const Call& c) {
         const auto creds = basic_credentials(c.req);
         bus::Headers headers;
         for (const char* h : {header::kTimestamp, header::kCorrelation})
           if (auto it = c.req.headers.find(h); it != c.req.headers.end()) headers[h] = it->second;
         const auto offset =
             p.gateway().ingest(c.p("tenant"), c.p("device"), creds, c.req.body, headers);
         return ok({{"offset", offset}}, 202);
       }},

      // Bus
      {"GET /api/bus/topics",
       [](Platform& p, const O&, const Call&) {
         Json out = Json::array();
         for (const auto& t : p.bus().topics())
           out.push_back({{"name", t.name}, {"endOffset", t.end_offset}, {"segments", t.segments}});
         return ok(out);
       }},
      {"GET /api/bus/topics/:name",
       [](Platform& p, const O&, const Call& c) {
         Json out = Json::array();
         for (const auto& m : p.bus().read(c.p("name"), count_param(c, "from", 0), count_param(c, "max", 100)))
           out.push_back(message_json(m));
         return ok(out);
       }},
      {"GET /api/bus/queues",
       [](Platform& p, const O&, const Call&) {
         Json out = Json::array();
         for (const auto& q : p.bus().queues())
           out.push_back({{"name", q.name}, {"pending", q.pending}, {"inFlight", q.in_flight}});
         return ok(out);
       }},

      // Time series
      {"GET /api/ts", [](Platform& p, const O&, const Call& c) { return ts_query(p, c); }},
      {"GET /api/ts/series",
       [](Platform& p, const O&, const Call&) {
         Json out = Json::array();
         for (const auto& k : p.timeseries()->series())
           out.push_back({{"thingId", k.thing_id.str()}, {"feature", k.feature}, {"property", k.property}});
         return ok(out);
       }},

      // Watchdog
      {"GET /api/watchdog/tenants",
       [](Platform& p, const O&, const Call&) {
         Json out = Json::array();
         for (const auto& t : p.watchdog().tenants()) out.push_back(watchdog::to_json(t));
         return ok(out);
       }},
      {"POST /api/watchdog/tenants",
       [](Platform& p, const O&, const Call& c) {
         auto t = watchdog::tenant_from_json(c.json());
         p.watchdog().create_tenant(t);
         return ok(watchdog::to_json(p.watchdog().tenant(t.tenant_id)), 201);
       }},
      {"GET /api/watchdog/tenants/:id",
       [](Platform& p, const O&, const Call& c) { return ok(watchdog::to_json(p.watchdog().tenant(c.p("id")))); }},
      {"DELETE /api/watchdog/tenants/:id",
       [](Platform& p, const O&, const Call& c) {
         p.watchdog().delete_tenant(c.p("id"));
         return ok({{"removed", c.p("id")}});
       }},
      {"POST /api/watchdog/tenants/:id/activate",
       [](Platform& p, const O&, const Call& c) {
         p.watchdog().set_tenant_active(c.p("id"), true);
         return ok(watchdog::to_json(p.watchdog().tenant(c.p("id"))));
       }},
      {"POST /api/watchdog/tenants/:id/deactivate",
       [](Platform& p, const O&, const Call& c) {
         p.watchdog().set_tenant_active(c.p("id"), false);
         return ok(watchdog::to_json(p.watchdog().tenant(c.p("id"))));
       }},
      {"POST /api/watchdog/tenants/:id/devices",
       [](Platform& p, const O&, const Call& c) {
         auto d = watchdog::device_from_json(c.json());
         p.watchdog().add_device(c.p("id"), d);
         return ok(p.watchdog().device_json(c.p("id"), d.device_id), 201);
       }},
      {"GET /api/watchdog/tenants/:id/devices/:device",
       [](Platform& p, const O&, const Call& c) { return ok(p.watchdog().device_json(c.p("id"), c.p("device"))); }},
      {"DELETE /api/watchdog/tenants/:id/devices/:device",
       [](Platform& p, const O&, const Call& c) {
         p.watchdog().delete_device(c.p("id"), c.p("device"));
         return ok({{"removed", c.p("device")}});
       }},
      {"POST /api/watchdog/tenants/:id/devices/:device/activate",
       [](Platform& p, const O&, const Call& c) {
         p.watchdog().set_device_active(c.p("id"), c.p("device"), true);
         return ok(p.watchdog().device_json(c.p("id"), c.p("device")));
       }},
      {"POST /api/watchdog/tenants/:id/devices/:device/deactivate",
       [](Platform& p, const O&, const Call& c) {
         p.watchdog().set_device_active(c.p("id"), c.p("device"), false);
         return ok(p.watchdog().device_json(c.p("id"), c.p("device")));
       }},

      // ML runtime
      {"GET /api/ml/models",
       [](Platform& p, const O&, const Call&) {
         Json out = Json::array();
         for (const auto& m : p.runtime().models()) out.push_back(ml::to_json(m));
         return ok(out);
       }},
      {"POST /api/ml/models",
       [](Platform& p, const O&, const Call& c) {
         auto m = ml::model_from_json(c.json());
         p.runtime().deploy(m);
         return ok(ml::to_json(m), 201);
       }},
      {"GET /api/ml/models/:id",
       [](Platform& p, const O&, const Call& c) { return ok(ml::to_json(p.runtime().model(c.p("id")))); }},
      {"DELETE /api/ml/models/:id",
       [](Platform& p, const O&, const Call& c) {
         p.runtime().undeploy(c.p("id"));
         return ok({{"removed", c.p("id")}});
       }},

      // Forwarders
      {"GET /api/bridges/forwarders",
       [](Platform& p, const O&, const Call&) {
         Json out = Json::array();
         for (const auto& f : p.forwarders().list()) out.push_back(bridges::to_json(f));
         return ok(out);
       }},
      {"POST /api/bridges/forwarders",
       [](Platform& p, const O&, const Call& c) {
         auto f = bridges::forwarder_from_json(c.json());
         p.forwarders().create(f);
         return ok(bridges::to_json(p.forwarders().get(f.tenant_id)), 201);
       }},
      {"GET /api/bridges/forwarders/:id",
       [](Platform& p, const O&, const Call& c) { return ok(bridges::to_json(p.forwarders().get(c.p("id")))); }},
      {"DELETE /api/bridges/forwarders/:id",
       [](Platform& p, const O&, const Call& c) {
         p.forwarders().remove(c.p("id"));
         return ok({{"removed", c.p("id")}});
       }},
      {"POST /api/bridges/forwarders/:id/activate",
       [](Platform& p, const O&, const Call& c) {
         p.forwarders().set_active(c.p("id"), true);
         return ok(bridges::to_json(p.forwarders().get(c.p("id"))));
       }},
      {"POST /api/bridges/forwarders/:id/deactivate",
       [](Platform& p, const O&, const Call& c) {
         p.forwarders().set_active(c.p("id"), false);
         return ok(bridges::to_json(p.forwarders().get(c.p("id"))));
       }},

      // Prediction routes
      {"GET /api/bridges/routes",
       [](Platform& p, const O&, const Call&) {
         Json out = Json::array();
         for (const auto& r : p.routes().list()) out.push_back(bridges::to_json(r));
         return ok(out);
       }},
      {"POST /api/bridges/routes",
       [](Platform& p, const O&, const Call& c) {
         auto r = bridges::route_from_json(c.json());
         p.create_route(r);
         return ok(bridges::to_json(p.routes().get(r.route_id)), 201);
       }},
      {"GET /api/bridges/routes/:id",
       [](Platform& p, const O&, const Call& c) { return ok(bridges::to_json(p.routes().get(c.p("id")))); }},
      {"DELETE /api/bridges/routes/:id",
       [](Platform& p, const O&, const Call& c) {
         p.routes().remove(c.p("id"));
         return ok({{"removed", c.p("id")}});
       }},
      {"POST /api/bridges/routes/:id/activate",
       [](Platform& p, const O&, const Call& c) {
         p.routes().set_active(c.p("id"), true);
         return ok(bridges::to_json(p.routes().get(c.p("id"))));
       }},
      {"POST /api/bridges/routes/:id/deactivate",
       [](Platform& p, const O&, const Call& c) {
         p.routes().set_active(c.p("id"), false);
         return ok(bridges::to_json(p.routes().get(c.p("id"))));
       }},

      // Fault injection
      {"GET /api/faults",
       [](Platform& p, const O&, const Call&) {
         Json out = Json::object();
         for (auto s : kServices) out[std::string(to_string(s))] = p.alive(s);
         return ok(out);
       }},
      {"POST /api/faults/:service/kill",
       [](Platform& p, const O&, const Call& c) {
         p.kill(parse_service(c.p("service")));
         return ok({{"service", c.p("service")}, {"alive", false}});
       }},
      {"POST /api/faults/:service/restart",
       [](Platform& p, const O&, const Call& c) {
         const auto s = parse_service(c.p("service"));
         p.restart(s);
         return ok({{"service", c.p("service")}, {"alive", p.alive(s)}});
       }},
  };
  return table;
}

ApiResponse error_response(int status, std::string_view code, const std::string& message) {
  return ok({{"error", code}, {"message", message}}, status);
}

}  // namespace

void verify_handlers() {
  const auto& h = handlers();
  std::size_t n = 0;
  for (const auto& r : route_table()) {
    if (!h.count(r.method + " " + r.pattern)) throw std::logic_error("no handler for " + r.method + " " + r.pattern);
    ++n;
  }
  if (n != h.size()) throw std::logic_error("handler without a route table entry");
}

ApiResponse HttpApi::handle(const ApiRequest& request) {
  bool path_known = false;
  for (const auto& r : route_table()) {
    std::map<std::string, std::string> params;
    if (!match_route(r.pattern, request.path, &params)) continue;
    path_known = true;
    if (r.method != request.method) continue;
    try {
      return handlers().at(r.method + " " + r.pattern)(platform_, options_, Call{request, std::move(params)});
    } catch (const Error& e) {
      return error_response(http_status(e.code()), to_string(e.code()), e.what());
    } catch (const Json::exception& e) {
      return error_response(400, to_string(Errc::InvalidArgument), e.what());
    } catch (const std::exception& e) {
      return error_response(500, "Internal", e.what());
    }
  }
  if (path_known) return error_response(405, "MethodNotAllowed", request.method + " " + request.path);
  return error_response(404, "NoRoute", request.path);
}

}  // namespace twinforge::platform
