#include "twinforge/platform/ctl.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <ostream>
#include <sstream>

#include "httplib.h"

namespace twinforge::platform {

namespace {

std::vector<std::string> words(const std::string& s) {
  std::istringstream in(s);
  std::vector<std::string> out;
  for (std::string w; in >> w;) out.push_back(w);
  return out;
}

bool contains(const std::vector<std::string>& v, const std::string& x) {
  return std::find(v.begin(), v.end(), x) != v.end();
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::InvalidArgument, "cannot read " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string usage_line(const RouteSpec& r) {
  std::string line = r.command;
  const std::string& rest = r.pattern;
  std::size_t pos = 0;
  while ((pos = rest.find(':', pos)) != std::string::npos) {
    const auto end = rest.find('/', pos);
    line += " <" + rest.substr(pos + 1, end == std::string::npos ? std::string::npos : end - pos - 1) + ">";
    pos = end == std::string::npos ? rest.size() : end;
  }
  for (const auto& f : r.fields) line += " [--" + f + " v]";
  for (const auto& q : r.query) line += " [--" + q + " v]";
  if (r.basic_auth) line += " --username u --password p";
  if (r.body != BodyKind::None) line += " [--data text | --file path]";
  return line;
}

}  // namespace

std::string ctl_usage() {
  std::string out = "usage: twinforge ctl [--url URL] <command> [args]\n\ncommands:\n";
  for (const auto& r : route_table()) out += "  " + usage_line(r) + "\n";
  return out;
}

CtlRequest ctl_request(const std::vector<std::string>& args) {
  const RouteSpec* route = nullptr;
  std::size_t used = 0;
  for (const auto& r : route_table()) {
    const auto w = words(r.command);
    if (w.size() <= args.size() && std::equal(w.begin(), w.end(), args.begin()) && w.size() > used) {
      route = &r;
      used = w.size();
    }
  }
  if (!route) throw Error(Errc::InvalidArgument, "unknown command\n" + ctl_usage());

  std::vector<std::string> positional;
  std::map<std::string, std::string> flags;
  for (std::size_t i = used; i < args.size(); ++i) {
    const auto& a = args[i];
    if (a.rfind("--", 0) != 0) {
      positional.push_back(a);
      continue;
    }
    std::string name = a.substr(2), value;
    if (auto eq = name.find('='); eq != std::string::npos) {
      value = name.substr(eq + 1);
      name.resize(eq);
    } else {
      if (i + 1 >= args.size()) throw Error(Errc::InvalidArgument, "flag --" + name + " needs a value");
      value = args[++i];
    }
    flags[name] = value;
  }

  CtlRequest req;
  req.route = route;
  req.method = route->method;
  std::string path;
  std::size_t next = 0;
  for (std::size_t start = 1; start <= route->pattern.size();) {
    auto slash = route->pattern.find('/', start);
    if (slash == std::string::npos) slash = route->pattern.size();
    const auto seg = route->pattern.substr(start, slash - start);
    path += "/";
    if (!seg.empty() && seg[0] == ':') {
      if (next >= positional.size())
        throw Error(Errc::InvalidArgument, "missing <" + seg.substr(1) + ">\nusage: " + usage_line(*route));
      path += percent_encode(positional[next++]);
    } else {
      path += seg;
    }
    start = slash + 1;
  }

  Json fields = Json::object();
  for (const auto& f : route->fields)
    if (next < positional.size()) fields[f] = positional[next++];
  if (next < positional.size())
    throw Error(Errc::InvalidArgument, "unexpected argument '" + positional[next] + "'\nusage: " + usage_line(*route));

  std::string query;
  std::optional<std::string> raw;
  for (const auto& [name, value] : flags) {
    if (contains(route->query, name)) {
      query += (query.empty() ? "?" : "&") + percent_encode(name) + "=" + percent_encode(value);
    } else if (contains(route->fields, name)) {
      fields[name] = value;
    } else if (route->basic_auth && (name == "username" || name == "password")) {
      if (!req.auth) req.auth.emplace();
      (name == "username" ? req.auth->username : req.auth->password) = value;
    } else if (route->body != BodyKind::None && (name == "data" || name == "file")) {
      raw = name == "data" ? value : read_file(value);
    } else {
      throw Error(Errc::InvalidArgument, "unknown flag --" + name + "\nusage: " + usage_line(*route));
    }
  }
  req.target = path + query;

  if (route->body == BodyKind::Raw) {
    req.body = raw.value_or("");
    req.content_type = "application/json";
  } else if (route->body == BodyKind::Json) {
    Json body = Json::object();
    if (raw) {
      try {
        body = Json::parse(*raw);
      } catch (const Json::parse_error& e) {
        throw Error(Errc::InvalidArgument, std::string("--data is not JSON: ") + e.what());
      }
    }
    if (!fields.empty()) {
      if (!body.is_object()) throw Error(Errc::InvalidArgument, "body must be a JSON object");
      body.update(fields);
    }
    req.body = body.dump();
    req.content_type = "application/json";
  }
  return req;
}

int run_ctl(const std::vector<std::string>& args, const std::string& base_url, std::ostream& out, std::ostream& err) {
  CtlRequest req;
  try {
    req = ctl_request(args);
  } catch (const Error& e) {
    err << e.what() << "\n";
    return 1;
  }
  httplib::Client client(base_url);
  client.set_read_timeout(30, 0);
  if (req.auth) client.set_basic_auth(req.auth->username, req.auth->password);
  httplib::Result res{nullptr, httplib::Error::Unknown};
  if (req.method == "GET") {
    res = client.Get(req.target);
  } else if (req.method == "POST") {
    res = client.Post(req.target, req.body, req.content_type);
  } else if (req.method == "PUT") {
    res = client.Put(req.target, req.body, req.content_type);
  } else {
    res = client.Delete(req.target);
  }
  if (!res) {
    err << "cannot reach " << base_url << ": " << httplib::to_string(res.error()) << "\n";
    return 2;
  }
  std::string body = res->body;
  if (res->get_header_value("Content-Type").rfind("application/json", 0) == 0) {
    try {
      body = Json::parse(body).dump(2) + "\n";
    } catch (const Json::exception&) {
    }
  }
  (res->status < 400 ? out : err) << body;
  return res->status < 400 ? 0 : 1;
}

}  // namespace twinforge::platform
