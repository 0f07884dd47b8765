#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <memory>

#include "twinforge/bench/bench.hpp"
#include "twinforge/bridges/bridges.hpp"
#include "twinforge/core/envelope.hpp"
#include "twinforge/core/error.hpp"
#include "twinforge/core/value_codec.hpp"
#include "twinforge/platform/api.hpp"
#include "twinforge/platform/config.hpp"
#include "twinforge/platform/platform.hpp"
#include "twinforge/watchdog/watchdog.hpp"

namespace py = pybind11;
using namespace twinforge;

namespace {

// Python objects cross as JSON text.
py::object to_py(const Json& j) { return py::module_::import("json").attr("loads")(j.dump()); }

Json from_py(const py::handle& o) {
  return Json::parse(py::module_::import("json").attr("dumps")(o).cast<std::string>());
}

std::vector<Format> formats(const std::vector<std::string>& names) {
  std::vector<Format> out;
  for (const auto& n : names) out.push_back(parse_format(n));
  return out;
}

class PyPlatform {
 public:
  PyPlatform(const std::string& data_dir, const std::string& durability) {
    platform::Platform::Options o;
    o.data_dir = data_dir;
    o.durability = durability == "sync" ? store::Durability::Sync : store::Durability::Write;
    p_ = std::make_unique<platform::Platform>(o);
  }

  ~PyPlatform() { stop(); }

  void start() { p_->start(); }
  void stop() {
    api_.reset();
    p_->stop();
  }
  void seed(const py::object& doc) { p_->seed(from_py(doc)); }

  std::uint64_t ingest(const std::string& tenant, const std::string& device, const std::string& username,
                       const std::string& password, const py::object& payload,
                       const std::map<std::string, std::string>& headers) {
    const std::string body = py::isinstance<py::str>(payload) ? payload.cast<std::string>() : from_py(payload).dump();
    return p_->gateway().ingest(tenant, device, {username, password}, body, headers);
  }

  py::object get_twin(const std::string& id) { return to_py(to_json(p_->registry().get(parse_thing_id(id)))); }

  std::vector<std::string> list_twins() {
    std::vector<std::string> out;
    for (const auto& id : p_->registry().list_twins()) out.push_back(id.str());
    return out;
  }

  py::object query(const std::string& thing_id, const std::string& feature, const std::string& property,
                   const std::optional<std::string>& originator) {
    timeseries::Query q;
    q.thing_id = parse_thing_id(thing_id);
    q.feature = feature;
    q.property = property;
    q.originator = originator;
    Json out = Json::array();
    for (const auto& pt : p_->timeseries()->query(q)) out.push_back(timeseries::to_json(pt));
    return to_py(out);
  }

  void kill(const std::string& s) { p_->kill(platform::parse_service(s)); }
  void restart(const std::string& s) { p_->restart(platform::parse_service(s)); }
  bool alive(const std::string& s) { return p_->alive(platform::parse_service(s)); }
  std::string metrics() { return p_->metrics().render_text(); }

  // Starts the HTTP API; returns the bound port.
  std::uint16_t serve(const std::string& host, std::uint16_t port) {
    api_.reset();
    api_ = std::make_unique<platform::HttpApi>(*p_, platform::HttpApi::Options{host, port, Json::array()});
    api_->start();
    return api_->port();
  }

 private:
  std::unique_ptr<platform::Platform> p_;
  std::unique_ptr<platform::HttpApi> api_;
};

class PyEngine {
 public:
  PyEngine()
      : engine_([this](const watchdog::Dispatch& d) {
          dispatches_.append(py::make_tuple(d.at, d.device_id, py::bytes(d.bytes)));
        }) {}

  void put_device(const std::string& id) {
    engine_.put_device({id, true, "ml-in", {ValueSpec{Format::Float64, "$second"}}, {}});
  }
  bool on_message(const std::string& id, TimestampNs t) { return engine_.on_message(id, t, {}); }
  void advance_to(TimestampNs t) { engine_.advance_to(t); }
  std::optional<TimestampNs> learned_interval(const std::string& id) {
    return engine_.device(id).learned_interval;
  }
  py::list take_dispatches() {
    py::list out = dispatches_;
    dispatches_ = py::list();
    return out;
  }

 private:
  py::list dispatches_;
  watchdog::Engine engine_;
};

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "twinforge digital twin platform";

  static py::exception<Error> error(m, "Error");
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const Error& e) {
      PyErr_SetString(error.ptr(), e.what());
    } catch (const platform::ConfigError& e) {
      PyErr_SetString(PyExc_ValueError, e.what());
    }
  });

  m.def("parse_thing_id", [](const std::string& s) {
    const auto id = parse_thing_id(s);
    return py::make_tuple(id.ns, id.name);
  });
  m.def("is_valid_envelope", [](const py::object& o) {
    try {
      return is_valid_envelope(envelope_from_json(from_py(o)));
    } catch (const Error&) {
      return false;
    } catch (const Json::exception&) {
      return false;
    }
  });
  m.def(
      "substitute",
      [](const py::object& tmpl, const std::vector<double>& outputs) {
        return to_py(to_json(bridges::substitute(from_py(tmpl), outputs)));
      },
      py::arg("template"), py::arg("outputs"));
  m.def("encode_values", [](const std::vector<std::string>& schema, const std::vector<double>& values) {
    return py::bytes(encode_values(formats(schema), values));
  });
  m.def("decode_values", [](const std::vector<std::string>& schema, const py::bytes& data) {
    return decode_values(formats(schema), std::string(data));
  });
  m.def("load_config", [](const std::string& path) {
    const auto c = platform::load_config(path);
    Json j{{"dataDir", c.data_dir.string()}, {"host", c.host}, {"port", c.port}, {"seed", c.seed},
           {"scene", c.scene}, {"bench", c.bench}};
    if (c.frame_port) j["framePort"] = *c.frame_port;
    return to_py(j);
  });

  py::class_<PyEngine>(m, "WatchdogEngine")
      .def(py::init<>())
      .def("put_device", &PyEngine::put_device)
      .def("on_message", &PyEngine::on_message, py::arg("device_id"), py::arg("t_ns"))
      .def("advance_to", &PyEngine::advance_to, py::arg("t_ns"))
      .def("learned_interval", &PyEngine::learned_interval)
      .def("take_dispatches", &PyEngine::take_dispatches);

  py::class_<PyPlatform>(m, "Platform")
      .def(py::init<const std::string&, const std::string&>(), py::arg("data_dir"), py::arg("durability") = "write")
      .def("start", &PyPlatform::start, py::call_guard<py::gil_scoped_release>())
      .def("stop", &PyPlatform::stop, py::call_guard<py::gil_scoped_release>())
      .def("seed", &PyPlatform::seed)
      .def("ingest", &PyPlatform::ingest, py::arg("tenant"), py::arg("device"), py::arg("username"),
           py::arg("password"), py::arg("payload"), py::arg("headers") = std::map<std::string, std::string>{})
      .def("get_twin", &PyPlatform::get_twin)
      .def("list_twins", &PyPlatform::list_twins)
      .def("query", &PyPlatform::query, py::arg("thing_id"), py::arg("feature"), py::arg("property") = "value",
           py::arg("originator") = std::nullopt)
      .def("kill", &PyPlatform::kill)
      .def("restart", &PyPlatform::restart)
      .def("alive", &PyPlatform::alive)
      .def("metrics", &PyPlatform::metrics)
      .def("serve", &PyPlatform::serve, py::arg("host") = "127.0.0.1", py::arg("port") = 0);

  auto b = m.def_submodule("bench", "benchmark harness");
  b.def("latency_stats", [](std::vector<double> v) {
    const auto s = bench::latency_stats(std::move(v));
    return py::dict(py::arg("mean_ms") = s.mean_ms, py::arg("p50_ms") = s.p50_ms, py::arg("p95_ms") = s.p95_ms,
                    py::arg("samples") = s.samples);
  });
  b.def("spearman", &bench::spearman);
  b.def("max_gap", &bench::max_gap);
  b.def("reconcile", [](const std::vector<std::int64_t>& sent, const std::vector<std::int64_t>& stored) {
    const auto r = bench::reconcile(sent, stored);
    return py::dict(py::arg("sent") = r.sent, py::arg("stored") = r.stored, py::arg("lost") = r.lost,
                    py::arg("duplicates") = r.duplicates);
  });
  b.def("run_core_flow", [](const py::object& scenario, int clients, const std::string& work_dir) {
    const auto s = bench::scenario_from_json(from_py(scenario));
    bench::RunReport r;
    {
      py::gil_scoped_release release;
      r = bench::run_core_flow(s, clients, work_dir);
    }
    return to_py(bench::to_json(r));
  });
  b.def("run_ml_flow", [](const py::object& scenario, int clients, const std::string& work_dir) {
    const auto s = bench::scenario_from_json(from_py(scenario));
    bench::RunReport r;
    {
      py::gil_scoped_release release;
      r = bench::run_ml_flow(s, clients, work_dir);
    }
    return to_py(bench::to_json(r));
  });
  b.def("run_fault_injection", [](const py::object& scenario, const std::string& service, double at_s, double down_s,
                                  const std::string& work_dir) {
    const auto s = bench::scenario_from_json(from_py(scenario));
    bench::RunReport r;
    {
      py::gil_scoped_release release;
      r = bench::run_fault_injection(s, {platform::parse_service(service), at_s, down_s}, work_dir);
    }
    return to_py(bench::to_json(r));
  });
  b.def("run_flow_report", [](const py::object& scenario, const std::string& work_dir) {
    const auto s = bench::scenario_from_json(from_py(scenario));
    Json j;
    {
      py::gil_scoped_release release;
      j = bench::run_flow_report(s, work_dir);
    }
    return to_py(j);
  });
}
