#include "twinforge/ml/runtime.hpp"

#include <cmath>
#include <optional>

#include "twinforge/bus/dead_letter.hpp"
#include "twinforge/core/envelope.hpp"
#include "twinforge/core/error.hpp"

namespace twinforge::ml {

namespace {

constexpr const char* kModelPrefix = "model/";

std::string required_string(const Json& j, const char* key) {
  if (!j.contains(key) || !j[key].is_string() || j[key].get<std::string>().empty())
    throw Error(Errc::InvalidArgument, std::string("missing string field '") + key + "'");
  return j[key].get<std::string>();
}

}  // namespace

Json to_json(const ModelDeployment& m) {
  Json schema = Json::array();
  for (auto f : m.input_schema) schema.push_back(to_string(f));
  return {{"modelId", m.model_id},
          {"inputTopic", m.input_topic},
          {"outputTopic", m.output_topic},
          {"inputSchema", schema},
          {"function", {{"id", m.fn.id}, {"params", m.fn.params}}}};
}

ModelDeployment model_from_json(const Json& j) {
  if (!j.is_object()) throw Error(Errc::InvalidArgument, "model must be an object");
  ModelDeployment m;
  m.model_id = required_string(j, "modelId");
  m.input_topic = required_string(j, "inputTopic");
  m.output_topic = required_string(j, "outputTopic");
  const Json schema = j.value("inputSchema", Json::array());
  if (!schema.is_array()) throw Error(Errc::InvalidSchema, "inputSchema must be an array of formats");
  for (const auto& f : schema) {
    if (!f.is_string()) throw Error(Errc::InvalidSchema, "inputSchema must be an array of formats");
    m.input_schema.push_back(parse_format(f.get<std::string>()));
  }
  const Json fn = j.value("function", Json::object());
  if (!fn.is_object() || !fn.contains("id") || !fn["id"].is_string())
    throw Error(Errc::InvalidSchema, "function needs a string id");
  m.fn.id = fn["id"].get<std::string>();
  m.fn.params = fn.value("params", Json::object());
  return m;
}

struct Runtime::Deployment {
  ModelDeployment model;
  std::mutex mu;  // serializes pumps: the function may hold state
  std::unique_ptr<Function> fn;
  std::optional<bus::Subscription> sub;
  std::atomic<bool> stopping{false};
  std::thread thread;
};

Runtime::Runtime(bus::Bus& bus, Options options)
    : bus_(bus),
      options_(std::move(options)),
      kv_((std::filesystem::create_directories(options_.data_dir), options_.data_dir / "ml.kv"),
          options_.durability) {
  for (const auto& [_, value] : kv_.scan(kModelPrefix)) {
    auto d = std::make_shared<Deployment>();
    d->model = model_from_json(value);
    d->fn = make_function(d->model.fn, d->model.input_schema.size());
    deployments_[d->model.model_id] = d;
  }
}

Runtime::~Runtime() { stop(); }

void Runtime::deploy(const ModelDeployment& model) {
  if (model.model_id.empty() || model.input_topic.empty() || model.output_topic.empty())
    throw Error(Errc::InvalidArgument, "model needs modelId, inputTopic and outputTopic");
  if (model.input_schema.empty()) throw Error(Errc::InvalidSchema, "empty input schema");
  auto d = std::make_shared<Deployment>();
  d->model = model;
  d->fn = make_function(model.fn, model.input_schema.size());
  std::lock_guard lock(mu_);
  if (deployments_.count(model.model_id)) throw Error(Errc::DuplicateModel, model.model_id);
  kv_.put(kModelPrefix + store::escape_name(model.model_id), to_json(model));
  deployments_[model.model_id] = d;
  bus_.create_topic(model.input_topic);
  bus_.create_topic(model.output_topic);
  if (started_) launch(d);
}

void Runtime::undeploy(const std::string& model_id) {
  std::shared_ptr<Deployment> d;
  {
    std::lock_guard lock(mu_);
    auto it = deployments_.find(model_id);
    if (it == deployments_.end()) throw Error(Errc::NotFound, "model " + model_id);
    d = it->second;
    kv_.erase(kModelPrefix + store::escape_name(model_id));
    deployments_.erase(it);
  }
  d->stopping = true;
  if (d->thread.joinable()) d->thread.join();
}

std::shared_ptr<Runtime::Deployment> Runtime::find(const std::string& model_id) const {
  std::lock_guard lock(mu_);
  auto it = deployments_.find(model_id);
  if (it == deployments_.end()) throw Error(Errc::NotFound, "model " + model_id);
  return it->second;
}

ModelDeployment Runtime::model(const std::string& model_id) const { return find(model_id)->model; }

std::vector<ModelDeployment> Runtime::models() const {
  std::lock_guard lock(mu_);
  std::vector<ModelDeployment> out;
  for (const auto& [_, d] : deployments_) out.push_back(d->model);
  return out;
}

void Runtime::start() {
  std::lock_guard lock(mu_);
  started_ = true;
  for (auto& [_, d] : deployments_) launch(d);
}

void Runtime::stop() {
  std::vector<std::shared_ptr<Deployment>> running;
  {
    std::lock_guard lock(mu_);
    started_ = false;
    for (auto& [_, d] : deployments_) running.push_back(d);
  }
  for (auto& d : running) {
    d->stopping = true;
    if (d->thread.joinable()) d->thread.join();
    d->stopping = false;
  }
}

void Runtime::launch(const std::shared_ptr<Deployment>& d) {
  if (d->thread.joinable()) return;
  d->thread = std::thread([this, d] {
    while (!d->stopping) {
      try {
        pump_one(*d, std::chrono::milliseconds(100));
      } catch (const Error&) {
        std::this_thread::sleep_for(options_.retry_interval);
      }
    }
  });
}

std::size_t Runtime::pump(const std::string& model_id, std::chrono::milliseconds wait) {
  return pump_one(*find(model_id), wait);
}

std::size_t Runtime::pump_one(Deployment& d, std::chrono::milliseconds wait) {
  std::lock_guard lock(d.mu);
  const auto& m = d.model;
  try {
    if (!d.sub) d.sub.emplace(bus_.subscribe(m.input_topic, "ml-" + m.model_id));
    auto batch = d.sub->poll_batch(256, wait);
    for (const auto& msg : batch) {
      try {
        const auto out = d.fn->apply(decode_values(m.input_schema, msg.payload));
        for (double v : out)
          if (!std::isfinite(v)) throw Error(Errc::InvalidResult, "model produced a non-finite value");
        auto headers = bus::propagate(msg.headers);
        headers[kModelHeader] = m.model_id;
        bus_.publish(m.output_topic, headers, encode_output(out));
        options_.metrics->add(metric::kInferences);
      } catch (const Error& e) {
        if (e.code() == Errc::Unavailable) throw;
        bus::dead_letter(bus_, *options_.metrics, "ml-runtime/" + m.model_id, e.what(), msg.headers, msg.payload);
      }
      d.sub->seek(msg.offset + 1);
      d.sub->commit();
    }
    return batch.size();
  } catch (const Error&) {
    d.sub.reset();
    throw;
  }
}

}  // namespace twinforge::ml
