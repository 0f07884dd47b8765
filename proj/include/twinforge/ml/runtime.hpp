#pragma once

#include <atomic>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include "twinforge/bus/bus.hpp"
#include "twinforge/core/metrics.hpp"
#include "twinforge/core/value_codec.hpp"
#include "twinforge/store/kv_log.hpp"

namespace twinforge::ml {

inline constexpr const char* kModelHeader = "model-id";

// Builtin inference function and its parameters:
//   identity        {}
//   linear          {"weights": [w...] | [[w...]...], "bias": b | [b...]}
//   last_value_hold {}                 NaN inputs repeat the last finite one
//   moving_average  {"window": n}      per-element mean of the last n inputs
struct FunctionSpec {
  std::string id;
  Json params = Json::object();
  bool operator==(const FunctionSpec&) const = default;
};

struct ModelDeployment {
  std::string model_id;
  std::string input_topic;
  std::string output_topic;
  std::vector<Format> input_schema;
  FunctionSpec fn;
  bool operator==(const ModelDeployment&) const = default;
};

Json to_json(const ModelDeployment& m);
// Throws Error(InvalidSchema) or Error(InvalidArgument).
ModelDeployment model_from_json(const Json& j);

class Function {
 public:
  virtual ~Function() = default;
  virtual std::size_t output_arity() const = 0;
  virtual std::vector<double> apply(const std::vector<double>& input) = 0;
};

// Throws Error(InvalidSchema) for unknown ids or parameters that do not fit
// the input arity.
std::unique_ptr<Function> make_function(const FunctionSpec& spec, std::size_t input_arity);

// Shortest round-trip JSON array, "[1.5,2.0]".
std::string encode_output(const std::vector<double>& values);
// Throws Error(DecodeError) unless the payload is a JSON array of numbers.
std::vector<double> decode_output(std::string_view payload);

// Model deployments, each consuming its binary input topic and publishing
// a JSON float64 array per record to its output topic.
class Runtime {
 public:
  struct Options {
    std::filesystem::path data_dir;
    store::Durability durability = store::Durability::Write;
    std::shared_ptr<Metrics> metrics = std::make_shared<Metrics>();
    std::chrono::milliseconds retry_interval{50};
  };

  Runtime(bus::Bus& bus, Options options);
  ~Runtime();
  Runtime(const Runtime&) = delete;
  Runtime& operator=(const Runtime&) = delete;

  // Throws Error(DuplicateModel) or Error(InvalidSchema).
  void deploy(const ModelDeployment& model);
  // Throws Error(NotFound).
  void undeploy(const std::string& model_id);
  ModelDeployment model(const std::string& model_id) const;
  std::vector<ModelDeployment> models() const;

  // Starts one loop per deployment, including later deployments.
  void start();
  void stop();

  // Processes what is available for one model within `wait`, for callers
  // driving the runtime without threads. Returns records consumed.
  std::size_t pump(const std::string& model_id, std::chrono::milliseconds wait);

 private:
  struct Deployment;

  std::shared_ptr<Deployment> find(const std::string& model_id) const;
  void launch(const std::shared_ptr<Deployment>& d);
  std::size_t pump_one(Deployment& d, std::chrono::milliseconds wait);

  bus::Bus& bus_;
  Options options_;
  mutable std::mutex mu_;
  store::KvLog kv_;
  std::map<std::string, std::shared_ptr<Deployment>> deployments_;
  bool started_ = false;
};

}  // namespace twinforge::ml
