#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "twinforge/core/twin.hpp"
#include "twinforge/platform/platform.hpp"

namespace twinforge::bench {

enum class Pipeline { Core, Ml };

std::string_view to_string(Pipeline p) noexcept;
Pipeline parse_pipeline(std::string_view text);

struct FaultStep {
  platform::Service service = platform::Service::Gateway;
  double at_s = 1.0;    // kill time after the sender starts
  double down_s = 1.0;  // time until restart
};

struct Scenario {
  Pipeline pipeline = Pipeline::Core;
  // With shared_sensor all clients update one twin; otherwise each client
  // owns a sensor twin and connection.
  bool shared_sensor = false;
  int messages = 10;  // per client
  double period_s = 0;
  std::vector<int> clients{1};
  int repetitions = 1;
  // Fault runs: one sender at fault_period_s for duration_s, retrying
  // every retry_s with the original timestamp.
  std::vector<FaultStep> faults;
  int runs = 5;
  double duration_s = 3.0;
  double fault_period_s = 0.5;
  double retry_s = 0.05;
  double drain_timeout_s = 30;
  std::uint64_t seed = 1;
  store::Durability durability = store::Durability::Write;
};

// Throws Error(InvalidArgument) on bad or inconsistent fields.
Scenario scenario_from_json(const Json& j);
Json to_json(const Scenario& s);

struct LatencyStats {
  double mean_ms = 0;
  double p50_ms = 0;
  double p95_ms = 0;
  std::size_t samples = 0;
};

// Percentiles interpolate linearly between closest ranks.
LatencyStats latency_stats(std::vector<double> samples_ms);
double percentile(std::vector<double> sorted, double q);

struct Reconciliation {
  std::size_t sent = 0;
  std::size_t stored = 0;  // distinct message keys found
  std::size_t lost = 0;
  std::size_t duplicates = 0;  // stored points beyond the first per key
};

// Keys identify messages; `stored` may repeat or contain unknown keys.
Reconciliation reconcile(const std::vector<std::int64_t>& sent, const std::vector<std::int64_t>& stored);

struct RunReport {
  Pipeline pipeline = Pipeline::Core;
  int clients = 0;
  int sensors = 0;
  std::vector<double> latency_samples_ms;  // send to stored, per message
  LatencyStats latency;
  double throughput_msg_s = 0;         // all stored messages over the run
  double client_throughput_msg_s = 0;  // mean over clients of their own rate
  Reconciliation counts;
  // Points per originator in the tracked series.
  std::map<std::string, std::size_t> originators;
  double elapsed_s = 0;
  // Fault runs only.
  std::optional<platform::Service> service;
  std::optional<double> recovery_time_s;
  std::optional<std::size_t> lost_predicted;
  std::size_t retries = 0;
};

Json to_json(const RunReport& r, bool samples = true);

// Largest gap between consecutive values after sorting; 0 for < 2 values.
double max_gap(std::vector<double> times_s);

// Average ranks for ties.
double spearman(const std::vector<double>& x, const std::vector<double>& y);

struct TrendStep {
  int from = 0;
  int to = 0;
  double diff_mean = 0;  // mean(to) - mean(from)
  double diff_p05 = 0;
  double diff_p95 = 0;
};

// Bootstrap of consecutive differences of the means. A step counts as an
// increase when even its 5th percentile is above zero.
std::vector<TrendStep> bootstrap_steps(const std::vector<int>& x, const std::vector<std::vector<double>>& samples,
                                       std::mt19937_64& rng, int resamples = 2000);
bool non_increasing(const std::vector<TrendStep>& steps);

RunReport run_core_flow(const Scenario& s, int clients, const std::filesystem::path& work_dir);
RunReport run_ml_flow(const Scenario& s, int clients, const std::filesystem::path& work_dir);
RunReport run_fault_injection(const Scenario& s, const FaultStep& fault, const std::filesystem::path& work_dir);
// Same sender without a fault.
RunReport run_fault_baseline(const Scenario& s, const std::filesystem::path& work_dir);

// Sweeps s.clients with s.repetitions each and adds the trend summary.
Json run_flow_report(const Scenario& s, const std::filesystem::path& work_dir);
// s.runs runs per fault step, steps in parallel.
Json run_fault_report(const Scenario& s, const std::filesystem::path& work_dir);

}  // namespace twinforge::bench
