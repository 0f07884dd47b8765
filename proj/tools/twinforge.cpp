#include <csignal>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>

#include "CLI11.hpp"
#include "twinforge/bench/bench.hpp"
#include "twinforge/core/error.hpp"
#include "twinforge/gateway/frame_server.hpp"
#include "twinforge/platform/api.hpp"
#include "twinforge/platform/config.hpp"
#include "twinforge/platform/ctl.hpp"
#include "twinforge/platform/platform.hpp"

namespace fs = std::filesystem;
using namespace twinforge;

namespace {

struct Common {
  std::string config;
  std::string data_dir;
  std::string listen;
};

// Flag, then TWINFORGE_DATA_DIR, then the config file.
platform::Config load(const Common& c) {
  platform::Config cfg = c.config.empty() ? platform::Config{} : platform::load_config(c.config);
  if (const char* env = std::getenv("TWINFORGE_DATA_DIR"); env && *env) cfg.data_dir = env;
  if (!c.data_dir.empty()) cfg.data_dir = c.data_dir;
  if (!c.listen.empty()) platform::parse_listen(c.listen, cfg.host, cfg.port);
  return cfg;
}

int serve(const Common& c) {
  const auto cfg = load(c);
  sigset_t signals;
  sigemptyset(&signals);
  sigaddset(&signals, SIGINT);
  sigaddset(&signals, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &signals, nullptr);

  platform::Platform p({cfg.data_dir, cfg.durability});
  p.seed(cfg.seed);
  p.start();
  platform::HttpApi api(p, {cfg.host, cfg.port, cfg.scene});
  api.start();
  std::optional<gateway::FrameServer> frames;
  if (cfg.frame_port) {
    frames.emplace(p.gateway(), cfg.host, *cfg.frame_port);
    frames->start();
  }
  std::cout << "twinforge serving http://" << cfg.host << ":" << api.port() << " data " << cfg.data_dir.string();
  if (frames) std::cout << " frames " << frames->port();
  std::cout << std::endl;

  int sig = 0;
  sigwait(&signals, &sig);
  std::cout << "shutting down" << std::endl;
  if (frames) frames->stop();
  api.stop();
  p.stop();
  return 0;
}

int run_bench(const std::string& kind, const Common& c, const std::string& out) {
  const auto cfg = load(c);
  const auto section = cfg.bench.find(kind);
  if (section == cfg.bench.end()) throw Error(Errc::InvalidArgument, "config has no bench." + kind + " section");
  auto scenario = bench::scenario_from_json(*section);
  Json report;
  const fs::path work = cfg.data_dir / "bench";
  fs::create_directories(work);
  if (kind == "faults") {
    if (scenario.faults.empty())
      for (auto s : platform::kServices) scenario.faults.push_back({s, 1.0, 1.0});
    report = bench::run_fault_report(scenario, work);
  } else {
    scenario.pipeline = bench::parse_pipeline(kind);
    report = bench::run_flow_report(scenario, work);
  }
  const auto text = report.dump(2) + "\n";
  if (out.empty() || out == "-") {
    std::cout << text;
  } else {
    std::ofstream f(out);
    f << text;
    if (!f) throw Error(Errc::IoError, "cannot write " + out);
    std::cerr << "report written to " << out << "\n";
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"twinforge digital twin platform"};
  app.require_subcommand(1);
  Common common;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", common.config, "JSON config file")->check(CLI::ExistingFile);
    sub->add_option("--data-dir", common.data_dir, "state directory (overrides TWINFORGE_DATA_DIR)");
  };

  auto* serve_cmd = app.add_subcommand("serve", "run every service and the HTTP API");
  add_common(serve_cmd);
  serve_cmd->add_option("--listen", common.listen, "host:port for the HTTP API");

  auto* bench_cmd = app.add_subcommand("bench", "run a benchmark scenario");
  std::string kind, out;
  bench_cmd->add_option("kind", kind, "core, ml or faults")->required()->check(CLI::IsMember({"core", "ml", "faults"}));
  add_common(bench_cmd);
  bench_cmd->add_option("--out", out, "report file, - for stdout");

  auto* ctl_cmd = app.add_subcommand("ctl", "call the HTTP API");
  std::string url = "http://127.0.0.1:8080";
  if (const char* env = std::getenv("TWINFORGE_URL")) url = env;
  ctl_cmd->add_option("--url", url, "API base URL (TWINFORGE_URL)");
  ctl_cmd->prefix_command();
  ctl_cmd->footer(platform::ctl_usage());

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (*serve_cmd) return serve(common);
    if (*bench_cmd) return run_bench(kind, common, out);
    if (*ctl_cmd) return platform::run_ctl(ctl_cmd->remaining(), url, std::cout, std::cerr);
  } catch (const platform::ConfigError& e) {
    std::cerr << "config " << common.config << ": " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
