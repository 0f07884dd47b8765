#include "twinforge/core/metrics.hpp"

namespace twinforge {

std::atomic<std::uint64_t>& Metrics::counter(const std::string& name) {
  std::lock_guard lock(mu_);
  auto& slot = counters_[name];
  if (!slot) slot = std::make_unique<std::atomic<std::uint64_t>>(0);
  return *slot;
}

std::uint64_t Metrics::value(const std::string& name) const {
  std::lock_guard lock(mu_);
  auto it = counters_.find(name);
  return it == counters_.end() ? 0 : it->second->load();
}

std::map<std::string, std::uint64_t> Metrics::snapshot() const {
  std::lock_guard lock(mu_);
  std::map<std::string, std::uint64_t> out;
  for (const auto& [k, v] : counters_) out[k] = v->load();
  return out;
}

std::string Metrics::render_text() const {
  std::string out;
  for (const auto& [k, v] : snapshot()) out += "twinforge_" + k + " " + std::to_string(v) + "\n";
  return out;
}

}  // namespace twinforge
