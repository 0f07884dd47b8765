#pragma once

#include <chrono>
#include <filesystem>
#include <functional>
#include <thread>
#include <random>
#include <string>

#include "twinforge/core/envelope.hpp"

namespace twinforge::testing {

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  TempDir() {
    static std::mt19937_64 rng(std::random_device{}());
    path_ = std::filesystem::temp_directory_path() / ("twinforge-test-" + std::to_string(rng()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& leaf) const { return path_ / leaf; }

 private:
  std::filesystem::path path_;
};

// Polls `done` until it holds or `limit` passes.
inline bool wait_until(const std::function<bool()>& done, std::chrono::milliseconds limit = std::chrono::seconds(10)) {
  const auto deadline = std::chrono::steady_clock::now() + limit;
  while (!done()) {
    if (std::chrono::steady_clock::now() > deadline) return false;
    std::this_thread::sleep_for(std::chrono::milliseconds(5));
  }
  return true;
}

inline std::string random_ident(std::mt19937_64& rng, std::size_t max_len = 8) {
  static constexpr char kChars[] = "abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789_.-";
  std::uniform_int_distribution<std::size_t> len(1, max_len);
  std::uniform_int_distribution<std::size_t> pick(0, sizeof(kChars) - 2);
  std::string s;
  const auto n = len(rng);
  for (std::size_t i = 0; i < n; ++i) s.push_back(kChars[pick(rng)]);
  return s;
}

inline Json random_scalar(std::mt19937_64& rng) {
  switch (std::uniform_int_distribution<int>(0, 4)(rng)) {
    case 0: return nullptr;
    case 1: return std::uniform_int_distribution<int>(-1000, 1000)(rng);
    case 2: return std::uniform_real_distribution<double>(-1e6, 1e6)(rng);
    case 3: return random_ident(rng);
    default: return std::bernoulli_distribution(0.5)(rng);
  }
}

inline Json random_json(std::mt19937_64& rng, int depth = 3) {
  const int kind = std::uniform_int_distribution<int>(0, depth > 0 ? 2 : 0)(rng);
  if (kind == 0) return random_scalar(rng);
  if (kind == 1) {
    Json arr = Json::array();
    const int n = std::uniform_int_distribution<int>(0, 3)(rng);
    for (int i = 0; i < n; ++i) arr.push_back(random_json(rng, depth - 1));
    return arr;
  }
  Json obj = Json::object();
  const int n = std::uniform_int_distribution<int>(0, 4)(rng);
  for (int i = 0; i < n; ++i) obj[random_ident(rng)] = random_json(rng, depth - 1);
  return obj;
}

inline TwinRecord random_twin(std::mt19937_64& rng) {
  TwinRecord t;
  t.thing_id = ThingId{random_ident(rng), random_ident(rng)};
  t.policy_id = random_ident(rng) + ":" + random_ident(rng);
  const int nattr = std::uniform_int_distribution<int>(0, 4)(rng);
  for (int i = 0; i < nattr; ++i) t.attributes["a_" + random_ident(rng)] = random_json(rng, 2);
  const int nfeat = std::uniform_int_distribution<int>(0, 3)(rng);
  for (int i = 0; i < nfeat; ++i) {
    FeatureState f;
    const int nprop = std::uniform_int_distribution<int>(0, 3)(rng);
    for (int k = 0; k < nprop; ++k) f.properties[random_ident(rng)] = random_scalar(rng);
    t.features[random_ident(rng)] = std::move(f);
  }
  return t;
}

}  // namespace twinforge::testing
