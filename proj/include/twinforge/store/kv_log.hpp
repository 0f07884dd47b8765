#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "twinforge/store/record_file.hpp"

namespace twinforge::store {

// Embedded key-value store backed by a write-ahead log. Every batch is one
// framed record, so a batch is applied entirely or not at all on replay.
// Not thread-safe; owners serialize access.
class KvLog {
 public:
  struct Op {
    std::string key;
    std::optional<nlohmann::json> value;  // nullopt erases
  };

  KvLog(std::filesystem::path path, Durability durability = Durability::Write);

  std::optional<nlohmann::json> get(const std::string& key) const;
  bool contains(const std::string& key) const { return data_.count(key) != 0; }
  void put(const std::string& key, nlohmann::json value);
  void erase(const std::string& key);
  void commit(const std::vector<Op>& batch);

  // Entries whose key starts with `prefix`, in key order.
  std::vector<std::pair<std::string, nlohmann::json>> scan(const std::string& prefix) const;
  const std::map<std::string, nlohmann::json>& data() const noexcept { return data_; }

  // Rewrites the log as one snapshot record when it has grown well past
  // the live data.
  void compact_if_needed();
  void compact();

  std::uint64_t log_bytes() const noexcept { return writer_.size(); }

 private:
  void replay();

  std::filesystem::path path_;
  Durability durability_;
  RecordWriter writer_;
  std::map<std::string, nlohmann::json> data_;
  std::uint64_t live_estimate_ = 0;
};

}  // namespace twinforge::store
