#include "twinforge/store/kv_log.hpp"

#include "twinforge/core/error.hpp"

namespace twinforge::store {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr std::uint64_t kCompactMinBytes = 4u << 20;

json encode_batch(const std::vector<KvLog::Op>& batch) {
  json ops = json::array();
  for (const auto& op : batch) {
    if (op.value) ops.push_back({{"k", op.key}, {"v", *op.value}});
    else ops.push_back({{"k", op.key}, {"d", true}});
  }
  return ops;
}

}  // namespace

KvLog::KvLog(fs::path path, Durability durability) : path_(std::move(path)), durability_(durability) {
  if (path_.has_parent_path()) fs::create_directories(path_.parent_path());
  replay();
  writer_ = RecordWriter(path_, durability_);
}

void KvLog::replay() {
  data_.clear();
  scan_records(path_, [this](std::uint64_t, std::string_view body) {
    const auto ops = json::from_cbor(body.begin(), body.end(), true, false);
    if (ops.is_discarded() || !ops.is_array()) throw Error(Errc::Corrupt, "bad kv batch in " + path_.string());
    for (const auto& op : ops) {
      const auto key = op.at("k").get<std::string>();
      if (op.contains("v")) data_[key] = op.at("v");
      else data_.erase(key);
    }
  });
  live_estimate_ = 0;
  for (const auto& [k, v] : data_) live_estimate_ += k.size() + v.dump().size();
}

std::optional<json> KvLog::get(const std::string& key) const {
  auto it = data_.find(key);
  if (it == data_.end()) return std::nullopt;
  return std::optional<json>(std::in_place, it->second);
}

void KvLog::put(const std::string& key, json value) { commit({Op{key, std::move(value)}}); }

void KvLog::erase(const std::string& key) { commit({Op{key, std::nullopt}}); }

void KvLog::commit(const std::vector<Op>& batch) {
  if (batch.empty()) return;
  const auto bytes = json::to_cbor(encode_batch(batch));
  writer_.append(std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()));
  for (const auto& op : batch) {
    if (op.value) data_[op.key] = *op.value;
    else data_.erase(op.key);
  }
  live_estimate_ += bytes.size() / 2;
  compact_if_needed();
}

std::vector<std::pair<std::string, json>> KvLog::scan(const std::string& prefix) const {
  std::vector<std::pair<std::string, json>> out;
  for (auto it = data_.lower_bound(prefix); it != data_.end() && it->first.compare(0, prefix.size(), prefix) == 0;
       ++it)
    out.emplace_back(it->first, it->second);
  return out;
}

void KvLog::compact_if_needed() {
  if (writer_.size() > kCompactMinBytes && writer_.size() > 4 * live_estimate_) compact();
}

void KvLog::compact() {
  std::vector<Op> snapshot;
  snapshot.reserve(data_.size());
  for (const auto& [k, v] : data_) snapshot.push_back(Op{k, std::optional<json>(std::in_place, v)});
  auto tmp = path_;
  tmp += ".compact";
  fs::remove(tmp);
  {
    RecordWriter w(tmp, Durability::Sync);
    const auto bytes = json::to_cbor(encode_batch(snapshot));
    w.append(std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()));
  }
  writer_.close();
  fs::rename(tmp, path_);
  writer_ = RecordWriter(path_, durability_);
  live_estimate_ = writer_.size();
}

}  // namespace twinforge::store
