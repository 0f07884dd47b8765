#include <regex>

#include "twinforge/bridges/bridges.hpp"
#include "twinforge/core/error.hpp"

namespace twinforge::bridges {

namespace {

const std::regex& placeholder() {
  static const std::regex re(R"(\{(\d+)\})");
  return re;
}

std::size_t index_of(const std::string& digits, std::size_t n) {
  // Anything longer than 9 digits is out of range for any real output.
  if (digits.size() > 9 || std::stoul(digits) >= n)
    throw Error(Errc::IndexOutOfRange,
                "placeholder {" + digits + "} but the model produced " + std::to_string(n) + " values");
  return std::stoul(digits);
}

Json fill(const Json& node, const std::vector<double>& outputs) {
  if (node.is_object()) {
    Json out = Json::object();
    for (const auto& [k, v] : node.items()) out[k] = fill(v, outputs);
    return out;
  }
  if (node.is_array()) {
    Json out = Json::array();
    for (const auto& v : node) out.push_back(fill(v, outputs));
    return out;
  }
  if (!node.is_string()) return node;
  const auto& s = node.get_ref<const std::string&>();
  std::smatch m;
  if (std::regex_match(s, m, placeholder())) return outputs[index_of(m[1].str(), outputs.size())];
  std::string out;
  auto begin = s.cbegin();
  for (std::sregex_iterator it(s.cbegin(), s.cend(), placeholder()), end; it != end; ++it) {
    out.append(begin, (*it)[0].first);
    out += Json(outputs[index_of((*it)[1].str(), outputs.size())]).dump();
    begin = (*it)[0].second;
  }
  out.append(begin, s.cend());
  return out;
}

void scan(const Json& node, std::optional<std::size_t>& best) {
  if (node.is_object() || node.is_array()) {
    for (const auto& v : node) scan(v, best);
    return;
  }
  if (!node.is_string()) return;
  const auto& s = node.get_ref<const std::string&>();
  for (std::sregex_iterator it(s.cbegin(), s.cend(), placeholder()), end; it != end; ++it) {
    const auto digits = (*it)[1].str();
    const std::size_t i = digits.size() > 9 ? std::numeric_limits<std::size_t>::max() : std::stoul(digits);
    if (!best || i > *best) best = i;
  }
}

}  // namespace

std::string route_originator(const std::string& route_id) { return "ml-bridge:" + route_id; }

std::optional<std::size_t> max_placeholder(const Json& tmpl) {
  std::optional<std::size_t> best;
  scan(tmpl, best);
  return best;
}

Envelope substitute(const Json& tmpl, const std::vector<double>& outputs) {
  const Json filled = fill(tmpl, outputs);
  try {
    auto e = envelope_from_json(filled);
    validate_envelope(e);
    return e;
  } catch (const Error& err) {
    throw Error(Errc::InvalidResult, err.what());
  } catch (const Json::exception& err) {
    throw Error(Errc::InvalidResult, err.what());
  }
}

}  // namespace twinforge::bridges
