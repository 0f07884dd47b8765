#pragma once

// Independent checks of the registry hierarchy rules, computed from raw
// records only.

#include <deque>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "twinforge/core/twin.hpp"

namespace twinforge::oracle {

inline std::vector<std::string> hierarchy_violations(const std::vector<TwinRecord>& raw) {
  std::vector<std::string> bad;
  std::map<std::string, const TwinRecord*> by_id;
  for (const auto& r : raw) by_id[r.thing_id.str()] = &r;

  auto is_type = [](const TwinRecord& r) {
    auto it = r.attributes.find("isType");
    return it != r.attributes.end() && it->is_boolean() && it->get<bool>();
  };

  for (const auto& r : raw) {
    const auto id = r.thing_id.str();
    const auto& a = r.attributes;
    if (!a.contains("isType") || !a["isType"].is_boolean()) bad.push_back(id + ": isType missing");
    const Json children = a.value("children", Json());
    const Json parent = a.value("parent", Json());
    if (!children.is_object()) {
      bad.push_back(id + ": children not an object");
      continue;
    }
    if (!is_type(r)) {
      if (!parent.is_null() && !parent.is_string()) bad.push_back(id + ": twin parent must be id or null");
      if (parent.is_string()) {
        auto p = by_id.find(parent.get<std::string>());
        if (p == by_id.end()) bad.push_back(id + ": dangling parent");
        else if (is_type(*p->second)) bad.push_back(id + ": twin parent is a type");
        else if (!p->second->attributes.value("children", Json::object()).contains(id))
          bad.push_back(id + ": parent does not list child");
      }
      for (const auto& [c, m] : children.items()) {
        if (m != 1) bad.push_back(id + ": twin child multiplicity != 1");
        auto ci = by_id.find(c);
        if (ci == by_id.end()) bad.push_back(id + ": dangling child " + c);
        else if (is_type(*ci->second)) bad.push_back(id + ": twin child is a type");
        else if (ci->second->attributes.value("parent", Json()) != id) bad.push_back(id + ": child " + c + " disagrees");
      }
    } else {
      if (a.contains("type")) bad.push_back(id + ": type carries a type attribute");
      if (!parent.is_object()) {
        bad.push_back(id + ": type parent must be an object");
        continue;
      }
      for (const auto& [p, one] : parent.items()) {
        if (one != 1) bad.push_back(id + ": type parent value != 1");
        auto pi = by_id.find(p);
        if (pi == by_id.end()) bad.push_back(id + ": dangling type parent");
        else if (!is_type(*pi->second)) bad.push_back(id + ": type parent is a twin");
        else if (!pi->second->attributes.value("children", Json::object()).contains(id))
          bad.push_back(id + ": type parent does not list child");
      }
      for (const auto& [c, m] : children.items()) {
        if (!m.is_number_integer() || m.get<int>() < 1) bad.push_back(id + ": type multiplicity < 1");
        auto ci = by_id.find(c);
        if (ci == by_id.end()) bad.push_back(id + ": dangling type child");
        else if (!is_type(*ci->second)) bad.push_back(id + ": type child is a twin");
        else if (!ci->second->attributes.value("parent", Json::object()).contains(id))
          bad.push_back(id + ": type child does not list parent");
      }
    }
  }

  // Twin forest: every parent chain terminates.
  for (const auto& r : raw) {
    if (is_type(r)) continue;
    std::set<std::string> seen;
    Json cur = r.attributes.value("parent", Json());
    while (cur.is_string()) {
      if (!seen.insert(cur.get<std::string>()).second) {
        bad.push_back(r.thing_id.str() + ": parent cycle");
        break;
      }
      auto it = by_id.find(cur.get<std::string>());
      if (it == by_id.end()) break;
      cur = it->second->attributes.value("parent", Json());
    }
  }

  // Type DAG: Kahn's algorithm must consume every type.
  std::map<std::string, int> indegree;
  for (const auto& r : raw)
    if (is_type(r)) indegree.emplace(r.thing_id.str(), 0);
  for (const auto& r : raw)
    if (is_type(r)) {
      const Json kids = r.attributes.value("children", Json::object());
      for (const auto& [c, _] : kids.items())
        if (indegree.count(c)) ++indegree[c];
    }
  std::deque<std::string> ready;
  for (const auto& [id, d] : indegree)
    if (d == 0) ready.push_back(id);
  std::size_t visited = 0;
  while (!ready.empty()) {
    auto id = ready.front();
    ready.pop_front();
    ++visited;
    const Json kids = by_id[id]->attributes.value("children", Json::object());
    for (const auto& [c, _] : kids.items())
      if (indegree.count(c) && --indegree[c] == 0) ready.push_back(c);
  }
  if (visited != indegree.size()) bad.push_back("type graph has a cycle");
  return bad;
}

// Descendants of `root` (inclusive) found by walking `parent` pointers
// upward from every twin, independent of the children maps.
inline std::set<std::string> twin_subtree(const std::vector<TwinRecord>& raw, const std::string& root) {
  std::map<std::string, std::string> parent_of;
  for (const auto& r : raw) {
    auto p = r.attributes.value("parent", Json());
    if (p.is_string()) parent_of[r.thing_id.str()] = p.get<std::string>();
  }
  std::set<std::string> out;
  for (const auto& r : raw) {
    std::string cur = r.thing_id.str();
    for (std::size_t hops = 0; hops <= raw.size(); ++hops) {
      if (cur == root) {
        out.insert(r.thing_id.str());
        break;
      }
      auto it = parent_of.find(cur);
      if (it == parent_of.end()) break;
      cur = it->second;
    }
  }
  return out;
}

}  // namespace twinforge::oracle
