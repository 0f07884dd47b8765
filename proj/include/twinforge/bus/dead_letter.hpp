#pragma once

#include <string>

#include "twinforge/bus/bus.hpp"
#include "twinforge/core/metrics.hpp"

namespace twinforge::bus {

inline constexpr const char* kDeadLetterTopic = "dead-letter";

// Parks an unprocessable message with its reason. Never throws; a bus
// outage while dead-lettering only loses the diagnostic copy.
void dead_letter(Bus& bus, Metrics& metrics, const std::string& source, const std::string& reason,
                 Headers headers, std::string_view payload) noexcept;

// Reads a header holding decimal nanoseconds; missing or bad values
// yield `fallback`.
std::int64_t header_ns(const Headers& headers, const std::string& key, std::int64_t fallback) noexcept;

// Copies the headers that travel with a datum across services.
Headers propagate(const Headers& from);

}  // namespace twinforge::bus
