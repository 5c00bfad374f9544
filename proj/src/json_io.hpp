#pragma once

// Internal JSON helpers shared by the config, trainer, replay and CLI code.

#include <cmath>
#include <limits>
#include <optional>
#include <string>

#include "json.hpp"
#include "weylab/config.hpp"
#include "weylab/diagnostics.hpp"

namespace weylab::detail {

using Json = nlohmann::ordered_json;

/// JSON has no infinity; write it as the string "inf".
inline Json number_or_inf(double v) { return std::isinf(v) ? Json("inf") : Json(v); }

inline Json optional_number(const std::optional<double>& v) {
  return v ? Json(*v) : Json(nullptr);
}

Json config_to_json(const RunConfig& cfg);
RunConfig config_from_json(const Json& j);

/// Exactly the per-block keys of a metrics record.
Json diagnostics_to_json(const BlockDiagnostics& d);

}  // namespace weylab::detail
