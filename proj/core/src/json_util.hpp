#pragma once

#include <nlohmann/json.hpp>
#include <string>
#include <string_view>

#include "ftr/corpus.hpp"

namespace ftr::detail {

using ojson = nlohmann::ordered_json;

ojson span_to_json(const Span& span);
Span span_from_json(const nlohmann::json& j, std::string_view field);

// Unit serialization shared by dataset records, score records, and demos.
// Writes the unit's own keys into `out` (kind first), leaving room for
// callers to append "label".
void unit_to_json(const Unit& unit, ojson& out);
Unit unit_from_json(const nlohmann::json& j);

std::string require_string(const nlohmann::json& j, std::string_view field);
int require_int(const nlohmann::json& j, std::string_view field);

}  // namespace ftr::detail
