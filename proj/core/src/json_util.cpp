#include "json_util.hpp"

#include "ftr/error.hpp"

namespace ftr::detail {

namespace {

const nlohmann::json& require(const nlohmann::json& j, std::string_view field) {
  if (!j.is_object()) {
    throw Error(ErrorCode::MalformedRecord, "expected an object");
  }
  auto it = j.find(field);
  if (it == j.end()) {
    throw Error(ErrorCode::MalformedRecord, "missing field '" + std::string(field) + "'");
  }
  return *it;
}

}  // namespace

std::string require_string(const nlohmann::json& j, std::string_view field) {
  const auto& v = require(j, field);
  if (!v.is_string()) {
    throw Error(ErrorCode::MalformedRecord, "field '" + std::string(field) + "' must be a string");
  }
  return v.get<std::string>();
}

int require_int(const nlohmann::json& j, std::string_view field) {
  const auto& v = require(j, field);
  if (!v.is_number_integer()) {
    throw Error(ErrorCode::MalformedRecord, "field '" + std::string(field) + "' must be an integer");
  }
  return v.get<int>();
}

ojson span_to_json(const Span& span) {
  ojson out = ojson::object();
  out["start"] = span.start;
  out["end"] = span.end;
  return out;
}

Span span_from_json(const nlohmann::json& j, std::string_view field) {
  const auto& v = require(j, field);
  return {require_int(v, "start"), require_int(v, "end")};
}

void unit_to_json(const Unit& unit, ojson& out) {
  out["kind"] = std::string(to_string(unit.kind));
  switch (unit.kind) {
    case UnitKind::Entity:
    case UnitKind::Trigger:
      out["start"] = unit.span.start;
      out["end"] = unit.span.end;
      break;
    case UnitKind::Relation:
      out["subj"] = span_to_json(unit.span);
      out["obj"] = span_to_json(unit.object);
      break;
    case UnitKind::Argument:
      out["trigger"] = span_to_json(unit.trigger);
      out["event"] = unit.event;
      out["start"] = unit.span.start;
      out["end"] = unit.span.end;
      break;
  }
}

Unit unit_from_json(const nlohmann::json& j) {
  const std::string kind = require_string(j, "kind");
  if (kind == "entity") {
    return Unit::entity({require_int(j, "start"), require_int(j, "end")});
  }
  if (kind == "trigger") {
    return Unit::trigger_word({require_int(j, "start"), require_int(j, "end")});
  }
  if (kind == "relation") {
    return Unit::relation(span_from_json(j, "subj"), span_from_json(j, "obj"));
  }
  if (kind == "argument") {
    return Unit::argument(span_from_json(j, "trigger"), require_string(j, "event"),
                          {require_int(j, "start"), require_int(j, "end")});
  }
  throw Error(ErrorCode::MalformedRecord, "unknown annotation kind '" + kind + "'");
}

}  // namespace ftr::detail
