#pragma once

#include <span>

#include <json.hpp>

namespace insitu {

/// Combines per-rank metadata documents in rank order. Top-level keys are
/// merged: an array-valued key seen again with an array is concatenated,
/// any other repeated key keeps its first value. Null counts as {};
/// documents that are not objects contribute nothing.
nlohmann::json merge_metadata(std::span<const nlohmann::json> per_rank_docs);

}  // namespace insitu
