#include "insitu/metadata.hpp"

namespace insitu {

nlohmann::json merge_metadata(std::span<const nlohmann::json> per_rank_docs) {
  nlohmann::json out = nlohmann::json::object();
  for (const nlohmann::json& doc : per_rank_docs) {
    if (!doc.is_object()) continue;
    for (const auto& [key, value] : doc.items()) {
      auto it = out.find(key);
      if (it == out.end()) {
        out[key] = value;
      } else if (it->is_array() && value.is_array()) {
        it->insert(it->end(), value.begin(), value.end());
      }
    }
  }
  return out;
}

}  // namespace insitu
