#pragma once

#include "core/model_spec.hpp"

#include <json.hpp>

#include <string>

namespace flexmsm {

ModelSpec spec_from_json(const nlohmann::json& j);
nlohmann::json spec_to_json(const ModelSpec& spec);

ModelSpec load_spec_file(const std::string& path);
nlohmann::json load_json_file(const std::string& path);

}  // namespace flexmsm
