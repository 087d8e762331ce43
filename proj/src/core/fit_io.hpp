#pragma once

#include "core/model.hpp"
#include "core/predict.hpp"
#include "core/scoring.hpp"
#include "core/simulate.hpp"

#include <json.hpp>

#include <iosfwd>
#include <string>
#include <vector>

namespace flexmsm {

nlohmann::json fit_to_json(const Model& model, const FitResult& fit);

struct LoadedFit {
  ModelSpec spec;  // bound spec, spline domain pinned
  FitResult fit;
};
LoadedFit fit_from_json(const nlohmann::json& j);
LoadedFit load_fit_file(const std::string& path);

// Accepts {"name": value, ...}, {"theta": {...}} or a plain array in
// parameter order. Every parameter must be given exactly once.
Eigen::VectorXd theta_from_json(const nlohmann::json& j, const ParameterLayout& layout);
nlohmann::json theta_to_json(const ParameterLayout& layout, const Eigen::VectorXd& theta);

StudyDesign design_from_json(const nlohmann::json& j);
nlohmann::json design_to_json(const StudyDesign& d);

nlohmann::json grid_policy_to_json(const GridPolicy& p);
GridPolicy grid_policy_from_json(const nlohmann::json& j);

void write_json_file(const std::string& path, const nlohmann::json& j);

// CSV writers. Numbers use the shortest round-trip representation.
void write_surface_csv(std::ostream& out, const SearchResult& search, const std::vector<std::string>& block_labels);
void write_prediction_csv(std::ostream& out, const std::vector<PredictionResult>& results);
void write_survival_csv(std::ostream& out, const SurvivalCurves& curves);
void write_state_table_csv(std::ostream& out, const StateTable& table, int n_states);

}  // namespace flexmsm
