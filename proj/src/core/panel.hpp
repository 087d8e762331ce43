#pragma once

#include "core/model_spec.hpp"

#include <Eigen/Dense>

#include <iosfwd>
#include <string>
#include <vector>

namespace flexmsm {

class Model;

inline constexpr int kRightCensored = -1;

struct Subject {
  std::string id;
  std::vector<double> times;
  std::vector<int> states;     // 0-based, or kRightCensored on the final row
  Eigen::MatrixXd covariates;  // one row per observation
  bool exact_death = false;    // final row is an exactly observed death
  std::size_t source_row = 0;  // 1-based CSV line of the first observation

  int size() const { return static_cast<int>(times.size()); }
  Eigen::VectorXd covariate_row(int j) const { return covariates.row(j).transpose(); }
};

struct PanelDataset {
  std::vector<std::string> covariate_names;
  std::vector<Subject> subjects;

  double min_time() const;
  double max_time() const;
  int num_deaths() const;
  std::size_t num_observations() const;

  // Copy with covariate columns restricted and reordered to `names`.
  // Throws DataError naming the first missing column.
  PanelDataset with_covariates(const std::vector<std::string>& names) const;
};

// Long-format CSV: id,time,state,death,<covariates...>. state is 1..D or -1
// for right-censoring; death (0/1) may be 1 only on a subject's final row.
PanelDataset parse_panel_csv(std::istream& in, const StateSpace& states,
                             const std::string& source = "<input>");
PanelDataset read_panel_csv(const std::string& path, const StateSpace& states);
void write_panel_csv(const PanelDataset& data, std::ostream& out);
void write_panel_csv(const PanelDataset& data, const std::string& path);

// Checks every dataset invariant; throws DataError citing the subject.
void validate_panel(const PanelDataset& data, const StateSpace& states);

// Model/data compatibility: covariate columns present (in model order) and
// every observed successive pair reachable in the transition structure.
// Returns the dataset aligned to the model's covariates.
PanelDataset bind_panel(const PanelDataset& data, const Model& model);

}  // namespace flexmsm
