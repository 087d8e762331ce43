#include "core/panel.hpp"

#include "core/errors.hpp"
#include "core/format.hpp"
#include "core/model.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <set>
#include <sstream>

namespace flexmsm {

double PanelDataset::min_time() const {
  double m = std::numeric_limits<double>::infinity();
  for (const auto& s : subjects)
    if (!s.times.empty()) m = std::min(m, s.times.front());
  return m;
}

double PanelDataset::max_time() const {
  double m = -std::numeric_limits<double>::infinity();
  for (const auto& s : subjects)
    if (!s.times.empty()) m = std::max(m, s.times.back());
  return m;
}

int PanelDataset::num_deaths() const {
  return static_cast<int>(std::count_if(subjects.begin(), subjects.end(),
                                        [](const Subject& s) { return s.exact_death; }));
}

std::size_t PanelDataset::num_observations() const {
  std::size_t n = 0;
  for (const auto& s : subjects) n += s.times.size();
  return n;
}

PanelDataset PanelDataset::with_covariates(const std::vector<std::string>& names) const {
  std::vector<int> cols;
  for (const auto& n : names) {
    auto it = std::find(covariate_names.begin(), covariate_names.end(), n);
    if (it == covariate_names.end())
      throw DataError("panel data has no covariate column '" + n + "' required by the model");
    cols.push_back(static_cast<int>(it - covariate_names.begin()));
  }
  PanelDataset out;
  out.covariate_names = names;
  out.subjects.reserve(subjects.size());
  for (const auto& s : subjects) {
    Subject t = s;
    t.covariates.resize(s.size(), static_cast<Eigen::Index>(cols.size()));
    for (std::size_t c = 0; c < cols.size(); ++c) t.covariates.col(c) = s.covariates.col(cols[c]);
    out.subjects.push_back(std::move(t));
  }
  return out;
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  out.push_back(cur);
  for (auto& f : out) {
    const auto b = f.find_first_not_of(" \t");
    const auto e = f.find_last_not_of(" \t");
    f = b == std::string::npos ? std::string() : f.substr(b, e - b + 1);
  }
  return out;
}

double parse_number(const std::string& field, const std::string& where) {
  double v = 0.0;
  const char* first = field.data();
  const char* last = field.data() + field.size();
  if (!field.empty() && *first == '+') ++first;
  auto [ptr, ec] = std::from_chars(first, last, v);
  if (field.empty() || ec != std::errc() || ptr != last || !std::isfinite(v))
    throw DataError(where + ": '" + field + "' is not a finite number");
  return v;
}

int parse_int(const std::string& field, const std::string& where) {
  const double v = parse_number(field, where);
  if (v != std::floor(v)) throw DataError(where + ": '" + field + "' is not an integer");
  return static_cast<int>(v);
}

std::string subject_where(const Subject& s, int j) {
  if (s.source_row > 0) return "line " + std::to_string(s.source_row + j) + " (subject " + s.id + ")";
  return "row " + std::to_string(j + 1) + " (subject " + s.id + ")";
}

}  // namespace

PanelDataset parse_panel_csv(std::istream& in, const StateSpace& states, const std::string& source) {
  std::string line;
  std::size_t lineno = 0;
  std::vector<std::string> header;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    header = split_csv_line(line);
    break;
  }
  if (header.empty()) throw DataError(source + ": empty panel file");
  const std::vector<std::string> required{"id", "time", "state", "death"};
  for (std::size_t i = 0; i < required.size(); ++i)
    if (header.size() <= i || header[i] != required[i])
      throw DataError(source + ": line " + std::to_string(lineno) +
                      ": header must start with id,time,state,death (column " + std::to_string(i + 1) +
                      " is '" + (header.size() > i ? header[i] : std::string()) + "')");

  PanelDataset data;
  data.covariate_names.assign(header.begin() + 4, header.end());
  const std::size_t p = data.covariate_names.size();
  {
    std::set<std::string> uniq(data.covariate_names.begin(), data.covariate_names.end());
    if (uniq.size() != p) throw DataError(source + ": duplicate covariate column names");
  }

  struct Row {
    double time;
    int state;
    int death;
    std::vector<double> x;
    std::size_t line;
  };
  std::map<std::string, std::size_t> subject_index;
  std::vector<std::vector<Row>> rows;
  std::vector<std::string> ids;
  std::string prev_id;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const auto f = split_csv_line(line);
    const std::string where = source + ": line " + std::to_string(lineno);
    if (f.size() != header.size())
      throw DataError(where + ": expected " + std::to_string(header.size()) + " fields, found " +
                      std::to_string(f.size()));
    if (f[0].empty()) throw DataError(where + ": empty id");
    Row r;
    r.time = parse_number(f[1], where + ", field 'time'");
    r.state = parse_int(f[2], where + ", field 'state'");
    r.death = parse_int(f[3], where + ", field 'death'");
    r.line = lineno;
    for (std::size_t c = 0; c < p; ++c)
      r.x.push_back(parse_number(f[4 + c], where + ", field '" + data.covariate_names[c] + "'"));
    if (r.state != kRightCensored && (r.state < 1 || r.state > states.n_states))
      throw DataError(where + ": state " + f[2] + " outside 1.." + std::to_string(states.n_states) +
                      " (use -1 for right-censored)");
    if (r.death != 0 && r.death != 1) throw DataError(where + ": death marker must be 0 or 1");

    auto it = subject_index.find(f[0]);
    if (it == subject_index.end()) {
      subject_index[f[0]] = rows.size();
      rows.emplace_back();
      ids.push_back(f[0]);
    } else if (f[0] != prev_id) {
      throw DataError(where + ": rows for subject " + f[0] + " are not contiguous (sort by id, time)");
    }
    rows[subject_index[f[0]]].push_back(std::move(r));
    prev_id = f[0];
  }

  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto& rs = rows[i];
    Subject s;
    s.id = ids[i];
    s.source_row = rs.front().line;
    s.covariates.resize(static_cast<Eigen::Index>(rs.size()), static_cast<Eigen::Index>(p));
    for (std::size_t j = 0; j < rs.size(); ++j) {
      const std::string where = source + ": line " + std::to_string(rs[j].line) + " (subject " + s.id + ")";
      const bool last = j + 1 == rs.size();
      if (rs[j].death == 1 && !last)
        throw DataError(where + ": death marker set on a row that is not the subject's final observation");
      s.times.push_back(rs[j].time);
      s.states.push_back(rs[j].state == kRightCensored ? kRightCensored : rs[j].state - 1);
      for (std::size_t c = 0; c < p; ++c) s.covariates(j, c) = rs[j].x[c];
      if (last && rs[j].death == 1) {
        if (rs[j].state == kRightCensored || !states.is_absorbing(rs[j].state - 1))
          throw DataError(where + ": death marker set but state " + std::to_string(rs[j].state) +
                          " is not an absorbing state");
      }
    }
    const int yl = s.states.back();
    s.exact_death = yl != kRightCensored && states.is_absorbing(yl);
    data.subjects.push_back(std::move(s));
  }
  try {
    validate_panel(data, states);
  } catch (const DataError& e) {
    throw DataError(source + ": " + e.what());
  }
  return data;
}

PanelDataset read_panel_csv(const std::string& path, const StateSpace& states) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open panel file '" + path + "'");
  return parse_panel_csv(in, states, path);
}

void validate_panel(const PanelDataset& data, const StateSpace& states) {
  if (data.subjects.empty()) throw DataError("panel data contains no subjects");
  const auto p = static_cast<Eigen::Index>(data.covariate_names.size());
  for (const auto& s : data.subjects) {
    const int n = s.size();
    if (n < 2)
      throw DataError(subject_where(s, 0) + ": each subject needs at least two observations");
    if (static_cast<int>(s.states.size()) != n || s.covariates.rows() != n || s.covariates.cols() != p)
      throw DataError(subject_where(s, 0) + ": inconsistent observation arrays");
    for (int j = 0; j < n; ++j) {
      if (!std::isfinite(s.times[j])) throw DataError(subject_where(s, j) + ": non-finite time");
      if (j > 0 && !(s.times[j] > s.times[j - 1]))
        throw DataError(subject_where(s, j) + ": observation times must be strictly increasing");
      const int y = s.states[j];
      const bool last = j + 1 == n;
      if (y == kRightCensored) {
        if (!last) throw DataError(subject_where(s, j) + ": right-censoring may appear only on the final row");
        continue;
      }
      if (y < 0 || y >= states.n_states) throw DataError(subject_where(s, j) + ": state out of range");
      if (states.is_absorbing(y) && !last)
        throw DataError(subject_where(s, j) + ": death state " + std::to_string(y + 1) +
                        " observed before a later observation (a death may appear only on the final row)");
    }
    if (s.states.front() == kRightCensored || states.is_absorbing(s.states.front()))
      throw DataError(subject_where(s, 0) + ": first observation must be a living state");
    const int yl = s.states.back();
    const bool death_state = yl != kRightCensored && states.is_absorbing(yl);
    if (s.exact_death != death_state)
      throw DataError(subject_where(s, n - 1) + ": exact-death flag disagrees with the final state");
    if (!s.covariates.allFinite()) throw DataError(subject_where(s, 0) + ": non-finite covariate value");
  }
}

PanelDataset bind_panel(const PanelDataset& data, const Model& model) {
  PanelDataset out = data.with_covariates(model.covariates());
  validate_panel(out, model.spec().states);
  for (const auto& s : out.subjects) {
    for (int j = 1; j < s.size(); ++j) {
      const int from = s.states[j - 1];
      const int to = s.states[j];
      if (to == kRightCensored) continue;
      bool ok = model.reachable(from, to);
      if (ok && j + 1 == s.size() && s.exact_death) {
        ok = false;
        for (int r = 0; r < model.num_states(); ++r)
          if (!model.is_absorbing(r) && model.reachable(from, r) && model.transition_index(r, to) >= 0) ok = true;
      }
      if (!ok)
        throw DataError(subject_where(s, j) + ": observed transition " + std::to_string(from + 1) + " -> " +
                        std::to_string(to + 1) + " has no path in the model's transition structure");
    }
  }
  return out;
}

void write_panel_csv(const PanelDataset& data, std::ostream& out) {
  out << "id,time,state,death";
  for (const auto& c : data.covariate_names) out << ',' << c;
  out << '\n';
  for (const auto& s : data.subjects) {
    for (int j = 0; j < s.size(); ++j) {
      const int y = s.states[j];
      const bool death = s.exact_death && j + 1 == s.size();
      out << s.id << ',' << format_double(s.times[j]) << ',' << (y == kRightCensored ? -1 : y + 1) << ',' << (death ? 1 : 0);
      for (Eigen::Index c = 0; c < s.covariates.cols(); ++c) out << ',' << format_double(s.covariates(j, c));
      out << '\n';
    }
  }
}

void write_panel_csv(const PanelDataset& data, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write '" + path + "'");
  write_panel_csv(data, out);
  if (!out) throw IoError("write failed for '" + path + "'");
}

}  // namespace flexmsm
