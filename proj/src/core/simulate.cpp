#include "core/simulate.hpp"

#include "core/errors.hpp"
#include "core/parallel.hpp"
#include "core/rng.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace flexmsm {

StudyDesign StudyDesign::defaults() {
  StudyDesign d;
  d.covariates.push_back({"sex", CovariateGenerator::Kind::Bernoulli, 0.456, 0.0});
  d.covariates.push_back({"educ", CovariateGenerator::Kind::Bernoulli, 0.442, 0.0});
  return d;
}

void StudyDesign::validate(int n_living_states) const {
  if (n_subjects < 1) throw SpecError("design: n_subjects must be at least 1");
  if (!baseline_state_probs.empty()) {
    if (static_cast<int>(baseline_state_probs.size()) != n_living_states)
      throw SpecError("design: baseline_state_probs needs one entry per living state (" +
                      std::to_string(n_living_states) + ")");
    double s = 0.0;
    for (double p : baseline_state_probs) {
      if (!(p >= 0.0) || !std::isfinite(p)) throw SpecError("design: baseline_state_probs must be non-negative");
      s += p;
    }
    if (!(s > 0.0)) throw SpecError("design: baseline_state_probs must not all be zero");
  }
  if (!(baseline_min <= baseline_max) || !std::isfinite(baseline_min) || !std::isfinite(baseline_max))
    throw SpecError("design: baseline range must satisfy min <= max");
  if (!(visit_jitter >= 0.0) || !(visit_gap - visit_jitter > 0.0))
    throw SpecError("design: visit gaps must stay positive (gap > jitter >= 0)");
  if (!(follow_up >= visit_gap + visit_jitter))
    throw SpecError("design: follow_up must cover at least one full visit gap");
  if (!(step > 0.0) || !std::isfinite(step)) throw SpecError("design: simulation step must be positive");
  if (!(vital_status_prob >= 0.0 && vital_status_prob <= 1.0))
    throw SpecError("design: vital_status_prob must lie in [0, 1]");
  for (const auto& c : covariates) {
    if (c.name.empty()) throw SpecError("design: covariate generator without a name");
    if (c.kind == CovariateGenerator::Kind::Bernoulli && !(c.a >= 0.0 && c.a <= 1.0))
      throw SpecError("design: Bernoulli probability for '" + c.name + "' must lie in [0, 1]");
    if (c.kind == CovariateGenerator::Kind::Normal && !(c.b >= 0.0))
      throw SpecError("design: Normal sd for '" + c.name + "' must be non-negative");
    if (c.kind == CovariateGenerator::Kind::Uniform && !(c.a <= c.b))
      throw SpecError("design: Uniform bounds for '" + c.name + "' must satisfy lower <= upper");
  }
}

int state_at(const LatentPath& path, double t) {
  const auto it = std::upper_bound(path.times.begin(), path.times.end(), t);
  if (it == path.times.begin()) return path.states.front();
  return path.states[static_cast<std::size_t>(it - path.times.begin()) - 1];
}

namespace {

struct SubjectDraw {
  Subject subject;
  LatentPath path;
};

double draw_covariate(const CovariateGenerator& g, std::mt19937_64& rng) {
  switch (g.kind) {
    case CovariateGenerator::Kind::Bernoulli:
      return std::bernoulli_distribution(g.a)(rng) ? 1.0 : 0.0;
    case CovariateGenerator::Kind::Normal:
      return std::normal_distribution<double>(g.a, g.b)(rng);
    case CovariateGenerator::Kind::Uniform:
      return std::uniform_real_distribution<double>(g.a, g.b)(rng);
    case CovariateGenerator::Kind::Constant:
      return g.a;
  }
  return 0.0;
}

}  // namespace

SimulationResult simulate_panel(const Model& model, const Eigen::VectorXd& theta, const StudyDesign& design,
                                std::uint64_t seed, int threads) {
  const int D = model.num_states();
  const auto living = model.spec().states.living_states();
  design.validate(static_cast<int>(living.size()));
  if (theta.size() != model.num_params())
    throw DomainError("parameter vector has length " + std::to_string(theta.size()) + ", model expects " +
                      std::to_string(model.num_params()));
  if (!theta.allFinite()) throw DomainError("parameter vector contains non-finite values");

  // Columns of the output: model covariates first, then any extra generators.
  std::vector<std::string> names;
  std::vector<int> gen_of_column;
  for (const auto& c : design.covariates) names.push_back(c.name);
  for (const auto& mc : model.covariates())
    if (std::find(names.begin(), names.end(), mc) == names.end())
      throw SpecError("design has no generator for model covariate '" + mc + "'");
  std::vector<int> model_col;  // position in `names` of each model covariate
  for (const auto& mc : model.covariates())
    model_col.push_back(static_cast<int>(std::find(names.begin(), names.end(), mc) - names.begin()));

  const Eigen::VectorXd eta = model.layout().expand(theta);
  std::vector<std::vector<int>> out_edges(D);
  for (int tr = 0; tr < static_cast<int>(model.terms().size()); ++tr) out_edges[model.terms()[tr].from].push_back(tr);

  std::vector<double> probs = design.baseline_state_probs;
  if (probs.empty()) {
    probs.assign(living.size(), 0.0);
    probs[0] = 1.0;
  }

  std::vector<SubjectDraw> draws(static_cast<std::size_t>(design.n_subjects));
  parallel_for(draws.size(), threads, [&](std::size_t i) {
    std::mt19937_64 rng(derive_seed(seed, i));
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    SubjectDraw& out = draws[i];
    out.subject.id = std::to_string(i + 1);
    out.path.id = out.subject.id;

    const double t0 = design.baseline_min + (design.baseline_max - design.baseline_min) * unif(rng) - design.time_shift;
    std::discrete_distribution<int> pick(probs.begin(), probs.end());
    int s = living[static_cast<std::size_t>(pick(rng))];
    std::vector<double> xall;
    for (const auto& g : design.covariates) xall.push_back(draw_covariate(g, rng));
    std::vector<double> x;
    for (int c : model_col) x.push_back(xall[static_cast<std::size_t>(c)]);

    const double end = t0 + design.follow_up;
    std::vector<double> visits{t0};
    for (;;) {
      const double g = design.visit_gap + design.visit_jitter * (2.0 * unif(rng) - 1.0);
      const double v = visits.back() + g;
      if (v > end) break;
      visits.push_back(v);
    }

    // Latent path: constant rates within each grid cell; the exit time is
    // found by accumulating cumulative hazard against an Exp(1) draw.
    out.path.times.push_back(t0);
    out.path.states.push_back(s);
    std::exponential_distribution<double> exp1(1.0);
    double E = exp1(rng);
    double cur = t0;
    std::vector<double> rates;
    for (long long m = 0; cur < end && !model.is_absorbing(s); ++m) {
      const double u = t0 + static_cast<double>(m) * design.step;
      const double cell_end = std::min(t0 + static_cast<double>(m + 1) * design.step, end);
      if (cell_end <= cur) continue;
      for (;;) {
        rates.clear();
        double total = 0.0;
        for (int tr : out_edges[s]) {
          const double q = model.transition_hazard(eta, tr, u, x);
          rates.push_back(q);
          total += q;
        }
        const double H = total * (cell_end - cur);
        if (!(total > 0.0) || H < E) {
          E -= H;
          cur = cell_end;
          break;
        }
        cur += E / total;
        double r = unif(rng) * total;
        std::size_t k = 0;
        while (k + 1 < rates.size() && r >= rates[k]) r -= rates[k++];
        s = model.terms()[out_edges[s][k]].to;
        out.path.times.push_back(cur);
        out.path.states.push_back(s);
        E = exp1(rng);
        if (model.is_absorbing(s)) break;
      }
    }

    const bool tracked = unif(rng) < design.vital_status_prob;
    const double death_time = out.path.times.back();
    const bool died = model.is_absorbing(out.path.states.back()) && (tracked || death_time <= visits.back());
    Subject& subj = out.subject;
    for (double v : visits) {
      if (died && v >= death_time) break;
      subj.times.push_back(v);
      subj.states.push_back(state_at(out.path, v));
    }
    if (died) {
      subj.times.push_back(death_time);
      subj.states.push_back(out.path.states.back());
      subj.exact_death = true;
    } else if (tracked && end > subj.times.back()) {
      subj.times.push_back(end);
      subj.states.push_back(kRightCensored);
    }
    subj.covariates.resize(static_cast<Eigen::Index>(subj.times.size()), static_cast<Eigen::Index>(xall.size()));
    for (Eigen::Index r = 0; r < subj.covariates.rows(); ++r)
      for (std::size_t c = 0; c < xall.size(); ++c) subj.covariates(r, static_cast<Eigen::Index>(c)) = xall[c];
  });

  SimulationResult res;
  res.data.covariate_names = names;
  std::size_t row = 2;
  for (auto& d : draws) {
    d.subject.source_row = row;
    row += d.subject.times.size();
    res.data.subjects.push_back(std::move(d.subject));
    res.paths.push_back(std::move(d.path));
  }
  return res;
}

StateTable state_table(const PanelDataset& data, const StateSpace& states) {
  StateTable t;
  t.row_states = states.living_states();
  std::vector<int> row_of(states.n_states, -1);
  for (std::size_t i = 0; i < t.row_states.size(); ++i) row_of[t.row_states[i]] = static_cast<int>(i);
  t.counts = Eigen::MatrixXi::Zero(static_cast<Eigen::Index>(t.row_states.size()), states.n_states);
  for (const auto& s : data.subjects) {
    for (int j = 1; j < s.size(); ++j) {
      const int from = s.states[j - 1];
      const int to = s.states[j];
      if (to == kRightCensored || from == kRightCensored || row_of[from] < 0) continue;
      t.counts(row_of[from], to) += 1;
    }
  }
  return t;
}

}  // namespace flexmsm
