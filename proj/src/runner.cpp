#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <limits>
#include <memory>
#include <mutex>
#include <thread>

#include "optomech/scenario.hpp"

namespace optomech {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::string strip_kind(const Error& e) {
  const std::string what = e.what();
  const std::string prefix = std::string(to_string(e.kind())) + ": ";
  return what.rfind(prefix, 0) == 0 ? what.substr(prefix.size()) : what;
}

[[noreturn]] void rethrow_with_context(const Scenario& s) {
  const std::string ctx = "scenario '" + s.name + "': ";
  try {
    throw;
  } catch (const ConvergenceError& e) {
    throw ConvergenceError(ctx + strip_kind(e), e.trajectory());
  } catch (const Error& e) {
    if (strip_kind(e).rfind(ctx, 0) == 0) throw;
    throw Error(e.kind(), ctx + strip_kind(e));
  }
}

int truncation_of(const SpaceSpec& space, std::size_t mode) {
  switch (mode) {
    case kCavity1: return space.cavity1;
    case kMO: return space.mo;
    case kCavity2: return space.cavity2;
    default: return 3;
  }
}

QState single_mode_state(const FactorRecipe& f, int truncation, double tail) {
  const CompositeSpace space({SubsystemSpec::boson(truncation, "mode")});
  return std::visit(
      [&](const auto& v) -> QState {
        using T = std::decay_t<decltype(v)>;
        if constexpr (std::is_same_v<T, Ground>) return basis_state(space, {0});
        if constexpr (std::is_same_v<T, Fock>) {
          if (v.n >= truncation) throw Error(ErrorKind::TruncationTooSmall, "reference Fock level beyond truncation");
          return basis_state(space, {v.n});
        }
        if constexpr (std::is_same_v<T, Squeezed>) return squeezed_vacuum(truncation, v.xi, tail);
        if constexpr (std::is_same_v<T, Cat>) return cat_state(truncation, v.alpha, tail);
        if constexpr (std::is_same_v<T, Thermal>) return thermal_state(truncation, v.nbar);
      },
      f);
}

using Evaluator = std::function<double(const QState&)>;

Evaluator make_evaluator(const MeasurementSpec& m, const Scenario& s, const QState& initial) {
  using T = MeasurementSpec::Type;
  switch (m.type) {
    case T::Fidelity: {
      const std::size_t target = m.modes[1];
      auto ref = std::make_shared<QState>(
          m.reference_state ? single_mode_state(*m.reference_state, truncation_of(s.space, target),
                                                s.initial_state.tail_tolerance)
                            : partial_trace(initial, {m.modes[0]}));
      return [ref, target](const QState& st) { return mode_fidelity(*ref, st, target); };
    }
    case T::Negativity: {
      const std::size_t a = m.modes[0], b = m.modes[1];
      return [a, b](const QState& st) { return negativity(partial_trace(st, {a, b}), 0); };
    }
    case T::Contangle: {
      const auto modes = m.modes;
      return [modes](const QState& st) {
        return residual_contangle(partial_trace(st, std::span<const std::size_t>(modes))).minimum;
      };
    }
    case T::Quadrature: {
      QuadratureSpec q;
      q.mode = m.modes[0];
      q.phase = m.phase ? *m.phase : s.params.phi[boson_slot(q.mode)];
      q.quadrature = m.quadrature;
      return [q](const QState& st) { return quadrature_variance(st, q); };
    }
    case T::Population: {
      const auto labels = m.labels;
      return [labels](const QState& st) {
        double total = 0.0;
        for (const auto& l : labels) total += population(st, std::span<const int>(l));
        return total;
      };
    }
    case T::LevelPopulation: {
      const std::size_t part = m.modes[0];
      const int level = m.level;
      return [part, level](const QState& st) { return level_population(st, part, level); };
    }
    case T::MeanNumber: {
      const std::size_t part = m.modes[0];
      return [part](const QState& st) {
        double n = 0.0;
        const int d = static_cast<int>(st.space().part_dim(part));
        for (int k = 1; k < d; ++k) n += k * level_population(st, part, k);
        return n;
      };
    }
    case T::Wigner: break;
  }
  throw Error(ErrorKind::InvalidArgument, "measurement '" + m.name + "' is not a scalar series");
}

struct Prepared {
  CompositeSpace space;
  QState initial;
  std::vector<std::string> warnings;
};

Prepared prepare(const Scenario& s, bool thermal_as_vacuum) {
  CompositeSpace space = s.space.build();
  StateRecipe recipe = s.initial_state;
  std::vector<std::string> warnings;
  if (thermal_as_vacuum && recipe.has_mixed_factor()) {
    double nbar = 0.0;
    recipe = recipe.thermal_as_vacuum(&nbar);
    warnings.push_back("thermal factors replaced by vacuum (largest nbar " + format_number(nbar) + ")");
  }
  QState initial = assemble_initial_state(recipe, space);
  if (s.density_path() && initial.is_vector()) initial = initial.as_density();
  return {std::move(space), std::move(initial), std::move(warnings)};
}

QOperator static_hamiltonian(const Scenario& s, const CompositeSpace& space) {
  QOperator h = QOperator::zero(space);
  for (HamiltonianTerm t : s.hamiltonian) {
    switch (t) {
      case HamiltonianTerm::Effective: h += build_effective_hamiltonian(s.params, space); break;
      case HamiltonianTerm::Full: h += build_full_hamiltonian(s.params, space); break;
      case HamiltonianTerm::Drive: h += build_drive_hamiltonian(s.params, space); break;
      case HamiltonianTerm::SqueezePumpMO: h += build_squeeze_pump(s.params, space, PumpTarget::MO); break;
      case HamiltonianTerm::SqueezePumpC1: h += build_squeeze_pump(s.params, space, PumpTarget::Cavity1); break;
      case HamiltonianTerm::TimeDependent: break;
    }
  }
  return h;
}

struct Measured {
  std::vector<Observable> observers;
  std::vector<std::string> names;  // series columns, in declaration order
};

Measured series_observers(const Scenario& s, const QState& initial) {
  Measured out;
  for (const auto& m : s.measurements) {
    if (!m.is_series()) continue;
    Evaluator f = make_evaluator(m, s, initial);
    out.observers.push_back({m.name, [f](const QState& st) { return cplx(f(st), 0.0); }});
    out.names.push_back(m.name);
  }
  return out;
}

// Reduced states of each Wigner mode at every sample.
struct WignerCapture {
  std::vector<const MeasurementSpec*> specs;
  std::shared_ptr<std::vector<std::vector<QState>>> frames;
};

WignerCapture wigner_capture(const Scenario& s, std::vector<Observable>& observers) {
  WignerCapture cap;
  cap.frames = std::make_shared<std::vector<std::vector<QState>>>();
  for (const auto& m : s.measurements) {
    if (m.type != MeasurementSpec::Type::Wigner) continue;
    const std::size_t k = cap.specs.size();
    cap.specs.push_back(&m);
    cap.frames->emplace_back();
    const std::size_t mode = m.modes[0];
    auto frames = cap.frames;
    observers.push_back({"", [frames, k, mode](const QState& st) {
                           (*frames)[k].push_back(partial_trace(st, {mode}));
                           return cplx(0.0, 0.0);
                         }});
  }
  return cap;
}

std::size_t nearest_sample(const std::vector<double>& times, double t) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < times.size(); ++i) {
    if (std::abs(times[i] - t) < std::abs(times[best] - t)) best = i;
  }
  return best;
}

std::optional<double> find_t2(const PeakSpec& peak, const std::vector<double>& times, const std::vector<double>& values) {
  std::optional<std::size_t> best;
  for (std::size_t i = 0; i < times.size(); ++i) {
    if (times[i] < peak.t_min || times[i] > peak.t_max) continue;
    if (!best || values[i] > values[*best]) best = i;
  }
  if (!best) return std::nullopt;
  return times[*best];
}

json diagnostics_json(const EvolutionDiagnostics& d) {
  return {{"max_norm_drift", d.max_norm_drift}, {"max_asymmetry", d.max_asymmetry},
          {"min_eigenvalue", d.min_eigenvalue}, {"accepted_steps", d.accepted_steps},
          {"rejected_steps", d.rejected_steps}, {"rhs_calls", d.rhs_calls},
          {"warnings", d.warnings}};
}

ResultBundle run_time_evolution(const Scenario& s, const TimeEvolutionRun& r) {
  const bool density = s.density_path();
  Prepared prep = prepare(s, r.thermal_as_vacuum);
  Measured meas = series_observers(s, prep.initial);
  std::vector<Observable> observers = meas.observers;
  WignerCapture cap = wigner_capture(s, observers);

  EvolveOptions opts;
  opts.rtol = r.rtol;
  opts.atol = r.atol;
  opts.snapshot_stride = r.snapshot_stride;

  EvolutionResult res;
  if (density) {
    res = evolve_density(static_hamiltonian(s, prep.space), build_dissipators(s.params, prep.space), prep.initial,
                         r.grid, observers, opts);
  } else if (s.has_term(HamiltonianTerm::TimeDependent)) {
    TimeDependentHamiltonian h = build_rotating_hamiltonian(s.params, prep.space);
    h.static_part += static_hamiltonian(s, prep.space);
    res = evolve_vector(h, prep.initial, r.grid, observers, opts);
  } else {
    res = evolve_vector(static_hamiltonian(s, prep.space), prep.initial, r.grid, observers, opts);
  }

  ResultBundle b;
  b.scenario = s;
  b.diagnostics = res.diagnostics;
  for (auto& w : prep.warnings) b.diagnostics.warnings.insert(b.diagnostics.warnings.begin(), w);

  Table series;
  series.header.push_back("t");
  for (const auto& n : meas.names) series.header.push_back(n);
  for (std::size_t i = 0; i < res.times.size(); ++i) {
    std::vector<Table::Cell> row{res.times[i]};
    for (std::size_t k = 0; k < meas.names.size(); ++k) row.push_back(res.observables[k].second[i].real());
    series.rows.push_back(std::move(row));
  }

  if (r.t2) {
    b.t2 = find_t2(*r.t2, res.times, res.real_series(r.t2->measurement));
    if (!b.t2) b.diagnostics.warnings.push_back("no grid sample inside the t2 window");
  }

  for (std::size_t k = 0; k < cap.specs.size(); ++k) {
    const MeasurementSpec& m = *cap.specs[k];
    std::vector<double> when = m.times;
    if (m.at_t2 && b.t2) when.push_back(*b.t2);
    for (double t : when) {
      const std::size_t i = nearest_sample(res.times, t);
      b.wigner.push_back({m.name, res.times[i], wigner((*cap.frames)[k][i], m.grid)});
    }
  }

  b.tables.emplace_back("series", std::move(series));
  if (!res.states.empty()) b.final_state = res.states.back();
  b.details = {{"path", density ? "density" : "vector"},
               {"dimension", prep.space.dim()},
               {"snapshot_count", res.states.size()}};
  return b;
}

ResultBundle run_steady_state(const Scenario& s, const SteadyStateRun& r) {
  Prepared prep = prepare(s, false);
  Measured meas = series_observers(s, prep.initial);
  const QOperator h = static_hamiltonian(s, prep.space);
  const SteadyStateResult res =
      steady_state(h, build_dissipators(s.params, prep.space), prep.initial, r.criteria, meas.observers);

  ResultBundle b;
  b.scenario = s;
  b.diagnostics = res.diagnostics;
  b.diagnostics.min_eigenvalue = std::min(b.diagnostics.min_eigenvalue, res.state.min_eigenvalue());

  Table steady;
  steady.header.push_back("t");
  std::vector<Table::Cell> row{res.time};
  for (std::size_t k = 0; k < meas.names.size(); ++k) {
    steady.header.push_back(meas.names[k]);
    row.push_back(meas.observers[k].eval(res.state).real());
  }
  steady.rows.push_back(std::move(row));
  b.tables.emplace_back("steady", std::move(steady));

  for (const auto& m : s.measurements) {
    if (m.type != MeasurementSpec::Type::Wigner) continue;
    b.wigner.push_back({m.name, res.time, wigner(partial_trace(res.state, {m.modes[0]}), m.grid)});
  }

  json trajectory = json::array();
  for (const auto& [t, v] : res.residual_trajectory) trajectory.push_back({t, v});
  b.details = {{"path", "density"},
               {"dimension", prep.space.dim()},
               {"method", r.criteria.method == SteadyStateMethod::Krylov ? "krylov" : "march"},
               {"residual", res.residual},
               {"krylov_iterations", res.krylov_iterations},
               {"residual_trajectory", trajectory}};
  b.final_state = res.state;
  return b;
}

template <class F>
void parallel_for(std::size_t count, F&& body) {
  const unsigned workers = std::max(1u, std::min<unsigned>(worker_threads(), static_cast<unsigned>(count)));
  if (workers <= 1) {
    for (std::size_t i = 0; i < count; ++i) body(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  for (unsigned w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < count; i = next++) body(i);
    });
  }
  for (auto& t : pool) t.join();
}

ResultBundle run_rwa(const Scenario& s, const RwaRun& r) {
  Prepared prep = prepare(s, true);
  EvolveOptions opts;
  opts.rtol = r.rtol;
  opts.atol = r.atol;
  std::vector<RwaReport> reports(r.lambdas.size());
  std::vector<std::exception_ptr> errors(r.lambdas.size());
  parallel_for(r.lambdas.size(), [&](std::size_t i) {
    try {
      SystemParams p = s.params;
      p.lambda = r.lambdas[i];
      reports[i] = validate_effective_hamiltonian(p, prep.initial, r.grid, opts);
    } catch (...) {
      errors[i] = std::current_exception();
    }
  });
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }

  ResultBundle b;
  b.scenario = s;
  b.diagnostics.warnings = prep.warnings;
  Table curves, summary;
  curves.header.push_back("t");
  for (double l : r.lambdas) curves.header.push_back("fidelity_lambda_" + format_number(l));
  for (std::size_t i = 0; i < reports.front().times.size(); ++i) {
    std::vector<Table::Cell> row{reports.front().times[i]};
    for (const auto& rep : reports) row.push_back(rep.fidelity[i]);
    curves.rows.push_back(std::move(row));
  }
  summary.header = {"lambda", "Lambda", "min_fidelity"};
  json mins = json::array();
  for (std::size_t i = 0; i < reports.size(); ++i) {
    SystemParams p = s.params;
    p.lambda = r.lambdas[i];
    summary.rows.push_back({r.lambdas[i], p.Lambda(0), reports[i].min_fidelity});
    mins.push_back(reports[i].min_fidelity);
  }
  b.tables.emplace_back("rwa_fidelity", std::move(curves));
  b.tables.emplace_back("rwa_summary", std::move(summary));
  b.details = {{"path", "vector"}, {"dimension", prep.space.dim()}, {"min_fidelity", mins}};
  return b;
}

double summarize(const ResultBundle& point, const std::string& name, SweepSummary how) {
  const Table& t = point.tables.front().second;
  const std::vector<double> v = t.column(name);
  if (v.empty()) return kNaN;
  switch (how) {
    case SweepSummary::Final: return v.back();
    case SweepSummary::Max: return *std::max_element(v.begin(), v.end());
    case SweepSummary::AtT2: {
      if (!point.t2) return kNaN;
      const std::vector<double> times = t.column("t");
      return v[nearest_sample(times, *point.t2)];
    }
  }
  return kNaN;
}

std::string one_line(std::string text) {
  for (char& c : text) {
    if (c == ',' || c == '\n' || c == '\r') c = ';';
  }
  return text;
}

ResultBundle run_sweep(const Scenario& s, const SweepRun& r) {
  Scenario base = s;
  std::visit([&](const auto& inner) { base.run = inner; }, r.inner);
  const json base_doc = to_json(base);

  std::size_t count = 1;
  for (const auto& a : r.axes) count *= a.values.size();

  struct Point {
    std::vector<double> coords;
    std::optional<ResultBundle> result;
    std::string error;
  };
  std::vector<Point> points(count);
  for (std::size_t p = 0; p < count; ++p) {
    std::size_t rest = p;
    points[p].coords.resize(r.axes.size());
    for (std::size_t a = r.axes.size(); a-- > 0;) {
      points[p].coords[a] = r.axes[a].values[rest % r.axes[a].values.size()];
      rest /= r.axes[a].values.size();
    }
  }

  parallel_for(count, [&](std::size_t p) {
    try {
      json doc = base_doc;
      for (std::size_t a = 0; a < r.axes.size(); ++a) {
        for (const auto& t : r.axes[a].targets) set_json_path(doc, t.path, t.offset + points[p].coords[a] * t.scale);
      }
      Scenario point = scenario_from_json(doc);
      points[p].result = run(point);
    } catch (const std::exception& e) {
      points[p].error = one_line(e.what());
    }
  });

  ResultBundle b;
  b.scenario = s;
  Table table;
  table.header.push_back("point");
  for (const auto& a : r.axes) table.header.push_back(a.targets.front().path);
  for (const char* h : {"measurement", "value", "t2", "status", "message"}) table.header.push_back(h);

  json point_details = json::array();
  std::size_t failures = 0;
  for (std::size_t p = 0; p < count; ++p) {
    auto prefix = [&] {
      std::vector<Table::Cell> row{static_cast<double>(p)};
      for (double c : points[p].coords) row.push_back(c);
      return row;
    };
    const Point& pt = points[p];
    if (!pt.result) {
      ++failures;
      auto row = prefix();
      row.insert(row.end(), {std::string("*"), kNaN, kNaN, std::string("error"), pt.error});
      table.rows.push_back(std::move(row));
      point_details.push_back({{"point", p}, {"status", "error"}, {"message", pt.error}});
      continue;
    }
    const double t2 = pt.result->t2 ? *pt.result->t2 : kNaN;
    for (const auto& m : s.measurements) {
      if (!m.is_series()) continue;
      auto row = prefix();
      row.insert(row.end(), {m.name, summarize(*pt.result, m.name, r.summary), t2, std::string("ok"), std::string()});
      table.rows.push_back(std::move(row));
    }
    const auto& d = pt.result->diagnostics;
    b.diagnostics.max_norm_drift = std::max(b.diagnostics.max_norm_drift, d.max_norm_drift);
    b.diagnostics.max_asymmetry = std::max(b.diagnostics.max_asymmetry, d.max_asymmetry);
    b.diagnostics.min_eigenvalue = std::min(b.diagnostics.min_eigenvalue, d.min_eigenvalue);
    b.diagnostics.accepted_steps += d.accepted_steps;
    b.diagnostics.rejected_steps += d.rejected_steps;
    b.diagnostics.rhs_calls += d.rhs_calls;
    for (const auto& w : d.warnings) b.diagnostics.warnings.push_back("point " + std::to_string(p) + ": " + w);
    point_details.push_back({{"point", p},
                             {"status", "ok"},
                             {"t2", pt.result->t2 ? json(*pt.result->t2) : json(nullptr)},
                             {"diagnostics", diagnostics_json(d)},
                             {"details", pt.result->details}});
  }
  b.tables.emplace_back("sweep", std::move(table));
  b.details = {{"points", count}, {"failures", failures}, {"per_point", point_details}};
  return b;
}

}  // namespace

const Table& ResultBundle::table(const std::string& name) const {
  for (const auto& [n, t] : tables) {
    if (n == name) return t;
  }
  throw Error(ErrorKind::InvalidArgument, "no table named '" + name + "'");
}

std::size_t Table::column_index(const std::string& name) const {
  const auto it = std::find(header.begin(), header.end(), name);
  if (it == header.end()) throw Error(ErrorKind::InvalidArgument, "no column named '" + name + "'");
  return static_cast<std::size_t>(it - header.begin());
}

std::vector<double> Table::column(const std::string& name) const {
  const std::size_t c = column_index(name);
  std::vector<double> out;
  out.reserve(rows.size());
  for (const auto& row : rows) {
    const double* v = std::get_if<double>(&row[c]);
    out.push_back(v ? *v : kNaN);
  }
  return out;
}

ResultBundle run(const Scenario& s) {
  const auto start = std::chrono::steady_clock::now();
  ResultBundle b;
  try {
    b = std::visit(
        [&](const auto& r) -> ResultBundle {
          using R = std::decay_t<decltype(r)>;
          if constexpr (std::is_same_v<R, TimeEvolutionRun>) return run_time_evolution(s, r);
          if constexpr (std::is_same_v<R, SteadyStateRun>) return run_steady_state(s, r);
          if constexpr (std::is_same_v<R, SweepRun>) return run_sweep(s, r);
          if constexpr (std::is_same_v<R, RwaRun>) return run_rwa(s, r);
        },
        s.run);
  } catch (const Error&) {
    rethrow_with_context(s);
  }
  b.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return b;
}

ResultBundle sweep(const Scenario& s) {
  if (!std::holds_alternative<SweepRun>(s.run)) {
    throw Error(ErrorKind::Config, "scenario '" + s.name + "': run.mode is not 'sweep'");
  }
  return run(s);
}

unsigned worker_threads() {
  if (const char* env = std::getenv("OPTOMECH_THREADS"); env && *env) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end && *end == '\0' && v > 0) return static_cast<unsigned>(v);
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

}  // namespace optomech
