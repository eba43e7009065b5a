#include "optomech/scenario.hpp"

#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

namespace optomech {

namespace {

[[noreturn]] void config_error(const std::string& path, const std::string& what) {
  throw Error(ErrorKind::Config, path + ": " + what);
}

thread_local std::vector<std::string>* unknown_sink = nullptr;

struct UnknownKeyCollector {
  std::vector<std::string> keys;
  std::vector<std::string>* prev;
  UnknownKeyCollector() : prev(unknown_sink) { unknown_sink = &keys; }
  ~UnknownKeyCollector() { unknown_sink = prev; }
  UnknownKeyCollector(const UnknownKeyCollector&) = delete;
  UnknownKeyCollector& operator=(const UnknownKeyCollector&) = delete;
  void raise() const {
    if (keys.empty()) return;
    std::string list;
    for (const auto& u : keys) list += (list.empty() ? "" : ", ") + u;
    throw Error(ErrorKind::Config, "unknown keys: " + list);
  }
};

// Object reader that remembers which keys were consumed.
class Obj {
 public:
  Obj(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j.is_object()) config_error(path_, "expected an object");
  }

  const json* find(const std::string& key) {
    used_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }
  std::string at(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  void finish() const {
    std::vector<std::string> unknown;
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (!used_.count(it.key())) unknown.push_back(at(it.key()));
    }
    if (unknown.empty()) return;
    if (unknown_sink) {
      unknown_sink->insert(unknown_sink->end(), unknown.begin(), unknown.end());
      return;
    }
    std::string list;
    for (const auto& u : unknown) list += (list.empty() ? "" : ", ") + u;
    throw Error(ErrorKind::Config, "unknown keys: " + list);
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> used_;
};

double number(const json& v, const std::string& path) {
  if (!v.is_number()) config_error(path, "expected a number");
  const double d = v.get<double>();
  if (!std::isfinite(d)) config_error(path, "must be finite");
  return d;
}

int integer(const json& v, const std::string& path) {
  if (!v.is_number_integer()) config_error(path, "expected an integer");
  return v.get<int>();
}

bool boolean(const json& v, const std::string& path) {
  if (!v.is_boolean()) config_error(path, "expected true or false");
  return v.get<bool>();
}

std::string string(const json& v, const std::string& path) {
  if (!v.is_string()) config_error(path, "expected a string");
  return v.get<std::string>();
}

void read(Obj& o, const std::string& key, double& out) {
  if (const json* v = o.find(key)) out = number(*v, o.at(key));
}
void read(Obj& o, const std::string& key, int& out) {
  if (const json* v = o.find(key)) out = integer(*v, o.at(key));
}
void read(Obj& o, const std::string& key, bool& out) {
  if (const json* v = o.find(key)) out = boolean(*v, o.at(key));
}
void read(Obj& o, const std::string& key, std::string& out) {
  if (const json* v = o.find(key)) out = string(*v, o.at(key));
}
void read(Obj& o, const std::string& key, std::size_t& out) {
  if (const json* v = o.find(key)) {
    const int i = integer(*v, o.at(key));
    if (i < 0) config_error(o.at(key), "must be non-negative");
    out = static_cast<std::size_t>(i);
  }
}

// A pair accepts [a, b] or a scalar applied to both.
void read(Obj& o, const std::string& key, std::array<double, 2>& out) {
  const json* v = o.find(key);
  if (!v) return;
  const std::string path = o.at(key);
  if (v->is_number()) {
    out[0] = out[1] = number(*v, path);
    return;
  }
  if (!v->is_array() || v->size() != 2) config_error(path, "expected a number or a two-element array");
  for (std::size_t j = 0; j < 2; ++j) out[j] = number((*v)[j], path + "[" + std::to_string(j) + "]");
}

cplx complex_value(const json& v, const std::string& path) {
  if (v.is_number()) return {number(v, path), 0.0};
  if (v.is_array() && v.size() == 2) return {number(v[0], path + "[0]"), number(v[1], path + "[1]")};
  config_error(path, "expected a number or [re, im]");
}

json complex_json(cplx z) { return json::array({z.real(), z.imag()}); }

json nullable(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

std::size_t mode_index(const json& v, const std::string& path, bool boson_only) {
  const std::string label = string(v, path);
  for (std::size_t i = 0; i < kSubsystemLabels.size(); ++i) {
    if (kSubsystemLabels[i] == label) {
      if (boson_only && i < kCavity1) config_error(path, "'" + label + "' is not a bosonic mode");
      return i;
    }
  }
  config_error(path, "unknown subsystem '" + label + "' (expected atom1, atom2, cavity1, mo or cavity2)");
}

std::string label(std::size_t i) { return std::string(kSubsystemLabels.at(i)); }

// ---------------------------------------------------------------------------

SpaceSpec parse_space(const json& j, const std::string& path) {
  Obj o(j, path);
  SpaceSpec s;
  read(o, "cavity1", s.cavity1);
  read(o, "mo", s.mo);
  read(o, "cavity2", s.cavity2);
  o.finish();
  for (auto [name, n] : {std::pair{"cavity1", s.cavity1}, {"mo", s.mo}, {"cavity2", s.cavity2}}) {
    if (n < 2) config_error(path + "." + name, "truncation must be >= 2");
  }
  return s;
}

json space_json(const SpaceSpec& s) { return {{"cavity1", s.cavity1}, {"mo", s.mo}, {"cavity2", s.cavity2}}; }

SystemParams parse_params(const json& j, const std::string& path) {
  Obj o(j, path);
  SystemParams p;
  read(o, "omega_m", p.omega_m);
  read(o, "omega_c", p.omega_c);
  if (const json* v = o.find("omega_atom")) {
    const std::string at = o.at("omega_atom");
    if (!v->is_array() || v->size() != 2) config_error(at, "expected two arrays of three level energies");
    for (std::size_t j2 = 0; j2 < 2; ++j2) {
      const json& row = (*v)[j2];
      if (!row.is_array() || row.size() != 3) config_error(at, "expected three level energies per atom");
      for (std::size_t i = 0; i < 3; ++i) p.omega_atom[j2][i] = number(row[i], at);
    }
  }
  read(o, "g", p.g);
  read(o, "lambda", p.lambda);
  if (const json* v = o.find("Lambda")) {
    const std::string at = o.at("Lambda");
    auto one = [&](const json& e, std::size_t k) -> std::optional<double> {
      if (e.is_null()) return std::nullopt;
      return number(e, at + "[" + std::to_string(k) + "]");
    };
    if (v->is_null() || v->is_number()) {
      p.Lambda_override[0] = p.Lambda_override[1] = one(*v, 0);
    } else if (v->is_array() && v->size() == 2) {
      p.Lambda_override[0] = one((*v)[0], 0);
      p.Lambda_override[1] = one((*v)[1], 1);
    } else {
      config_error(at, "expected null, a number, or a two-element array");
    }
  }
  read(o, "Omega1", p.Omega1);
  read(o, "Omega2", p.Omega2);
  read(o, "Delta", p.Delta);
  read(o, "q", p.q);
  read(o, "q_prime", p.q_prime);
  read(o, "gamma21", p.gamma21);
  read(o, "gamma10", p.gamma10);
  read(o, "kappa_a", p.kappa_a);
  read(o, "kappa_b", p.kappa_b);
  read(o, "nbar_a", p.nbar_a);
  read(o, "nbar_c", p.nbar_c);
  read(o, "nbar_m", p.nbar_m);
  if (const json* v = o.find("phi")) {
    Obj ph(*v, o.at("phi"));
    read(ph, "cavity1", p.phi[0]);
    read(ph, "mo", p.phi[1]);
    read(ph, "cavity2", p.phi[2]);
    ph.finish();
  }
  o.finish();
  return p;
}

json pair_json(const std::array<double, 2>& a) { return json::array({a[0], a[1]}); }

json params_json(const SystemParams& p) {
  json lam = json::array();
  for (const auto& l : p.Lambda_override) lam.push_back(l ? json(*l) : json(nullptr));
  return {{"omega_m", p.omega_m},
          {"omega_c", pair_json(p.omega_c)},
          {"omega_atom", json::array({json::array({p.omega_atom[0][0], p.omega_atom[0][1], p.omega_atom[0][2]}),
                                      json::array({p.omega_atom[1][0], p.omega_atom[1][1], p.omega_atom[1][2]})})},
          {"g", pair_json(p.g)},
          {"lambda", p.lambda},
          {"Lambda", lam},
          {"Omega1", pair_json(p.Omega1)},
          {"Omega2", pair_json(p.Omega2)},
          {"Delta", pair_json(p.Delta)},
          {"q", p.q},
          {"q_prime", p.q_prime},
          {"gamma21", pair_json(p.gamma21)},
          {"gamma10", pair_json(p.gamma10)},
          {"kappa_a", pair_json(p.kappa_a)},
          {"kappa_b", p.kappa_b},
          {"nbar_a", pair_json(p.nbar_a)},
          {"nbar_c", pair_json(p.nbar_c)},
          {"nbar_m", p.nbar_m},
          {"phi", {{"cavity1", p.phi[0]}, {"mo", p.phi[1]}, {"cavity2", p.phi[2]}}}};
}

FactorRecipe parse_factor(const json& j, const std::string& path) {
  if (j.is_string()) {
    const std::string s = j.get<std::string>();
    if (s == "ground" || s == "vacuum") return Ground{};
    config_error(path, "unknown state '" + s + "'");
  }
  Obj o(j, path);
  const json* t = o.find("type");
  if (!t) config_error(path, "missing 'type'");
  const std::string type = string(*t, o.at("type"));
  FactorRecipe out;
  if (type == "ground" || type == "vacuum") {
    out = Ground{};
  } else if (type == "fock") {
    Fock f;
    read(o, "n", f.n);
    if (f.n < 0) config_error(o.at("n"), "must be non-negative");
    out = f;
  } else if (type == "squeezed") {
    Squeezed s;
    if (const json* v = o.find("xi")) s.xi = complex_value(*v, o.at("xi"));
    out = s;
  } else if (type == "cat") {
    Cat c;
    if (const json* v = o.find("alpha")) c.alpha = complex_value(*v, o.at("alpha"));
    out = c;
  } else if (type == "thermal") {
    Thermal th;
    read(o, "nbar", th.nbar);
    if (th.nbar < 0.0) config_error(o.at("nbar"), "must be non-negative");
    out = th;
  } else {
    config_error(o.at("type"), "unknown state type '" + type + "'");
  }
  o.finish();
  return out;
}

json factor_json(const FactorRecipe& f) {
  return std::visit(
      [](const auto& v) -> json {
        using T = std::decay_t<decltype(v)>;
        if constexpr (std::is_same_v<T, Ground>) return {{"type", "ground"}};
        if constexpr (std::is_same_v<T, Fock>) return {{"type", "fock"}, {"n", v.n}};
        if constexpr (std::is_same_v<T, Squeezed>) return {{"type", "squeezed"}, {"xi", complex_json(v.xi)}};
        if constexpr (std::is_same_v<T, Cat>) return {{"type", "cat"}, {"alpha", complex_json(v.alpha)}};
        if constexpr (std::is_same_v<T, Thermal>) return {{"type", "thermal"}, {"nbar", v.nbar}};
      },
      f);
}

StateRecipe parse_initial(const json& j, const std::string& path) {
  Obj o(j, path);
  StateRecipe r;
  for (std::size_t i = 0; i < kSubsystemLabels.size(); ++i) {
    if (const json* v = o.find(label(i))) r.factors[i] = parse_factor(*v, o.at(label(i)));
  }
  read(o, "tail_tolerance", r.tail_tolerance);
  o.finish();
  if (!(r.tail_tolerance > 0.0)) config_error(path + ".tail_tolerance", "must be positive");
  return r;
}

json initial_json(const StateRecipe& r) {
  json j = json::object();
  for (std::size_t i = 0; i < kSubsystemLabels.size(); ++i) j[label(i)] = factor_json(r.factors[i]);
  j["tail_tolerance"] = r.tail_tolerance;
  return j;
}

const std::vector<std::pair<std::string, HamiltonianTerm>>& term_names() {
  static const std::vector<std::pair<std::string, HamiltonianTerm>> names{
      {"effective", HamiltonianTerm::Effective},
      {"full", HamiltonianTerm::Full},
      {"drive", HamiltonianTerm::Drive},
      {"squeeze_pump_mo", HamiltonianTerm::SqueezePumpMO},
      {"squeeze_pump_c1", HamiltonianTerm::SqueezePumpC1},
      {"time_dependent", HamiltonianTerm::TimeDependent}};
  return names;
}

std::string term_name(HamiltonianTerm t) {
  for (const auto& [n, v] : term_names()) {
    if (v == t) return n;
  }
  return "?";
}

std::vector<HamiltonianTerm> parse_hamiltonian(const json& j, const std::string& path) {
  Obj o(j, path);
  std::vector<HamiltonianTerm> terms;
  if (const json* v = o.find("terms")) {
    if (!v->is_array()) config_error(o.at("terms"), "expected an array of term names");
    for (std::size_t k = 0; k < v->size(); ++k) {
      const std::string at = o.at("terms") + "[" + std::to_string(k) + "]";
      const std::string name = string((*v)[k], at);
      auto it = std::find_if(term_names().begin(), term_names().end(), [&](const auto& e) { return e.first == name; });
      if (it == term_names().end()) config_error(at, "unknown Hamiltonian term '" + name + "'");
      if (std::find(terms.begin(), terms.end(), it->second) != terms.end()) config_error(at, "duplicate term");
      terms.push_back(it->second);
    }
  } else {
    terms = {HamiltonianTerm::Effective};
  }
  o.finish();
  return terms;
}

// ---------------------------------------------------------------------------
// Run section

void read_grid(Obj& o, TimeGrid& g, const std::string& path) {
  read(o, "t0", g.t0);
  read(o, "t1", g.t1);
  read(o, "samples", g.sample_count);
  try {
    g.validate();
  } catch (const Error& e) {
    config_error(path, e.what());
  }
}

TimeEvolutionRun parse_time_evolution(Obj& o, const std::string& path, bool density) {
  TimeEvolutionRun r;
  if (density) r.rtol = 1e-7;
  read_grid(o, r.grid, path);
  read(o, "rtol", r.rtol);
  read(o, "atol", r.atol);
  read(o, "thermal_as_vacuum", r.thermal_as_vacuum);
  read(o, "snapshot_stride", r.snapshot_stride);
  if (const json* v = o.find("t2")) {
    Obj t(*v, o.at("t2"));
    PeakSpec pk;
    read(t, "measurement", pk.measurement);
    read(t, "t_min", pk.t_min);
    if (const json* tm = t.find("t_max"); tm && !tm->is_null()) pk.t_max = number(*tm, t.at("t_max"));
    t.finish();
    if (pk.measurement.empty()) config_error(o.at("t2") + ".measurement", "required");
    r.t2 = pk;
  }
  if (!(r.rtol > 0.0) || !(r.atol > 0.0)) config_error(path, "rtol and atol must be positive");
  return r;
}

json time_evolution_json(const TimeEvolutionRun& r) {
  json j{{"mode", "time_evolution"},       {"t0", r.grid.t0},
         {"t1", r.grid.t1},                {"samples", r.grid.sample_count},
         {"rtol", r.rtol},                 {"atol", r.atol},
         {"thermal_as_vacuum", r.thermal_as_vacuum}, {"snapshot_stride", r.snapshot_stride}};
  if (r.t2) j["t2"] = {{"measurement", r.t2->measurement}, {"t_min", r.t2->t_min}, {"t_max", nullable(r.t2->t_max)}};
  return j;
}

SteadyStateRun parse_steady(Obj& o, const std::string& path) {
  SteadyStateRun r;
  auto& c = r.criteria;
  std::string method = "krylov";
  read(o, "method", method);
  if (method == "krylov") {
    c.method = SteadyStateMethod::Krylov;
  } else if (method == "march") {
    c.method = SteadyStateMethod::March;
  } else {
    config_error(o.at("method"), "expected 'krylov' or 'march'");
  }
  read(o, "residual_tol", c.residual_tol);
  read(o, "observable_tol", c.observable_tol);
  if (const json* v = o.find("window"); v && !v->is_null()) c.window = number(*v, o.at("window"));
  read(o, "max_time", c.max_time);
  read(o, "check_interval", c.check_interval);
  read(o, "rtol", c.rtol);
  read(o, "atol", c.atol);
  read(o, "krylov_dim", c.krylov_dim);
  read(o, "max_restarts", c.max_restarts);
  if (!(c.residual_tol > 0.0) || !(c.check_interval > 0.0) || c.krylov_dim < 2) {
    config_error(path, "residual_tol, check_interval must be positive and krylov_dim >= 2");
  }
  return r;
}

json steady_json(const SteadyStateRun& r) {
  const auto& c = r.criteria;
  return {{"mode", "steady_state"},
          {"method", c.method == SteadyStateMethod::Krylov ? "krylov" : "march"},
          {"residual_tol", c.residual_tol},
          {"observable_tol", c.observable_tol},
          {"window", c.window ? json(*c.window) : json(nullptr)},
          {"max_time", c.max_time},
          {"check_interval", c.check_interval},
          {"rtol", c.rtol},
          {"atol", c.atol},
          {"krylov_dim", c.krylov_dim},
          {"max_restarts", c.max_restarts}};
}

const char* summary_name(SweepSummary s) {
  switch (s) {
    case SweepSummary::Final: return "final";
    case SweepSummary::Max: return "max";
    case SweepSummary::AtT2: return "at_t2";
  }
  return "final";
}

RunSpec parse_run(const json& j, const std::string& path, bool density, bool inner = false);

SweepRun parse_sweep(Obj& o, const std::string& path, bool density) {
  SweepRun s;
  const json* axes = o.find("axes");
  if (!axes || !axes->is_array() || axes->empty()) config_error(o.at("axes"), "expected a non-empty array");
  for (std::size_t a = 0; a < axes->size(); ++a) {
    const std::string at = o.at("axes") + "[" + std::to_string(a) + "]";
    Obj ax((*axes)[a], at);
    SweepAxis axis;
    const json* found = ax.find("targets");
    if (!found) config_error(ax.at("targets"), "required");
    const json single = json::array({*found});
    const json* targets = found->is_string() ? &single : found;
    if (!targets->is_array() || targets->empty()) config_error(ax.at("targets"), "expected a path or a non-empty array");
    for (std::size_t k = 0; k < targets->size(); ++k) {
      const std::string tat = ax.at("targets") + "[" + std::to_string(k) + "]";
      const json& t = (*targets)[k];
      SweepTarget target;
      if (t.is_string()) {
        target.path = t.get<std::string>();
      } else {
        Obj to(t, tat);
        read(to, "path", target.path);
        read(to, "scale", target.scale);
        read(to, "offset", target.offset);
        to.finish();
      }
      if (target.path.empty()) config_error(tat, "empty path");
      axis.targets.push_back(target);
    }
    const json* values = ax.find("values");
    if (!values || !values->is_array() || values->empty()) config_error(ax.at("values"), "expected a non-empty array");
    for (std::size_t k = 0; k < values->size(); ++k) {
      axis.values.push_back(number((*values)[k], ax.at("values") + "[" + std::to_string(k) + "]"));
    }
    ax.finish();
    s.axes.push_back(std::move(axis));
  }
  std::string summary = "final";
  read(o, "summary", summary);
  if (summary == "final") {
    s.summary = SweepSummary::Final;
  } else if (summary == "max") {
    s.summary = SweepSummary::Max;
  } else if (summary == "at_t2") {
    s.summary = SweepSummary::AtT2;
  } else {
    config_error(o.at("summary"), "expected final, max or at_t2");
  }
  const json* inner = o.find("inner");
  if (!inner) config_error(o.at("inner"), "required");
  RunSpec run = parse_run(*inner, o.at("inner"), density, true);
  if (auto* te = std::get_if<TimeEvolutionRun>(&run)) {
    s.inner = *te;
  } else if (auto* ss = std::get_if<SteadyStateRun>(&run)) {
    s.inner = *ss;
  }
  if (s.summary == SweepSummary::AtT2) {
    const auto* te = std::get_if<TimeEvolutionRun>(&s.inner);
    if (!te || !te->t2) config_error(o.at("summary"), "at_t2 needs a time evolution with a t2 block");
  }
  (void)path;
  return s;
}

RwaRun parse_rwa(Obj& o, const std::string& path) {
  RwaRun r;
  read_grid(o, r.grid, path);
  read(o, "rtol", r.rtol);
  read(o, "atol", r.atol);
  if (const json* v = o.find("lambdas")) {
    if (!v->is_array() || v->empty()) config_error(o.at("lambdas"), "expected a non-empty array");
    r.lambdas.clear();
    for (std::size_t k = 0; k < v->size(); ++k) {
      r.lambdas.push_back(number((*v)[k], o.at("lambdas") + "[" + std::to_string(k) + "]"));
    }
  }
  return r;
}

RunSpec parse_run(const json& j, const std::string& path, bool density, bool inner) {
  Obj o(j, path);
  std::string mode = "time_evolution";
  read(o, "mode", mode);
  RunSpec out;
  if (mode == "time_evolution") {
    out = parse_time_evolution(o, path, density);
  } else if (mode == "steady_state") {
    out = parse_steady(o, path);
  } else if (mode == "sweep" && !inner) {
    out = parse_sweep(o, path, density);
  } else if (mode == "rwa_validation" && !inner) {
    out = parse_rwa(o, path);
  } else {
    config_error(o.at("mode"), "unsupported run mode '" + mode + "'");
  }
  o.finish();
  return out;
}

json run_json(const RunSpec& run) {
  return std::visit(
      [](const auto& r) -> json {
        using T = std::decay_t<decltype(r)>;
        if constexpr (std::is_same_v<T, TimeEvolutionRun>) return time_evolution_json(r);
        if constexpr (std::is_same_v<T, SteadyStateRun>) return steady_json(r);
        if constexpr (std::is_same_v<T, RwaRun>) {
          return {{"mode", "rwa_validation"}, {"t0", r.grid.t0},   {"t1", r.grid.t1}, {"samples", r.grid.sample_count},
                  {"lambdas", r.lambdas},     {"rtol", r.rtol},    {"atol", r.atol}};
        }
        if constexpr (std::is_same_v<T, SweepRun>) {
          json axes = json::array();
          for (const auto& a : r.axes) {
            json targets = json::array();
            for (const auto& t : a.targets) targets.push_back({{"path", t.path}, {"scale", t.scale}, {"offset", t.offset}});
            axes.push_back({{"targets", targets}, {"values", a.values}});
          }
          json inner = std::visit([](const auto& i) -> json {
            using I = std::decay_t<decltype(i)>;
            if constexpr (std::is_same_v<I, TimeEvolutionRun>) return time_evolution_json(i);
            else return steady_json(i);
          }, r.inner);
          return {{"mode", "sweep"}, {"axes", axes}, {"summary", summary_name(r.summary)}, {"inner", inner}};
        }
      },
      run);
}

// ---------------------------------------------------------------------------
// Measurements

const std::vector<std::pair<std::string, MeasurementSpec::Type>>& measurement_types() {
  using T = MeasurementSpec::Type;
  static const std::vector<std::pair<std::string, T>> types{
      {"fidelity", T::Fidelity},     {"negativity", T::Negativity},
      {"contangle", T::Contangle},   {"quadrature", T::Quadrature},
      {"population", T::Population}, {"level_population", T::LevelPopulation},
      {"mean_number", T::MeanNumber}, {"wigner", T::Wigner}};
  return types;
}

std::string type_name(MeasurementSpec::Type t) {
  for (const auto& [n, v] : measurement_types()) {
    if (v == t) return n;
  }
  return "?";
}

MeasurementSpec parse_measurement(const json& j, const std::string& path, const SpaceSpec& space) {
  using T = MeasurementSpec::Type;
  Obj o(j, path);
  MeasurementSpec m;
  const json* t = o.find("type");
  if (!t) config_error(path, "missing 'type'");
  const std::string tname = string(*t, o.at("type"));
  auto it = std::find_if(measurement_types().begin(), measurement_types().end(),
                         [&](const auto& e) { return e.first == tname; });
  if (it == measurement_types().end()) config_error(o.at("type"), "unknown measurement type '" + tname + "'");
  m.type = it->second;
  read(o, "name", m.name);

  auto one_mode = [&](const char* key) {
    const json* v = o.find(key);
    if (!v) config_error(o.at(key), "required");
    return mode_index(*v, o.at(key), true);
  };
  auto truncation = [&](std::size_t mode) {
    return mode == kCavity1 ? space.cavity1 : mode == kMO ? space.mo : space.cavity2;
  };

  switch (m.type) {
    case T::Fidelity: {
      const std::size_t target = one_mode("target");
      if (const json* rs = o.find("reference_state")) {
        m.reference_state = parse_factor(*rs, o.at("reference_state"));
        m.modes = {target, target};
      } else {
        m.modes = {one_mode("reference"), target};
        if (truncation(m.modes[0]) != truncation(target)) {
          config_error(path, "fidelity compares modes with different truncations; use a common truncation");
        }
      }
      if (m.name.empty()) m.name = "F_" + label(target);
      break;
    }
    case T::Negativity: {
      const json* pair = o.find("pair");
      if (!pair || !pair->is_array() || pair->size() != 2) config_error(o.at("pair"), "expected two mode labels");
      m.modes = {mode_index((*pair)[0], o.at("pair") + "[0]", false), mode_index((*pair)[1], o.at("pair") + "[1]", false)};
      if (m.modes[0] == m.modes[1]) config_error(o.at("pair"), "modes must differ");
      if (m.modes[0] > m.modes[1]) std::swap(m.modes[0], m.modes[1]);
      if (m.name.empty()) m.name = "N_" + label(m.modes[0]) + "_" + label(m.modes[1]);
      break;
    }
    case T::Contangle: {
      m.modes = {kCavity1, kMO, kCavity2};
      if (const json* v = o.find("modes")) {
        if (!v->is_array() || v->size() != 3) config_error(o.at("modes"), "expected three mode labels");
        for (std::size_t k = 0; k < 3; ++k) m.modes[k] = mode_index((*v)[k], o.at("modes"), false);
        std::sort(m.modes.begin(), m.modes.end());
        if (std::unique(m.modes.begin(), m.modes.end()) != m.modes.end()) config_error(o.at("modes"), "modes must differ");
      }
      if (m.name.empty()) m.name = "contangle";
      break;
    }
    case T::Quadrature: {
      m.modes = {one_mode("mode")};
      std::string q = "X";
      read(o, "quadrature", q);
      if (q == "X") {
        m.quadrature = Quadrature::X;
      } else if (q == "Y") {
        m.quadrature = Quadrature::Y;
      } else {
        config_error(o.at("quadrature"), "expected X or Y");
      }
      if (const json* v = o.find("phase")) m.phase = number(*v, o.at("phase"));
      if (m.name.empty()) m.name = "QF_" + q + "_" + label(m.modes[0]);
      break;
    }
    case T::Population: {
      const json* v = o.find("labels");
      if (!v || !v->is_array() || v->empty()) config_error(o.at("labels"), "expected a non-empty array of labels");
      const std::array<int, 5> sizes{3, 3, space.cavity1, space.mo, space.cavity2};
      for (std::size_t k = 0; k < v->size(); ++k) {
        const std::string at = o.at("labels") + "[" + std::to_string(k) + "]";
        const json& l = (*v)[k];
        if (!l.is_array() || l.size() != 5) config_error(at, "a label has five levels (a1, a2, c1, mo, c2)");
        std::vector<int> digits;
        for (std::size_t d = 0; d < 5; ++d) {
          const int n = integer(l[d], at);
          if (n < 0 || n >= sizes[d]) config_error(at, "level out of range for " + label(d));
          digits.push_back(n);
        }
        m.labels.push_back(digits);
      }
      if (m.name.empty()) {
        m.name = "P";
        for (int d : m.labels.front()) m.name += std::to_string(d);
      }
      break;
    }
    case T::LevelPopulation: {
      const json* v = o.find("mode");
      if (!v) config_error(o.at("mode"), "required");
      m.modes = {mode_index(*v, o.at("mode"), false)};
      read(o, "level", m.level);
      const std::array<int, 5> sizes{3, 3, space.cavity1, space.mo, space.cavity2};
      if (m.level < 0 || m.level >= sizes[m.modes[0]]) config_error(o.at("level"), "level out of range");
      if (m.name.empty()) m.name = "P_" + label(m.modes[0]) + "_" + std::to_string(m.level);
      break;
    }
    case T::MeanNumber: {
      m.modes = {one_mode("mode")};
      if (m.name.empty()) m.name = "n_" + label(m.modes[0]);
      break;
    }
    case T::Wigner: {
      m.modes = {one_mode("mode")};
      if (const json* v = o.find("times")) {
        if (!v->is_array()) config_error(o.at("times"), "expected an array");
        for (std::size_t k = 0; k < v->size(); ++k) m.times.push_back(number((*v)[k], o.at("times")));
      }
      read(o, "at_t2", m.at_t2);
      if (const json* g = o.find("grid")) {
        Obj go(*g, o.at("grid"));
        std::array<double, 2> x{m.grid.x_min, m.grid.x_max}, p{m.grid.p_min, m.grid.p_max};
        read(go, "x", x);
        read(go, "p", p);
        read(go, "resolution", m.grid.resolution);
        go.finish();
        m.grid.x_min = x[0];
        m.grid.x_max = x[1];
        m.grid.p_min = p[0];
        m.grid.p_max = p[1];
        if (m.grid.resolution < 2 || !(x[1] > x[0]) || !(p[1] > p[0])) config_error(o.at("grid"), "bad grid");
      }
      if (m.name.empty()) m.name = "W_" + label(m.modes[0]);
      break;
    }
  }
  o.finish();
  return m;
}

json measurement_json(const MeasurementSpec& m) {
  using T = MeasurementSpec::Type;
  json j{{"name", m.name}, {"type", type_name(m.type)}};
  switch (m.type) {
    case T::Fidelity:
      if (m.reference_state) {
        j["reference_state"] = factor_json(*m.reference_state);
      } else {
        j["reference"] = label(m.modes[0]);
      }
      j["target"] = label(m.modes[1]);
      break;
    case T::Negativity: j["pair"] = {label(m.modes[0]), label(m.modes[1])}; break;
    case T::Contangle: j["modes"] = {label(m.modes[0]), label(m.modes[1]), label(m.modes[2])}; break;
    case T::Quadrature:
      j["mode"] = label(m.modes[0]);
      j["quadrature"] = m.quadrature == Quadrature::X ? "X" : "Y";
      if (m.phase) j["phase"] = *m.phase;
      break;
    case T::Population: j["labels"] = m.labels; break;
    case T::LevelPopulation:
      j["mode"] = label(m.modes[0]);
      j["level"] = m.level;
      break;
    case T::MeanNumber: j["mode"] = label(m.modes[0]); break;
    case T::Wigner:
      j["mode"] = label(m.modes[0]);
      j["times"] = m.times;
      j["at_t2"] = m.at_t2;
      j["grid"] = {{"x", {m.grid.x_min, m.grid.x_max}}, {"p", {m.grid.p_min, m.grid.p_max}}, {"resolution", m.grid.resolution}};
      break;
  }
  return j;
}

bool any_rate(const SystemParams& p) { return p.any_dissipation(); }

void validate_scenario(const Scenario& s) {
  const bool td = s.has_term(HamiltonianTerm::TimeDependent);
  if (td && s.has_term(HamiltonianTerm::Effective)) {
    config_error("hamiltonian.terms", "time_dependent already contains the effective part");
  }
  if (s.has_term(HamiltonianTerm::Full) && (s.has_term(HamiltonianTerm::Effective) || td)) {
    config_error("hamiltonian.terms", "full cannot be combined with effective terms");
  }
  if (s.has_term(HamiltonianTerm::Effective) || td || std::holds_alternative<RwaRun>(s.run)) {
    for (std::size_t j = 0; j < 2; ++j) {
      if (std::abs(s.params.Delta[j] + s.params.omega_m) > 1e-12) {
        throw Error(ErrorKind::ModelRegime, "params.Delta[" + std::to_string(j) +
                                                "]: effective Hamiltonian needs the blue-detuned regime Delta = -omega_m");
      }
    }
  }
  s.params.validate();

  const bool density = s.density_path();
  if (td && density) config_error("hamiltonian.terms", "time_dependent is only available on the state-vector path");

  auto check_inner = [&](const auto& run, const std::string& at) {
    using R = std::decay_t<decltype(run)>;
    if constexpr (std::is_same_v<R, TimeEvolutionRun>) {
      if (!density && s.initial_state.has_mixed_factor() && !run.thermal_as_vacuum) {
        config_error(at, "lossless run needs a pure initial state; set thermal_as_vacuum or enable dissipation");
      }
      if (run.t2) {
        const bool known = std::any_of(s.measurements.begin(), s.measurements.end(), [&](const auto& m) {
          return m.name == run.t2->measurement && m.is_series();
        });
        if (!known) config_error(at + ".t2.measurement", "no series measurement named '" + run.t2->measurement + "'");
      }
    } else if constexpr (std::is_same_v<R, SteadyStateRun>) {
      if (!density) config_error(at, "steady state needs dissipation with at least one nonzero rate");
    }
  };
  std::visit(
      [&](const auto& run) {
        using R = std::decay_t<decltype(run)>;
        if constexpr (std::is_same_v<R, SweepRun>) {
          std::visit([&](const auto& inner) { check_inner(inner, "run.inner"); }, run.inner);
        } else if constexpr (std::is_same_v<R, RwaRun>) {
          if (density) config_error("run", "rwa_validation is lossless; disable dissipation");
          for (double l : run.lambdas) {
            if (!(l >= 0.0)) config_error("run.lambdas", "must be non-negative");
          }
          if (s.params.Lambda_override[0] || s.params.Lambda_override[1]) {
            config_error("params.Lambda", "rwa_validation derives Lambda from g and lambda; leave it null");
          }
        } else {
          check_inner(run, "run");
        }
      },
      s.run);

  std::set<std::string> names;
  for (std::size_t k = 0; k < s.measurements.size(); ++k) {
    const auto& m = s.measurements[k];
    if (!names.insert(m.name).second) config_error("measurements[" + std::to_string(k) + "]", "duplicate name '" + m.name + "'");
    if (m.name == "t" || m.name.find(',') != std::string::npos) {
      config_error("measurements[" + std::to_string(k) + "].name", "reserved or contains a comma");
    }
    if (m.type == MeasurementSpec::Type::Wigner && m.at_t2) {
      const auto* te = std::get_if<TimeEvolutionRun>(&s.run);
      if (!te || !te->t2) config_error("measurements[" + std::to_string(k) + "]", "at_t2 needs a t2 block");
    }
  }
}

}  // namespace

// ---------------------------------------------------------------------------

bool Scenario::has_term(HamiltonianTerm t) const {
  return std::find(hamiltonian.begin(), hamiltonian.end(), t) != hamiltonian.end();
}

bool Scenario::density_path() const { return dissipation && any_rate(params); }

Scenario scenario_from_json(const json& doc) {
  UnknownKeyCollector unknown;
  Obj o(doc, "");
  Scenario s;
  const json* name = o.find("name");
  if (!name) config_error("name", "required");
  s.name = string(*name, "name");
  if (s.name.empty() || s.name.find_first_of("/\\") != std::string::npos) config_error("name", "must be a plain identifier");
  read(o, "description", s.description);
  if (const json* v = o.find("space")) s.space = parse_space(*v, "space");
  if (const json* v = o.find("params")) s.params = parse_params(*v, "params");
  if (const json* v = o.find("initial_state")) s.initial_state = parse_initial(*v, "initial_state");
  if (const json* v = o.find("hamiltonian")) s.hamiltonian = parse_hamiltonian(*v, "hamiltonian");
  if (const json* v = o.find("dissipation")) {
    Obj d(*v, "dissipation");
    read(d, "enabled", s.dissipation);
    d.finish();
  }
  if (const json* v = o.find("measurements")) {
    if (!v->is_array()) config_error("measurements", "expected an array");
    for (std::size_t k = 0; k < v->size(); ++k) {
      s.measurements.push_back(parse_measurement((*v)[k], "measurements[" + std::to_string(k) + "]", s.space));
    }
  }
  if (const json* v = o.find("run")) {
    s.run = parse_run(*v, "run", s.density_path());
  } else {
    TimeEvolutionRun r;
    if (s.density_path()) r.rtol = 1e-7;
    s.run = r;
  }
  if (const json* v = o.find("output")) {
    Obj out(*v, "output");
    read(out, "directory", s.output.directory);
    out.finish();
  }
  o.finish();
  unknown.raise();
  validate_scenario(s);
  return s;
}

json to_json(const Scenario& s) {
  json terms = json::array();
  for (auto t : s.hamiltonian) terms.push_back(term_name(t));
  json measurements = json::array();
  for (const auto& m : s.measurements) measurements.push_back(measurement_json(m));
  return {{"name", s.name},
          {"description", s.description},
          {"space", space_json(s.space)},
          {"params", params_json(s.params)},
          {"initial_state", initial_json(s.initial_state)},
          {"hamiltonian", {{"terms", terms}}},
          {"dissipation", {{"enabled", s.dissipation}}},
          {"run", run_json(s.run)},
          {"measurements", measurements},
          {"output", {{"directory", s.output.directory}}}};
}

bool operator==(const Scenario& a, const Scenario& b) { return to_json(a) == to_json(b); }

Scenario parse_scenario(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::Io, "cannot open scenario '" + path.string() + "'");
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw Error(ErrorKind::Config, path.string() + ": malformed JSON: " + e.what());
  }
  return scenario_from_json(doc);
}

void set_json_path(json& doc, const std::string& path, const json& value) {
  if (path.empty()) config_error("--set", "empty key");
  json* node = &doc;
  std::size_t pos = 0;
  while (pos < path.size()) {
    const std::size_t dot = path.find('.', pos);
    std::string part = path.substr(pos, dot == std::string::npos ? std::string::npos : dot - pos);
    pos = dot == std::string::npos ? path.size() : dot + 1;
    const bool last = pos >= path.size();
    std::optional<std::size_t> index;
    if (const std::size_t br = part.find('['); br != std::string::npos) {
      if (part.back() != ']') config_error(path, "malformed index");
      try {
        index = std::stoul(part.substr(br + 1, part.size() - br - 2));
      } catch (const std::exception&) {
        config_error(path, "malformed index");
      }
      part = part.substr(0, br);
    }
    if (part.empty()) config_error(path, "empty path component");
    if (!node->is_object()) config_error(path, "'" + part + "' is not inside an object");
    json& child = (*node)[part];
    if (index) {
      if (!child.is_array() || *index >= child.size()) config_error(path, "index out of range");
      json& elem = child[*index];
      if (last) {
        elem = value;
        return;
      }
      node = &elem;
      continue;
    }
    if (last) {
      if (child.is_array() && value.is_number() && !child.empty() &&
          std::all_of(child.begin(), child.end(), [](const json& e) { return e.is_number() || e.is_null(); })) {
        for (auto& e : child) e = value;
      } else {
        child = value;
      }
      return;
    }
    if (child.is_null()) child = json::object();
    node = &child;
  }
}

json parse_cli_value(const std::string& text) {
  try {
    return json::parse(text);
  } catch (const json::parse_error&) {
    return json(text);
  }
}

std::filesystem::path scenario_directory() {
  if (const char* env = std::getenv("OPTOMECH_SCENARIO_DIR"); env && *env) return env;
  return OPTOMECH_SCENARIO_DIR;
}

}  // namespace optomech
