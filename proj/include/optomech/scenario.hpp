#pragma once

// Declarative experiments: the JSON scenario schema, its parser and
// serializer, and the run/sweep/emit pipeline behind the CLI.

#include <filesystem>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

#include "optomech/dynamics.hpp"
#include "optomech/measures.hpp"
#include "optomech/model.hpp"

namespace optomech {

using json = nlohmann::ordered_json;

struct SpaceSpec {
  int cavity1 = 8;
  int mo = 6;
  int cavity2 = 8;

  CompositeSpace build() const { return network_space(cavity1, mo, cavity2); }
};

enum class HamiltonianTerm { Effective, Full, Drive, SqueezePumpMO, SqueezePumpC1, TimeDependent };

/// argmax of one measurement inside [t_min, t_max].
struct PeakSpec {
  std::string measurement;
  double t_min = 0.0;
  double t_max = std::numeric_limits<double>::infinity();
};

struct TimeEvolutionRun {
  TimeGrid grid{0.0, 10.0, 101};
  double rtol = 1e-8;  ///< density path default is 1e-7
  double atol = 1e-10;
  /// Replace Thermal factors by vacuum so lossless runs use a state vector.
  bool thermal_as_vacuum = false;
  std::size_t snapshot_stride = 1;  ///< positivity certification stride
  std::optional<PeakSpec> t2;
};

struct SteadyStateRun {
  SteadyStateCriteria criteria;
};

enum class SweepSummary { Final, Max, AtT2 };

struct SweepTarget {
  std::string path;  ///< e.g. "params.kappa_b"
  double scale = 1.0;
  double offset = 0.0;  ///< assigned value is offset + scale * axis value
};

struct SweepAxis {
  std::vector<SweepTarget> targets;
  std::vector<double> values;
};

struct SweepRun {
  std::vector<SweepAxis> axes;  ///< points are the Cartesian product
  std::variant<TimeEvolutionRun, SteadyStateRun> inner;
  SweepSummary summary = SweepSummary::Final;
};

struct RwaRun {
  TimeGrid grid{0.0, 6.3, 64};
  std::vector<double> lambdas{0.01};
  double rtol = 1e-9;
  double atol = 1e-11;
};

using RunSpec = std::variant<TimeEvolutionRun, SteadyStateRun, SweepRun, RwaRun>;

struct MeasurementSpec {
  enum class Type { Fidelity, Negativity, Contangle, Quadrature, Population, LevelPopulation, MeanNumber, Wigner };

  std::string name;
  Type type = Type::Fidelity;
  /// Subsystem indices: fidelity {reference mode, target mode}; negativity
  /// pair; contangle triple; quadrature/level/number/wigner single mode.
  std::vector<std::size_t> modes;
  std::optional<FactorRecipe> reference_state;  ///< fidelity against a fixed state
  Quadrature quadrature = Quadrature::X;
  std::optional<double> phase;  ///< quadrature phase; unset uses params.phi
  std::vector<std::vector<int>> labels;  ///< population
  int level = 0;
  std::vector<double> times;  ///< wigner snapshot times
  bool at_t2 = false;         ///< wigner snapshot at the detected t2
  WignerSpec grid;

  bool is_series() const { return type != Type::Wigner; }
};

struct OutputSpec {
  std::string directory;  ///< empty means results/<name>
};

struct Scenario {
  std::string name;
  std::string description;
  SpaceSpec space;
  SystemParams params;
  StateRecipe initial_state;
  std::vector<HamiltonianTerm> hamiltonian{HamiltonianTerm::Effective};
  bool dissipation = false;
  RunSpec run;
  std::vector<MeasurementSpec> measurements;
  OutputSpec output;

  bool has_term(HamiltonianTerm t) const;
  /// True when the run integrates a density matrix (dissipation on with a
  /// nonzero rate).
  bool density_path() const;
};

/// Fully resolved JSON with every default written out.
json to_json(const Scenario& s);
Scenario scenario_from_json(const json& doc);
Scenario parse_scenario(const std::filesystem::path& path);
bool operator==(const Scenario& a, const Scenario& b);

/// Set `path` ("a.b.c", "a.b[1]") in a JSON document. A scalar assigned to
/// an array of numbers fills every entry.
void set_json_path(json& doc, const std::string& path, const json& value);
/// Parse the right-hand side of key=value: JSON when it parses, else string.
json parse_cli_value(const std::string& text);

// ---------------------------------------------------------------------------
// Results

struct Table {
  using Cell = std::variant<double, std::string>;
  std::vector<std::string> header;
  std::vector<std::vector<Cell>> rows;

  std::size_t column_index(const std::string& name) const;
  std::vector<double> column(const std::string& name) const;
};

struct WignerSnapshot {
  std::string measurement;
  double time = 0.0;
  WignerGrid grid;
};

struct ResultBundle {
  Scenario scenario;
  std::vector<std::pair<std::string, Table>> tables;
  std::vector<WignerSnapshot> wigner;
  EvolutionDiagnostics diagnostics;
  std::optional<double> t2;
  std::optional<QState> final_state;
  json details = json::object();  ///< mode-specific diagnostics for metadata
  double wall_seconds = 0.0;

  const Table& table(const std::string& name) const;
};

/// Error raised by the runner with scenario context prepended.
ResultBundle run(const Scenario& s);
ResultBundle sweep(const Scenario& s);

/// Write CSV tables, Wigner CSVs and metadata.json into `dir` (created if
/// missing). Files are written to a temporary name and renamed.
std::vector<std::filesystem::path> emit(const ResultBundle& bundle, const std::filesystem::path& dir);

/// Directory of the shipped scenario library.
std::filesystem::path scenario_directory();

/// Worker cap from OPTOMECH_THREADS (default hardware concurrency).
unsigned worker_threads();

/// "%.16e" formatting used by every CSV.
std::string format_number(double v);

}  // namespace optomech
