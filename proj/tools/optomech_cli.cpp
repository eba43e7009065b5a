#include <algorithm>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "optomech/scenario.hpp"

namespace fs = std::filesystem;
using namespace optomech;

namespace {

enum Exit { kOk = 0, kConfig = 1, kNumeric = 2, kIo = 3 };

int exit_code(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::IntegratorAccuracy:
    case ErrorKind::Convergence:
    case ErrorKind::NumericValidity:
    case ErrorKind::IllPosed:
      return kNumeric;
    case ErrorKind::Io:
      return kIo;
    default:
      return kConfig;
  }
}

fs::path resolve(const std::string& arg) {
  if (fs::exists(arg)) return arg;
  for (const fs::path& candidate : {scenario_directory() / arg, scenario_directory() / (arg + ".json")}) {
    if (fs::exists(candidate)) return candidate;
  }
  throw Error(ErrorKind::Io, "scenario file '" + arg + "' not found");
}

json load(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::Io, "cannot open '" + path.string() + "'");
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw Error(ErrorKind::Config, path.string() + ": malformed JSON: " + e.what());
  }
}

std::pair<std::string, std::string> split_assignment(const std::string& text, const char* flag) {
  const auto eq = text.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw Error(ErrorKind::Config, std::string(flag) + " expects key=value, got '" + text + "'");
  }
  return {text.substr(0, eq), text.substr(eq + 1)};
}

struct RunArgs {
  std::string scenario;
  std::string out;
  std::vector<std::string> sets;
  std::vector<std::string> truncations;
  std::optional<double> tolerance;
};

Scenario load_with_overrides(const RunArgs& a) {
  json doc = load(resolve(a.scenario));
  for (const auto& s : a.sets) {
    auto [key, value] = split_assignment(s, "--set");
    set_json_path(doc, key, parse_cli_value(value));
  }
  for (const auto& t : a.truncations) {
    auto [mode, value] = split_assignment(t, "--truncation");
    if (mode != "cavity1" && mode != "mo" && mode != "cavity2") {
      throw Error(ErrorKind::Config, "--truncation: unknown mode '" + mode + "' (cavity1, mo, cavity2)");
    }
    set_json_path(doc, "space." + mode, parse_cli_value(value));
  }
  if (a.tolerance) {
    const bool sweep = doc.contains("run") && doc["run"].value("mode", "") == "sweep";
    set_json_path(doc, sweep ? "run.inner.rtol" : "run.rtol", *a.tolerance);
  }
  return scenario_from_json(doc);
}

int cmd_run(const RunArgs& a) {
  const Scenario s = load_with_overrides(a);
  const fs::path out = !a.out.empty() ? fs::path(a.out)
                       : !s.output.directory.empty() ? fs::path(s.output.directory)
                                                     : fs::path("results") / s.name;
  const ResultBundle b = run(s);
  for (const auto& w : b.diagnostics.warnings) std::cerr << "warning: " << w << "\n";
  for (const auto& p : emit(b, out)) std::cout << p.string() << "\n";
  if (b.t2) std::cout << "t2 = " << format_number(*b.t2) << "\n";
  std::cout << "wall time " << b.wall_seconds << " s\n";
  return kOk;
}

int cmd_validate(const RunArgs& a, bool print) {
  const Scenario s = load_with_overrides(a);
  if (print) {
    std::cout << to_json(s).dump(2) << "\n";
  } else {
    std::cout << "ok: " << s.name << "\n";
  }
  return kOk;
}

int cmd_list() {
  std::vector<fs::path> files;
  std::error_code ec;
  for (const auto& e : fs::directory_iterator(scenario_directory(), ec)) {
    if (e.path().extension() == ".json") files.push_back(e.path());
  }
  if (ec) throw Error(ErrorKind::Io, scenario_directory().string() + ": cannot list directory");
  std::sort(files.begin(), files.end());
  for (const auto& f : files) {
    const json doc = load(f);
    std::cout << f.stem().string() << "\t" << doc.value("description", "") << "\n";
  }
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Driven atom-cavity-mirror network simulator"};
  app.require_subcommand(1);

  RunArgs args;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("scenario", args.scenario, "Scenario file or shipped scenario name")->required();
    sub->add_option("--set", args.sets, "Override a config value, e.g. params.kappa_b=0.01");
    sub->add_option("--truncation", args.truncations, "Override a Fock truncation, e.g. cavity1=10");
    sub->add_option("--tolerance", args.tolerance, "Relative integrator tolerance");
  };

  CLI::App* run_cmd = app.add_subcommand("run", "Run a scenario and write CSV/JSON results");
  add_common(run_cmd);
  run_cmd->add_option("--out", args.out, "Output directory (default results/<name>)");

  bool print = false;
  CLI::App* validate_cmd = app.add_subcommand("validate", "Parse and validate a scenario");
  add_common(validate_cmd);
  validate_cmd->add_flag("--print", print, "Print the fully resolved scenario");

  CLI::App* list_cmd = app.add_subcommand("list-scenarios", "List the shipped scenario library");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfig;
  }

  try {
    if (*run_cmd) return cmd_run(args);
    if (*validate_cmd) return cmd_validate(args, print);
    if (*list_cmd) return cmd_list();
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code(e.kind());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kNumeric;
  }
  return kOk;
}
