#include <cerrno>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <ctime>
#include <fstream>
#include <sstream>

#include "optomech/scenario.hpp"

namespace optomech {

namespace fs = std::filesystem;

namespace {

[[noreturn]] void io_error(const fs::path& path, const std::string& what) {
  throw Error(ErrorKind::Io, path.string() + ": " + what);
}

void write_atomically(const fs::path& path, const std::string& content) {
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) io_error(tmp, std::strerror(errno));
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    out.flush();
    if (!out) io_error(tmp, "write failed");
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) {
    fs::remove(tmp, ec);
    io_error(path, "rename failed");
  }
}

std::string cell_text(const Table::Cell& c) {
  if (const double* v = std::get_if<double>(&c)) return format_number(*v);
  return std::get<std::string>(c);
}

std::string csv(const Table& t) {
  std::string out;
  for (std::size_t i = 0; i < t.header.size(); ++i) out += (i ? "," : "") + t.header[i];
  out += '\n';
  for (const auto& row : t.rows) {
    for (std::size_t i = 0; i < row.size(); ++i) out += (i ? "," : "") + cell_text(row[i]);
    out += '\n';
  }
  return out;
}

std::string wigner_csv(const WignerGrid& g) {
  std::string out = "x,p,W\n";
  for (std::size_t ix = 0; ix < g.x.size(); ++ix) {
    for (std::size_t ip = 0; ip < g.p.size(); ++ip) {
      out += format_number(g.x[ix]) + ',' + format_number(g.p[ip]) + ',' +
             format_number(g.values(static_cast<Index>(ix), static_cast<Index>(ip))) + '\n';
    }
  }
  return out;
}

std::string timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

json finite_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

}  // namespace

std::string format_number(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.16e", v);
  return buf;
}

std::vector<fs::path> emit(const ResultBundle& bundle, const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) io_error(dir, "cannot create output directory");

  std::vector<fs::path> written;
  json files = json::array();
  for (const auto& [name, table] : bundle.tables) {
    const fs::path p = dir / (name + ".csv");
    write_atomically(p, csv(table));
    written.push_back(p);
    files.push_back(p.filename().string());
  }
  json snapshots = json::array();
  for (std::size_t i = 0; i < bundle.wigner.size(); ++i) {
    const auto& w = bundle.wigner[i];
    const fs::path p = dir / ("wigner_" + w.measurement + "_" + std::to_string(i) + ".csv");
    write_atomically(p, wigner_csv(w.grid));
    written.push_back(p);
    files.push_back(p.filename().string());
    snapshots.push_back({{"file", p.filename().string()},
                         {"measurement", w.measurement},
                         {"time", w.time},
                         {"max", w.grid.max()},
                         {"min", w.grid.min()},
                         {"integral", w.grid.integral()}});
  }

  const auto& d = bundle.diagnostics;
  json meta{{"config", to_json(bundle.scenario)},
            {"t2", bundle.t2 ? json(*bundle.t2) : json(nullptr)},
            {"diagnostics",
             {{"max_norm_drift", d.max_norm_drift},
              {"max_asymmetry", d.max_asymmetry},
              {"min_eigenvalue", finite_or_null(d.min_eigenvalue)},
              {"accepted_steps", d.accepted_steps},
              {"rejected_steps", d.rejected_steps},
              {"rhs_calls", d.rhs_calls},
              {"warnings", d.warnings}}},
            {"details", bundle.details},
            {"wigner", snapshots},
            {"files", files},
            {"wall_seconds", bundle.wall_seconds},
            {"timestamp", timestamp()}};
  const fs::path p = dir / "metadata.json";
  write_atomically(p, meta.dump(2) + "\n");
  written.push_back(p);
  return written;
}

}  // namespace optomech
