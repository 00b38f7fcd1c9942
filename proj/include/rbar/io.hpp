#pragma once

// CSV formats for lineages, trees, truth side-channels and experiment output.

#include "rbar/harness.hpp"
#include "rbar/simulator.hpp"

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

namespace rbar {

/// Malformed input file.
class FormatError : public ValidationError {
 public:
  FormatError(const std::string& source, std::size_t line, const std::string& what)
      : ValidationError(source + ":" + std::to_string(line) + ": " + what), line_(line) {}
  [[nodiscard]] std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

namespace detail {

inline std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline std::vector<std::string_view> split_fields(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto comma = line.find(',', start);
    out.push_back(trim(line.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start)));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

inline CellIndex parse_index(std::string_view f, const std::string& source, std::size_t line) {
  if (f.empty() || f.find_first_not_of("0123456789") != std::string_view::npos)
    throw FormatError(source, line, "index '" + std::string(f) + "' is not a positive integer");
  if (f.size() > 19) throw FormatError(source, line, "index '" + std::string(f) + "' is too large");
  const CellIndex k = std::stoull(std::string(f));
  if (k == 0) throw FormatError(source, line, "index 0 is not a valid heap label (the root is 1)");
  if (generation_of(k) > max_supported_generation)
    throw FormatError(source, line, "index " + std::to_string(k) + " lies beyond the supported depth");
  return k;
}

inline double parse_real(std::string_view f, const std::string& source, std::size_t line,
                         const char* what) {
  const std::string s(f);
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(s, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (s.empty() || used != s.size() || !std::isfinite(v))
    throw FormatError(source, line, std::string(what) + " '" + s + "' is not a finite number");
  return v;
}

/// Reads the rows of a CSV file with a fixed header; calls f(fields, line).
template <typename F>
void scan_csv(std::istream& in, const std::string& source, const std::vector<std::string>& header, F&& f) {
  std::string raw;
  std::size_t line = 0;
  bool seen_header = false;
  while (std::getline(in, raw)) {
    ++line;
    const auto t = trim(raw);
    if (t.empty() || t.front() == '#') continue;
    const auto fields = split_fields(t);
    if (!seen_header) {
      bool match = fields.size() == header.size();
      for (std::size_t i = 0; match && i < header.size(); ++i) match = fields[i] == header[i];
      if (!match) {
        std::string want;
        for (const auto& h : header) want += (want.empty() ? "" : ",") + h;
        throw FormatError(source, line, "expected header '" + want + "'");
      }
      seen_header = true;
      continue;
    }
    if (fields.size() != header.size())
      throw FormatError(source, line,
                        "expected " + std::to_string(header.size()) + " fields, got " + std::to_string(fields.size()));
    f(fields, line);
  }
  if (!seen_header) throw FormatError(source, line, "file is empty");
}

/// Orders cells and checks duplicates and upward closure, citing source lines.
inline std::vector<std::pair<CellIndex, std::size_t>> check_cells(std::vector<std::pair<CellIndex, std::size_t>> cells,
                                                                  const std::string& source) {
  if (cells.empty()) throw FormatError(source, 1, "no data rows");
  std::sort(cells.begin(), cells.end());
  for (std::size_t i = 1; i < cells.size(); ++i)
    if (cells[i].first == cells[i - 1].first)
      throw FormatError(source, cells[i].second,
                        "cell " + std::to_string(cells[i].first) + " already listed on line " +
                            std::to_string(cells[i - 1].second));
  if (cells.front().first != 1) throw FormatError(source, cells.front().second, "root cell 1 is missing");
  for (const auto& [k, line] : cells) {
    if (k == 1) continue;
    const auto it = std::lower_bound(cells.begin(), cells.end(), std::pair<CellIndex, std::size_t>{mother_of(k), 0});
    if (it == cells.end() || it->first != mother_of(k))
      throw FormatError(source, line,
                        "orphan cell " + std::to_string(k) + ": mother " + std::to_string(mother_of(k)) +
                            " is not observed (observed set must be closed upward)");
  }
  return cells;
}

inline std::string format_real(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace detail

/// Lineage CSV with header `index,value`.
inline LineageTree parse_lineage_csv(std::istream& in, const std::string& source = "<input>") {
  std::vector<std::pair<CellIndex, std::size_t>> cells;
  std::map<CellIndex, double> values;
  detail::scan_csv(in, source, {"index", "value"}, [&](const auto& f, std::size_t line) {
    const CellIndex k = detail::parse_index(f[0], source, line);
    const double v = detail::parse_real(f[1], source, line, "value");
    cells.emplace_back(k, line);
    values.emplace(k, v);
  });
  cells = detail::check_cells(std::move(cells), source);
  std::vector<std::pair<CellIndex, double>> records;
  records.reserve(cells.size());
  for (const auto& [k, line] : cells) records.emplace_back(k, values.at(k));
  return LineageTree::from_records(std::move(records));
}

inline LineageTree read_lineage_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open lineage file " + path.string());
  return parse_lineage_csv(in, path.string());
}

inline std::string lineage_csv(const LineageTree& lineage) {
  std::string out = "index,value\n";
  const auto cells = lineage.tree().observed();
  for (std::size_t i = 0; i < cells.size(); ++i)
    out += std::to_string(cells[i]) + "," + detail::format_real(lineage.value_at(i)) + "\n";
  return out;
}

/// Tree CSV with header `index`.
inline ObservationTree parse_tree_csv(std::istream& in, const std::string& source = "<input>") {
  std::vector<std::pair<CellIndex, std::size_t>> cells;
  detail::scan_csv(in, source, {"index"}, [&](const auto& f, std::size_t line) {
    cells.emplace_back(detail::parse_index(f[0], source, line), line);
  });
  cells = detail::check_cells(std::move(cells), source);
  std::vector<CellIndex> idx;
  int gmax = 0;
  for (const auto& [k, line] : cells) {
    idx.push_back(k);
    gmax = std::max(gmax, generation_of(k));
  }
  return ObservationTree::from_indices(std::move(idx), gmax);
}

inline std::string tree_csv(const ObservationTree& tree) {
  std::string out = "index\n";
  for (CellIndex k : tree.observed()) out += std::to_string(k) + "\n";
  return out;
}

/// Truth CSV `index,eps,eta`; the root has no row.
inline std::string truth_csv(const LineageTree& lineage) {
  std::string out = "index,eps,eta\n";
  const auto cells = lineage.tree().observed();
  const auto truth = lineage.truth();
  for (std::size_t i = 1; i < cells.size(); ++i)
    out += std::to_string(cells[i]) + "," + detail::format_real(truth[i].eps) + "," +
           detail::format_real(truth[i].eta) + "\n";
  return out;
}

/// FNV-1a, 64 bit.
inline std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

/// Writes every file or none: contents go to temporaries first, then are renamed.
inline void write_files(const std::vector<std::pair<std::filesystem::path, std::string>>& files) {
  std::vector<std::filesystem::path> temps;
  auto cleanup = [&] {
    std::error_code ec;
    for (const auto& t : temps) std::filesystem::remove(t, ec);
  };
  for (const auto& [path, content] : files) {
    auto tmp = path;
    tmp += ".partial";
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) {
      cleanup();
      throw ValidationError("cannot write " + path.string());
    }
    temps.push_back(tmp);
    out << content;
    out.close();
    if (!out) {
      cleanup();
      throw ValidationError("failed writing " + path.string());
    }
  }
  for (std::size_t i = 0; i < files.size(); ++i) std::filesystem::rename(temps[i], files[i].first);
}

/// One row per replicate, preceded by a replicate column.
inline std::string experiment_rows_csv(const ExperimentResult& res) {
  std::string out = "replicate";
  for (const auto& c : res.columns) out += "," + c;
  out += "\n";
  for (std::size_t r = 0; r < res.rows.size(); ++r) {
    out += std::to_string(r);
    for (double v : res.rows[r]) out += "," + (std::isfinite(v) ? detail::format_real(v) : std::string("nan"));
    out += "\n";
  }
  return out;
}

inline std::string experiment_verdicts_csv(const ExperimentResult& res) {
  std::string out = "name,status,value,lo,hi,sample_size,detail\n";
  for (const auto& v : res.verdicts) {
    std::string detail = v.detail;
    std::replace(detail.begin(), detail.end(), ',', ';');
    out += v.name + "," + (v.inconclusive ? "INCONCLUSIVE" : v.pass ? "PASS" : "FAIL") + "," +
           detail::format_real(v.value) + "," + detail::format_real(v.lo) + "," + detail::format_real(v.hi) + "," +
           std::to_string(v.sample_size) + "," + detail + "\n";
  }
  return out;
}

inline std::string experiment_aggregates_csv(const ExperimentResult& res) {
  std::string out = "key,value\n";
  out += "replicates," + std::to_string(res.replicates) + "\n";
  out += "survivors," + std::to_string(res.survivors) + "\n";
  for (const auto& [k, v] : res.aggregates) out += k + "," + detail::format_real(v) + "\n";
  return out;
}

}  // namespace rbar
