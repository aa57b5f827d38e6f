#pragma once

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "result.hpp"

namespace fk {

// Lightweight minimality audit: counts lines per module and scans the
// de-privileged service sources for calls that belong to the privileged
// framework only. A clean service tree has zero findings.

struct ScanFinding {
  std::string file;
  std::size_t line = 0;
  std::size_t column = 0;
  std::string marker;
};

struct ModuleLines {
  std::string name;
  std::size_t lines = 0;
  bool privileged = true;
};

struct ScanReport {
  std::vector<ModuleLines> modules;
  std::vector<ScanFinding> findings;

  std::size_t privileged_lines() const {
    std::size_t n = 0;
    for (const auto& m : modules) {
      if (m.privileged) n += m.lines;
    }
    return n;
  }

  std::size_t service_lines() const {
    std::size_t n = 0;
    for (const auto& m : modules) {
      if (!m.privileged) n += m.lines;
    }
    return n;
  }

  double privileged_ratio() const {
    std::size_t total = privileged_lines() + service_lines();
    return total == 0 ? 0.0 : static_cast<double>(privileged_lines()) / total;
  }

  std::string to_string() const {
    std::ostringstream out;
    out << "module lines:\n";
    for (const auto& m : modules) {
      out << "  " << (m.privileged ? "[priv] " : "[serv] ") << m.name << " " << m.lines << "\n";
    }
    out << "privileged " << privileged_lines() << " / total "
        << privileged_lines() + service_lines() << " = " << privileged_ratio() << "\n";
    for (const auto& f : findings) {
      out << "FORBIDDEN " << f.marker << " at " << f.file << ":" << f.line << ":" << f.column
          << "\n";
    }
    out << "findings: " << findings.size() << "\n";
    return out.str();
  }
};

// Entry points reserved to the privileged framework: raw store access,
// metadata forcing, safety-check toggles, bootstrap and wiring.
inline std::vector<std::string> default_privileged_markers() {
  return {
      "fk::detail",     "raw_store_read", "raw_store_write", "raw_store_view",
      "raw_store_restore", "restore_meta", "meta_transition", "claim_frame",
      "dup_frame",      "release_frame",  "set_checks",      "mem_init",
      "io_label",       "seal_labels",    "wire_device",     "authorize_device",
      "device_poke",    "raw_flags_word",
  };
}

namespace detail {

// Strips // and /* */ comments well enough for marker scanning; string
// literals are not parsed (markers never appear in legitimate literals).
inline std::string strip_comments(const std::string& text) {
  std::string out;
  out.reserve(text.size());
  bool in_block = false;
  bool in_line = false;
  for (std::size_t i = 0; i < text.size(); ++i) {
    if (in_block) {
      if (text[i] == '*' && i + 1 < text.size() && text[i + 1] == '/') {
        in_block = false;
        ++i;
      } else if (text[i] == '\n') {
        out.push_back('\n');
      }
      continue;
    }
    if (in_line) {
      if (text[i] == '\n') {
        in_line = false;
        out.push_back('\n');
      }
      continue;
    }
    if (text[i] == '/' && i + 1 < text.size() && text[i + 1] == '*') {
      in_block = true;
      ++i;
      continue;
    }
    if (text[i] == '/' && i + 1 < text.size() && text[i + 1] == '/') {
      in_line = true;
      continue;
    }
    out.push_back(text[i]);
  }
  return out;
}

inline std::size_t count_lines(const std::string& text) {
  std::size_t lines = 0;
  for (char c : text) {
    if (c == '\n') ++lines;
  }
  if (!text.empty() && text.back() != '\n') ++lines;
  return lines;
}

}  // namespace detail

// Scans `include_root` (the fk/ include tree): headers directly under it
// are the privileged framework, headers under services/ are de-privileged.
// Findings are reported for service files only.
inline Result<ScanReport> tcb_scan(
    const std::filesystem::path& include_root,
    const std::vector<std::string>& markers = default_privileged_markers()) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(include_root)) {
    return Error{Errc::parse_error, "no such directory: " + include_root.string()};
  }
  ScanReport report;

  auto scan_file = [&](const fs::path& path, bool privileged) {
    std::ifstream in(path);
    std::stringstream buf;
    buf << in.rdbuf();
    std::string text = buf.str();
    report.modules.push_back(
        ModuleLines{path.filename().string(), detail::count_lines(text), privileged});
    if (privileged) return;
    std::string code = detail::strip_comments(text);
    std::size_t line = 1, col = 1;
    for (std::size_t i = 0; i < code.size(); ++i) {
      for (const std::string& m : markers) {
        if (code.compare(i, m.size(), m) == 0) {
          report.findings.push_back(ScanFinding{path.string(), line, col, m});
        }
      }
      if (code[i] == '\n') {
        ++line;
        col = 1;
      } else {
        ++col;
      }
    }
  };

  std::vector<fs::path> priv_files, serv_files;
  for (const auto& entry : fs::directory_iterator(include_root)) {
    if (entry.is_regular_file() && entry.path().extension() == ".hpp") {
      priv_files.push_back(entry.path());
    }
  }
  fs::path services = include_root / "services";
  if (fs::is_directory(services)) {
    for (const auto& entry : fs::directory_iterator(services)) {
      if (entry.is_regular_file() && entry.path().extension() == ".hpp") {
        serv_files.push_back(entry.path());
      }
    }
  }
  std::sort(priv_files.begin(), priv_files.end());
  std::sort(serv_files.begin(), serv_files.end());
  for (const auto& p : priv_files) scan_file(p, true);
  for (const auto& p : serv_files) scan_file(p, false);
  return report;
}

}  // namespace fk
