#pragma once

#include <filesystem>
#include <string>
#include <vector>

namespace odeplan {

// Shortest round-trippable decimal form (locale-independent).
std::string format_double(double v);

// Numeric table with a one-line header.
struct CsvTable {
  std::vector<std::string> columns;
  std::vector<std::vector<double>> rows;

  void require_columns(std::initializer_list<const char*> names) const;
  int column(const std::string& name) const;  // -1 if absent
};

void write_csv(const std::filesystem::path& path, const CsvTable& table);
CsvTable read_csv(const std::filesystem::path& path);

// Plain text file helpers (used for the key=value summary).
void write_text(const std::filesystem::path& path, const std::string& content);
std::string read_text(const std::filesystem::path& path);

}  // namespace odeplan
