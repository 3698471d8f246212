#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"

namespace neuron_lab {

// Shortest round-trip form is not required; 17 significant digits always
// round-trip a double.
std::string format_double(double x);

// RFC 4180 field quoting.
std::string csv_field(const std::string& s);

// Renders a JSON scalar as a CSV field (numbers with 17 significant digits).
std::string csv_value(const nlohmann::json& v);

// Rows of ordered JSON objects sharing the same keys; the first row fixes
// the header. Line endings are CRLF as RFC 4180 specifies.
std::string to_csv(const std::vector<nlohmann::ordered_json>& rows);

struct CsvTable {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;
    // Index of a column, or -1.
    int column(const std::string& name) const;
};
CsvTable parse_csv(const std::string& text);

std::string read_file(const std::filesystem::path& p);
void write_file(const std::filesystem::path& p, const std::string& content);

}  // namespace neuron_lab
