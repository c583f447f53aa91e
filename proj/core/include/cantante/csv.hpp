#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace cantante {

/// RFC-4180 style escaping: fields containing comma, quote or newline are
/// quoted, embedded quotes doubled.
std::string csv_escape(const std::string& field);

void write_csv_row(std::ostream& os, const std::vector<std::string>& fields);

/// Parses quoted CSV. Returns one vector per row, header included.
std::vector<std::vector<std::string>> read_csv(std::istream& is);
std::vector<std::vector<std::string>> read_csv_file(const std::string& path);

/// Shortest round-trip representation via std::to_chars; deterministic and
/// locale-independent, used for every number written to a run directory.
std::string format_double(double v);
std::string format_int(long long v);

double parse_double(const std::string& s);
long long parse_int(const std::string& s);

}  // namespace cantante
