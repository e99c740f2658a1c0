#pragma once

#include "dkf/numkit.hpp"

#include <iosfwd>
#include <string>
#include <vector>

namespace dkf::csv {

inline constexpr int kSchemaVersion = 1;

// First line of every emitted CSV: "# dkf-csv v1 <schema>", then the column header.
void header(std::ostream& os, const std::string& schema, const std::vector<std::string>& columns);
// Expands "name" into name[0] .. name[n-1].
void indexed(std::vector<std::string>& columns, const std::string& name, Eigen::Index n);
void row(std::ostream& os, const std::vector<double>& values);
void append(std::vector<double>& dst, const Vector& v);
std::string fmt(double v);

struct Table {
    std::vector<std::string> columns;
    std::vector<std::vector<double>> rows;
};
// Reads a file written by header()/row(); comment lines are skipped.
Table read(const std::string& path);

}  // namespace dkf::csv
