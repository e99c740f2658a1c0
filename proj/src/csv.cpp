#include "dkf/csv.hpp"

#include <charconv>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace dkf::csv {

void header(std::ostream& os, const std::string& schema, const std::vector<std::string>& columns) {
    os << "# dkf-csv v" << kSchemaVersion << ' ' << schema << '\n';
    for (std::size_t i = 0; i < columns.size(); ++i) os << (i ? "," : "") << columns[i];
    os << '\n';
}

void indexed(std::vector<std::string>& columns, const std::string& name, Eigen::Index n) {
    for (Eigen::Index i = 0; i < n; ++i) columns.push_back(name + "[" + std::to_string(i) + "]");
}

std::string fmt(double v) {
    // shortest round-trip representation keeps files byte-stable
    char buf[32];
    auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

void row(std::ostream& os, const std::vector<double>& values) {
    for (std::size_t i = 0; i < values.size(); ++i) os << (i ? "," : "") << fmt(values[i]);
    os << '\n';
}

void append(std::vector<double>& dst, const Vector& v) { dst.insert(dst.end(), v.data(), v.data() + v.size()); }

Table read(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path);
    Table t;
    std::string line;
    bool have_header = false;
    while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#') continue;
        std::stringstream ss(line);
        std::string cell;
        if (!have_header) {
            while (std::getline(ss, cell, ',')) t.columns.push_back(cell);
            have_header = true;
            continue;
        }
        std::vector<double> r;
        while (std::getline(ss, cell, ',')) r.push_back(std::stod(cell));
        if (r.size() != t.columns.size()) throw std::runtime_error("ragged row in " + path);
        t.rows.push_back(std::move(r));
    }
    return t;
}

}  // namespace dkf::csv
