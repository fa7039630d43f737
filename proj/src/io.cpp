#include "pincwell/io.hpp"

#include <json.hpp>

#include <Eigen/Core>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace pincwell {

double Rng::normal() {
    // Box-Muller; draw until the uniform is safely inside (0,1).
    double u1 = uniform01();
    while (u1 <= 1e-300) u1 = uniform01();
    const double u2 = uniform01();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
}

Rng stream_rng(uint64_t seed, uint64_t stream, uint64_t index) {
    Rng mix(seed);
    mix.state ^= mix.next() + 0x632be59bd9b4e019ULL * (stream + 1);
    mix.state ^= mix.next() + 0x9e3779b97f4a7c15ULL * (index + 1);
    mix.next();
    return mix;
}

void atomic_write_file(const std::string& path, const std::string& content) {
    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw std::runtime_error("cannot open for write: " + tmp);
        out << content;
        if (!out.good()) throw std::runtime_error("write failed: " + tmp);
    }
    if (std::rename(tmp.c_str(), path.c_str()) != 0)
        throw std::runtime_error("rename failed: " + path);
}

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open: " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    // prefer the shorter form when it round-trips
    for (int prec = 1; prec < 17; ++prec) {
        char s[40];
        std::snprintf(s, sizeof s, "%.*g", prec, v);
        if (std::strtod(s, nullptr) == v) return s;
    }
    return buf;
}

// ===== CSV ===================================================================

CsvWriter::CsvWriter(std::vector<std::string> columns) : n_cols_(columns.size()) {
    for (size_t i = 0; i < columns.size(); ++i) {
        if (i) buf_ += ',';
        buf_ += columns[i];
    }
    buf_ += '\n';
}

void CsvWriter::row(const std::vector<double>& values) {
    if (values.size() != n_cols_) throw std::invalid_argument("CsvWriter: column count mismatch");
    for (size_t i = 0; i < values.size(); ++i) {
        if (i) buf_ += ',';
        buf_ += format_double(values[i]);
    }
    buf_ += '\n';
}

void CsvWriter::raw_row(const std::string& line) {
    buf_ += line;
    buf_ += '\n';
}

void CsvWriter::save(const std::string& path) const { atomic_write_file(path, buf_); }

int CsvData::column(const std::string& name) const {
    for (size_t i = 0; i < columns.size(); ++i)
        if (columns[i] == name) return static_cast<int>(i);
    return -1;
}

CsvData read_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open csv: " + path);
    CsvData data;
    std::string line;
    if (!std::getline(in, line)) throw std::invalid_argument("empty csv: " + path);
    {
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) data.columns.push_back(cell);
    }
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::vector<double> row;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) row.push_back(std::strtod(cell.c_str(), nullptr));
        if (row.size() != data.columns.size())
            throw std::invalid_argument("ragged csv row in " + path);
        data.rows.push_back(std::move(row));
    }
    return data;
}

// ===== Manifests =============================================================

void write_manifest(const std::string& path, const std::string& command,
                    const std::string& config_json, uint64_t seed) {
    nlohmann::json m;
    m["command"] = command;
    m["seed"] = seed;
    m["config"] = config_json.empty() ? nlohmann::json::object()
                                      : nlohmann::json::parse(config_json);
    m["versions"]["toolkit"] = "0.1.0";
    m["versions"]["compiler"] = __VERSION__;
    m["versions"]["eigen"] = std::to_string(EIGEN_WORLD_VERSION) + "." +
                             std::to_string(EIGEN_MAJOR_VERSION) + "." +
                             std::to_string(EIGEN_MINOR_VERSION);
    atomic_write_file(path, m.dump(2) + "\n");
}

}  // namespace pincwell
