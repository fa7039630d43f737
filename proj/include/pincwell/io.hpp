#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace pincwell {

// ===== Deterministic RNG =====================================================
//
// splitmix64 streams. Derivation by (seed, stream, index) lets samplers draw
// "the i-th candidate of split s" independently of evaluation order, which
// keeps datasets reproducible under chunked or parallel generation.

struct Rng {
    uint64_t state = 0x9e3779b97f4a7c15ULL;

    Rng() = default;
    explicit Rng(uint64_t seed) : state(seed) {}

    uint64_t next() {
        uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    /// Uniform in [0, 1).
    double uniform01() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

    /// Standard normal (Box-Muller; one value per call, no caching).
    double normal();
};

/// Stream derived from (seed, stream id, index): deterministic and
/// order-independent.
Rng stream_rng(uint64_t seed, uint64_t stream, uint64_t index);

// ===== File helpers ==========================================================

/// Writes content to path via a temp file + rename so readers never observe a
/// partial file.
void atomic_write_file(const std::string& path, const std::string& content);

std::string read_file(const std::string& path);

/// Shortest round-trip decimal representation of a double.
std::string format_double(double v);

// ===== CSV ===================================================================

/// Minimal CSV accumulator; save() writes atomically.
class CsvWriter {
public:
    explicit CsvWriter(std::vector<std::string> columns);

    void row(const std::vector<double>& values);
    void raw_row(const std::string& line);
    void save(const std::string& path) const;
    const std::string& content() const { return buf_; }

private:
    std::string buf_;
    size_t n_cols_ = 0;
};

/// Reads a numeric CSV with a header row; returns column names and row-major
/// values. Throws std::invalid_argument on ragged rows.
struct CsvData {
    std::vector<std::string> columns;
    std::vector<std::vector<double>> rows;

    int column(const std::string& name) const;  // -1 if absent
};

CsvData read_csv(const std::string& path);

// ===== Run manifests =========================================================

/// Writes a JSON manifest (command, config echo, seed, tool/library versions)
/// next to a command's outputs. Atomic.
void write_manifest(const std::string& path, const std::string& command,
                    const std::string& config_json, uint64_t seed);

}  // namespace pincwell
