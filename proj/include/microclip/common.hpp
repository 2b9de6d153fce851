#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace microclip {

// Error taxonomy, mapped onto CLI exit codes (2/3/4).
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct DataError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct NumericalError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct ShapeError : DataError {
    using DataError::DataError;
};

// splitmix64 step; the basis of all derived-seed schemes in the project.
uint64_t splitmix64(uint64_t& state);

// Hash an arbitrary byte string (FNV-1a 64).
uint64_t fnv1a64(const void* data, size_t len);
uint64_t fnv1a64(const std::string& s);

// Derive an independent stream seed from (root seed, tag, index).
// Deterministic, order-free: record k's stream does not depend on k-1.
uint64_t derive_seed(uint64_t root, const std::string& tag, uint64_t index = 0);

// Deterministic uniform helpers over a splitmix64 stream.
class Rng {
  public:
    explicit Rng(uint64_t seed) : state_(seed) {}

    uint64_t next_u64() { return splitmix64(state_); }
    // Unbiased integer in [0, bound) via rejection.
    uint64_t next_below(uint64_t bound);
    // Double in [0, 1) with 53-bit resolution.
    double next_double();
    double next_range(double lo, double hi) { return lo + (hi - lo) * next_double(); }
    int next_int(int lo, int hi_inclusive);  // uniform over [lo, hi]
    // Standard normal via Box-Muller (two uniforms per pair, cached spare).
    double next_normal();

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (size_t i = v.size(); i > 1; --i) {
            size_t j = static_cast<size_t>(next_below(i));
            std::swap(v[i - 1], v[j]);
        }
    }

  private:
    uint64_t state_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

// Shortest-round-trip-ish decimal formatting used for every CSV/JSON double
// we emit, so that repeated runs produce identical bytes.
std::string format_double(double v);

std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, const std::string& content);
std::vector<uint8_t> read_binary_file(const std::string& path);
void write_binary_file(const std::string& path, const std::vector<uint8_t>& bytes);
bool file_exists(const std::string& path);
void ensure_dir(const std::string& path);

std::string to_hex(uint64_t v);

}  // namespace microclip
