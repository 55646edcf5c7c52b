#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

namespace vdprobe {

// Seeded generator with a platform-independent uniform/normal mapping (the
// std distributions are implementation-defined, which breaks reproducibility).
class Rng {
 public:
    explicit Rng(std::uint64_t seed = 0) : eng_(seed) {}

    std::uint64_t next_u64() { return eng_(); }
    // Uniform in [0, 1).
    double uniform() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
    // Uniform integer in [0, n).
    std::uint64_t below(std::uint64_t n);
    double normal();
    std::vector<float> normal_vector(std::size_t n, double stddev = 1.0);

    // Serialized engine state, for bitwise training resume.
    std::string state() const;
    void set_state(const std::string& s);

 private:
    std::mt19937_64 eng_;
    bool have_spare_ = false;
    double spare_ = 0.0;
};

// Decorrelated child seed.
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream);

}  // namespace vdprobe
