#include "vdprobe/ndgrad/rng.hpp"

#include <cmath>
#include <numbers>
#include <sstream>

#include "vdprobe/error.hpp"

namespace vdprobe {

std::uint64_t Rng::below(std::uint64_t n) {
    if (n == 0) {
        throw ValidationError("Rng::below: empty range");
    }
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t v = eng_();
    while (v >= limit) {
        v = eng_();
    }
    return v % n;
}

double Rng::normal() {
    if (have_spare_) {
        have_spare_ = false;
        return spare_;
    }
    double u1 = uniform();
    while (u1 <= 0.0) {
        u1 = uniform();
    }
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 2.0 * std::numbers::pi * u2;
    spare_ = r * std::sin(a);
    have_spare_ = true;
    return r * std::cos(a);
}

std::vector<float> Rng::normal_vector(std::size_t n, double stddev) {
    std::vector<float> out(n);
    for (auto& v : out) {
        v = static_cast<float>(normal() * stddev);
    }
    return out;
}

std::string Rng::state() const {
    std::ostringstream os;
    os << eng_ << ' ' << (have_spare_ ? 1 : 0) << ' ';
    os.precision(17);
    os << std::hexfloat << spare_;
    return os.str();
}

void Rng::set_state(const std::string& s) {
    std::istringstream is(s);
    int spare_flag = 0;
    std::string spare_text;
    is >> eng_ >> spare_flag >> spare_text;
    if (!is && !is.eof()) {
        throw FormatError("malformed rng state");
    }
    have_spare_ = spare_flag != 0;
    spare_ = std::strtod(spare_text.c_str(), nullptr);
}

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream) {
    std::uint64_t z = base + 0x9E3779B97F4A7C15ULL * (stream + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

}  // namespace vdprobe
