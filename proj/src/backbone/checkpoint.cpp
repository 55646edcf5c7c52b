#include "vdprobe/backbone/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "vdprobe/error.hpp"

namespace vdprobe {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes little-endian");

namespace {

constexpr char kMagic[4] = {'L', 'P', 'R', 'B'};

template <class T>
void put(std::string& out, T v) {
    char buf[sizeof(T)];
    std::memcpy(buf, &v, sizeof(T));
    out.append(buf, sizeof(T));
}

class Reader {
 public:
    Reader(const std::string& bytes, const std::string& path) : b_(bytes), path_(path) {}

    template <class T>
    T get() {
        need(sizeof(T));
        T v;
        std::memcpy(&v, b_.data() + pos_, sizeof(T));
        pos_ += sizeof(T);
        return v;
    }
    std::string bytes(std::size_t n) {
        need(n);
        std::string s = b_.substr(pos_, n);
        pos_ += n;
        return s;
    }
    bool done() const { return pos_ == b_.size(); }

 private:
    void need(std::size_t n) const {
        if (pos_ + n > b_.size()) {
            throw FormatError(path_ + ": truncated checkpoint");
        }
    }
    const std::string& b_;
    const std::string& path_;
    std::size_t pos_ = 0;
};

}  // namespace

const nd::Tensor& TensorFile::get(const std::string& name) const {
    for (const auto& [n, t] : tensors) {
        if (n == name) {
            return t;
        }
    }
    throw FormatError("checkpoint has no tensor '" + name + "'");
}

bool TensorFile::has(const std::string& name) const {
    for (const auto& [n, t] : tensors) {
        if (n == name) {
            return true;
        }
    }
    return false;
}

std::string format_key_values(const KeyValues& kv) {
    std::string out;
    for (const auto& [k, v] : kv) {
        if (k.find_first_of("=\n") != std::string::npos || v.find('\n') != std::string::npos) {
            throw ValidationError("key=value entry '" + k + "' contains a separator");
        }
        out += k + "=" + v + "\n";
    }
    return out;
}

KeyValues parse_key_values(const std::string& text, const std::string& origin) {
    KeyValues kv;
    std::istringstream is(text);
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        const auto first = line.find_first_not_of(" \t");
        if (first == std::string::npos || line[first] == '#') {
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw ValidationError(origin + ":" + std::to_string(lineno) + ": expected key=value");
        }
        auto trim = [](std::string s) {
            const auto b = s.find_first_not_of(" \t");
            const auto e = s.find_last_not_of(" \t");
            return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
        };
        kv[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
    }
    return kv;
}

void write_tensor_file(const std::string& path, const NamedTensors& tensors, const KeyValues& config) {
    std::string out(kMagic, 4);
    put<std::uint32_t>(out, kCheckpointVersion);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(tensors.size()));
    for (const auto& [name, t] : tensors) {
        if (name.size() > 0xFFFF) {
            throw ValidationError("tensor name too long: " + name.substr(0, 40));
        }
        put<std::uint16_t>(out, static_cast<std::uint16_t>(name.size()));
        out += name;
        put<std::uint8_t>(out, static_cast<std::uint8_t>(t.rank()));
        for (auto d : t.shape()) {
            put<std::uint32_t>(out, static_cast<std::uint32_t>(d));
        }
        const auto values = t.to_f32();
        out.append(reinterpret_cast<const char*>(values.data()), values.size() * sizeof(float));
    }
    const std::string cfg = format_key_values(config);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(cfg.size()));
    out += cfg;

    const std::string tmp = path + ".tmp";
    {
        std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
        if (!f) {
            throw IoError("cannot open " + tmp + " for writing");
        }
        f.write(out.data(), static_cast<std::streamsize>(out.size()));
        if (!f) {
            throw IoError("write failed: " + tmp);
        }
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) {
        throw IoError("rename " + tmp + " -> " + path + ": " + ec.message());
    }
}

TensorFile read_tensor_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) {
        throw IoError("cannot open " + path);
    }
    std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    Reader r(bytes, path);
    if (bytes.size() < 4 || std::memcmp(bytes.data(), kMagic, 4) != 0) {
        throw FormatError(path + ": bad magic, not a checkpoint");
    }
    r.bytes(4);
    const auto version = r.get<std::uint32_t>();
    if (version != kCheckpointVersion) {
        throw FormatError(path + ": checkpoint version " + std::to_string(version) + ", expected " +
                          std::to_string(kCheckpointVersion));
    }
    TensorFile tf;
    const auto count = r.get<std::uint32_t>();
    for (std::uint32_t i = 0; i < count; ++i) {
        const auto name_len = r.get<std::uint16_t>();
        std::string name = r.bytes(name_len);
        const auto rank = r.get<std::uint8_t>();
        nd::Shape shape;
        for (int d = 0; d < rank; ++d) {
            shape.push_back(r.get<std::uint32_t>());
        }
        const auto n = static_cast<std::size_t>(nd::numel_of(shape));
        std::string raw = r.bytes(n * sizeof(float));
        std::vector<float> values(n);
        std::memcpy(values.data(), raw.data(), raw.size());
        tf.tensors.emplace_back(std::move(name), nd::Tensor::from_vector(std::move(shape), std::move(values)));
    }
    const auto cfg_len = r.get<std::uint32_t>();
    tf.config = parse_key_values(r.bytes(cfg_len), path);
    if (!r.done()) {
        throw FormatError(path + ": trailing bytes after config block");
    }
    return tf;
}

}  // namespace vdprobe
