#include "vdprobe/synthworld/dataset.hpp"

#include <openssl/sha.h>
#include <zlib.h>

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "vdprobe/error.hpp"

namespace vdprobe::synth {

namespace fs = std::filesystem;

namespace {

constexpr char kSampleMagic[4] = {'L', 'P', 'S', 'M'};

template <class T>
void put(std::string& out, T v) {
    char buf[sizeof(T)];
    std::memcpy(buf, &v, sizeof(T));
    out.append(buf, sizeof(T));
}

template <class T>
void put_section(std::string& out, const char (&tag)[5], const std::vector<T>& data) {
    out.append(tag, 4);
    put<std::uint64_t>(out, data.size() * sizeof(T));
    out.append(reinterpret_cast<const char*>(data.data()), data.size() * sizeof(T));
}

class Cursor {
 public:
    Cursor(const std::string& b, std::size_t end, const std::string& name) : b_(b), end_(end), name_(name) {}
    template <class T>
    T get() {
        need(sizeof(T));
        T v;
        std::memcpy(&v, b_.data() + pos_, sizeof(T));
        pos_ += sizeof(T);
        return v;
    }
    template <class T>
    std::vector<T> section(const char* tag, std::size_t expect_count) {
        need(4);
        if (std::memcmp(b_.data() + pos_, tag, 4) != 0) {
            throw FormatError(name_ + ": expected section " + std::string(tag, 4));
        }
        pos_ += 4;
        const auto len = get<std::uint64_t>();
        if (len != expect_count * sizeof(T)) {
            throw FormatError(name_ + ": section " + std::string(tag, 4) + " has " + std::to_string(len) +
                              " bytes, expected " + std::to_string(expect_count * sizeof(T)));
        }
        need(len);
        std::vector<T> v(expect_count);
        std::memcpy(v.data(), b_.data() + pos_, len);
        pos_ += len;
        return v;
    }
    bool done() const { return pos_ == end_; }

 private:
    void need(std::size_t n) const {
        if (pos_ + n > end_) throw FormatError(name_ + ": truncated sample");
    }
    const std::string& b_;
    std::size_t end_;
    const std::string& name_;
    std::size_t pos_ = 0;
};

std::string read_file(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    if (!f) throw IoError("cannot open " + p.string());
    return std::string((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
}

void write_file(const fs::path& p, const std::string& bytes) {
    std::ofstream f(p, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot open " + p.string() + " for writing");
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw IoError("write failed: " + p.string());
}

std::string join_actions(const std::vector<Action>& v) {
    std::string s;
    for (auto a : v) s += (s.empty() ? "" : ",") + action_name(a);
    return s;
}

std::string join_cameras(const std::vector<CameraMotion>& v) {
    std::string s;
    for (auto c : v) s += (s.empty() ? "" : ",") + camera_name(c);
    return s;
}

std::vector<std::string> split_csv(const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

}  // namespace

void DatasetSpec::validate() const {
    if (count <= 0) throw ValidationError("dataset count must be positive, got " + std::to_string(count));
    if (frames <= 0 || height <= 0 || width <= 0) throw ValidationError("dataset extents must be positive");
    if (tracks < 0) throw ValidationError("track count must be non-negative");
    if (max_objects < 2) throw ValidationError("max_objects must be >= 2");
    if (actions.empty()) throw ValidationError("dataset needs at least one action");
    if (cameras.empty()) throw ValidationError("dataset needs at least one camera motion");
}

KeyValues DatasetSpec::to_kv() const {
    return {{"seed", std::to_string(seed)},        {"count", std::to_string(count)},
            {"frames", std::to_string(frames)},    {"height", std::to_string(height)},
            {"width", std::to_string(width)},      {"tracks", std::to_string(tracks)},
            {"max_objects", std::to_string(max_objects)}, {"actions", join_actions(actions)},
            {"cameras", join_cameras(cameras)}};
}

DatasetSpec DatasetSpec::from_kv(const KeyValues& kv) {
    DatasetSpec s;
    auto num = [&](const char* key, auto& field) {
        auto it = kv.find(key);
        if (it == kv.end()) return;
        try {
            std::size_t used = 0;
            const long long v = std::stoll(it->second, &used);
            if (used != it->second.size()) throw std::invalid_argument("trailing");
            field = static_cast<std::remove_reference_t<decltype(field)>>(v);
        } catch (const std::exception&) {
            throw ValidationError(std::string("invalid integer for ") + key + ": '" + it->second + "'");
        }
    };
    num("seed", s.seed);
    num("count", s.count);
    num("frames", s.frames);
    num("height", s.height);
    num("width", s.width);
    num("tracks", s.tracks);
    num("max_objects", s.max_objects);
    if (auto it = kv.find("actions"); it != kv.end()) {
        s.actions.clear();
        for (const auto& a : split_csv(it->second)) s.actions.push_back(parse_action(a));
    }
    if (auto it = kv.find("cameras"); it != kv.end()) {
        s.cameras.clear();
        for (const auto& c : split_csv(it->second)) s.cameras.push_back(parse_camera(c));
    }
    s.validate();
    return s;
}

std::string sha256_hex(const std::string& bytes) {
    unsigned char digest[SHA256_DIGEST_LENGTH];
    SHA256(reinterpret_cast<const unsigned char*>(bytes.data()), bytes.size(), digest);
    static const char* hex = "0123456789abcdef";
    std::string out;
    for (unsigned char c : digest) {
        out += hex[c >> 4];
        out += hex[c & 15];
    }
    return out;
}

std::string DatasetSpec::hash() const {
    return sha256_hex(format_key_values(to_kv()));
}

SceneSpec scene_spec(const DatasetSpec& spec, int index) {
    const auto na = static_cast<int>(spec.actions.size());
    const auto nc = static_cast<int>(spec.cameras.size());
    SceneSpec s = random_scene(spec.seed + static_cast<std::uint64_t>(index),
                               spec.actions[static_cast<std::size_t>(index % na)],
                               spec.cameras[static_cast<std::size_t>((index / na) % nc)], spec.frames,
                               spec.height, spec.width, spec.max_objects);
    s.num_tracks = spec.tracks;
    return s;
}

std::vector<SceneSample> generate_dataset(const DatasetSpec& spec) {
    spec.validate();
    std::vector<SceneSample> out;
    out.reserve(static_cast<std::size_t>(spec.count));
    for (int i = 0; i < spec.count; ++i) {
        out.push_back(generate(scene_spec(spec, i)));
    }
    return out;
}

std::string encode_sample(const SceneSample& s) {
    std::string out(kSampleMagic, 4);
    put<std::uint32_t>(out, kDatasetVersion);
    for (int v : {s.frames, s.height, s.width, s.num_tracks, s.num_boxes}) {
        put<std::uint32_t>(out, static_cast<std::uint32_t>(v));
    }
    put_section(out, "VIDE", s.video);
    put_section(out, "DEPT", s.depth);
    put_section(out, "SEGM", s.segment);
    put_section(out, "TRKP", s.track_pos);
    put_section(out, "TRKV", s.track_vis);
    put_section(out, "TRKI", s.track_in);
    put_section(out, "TRKO", s.track_obj);
    put_section(out, "BOXS", s.boxes);
    put_section(out, "BOXO", s.box_obj);
    put_section(out, "POSE", std::vector<float>(s.pose.begin(), s.pose.end()));
    put_section(out, "CAMS", s.cameras);
    put_section(out, "LABL", std::vector<std::uint16_t>{s.class_label, s.action_label, s.camera_label, s.num_objects});
    const auto crc = crc32(0L, reinterpret_cast<const Bytef*>(out.data()), static_cast<uInt>(out.size()));
    put<std::uint32_t>(out, static_cast<std::uint32_t>(crc));
    return out;
}

SceneSample decode_sample(const std::string& bytes, const std::string& name) {
    if (bytes.size() < 8 + 4) {
        throw FormatError(name + ": checksum failure (file truncated to " + std::to_string(bytes.size()) + " bytes)");
    }
    const std::size_t body = bytes.size() - 4;
    std::uint32_t stored = 0;
    std::memcpy(&stored, bytes.data() + body, 4);
    const auto crc = static_cast<std::uint32_t>(crc32(0L, reinterpret_cast<const Bytef*>(bytes.data()), static_cast<uInt>(body)));
    if (crc != stored) {
        throw FormatError(name + ": checksum failure");
    }
    if (std::memcmp(bytes.data(), kSampleMagic, 4) != 0) {
        throw FormatError(name + ": bad magic");
    }
    Cursor h(bytes, body, name);
    h.get<std::uint32_t>();  // magic
    const auto ver = h.get<std::uint32_t>();
    if (ver != kDatasetVersion) {
        throw FormatError(name + ": sample version " + std::to_string(ver) + ", expected " + std::to_string(kDatasetVersion));
    }
    SceneSample s;
    s.frames = static_cast<int>(h.get<std::uint32_t>());
    s.height = static_cast<int>(h.get<std::uint32_t>());
    s.width = static_cast<int>(h.get<std::uint32_t>());
    s.num_tracks = static_cast<int>(h.get<std::uint32_t>());
    s.num_boxes = static_cast<int>(h.get<std::uint32_t>());
    const auto px = static_cast<std::size_t>(s.frames) * s.height * s.width;
    const auto tf = static_cast<std::size_t>(s.num_tracks) * s.frames;
    s.video = h.section<std::uint8_t>("VIDE", px * 3);
    s.depth = h.section<float>("DEPT", px);
    s.segment = h.section<std::uint8_t>("SEGM", px);
    s.track_pos = h.section<float>("TRKP", tf * 2);
    s.track_vis = h.section<std::uint8_t>("TRKV", tf);
    s.track_in = h.section<std::uint8_t>("TRKI", tf);
    s.track_obj = h.section<std::int16_t>("TRKO", static_cast<std::size_t>(s.num_tracks));
    s.boxes = h.section<float>("BOXS", static_cast<std::size_t>(s.num_boxes) * s.frames * 4);
    s.box_obj = h.section<std::uint16_t>("BOXO", static_cast<std::size_t>(s.num_boxes));
    const auto pose = h.section<float>("POSE", 12);
    std::copy(pose.begin(), pose.end(), s.pose.begin());
    s.cameras = h.section<float>("CAMS", static_cast<std::size_t>(s.frames) * 12);
    const auto labels = h.section<std::uint16_t>("LABL", 4);
    s.class_label = labels[0];
    s.action_label = labels[1];
    s.camera_label = labels[2];
    s.num_objects = labels[3];
    if (!h.done()) {
        throw FormatError(name + ": trailing bytes");
    }
    return s;
}

void write_dataset(const std::string& dir, const DatasetSpec& spec, const std::vector<SceneSample>& samples) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create " + dir + ": " + ec.message());
    KeyValues index{{"version", std::to_string(kDatasetVersion)},
                    {"count", std::to_string(samples.size())},
                    {"spec_hash", spec.hash()}};
    for (const auto& [k, v] : spec.to_kv()) index["spec." + k] = v;
    for (std::size_t i = 0; i < samples.size(); ++i) {
        write_file(fs::path(dir) / ("sample_" + std::to_string(i) + ".bin"), encode_sample(samples[i]));
    }
    write_file(fs::path(dir) / "index.txt", format_key_values(index));
}

Dataset read_dataset(const std::string& dir) {
    const fs::path ip = fs::path(dir) / "index.txt";
    KeyValues index = parse_key_values(read_file(ip), ip.string());
    auto need = [&](const char* k) -> const std::string& {
        auto it = index.find(k);
        if (it == index.end()) throw FormatError(ip.string() + ": missing key '" + k + "'");
        return it->second;
    };
    if (need("version") != std::to_string(kDatasetVersion)) {
        throw FormatError(ip.string() + ": dataset version " + need("version") + ", expected " +
                          std::to_string(kDatasetVersion));
    }
    Dataset ds;
    KeyValues spec_kv;
    for (const auto& [k, v] : index) {
        if (k.rfind("spec.", 0) == 0) spec_kv[k.substr(5)] = v;
    }
    ds.spec = DatasetSpec::from_kv(spec_kv);
    ds.spec_hash = need("spec_hash");
    if (ds.spec_hash != ds.spec.hash()) {
        throw FormatError(ip.string() + ": spec_hash does not match the recorded generation spec");
    }
    const int count = std::stoi(need("count"));
    for (int i = 0; i < count; ++i) {
        const std::string name = "sample_" + std::to_string(i) + ".bin";
        ds.samples.push_back(decode_sample(read_file(fs::path(dir) / name), name));
    }
    return ds;
}

std::string dataset_hash(const std::string& dir) {
    const fs::path ip = fs::path(dir) / "index.txt";
    std::string all = read_file(ip);
    KeyValues index = parse_key_values(all, ip.string());
    const int count = std::stoi(index.at("count"));
    for (int i = 0; i < count; ++i) {
        all += read_file(fs::path(dir) / ("sample_" + std::to_string(i) + ".bin"));
    }
    return sha256_hex(all);
}

nd::Tensor video_tensor(const SceneSample& s) {
    std::vector<float> v(s.video.size());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<float>(s.video[i]) / 127.5f - 1.0f;
    return nd::Tensor::from_vector({s.frames, s.height, s.width, 3}, std::move(v));
}

nd::Tensor still_video_tensor(const SceneSample& s) {
    const std::size_t frame = static_cast<std::size_t>(s.height) * s.width * 3;
    std::vector<float> v(s.video.size());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<float>(s.video[i % frame]) / 127.5f - 1.0f;
    return nd::Tensor::from_vector({s.frames, s.height, s.width, 3}, std::move(v));
}

}  // namespace vdprobe::synth
