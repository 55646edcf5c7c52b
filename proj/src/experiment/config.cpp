#include "vdprobe/experiment/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

namespace vdprobe::experiment {

std::string task_name(Task t) {
    switch (t) {
        case Task::cls: return "cls";
        case Task::action: return "action";
        case Task::depth: return "depth";
        case Task::pose: return "pose";
        case Task::point: return "point";
        case Task::box: return "box";
    }
    return "?";
}

Task parse_task(const std::string& s) {
    for (Task t : {Task::cls, Task::action, Task::depth, Task::pose, Task::point, Task::box}) {
        if (task_name(t) == s) return t;
    }
    throw ValidationError("unknown task '" + s + "' (expected cls|action|depth|pose|point|box)");
}

std::string task_metric(Task t) {
    switch (t) {
        case Task::cls:
        case Task::action: return "top1";
        case Task::depth: return "abs_rel_err";
        case Task::pose: return "epe";
        case Task::point: return "average_jaccard";
        case Task::box: return "mean_iou";
    }
    return "?";
}

metrics::Direction task_direction(Task t) {
    return t == Task::depth || t == Task::pose ? metrics::Direction::lower_better : metrics::Direction::higher_better;
}

namespace {

std::string num(double v) {
    std::ostringstream os;
    os.precision(17);
    os << v;
    return os.str();
}

template <class T>
T parse_number(const std::string& key, const std::string& text) {
    std::istringstream is(text);
    T v{};
    is >> v;
    if (!is || !is.eof()) {
        throw ValidationError("invalid value for " + key + ": '" + text + "'");
    }
    return v;
}

}  // namespace

std::vector<int> parse_int_list(const std::string& s) {
    std::vector<int> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        out.push_back(parse_number<int>("list", item));
    }
    if (out.empty()) {
        throw ValidationError("empty list '" + s + "'");
    }
    return out;
}

std::vector<std::uint64_t> parse_seed_list(const std::string& s) {
    std::vector<std::uint64_t> out;
    for (int v : parse_int_list(s)) {
        if (v < 0) throw ValidationError("seeds must be non-negative");
        out.push_back(static_cast<std::uint64_t>(v));
    }
    return out;
}

KeyValues ExperimentConfig::to_kv() const {
    KeyValues kv;
    for (const auto& [k, v] : data.to_kv()) kv["data." + k] = v;
    for (const auto& [k, v] : backbone.to_kv()) kv["backbone." + k] = v;
    for (const auto& [k, v] : backbone::train_config_kv(train)) kv[k] = v;
    kv["probe.noise_t"] = std::to_string(probe.noise_t);
    kv["probe.block"] = std::to_string(probe.block);
    kv["probe.seed"] = std::to_string(probe.seed);
    kv["task"] = task_name(task);
    kv["readout.steps"] = std::to_string(readout.steps);
    kv["readout.batch"] = std::to_string(readout_batch);
    kv["readout.beta1"] = num(readout.adam.beta1);
    kv["readout.beta2"] = num(readout.adam.beta2);
    kv["readout.weight_decay"] = num(readout.adam.weight_decay);
    kv["readout.lr_peak"] = num(readout.schedule.peak);
    kv["readout.lr_end"] = num(readout.schedule.end);
    kv["readout.warmup"] = std::to_string(readout.schedule.warmup);
    std::string seeds_text;
    for (std::size_t i = 0; i < seeds.size(); ++i) seeds_text += (i ? "," : "") + std::to_string(seeds[i]);
    kv["seeds"] = seeds_text;
    kv["eval.holdout"] = num(holdout);
    kv["paths.data"] = data_dir;
    kv["paths.out"] = out_dir;
    kv["paths.checkpoint"] = checkpoint;
    return kv;
}

ExperimentConfig ExperimentConfig::from_kv(const KeyValues& kv) {
    const std::set<std::string> known = [] {
        std::set<std::string> k;
        for (const auto& [key, v] : ExperimentConfig{}.to_kv()) k.insert(key);
        return k;
    }();
    for (const auto& [k, v] : kv) {
        if (!known.contains(k)) {
            throw ValidationError("unknown config key '" + k + "'");
        }
    }
    ExperimentConfig c;
    KeyValues data_kv, bb_kv;
    for (const auto& [k, v] : kv) {
        if (k.rfind("data.", 0) == 0) data_kv[k.substr(5)] = v;
        if (k.rfind("backbone.", 0) == 0) bb_kv[k.substr(9)] = v;
    }
    c.data = synth::DatasetSpec::from_kv(data_kv);
    c.backbone = backbone::BackboneConfig::from_kv(bb_kv);
    c.probe = probe::ProbeSpec::defaults(c.backbone);

    auto get = [&](const char* key, auto& field) {
        if (auto it = kv.find(key); it != kv.end()) {
            field = parse_number<std::remove_reference_t<decltype(field)>>(key, it->second);
        }
    };
    get("train.steps", c.train.steps);
    get("train.batch", c.train.batch);
    get("train.seed", c.train.seed);
    get("train.beta1", c.train.adam.beta1);
    get("train.beta2", c.train.adam.beta2);
    get("train.weight_decay", c.train.adam.weight_decay);
    get("train.lr_peak", c.train.schedule.peak);
    get("train.lr_end", c.train.schedule.end);
    get("train.warmup", c.train.schedule.warmup);
    c.train.schedule.total = c.train.steps;

    get("probe.noise_t", c.probe.noise_t);
    get("probe.block", c.probe.block);
    get("probe.seed", c.probe.seed);
    c.probe.validate(c.backbone);

    if (auto it = kv.find("task"); it != kv.end()) c.task = parse_task(it->second);
    get("readout.steps", c.readout.steps);
    get("readout.batch", c.readout_batch);
    get("readout.beta1", c.readout.adam.beta1);
    get("readout.beta2", c.readout.adam.beta2);
    get("readout.weight_decay", c.readout.adam.weight_decay);
    get("readout.lr_peak", c.readout.schedule.peak);
    get("readout.lr_end", c.readout.schedule.end);
    get("readout.warmup", c.readout.schedule.warmup);
    c.readout.schedule.total = c.readout.steps;
    if (auto it = kv.find("seeds"); it != kv.end()) c.seeds = parse_seed_list(it->second);
    get("eval.holdout", c.holdout);
    if (auto it = kv.find("paths.data"); it != kv.end()) c.data_dir = it->second;
    if (auto it = kv.find("paths.out"); it != kv.end()) c.out_dir = it->second;
    if (auto it = kv.find("paths.checkpoint"); it != kv.end()) c.checkpoint = it->second;

    if (c.train.steps <= 0 || c.train.batch <= 0 || c.readout.steps <= 0 || c.readout_batch <= 0) {
        throw ValidationError("step and batch counts must be positive");
    }
    if (c.train.schedule.warmup > c.train.steps || c.readout.schedule.warmup > c.readout.steps) {
        throw ValidationError("warmup longer than the run");
    }
    if (!(c.holdout > 0.0 && c.holdout < 1.0)) {
        throw ValidationError("eval.holdout must be in (0, 1)");
    }
    if (c.backbone.frames != c.data.frames || c.backbone.height != c.data.height ||
        c.backbone.width != c.data.width) {
        throw ValidationError("backbone frames/height/width must match the dataset");
    }
    return c;
}

ExperimentConfig ExperimentConfig::load(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) {
        throw IoError("cannot open config '" + path + "'");
    }
    std::ostringstream ss;
    ss << is.rdbuf();
    return from_kv(parse_key_values(ss.str(), path));
}

void ExperimentConfig::save(const std::string& path) const {
    std::ofstream os(path, std::ios::binary);
    os << format_key_values(to_kv());
    if (!os) {
        throw IoError("cannot write config '" + path + "'");
    }
}

}  // namespace vdprobe::experiment
