// vdprobe command-line driver.
#include <CLI11.hpp>

#include <atomic>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <mutex>
#include <regex>
#include <sstream>
#include <thread>

#include "vdprobe/error.hpp"
#include "vdprobe/experiment/pipeline.hpp"
#include "vdprobe/experiment/results.hpp"

using namespace vdprobe;
using namespace vdprobe::experiment;
namespace fs = std::filesystem;
namespace bb = vdprobe::backbone;

namespace {

struct Globals {
    std::string config;
    std::uint64_t seed = 0;
    bool seed_set = false;
    int threads = 1;
};

std::string num(double v) {
    std::ostringstream os;
    os.precision(17);
    os << v;
    return os.str();
}

KeyValues base_kv(const Globals& g) {
    if (g.config.empty()) return {};
    return ExperimentConfig::load(g.config).to_kv();
}

// Dataset and backbone shapes come from their files, not the config.
void put_dataset(KeyValues& kv, const synth::DatasetSpec& spec) {
    for (const auto& [k, v] : spec.to_kv()) kv["data." + k] = v;
}
void put_backbone(KeyValues& kv, const bb::BackboneConfig& cfg) {
    for (const auto& [k, v] : cfg.to_kv()) kv["backbone." + k] = v;
}

void ensure_dir(const fs::path& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create directory '" + dir.string() + "': " + ec.message());
}

void write_text(const std::string& path, const std::string& text) {
    std::ofstream os(path, std::ios::binary);
    os << text;
    if (!os) throw IoError("cannot write '" + path + "'");
}

struct LoadedBackbone {
    bb::BackboneModel model;
    std::int64_t step = 0;
};

// Training checkpoints record their step; plain model checkpoints count as 0.
LoadedBackbone load_backbone(const std::string& path) {
    NamedTensors extra;
    KeyValues kv;
    auto model = bb::load_checkpoint(path, std::nullopt, &extra, &kv);
    auto it = kv.find("train.step");
    return {std::move(model), it == kv.end() ? 0 : std::stoll(it->second)};
}

ResultRow make_row(Task task, const bb::BackboneModel& model, std::int64_t step, const probe::ProbeSpec& spec,
                   std::uint64_t seed, double value) {
    ResultRow r;
    r.task = task_name(task);
    r.mode = bb::mode_name(model.mode());
    r.ckpt_step = step;
    r.noise_t = spec.noise_t;
    r.block = spec.block;
    r.seed = seed;
    r.metric = task_metric(task);
    r.direction = task_direction(task);
    r.value = value;
    return r;
}

std::string readout_name(Task task, const bb::BackboneModel& model, std::int64_t step, const probe::ProbeSpec& spec,
                         std::uint64_t seed) {
    return "readout_" + task_name(task) + "_" + bb::mode_name(model.mode()) + "_k" + std::to_string(step) + "_b" +
           std::to_string(spec.block) + "_t" + std::to_string(spec.noise_t) + "_s" + std::to_string(seed) + ".lprb";
}

KeyValues readout_file_config(const ExperimentConfig& cfg, const ReadoutRun& run, const probe::ProbeSpec& spec) {
    KeyValues kv = cfg.to_kv();
    for (const auto& [k, v] : run.config) kv[k] = v;
    kv["probe.block"] = std::to_string(spec.block);
    kv["probe.noise_t"] = std::to_string(spec.noise_t);
    kv["probe.seed"] = std::to_string(spec.seed);
    return kv;
}

// Trains and evaluates one readout per seed at a fixed probe spec.
std::vector<ResultRow> readout_job(const ExperimentConfig& cfg, const bb::BackboneModel& model, std::int64_t step,
                                   const probe::ProbeSpec& spec, const std::vector<synth::SceneSample>& samples,
                                   const fs::path& out_dir) {
    FeatureBank bank(model, samples, spec);
    const Split split = split_indices(static_cast<int>(samples.size()), cfg.holdout);
    std::vector<ResultRow> rows;
    for (std::uint64_t seed : cfg.seeds) {
        auto opts = readout_options(cfg, seed);
        auto run = run_readout(cfg.task, bank, samples, split, opts);
        readouts::save_readout((out_dir / readout_name(cfg.task, model, step, spec, seed)).string(), run.params,
                               readout_file_config(cfg, run, spec));
        rows.push_back(make_row(cfg.task, model, step, spec, seed, run.value));
        std::printf("%s %s k=%lld block=%d noise=%d seed=%llu: %s %.6f\n", task_name(cfg.task).c_str(),
                    bb::mode_name(model.mode()).c_str(), static_cast<long long>(step), spec.block, spec.noise_t,
                    static_cast<unsigned long long>(seed), task_metric(cfg.task).c_str(), run.value);
        std::fflush(stdout);
    }
    return rows;
}

// Runs jobs on up to `threads` workers; the first exception is rethrown.
void run_jobs(std::vector<std::function<void()>> jobs, int threads) {
    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::mutex failure_lock;
    auto worker = [&] {
        while (true) {
            const std::size_t i = next++;
            if (i >= jobs.size()) return;
            try {
                jobs[i]();
            } catch (...) {
                std::lock_guard lock(failure_lock);
                if (!failure) failure = std::current_exception();
                next = jobs.size();
            }
        }
    };
    std::vector<std::thread> pool;
    for (int t = 1; t < std::max(1, threads); ++t) pool.emplace_back(worker);
    worker();
    for (auto& t : pool) t.join();
    if (failure) std::rethrow_exception(failure);
}

// Periodic checkpoints written next to `final_path` by train-backbone.
std::vector<std::string> sibling_checkpoints(const std::string& final_path) {
    const fs::path p(final_path);
    const std::regex pattern(p.stem().string() + "_step([0-9]+)\\.lprb");
    std::vector<std::pair<std::int64_t, std::string>> found;
    const fs::path dir = p.parent_path().empty() ? fs::path(".") : p.parent_path();
    for (const auto& e : fs::directory_iterator(dir)) {
        std::smatch m;
        const std::string name = e.path().filename().string();
        if (std::regex_match(name, m, pattern)) found.emplace_back(std::stoll(m[1]), e.path().string());
    }
    std::sort(found.begin(), found.end());
    std::vector<std::string> out;
    for (auto& [s, path] : found) out.push_back(path);
    return out;
}

std::string periodic_path(const std::string& final_path, std::int64_t step) {
    const fs::path p(final_path);
    return (p.parent_path() / (p.stem().string() + "_step" + std::to_string(step) + ".lprb")).string();
}

int cmd_gen_data(const Globals& g, const std::string& out, int count) {
    KeyValues kv = base_kv(g);
    if (g.seed_set) kv["data.seed"] = std::to_string(g.seed);
    if (count >= 0) kv["data.count"] = std::to_string(count);
    auto cfg = ExperimentConfig::from_kv(kv);
    cfg.data.validate();
    auto samples = synth::generate_dataset(cfg.data);
    synth::write_dataset(out, cfg.data, samples);
    cfg.data_dir = out;
    cfg.save((fs::path(out) / "config.txt").string());
    std::printf("wrote %d samples to %s\nhash %s\n", cfg.data.count, out.c_str(), synth::dataset_hash(out).c_str());
    return 0;
}

struct TrainBackboneArgs {
    std::string mode = "video", data, ckpt_out, resume;
    std::int64_t steps = -1, ckpt_every = -1;
};

int cmd_train_backbone(const Globals& g, const TrainBackboneArgs& a) {
    auto ds = synth::read_dataset(a.data);
    KeyValues kv = base_kv(g);
    put_dataset(kv, ds.spec);
    kv["backbone.mode"] = a.mode;
    kv["backbone.frames"] = std::to_string(ds.spec.frames);
    kv["backbone.height"] = std::to_string(ds.spec.height);
    kv["backbone.width"] = std::to_string(ds.spec.width);
    if (g.seed_set) kv["train.seed"] = std::to_string(g.seed);
    if (a.steps > 0) {
        kv["train.steps"] = std::to_string(a.steps);
        if (!kv.contains("train.warmup")) {
            kv["train.warmup"] = std::to_string(std::min<std::int64_t>(a.steps, bb::TrainConfig{}.schedule.warmup));
        }
    }
    kv["paths.data"] = a.data;
    kv["paths.checkpoint"] = a.ckpt_out;
    auto cfg = ExperimentConfig::from_kv(kv);
    const std::int64_t every = a.ckpt_every >= 0 ? a.ckpt_every : std::max<std::int64_t>(1, cfg.train.steps / 10);

    std::vector<nd::Tensor> videos;
    for (const auto& s : ds.samples) videos.push_back(synth::video_tensor(s));
    bb::BackboneModel init(cfg.backbone);
    auto latents = bb::tokenize_all(init, videos);
    bb::Trainer trainer = a.resume.empty() ? bb::Trainer(std::move(init), std::move(latents), cfg.train)
                                           : bb::Trainer::resume(a.resume, std::move(latents), cfg.train);
    if (!a.resume.empty() && trainer.model().mode() != cfg.backbone.mode) {
        throw ValidationError("resume checkpoint mode differs from --mode");
    }
    std::printf("mode %s, parameters %lld\n", bb::mode_name(cfg.backbone.mode).c_str(),
                static_cast<long long>(trainer.model().parameter_count()));

    const std::string log_path = a.ckpt_out + ".loss.csv";
    const bool append = !a.resume.empty() && fs::exists(log_path);
    std::ofstream log(log_path, std::ios::binary | (append ? std::ios::app : std::ios::trunc));
    if (!log) throw IoError("cannot write '" + log_path + "'");
    if (!append) log << "step,lr,loss\n";
    cfg.save(a.ckpt_out + ".config.txt");
    while (trainer.step_count() < cfg.train.steps) {
        const auto rec = trainer.step();
        log << rec.step << "," << num(rec.lr) << "," << num(rec.loss) << "\n";
        if (every > 0 && rec.step % every == 0 && rec.step < cfg.train.steps) {
            trainer.save(periodic_path(a.ckpt_out, rec.step));
        }
        if (rec.step % 100 == 0 || rec.step == cfg.train.steps) {
            std::printf("step %lld loss %.5f lr %.3g\n", static_cast<long long>(rec.step), rec.loss, rec.lr);
            std::fflush(stdout);
        }
    }
    trainer.save(a.ckpt_out);
    if (!log) throw IoError("cannot write '" + log_path + "'");
    return 0;
}

struct ReadoutArgs {
    std::string task, ckpt, data, out;
    int block = -1, noise = -1;
    std::int64_t steps = -1, warmup = -1;
};

// Config for readout verbs: file, then dataset and checkpoint shapes, then flags.
ExperimentConfig readout_config(const Globals& g, const ReadoutArgs& a, const synth::Dataset& ds,
                                const bb::BackboneModel& model) {
    KeyValues kv = base_kv(g);
    put_dataset(kv, ds.spec);
    put_backbone(kv, model.config());
    if (!a.task.empty()) kv["task"] = a.task;
    if (a.block >= 0) kv["probe.block"] = std::to_string(a.block);
    if (a.noise >= 0) kv["probe.noise_t"] = std::to_string(a.noise);
    if (a.steps > 0) kv["readout.steps"] = std::to_string(a.steps);
    if (a.warmup >= 0) kv["readout.warmup"] = std::to_string(a.warmup);
    if (g.seed_set) kv["seeds"] = std::to_string(g.seed);
    kv["paths.data"] = a.data;
    kv["paths.checkpoint"] = a.ckpt;
    kv["paths.out"] = a.out;
    return ExperimentConfig::from_kv(kv);
}

int cmd_train_readout(const Globals& g, const ReadoutArgs& a) {
    auto [model, step] = load_backbone(a.ckpt);
    auto ds = synth::read_dataset(a.data);
    auto cfg = readout_config(g, a, ds, model);
    check_task_labels(cfg.task, ds.samples, readout_options(cfg, 0));
    ensure_dir(a.out);
    cfg.save((fs::path(a.out) / "config.txt").string());
    auto rows = readout_job(cfg, model, step, cfg.probe, ds.samples, a.out);
    append_results_csv((fs::path(a.out) / "results.csv").string(), rows);
    return 0;
}

int cmd_eval(const Globals& g, const std::string& ckpt, const std::string& data, const std::string& readout,
             const std::string& out_csv) {
    auto [model, step] = load_backbone(ckpt);
    auto ds = synth::read_dataset(data);
    const auto file = read_tensor_file(readout);
    ReadoutArgs a;
    a.ckpt = ckpt;
    a.data = data;
    auto need = [&](const char* key) {
        if (!file.config.contains(key)) throw FormatError(readout + ": missing '" + key + "' in readout config");
        return file.config.at(key);
    };
    a.task = need("readout.task");
    a.block = std::stoi(need("probe.block"));
    a.noise = std::stoi(need("probe.noise_t"));
    auto cfg = readout_config(g, a, ds, model);
    cfg.probe.seed = std::stoull(need("probe.seed"));
    const std::uint64_t seed = std::stoull(need("readout.seed"));
    auto opts = readout_options(cfg, seed);

    FeatureBank bank(model, ds.samples, cfg.probe);
    const Split split = split_indices(static_cast<int>(ds.samples.size()), cfg.holdout);
    nd::ParamList params;
    for (const auto& [name, t] : file.tensors) {
        if (name.rfind("readout.", 0) == 0) params.emplace_back(name.substr(8), t.clone());
    }
    const double value = evaluate_readout(cfg.task, bank, ds.samples, split.test, opts, params);
    std::printf("%s %.17g\n", task_metric(cfg.task).c_str(), value);
    if (!out_csv.empty()) {
        append_results_csv(out_csv, {make_row(cfg.task, model, step, cfg.probe, seed, value)});
        const fs::path parent = fs::path(out_csv).parent_path();
        cfg.save((parent.empty() ? fs::path("eval.config.txt") : parent / "eval.config.txt").string());
    }
    return 0;
}

int cmd_sweep(const Globals& g, const std::string& axis, const std::string& grid, ReadoutArgs a) {
    auto ds = synth::read_dataset(a.data);
    ensure_dir(a.out);
    const std::string results = (fs::path(a.out) / "results.csv").string();
    std::vector<std::function<void()>> jobs;
    std::vector<std::unique_ptr<LoadedBackbone>> models;

    if (axis == "noise" || axis == "block") {
        auto loaded = std::make_unique<LoadedBackbone>(load_backbone(a.ckpt));
        const bb::BackboneModel* model = &loaded->model;
        const std::int64_t step = loaded->step;
        const auto values = grid.empty() ? (axis == "noise" ? std::vector<int>{0, 50, 100, 200, 400, 800}
                                                            : std::vector<int>{2, 4, 6, 8, 10, 12})
                                         : parse_int_list(grid);
        ReadoutArgs base = a;
        if (axis == "noise") base.noise = -1;
        if (axis == "block") base.block = -1;
        auto cfg = readout_config(g, base, ds, *model);
        cfg.save((fs::path(a.out) / "config.txt").string());
        for (int v : values) {
            probe::ProbeSpec spec = cfg.probe;
            (axis == "noise" ? spec.noise_t : spec.block) = v;
            spec.validate(model->config());
            jobs.push_back([&, cfg, spec, model, step] {
                append_results_csv(results, readout_job(cfg, *model, step, spec, ds.samples, a.out));
            });
        }
        models.push_back(std::move(loaded));
    } else if (axis == "checkpoint") {
        std::vector<std::string> ckpts;
        if (!grid.empty()) {
            std::stringstream ss(grid);
            for (std::string item; std::getline(ss, item, ',');) ckpts.push_back(item);
        } else {
            ckpts = sibling_checkpoints(a.ckpt);
            ckpts.push_back(a.ckpt);
        }
        bool saved = false;
        for (const auto& path : ckpts) {
            auto loaded = std::make_unique<LoadedBackbone>(load_backbone(path));
            const bb::BackboneModel* m = &loaded->model;
            const std::int64_t step = loaded->step;
            auto cfg = readout_config(g, a, ds, *m);
            if (!saved) {
                cfg.save((fs::path(a.out) / "config.txt").string());
                saved = true;
            }
            jobs.push_back([&, cfg, m, step] {
                const Split split = split_indices(static_cast<int>(ds.samples.size()), cfg.holdout);
                std::vector<nd::Tensor> held;
                for (int i : split.test) held.push_back(m->tokenize(synth::video_tensor(ds.samples[i])));
                ResultRow loss;
                loss.task = kLossTask;
                loss.mode = bb::mode_name(m->mode());
                loss.ckpt_step = step;
                loss.metric = kLossMetric;
                loss.direction = metrics::Direction::lower_better;
                loss.value = heldout_denoise_loss(*m, held, derive_seed(cfg.probe.seed, 7));
                auto rows = readout_job(cfg, *m, step, cfg.probe, ds.samples, a.out);
                rows.insert(rows.begin(), loss);
                append_results_csv(results, rows);
            });
            models.push_back(std::move(loaded));
        }
    } else {
        throw ValidationError("unknown sweep axis '" + axis + "' (expected noise|block|checkpoint)");
    }
    if (jobs.empty()) throw ValidationError("empty sweep grid");
    run_jobs(std::move(jobs), g.threads);
    return 0;
}

int cmd_report(const std::string& image_csv, const std::string& video_csv, const std::string& out_svg,
               const std::string& out_csv, const std::string& quoted_csv, const std::string& sweep_csv,
               const std::string& out_corr) {
    const auto quoted = quoted_csv.empty() ? std::map<std::string, double>{} : read_quoted_csv(quoted_csv);
    auto rep = build_report(read_results_csv(image_csv), read_results_csv(video_csv), quoted);
    const std::string table = report_csv(rep);
    if (!out_csv.empty()) write_text(out_csv, table);
    if (!out_svg.empty()) write_text(out_svg, report_svg(rep));
    for (const auto& r : rep) {
        std::printf("%-12s %-16s %10s %s\n", r.task.c_str(), r.metric.c_str(),
                    r.change ? (std::string(*r.change >= 0 ? "+" : "") + [&] {
                        char b[32];
                        std::snprintf(b, sizeof b, "%.1f%%", 100.0 * *r.change);
                        return std::string(b);
                    }()).c_str()
                             : "n/a",
                    r.flag.c_str());
    }
    if (!sweep_csv.empty()) {
        const std::string corr = correlation_csv(correlate_with_loss(read_results_csv(sweep_csv)));
        if (!out_corr.empty()) {
            write_text(out_corr, corr);
        } else {
            std::fputs(corr.c_str(), stdout);
        }
    }
    return 0;
}

int cmd_viz_pca(const Globals& g, const ReadoutArgs& a, int index, const std::string& out, int upscale) {
    auto [model, step] = load_backbone(a.ckpt);
    auto ds = synth::read_dataset(a.data);
    auto cfg = readout_config(g, a, ds, model);
    if (index < 0 || index >= static_cast<int>(ds.samples.size())) {
        throw ValidationError("--index must be in 0.." + std::to_string(ds.samples.size() - 1));
    }
    const auto& sample = ds.samples[static_cast<std::size_t>(index)];
    const auto map = probe::pca_map(probe::extract_features(model, synth::video_tensor(sample), cfg.probe, a.ckpt));
    const auto& bc = model.config();
    const fs::path parent = fs::path(out).parent_path();
    if (!parent.empty()) ensure_dir(parent);
    for (const auto& p : probe::render_pca_image(map, static_cast<int>(bc.latent_h()), static_cast<int>(bc.latent_w()),
                                                 out, upscale)) {
        std::printf("%s\n", p.c_str());
    }
    cfg.save(out + ".config.txt");
    try {
        const auto e = motion_energy(model, sample, cfg.probe);
        std::printf("motion energy: moving %.4f (%d tokens), static %.4f (%d tokens)\n", e.moving, e.moving_tokens,
                    e.still, e.still_tokens);
    } catch (const ValidationError& e) {
        std::printf("motion energy: n/a (%s)\n", e.what());
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Probe denoising video backbones with frozen readouts on synthetic scenes"};
    app.require_subcommand(1);
    Globals g;
    app.add_option("--config", g.config, "key=value experiment config");
    auto* seed_opt = app.add_option("--seed", g.seed, "seed override");
    app.add_option("--threads", g.threads, "worker threads for sweeps")->check(CLI::PositiveNumber);

    auto* gen = app.add_subcommand("gen-data", "generate a synthetic dataset");
    std::string gen_out;
    int gen_count = -1;
    gen->add_option("--out", gen_out, "dataset directory")->required();
    gen->add_option("--count", gen_count, "number of clips");

    auto* tb = app.add_subcommand("train-backbone", "denoising pre-training");
    TrainBackboneArgs tba;
    tb->add_option("--mode", tba.mode, "video|image|image_identity");
    tb->add_option("--data", tba.data, "dataset directory")->required();
    tb->add_option("--steps", tba.steps, "training steps");
    tb->add_option("--ckpt-out", tba.ckpt_out, "final checkpoint path")->required();
    tb->add_option("--ckpt-every", tba.ckpt_every, "periodic checkpoint interval (default: every 10%)");
    tb->add_option("--resume", tba.resume, "training checkpoint to resume from");

    auto add_probe_flags = [](CLI::App* sub, ReadoutArgs& r) {
        sub->add_option("--ckpt", r.ckpt, "backbone checkpoint")->required();
        sub->add_option("--data", r.data, "dataset directory")->required();
        sub->add_option("--block", r.block, "probe block l");
        sub->add_option("--noise", r.noise, "probe noise timestep t in [0, 1000]");
    };

    auto* tr = app.add_subcommand("train-readout", "train and evaluate a readout on frozen features");
    ReadoutArgs tra;
    add_probe_flags(tr, tra);
    tr->add_option("--task", tra.task, "cls|action|depth|pose|point|box");
    tr->add_option("--out", tra.out, "output directory")->required();
    tr->add_option("--steps", tra.steps, "readout steps");
    tr->add_option("--warmup", tra.warmup, "readout warmup steps");

    auto* ev = app.add_subcommand("eval", "evaluate a saved readout");
    std::string ev_ckpt, ev_data, ev_readout, ev_out;
    ev->add_option("--ckpt", ev_ckpt, "backbone checkpoint")->required();
    ev->add_option("--data", ev_data, "dataset directory")->required();
    ev->add_option("--readout", ev_readout, "readout checkpoint")->required();
    ev->add_option("--out", ev_out, "results CSV to append to");

    auto* sw = app.add_subcommand("sweep", "noise, block or checkpoint sweep");
    ReadoutArgs swa;
    std::string axis, grid;
    add_probe_flags(sw, swa);
    sw->add_option("--axis", axis, "noise|block|checkpoint")->required();
    sw->add_option("--grid", grid, "comma-separated values (checkpoint axis: checkpoint paths)");
    sw->add_option("--task", swa.task, "cls|action|depth|pose|point|box");
    sw->add_option("--out", swa.out, "output directory")->required();
    sw->add_option("--steps", swa.steps, "readout steps");
    sw->add_option("--warmup", swa.warmup, "readout warmup steps");

    auto* rp = app.add_subcommand("report", "relative change chart and table");
    std::string image_csv, video_csv, out_svg, out_csv, quoted_csv, sweep_csv, out_corr;
    rp->add_option("--image-csv", image_csv, "image-mode results")->required();
    rp->add_option("--video-csv", video_csv, "video-mode results")->required();
    rp->add_option("--out-svg", out_svg, "bar chart");
    rp->add_option("--out-csv", out_csv, "report table");
    rp->add_option("--quoted", quoted_csv, "task,quoted_change file for discrepancy flags");
    rp->add_option("--sweep-csv", sweep_csv, "checkpoint sweep results for loss correlation");
    rp->add_option("--out-corr", out_corr, "correlation table");

    auto* viz = app.add_subcommand("viz-pca", "top principal component maps");
    ReadoutArgs vza;
    std::string viz_out;
    int viz_index = 0, upscale = 8;
    add_probe_flags(viz, vza);
    viz->add_option("--index", viz_index, "clip index in the dataset");
    viz->add_option("--out", viz_out, "output prefix")->required();
    viz->add_option("--upscale", upscale, "pixels per latent pixel")->check(CLI::PositiveNumber);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 1;
    }
    g.seed_set = seed_opt->count() > 0;

    try {
        if (*gen) return cmd_gen_data(g, gen_out, gen_count);
        if (*tb) return cmd_train_backbone(g, tba);
        if (*tr) return cmd_train_readout(g, tra);
        if (*ev) return cmd_eval(g, ev_ckpt, ev_data, ev_readout, ev_out);
        if (*sw) return cmd_sweep(g, axis, grid, swa);
        if (*rp) return cmd_report(image_csv, video_csv, out_svg, out_csv, quoted_csv, sweep_csv, out_corr);
        if (*viz) return cmd_viz_pca(g, vza, viz_index, viz_out, upscale);
    } catch (const ValidationError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    } catch (const NumericError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    } catch (const FormatError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    } catch (const IoError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    }
    return 0;
}
