#include "vdprobe/experiment/pipeline.hpp"

#include <algorithm>
#include <cmath>

#include "vdprobe/ndgrad/tape.hpp"

namespace vdprobe::experiment {

using nd::Tensor;
using synth::SceneSample;

Split split_indices(int count, double holdout) {
    if (count < 2) {
        throw ValidationError("need at least 2 samples to split into train and test");
    }
    const int test = std::clamp(static_cast<int>(std::ceil(holdout * count)), 1, count - 1);
    Split s;
    for (int i = 0; i < count; ++i) (i < count - test ? s.train : s.test).push_back(i);
    return s;
}

FeatureBank::FeatureBank(const backbone::BackboneModel& model, const std::vector<SceneSample>& samples,
                         const probe::ProbeSpec& spec)
    : model_(model), samples_(samples), spec_(spec), video_(samples.size()), still_(samples.size()) {
    spec_.validate(model.config());
}

const Tensor& FeatureBank::video(int i) const {
    auto& slot = video_.at(static_cast<std::size_t>(i));
    if (!slot) {
        probe::ProbeSpec s = spec_;
        s.seed = derive_seed(spec_.seed, static_cast<std::uint64_t>(i));
        slot = probe::extract_features(model_, synth::video_tensor(samples_[static_cast<std::size_t>(i)]), s)
                   .activations;
    }
    return *slot;
}

const Tensor& FeatureBank::still(int i) const {
    auto& slot = still_.at(static_cast<std::size_t>(i));
    if (!slot) {
        probe::ProbeSpec s = spec_;
        s.seed = derive_seed(spec_.seed, static_cast<std::uint64_t>(i));
        slot = probe::extract_features(model_, synth::still_video_tensor(samples_[static_cast<std::size_t>(i)]), s)
                   .activations;
    }
    return *slot;
}

ReadoutOptions readout_options(const ExperimentConfig& cfg, std::uint64_t seed) {
    ReadoutOptions o;
    o.fit = cfg.readout;
    o.fit.seed = derive_seed(seed, 2);
    o.batch = cfg.readout_batch;
    o.seed = seed;
    o.actions = cfg.data.actions;
    return o;
}

namespace {

constexpr int kDepthQueries = 128;

Tensor stack(const std::vector<Tensor>& items) {
    std::vector<Tensor> parts;
    parts.reserve(items.size());
    for (const auto& t : items) {
        nd::Shape s = t.shape();
        s.insert(s.begin(), 1);
        parts.push_back(nd::reshape(t, s));
    }
    return nd::concat(parts, 0);
}

Tensor latent_frame(const Tensor& feats, std::int64_t k) {
    return nd::reshape(nd::slice(feats, 0, k, 1), {feats.dim(1), feats.dim(2)});
}

std::int64_t action_index(const ReadoutOptions& opts, const SceneSample& s) {
    for (std::size_t i = 0; i < opts.actions.size(); ++i) {
        if (static_cast<std::uint16_t>(opts.actions[i]) == s.action_label) return static_cast<std::int64_t>(i);
    }
    throw ValidationError("sample action '" + synth::action_name(static_cast<synth::Action>(s.action_label)) +
                          "' is not one of the configured action classes");
}

struct Heads {
    Task task;
    readouts::AttentiveHead attentive;
    readouts::DepthHead depth;
    readouts::PoseHead pose;
    readouts::Tracker tracker;
    nd::ParamList params;
};

Heads build_heads(Task task, const backbone::BackboneConfig& bb, const ReadoutOptions& opts, double init_depth) {
    Rng rng(derive_seed(opts.seed, 1));
    Heads h{task, {}, {}, {}, {}, {}};
    const std::int64_t d = bb.dim;
    switch (task) {
        case Task::cls:
        case Task::action: {
            const std::int64_t classes =
                task == Task::cls ? synth::kNumKinds : static_cast<std::int64_t>(opts.actions.size());
            h.attentive = readouts::AttentiveHead(rng, {d, d, 4, 512, classes});
            h.attentive.collect(h.params, "head");
            break;
        }
        case Task::depth:
            h.depth = readouts::DepthHead(rng, {d, d, 4, 512, 2, 8, init_depth});
            h.depth.collect(h.params, "head");
            break;
        case Task::pose:
            h.pose = readouts::PoseHead(rng, d, d, 4, 512);
            h.pose.collect(h.params, "head");
            break;
        case Task::point:
        case Task::box: {
            readouts::TrackerConfig tc;
            tc.task = task == Task::point ? readouts::TrackTask::point : readouts::TrackTask::box;
            tc.feature_dim = d;
            tc.grid_h = static_cast<int>(bb.latent_h());
            tc.grid_w = static_cast<int>(bb.latent_w());
            h.tracker = readouts::Tracker(rng, tc);
            h.tracker.collect(h.params, "head");
            break;
        }
    }
    return h;
}

Tensor cls_tokens(const FeatureBank& bank, int i) {
    return nd::mean_axis(bank.still(i), 0);
}

Tensor action_tokens(const FeatureBank& bank, int i) {
    const Tensor& f = bank.video(i);
    return nd::reshape(f, {f.dim(0) * f.dim(1), f.dim(2)});
}

std::vector<Tensor> frame_tokens(const FeatureBank& bank, const std::vector<int>& idx, int frames) {
    std::vector<Tensor> interp;
    for (int i : idx) interp.push_back(probe::interpolate_temporal(bank.video(i), frames));
    std::vector<Tensor> out;
    for (int f = 0; f < frames; ++f) {
        std::vector<Tensor> per;
        for (const auto& t : interp) per.push_back(latent_frame(t, f));
        out.push_back(stack(per));
    }
    return out;
}

struct PointBatch {
    Tensor query;  // [B, K, 2] latent px
    readouts::TrackTargets targets;
};

PointBatch point_batch(const std::vector<SceneSample>& samples, const std::vector<int>& idx, double patch) {
    const auto& s0 = samples[static_cast<std::size_t>(idx[0])];
    const std::int64_t b = static_cast<std::int64_t>(idx.size()), k = s0.num_tracks, f = s0.frames;
    std::vector<float> q, pos, vis, in;
    for (int i : idx) {
        const auto& s = samples[static_cast<std::size_t>(i)];
        if (s.num_tracks != k || s.frames != f) {
            throw ShapeError("point batch mixes track counts");
        }
        for (std::int64_t t = 0; t < k; ++t) {
            q.push_back(static_cast<float>(s.track_pos[static_cast<std::size_t>(t * f * 2)] / patch));
            q.push_back(static_cast<float>(s.track_pos[static_cast<std::size_t>(t * f * 2 + 1)] / patch));
        }
        for (float v : s.track_pos) pos.push_back(static_cast<float>(v / patch));
        vis.insert(vis.end(), s.track_vis.begin(), s.track_vis.end());
        in.insert(in.end(), s.track_in.begin(), s.track_in.end());
    }
    PointBatch pb;
    pb.query = Tensor::from_vector({b, k, 2}, std::move(q));
    pb.targets.pos = Tensor::from_vector({b, k, f, 2}, std::move(pos));
    pb.targets.visible = Tensor::from_vector({b, k, f}, std::move(vis));
    pb.targets.in_scene = Tensor::from_vector({b, k, f}, std::move(in));
    return pb;
}

std::vector<int> draw(Rng& rng, const std::vector<int>& pool, int n) {
    std::vector<int> out;
    for (int i = 0; i < n; ++i) out.push_back(pool[static_cast<std::size_t>(rng.below(pool.size()))]);
    return out;
}

std::vector<int> with_boxes(const std::vector<SceneSample>& samples, const std::vector<int>& idx) {
    std::vector<int> out;
    for (int i : idx) {
        if (samples[static_cast<std::size_t>(i)].num_boxes > 0) out.push_back(i);
    }
    return out;
}

Tensor box_query(const SceneSample& s) {
    std::vector<float> q;
    for (int b = 0; b < s.num_boxes; ++b) {
        const auto o = static_cast<std::size_t>(b) * s.frames * 4;
        q.insert(q.end(), s.boxes.begin() + static_cast<std::ptrdiff_t>(o),
                 s.boxes.begin() + static_cast<std::ptrdiff_t>(o + 4));
    }
    return Tensor::from_vector({1, s.num_boxes, 4}, std::move(q));
}

Tensor depth_loss_batch(const Heads& h, const FeatureBank& bank, const std::vector<SceneSample>& samples,
                        const std::vector<int>& idx, Rng& rng) {
    std::vector<Tensor> toks;
    std::vector<float> q, target;
    for (int i : idx) {
        const auto& s = samples[static_cast<std::size_t>(i)];
        toks.push_back(latent_frame(bank.video(i), 0));
        for (int j = 0; j < kDepthQueries; ++j) {
            const auto x = static_cast<int>(rng.below(static_cast<std::uint64_t>(s.width)));
            const auto y = static_cast<int>(rng.below(static_cast<std::uint64_t>(s.height)));
            q.push_back(static_cast<float>((x + 0.5) / s.width));
            q.push_back(static_cast<float>((y + 0.5) / s.height));
            target.push_back(s.depth[static_cast<std::size_t>(y) * s.width + x]);
        }
    }
    const auto b = static_cast<std::int64_t>(idx.size());
    const Tensor queries = Tensor::from_vector({b, kDepthQueries, 2}, std::move(q));
    const Tensor tgt = Tensor::from_vector({b, kDepthQueries}, std::move(target));
    return *readouts::depth_decode(h.depth, stack(toks), queries, &tgt).loss;
}

Tensor pose_target(const std::vector<SceneSample>& samples, const std::vector<int>& idx) {
    std::vector<float> v;
    for (int i : idx) {
        const auto& p = samples[static_cast<std::size_t>(i)].pose;
        v.insert(v.end(), p.begin(), p.end());
    }
    return Tensor::from_vector({static_cast<std::int64_t>(idx.size()), 12}, std::move(v));
}

std::pair<Tensor, Tensor> pose_inputs(const FeatureBank& bank, const std::vector<int>& idx) {
    std::vector<Tensor> first, last;
    for (int i : idx) {
        const Tensor& f = bank.video(i);
        first.push_back(latent_frame(f, 0));
        last.push_back(latent_frame(f, f.dim(0) - 1));
    }
    return {stack(first), stack(last)};
}

Tensor task_loss(const Heads& h, const FeatureBank& bank, const std::vector<SceneSample>& samples,
                 const std::vector<int>& pool, const ReadoutOptions& opts, Rng& rng) {
    const double patch = static_cast<double>(bank.backbone().patch);
    switch (h.task) {
        case Task::cls:
        case Task::action: {
            const auto idx = draw(rng, pool, opts.batch);
            std::vector<Tensor> toks;
            std::vector<std::int64_t> labels;
            for (int i : idx) {
                const auto& s = samples[static_cast<std::size_t>(i)];
                toks.push_back(h.task == Task::cls ? cls_tokens(bank, i) : action_tokens(bank, i));
                labels.push_back(h.task == Task::cls ? s.class_label : action_index(opts, s));
            }
            return *readouts::attentive_classify(h.attentive, stack(toks), labels).loss;
        }
        case Task::depth:
            return depth_loss_batch(h, bank, samples, draw(rng, pool, opts.batch), rng);
        case Task::pose: {
            const auto idx = draw(rng, pool, opts.batch);
            auto [first, last] = pose_inputs(bank, idx);
            const Tensor tgt = pose_target(samples, idx);
            return *readouts::pose_forward(h.pose, first, last, &tgt).loss;
        }
        case Task::point: {
            const auto idx = draw(rng, pool, opts.batch);
            const PointBatch pb = point_batch(samples, idx, patch);
            const int frames = samples[static_cast<std::size_t>(idx[0])].frames;
            const Tensor pred = readouts::track_rollout(h.tracker, pb.query, frame_tokens(bank, idx, frames));
            return readouts::tracking_loss(pred, pb.targets, readouts::TrackTask::point);
        }
        case Task::box: {
            const auto idx = draw(rng, pool, opts.batch);
            Tensor total;
            for (int i : idx) {
                const auto& s = samples[static_cast<std::size_t>(i)];
                const Tensor pred = readouts::track_rollout(h.tracker, box_query(s), frame_tokens(bank, {i}, s.frames));
                readouts::TrackTargets gt;
                gt.pos = Tensor::from_vector({1, s.num_boxes, s.frames, 4}, s.boxes);
                Tensor l = readouts::tracking_loss(pred, gt, readouts::TrackTask::box);
                total = total.defined() ? nd::add(total, l) : l;
            }
            return nd::scale(total, 1.0 / static_cast<double>(idx.size()));
        }
    }
    throw ValidationError("unhandled task");
}

constexpr int kEvalBatch = 8;

double evaluate(const Heads& h, const FeatureBank& bank, const std::vector<SceneSample>& samples,
                const std::vector<int>& indices, const ReadoutOptions& opts) {
    nd::NoGradScope no_grad;
    const double patch = static_cast<double>(bank.backbone().patch);
    const auto& bb = bank.backbone();
    if (indices.empty()) {
        throw ValidationError("evaluation split is empty");
    }
    std::vector<std::vector<int>> chunks;
    for (std::size_t i = 0; i < indices.size(); i += kEvalBatch) {
        chunks.emplace_back(indices.begin() + static_cast<std::ptrdiff_t>(i),
                            indices.begin() + static_cast<std::ptrdiff_t>(std::min(indices.size(), i + kEvalBatch)));
    }
    double total = 0.0;
    std::size_t count = 0;
    switch (h.task) {
        case Task::cls:
        case Task::action: {
            std::vector<float> logits;
            std::vector<std::int64_t> labels;
            for (const auto& c : chunks) {
                std::vector<Tensor> toks;
                for (int i : c) {
                    const auto& s = samples[static_cast<std::size_t>(i)];
                    toks.push_back(h.task == Task::cls ? cls_tokens(bank, i) : action_tokens(bank, i));
                    labels.push_back(h.task == Task::cls ? s.class_label : action_index(opts, s));
                }
                auto l = h.attentive.forward(stack(toks)).to_f32();
                logits.insert(logits.end(), l.begin(), l.end());
            }
            return metrics::top1(logits, static_cast<std::size_t>(h.attentive.cfg.outputs), labels);
        }
        case Task::depth: {
            const auto g = readouts::grid_queries(static_cast<int>(bb.latent_h()), static_cast<int>(bb.latent_w()));
            const auto q = static_cast<std::int64_t>(g.size() / 2);
            for (const auto& c : chunks) {
                std::vector<Tensor> toks;
                std::vector<float> qs;
                for (int i : c) {
                    toks.push_back(latent_frame(bank.video(i), 0));
                    qs.insert(qs.end(), g.begin(), g.end());
                }
                const auto b = static_cast<std::int64_t>(c.size());
                const auto pred = readouts::depth_decode(h.depth, stack(toks),
                                                         Tensor::from_vector({b, q, 2}, std::move(qs)))
                                      .depth.to_f32();
                for (std::size_t j = 0; j < c.size(); ++j) {
                    const auto& s = samples[static_cast<std::size_t>(c[j])];
                    const auto up = readouts::upsample_bilinear(
                        std::span<const float>(pred).subspan(j * static_cast<std::size_t>(q), static_cast<std::size_t>(q)),
                        static_cast<int>(bb.latent_h()), static_cast<int>(bb.latent_w()), s.height, s.width);
                    const std::span<const float> gt(s.depth.data(), static_cast<std::size_t>(s.height) * s.width);
                    total += metrics::abs_rel_err(up, gt);
                    ++count;
                }
            }
            return total / static_cast<double>(count);
        }
        case Task::pose: {
            for (const auto& c : chunks) {
                auto [first, last] = pose_inputs(bank, c);
                const auto pf = readouts::pose_forward(h.pose, first, last);
                for (std::size_t j = 0; j < c.size(); ++j) {
                    const auto& gp = samples[static_cast<std::size_t>(c[j])].pose;
                    metrics::Pose gt{};
                    std::copy(gp.begin(), gp.end(), gt.begin());
                    total += metrics::epe(pf.poses[j], gt);
                    ++count;
                }
            }
            return total / static_cast<double>(count);
        }
        case Task::point: {
            for (const auto& c : chunks) {
                const PointBatch pb = point_batch(samples, c, patch);
                const int frames = samples[static_cast<std::size_t>(c[0])].frames;
                const auto pred = readouts::track_rollout(h.tracker, pb.query, frame_tokens(bank, c, frames)).to_f64();
                const auto k = static_cast<std::size_t>(pb.query.dim(1));
                for (std::size_t j = 0; j < c.size(); ++j) {
                    const auto& s = samples[static_cast<std::size_t>(c[j])];
                    metrics::TrackSet p, g;
                    p.tracks = g.tracks = s.num_tracks;
                    p.frames = g.frames = s.frames;
                    g.pos = s.track_pos;
                    g.visible = s.track_vis;
                    for (std::size_t e = 0; e < k * static_cast<std::size_t>(s.frames); ++e) {
                        const double* o = pred.data() + (j * k * s.frames + e) * 4;
                        p.pos.push_back(static_cast<float>(o[0] * patch));
                        p.pos.push_back(static_cast<float>(o[1] * patch));
                        p.visible.push_back(readouts::point_visibility_decision(o[2], o[3]) ? 1 : 0);
                    }
                    total += metrics::average_jaccard(p, g, kAjThresholds);
                    ++count;
                }
            }
            return total / static_cast<double>(count);
        }
        case Task::box: {
            std::vector<float> pred_all, gt_all;
            int boxes = 0, frames = 0;
            for (int i : with_boxes(samples, indices)) {
                const auto& s = samples[static_cast<std::size_t>(i)];
                const auto pred = readouts::track_rollout(h.tracker, box_query(s), frame_tokens(bank, {i}, s.frames)).to_f32();
                pred_all.insert(pred_all.end(), pred.begin(), pred.end());
                gt_all.insert(gt_all.end(), s.boxes.begin(), s.boxes.end());
                boxes += s.num_boxes;
                frames = s.frames;
            }
            if (boxes == 0) {
                throw ValidationError("no boxes in the evaluation split");
            }
            return metrics::mean_iou(pred_all, gt_all, boxes, frames);
        }
    }
    throw ValidationError("unhandled task");
}

double mean_train_depth(const std::vector<SceneSample>& samples, const std::vector<int>& idx) {
    double sum = 0.0;
    std::size_t n = 0;
    for (int i : idx) {
        const auto& s = samples[static_cast<std::size_t>(i)];
        for (std::size_t p = 0; p < static_cast<std::size_t>(s.height) * s.width; ++p) {
            if (s.depth[p] > metrics::kDepthFloor) {
                sum += s.depth[p];
                ++n;
            }
        }
    }
    if (n == 0) {
        throw ValidationError("no valid depth in the train split");
    }
    return sum / static_cast<double>(n);
}

}  // namespace

void check_task_labels(Task task, const std::vector<SceneSample>& samples, const ReadoutOptions& opts) {
    if (samples.empty()) {
        throw ValidationError("dataset is empty");
    }
    switch (task) {
        case Task::action:
            if (opts.actions.size() < 2) {
                throw ValidationError("action task needs at least 2 action classes");
            }
            for (const auto& s : samples) action_index(opts, s);
            break;
        case Task::point:
            for (const auto& s : samples) {
                if (s.num_tracks <= 0) throw ValidationError("point task: dataset has no point tracks");
            }
            break;
        case Task::box:
            if (with_boxes(samples, [&] {
                    std::vector<int> all(samples.size());
                    for (std::size_t i = 0; i < all.size(); ++i) all[i] = static_cast<int>(i);
                    return all;
                }()).empty()) {
                throw ValidationError("box task: dataset has no boxes");
            }
            break;
        default:
            break;
    }
}

ReadoutRun run_readout(Task task, const FeatureBank& bank, const std::vector<SceneSample>& samples, const Split& split,
                       const ReadoutOptions& opts) {
    check_task_labels(task, samples, opts);
    const double init_depth = task == Task::depth ? mean_train_depth(samples, split.train) : 0.0;
    Heads h = build_heads(task, bank.backbone(), opts, init_depth);
    std::vector<int> pool = task == Task::box ? with_boxes(samples, split.train) : split.train;
    if (pool.empty()) {
        throw ValidationError("train split has no usable samples for task " + task_name(task));
    }
    ReadoutRun run;
    run.task = task;
    run.losses = readouts::fit(
        h.params, [&](Rng& rng) { return task_loss(h, bank, samples, pool, opts, rng); }, opts.fit);
    run.value = evaluate(h, bank, samples, split.test, opts);
    run.params = h.params;
    run.config = {{"readout.task", task_name(task)},
                  {"readout.seed", std::to_string(opts.seed)},
                  {"readout.init_depth", std::to_string(init_depth)}};
    return run;
}

double evaluate_readout(Task task, const FeatureBank& bank, const std::vector<SceneSample>& samples,
                        const std::vector<int>& indices, const ReadoutOptions& opts, nd::ParamList& params) {
    Heads h = build_heads(task, bank.backbone(), opts, 0.0);
    if (h.params.size() != params.size()) {
        throw FormatError("readout parameters do not match the " + task_name(task) + " head");
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (h.params[i].first != params[i].first || h.params[i].second.shape() != params[i].second.shape()) {
            throw FormatError("readout parameter '" + params[i].first + "' does not match the head");
        }
        auto src = params[i].second.data<float>();
        std::copy(src.begin(), src.end(), h.params[i].second.mutable_data<float>().begin());
    }
    return evaluate(h, bank, samples, indices, opts);
}

double mean_depth_baseline(const std::vector<SceneSample>& samples, const Split& split) {
    const double m = mean_train_depth(samples, split.train);
    double total = 0.0;
    for (int i : split.test) {
        const auto& s = samples[static_cast<std::size_t>(i)];
        const std::size_t n = static_cast<std::size_t>(s.height) * s.width;
        const std::vector<float> pred(n, static_cast<float>(m));
        total += metrics::abs_rel_err(pred, std::span<const float>(s.depth.data(), n));
    }
    return total / static_cast<double>(split.test.size());
}

double heldout_denoise_loss(const backbone::BackboneModel& model, const std::vector<Tensor>& latents,
                            std::uint64_t seed, int repeats) {
    if (latents.empty() || repeats <= 0) {
        throw ValidationError("heldout_denoise_loss: nothing to evaluate");
    }
    nd::NoGradScope no_grad;
    Rng rng(seed);
    double total = 0.0;
    for (int r = 0; r < repeats; ++r) {
        for (const auto& z : latents) total += backbone::denoise_loss(model, {z}, rng).item();
    }
    return total / static_cast<double>(repeats * static_cast<int>(latents.size()));
}

MotionEnergy motion_energy(const backbone::BackboneModel& model, const SceneSample& sample,
                           const probe::ProbeSpec& spec) {
    const auto& cfg = model.config();
    if (sample.frames != cfg.frames || sample.height != cfg.height || sample.width != cfg.width) {
        throw ValidationError("motion_energy: sample does not match the backbone input size");
    }
    const std::size_t hw_px = static_cast<std::size_t>(sample.height) * sample.width;
    const auto seg = [&](int f, std::size_t p) { return sample.segment[static_cast<std::size_t>(f) * hw_px + p]; };
    std::vector<bool> moves(256, false);
    for (std::size_t p = 0; p < hw_px; ++p) {
        const auto a = seg(0, p), b = seg(sample.frames - 1, p);
        if (a != b) {
            if (a != synth::kBackground) moves[a] = true;
            if (b != synth::kBackground) moves[b] = true;
        }
    }

    MotionEnergy out;
    out.map = probe::pca_map(probe::extract_features(model, synth::video_tensor(sample), spec));
    const std::int64_t lh = cfg.latent_h(), lw = cfg.latent_w(), patch = cfg.patch;
    double moving = 0.0, still = 0.0;
    for (std::int64_t k = 0; k < cfg.latent_frames(); ++k) {
        const int f0 = k == 0 ? 0 : static_cast<int>(cfg.temporal_patch * (k - 1) + 1);
        const int f1 = k == 0 ? 0 : static_cast<int>(cfg.temporal_patch * k);
        for (std::int64_t ty = 0; ty < lh; ++ty) {
            for (std::int64_t tx = 0; tx < lw; ++tx) {
                int on_moving = 0, total = 0;
                bool background_only = true;
                for (std::int64_t y = ty * patch; y < (ty + 1) * patch; ++y) {
                    for (std::int64_t x = tx * patch; x < (tx + 1) * patch; ++x) {
                        const std::size_t p = static_cast<std::size_t>(y * sample.width + x);
                        for (int f = f0; f <= f1; ++f) {
                            const auto s = seg(f, p);
                            on_moving += s != synth::kBackground && moves[s];
                            ++total;
                        }
                        for (int f = 0; f < sample.frames && background_only; ++f) {
                            background_only = seg(f, p) == synth::kBackground;
                        }
                    }
                }
                const float v = std::abs(out.map[static_cast<std::size_t>((k * lh + ty) * lw + tx)]);
                if (2 * on_moving >= total) {
                    moving += v;
                    ++out.moving_tokens;
                } else if (background_only) {
                    still += v;
                    ++out.still_tokens;
                }
            }
        }
    }
    if (out.moving_tokens == 0 || out.still_tokens == 0) {
        throw ValidationError("motion_energy: clip needs both moving-object and static-background tokens");
    }
    out.moving = moving / out.moving_tokens;
    out.still = still / out.still_tokens;
    return out;
}

}  // namespace vdprobe::experiment
