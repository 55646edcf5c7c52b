#include "vdprobe/readouts/readouts.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numbers>
#include <numeric>

#include "vdprobe/ndgrad/tape.hpp"

namespace vdprobe::readouts {

using nd::Shape;
using nd::Tensor;

namespace {

Tensor constant_like(const Tensor& ref, Shape shape, const std::vector<double>& values) {
    if (ref.dtype() == nd::DType::f64) {
        return Tensor::from_vector(std::move(shape), values);
    }
    return Tensor::from_vector(std::move(shape), std::vector<float>(values.begin(), values.end()));
}

// Broadcasts a [1, n] parameter row to [B, 1, n].
Tensor repeat_rows(const Tensor& row, std::int64_t batch) {
    return nd::add(Tensor::zeros({batch, 1, row.dim(-1)}, row.dtype()), row);
}

void init_small(nd::Linear& l, Rng& rng, double stddev) {
    auto w = l.w.mutable_data<float>();
    for (auto& v : w) v = static_cast<float>(rng.normal() * stddev);
}

}  // namespace

Tensor fourier_encode(const Tensor& coords, int freqs) {
    if (freqs <= 0) {
        throw ValidationError("fourier_encode: frequency count must be positive");
    }
    const std::int64_t k = coords.dim(-1);
    const std::int64_t rows = coords.numel() / k;
    const auto c = coords.to_f64();
    const std::int64_t width = k * 2 * freqs;
    std::vector<double> out(static_cast<std::size_t>(rows * width));
    for (std::int64_t r = 0; r < rows; ++r) {
        double* dst = out.data() + r * width;
        for (std::int64_t i = 0; i < k; ++i) {
            for (int j = 0; j < freqs; ++j) {
                const double a = std::ldexp(std::numbers::pi, j) * c[static_cast<std::size_t>(r * k + i)];
                dst[i * freqs + j] = std::sin(a);
                dst[k * freqs + i * freqs + j] = std::cos(a);
            }
        }
    }
    Shape s = coords.shape();
    s.back() = width;
    return constant_like(coords, s, out);
}

Tensor canonical_order(const Tensor& tokens) {
    if (tokens.rank() != 3) {
        throw ShapeError("canonical_order expects [B, N, D], got " + nd::shape_str(tokens.shape()));
    }
    const std::int64_t b = tokens.dim(0), n = tokens.dim(1), d = tokens.dim(2);
    std::vector<std::int64_t> idx(static_cast<std::size_t>(b * n));
    const bool f64 = tokens.dtype() == nd::DType::f64;
    const std::size_t elem = f64 ? sizeof(double) : sizeof(float);
    const auto* base = f64 ? static_cast<const void*>(tokens.data<double>().data())
                           : static_cast<const void*>(tokens.data<float>().data());
    const auto* bytes = static_cast<const unsigned char*>(base);
    for (std::int64_t i = 0; i < b; ++i) {
        auto first = idx.begin() + i * n;
        std::iota(first, first + n, i * n);
        std::stable_sort(first, first + n, [&](std::int64_t x, std::int64_t y) {
            return std::memcmp(bytes + x * d * elem, bytes + y * d * elem, d * elem) < 0;
        });
    }
    return nd::reshape(nd::embedding(nd::reshape(tokens, {b * n, d}), idx), {b, n, d});
}

AttentiveHead::AttentiveHead(Rng& rng, const AttentiveHeadConfig& c)
    : cfg(c),
      query(nd::make_param(rng, {1, c.in}, 0.02)),
      attn(rng, c.in, c.in, c.width, c.in, c.heads),
      mlp(rng, c.in, c.mlp_hidden, c.in),
      ln(c.in),
      cls(rng, c.in, c.outputs, 0.02) {}

Tensor AttentiveHead::pool(const Tensor& tokens) const {
    if (tokens.rank() != 3 || tokens.dim(2) != cfg.in) {
        throw ShapeError("attentive head expects [B, N, " + std::to_string(cfg.in) + "], got " +
                         nd::shape_str(tokens.shape()));
    }
    const Tensor sorted = canonical_order(tokens);
    return attn(repeat_rows(query, tokens.dim(0)), sorted);
}

Tensor AttentiveHead::forward(const Tensor& tokens) const {
    Tensor a = nd::add(pool(tokens), repeat_rows(query, tokens.dim(0)));
    Tensor y = cls(ln(nd::add(mlp(a), a)));
    return nd::reshape(y, {tokens.dim(0), cfg.outputs});
}

void AttentiveHead::collect(nd::ParamList& out, const std::string& prefix) const {
    out.emplace_back(prefix + ".query", query);
    attn.collect(out, prefix + ".attn");
    mlp.collect(out, prefix + ".mlp");
    ln.collect(out, prefix + ".ln");
    cls.collect(out, prefix + ".cls");
}

Classification attentive_classify(const AttentiveHead& head, const Tensor& tokens,
                                  std::span<const std::int64_t> labels) {
    Classification c;
    c.logits = head.forward(tokens);
    if (!labels.empty()) {
        for (auto l : labels) {
            if (l < 0 || l >= head.cfg.outputs) {
                throw ValidationError("label " + std::to_string(l) + " outside [0, " +
                                      std::to_string(head.cfg.outputs) + ")");
            }
        }
        c.loss = nd::softmax_cross_entropy(c.logits, labels);
    }
    return c;
}

DepthHead::DepthHead(Rng& rng, const DepthHeadConfig& c)
    : cfg(c), embed(rng, 2 * 2 * c.freqs, c.width), out_ln(c.width), out(rng, c.width, c.mlp_hidden, 1) {
    for (int i = 0; i < c.layers; ++i) {
        layers.push_back(Layer{nd::LayerNorm(c.width), nd::CrossAttention(rng, c.width, c.in, c.width, c.width, c.heads),
                               nd::LayerNorm(c.width), nd::Mlp(rng, c.width, c.mlp_hidden, c.width)});
    }
    std::fill(out.fc2.b.mutable_data<float>().begin(), out.fc2.b.mutable_data<float>().end(),
              static_cast<float>(c.init_depth));
}

Tensor DepthHead::forward(const Tensor& tokens, const Tensor& queries) const {
    if (queries.rank() != 3 || queries.dim(2) != 2 || tokens.rank() != 3 || queries.dim(0) != tokens.dim(0)) {
        throw ShapeError("depth head expects tokens [B, N, d] and queries [B, Q, 2]");
    }
    Tensor q = embed(fourier_encode(queries, cfg.freqs));
    for (const auto& l : layers) {
        q = nd::add(q, l.attn(l.ln1(q), tokens));
        q = nd::add(q, l.mlp(l.ln2(q)));
    }
    return nd::reshape(out(out_ln(q)), {queries.dim(0), queries.dim(1)});
}

void DepthHead::collect(nd::ParamList& o, const std::string& prefix) const {
    embed.collect(o, prefix + ".embed");
    for (std::size_t i = 0; i < layers.size(); ++i) {
        const std::string p = prefix + ".layer" + std::to_string(i);
        layers[i].ln1.collect(o, p + ".ln1");
        layers[i].attn.collect(o, p + ".attn");
        layers[i].ln2.collect(o, p + ".ln2");
        layers[i].mlp.collect(o, p + ".mlp");
    }
    out_ln.collect(o, prefix + ".out_ln");
    out.collect(o, prefix + ".out");
}

DepthDecode depth_decode(const DepthHead& head, const Tensor& tokens, const Tensor& queries, const Tensor* target) {
    for (double v : queries.to_f64()) {
        if (!(v >= 0.0 && v <= 1.0)) {
            throw ValidationError("depth query outside the unit square");
        }
    }
    DepthDecode d;
    d.depth = head.forward(tokens, queries);
    if (target) d.loss = nd::mse(d.depth, *target);
    return d;
}

std::vector<float> upsample_bilinear(std::span<const float> grid, int h, int w, int out_h, int out_w) {
    if (grid.size() != static_cast<std::size_t>(h) * static_cast<std::size_t>(w) || h <= 0 || w <= 0) {
        throw ShapeError("upsample_bilinear: grid size mismatch");
    }
    std::vector<float> out(static_cast<std::size_t>(out_h) * static_cast<std::size_t>(out_w));
    auto axis = [](int i, int n_out, int n_in, int& lo, int& hi, double& a) {
        // Cell-centre alignment, clamped at the borders.
        const double p = (i + 0.5) * n_in / n_out - 0.5;
        const double c = std::clamp(p, 0.0, static_cast<double>(n_in - 1));
        lo = static_cast<int>(std::floor(c));
        hi = std::min(lo + 1, n_in - 1);
        a = c - lo;
    };
    for (int y = 0; y < out_h; ++y) {
        int y0, y1;
        double ay;
        axis(y, out_h, h, y0, y1, ay);
        for (int x = 0; x < out_w; ++x) {
            int x0, x1;
            double ax;
            axis(x, out_w, w, x0, x1, ax);
            auto g = [&](int yy, int xx) { return static_cast<double>(grid[static_cast<std::size_t>(yy) * w + xx]); };
            const double top = g(y0, x0) * (1 - ax) + g(y0, x1) * ax;
            const double bot = g(y1, x0) * (1 - ax) + g(y1, x1) * ax;
            out[static_cast<std::size_t>(y) * out_w + x] = static_cast<float>(top * (1 - ay) + bot * ay);
        }
    }
    return out;
}

std::vector<float> grid_queries(int h, int w) {
    std::vector<float> q;
    q.reserve(static_cast<std::size_t>(h) * w * 2);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            q.push_back(static_cast<float>((x + 0.5) / w));
            q.push_back(static_cast<float>((y + 0.5) / h));
        }
    }
    return q;
}

ProcrustesResult procrustes_project(const Eigen::Matrix3d& m) {
    if (!m.allFinite()) {
        throw ValidationError("procrustes_project: non-finite input");
    }
    Eigen::JacobiSVD<Eigen::Matrix3d> svd(m, Eigen::ComputeFullU | Eigen::ComputeFullV);
    const Eigen::Matrix3d& u = svd.matrixU();
    const Eigen::Matrix3d& v = svd.matrixV();
    const double d = (u * v.transpose()).determinant() < 0.0 ? -1.0 : 1.0;
    ProcrustesResult r;
    r.R = u * Eigen::Vector3d(1.0, 1.0, d).asDiagonal() * v.transpose();
    const auto& s = svd.singularValues();
    r.non_unique = d < 0.0 && std::abs(s(1) - s(2)) <= 1e-12 * std::max(s(0), 1e-300);
    return r;
}

PoseHead::PoseHead(Rng& rng, std::int64_t feature_dim, std::int64_t width, int heads, std::int64_t mlp_hidden)
    : head(rng, AttentiveHeadConfig{2 * feature_dim, width, heads, mlp_hidden, 12}) {
    auto b = head.cls.b.mutable_data<float>();
    for (int i = 0; i < 3; ++i) b[static_cast<std::size_t>(i * 4 + i)] = 1.0f;
}

Tensor PoseHead::forward(const Tensor& first, const Tensor& last) const {
    if (first.shape() != last.shape()) {
        throw ShapeError("pose head: first and last frame features differ in shape");
    }
    const Tensor parts[] = {first, last};
    return head.forward(nd::concat(parts, -1));
}

void PoseHead::collect(nd::ParamList& out, const std::string& prefix) const {
    head.collect(out, prefix);
}

metrics::Pose project_pose(std::span<const double> raw) {
    if (raw.size() != 12) {
        throw ShapeError("pose needs 12 values");
    }
    Eigen::Matrix3d m;
    for (int r = 0; r < 3; ++r) {
        for (int c = 0; c < 3; ++c) m(r, c) = raw[static_cast<std::size_t>(r * 4 + c)];
    }
    const Eigen::Matrix3d rot = procrustes_project(m).R;
    metrics::Pose p{};
    for (int r = 0; r < 3; ++r) {
        for (int c = 0; c < 3; ++c) p[static_cast<std::size_t>(r * 4 + c)] = rot(r, c);
        p[static_cast<std::size_t>(r * 4 + 3)] = raw[static_cast<std::size_t>(r * 4 + 3)];
    }
    return p;
}

PoseForward pose_forward(const PoseHead& head, const Tensor& first, const Tensor& last, const Tensor* target) {
    PoseForward pf;
    pf.raw = head.forward(first, last);
    const auto v = pf.raw.to_f64();
    for (std::size_t i = 0; i + 12 <= v.size(); i += 12) {
        pf.poses.push_back(project_pose(std::span<const double>(v).subspan(i, 12)));
    }
    if (target) pf.loss = nd::mse(pf.raw, *target);
    return pf;
}

Tracker::Tracker(Rng& rng, const TrackerConfig& c)
    : cfg(c),
      init(rng, (c.task == TrackTask::point ? 2 : 4) * 2 * c.freqs, c.mlp_hidden, c.state),
      pred_ln(c.state),
      predictor(rng, c.state, c.mlp_hidden, c.state),
      token_pe(rng, 2 * 2 * c.freqs, c.feature_dim, 0.02),
      out_ln(c.state),
      head(rng, c.state, c.mlp_hidden, 4) {
    for (int i = 0; i < c.corrector_layers; ++i) {
        corrector.push_back(Layer{nd::LayerNorm(c.state),
                                  nd::CrossAttention(rng, c.state, c.feature_dim, c.state, c.state, c.heads),
                                  nd::LayerNorm(c.state), nd::Mlp(rng, c.state, c.mlp_hidden, c.state)});
    }
    init_small(head.fc2, rng, 0.02);
}

TrackState Tracker::init_state(const Tensor& query) const {
    const std::int64_t qd = cfg.task == TrackTask::point ? 2 : 4;
    if (query.rank() != 3 || query.dim(2) != qd) {
        throw ShapeError("tracker query must be [B, K, " + std::to_string(qd) + "], got " +
                         nd::shape_str(query.shape()));
    }
    // Point queries arrive in latent pixels and are encoded in [0, 1].
    Tensor unit = query;
    if (cfg.task == TrackTask::point) {
        auto v = query.to_f64();
        for (std::size_t i = 0; i < v.size(); ++i) v[i] /= (i % 2 == 0 ? cfg.grid_w : cfg.grid_h);
        unit = constant_like(query, query.shape(), v);
    }
    return TrackState{init(fourier_encode(unit, cfg.freqs)), query, 0};
}

Tensor Tracker::predict(const Tensor& state) const {
    return nd::add(state, predictor(pred_ln(state)));
}

Tensor Tracker::correct(const Tensor& state, const Tensor& tokens) const {
    const auto g = grid_queries(cfg.grid_h, cfg.grid_w);
    if (tokens.rank() != 3 || tokens.dim(1) != static_cast<std::int64_t>(g.size() / 2) ||
        tokens.dim(2) != cfg.feature_dim) {
        throw ShapeError("tracker tokens must be [B, " + std::to_string(g.size() / 2) + ", " +
                         std::to_string(cfg.feature_dim) + "], got " + nd::shape_str(tokens.shape()));
    }
    const Tensor coords = constant_like(tokens, {static_cast<std::int64_t>(g.size() / 2), 2},
                                        std::vector<double>(g.begin(), g.end()));
    const Tensor kv = nd::add(tokens, token_pe(fourier_encode(coords, cfg.freqs)));
    Tensor s = state;
    for (const auto& l : corrector) {
        s = nd::add(s, l.attn(l.ln1(s), kv));
        s = nd::add(s, l.mlp(l.ln2(s)));
    }
    return s;
}

void Tracker::collect(nd::ParamList& out, const std::string& prefix) const {
    init.collect(out, prefix + ".init");
    pred_ln.collect(out, prefix + ".pred_ln");
    predictor.collect(out, prefix + ".predictor");
    token_pe.collect(out, prefix + ".token_pe");
    for (std::size_t i = 0; i < corrector.size(); ++i) {
        const std::string p = prefix + ".corrector" + std::to_string(i);
        corrector[i].ln1.collect(out, p + ".ln1");
        corrector[i].attn.collect(out, p + ".attn");
        corrector[i].ln2.collect(out, p + ".ln2");
        corrector[i].mlp.collect(out, p + ".mlp");
    }
    out_ln.collect(out, prefix + ".out_ln");
    head.collect(out, prefix + ".head");
}

TrackStepOutput track_step(const Tracker& tracker, const TrackState& prev, const Tensor& tokens, int frame) {
    if (frame != prev.next_frame) {
        throw ValidationError("track_step: got features of frame " + std::to_string(frame) + ", expected frame " +
                              std::to_string(prev.next_frame));
    }
    TrackStepOutput o;
    o.state = TrackState{tracker.correct(tracker.predict(prev.state), tokens), prev.query, frame + 1};
    Tensor raw = tracker.head(tracker.out_ln(o.state.state));
    if (tracker.cfg.task == TrackTask::point) {
        const Tensor parts[] = {nd::add(nd::slice(raw, -1, 0, 2), prev.query), nd::slice(raw, -1, 2, 2)};
        o.out = nd::concat(parts, -1);
    } else {
        o.out = nd::add(raw, prev.query);
    }
    return o;
}

Tensor track_rollout(const Tracker& tracker, const Tensor& query, const std::vector<Tensor>& frames) {
    if (frames.empty()) {
        throw ValidationError("track_rollout: no frames");
    }
    TrackState s = tracker.init_state(query);
    std::vector<Tensor> outs;
    const std::int64_t b = query.dim(0), k = query.dim(1);
    for (std::size_t f = 0; f < frames.size(); ++f) {
        auto step = track_step(tracker, s, frames[f], static_cast<int>(f));
        outs.push_back(nd::reshape(step.out, {b, k, 1, 4}));
        s = std::move(step.state);
    }
    return nd::concat(outs, 2);
}

bool point_visibility_decision(double vis_logit, double certainty_logit) {
    auto prob = [](double x) { return 1.0 / (1.0 + std::exp(-x)); };
    return prob(vis_logit) > 0.5 && prob(certainty_logit) > 0.5;
}

Tensor tracking_loss(const Tensor& pred, const TrackTargets& gt, TrackTask task) {
    if (pred.rank() != 4 || pred.dim(3) != 4) {
        throw ShapeError("tracking_loss: predictions must be [B, K, F, 4], got " + nd::shape_str(pred.shape()));
    }
    if (task == TrackTask::box) {
        if (gt.pos.shape() != pred.shape()) {
            throw ShapeError("tracking_loss: box targets " + nd::shape_str(gt.pos.shape()) + " vs predictions " +
                             nd::shape_str(pred.shape()));
        }
        return nd::mse(pred, gt.pos);
    }
    const Shape bkf{pred.dim(0), pred.dim(1), pred.dim(2)};
    if (gt.pos.shape() != Shape{bkf[0], bkf[1], bkf[2], 2} || gt.visible.shape() != bkf || gt.in_scene.shape() != bkf) {
        throw ShapeError("tracking_loss: point targets do not line up with predictions " + nd::shape_str(pred.shape()));
    }
    const double n = static_cast<double>(nd::numel_of(bkf));
    const Tensor pos = nd::slice(pred, -1, 0, 2);
    const Tensor vis = nd::reshape(nd::slice(pred, -1, 2, 1), bkf);
    const Tensor cert = nd::reshape(nd::slice(pred, -1, 3, 1), bkf);

    const auto in = gt.in_scene.to_f64();
    const auto pv = pos.to_f64();
    const auto gp = gt.pos.to_f64();
    std::vector<double> in2(in.size() * 2), cert_label(in.size());
    for (std::size_t i = 0; i < in.size(); ++i) {
        in2[2 * i] = in2[2 * i + 1] = in[i];
        const double du = pv[2 * i] - gp[2 * i], dv = pv[2 * i + 1] - gp[2 * i + 1];
        cert_label[i] = std::sqrt(du * du + dv * dv) < kCertaintyRadius ? 1.0 : 0.0;
    }
    const Tensor in_mask = constant_like(pred, bkf, in);
    Tensor l_pos = nd::sum(nd::mul(nd::huber(pos, gt.pos), constant_like(pred, gt.pos.shape(), in2)));
    Tensor l_vis = nd::sum(nd::bce_with_logits(vis, gt.visible));
    Tensor l_cert = nd::sum(nd::mul(nd::bce_with_logits(cert, constant_like(pred, bkf, cert_label)), in_mask));
    return nd::scale(nd::add(nd::add(l_pos, l_vis), l_cert), 1.0 / n);
}

void save_readout(const std::string& path, const nd::ParamList& params, const KeyValues& config) {
    NamedTensors named;
    for (const auto& [n, t] : params) named.emplace_back("readout." + n, t.dtype() == nd::DType::f32 ? t : t.to(nd::DType::f32));
    write_tensor_file(path, named, config);
}

KeyValues load_readout(const std::string& path, nd::ParamList& params) {
    TensorFile tf = read_tensor_file(path);
    if (tf.tensors.size() != params.size()) {
        throw FormatError(path + ": readout has " + std::to_string(tf.tensors.size()) + " tensors, expected " +
                          std::to_string(params.size()));
    }
    for (auto& [n, t] : params) {
        const std::string key = "readout." + n;
        if (!tf.has(key)) {
            throw FormatError(path + ": missing tensor '" + key + "'");
        }
        const Tensor& src = tf.get(key);
        if (src.shape() != t.shape()) {
            throw FormatError(path + ": tensor '" + key + "' has shape " + nd::shape_str(src.shape()));
        }
        auto s = src.data<float>();
        std::copy(s.begin(), s.end(), t.mutable_data<float>().begin());
    }
    return tf.config;
}

std::vector<double> fit(const nd::ParamList& params, const std::function<Tensor(Rng&)>& loss, const FitConfig& cfg) {
    if (cfg.schedule.total < cfg.steps) {
        throw ValidationError("readout schedule total is shorter than the step count");
    }
    auto tensors = nd::param_tensors(params);
    nd::AdamW optim(cfg.adam);
    Rng rng(cfg.seed);
    std::vector<double> log;
    log.reserve(static_cast<std::size_t>(cfg.steps));
    for (std::int64_t k = 0; k < cfg.steps; ++k) {
        nd::Tape tape;
        std::vector<Tensor> grads;
        {
            nd::TapeScope scope(tape);
            Tensor l = loss(rng);
            log.push_back(l.item());
            grads = nd::gradient_of(l, tensors);
        }
        optim.step(tensors, grads, nd::lr_at_step(k, cfg.schedule));
    }
    return log;
}

}  // namespace vdprobe::readouts
