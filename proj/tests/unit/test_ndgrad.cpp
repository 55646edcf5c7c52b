#include <cmath>
#include <limits>

#include "../common/kernel_cases.hpp"
#include "doctest.h"
#include "vdprobe/ndgrad/nn.hpp"
#include "vdprobe/ndgrad/optim.hpp"
#include "vdprobe/ndgrad/tape.hpp"

using namespace vdprobe;
using namespace vdprobe::nd;

TEST_CASE("matmul by identity returns the input") {
    Tensor a = Tensor::from_vector({2, 2}, std::vector<float>{1, 2, 3, 4});
    Tensor eye = Tensor::from_vector({2, 2}, std::vector<float>{1, 0, 0, 1});
    Tensor c = matmul(a, eye);
    CHECK(c.to_f32() == std::vector<float>{1, 2, 3, 4});
}

TEST_CASE("softmax of equal logits is uniform") {
    Tensor y = softmax(Tensor::from_vector({3}, std::vector<float>{0, 0, 0}));
    for (float v : y.to_f32()) CHECK(v == doctest::Approx(1.0 / 3.0).epsilon(1e-7));
}

TEST_CASE("layer norm of [1,2,3] matches hand mean/variance") {
    // mean 2, variance 2/3, normalized (x - 2) / sqrt(2/3 + 1e-5)
    const double denom = std::sqrt(2.0 / 3.0 + 1e-5);
    Tensor x = Tensor::from_vector({3}, std::vector<float>{1, 2, 3});
    Tensor y = layer_norm(x, Tensor::full({3}, 1.0), Tensor::zeros({3}));
    auto v = y.to_f32();
    CHECK(v[0] == doctest::Approx(-1.0 / denom).epsilon(1e-6));
    CHECK(v[1] == doctest::Approx(0.0));
    CHECK(v[2] == doctest::Approx(1.0 / denom).epsilon(1e-6));
    CHECK(std::abs(v[0] + 1.2247) < 1e-4);
    CHECK(std::abs(v[2] - 1.2247) < 1e-4);
}

TEST_CASE("kernel shape errors") {
    Tensor a = Tensor::zeros({2, 3});
    CHECK_THROWS_AS(matmul(a, Tensor::zeros({2, 3})), ShapeError);
    CHECK_THROWS_AS(add(a, Tensor::zeros({2})), ShapeError);
    CHECK_THROWS_AS(add(a, Tensor::zeros({3, 2, 3})), ShapeError);
    CHECK_THROWS_AS(reshape(a, {4}), ShapeError);
    CHECK_THROWS_AS(slice(a, 1, 2, 2), ShapeError);
    CHECK_THROWS_AS(kernel_forward("nope", std::vector<Tensor>{a}), ValidationError);
    CHECK_THROWS_AS(kernel_forward("add", std::vector<Tensor>{a}), ShapeError);
}

TEST_CASE("non-finite kernel output is an error") {
    Tensor big = Tensor::from_vector({1, 1}, std::vector<float>{3e38f});
    CHECK_THROWS_AS(scale(big, 10.0), NumericError);
    Tensor nan = Tensor::from_vector({1}, std::vector<float>{std::numeric_limits<float>::quiet_NaN()});
    CHECK_THROWS_AS(gelu(nan), NumericError);
}

TEST_CASE("gradient of w*x is x") {
    Tensor w = make_const_param({1}, 2.0);
    Tensor x = Tensor::from_vector({1}, std::vector<float>{3});
    Tape tape;
    TapeScope scope(tape);
    Tensor loss = sum(mul(w, x));
    std::vector<Tensor> params{w};
    auto g = gradient_of(loss, params);
    CHECK(g[0].item() == doctest::Approx(3.0));
}

TEST_CASE("gradient of sum(softmax(v)) vanishes") {
    Rng rng(4);
    Tensor v = make_param(rng, {5}, 1.0);
    Tape tape;
    TapeScope scope(tape);
    std::vector<Tensor> params{v};
    auto g = gradient_of(sum(softmax(v)), params);
    for (float x : g[0].to_f32()) CHECK(std::abs(x) < 1e-6);
}

TEST_CASE("unreachable parameters get zero gradient") {
    Rng rng(5);
    Tensor a = make_param(rng, {3}, 1.0);
    Tensor unused = make_param(rng, {2, 2}, 1.0);
    Tape tape;
    TapeScope scope(tape);
    std::vector<Tensor> params{a, unused};
    auto g = gradient_of(sum(a), params);
    CHECK(g[1].shape() == Shape{2, 2});
    for (float x : g[1].to_f32()) CHECK(x == 0.0f);
}

TEST_CASE("gradient_of error cases") {
    Rng rng(6);
    Tensor a = make_param(rng, {3}, 1.0);
    std::vector<Tensor> params{a};
    SUBCASE("no active tape") {
        Tensor l = sum(a);
        CHECK_THROWS_AS(gradient_of(l, params), ValidationError);
    }
    SUBCASE("non-scalar loss") {
        Tape tape;
        TapeScope scope(tape);
        CHECK_THROWS_AS(gradient_of(scale(a, 2.0), params), ShapeError);
    }
    SUBCASE("backward twice") {
        Tape tape;
        TapeScope scope(tape);
        Tensor l = sum(a);
        gradient_of(l, params);
        CHECK_THROWS_AS(gradient_of(l, params), ValidationError);
    }
}

TEST_CASE("random three-layer net matches finite differences in f64") {
    Rng rng(11);
    Linear l1(rng, 4, 6), l2(rng, 6, 5), l3(rng, 5, 1);
    ParamList pl;
    l1.collect(pl, "l1");
    l2.collect(pl, "l2");
    l3.collect(pl, "l3");
    for (auto& [n, t] : pl) {
        for (auto& v : t.mutable_data<float>()) v += static_cast<float>(0.1 * rng.normal());
    }
    cast_params(pl, DType::f64);
    Tensor x = gradcheck::random_f64(rng, {3, 4}, 1.0, false);
    auto loss = [&]() { return mean(l3(gelu(l2(gelu(l1(x)))))); };
    auto params = param_tensors(pl);
    CHECK(gradcheck::max_rel_error(loss, params) < 1e-3);
}

TEST_CASE("every kernel matches central finite differences") {
    for (const auto& name : kernel_names()) {
        for (std::uint64_t trial = 0; trial < 10; ++trial) {
            const double err = gradcheck::kernel_case(name, trial);
            INFO(name << " trial " << trial << " err " << err);
            CHECK(err < 1e-3);
        }
    }
}

TEST_CASE("forward is bitwise deterministic") {
    Rng r1(9), r2(9);
    Tensor a = make_param(r1, {2, 3, 4}, 1.0);
    Tensor b = make_param(r2, {2, 3, 4}, 1.0);
    CHECK(a.bitwise_equal(b));
    AttentionMask m = AttentionMask::full(3, 3);
    CHECK(attention(a, a, a, 2, &m).bitwise_equal(attention(b, b, b, 2, &m)));
    CHECK(layer_norm(a, Tensor::full({4}, 1.0), Tensor::zeros({4}))
              .bitwise_equal(layer_norm(b, Tensor::full({4}, 1.0), Tensor::zeros({4}))));
}

TEST_CASE("softmax rows sum to one") {
    Rng rng(12);
    for (int trial = 0; trial < 20; ++trial) {
        Tensor x = Tensor::from_vector({4, 7}, rng.normal_vector(28, 1.0 + 5.0 * trial));
        auto y = softmax(x).to_f32();
        for (int r = 0; r < 4; ++r) {
            double s = 0.0;
            for (int j = 0; j < 7; ++j) s += y[r * 7 + j];
            CHECK(std::abs(s - 1.0) < 1e-6);
        }
    }
}

TEST_CASE("attention over a single key returns that key's value") {
    Rng rng(3);
    Tensor q = Tensor::from_vector({1, 1, 4}, rng.normal_vector(4));
    Tensor k = Tensor::from_vector({1, 1, 4}, rng.normal_vector(4));
    Tensor v = Tensor::from_vector({1, 1, 4}, rng.normal_vector(4));
    CHECK(attention(q, k, v, 2).bitwise_equal(v));
}

TEST_CASE("attention mask forbids empty rows") {
    CHECK_THROWS_AS(AttentionMask(2, 2, [](std::int64_t q, std::int64_t) { return q == 0; }),
                    ValidationError);
}

TEST_CASE("adamw with zero gradient is pure decay") {
    AdamW opt;
    Tensor p = Tensor::from_vector({3}, std::vector<float>{1.0f, -2.0f, 0.5f});
    std::vector<Tensor> ps{p};
    std::vector<Tensor> gs{Tensor::zeros({3})};
    opt.step(ps, gs, 0.01);
    auto v = p.to_f32();
    CHECK(v[0] == doctest::Approx(1.0 * (1 - 0.01 * 1e-4)).epsilon(1e-7));
    CHECK(v[1] == doctest::Approx(-2.0 * (1 - 0.01 * 1e-4)).epsilon(1e-7));
    CHECK(opt.step_count() == 1);
}

TEST_CASE("adamw single step closed form") {
    AdamWConfig cfg;
    cfg.weight_decay = 0.0;
    AdamW opt(cfg);
    Tensor w = Tensor::from_vector({1}, std::vector<float>{1.0f});
    std::vector<Tensor> ps{w};
    std::vector<Tensor> gs{Tensor::from_vector({1}, std::vector<float>{1.0f})};
    opt.step(ps, gs, 0.1);
    const double m_hat = (0.1 * 1.0) / (1 - 0.9);
    const double v_hat = (0.001 * 1.0) / (1 - 0.999);
    const double expect = 1.0 - 0.1 * m_hat / (std::sqrt(v_hat) + 1e-8);
    CHECK(std::abs(w.item() - expect) < 1e-6);
    CHECK(std::abs(w.item() - 0.9) < 1e-6);
}

TEST_CASE("adamw identical params get identical updates") {
    AdamW opt;
    Tensor a = Tensor::from_vector({2}, std::vector<float>{0.3f, -0.7f});
    Tensor b = a.clone();
    Tensor g = Tensor::from_vector({2}, std::vector<float>{0.2f, 0.9f});
    std::vector<Tensor> ps{a, b};
    std::vector<Tensor> gs{g, g};
    for (int i = 0; i < 5; ++i) opt.step(ps, gs, 1e-2);
    CHECK(a.bitwise_equal(b));
}

TEST_CASE("adamw shape mismatch") {
    AdamW opt;
    std::vector<Tensor> ps{Tensor::zeros({2})};
    std::vector<Tensor> gs{Tensor::zeros({3})};
    CHECK_THROWS_AS(opt.step(ps, gs, 0.1), ShapeError);
}

TEST_CASE("adamw state round trip") {
    AdamW a;
    Tensor p1 = Tensor::from_vector({2}, std::vector<float>{1, 2});
    Tensor p2 = p1.clone();
    Tensor g = Tensor::from_vector({2}, std::vector<float>{0.5f, -0.5f});
    std::vector<Tensor> ps1{p1}, ps2{p2}, gs{g};
    a.step(ps1, gs, 0.1);
    AdamW b;
    b.import_state(a.export_state(), a.step_count());
    b.step(ps2, gs, 0.1);  // p2 lags by one step; compare moment evolution instead
    a.step(ps1, gs, 0.1);
    auto sa = a.export_state();
    auto sb = b.export_state();
    CHECK(sa[0].second.bitwise_equal(sb[0].second));
    CHECK(sa[1].second.bitwise_equal(sb[1].second));
}

TEST_CASE("warmup cosine schedule endpoints") {
    WarmupCosine s;
    s.warmup = 1000;
    s.total = 10000;
    CHECK(lr_at_step(0, s) == 0.0);
    CHECK(lr_at_step(1000, s) == doctest::Approx(3e-4).epsilon(1e-12));
    CHECK(lr_at_step(10000, s) == doctest::Approx(1e-7).epsilon(1e-9));
    CHECK_THROWS_AS(lr_at_step(-1, s), ValidationError);
    CHECK_THROWS_AS(lr_at_step(10001, s), ValidationError);
}

TEST_CASE("schedule is continuous at the warmup boundary") {
    for (std::int64_t w : {1, 10, 100, 1000}) {
        WarmupCosine s;
        s.warmup = w;
        s.total = 5 * w + 3;
        const double jump = std::abs(lr_at_step(w - 1, s) - lr_at_step(w, s));
        CHECK(jump <= s.peak / static_cast<double>(w) + 1e-12);
        const double after = std::abs(lr_at_step(w + 1, s) - lr_at_step(w, s));
        CHECK(after <= s.peak / static_cast<double>(w) + 1e-12);
    }
}

TEST_CASE("rng state round trip") {
    Rng a(77);
    a.normal();
    Rng b;
    b.set_state(a.state());
    for (int i = 0; i < 10; ++i) CHECK(a.normal() == b.normal());
}
