#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <vector>

#include "doctest.h"
#include "radsum/model.hpp"
#include "radsum/optim.hpp"
#include "radsum/rng.hpp"

using namespace radsum;

namespace {

// Minimal parameter set for optimizer tests: one named tensor "w".
template <typename S>
ModelParamsT<S> single_param(std::vector<S> values) {
    const size_t n = values.size();
    ModelParamsT<S> p;
    p.named.emplace_back("w", TensorT<S>::leaf({n}, std::move(values)));
    return p;
}

template <typename S>
FreezeMask all_trainable(const ModelParamsT<S>& p) {
    FreezeMask m;
    for (const auto& [name, t] : p.named) m[name] = true;
    return m;
}

}  // namespace

TEST_CASE("gradient clipping matches hand values") {
    NamedGrads small;
    small.emplace_back("w", std::vector<float>{0.3f, 0.4f});
    CHECK(clip_grad_norm(small, 1.0) == doctest::Approx(1.0));
    CHECK(small[0].second[0] == doctest::Approx(0.3));
    CHECK(small[0].second[1] == doctest::Approx(0.4));

    NamedGrads big;
    big.emplace_back("w", std::vector<float>{3.0f, 4.0f});
    CHECK(clip_grad_norm(big, 1.0) == doctest::Approx(0.2));
    CHECK(big[0].second[0] == doctest::Approx(0.6));
    CHECK(big[0].second[1] == doctest::Approx(0.8));
}

TEST_CASE("clipped norm never exceeds the threshold") {
    Rng rng(17);
    for (int trial = 0; trial < 20; ++trial) {
        NamedGrads grads;
        for (int t = 0; t < 3; ++t) {
            std::vector<float> g(11);
            for (auto& v : g) v = static_cast<float>(rng.gauss() * 5.0);
            grads.emplace_back("t" + std::to_string(t), std::move(g));
        }
        clip_grad_norm(grads, 1.0);
        double sq = 0.0;
        for (const auto& [name, g] : grads)
            for (float v : g) sq += static_cast<double>(v) * v;
        CHECK(std::sqrt(sq) <= 1.0 + 1e-6);
    }
}

TEST_CASE("clipping rejects non-finite gradients by name") {
    NamedGrads grads;
    grads.emplace_back("fine", std::vector<float>{1.0f});
    grads.emplace_back("broken", std::vector<float>{std::numeric_limits<float>::infinity()});
    try {
        clip_grad_norm(grads, 1.0);
        FAIL("expected an exception");
    } catch (const std::runtime_error& e) {
        CHECK(std::string(e.what()).find("broken") != std::string::npos);
    }
}

TEST_CASE("first update matches the hand-computed value") {
    auto p = single_param<double>({1.0});
    auto mask = all_trainable(p);
    auto state = make_adamw_state(p, mask);
    AdamWConfig cfg;
    cfg.lr = 0.1;
    cfg.weight_decay = 0.0;
    cfg.clip_enabled = false;

    NamedGradsT<double> grads;
    grads.emplace_back("w", std::vector<double>{0.5});
    adamw_step(p, grads, state, cfg, mask);

    // m = 0.05, v = 0.00025; bias-corrected both recover 0.5 and 0.25;
    // update = 0.1 * 0.5 / (0.5 + 1e-8).
    const double want = 1.0 - 0.1 * 0.5 / (0.5 + 1e-8);
    CHECK(p.at("w").value()[0] == doctest::Approx(want).epsilon(1e-12));
    CHECK(p.at("w").value()[0] == doctest::Approx(0.900000002).epsilon(1e-9));
    CHECK(state.step == 1);
}

TEST_CASE("zero gradient with zero decay leaves weights untouched") {
    auto p = single_param<float>({1.5f, -2.5f});
    auto mask = all_trainable(p);
    auto state = make_adamw_state(p, mask);
    AdamWConfig cfg;
    cfg.weight_decay = 0.0;
    NamedGrads grads;
    grads.emplace_back("w", std::vector<float>{0.f, 0.f});
    for (int i = 0; i < 3; ++i) adamw_step(p, grads, state, cfg, mask);
    CHECK(p.at("w").value() == std::vector<float>{1.5f, -2.5f});
    CHECK(state.step == 3);
}

TEST_CASE("weight decay applies even at zero gradient") {
    auto p = single_param<double>({2.0});
    auto mask = all_trainable(p);
    auto state = make_adamw_state(p, mask);
    AdamWConfig cfg;
    cfg.lr = 0.1;
    cfg.weight_decay = 0.01;
    NamedGradsT<double> grads;
    grads.emplace_back("w", std::vector<double>{0.0});
    adamw_step(p, grads, state, cfg, mask);
    // Decoupled decay: theta' = theta - lr * wd * theta = theta * (1 - 0.001).
    CHECK(p.at("w").value()[0] == doctest::Approx(2.0 * (1.0 - 0.1 * 0.01)).epsilon(1e-12));
}

TEST_CASE("frozen tensors and their moments never move") {
    ModelConfig c;
    c.n_layers = 2;
    c.n_heads = 2;
    c.d_model = 16;
    c.vocab_size = 32;
    c.max_seq = 8;
    c.seed = 3;
    auto p = init_params<float>(c);
    auto mask = freeze_mask(p, "all_but_last_layer");
    auto state = make_adamw_state(p, mask);

    std::vector<std::pair<std::string, std::vector<float>>> before;
    for (const auto& [name, t] : p.named)
        if (!mask.at(name)) before.emplace_back(name, t.value());

    Rng rng(4);
    AdamWConfig cfg;
    cfg.lr = 1e-2;
    for (int step = 0; step < 5; ++step) {
        NamedGrads grads;
        for (const auto& [name, t] : p.named) {
            std::vector<float> g(t.numel());
            for (auto& v : g) v = static_cast<float>(rng.gauss());
            grads.emplace_back(name, std::move(g));
        }
        adamw_step(p, grads, state, cfg, mask);
    }

    for (const auto& [name, want] : before)
        CHECK(p.at(name).value() == want);  // bitwise equality
    for (const auto& [name, t] : p.named) {
        const bool has_state = state.moments.count(name) > 0;
        CHECK(has_state == mask.at(name));
    }

    bool last_layer_moved = false;
    auto fresh = init_params<float>(c);
    if (p.at("layer1.attn_qkv").value() != fresh.at("layer1.attn_qkv").value())
        last_layer_moved = true;
    CHECK(last_layer_moved);
}

TEST_CASE("optimizer steps are bit-reproducible") {
    ModelConfig c;
    c.n_layers = 1;
    c.n_heads = 2;
    c.d_model = 8;
    c.vocab_size = 16;
    c.max_seq = 4;
    c.seed = 9;

    auto run = [&] {
        auto p = init_params<float>(c);
        auto mask = freeze_mask(p, "none");
        auto state = make_adamw_state(p, mask);
        AdamWConfig cfg;
        Rng rng(31);
        for (int step = 0; step < 10; ++step) {
            NamedGrads grads;
            for (const auto& [name, t] : p.named) {
                std::vector<float> g(t.numel());
                for (auto& v : g) v = static_cast<float>(rng.gauss());
                grads.emplace_back(name, std::move(g));
            }
            clip_grad_norm(grads, cfg.clip_norm);
            adamw_step(p, grads, state, cfg, mask);
        }
        return p;
    };

    auto p1 = run();
    auto p2 = run();
    for (size_t i = 0; i < p1.named.size(); ++i)
        CHECK(p1.named[i].second.value() == p2.named[i].second.value());
}

TEST_CASE("missing gradients or state are reported") {
    auto p = single_param<float>({1.0f});
    auto mask = all_trainable(p);
    auto state = make_adamw_state(p, mask);
    AdamWConfig cfg;

    NamedGrads empty;
    CHECK_THROWS_AS(adamw_step(p, empty, state, cfg, mask), std::runtime_error);

    NamedGrads wrong_size;
    wrong_size.emplace_back("w", std::vector<float>{1.f, 2.f});
    CHECK_THROWS_AS(adamw_step(p, wrong_size, state, cfg, mask), std::runtime_error);

    AdamWStateT<float> blank;
    NamedGrads grads;
    grads.emplace_back("w", std::vector<float>{0.1f});
    CHECK_THROWS_AS(adamw_step(p, grads, blank, cfg, mask), std::runtime_error);
}

TEST_CASE("descent on a convex quadratic settles monotonically") {
    const std::vector<double> target = {1.0, -2.0, 0.5, 3.0, -1.5, 0.0, 2.5, -0.75};
    auto p = single_param<double>(std::vector<double>(8, 0.0));
    auto mask = all_trainable(p);
    auto state = make_adamw_state(p, mask);
    // lr small enough that the farthest coordinate is still en route at step
    // 200; once all coordinates arrive, Adam wobbles at the lr^2 scale.
    AdamWConfig cfg;
    cfg.lr = 0.01;
    cfg.weight_decay = 0.0;
    cfg.clip_enabled = false;

    auto loss_of = [&] {
        double loss = 0.0;
        for (size_t i = 0; i < 8; ++i) {
            const double d = p.at("w").value()[i] - target[i];
            loss += d * d;
        }
        return loss;
    };

    std::vector<double> curve;
    for (int step = 0; step < 200; ++step) {
        curve.push_back(loss_of());
        NamedGradsT<double> grads;
        std::vector<double> g(8);
        for (size_t i = 0; i < 8; ++i) g[i] = 2.0 * (p.at("w").value()[i] - target[i]);
        grads.emplace_back("w", std::move(g));
        adamw_step(p, grads, state, cfg, mask);
    }
    curve.push_back(loss_of());

    CHECK(curve.back() < curve.front() / 5.0);
    for (size_t i = 10; i + 1 < curve.size(); ++i) CHECK(curve[i + 1] <= curve[i] + 1e-12);
}

TEST_CASE("optimizer config validation rejects bad values") {
    AdamWConfig cfg;
    cfg.lr = 0.0;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    cfg = AdamWConfig{};
    cfg.beta1 = 1.0;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    cfg = AdamWConfig{};
    cfg.beta2 = -0.1;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    cfg = AdamWConfig{};
    cfg.eps = 0.0;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    cfg = AdamWConfig{};
    cfg.weight_decay = -0.5;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    cfg = AdamWConfig{};
    cfg.clip_norm = 0.0;
    cfg.clip_enabled = true;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
}
