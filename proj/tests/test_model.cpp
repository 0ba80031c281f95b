#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <vector>

#include "doctest.h"
#include "radsum/model.hpp"
#include "radsum/optim.hpp"
#include "radsum/rng.hpp"

using namespace radsum;

namespace {

ModelConfig tiny_config() {
    ModelConfig c;
    c.n_layers = 2;
    c.n_heads = 2;
    c.d_model = 16;
    c.vocab_size = 32;
    c.max_seq = 16;
    c.seed = 7;
    return c;
}

template <typename S>
ModelConfig tiny_config_t() {
    return tiny_config();
}

std::vector<int> random_ids(size_t n, int vocab, uint64_t seed) {
    Rng rng(seed);
    std::vector<int> ids(n);
    for (auto& id : ids) id = static_cast<int>(rng.uniform_below(vocab));
    return ids;
}

}  // namespace

TEST_CASE("init is deterministic and bitwise repeatable") {
    auto a = init_params<float>(tiny_config());
    auto b = init_params<float>(tiny_config());
    REQUIRE(a.named.size() == b.named.size());
    for (size_t i = 0; i < a.named.size(); ++i) {
        CHECK(a.named[i].first == b.named[i].first);
        CHECK(a.named[i].second.value() == b.named[i].second.value());
    }

    ModelConfig other = tiny_config();
    other.seed = 8;
    auto c = init_params<float>(other);
    CHECK(c.at("tok_emb").value() != a.at("tok_emb").value());
}

TEST_CASE("layernorm parameters start at identity") {
    auto p = init_params<float>(tiny_config());
    for (const auto& [name, t] : p.named) {
        if (name.find("ln") != std::string::npos && name.find("gain") != std::string::npos)
            for (float v : t.value()) CHECK(v == 1.0f);
        if (name.find("ln") != std::string::npos && name.find("bias") != std::string::npos)
            for (float v : t.value()) CHECK(v == 0.0f);
    }
}

TEST_CASE("weight init matches the configured scale") {
    ModelConfig c = tiny_config();
    c.vocab_size = 1000;
    c.d_model = 100;
    c.n_heads = 4;
    auto p = init_params<float>(c);
    const auto& emb = p.at("tok_emb").value();
    REQUIRE(emb.size() == 100000);
    double mean = 0.0, sq = 0.0;
    for (float v : emb) {
        mean += v;
        sq += static_cast<double>(v) * v;
    }
    mean /= emb.size();
    const double std_dev = std::sqrt(sq / emb.size() - mean * mean);
    // Sample mean of n gaussians: |mean| < 3 sigma / sqrt(n).
    CHECK(std::abs(mean) < 3.0 * 0.02 / std::sqrt(100000.0));
    CHECK(std_dev == doctest::Approx(0.02).epsilon(0.02));
}

TEST_CASE("forward produces one logit row per position") {
    auto p = init_params<float>(tiny_config());
    auto logits = forward(p, {5});
    CHECK(logits.shape() == std::vector<size_t>{1, 32});
    auto more = forward(p, random_ids(9, 32, 3));
    CHECK(more.shape() == std::vector<size_t>{9, 32});
}

TEST_CASE("forward validates sequence length and token range") {
    auto p = init_params<float>(tiny_config());
    CHECK_THROWS_AS(forward(p, {}), std::invalid_argument);
    CHECK_THROWS_AS(forward(p, random_ids(17, 32, 4)), std::invalid_argument);
    CHECK_THROWS_AS(forward(p, {32}), std::invalid_argument);
    CHECK_THROWS_AS(forward(p, {-1}), std::invalid_argument);
}

TEST_CASE("changing a future token never changes past logits") {
    auto p = init_params<float>(tiny_config());
    auto ids = random_ids(12, 32, 5);
    auto base = forward(p, ids);
    for (size_t pos : {4UL, 8UL, 11UL}) {
        auto mutated = ids;
        mutated[pos] = (mutated[pos] + 17) % 32;
        auto out = forward(p, mutated);
        for (size_t i = 0; i < pos; ++i)
            for (size_t j = 0; j < 32; ++j)
                CHECK(out.value()[i * 32 + j] == base.value()[i * 32 + j]);  // bitwise
        bool row_changed = false;
        for (size_t j = 0; j < 32; ++j)
            if (out.value()[pos * 32 + j] != base.value()[pos * 32 + j]) row_changed = true;
        CHECK(row_changed);
    }
}

TEST_CASE("initial loss sits near ln(vocab)") {
    for (int vocab : {32, 256}) {
        ModelConfig c = tiny_config();
        c.vocab_size = vocab;
        auto p = init_params<float>(c);
        auto ids = random_ids(13, vocab, 100 + vocab);
        std::vector<int> inputs(ids.begin(), ids.end() - 1);
        std::vector<int> targets(ids.begin() + 1, ids.end());
        std::vector<uint8_t> mask(targets.size(), 1);
        const double loss = lm_loss(p, inputs, targets, mask).item();
        CHECK(loss == doctest::Approx(std::log(static_cast<double>(vocab))).epsilon(0.05));
    }
}

TEST_CASE("loss mask removes positions from supervision") {
    auto p = init_params<float>(tiny_config());
    auto inputs = random_ids(8, 32, 9);
    auto targets = random_ids(8, 32, 10);
    std::vector<uint8_t> mask(8, 0);
    mask[5] = mask[6] = mask[7] = 1;

    const double base = lm_loss(p, inputs, targets, mask).item();
    auto altered = targets;
    altered[1] = (altered[1] + 3) % 32;  // masked-out position
    CHECK(lm_loss(p, inputs, altered, mask).item() == base);

    altered = targets;
    altered[6] = (altered[6] + 3) % 32;  // supervised position
    CHECK(lm_loss(p, inputs, altered, mask).item() != base);

    std::vector<uint8_t> none(8, 0);
    CHECK_THROWS_AS(lm_loss(p, inputs, targets, none), std::invalid_argument);
    std::vector<uint8_t> short_mask(7, 1);
    CHECK_THROWS_AS(lm_loss(p, inputs, targets, short_mask), std::invalid_argument);
}

TEST_CASE("full model passes finite-difference checks in 64-bit mode") {
    ModelConfig c;
    c.n_layers = 2;
    c.n_heads = 2;
    c.d_model = 16;
    c.vocab_size = 32;
    c.max_seq = 8;
    c.seed = 11;
    auto p = init_params<double>(c);
    auto ids = random_ids(8, 32, 12);
    std::vector<int> inputs(ids.begin(), ids.end() - 1);
    std::vector<int> targets(ids.begin() + 1, ids.end());
    std::vector<uint8_t> mask(targets.size(), 1);

    std::vector<TensorT<double>> leaves;
    for (auto& [name, t] : p.named) leaves.push_back(t);
    const double err =
        grad_check<double>([&] { return lm_loss(p, inputs, targets, mask); }, leaves, 1e-4);
    CHECK(err < 1e-5);
}

TEST_CASE("freeze policies partition parameters as documented") {
    ModelConfig c;
    c.n_layers = 4;
    c.n_heads = 4;
    c.d_model = 128;
    c.vocab_size = 4096;
    c.max_seq = 512;
    c.seed = 2;
    auto p = init_params<float>(c);

    auto all = freeze_mask(p, "none");
    for (const auto& [name, t] : p.named) CHECK(all.at(name));
    CHECK(count_trainable(p, all) == p.total_params());

    auto partial = freeze_mask(p, "all_but_last_layer");
    CHECK(!partial.at("tok_emb"));
    CHECK(!partial.at("pos_emb"));
    CHECK(!partial.at("layer0.attn_qkv"));
    CHECK(!partial.at("layer2.mlp_out"));
    CHECK(partial.at("layer3.attn_qkv"));
    CHECK(partial.at("layer3.ln1.gain"));
    CHECK(partial.at("final_ln.gain"));
    CHECK(partial.at("lm_head"));

    const double fraction = static_cast<double>(count_trainable(p, partial)) /
                            static_cast<double>(p.total_params());
    CHECK(fraction < 0.40);
    CHECK(fraction > 0.10);

    CHECK_THROWS_AS(freeze_mask(p, "everything"), std::invalid_argument);
}

TEST_CASE("a tiny model memorizes a short sequence") {
    ModelConfig c;
    c.n_layers = 2;
    c.n_heads = 2;
    c.d_model = 32;
    c.vocab_size = 16;
    c.max_seq = 8;
    c.seed = 5;
    auto p = init_params<float>(c);

    const std::vector<int> seq = {2, 7, 3, 11, 5, 13, 1, 9};
    std::vector<int> inputs(seq.begin(), seq.end() - 1);
    std::vector<int> targets(seq.begin() + 1, seq.end());
    std::vector<uint8_t> mask(targets.size(), 1);

    AdamWConfig opt;
    opt.lr = 1e-2;
    opt.weight_decay = 0.0;
    auto fm = freeze_mask(p, "none");
    auto state = make_adamw_state(p, fm);

    double loss = 0.0;
    for (int step = 0; step < 500; ++step) {
        auto l = lm_loss(p, inputs, targets, mask);
        loss = l.item();
        GradStore store;
        backward(l, store);
        NamedGrads grads;
        for (auto& [name, t] : p.named) grads.emplace_back(name, store.get_or_zero(t));
        clip_grad_norm(grads, opt.clip_norm);
        adamw_step(p, grads, state, opt, fm);
    }
    CHECK(loss < 0.05);

    // Greedy continuation reproduces the memorized tokens.
    auto logits = forward(p, inputs);
    for (size_t i = 0; i < targets.size(); ++i) {
        int best = 0;
        for (int j = 1; j < 16; ++j)
            if (logits.value()[i * 16 + j] > logits.value()[i * 16 + best]) best = j;
        CHECK(best == targets[i]);
    }
}

TEST_CASE("incremental decoding matches the full forward pass") {
    {
        ModelConfig c = tiny_config_t<double>();
        auto p = init_params<double>(c);
        auto ids = random_ids(12, 32, 20);
        auto full = forward(p, ids);
        InferenceContextT<double> ctx(p);
        for (size_t t = 0; t < ids.size(); ++t) {
            auto row = ctx.append(ids[t]);
            REQUIRE(row.size() == 32);
            for (size_t j = 0; j < 32; ++j)
                CHECK(row[j] == doctest::Approx(full.value()[t * 32 + j]).epsilon(1e-9));
        }
    }
    {
        auto p = init_params<float>(tiny_config());
        auto ids = random_ids(12, 32, 21);
        auto full = forward(p, ids);
        InferenceContext ctx(p);
        for (size_t t = 0; t < ids.size(); ++t) {
            auto row = ctx.append(ids[t]);
            for (size_t j = 0; j < 32; ++j)
                CHECK(std::abs(row[j] - full.value()[t * 32 + j]) < 2e-3);
        }
    }
}

TEST_CASE("inference context enforces capacity and token range") {
    auto p = init_params<float>(tiny_config());
    InferenceContext ctx(p);
    CHECK_THROWS_AS(ctx.append(32), std::invalid_argument);
    CHECK_THROWS_AS(ctx.append(-1), std::invalid_argument);
    for (int t = 0; t < 16; ++t) ctx.append(t % 32);
    CHECK_THROWS_AS(ctx.append(0), std::invalid_argument);
}

TEST_CASE("model config validation rejects bad values") {
    ModelConfig c = tiny_config();
    c.d_model = 15;  // not divisible by heads
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);
    c = tiny_config();
    c.vocab_size = 0;
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);
    c = tiny_config();
    c.n_layers = 0;
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);
    c = tiny_config();
    c.max_seq = 0;
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);
}
