#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "radsum/rng.hpp"
#include "radsum/tensor.hpp"
#include "radsum/util.hpp"

namespace radsum {

// Decoder-only pre-layernorm transformer LM. Learned absolute position
// embeddings, GELU MLP, untied LM head, no linear biases. Causality comes
// from triangular attention, so future positions carry exactly zero weight.

struct ModelConfig {
    int n_layers = 4;
    int n_heads = 4;
    int d_model = 128;
    int d_ff = 0;  // 0 means 4 * d_model
    int vocab_size = 0;
    int max_seq = 512;
    double init_std = 0.02;
    uint64_t seed = 0;

    int ff_dim() const { return d_ff > 0 ? d_ff : 4 * d_model; }

    void validate() const {
        if (n_layers < 1 || n_heads < 1 || d_model < 1 || vocab_size < 1)
            throw std::invalid_argument("model config: layers/heads/dims/vocab must be positive");
        if (d_model % n_heads != 0)
            throw std::invalid_argument("model config: d_model " + std::to_string(d_model) +
                                        " not divisible by n_heads " + std::to_string(n_heads));
        if (max_seq < 2) throw std::invalid_argument("model config: max_seq must be >= 2");
        if (init_std <= 0.0) throw std::invalid_argument("model config: init_std must be > 0");
    }
};

// Target sentinel excluded from the loss mean.
constexpr int kIgnoreId = -1;

template <typename S>
struct ModelParamsT {
    ModelConfig config;
    // Fixed declaration order; serialization, freezing and gradient
    // reduction all iterate this order.
    std::vector<std::pair<std::string, TensorT<S>>> named;

    TensorT<S>& at(const std::string& name) {
        for (auto& [n, t] : named)
            if (n == name) return t;
        throw std::out_of_range("model params: no tensor named " + name);
    }
    const TensorT<S>& at(const std::string& name) const {
        for (const auto& [n, t] : named)
            if (n == name) return t;
        throw std::out_of_range("model params: no tensor named " + name);
    }

    size_t total_params() const {
        size_t n = 0;
        for (const auto& [name, t] : named) n += t.numel();
        return n;
    }
};

using FreezeMask = std::unordered_map<std::string, bool>;

namespace detail {

template <typename S>
TensorT<S> init_weight(std::vector<size_t> shape, double std_dev, uint64_t seed,
                       const std::string& name) {
    size_t n = 1;
    for (size_t d : shape) n *= d;
    std::vector<S> data(n);
    Rng rng = Rng::derive(seed, fnv1a64("init"), fnv1a64(name));
    for (auto& x : data) x = static_cast<S>(rng.gauss() * std_dev);
    return TensorT<S>::leaf(std::move(shape), std::move(data));
}

}  // namespace detail

template <typename S>
ModelParamsT<S> init_params(const ModelConfig& config) {
    config.validate();
    const auto d = static_cast<size_t>(config.d_model);
    const auto v = static_cast<size_t>(config.vocab_size);
    const auto ff = static_cast<size_t>(config.ff_dim());
    const auto t = static_cast<size_t>(config.max_seq);

    ModelParamsT<S> p;
    p.config = config;
    auto weight = [&](const std::string& name, std::vector<size_t> shape) {
        p.named.emplace_back(name,
                             detail::init_weight<S>(std::move(shape), config.init_std,
                                                    config.seed, name));
    };
    auto ones = [&](const std::string& name, size_t n) {
        p.named.emplace_back(name, TensorT<S>::leaf({n}, std::vector<S>(n, S(1))));
    };
    auto zeros = [&](const std::string& name, size_t n) {
        p.named.emplace_back(name, TensorT<S>::leaf({n}, std::vector<S>(n, S(0))));
    };

    weight("tok_emb", {v, d});
    weight("pos_emb", {t, d});
    for (int l = 0; l < config.n_layers; ++l) {
        const std::string prefix = "layer" + std::to_string(l) + ".";
        ones(prefix + "ln1.gain", d);
        zeros(prefix + "ln1.bias", d);
        weight(prefix + "attn_qkv", {d, 3 * d});
        weight(prefix + "attn_out", {d, d});
        ones(prefix + "ln2.gain", d);
        zeros(prefix + "ln2.bias", d);
        weight(prefix + "mlp_in", {d, ff});
        weight(prefix + "mlp_out", {ff, d});
    }
    ones("final_ln.gain", d);
    zeros("final_ln.bias", d);
    weight("lm_head", {d, v});
    return p;
}

template <typename S>
TensorT<S> forward(const ModelParamsT<S>& params, const std::vector<int>& token_ids) {
    const ModelConfig& cfg = params.config;
    const size_t t = token_ids.size();
    if (t == 0) throw std::invalid_argument("forward: empty sequence");
    if (t > static_cast<size_t>(cfg.max_seq))
        throw std::invalid_argument("forward: sequence length " + std::to_string(t) +
                                    " exceeds max_seq " + std::to_string(cfg.max_seq));
    const size_t d = static_cast<size_t>(cfg.d_model);
    const size_t heads = static_cast<size_t>(cfg.n_heads);
    const size_t dh = d / heads;
    const S inv_sqrt_dh = static_cast<S>(1.0 / std::sqrt(static_cast<double>(dh)));

    TensorT<S> x = add(embed_rows(params.at("tok_emb"), token_ids),
                       slice_rows(params.at("pos_emb"), 0, t));
    for (int l = 0; l < cfg.n_layers; ++l) {
        const std::string prefix = "layer" + std::to_string(l) + ".";
        TensorT<S> h = layernorm(x, params.at(prefix + "ln1.gain"),
                                 params.at(prefix + "ln1.bias"));
        TensorT<S> qkv = matmul(h, params.at(prefix + "attn_qkv"));
        std::vector<TensorT<S>> head_outs;
        for (size_t hh = 0; hh < heads; ++hh) {
            TensorT<S> q = slice_cols(qkv, hh * dh, dh);
            TensorT<S> k = slice_cols(qkv, d + hh * dh, dh);
            TensorT<S> v = slice_cols(qkv, 2 * d + hh * dh, dh);
            TensorT<S> attn = causal_softmax_rows(scale(matmul(q, transpose(k)), inv_sqrt_dh));
            head_outs.push_back(matmul(attn, v));
        }
        x = add(x, matmul(concat_cols(head_outs), params.at(prefix + "attn_out")));
        TensorT<S> h2 = layernorm(x, params.at(prefix + "ln2.gain"),
                                  params.at(prefix + "ln2.bias"));
        x = add(x, matmul(gelu(matmul(h2, params.at(prefix + "mlp_in"))),
                          params.at(prefix + "mlp_out")));
    }
    x = layernorm(x, params.at("final_ln.gain"), params.at("final_ln.bias"));
    return matmul(x, params.at("lm_head"));
}

// Cross entropy with mean reduction over masked positions of the shifted
// next-token targets.
template <typename S>
TensorT<S> lm_loss(const ModelParamsT<S>& params, const std::vector<int>& input_ids,
                   const std::vector<int>& target_ids, const std::vector<uint8_t>& loss_mask) {
    if (input_ids.size() != target_ids.size() || input_ids.size() != loss_mask.size())
        throw std::invalid_argument("lm_loss: input/target/mask sizes differ");
    bool any = false;
    for (uint8_t b : loss_mask) any = any || (b != 0);
    if (!any) throw std::invalid_argument("lm_loss: empty loss mask");

    std::vector<int> targets(target_ids.size());
    for (size_t i = 0; i < target_ids.size(); ++i)
        targets[i] = loss_mask[i] ? target_ids[i] : kIgnoreId;
    return cross_entropy_mean(forward(params, input_ids), targets, kIgnoreId);
}

// policy "none": everything trainable. policy "all_but_last_layer": only the
// final transformer block, the final layernorm and the LM head train.
template <typename S>
FreezeMask freeze_mask(const ModelParamsT<S>& params, const std::string& policy) {
    FreezeMask mask;
    if (policy == "none") {
        for (const auto& [name, t] : params.named) mask[name] = true;
        return mask;
    }
    if (policy == "all_but_last_layer") {
        const std::string last = "layer" + std::to_string(params.config.n_layers - 1) + ".";
        for (const auto& [name, t] : params.named)
            mask[name] = starts_with(name, last) || starts_with(name, "final_ln.") ||
                         name == "lm_head";
        bool any = false;
        for (const auto& [name, trainable] : mask) any = any || trainable;
        if (!any) throw std::logic_error("freeze_mask: no trainable tensors");
        return mask;
    }
    throw std::invalid_argument("freeze_mask: unknown policy " + policy);
}

template <typename S>
size_t count_trainable(const ModelParamsT<S>& params, const FreezeMask& mask) {
    size_t n = 0;
    for (const auto& [name, t] : params.named) {
        auto it = mask.find(name);
        if (it != mask.end() && it->second) n += t.numel();
    }
    return n;
}

// Deep copy: fresh leaf nodes, so updates to the clone cannot reach the
// original through shared graph nodes.
template <typename S>
ModelParamsT<S> clone_params(const ModelParamsT<S>& params) {
    ModelParamsT<S> out;
    out.config = params.config;
    out.named.reserve(params.named.size());
    for (const auto& [name, t] : params.named)
        out.named.emplace_back(name, TensorT<S>::leaf(t.shape(), t.value()));
    return out;
}

// Incremental decoding state: per-layer KV caches over raw buffers, no graph.
// Logits agree with forward() to float tolerance; sampling sits on top.
template <typename S>
class InferenceContextT {
  public:
    explicit InferenceContextT(const ModelParamsT<S>& params)
        : params_(&params),
          k_cache_(params.config.n_layers),
          v_cache_(params.config.n_layers) {}

    size_t length() const { return pos_; }

    // Feeds one token and returns the next-token logits row [vocab_size].
    std::vector<S> append(int token) {
        const ModelConfig& cfg = params_->config;
        if (pos_ >= static_cast<size_t>(cfg.max_seq))
            throw std::invalid_argument("inference: sequence length exceeds max_seq " +
                                     std::to_string(cfg.max_seq));
        const size_t d = static_cast<size_t>(cfg.d_model);
        const size_t heads = static_cast<size_t>(cfg.n_heads);
        const size_t dh = d / heads;
        const size_t ff = static_cast<size_t>(cfg.ff_dim());
        const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));

        if (token < 0 || token >= cfg.vocab_size)
            throw std::invalid_argument("inference: token id " + std::to_string(token) +
                                        " outside vocab");
        std::vector<S> x(d);
        {
            const auto& tok = params_->at("tok_emb").value();
            const auto& pos = params_->at("pos_emb").value();
            for (size_t j = 0; j < d; ++j)
                x[j] = tok[static_cast<size_t>(token) * d + j] + pos[pos_ * d + j];
        }

        std::vector<S> h(d), qkv(3 * d), attn_out(d), ff_buf(ff), mlp_out(d);
        for (int l = 0; l < cfg.n_layers; ++l) {
            const std::string prefix = "layer" + std::to_string(l) + ".";
            norm_row(x.data(), h.data(), d, params_->at(prefix + "ln1.gain").value(),
                     params_->at(prefix + "ln1.bias").value());
            row_matmul(h.data(), params_->at(prefix + "attn_qkv"), qkv.data());

            auto& kc = k_cache_[static_cast<size_t>(l)];
            auto& vc = v_cache_[static_cast<size_t>(l)];
            kc.insert(kc.end(), qkv.begin() + static_cast<long>(d),
                      qkv.begin() + static_cast<long>(2 * d));
            vc.insert(vc.end(), qkv.begin() + static_cast<long>(2 * d), qkv.end());

            std::vector<S> merged(d);
            const size_t t = pos_ + 1;
            for (size_t hh = 0; hh < heads; ++hh) {
                const S* q = &qkv[hh * dh];
                std::vector<double> scores(t);
                double mx = -1e300;
                for (size_t j = 0; j < t; ++j) {
                    const S* krow = &kc[j * d + hh * dh];
                    double s = 0.0;
                    for (size_t c = 0; c < dh; ++c)
                        s += static_cast<double>(q[c]) * static_cast<double>(krow[c]);
                    scores[j] = s * inv_sqrt_dh;
                    mx = std::max(mx, scores[j]);
                }
                double sum = 0.0;
                for (size_t j = 0; j < t; ++j) {
                    scores[j] = std::exp(scores[j] - mx);
                    sum += scores[j];
                }
                for (size_t c = 0; c < dh; ++c) {
                    double acc = 0.0;
                    for (size_t j = 0; j < t; ++j)
                        acc += scores[j] * static_cast<double>(vc[j * d + hh * dh + c]);
                    merged[hh * dh + c] = static_cast<S>(acc / sum);
                }
            }
            row_matmul(merged.data(), params_->at(prefix + "attn_out"), attn_out.data());
            for (size_t j = 0; j < d; ++j) x[j] += attn_out[j];

            norm_row(x.data(), h.data(), d, params_->at(prefix + "ln2.gain").value(),
                     params_->at(prefix + "ln2.bias").value());
            row_matmul(h.data(), params_->at(prefix + "mlp_in"), ff_buf.data());
            for (size_t j = 0; j < ff; ++j) {
                const double xv = static_cast<double>(ff_buf[j]);
                ff_buf[j] = static_cast<S>(
                    0.5 * xv * (1.0 + std::tanh(0.7978845608028654 * (xv + 0.044715 * xv * xv * xv))));
            }
            row_matmul(ff_buf.data(), params_->at(prefix + "mlp_out"), mlp_out.data());
            for (size_t j = 0; j < d; ++j) x[j] += mlp_out[j];
        }
        norm_row(x.data(), h.data(), d, params_->at("final_ln.gain").value(),
                 params_->at("final_ln.bias").value());
        std::vector<S> logits(static_cast<size_t>(cfg.vocab_size));
        row_matmul(h.data(), params_->at("lm_head"), logits.data());
        ++pos_;
        return logits;
    }

  private:
    static void norm_row(const S* x, S* out, size_t d, const std::vector<S>& gain,
                         const std::vector<S>& bias) {
        double mean = 0.0;
        for (size_t j = 0; j < d; ++j) mean += static_cast<double>(x[j]);
        mean /= static_cast<double>(d);
        double var = 0.0;
        for (size_t j = 0; j < d; ++j) {
            const double c = static_cast<double>(x[j]) - mean;
            var += c * c;
        }
        var /= static_cast<double>(d);
        const double inv = 1.0 / std::sqrt(var + 1e-5);
        for (size_t j = 0; j < d; ++j)
            out[j] = static_cast<S>((static_cast<double>(x[j]) - mean) * inv *
                                        static_cast<double>(gain[j]) +
                                    static_cast<double>(bias[j]));
    }

    // out[1,n] = x[1,k] * W[k,n]
    static void row_matmul(const S* x, const TensorT<S>& w, S* out) {
        const size_t k = w.shape()[0], n = w.shape()[1];
        const auto& wv = w.value();
        std::fill(out, out + n, S(0));
        for (size_t kk = 0; kk < k; ++kk) {
            const S xk = x[kk];
            const S* wrow = &wv[kk * n];
            for (size_t j = 0; j < n; ++j) out[j] += xk * wrow[j];
        }
    }

    const ModelParamsT<S>* params_;
    std::vector<std::vector<S>> k_cache_, v_cache_;
    size_t pos_ = 0;
};

using ModelParams = ModelParamsT<float>;
using InferenceContext = InferenceContextT<float>;

}  // namespace radsum
