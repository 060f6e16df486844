#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "eventlm/codec.hpp"
#include "eventlm/errors.hpp"
#include "eventlm/kernels.hpp"
#include "eventlm/rng.hpp"

namespace eventlm {

struct ModelConfig {
    int vocab_size = 523;
    int d_model = 128;
    int n_layers = 4;
    int n_heads = 4;
    int d_ff = 512;
    int max_context = 1024;
    double dropout = 0.0;
    double rope_base = 10000.0;

    [[nodiscard]] int head_dim() const { return d_model / n_heads; }
    void validate() const {
        require(vocab_size > 0 && d_model > 0 && n_layers > 0 && n_heads > 0 && d_ff > 0 &&
                    max_context > 0,
                Errc::shape_mismatch, "model dimensions must be positive");
        require(d_model % n_heads == 0, Errc::shape_mismatch, "d_model must be divisible by n_heads");
        require(head_dim() % 2 == 0, Errc::shape_mismatch, "head dimension must be even for rotary pairs");
        require(dropout >= 0.0 && dropout < 1.0, Errc::shape_mismatch, "dropout must lie in [0, 1)");
    }
    bool operator==(const ModelConfig&) const = default;
};

// All parameters in one flat buffer with named, shaped views. Gradients and
// optimizer state reuse the same layout by index.
template <typename S>
struct TensorStore {
    struct Entry {
        std::string name;
        int rows = 0;
        int cols = 0;          // 0 for vectors
        std::size_t offset = 0;
        std::size_t size = 0;
        bool matrix = false;   // receives weight decay
        bool trainable = true;
    };

    std::vector<Entry> entries;
    std::vector<S> data;

    std::size_t add_matrix(std::string name, int rows, int cols) {
        return add(std::move(name), rows, cols, true);
    }
    std::size_t add_vector(std::string name, int rows) { return add(std::move(name), rows, 0, false); }

    [[nodiscard]] const Entry& entry(std::string_view name) const {
        for (const Entry& e : entries) {
            if (e.name == name) return e;
        }
        raise(Errc::shape_mismatch, "unknown tensor '" + std::string(name) + "'");
    }
    [[nodiscard]] Entry& entry(std::string_view name) {
        for (Entry& e : entries) {
            if (e.name == name) return e;
        }
        raise(Errc::shape_mismatch, "unknown tensor '" + std::string(name) + "'");
    }

    [[nodiscard]] S* ptr(std::size_t offset) { return data.data() + offset; }
    [[nodiscard]] const S* ptr(std::size_t offset) const { return data.data() + offset; }

private:
    std::size_t add(std::string name, int rows, int cols, bool matrix) {
        Entry e;
        e.name = std::move(name);
        e.rows = rows;
        e.cols = cols;
        e.offset = data.size();
        e.size = static_cast<std::size_t>(rows) * (cols == 0 ? 1 : cols);
        e.matrix = matrix;
        const std::size_t offset = e.offset;
        data.resize(data.size() + e.size, S{});
        entries.push_back(std::move(e));
        return offset;
    }
};

// Decoder-only transformer: pre-norm RMSNorm, rotary attention, SwiGLU FFN,
// untied input/output embeddings.
template <typename S>
struct Model {
    ModelConfig config;
    TensorStore<S> store;

    struct LayerOffsets {
        std::size_t att_norm_w, wq, wk, wv, wo, ffn_norm_w, w_gate, w_up, w_down;
    };
    std::size_t tok_embed = 0, out_norm_w = 0, lm_head = 0;
    std::vector<LayerOffsets> layers;

    [[nodiscard]] std::size_t parameter_count() const { return store.data.size(); }
    [[nodiscard]] const S* p(std::size_t offset) const { return store.ptr(offset); }
    [[nodiscard]] S* p(std::size_t offset) { return store.ptr(offset); }

    // Builds the tensor layout without touching values (used by init and by
    // checkpoint loading).
    static Model with_layout(const ModelConfig& config) {
        config.validate();
        Model model;
        model.config = config;
        auto& st = model.store;
        model.tok_embed = st.add_matrix("tok_embed", config.vocab_size, config.d_model);
        model.layers.resize(static_cast<std::size_t>(config.n_layers));
        for (int l = 0; l < config.n_layers; ++l) {
            const std::string prefix = "layers." + std::to_string(l) + ".";
            LayerOffsets& off = model.layers[static_cast<std::size_t>(l)];
            off.att_norm_w = st.add_vector(prefix + "att_norm.w", config.d_model);
            off.wq = st.add_matrix(prefix + "att.wq", config.d_model, config.d_model);
            off.wk = st.add_matrix(prefix + "att.wk", config.d_model, config.d_model);
            off.wv = st.add_matrix(prefix + "att.wv", config.d_model, config.d_model);
            off.wo = st.add_matrix(prefix + "att.wo", config.d_model, config.d_model);
            off.ffn_norm_w = st.add_vector(prefix + "ffn_norm.w", config.d_model);
            off.w_gate = st.add_matrix(prefix + "ffn.w_gate", config.d_ff, config.d_model);
            off.w_up = st.add_matrix(prefix + "ffn.w_up", config.d_ff, config.d_model);
            off.w_down = st.add_matrix(prefix + "ffn.w_down", config.d_model, config.d_ff);
        }
        model.out_norm_w = st.add_vector("out_norm.w", config.d_model);
        model.lm_head = st.add_matrix("lm_head", config.vocab_size, config.d_model);
        return model;
    }

    // Random initialisation: N(0, 0.02) everywhere, residual output
    // projections scaled down by sqrt(2 * n_layers), norm weights at one.
    static Model init(const ModelConfig& config, std::uint64_t seed) {
        Model model = with_layout(config);
        const double residual_scale = 1.0 / std::sqrt(2.0 * config.n_layers);
        for (auto& entry : model.store.entries) {
            S* values = model.store.ptr(entry.offset);
            if (!entry.matrix) {
                for (std::size_t j = 0; j < entry.size; ++j) values[j] = S(1);
                continue;
            }
            double sigma = 0.02;
            if (entry.name.ends_with("att.wo") || entry.name.ends_with("ffn.w_down")) {
                sigma *= residual_scale;
            }
            auto rng = make_rng(seed, "init." + entry.name);
            std::normal_distribution<double> normal(0.0, sigma);
            for (std::size_t j = 0; j < entry.size; ++j) values[j] = static_cast<S>(normal(rng));
        }
        return model;
    }

    template <typename T>
    [[nodiscard]] Model<T> cast() const {
        Model<T> other = Model<T>::with_layout(config);
        for (std::size_t j = 0; j < store.data.size(); ++j) {
            other.store.data[j] = static_cast<T>(store.data[j]);
        }
        for (std::size_t e = 0; e < store.entries.size(); ++e) {
            other.store.entries[e].trainable = store.entries[e].trainable;
        }
        return other;
    }

    // Zero out gradient ranges of tensors marked frozen.
    void zero_frozen(std::vector<S>& grads) const {
        for (const auto& entry : store.entries) {
            if (entry.trainable) continue;
            for (std::size_t j = 0; j < entry.size; ++j) grads[entry.offset + j] = S{};
        }
    }
};

// Scratch buffers for the training pass; reusable across calls.
template <typename S>
struct Workspace {
    struct LayerActs {
        std::vector<S> normed1, q, k, v, probs, ctx, x_mid, normed2, gate, up, gated;
        std::vector<S> inv1, inv2;
        std::vector<S> drop_att, drop_ffn; // inverted-dropout multipliers (empty when disabled)
    };
    std::vector<std::vector<S>> residual; // [n_layers + 1][rows * d]
    std::vector<LayerActs> acts;
    std::vector<S> final_normed, final_inv, logits, row_loss;
    std::vector<S> d_res, d_mid, d_normed, dq, dk, dv, dctx, dgate, dup, dgated, dprobs;

    void resize(const ModelConfig& config, int rows, bool for_backward, bool with_dropout) {
        const auto r = static_cast<std::size_t>(rows);
        const auto d = static_cast<std::size_t>(config.d_model);
        const auto f = static_cast<std::size_t>(config.d_ff);
        const auto v = static_cast<std::size_t>(config.vocab_size);
        const auto h = static_cast<std::size_t>(config.n_heads);
        residual.resize(static_cast<std::size_t>(config.n_layers) + 1);
        for (auto& buffer : residual) buffer.assign(r * d, S{});
        acts.resize(static_cast<std::size_t>(config.n_layers));
        for (auto& a : acts) {
            a.normed1.assign(r * d, S{});
            a.q.assign(r * d, S{});
            a.k.assign(r * d, S{});
            a.v.assign(r * d, S{});
            a.probs.assign(h * r * r, S{});
            a.ctx.assign(r * d, S{});
            a.x_mid.assign(r * d, S{});
            a.normed2.assign(r * d, S{});
            a.gate.assign(r * f, S{});
            a.up.assign(r * f, S{});
            a.gated.assign(r * f, S{});
            a.inv1.assign(r, S{});
            a.inv2.assign(r, S{});
            if (with_dropout) {
                a.drop_att.assign(r * d, S{});
                a.drop_ffn.assign(r * d, S{});
            } else {
                a.drop_att.clear();
                a.drop_ffn.clear();
            }
        }
        final_normed.assign(r * d, S{});
        final_inv.assign(r, S{});
        logits.assign(r * v, S{});
        row_loss.assign(r, S{});
        if (for_backward) {
            d_res.assign(r * d, S{});
            d_mid.assign(r * d, S{});
            d_normed.assign(r * d, S{});
            dq.assign(r * d, S{});
            dk.assign(r * d, S{});
            dv.assign(r * d, S{});
            dctx.assign(r * d, S{});
            dgate.assign(r * f, S{});
            dup.assign(r * f, S{});
            dgated.assign(r * f, S{});
            dprobs.assign(h * r * r, S{});
        }
    }
};

namespace detail {

// Shared transformer trunk on `rows` tokens starting at absolute position 0;
// leaves per-layer activations in the workspace and the final hidden states
// in ws.final_normed.
template <typename S>
void train_forward_trunk(const Model<S>& model, std::span<const TokenId> tokens, Workspace<S>& ws,
                         bool with_dropout, std::uint64_t dropout_seed) {
    using namespace kernels;
    const ModelConfig& cfg = model.config;
    const int rows = static_cast<int>(tokens.size());
    const int d = cfg.d_model;
    const int f = cfg.d_ff;

    for (int r = 0; r < rows; ++r) {
        require(tokens[static_cast<std::size_t>(r)] >= 0 &&
                    tokens[static_cast<std::size_t>(r)] < cfg.vocab_size,
                Errc::shape_mismatch, "token id outside vocabulary");
    }
    embedding_forward(model.p(model.tok_embed), tokens.data(), ws.residual[0].data(), rows, d);

    for (int l = 0; l < cfg.n_layers; ++l) {
        const auto& off = model.layers[static_cast<std::size_t>(l)];
        auto& a = ws.acts[static_cast<std::size_t>(l)];
        const std::vector<S>& x_in = ws.residual[static_cast<std::size_t>(l)];
        std::vector<S>& x_out = ws.residual[static_cast<std::size_t>(l) + 1];

        if (with_dropout) {
            // Inverted dropout multipliers, deterministic per (seed, layer).
            auto rng = make_rng(dropout_seed, "dropout", static_cast<std::uint64_t>(l));
            std::uniform_real_distribution<double> uniform(0.0, 1.0);
            const S keep_scale = static_cast<S>(1.0 / (1.0 - cfg.dropout));
            for (std::size_t j = 0; j < a.drop_att.size(); ++j) {
                a.drop_att[j] = uniform(rng) < cfg.dropout ? S{} : keep_scale;
            }
            for (std::size_t j = 0; j < a.drop_ffn.size(); ++j) {
                a.drop_ffn[j] = uniform(rng) < cfg.dropout ? S{} : keep_scale;
            }
        }

        rmsnorm_forward(x_in.data(), model.p(off.att_norm_w), a.normed1.data(), a.inv1.data(), rows, d);
        linear_forward(a.normed1.data(), model.p(off.wq), a.q.data(), rows, d, d);
        linear_forward(a.normed1.data(), model.p(off.wk), a.k.data(), rows, d, d);
        linear_forward(a.normed1.data(), model.p(off.wv), a.v.data(), rows, d, d);
        rope_forward(a.q.data(), rows, 0, cfg.n_heads, cfg.head_dim(), cfg.rope_base);
        rope_forward(a.k.data(), rows, 0, cfg.n_heads, cfg.head_dim(), cfg.rope_base);
        attention_forward(a.q.data(), a.k.data(), a.v.data(), a.probs.data(), a.ctx.data(), rows, rows, 0,
                          cfg.n_heads, cfg.head_dim());
        // x_mid = x_in + dropout(wo(ctx))
        linear_forward(a.ctx.data(), model.p(off.wo), a.x_mid.data(), rows, d, d);
        for (std::size_t j = 0; j < a.x_mid.size(); ++j) {
            const S branch = with_dropout ? a.x_mid[j] * a.drop_att[j] : a.x_mid[j];
            a.x_mid[j] = x_in[j] + branch;
        }

        rmsnorm_forward(a.x_mid.data(), model.p(off.ffn_norm_w), a.normed2.data(), a.inv2.data(), rows, d);
        linear_forward(a.normed2.data(), model.p(off.w_gate), a.gate.data(), rows, f, d);
        linear_forward(a.normed2.data(), model.p(off.w_up), a.up.data(), rows, f, d);
        silu_gate_forward(a.gate.data(), a.up.data(), a.gated.data(), rows, f);
        linear_forward(a.gated.data(), model.p(off.w_down), x_out.data(), rows, d, f);
        for (std::size_t j = 0; j < x_out.size(); ++j) {
            const S branch = with_dropout ? x_out[j] * a.drop_ffn[j] : x_out[j];
            x_out[j] = a.x_mid[j] + branch;
        }
    }

    rmsnorm_forward(ws.residual[static_cast<std::size_t>(cfg.n_layers)].data(), model.p(model.out_norm_w),
                    ws.final_normed.data(), ws.final_inv.data(), rows, cfg.d_model);
}

} // namespace detail

template <typename S>
struct NllResult {
    S loss{};
    int masked_count = 0;
};

// Mean negative log-likelihood of the next-token targets selected by
// `target_mask` (size tokens.size() - 1; target r is tokens[r + 1]). When
// `grads` is non-null the full backward pass accumulates into it. Dropout is
// active only when grads are requested and config.dropout > 0.
template <typename S>
NllResult<S> sequence_nll(const Model<S>& model, std::span<const TokenId> tokens,
                          std::span<const std::uint8_t> target_mask, std::vector<S>* grads,
                          Workspace<S>& ws, std::uint64_t dropout_seed = 0) {
    using namespace kernels;
    const ModelConfig& cfg = model.config;
    const int rows = static_cast<int>(tokens.size());
    require(rows >= 2, Errc::shape_mismatch, "need at least two tokens for next-token loss");
    require(rows <= cfg.max_context, Errc::context_overflow,
            std::to_string(rows) + " tokens exceed the context of " + std::to_string(cfg.max_context));
    require(static_cast<int>(target_mask.size()) == rows - 1, Errc::shape_mismatch,
            "mask must cover tokens.size() - 1 target positions");
    int masked = 0;
    for (std::uint8_t m : target_mask) masked += m ? 1 : 0;
    require(masked > 0, Errc::empty_loss_mask, "no position is marked for the loss");
    if (grads) {
        require(grads->size() == model.store.data.size(), Errc::shape_mismatch,
                "gradient buffer does not match the parameter layout");
    }

    const bool with_dropout = grads != nullptr && cfg.dropout > 0.0;
    ws.resize(cfg, rows, grads != nullptr, with_dropout);
    detail::train_forward_trunk(model, tokens, ws, with_dropout, dropout_seed);

    const int d = cfg.d_model;
    const int f = cfg.d_ff;
    const int v = cfg.vocab_size;
    const int loss_rows = rows - 1;

    // Logits only for positions that predict a real next token.
    linear_forward(ws.final_normed.data(), model.p(model.lm_head), ws.logits.data(), loss_rows, v, d);
    NllResult<S> result;
    result.masked_count = masked;
    result.loss = masked_cross_entropy(ws.logits.data(), tokens.data() + 1, target_mask.data(), loss_rows,
                                       v, grads != nullptr, ws.row_loss.data());
    require(std::isfinite(static_cast<double>(result.loss)), Errc::training_diverged,
            "non-finite loss");
    if (!grads) return result;

    // ---- backward ----
    std::vector<S>& g = *grads;
    // d final_normed (rows-1 live rows; the last position predicts nothing).
    std::fill(ws.d_res.begin(), ws.d_res.end(), S{});
    linear_backward_input(ws.logits.data(), model.p(model.lm_head), ws.d_res.data(), loss_rows, v, d);
    linear_backward_weight(ws.logits.data(), ws.final_normed.data(), g.data() + model.lm_head, loss_rows,
                           v, d);
    // Final norm backward into d_mid (gradient wrt residual[n_layers]).
    std::fill(ws.d_mid.begin(), ws.d_mid.end(), S{});
    rmsnorm_backward(ws.residual[static_cast<std::size_t>(cfg.n_layers)].data(), model.p(model.out_norm_w),
                     ws.final_inv.data(), ws.d_res.data(), ws.d_mid.data(), g.data() + model.out_norm_w,
                     rows, d);
    ws.d_res.swap(ws.d_mid); // d_res now holds d residual[n_layers]

    for (int l = cfg.n_layers - 1; l >= 0; --l) {
        const auto& off = model.layers[static_cast<std::size_t>(l)];
        auto& a = ws.acts[static_cast<std::size_t>(l)];
        const std::vector<S>& x_in = ws.residual[static_cast<std::size_t>(l)];

        // FFN branch: x_out = x_mid + dropout(w_down(gated))
        if (with_dropout) {
            for (std::size_t j = 0; j < ws.d_normed.size(); ++j) ws.d_normed[j] = ws.d_res[j] * a.drop_ffn[j];
        } else {
            ws.d_normed = ws.d_res;
        }
        // ws.d_normed currently holds d(ffn branch output).
        std::fill(ws.dgated.begin(), ws.dgated.end(), S{});
        linear_backward_input(ws.d_normed.data(), model.p(off.w_down), ws.dgated.data(), rows, d, f);
        linear_backward_weight(ws.d_normed.data(), a.gated.data(), g.data() + off.w_down, rows, d, f);
        silu_gate_backward(a.gate.data(), a.up.data(), ws.dgated.data(), ws.dgate.data(), ws.dup.data(),
                           rows, f);
        std::fill(ws.d_normed.begin(), ws.d_normed.end(), S{});
        linear_backward_input(ws.dgate.data(), model.p(off.w_gate), ws.d_normed.data(), rows, f, d);
        linear_backward_input(ws.dup.data(), model.p(off.w_up), ws.d_normed.data(), rows, f, d);
        linear_backward_weight(ws.dgate.data(), a.normed2.data(), g.data() + off.w_gate, rows, f, d);
        linear_backward_weight(ws.dup.data(), a.normed2.data(), g.data() + off.w_up, rows, f, d);
        // d x_mid = d_res (residual) + rmsnorm backward of d_normed.
        ws.d_mid = ws.d_res;
        rmsnorm_backward(a.x_mid.data(), model.p(off.ffn_norm_w), a.inv2.data(), ws.d_normed.data(),
                         ws.d_mid.data(), g.data() + off.ffn_norm_w, rows, d);

        // Attention branch: x_mid = x_in + dropout(wo(ctx))
        if (with_dropout) {
            for (std::size_t j = 0; j < ws.d_normed.size(); ++j) ws.d_normed[j] = ws.d_mid[j] * a.drop_att[j];
        } else {
            ws.d_normed = ws.d_mid;
        }
        std::fill(ws.dctx.begin(), ws.dctx.end(), S{});
        linear_backward_input(ws.d_normed.data(), model.p(off.wo), ws.dctx.data(), rows, d, d);
        linear_backward_weight(ws.d_normed.data(), a.ctx.data(), g.data() + off.wo, rows, d, d);
        std::fill(ws.dk.begin(), ws.dk.end(), S{});
        std::fill(ws.dv.begin(), ws.dv.end(), S{});
        attention_backward(a.q.data(), a.k.data(), a.v.data(), a.probs.data(), ws.dctx.data(),
                           ws.dq.data(), ws.dk.data(), ws.dv.data(), ws.dprobs.data(), rows, rows, 0,
                           cfg.n_heads, cfg.head_dim());
        rope_backward(ws.dq.data(), rows, 0, cfg.n_heads, cfg.head_dim(), cfg.rope_base);
        rope_backward(ws.dk.data(), rows, 0, cfg.n_heads, cfg.head_dim(), cfg.rope_base);
        std::fill(ws.d_normed.begin(), ws.d_normed.end(), S{});
        linear_backward_input(ws.dq.data(), model.p(off.wq), ws.d_normed.data(), rows, d, d);
        linear_backward_input(ws.dk.data(), model.p(off.wk), ws.d_normed.data(), rows, d, d);
        linear_backward_input(ws.dv.data(), model.p(off.wv), ws.d_normed.data(), rows, d, d);
        linear_backward_weight(ws.dq.data(), a.normed1.data(), g.data() + off.wq, rows, d, d);
        linear_backward_weight(ws.dk.data(), a.normed1.data(), g.data() + off.wk, rows, d, d);
        linear_backward_weight(ws.dv.data(), a.normed1.data(), g.data() + off.wv, rows, d, d);
        // d x_in = d x_mid (residual) + rmsnorm backward.
        ws.d_res = ws.d_mid;
        rmsnorm_backward(x_in.data(), model.p(off.att_norm_w), a.inv1.data(), ws.d_normed.data(),
                         ws.d_res.data(), g.data() + off.att_norm_w, rows, d);
    }

    embedding_backward(ws.d_res.data(), tokens.data(), g.data() + model.tok_embed, rows, d);
    model.zero_frozen(g);
    return result;
}

// Post-norm hidden states at selected positions after a full forward pass
// (no logits computed). Used to condition the intensity head.
template <typename S>
std::vector<S> hidden_states(const Model<S>& model, std::span<const TokenId> tokens,
                             std::span<const int> positions, Workspace<S>& ws) {
    const ModelConfig& cfg = model.config;
    const int rows = static_cast<int>(tokens.size());
    require(rows >= 1, Errc::shape_mismatch, "empty token stream");
    require(rows <= cfg.max_context, Errc::context_overflow,
            std::to_string(rows) + " tokens exceed the context of " + std::to_string(cfg.max_context));
    ws.resize(cfg, rows, false, false);
    detail::train_forward_trunk(model, tokens, ws, false, 0);
    std::vector<S> out(positions.size() * static_cast<std::size_t>(cfg.d_model));
    for (std::size_t i = 0; i < positions.size(); ++i) {
        const int pos = positions[i];
        require(pos >= 0 && pos < rows, Errc::shape_mismatch, "hidden position out of range");
        for (int j = 0; j < cfg.d_model; ++j) {
            out[i * static_cast<std::size_t>(cfg.d_model) + j] =
                ws.final_normed[static_cast<std::size_t>(pos) * cfg.d_model + j];
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Incremental inference with a KV cache.

template <typename S>
struct KvCache {
    int length = 0;
    std::vector<std::vector<S>> k, v; // per layer, [max_context * d_model]

    void init(const ModelConfig& config) {
        length = 0;
        k.assign(static_cast<std::size_t>(config.n_layers),
                 std::vector<S>(static_cast<std::size_t>(config.max_context) * config.d_model, S{}));
        v = k;
    }
    // Copy of the first `len` cached positions (cheap branch point for
    // several prompts sharing one document prefix).
    [[nodiscard]] KvCache prefix_copy(int len) const {
        require(len >= 0 && len <= length, Errc::shape_mismatch, "prefix length outside cache");
        KvCache copy;
        copy.length = len;
        copy.k.resize(k.size());
        copy.v.resize(v.size());
        for (std::size_t l = 0; l < k.size(); ++l) {
            copy.k[l] = k[l];
            copy.v[l] = v[l];
        }
        return copy;
    }
};

template <typename S>
struct InferScratch {
    std::vector<S> x, normed, q, k_new, v_new, probs, ctx, branch, gate, up, gated, inv, logits;
};

// Appends `tokens` to the cache. Optionally writes the post-norm hidden of
// every new position to `hidden_out` ([n, d_model]) and/or the logits of the
// last new position to `last_logits` ([vocab_size]).
template <typename S>
void extend(const Model<S>& model, KvCache<S>& cache, std::span<const TokenId> tokens, S* hidden_out,
            S* last_logits, InferScratch<S>& scratch) {
    using namespace kernels;
    const ModelConfig& cfg = model.config;
    const int n = static_cast<int>(tokens.size());
    require(n >= 1, Errc::shape_mismatch, "nothing to extend with");
    require(cache.length + n <= cfg.max_context, Errc::context_overflow,
            "KV cache would exceed the context of " + std::to_string(cfg.max_context));
    require(static_cast<int>(cache.k.size()) == cfg.n_layers, Errc::shape_mismatch,
            "cache not initialised for this model");

    const int d = cfg.d_model;
    const int f = cfg.d_ff;
    const int pos0 = cache.length;
    const int kv_len = pos0 + n;
    const auto nd = static_cast<std::size_t>(n) * d;
    scratch.x.assign(nd, S{});
    scratch.normed.assign(nd, S{});
    scratch.q.assign(nd, S{});
    scratch.k_new.assign(nd, S{});
    scratch.v_new.assign(nd, S{});
    scratch.probs.assign(static_cast<std::size_t>(cfg.n_heads) * n * kv_len, S{});
    scratch.ctx.assign(nd, S{});
    scratch.branch.assign(nd, S{});
    scratch.gate.assign(static_cast<std::size_t>(n) * f, S{});
    scratch.up.assign(static_cast<std::size_t>(n) * f, S{});
    scratch.gated.assign(static_cast<std::size_t>(n) * f, S{});
    scratch.inv.assign(static_cast<std::size_t>(n), S{});

    for (int r = 0; r < n; ++r) {
        require(tokens[static_cast<std::size_t>(r)] >= 0 &&
                    tokens[static_cast<std::size_t>(r)] < cfg.vocab_size,
                Errc::shape_mismatch, "token id outside vocabulary");
    }
    embedding_forward(model.p(model.tok_embed), tokens.data(), scratch.x.data(), n, d);

    for (int l = 0; l < cfg.n_layers; ++l) {
        const auto& off = model.layers[static_cast<std::size_t>(l)];
        S* k_cache = cache.k[static_cast<std::size_t>(l)].data();
        S* v_cache = cache.v[static_cast<std::size_t>(l)].data();

        rmsnorm_forward(scratch.x.data(), model.p(off.att_norm_w), scratch.normed.data(),
                        scratch.inv.data(), n, d);
        linear_forward(scratch.normed.data(), model.p(off.wq), scratch.q.data(), n, d, d);
        linear_forward(scratch.normed.data(), model.p(off.wk), scratch.k_new.data(), n, d, d);
        linear_forward(scratch.normed.data(), model.p(off.wv), scratch.v_new.data(), n, d, d);
        rope_forward(scratch.q.data(), n, pos0, cfg.n_heads, cfg.head_dim(), cfg.rope_base);
        rope_forward(scratch.k_new.data(), n, pos0, cfg.n_heads, cfg.head_dim(), cfg.rope_base);
        // Append the new keys/values to this layer's cache, then attend over
        // the whole prefix.
        for (int r = 0; r < n; ++r) {
            for (int j = 0; j < d; ++j) {
                k_cache[static_cast<std::size_t>(pos0 + r) * d + j] =
                    scratch.k_new[static_cast<std::size_t>(r) * d + j];
                v_cache[static_cast<std::size_t>(pos0 + r) * d + j] =
                    scratch.v_new[static_cast<std::size_t>(r) * d + j];
            }
        }
        attention_forward(scratch.q.data(), k_cache, v_cache, scratch.probs.data(), scratch.ctx.data(), n,
                          kv_len, pos0, cfg.n_heads, cfg.head_dim());
        linear_forward(scratch.ctx.data(), model.p(off.wo), scratch.branch.data(), n, d, d);
        for (std::size_t j = 0; j < nd; ++j) scratch.x[j] += scratch.branch[j];

        rmsnorm_forward(scratch.x.data(), model.p(off.ffn_norm_w), scratch.normed.data(),
                        scratch.inv.data(), n, d);
        linear_forward(scratch.normed.data(), model.p(off.w_gate), scratch.gate.data(), n, f, d);
        linear_forward(scratch.normed.data(), model.p(off.w_up), scratch.up.data(), n, f, d);
        silu_gate_forward(scratch.gate.data(), scratch.up.data(), scratch.gated.data(), n, f);
        linear_forward(scratch.gated.data(), model.p(off.w_down), scratch.branch.data(), n, d, f);
        for (std::size_t j = 0; j < nd; ++j) scratch.x[j] += scratch.branch[j];
    }

    rmsnorm_forward(scratch.x.data(), model.p(model.out_norm_w), scratch.normed.data(), scratch.inv.data(),
                    n, d);
    cache.length = kv_len;
    if (hidden_out) {
        for (std::size_t j = 0; j < nd; ++j) hidden_out[j] = scratch.normed[j];
    }
    if (last_logits) {
        linear_forward(scratch.normed.data() + static_cast<std::size_t>(n - 1) * d, model.p(model.lm_head),
                       last_logits, 1, cfg.vocab_size, d);
    }
}

struct SampleOptions {
    bool greedy = true;
    double temperature = 1.0;
    double top_p = 1.0;
    int max_new_tokens = 96;
    std::uint64_t seed = 0;
};

// Feeds `suffix` (the tail of a prompt whose prefix is already cached), then
// samples until the stop token, the token budget, or the end of the context.
// Returns the generated tokens including the stop token when one is emitted.
template <typename S>
std::vector<TokenId> generate(const Model<S>& model, KvCache<S>& cache, std::span<const TokenId> suffix,
                              const SampleOptions& options, TokenId stop_token,
                              InferScratch<S>& scratch) {
    require(!suffix.empty(), Errc::shape_mismatch, "prompt suffix must not be empty");
    require(options.temperature > 0.0, Errc::invalid_parameter, "temperature must be positive");
    require(options.top_p > 0.0 && options.top_p <= 1.0, Errc::invalid_parameter,
            "top_p must lie in (0, 1]");
    std::vector<S> logits(static_cast<std::size_t>(model.config.vocab_size));
    extend<S>(model, cache, suffix, nullptr, logits.data(), scratch);

    auto rng = std::mt19937_64(options.seed);
    std::vector<TokenId> out;
    for (int step = 0; step < options.max_new_tokens; ++step) {
        TokenId next;
        if (options.greedy) {
            next = 0;
            for (int i = 1; i < model.config.vocab_size; ++i) {
                if (logits[static_cast<std::size_t>(i)] > logits[static_cast<std::size_t>(next)]) next = i;
            }
        } else {
            // Temperature + nucleus sampling over the softmax distribution.
            std::vector<std::pair<S, TokenId>> scored(static_cast<std::size_t>(model.config.vocab_size));
            S max_logit = logits[0];
            for (int i = 1; i < model.config.vocab_size; ++i) max_logit = std::max(max_logit, logits[static_cast<std::size_t>(i)]);
            double total = 0.0;
            for (int i = 0; i < model.config.vocab_size; ++i) {
                const double p = std::exp((static_cast<double>(logits[static_cast<std::size_t>(i)]) -
                                           static_cast<double>(max_logit)) /
                                          options.temperature);
                scored[static_cast<std::size_t>(i)] = {static_cast<S>(p), i};
                total += p;
            }
            std::sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) {
                return a.first != b.first ? a.first > b.first : a.second < b.second;
            });
            const double cut = options.top_p * total;
            double kept = 0.0;
            std::size_t keep = 0;
            while (keep < scored.size() && kept < cut) {
                kept += static_cast<double>(scored[keep].first);
                ++keep;
            }
            std::uniform_real_distribution<double> uniform(0.0, kept);
            double mark = uniform(rng);
            next = scored[keep - 1].second;
            for (std::size_t i = 0; i < keep; ++i) {
                mark -= static_cast<double>(scored[i].first);
                if (mark <= 0.0) {
                    next = scored[i].second;
                    break;
                }
            }
        }
        out.push_back(next);
        if (next == stop_token) break;
        if (cache.length + 1 > model.config.max_context) break; // context exhausted
        const TokenId fed = next;
        extend<S>(model, cache, std::span<const TokenId>(&fed, 1), nullptr, logits.data(), scratch);
    }
    return out;
}

} // namespace eventlm
