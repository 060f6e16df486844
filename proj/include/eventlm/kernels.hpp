#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>

#include "eventlm/codec.hpp"

// Dense kernels shared by training and inference. Parallel loops are laid out
// so that every output element is written by exactly one thread and every
// inner reduction runs in a fixed serial order; results are therefore
// bit-identical for any thread count (and identical to the serial reference
// implementations in kernels_reference.hpp up to floating-point reassociation
// inside the multi-accumulator dot product).

namespace eventlm::kernels {

// Runtime switch consulted by every parallel region; tests flip it to compare
// threaded and serial execution of the same code path.
inline bool& parallel_enabled() {
    static bool enabled = true;
    return enabled;
}

// Fixed-order dot product over sixteen independent accumulator lanes: wide
// enough for the compiler to keep several SIMD FMA chains in flight instead
// of serialising on one accumulator's latency. The summation order is fixed,
// so results do not depend on the thread count.
template <typename S>
[[nodiscard]] inline S dot(const S* __restrict__ a, const S* __restrict__ b, int n) {
    constexpr int lanes = 16;
    S acc[lanes] = {};
    int i = 0;
    for (; i + lanes <= n; i += lanes) {
        for (int k = 0; k < lanes; ++k) acc[k] += a[i + k] * b[i + k];
    }
    for (const int base = i; i < n; ++i) acc[i - base] += a[i] * b[i];
    S pair[lanes / 2];
    for (int k = 0; k < lanes / 2; ++k) pair[k] = acc[2 * k] + acc[2 * k + 1];
    S quad[lanes / 4];
    for (int k = 0; k < lanes / 4; ++k) quad[k] = pair[2 * k] + pair[2 * k + 1];
    return ((quad[0] + quad[1]) + (quad[2] + quad[3]));
}

template <typename S>
inline void axpy(S* __restrict__ y, const S* __restrict__ x, S a, int n) {
    for (int i = 0; i < n; ++i) y[i] += a * x[i];
}

// y[r, o] = sum_i x[r, i] * w[o, i]         x: [rows, in], w: [out, in]
template <typename S>
void linear_forward(const S* x, const S* w, S* y, int rows, int out, int in) {
#pragma omp parallel for collapse(2) schedule(static) if (parallel_enabled())
    for (int r = 0; r < rows; ++r) {
        for (int o = 0; o < out; ++o) {
            y[static_cast<std::size_t>(r) * out + o] =
                dot(x + static_cast<std::size_t>(r) * in, w + static_cast<std::size_t>(o) * in, in);
        }
    }
}

// dx[r, i] += sum_o dy[r, o] * w[o, i]
template <typename S>
void linear_backward_input(const S* dy, const S* w, S* dx, int rows, int out, int in) {
#pragma omp parallel for schedule(static) if (parallel_enabled())
    for (int r = 0; r < rows; ++r) {
        S* dx_row = dx + static_cast<std::size_t>(r) * in;
        const S* dy_row = dy + static_cast<std::size_t>(r) * out;
        for (int o = 0; o < out; ++o) {
            const S g = dy_row[o];
            if (g != S{}) axpy(dx_row, w + static_cast<std::size_t>(o) * in, g, in);
        }
    }
}

// dw[o, i] += sum_r dy[r, o] * x[r, i]
template <typename S>
void linear_backward_weight(const S* dy, const S* x, S* dw, int rows, int out, int in) {
#pragma omp parallel for schedule(static) if (parallel_enabled())
    for (int o = 0; o < out; ++o) {
        S* dw_row = dw + static_cast<std::size_t>(o) * in;
        for (int r = 0; r < rows; ++r) {
            const S g = dy[static_cast<std::size_t>(r) * out + o];
            if (g != S{}) axpy(dw_row, x + static_cast<std::size_t>(r) * in, g, in);
        }
    }
}

// y[r, :] = table[ids[r], :]
template <typename S>
void embedding_forward(const S* table, const TokenId* ids, S* y, int rows, int dim) {
#pragma omp parallel for schedule(static) if (parallel_enabled())
    for (int r = 0; r < rows; ++r) {
        const S* src = table + static_cast<std::size_t>(ids[r]) * dim;
        S* dst = y + static_cast<std::size_t>(r) * dim;
        for (int i = 0; i < dim; ++i) dst[i] = src[i];
    }
}

// dtable[ids[r], :] += dy[r, :]; parallel over columns because several rows
// may share one token id.
template <typename S>
void embedding_backward(const S* dy, const TokenId* ids, S* dtable, int rows, int dim) {
#pragma omp parallel for schedule(static) if (parallel_enabled())
    for (int i = 0; i < dim; ++i) {
        for (int r = 0; r < rows; ++r) {
            dtable[static_cast<std::size_t>(ids[r]) * dim + i] +=
                dy[static_cast<std::size_t>(r) * dim + i];
        }
    }
}

inline constexpr double rmsnorm_eps = 1e-5;

// y[r, i] = x[r, i] * inv_rms[r] * w[i], inv_rms = 1/sqrt(mean(x^2) + eps)
template <typename S>
void rmsnorm_forward(const S* x, const S* w, S* y, S* inv_rms, int rows, int dim) {
#pragma omp parallel for schedule(static) if (parallel_enabled())
    for (int r = 0; r < rows; ++r) {
        const S* x_row = x + static_cast<std::size_t>(r) * dim;
        S* y_row = y + static_cast<std::size_t>(r) * dim;
        const S mean_sq = dot(x_row, x_row, dim) / static_cast<S>(dim);
        const S inv = S(1) / std::sqrt(mean_sq + static_cast<S>(rmsnorm_eps));
        inv_rms[r] = inv;
        for (int i = 0; i < dim; ++i) y_row[i] = x_row[i] * inv * w[i];
    }
}

// dx[r, i] += inv*(dy_i*w_i - x_i*inv^2*(sum_j dy_j*w_j*x_j)/dim)
// dw[i]    += sum_r dy[r, i] * x[r, i] * inv_rms[r]
template <typename S>
void rmsnorm_backward(const S* x, const S* w, const S* inv_rms, const S* dy, S* dx, S* dw, int rows,
                      int dim) {
#pragma omp parallel for schedule(static) if (parallel_enabled())
    for (int r = 0; r < rows; ++r) {
        const S* x_row = x + static_cast<std::size_t>(r) * dim;
        const S* dy_row = dy + static_cast<std::size_t>(r) * dim;
        S* dx_row = dx + static_cast<std::size_t>(r) * dim;
        const S inv = inv_rms[r];
        S proj{};
        for (int i = 0; i < dim; ++i) proj += dy_row[i] * w[i] * x_row[i];
        proj = proj * inv * inv / static_cast<S>(dim);
        for (int i = 0; i < dim; ++i) dx_row[i] += inv * (dy_row[i] * w[i] - x_row[i] * proj);
    }
#pragma omp parallel for schedule(static) if (parallel_enabled())
    for (int i = 0; i < dim; ++i) {
        S sum{};
        for (int r = 0; r < rows; ++r) {
            sum += dy[static_cast<std::size_t>(r) * dim + i] * x[static_cast<std::size_t>(r) * dim + i] *
                   inv_rms[r];
        }
        dw[i] += sum;
    }
}

// Rotary position embedding applied in place to [rows, heads*head_dim];
// row r sits at absolute position pos0 + r. Adjacent pairs within each head
// are rotated by angle pos * base^(-2i/head_dim).
template <typename S>
void rope_forward(S* x, int rows, int pos0, int heads, int head_dim, double base) {
#pragma omp parallel for schedule(static) if (parallel_enabled())
    for (int r = 0; r < rows; ++r) {
        const double pos = static_cast<double>(pos0 + r);
        S* row = x + static_cast<std::size_t>(r) * heads * head_dim;
        for (int i = 0; i < head_dim / 2; ++i) {
            const double angle = pos * std::pow(base, -2.0 * i / head_dim);
            const S cos_a = static_cast<S>(std::cos(angle));
            const S sin_a = static_cast<S>(std::sin(angle));
            for (int h = 0; h < heads; ++h) {
                S* pair = row + static_cast<std::size_t>(h) * head_dim + 2 * i;
                const S x0 = pair[0];
                const S x1 = pair[1];
                pair[0] = x0 * cos_a - x1 * sin_a;
                pair[1] = x0 * sin_a + x1 * cos_a;
            }
        }
    }
}

// Gradient of rope_forward: rotate by the negated angle (the map is an
// orthogonal rotation, so the adjoint is its inverse).
template <typename S>
void rope_backward(S* dx, int rows, int pos0, int heads, int head_dim, double base) {
#pragma omp parallel for schedule(static) if (parallel_enabled())
    for (int r = 0; r < rows; ++r) {
        const double pos = static_cast<double>(pos0 + r);
        S* row = dx + static_cast<std::size_t>(r) * heads * head_dim;
        for (int i = 0; i < head_dim / 2; ++i) {
            const double angle = pos * std::pow(base, -2.0 * i / head_dim);
            const S cos_a = static_cast<S>(std::cos(angle));
            const S sin_a = static_cast<S>(std::sin(angle));
            for (int h = 0; h < heads; ++h) {
                S* pair = row + static_cast<std::size_t>(h) * head_dim + 2 * i;
                const S x0 = pair[0];
                const S x1 = pair[1];
                pair[0] = x0 * cos_a + x1 * sin_a;
                pair[1] = -x0 * sin_a + x1 * cos_a;
            }
        }
    }
}

// out[r, f] = silu(gate[r, f]) * up[r, f]
template <typename S>
void silu_gate_forward(const S* gate, const S* up, S* out, int rows, int dim) {
#pragma omp parallel for schedule(static) if (parallel_enabled())
    for (int r = 0; r < rows; ++r) {
        const std::size_t base = static_cast<std::size_t>(r) * dim;
        for (int i = 0; i < dim; ++i) {
            const S g = gate[base + i];
            const S sig = S(1) / (S(1) + std::exp(-g));
            out[base + i] = g * sig * up[base + i];
        }
    }
}

template <typename S>
void silu_gate_backward(const S* gate, const S* up, const S* dout, S* dgate, S* dup, int rows, int dim) {
#pragma omp parallel for schedule(static) if (parallel_enabled())
    for (int r = 0; r < rows; ++r) {
        const std::size_t base = static_cast<std::size_t>(r) * dim;
        for (int i = 0; i < dim; ++i) {
            const S g = gate[base + i];
            const S sig = S(1) / (S(1) + std::exp(-g));
            const S silu = g * sig;
            const S dsilu = sig * (S(1) + g * (S(1) - sig));
            dgate[base + i] = dout[base + i] * up[base + i] * dsilu;
            dup[base + i] = dout[base + i] * silu;
        }
    }
}

// Causal multi-head attention over a contiguous KV buffer.
//   q:     [rows, heads*head_dim]   (rows new positions, absolute pos0 + r)
//   k, v:  [kv_len, heads*head_dim]
//   probs: [heads, rows, kv_len]    (retained for the backward pass)
//   out:   [rows, heads*head_dim]
// Row r may attend to kv indices [0, pos0 + r].
template <typename S>
void attention_forward(const S* q, const S* k, const S* v, S* probs, S* out, int rows, int kv_len,
                       int pos0, int heads, int head_dim) {
    const S scale = S(1) / std::sqrt(static_cast<S>(head_dim));
#pragma omp parallel for collapse(2) schedule(static) if (parallel_enabled())
    for (int h = 0; h < heads; ++h) {
        for (int r = 0; r < rows; ++r) {
            const int visible = pos0 + r + 1;
            const std::size_t stride = static_cast<std::size_t>(heads) * head_dim;
            const S* q_vec = q + static_cast<std::size_t>(r) * stride + static_cast<std::size_t>(h) * head_dim;
            S* p_row = probs + (static_cast<std::size_t>(h) * rows + r) * kv_len;
            S max_score = -std::numeric_limits<S>::infinity();
            for (int c = 0; c < visible; ++c) {
                const S score =
                    dot(q_vec, k + static_cast<std::size_t>(c) * stride + static_cast<std::size_t>(h) * head_dim,
                        head_dim) *
                    scale;
                p_row[c] = score;
                if (score > max_score) max_score = score;
            }
            S sum{};
            for (int c = 0; c < visible; ++c) {
                p_row[c] = std::exp(p_row[c] - max_score);
                sum += p_row[c];
            }
            const S inv_sum = S(1) / sum;
            for (int c = 0; c < visible; ++c) p_row[c] *= inv_sum;
            for (int c = visible; c < kv_len; ++c) p_row[c] = S{};
            S* out_vec = out + static_cast<std::size_t>(r) * stride + static_cast<std::size_t>(h) * head_dim;
            for (int d = 0; d < head_dim; ++d) out_vec[d] = S{};
            for (int c = 0; c < visible; ++c) {
                axpy(out_vec, v + static_cast<std::size_t>(c) * stride + static_cast<std::size_t>(h) * head_dim,
                     p_row[c], head_dim);
            }
        }
    }
}

// Backward of attention_forward. dprobs is caller-provided scratch shaped
// like probs; on exit it holds the score gradients (already scaled). dq is
// overwritten; dk and dv are accumulated into.
template <typename S>
void attention_backward(const S* q, const S* k, const S* v, const S* probs, const S* dout, S* dq, S* dk,
                        S* dv, S* dprobs, int rows, int kv_len, int pos0, int heads, int head_dim) {
    const S scale = S(1) / std::sqrt(static_cast<S>(head_dim));
    const std::size_t stride = static_cast<std::size_t>(heads) * head_dim;
// Phase 1: per (head, query row) -> dprobs, dscores, dq.
#pragma omp parallel for collapse(2) schedule(static) if (parallel_enabled())
    for (int h = 0; h < heads; ++h) {
        for (int r = 0; r < rows; ++r) {
            const int visible = pos0 + r + 1;
            const S* p_row = probs + (static_cast<std::size_t>(h) * rows + r) * kv_len;
            S* dp_row = dprobs + (static_cast<std::size_t>(h) * rows + r) * kv_len;
            const S* dout_vec =
                dout + static_cast<std::size_t>(r) * stride + static_cast<std::size_t>(h) * head_dim;
            for (int c = 0; c < visible; ++c) {
                dp_row[c] = dot(dout_vec,
                                v + static_cast<std::size_t>(c) * stride + static_cast<std::size_t>(h) * head_dim,
                                head_dim);
            }
            // Softmax backward: ds = p * (dp - sum_c p_c dp_c), then fold in
            // the score scale.
            S inner{};
            for (int c = 0; c < visible; ++c) inner += p_row[c] * dp_row[c];
            for (int c = 0; c < visible; ++c) dp_row[c] = p_row[c] * (dp_row[c] - inner) * scale;
            for (int c = visible; c < kv_len; ++c) dp_row[c] = S{};
            S* dq_vec = dq + static_cast<std::size_t>(r) * stride + static_cast<std::size_t>(h) * head_dim;
            for (int d = 0; d < head_dim; ++d) dq_vec[d] = S{};
            for (int c = 0; c < visible; ++c) {
                axpy(dq_vec, k + static_cast<std::size_t>(c) * stride + static_cast<std::size_t>(h) * head_dim,
                     dp_row[c], head_dim);
            }
        }
    }
// Phase 2: per (head, kv column) -> dk, dv.
#pragma omp parallel for collapse(2) schedule(static) if (parallel_enabled())
    for (int h = 0; h < heads; ++h) {
        for (int c = 0; c < kv_len; ++c) {
            S* dk_vec = dk + static_cast<std::size_t>(c) * stride + static_cast<std::size_t>(h) * head_dim;
            S* dv_vec = dv + static_cast<std::size_t>(c) * stride + static_cast<std::size_t>(h) * head_dim;
            for (int r = 0; r < rows; ++r) {
                if (pos0 + r < c) continue; // causally invisible
                const std::size_t row_index = (static_cast<std::size_t>(h) * rows + r) * kv_len + c;
                const S ds = dprobs[row_index];
                const S p = probs[row_index];
                const S* q_vec =
                    q + static_cast<std::size_t>(r) * stride + static_cast<std::size_t>(h) * head_dim;
                const S* dout_vec =
                    dout + static_cast<std::size_t>(r) * stride + static_cast<std::size_t>(h) * head_dim;
                if (ds != S{}) axpy(dk_vec, q_vec, ds, head_dim);
                if (p != S{}) axpy(dv_vec, dout_vec, p, head_dim);
            }
        }
    }
}

// Fused masked softmax cross-entropy. logits is [rows, vocab] and is
// overwritten with the loss gradient when `backward` is set. Contributes
// -log softmax(logits[r])[targets[r]] for every masked row, averaged over the
// masked count. The per-row losses are reduced serially so the total is
// independent of the thread count.
template <typename S>
[[nodiscard]] S masked_cross_entropy(S* logits, const TokenId* targets, const std::uint8_t* mask,
                                     int rows, int vocab, bool backward, S* row_loss) {
    int contributing = 0;
    for (int r = 0; r < rows; ++r) contributing += mask[r] ? 1 : 0;
    const S inv_count = contributing > 0 ? S(1) / static_cast<S>(contributing) : S{};
#pragma omp parallel for schedule(static) if (parallel_enabled())
    for (int r = 0; r < rows; ++r) {
        S* row = logits + static_cast<std::size_t>(r) * vocab;
        if (!mask[r]) {
            row_loss[r] = S{};
            if (backward) {
                for (int i = 0; i < vocab; ++i) row[i] = S{};
            }
            continue;
        }
        S max_logit = row[0];
        for (int i = 1; i < vocab; ++i) max_logit = std::max(max_logit, row[i]);
        S sum{};
        for (int i = 0; i < vocab; ++i) sum += std::exp(row[i] - max_logit);
        const S log_sum = std::log(sum) + max_logit;
        row_loss[r] = log_sum - row[targets[r]];
        if (backward) {
            const S inv_sum = S(1) / sum;
            for (int i = 0; i < vocab; ++i) row[i] = std::exp(row[i] - max_logit) * inv_sum * inv_count;
            row[targets[r]] -= inv_count;
        }
    }
    S total{};
    for (int r = 0; r < rows; ++r) total += row_loss[r];
    return contributing > 0 ? total * inv_count : S{};
}

// In-place log-softmax of one row (used for log-prob reporting).
template <typename S>
void log_softmax_row(S* row, int vocab) {
    S max_logit = row[0];
    for (int i = 1; i < vocab; ++i) max_logit = std::max(max_logit, row[i]);
    S sum{};
    for (int i = 0; i < vocab; ++i) sum += std::exp(row[i] - max_logit);
    const S log_sum = std::log(sum) + max_logit;
    for (int i = 0; i < vocab; ++i) row[i] -= log_sum;
}

// Decoupled AdamW step with bias correction; decay_mask[j] selects which
// elements receive weight decay.
template <typename S>
void adamw_step(S* params, const S* grads, S* m, S* v, const std::uint8_t* decay_mask, std::size_t count,
                double lr, double beta1, double beta2, double eps, double weight_decay, int step) {
    const double bias1 = 1.0 - std::pow(beta1, step);
    const double bias2 = 1.0 - std::pow(beta2, step);
#pragma omp parallel for schedule(static) if (parallel_enabled())
    for (std::ptrdiff_t j = 0; j < static_cast<std::ptrdiff_t>(count); ++j) {
        const double g = static_cast<double>(grads[j]);
        const double m_new = beta1 * m[j] + (1.0 - beta1) * g;
        const double v_new = beta2 * v[j] + (1.0 - beta2) * g * g;
        m[j] = static_cast<S>(m_new);
        v[j] = static_cast<S>(v_new);
        const double update = (m_new / bias1) / (std::sqrt(v_new / bias2) + eps);
        double value = static_cast<double>(params[j]);
        if (decay_mask[j]) value -= lr * weight_decay * value;
        value -= lr * update;
        params[j] = static_cast<S>(value);
    }
}

} // namespace eventlm::kernels
