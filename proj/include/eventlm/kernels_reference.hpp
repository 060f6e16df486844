#pragma once

#include <cmath>
#include <cstdint>
#include <limits>

#include "eventlm/codec.hpp"

// Plain single-threaded textbook implementations of the kernels in
// kernels.hpp. They exist as an independently-written comparison point for
// correctness tests and for the kernel benchmark; nothing in the library
// links against them.

namespace eventlm::kernels::reference {

template <typename S>
void linear_forward(const S* x, const S* w, S* y, int rows, int out, int in) {
    for (int r = 0; r < rows; ++r) {
        for (int o = 0; o < out; ++o) {
            S sum{};
            for (int i = 0; i < in; ++i) {
                sum += x[static_cast<std::size_t>(r) * in + i] * w[static_cast<std::size_t>(o) * in + i];
            }
            y[static_cast<std::size_t>(r) * out + o] = sum;
        }
    }
}

template <typename S>
void linear_backward_input(const S* dy, const S* w, S* dx, int rows, int out, int in) {
    for (int r = 0; r < rows; ++r) {
        for (int i = 0; i < in; ++i) {
            S sum{};
            for (int o = 0; o < out; ++o) {
                sum += dy[static_cast<std::size_t>(r) * out + o] * w[static_cast<std::size_t>(o) * in + i];
            }
            dx[static_cast<std::size_t>(r) * in + i] += sum;
        }
    }
}

template <typename S>
void linear_backward_weight(const S* dy, const S* x, S* dw, int rows, int out, int in) {
    for (int o = 0; o < out; ++o) {
        for (int i = 0; i < in; ++i) {
            S sum{};
            for (int r = 0; r < rows; ++r) {
                sum += dy[static_cast<std::size_t>(r) * out + o] * x[static_cast<std::size_t>(r) * in + i];
            }
            dw[static_cast<std::size_t>(o) * in + i] += sum;
        }
    }
}

template <typename S>
void rmsnorm_forward(const S* x, const S* w, S* y, S* inv_rms, int rows, int dim, double eps) {
    for (int r = 0; r < rows; ++r) {
        S sum_sq{};
        for (int i = 0; i < dim; ++i) {
            const S value = x[static_cast<std::size_t>(r) * dim + i];
            sum_sq += value * value;
        }
        const S inv = S(1) / std::sqrt(sum_sq / static_cast<S>(dim) + static_cast<S>(eps));
        inv_rms[r] = inv;
        for (int i = 0; i < dim; ++i) {
            y[static_cast<std::size_t>(r) * dim + i] = x[static_cast<std::size_t>(r) * dim + i] * inv * w[i];
        }
    }
}

template <typename S>
void attention_forward(const S* q, const S* k, const S* v, S* probs, S* out, int rows, int kv_len,
                       int pos0, int heads, int head_dim) {
    const S scale = S(1) / std::sqrt(static_cast<S>(head_dim));
    const std::size_t stride = static_cast<std::size_t>(heads) * head_dim;
    for (int h = 0; h < heads; ++h) {
        for (int r = 0; r < rows; ++r) {
            const int visible = pos0 + r + 1;
            S* p_row = probs + (static_cast<std::size_t>(h) * rows + r) * kv_len;
            S max_score = -std::numeric_limits<S>::infinity();
            for (int c = 0; c < kv_len; ++c) {
                if (c >= visible) {
                    p_row[c] = S{};
                    continue;
                }
                S score{};
                for (int d = 0; d < head_dim; ++d) {
                    score += q[static_cast<std::size_t>(r) * stride + static_cast<std::size_t>(h) * head_dim + d] *
                             k[static_cast<std::size_t>(c) * stride + static_cast<std::size_t>(h) * head_dim + d];
                }
                p_row[c] = score * scale;
                max_score = std::max(max_score, p_row[c]);
            }
            S sum{};
            for (int c = 0; c < visible; ++c) {
                p_row[c] = std::exp(p_row[c] - max_score);
                sum += p_row[c];
            }
            for (int c = 0; c < visible; ++c) p_row[c] /= sum;
            for (int d = 0; d < head_dim; ++d) {
                S value{};
                for (int c = 0; c < visible; ++c) {
                    value += p_row[c] *
                             v[static_cast<std::size_t>(c) * stride + static_cast<std::size_t>(h) * head_dim + d];
                }
                out[static_cast<std::size_t>(r) * stride + static_cast<std::size_t>(h) * head_dim + d] = value;
            }
        }
    }
}

} // namespace eventlm::kernels::reference
