// Micro-benchmark for the dense kernels and the end-to-end training step.
// Compares the serial reference implementations against the OpenMP kernels
// (which collapse to serial execution on a single hardware thread) and
// reports effective GFLOP/s, which is what sizes the training profiles.

#include <omp.h>

#include <chrono>
#include <cstdio>
#include <functional>
#include <string>
#include <vector>

#include "eventlm/kernels.hpp"
#include "eventlm/kernels_reference.hpp"
#include "eventlm/model.hpp"
#include "eventlm/rng.hpp"

using namespace eventlm;

namespace {

std::vector<float> random_vector(std::size_t n, std::uint64_t seed, const char* name) {
    auto rng = make_rng(seed, name);
    std::normal_distribution<double> normal(0.0, 0.5);
    std::vector<float> v(n);
    for (auto& x : v) x = static_cast<float>(normal(rng));
    return v;
}

// Runs `body` repeatedly until ~0.5 s has elapsed and returns seconds/iter.
double time_it(const std::function<void()>& body) {
    body(); // warm-up
    const auto start = std::chrono::steady_clock::now();
    int iters = 0;
    double elapsed = 0.0;
    do {
        body();
        ++iters;
        elapsed = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    } while (elapsed < 0.5);
    return elapsed / iters;
}

void report(const char* name, double flops, double serial_s, double parallel_s) {
    std::printf("%-28s %10.1f MFLOP   serial %8.3f ms (%6.2f GF/s)   omp %8.3f ms (%6.2f GF/s)\n", name,
                flops / 1e6, serial_s * 1e3, flops / serial_s / 1e9, parallel_s * 1e3,
                flops / parallel_s / 1e9);
}

} // namespace

int main() {
    std::printf("hardware threads: %d\n\n", omp_get_num_procs());

    {
        // FFN-shaped matmul: the dominant cost of a training step.
        const int rows = 256, out = 512, in = 128;
        const auto x = random_vector(static_cast<std::size_t>(rows) * in, 1, "x");
        const auto w = random_vector(static_cast<std::size_t>(out) * in, 1, "w");
        std::vector<float> y(static_cast<std::size_t>(rows) * out);
        const double flops = 2.0 * rows * out * in;

        kernels::parallel_enabled() = false;
        const double ref_s = time_it(
            [&] { kernels::reference::linear_forward(x.data(), w.data(), y.data(), rows, out, in); });
        const double serial_s =
            time_it([&] { kernels::linear_forward(x.data(), w.data(), y.data(), rows, out, in); });
        kernels::parallel_enabled() = true;
        const double omp_s =
            time_it([&] { kernels::linear_forward(x.data(), w.data(), y.data(), rows, out, in); });
        report("linear_forward 256x512x128", flops, serial_s, omp_s);
        std::printf("%-28s %10s   textbook reference: %8.3f ms (%6.2f GF/s)\n", "", "", ref_s * 1e3,
                    flops / ref_s / 1e9);
    }

    {
        const int rows = 256, out = 128, in = 512;
        const auto dy = random_vector(static_cast<std::size_t>(rows) * out, 2, "dy");
        const auto w = random_vector(static_cast<std::size_t>(out) * in, 2, "w");
        const auto x = random_vector(static_cast<std::size_t>(rows) * in, 2, "x");
        std::vector<float> dx(x.size());
        std::vector<float> dw(w.size());
        const double flops = 2.0 * rows * out * in;

        kernels::parallel_enabled() = false;
        const double s_in = time_it([&] {
            std::fill(dx.begin(), dx.end(), 0.0f);
            kernels::linear_backward_input(dy.data(), w.data(), dx.data(), rows, out, in);
        });
        const double s_w = time_it([&] {
            std::fill(dw.begin(), dw.end(), 0.0f);
            kernels::linear_backward_weight(dy.data(), x.data(), dw.data(), rows, out, in);
        });
        kernels::parallel_enabled() = true;
        const double p_in = time_it([&] {
            std::fill(dx.begin(), dx.end(), 0.0f);
            kernels::linear_backward_input(dy.data(), w.data(), dx.data(), rows, out, in);
        });
        const double p_w = time_it([&] {
            std::fill(dw.begin(), dw.end(), 0.0f);
            kernels::linear_backward_weight(dy.data(), x.data(), dw.data(), rows, out, in);
        });
        report("linear_bwd_input 256x128x512", flops, s_in, p_in);
        report("linear_bwd_weight 256x128x512", flops, s_w, p_w);
    }

    {
        const int rows = 256, kv = 256, heads = 4, head_dim = 32;
        const int width = heads * head_dim;
        const auto q = random_vector(static_cast<std::size_t>(rows) * width, 3, "q");
        const auto k = random_vector(static_cast<std::size_t>(kv) * width, 3, "k");
        const auto v = random_vector(static_cast<std::size_t>(kv) * width, 3, "v");
        std::vector<float> probs(static_cast<std::size_t>(heads) * rows * kv);
        std::vector<float> out(q.size());
        // ~half the kv entries are causally visible on average.
        const double flops = 2.0 * heads * rows * (kv / 2.0) * (2.0 * head_dim);

        kernels::parallel_enabled() = false;
        const double serial_s = time_it([&] {
            kernels::attention_forward(q.data(), k.data(), v.data(), probs.data(), out.data(), rows, kv,
                                       0, heads, head_dim);
        });
        kernels::parallel_enabled() = true;
        const double omp_s = time_it([&] {
            kernels::attention_forward(q.data(), k.data(), v.data(), probs.data(), out.data(), rows, kv,
                                       0, heads, head_dim);
        });
        report("attention_fwd 256 ctx", flops, serial_s, omp_s);
    }

    {
        // End-to-end training step on the default model shape; this is the
        // number that decides how many optimisation steps fit in a wall-clock
        // budget.
        ModelConfig cfg;
        cfg.vocab_size = 523;
        auto model = Model<float>::init(cfg, 99);
        const int rows = 256;
        auto rng = make_rng(99, "tokens");
        std::uniform_int_distribution<TokenId> pick(0, cfg.vocab_size - 1);
        std::vector<TokenId> tokens(static_cast<std::size_t>(rows));
        for (auto& t : tokens) t = pick(rng);
        std::vector<std::uint8_t> mask(tokens.size() - 1, 1);
        Workspace<float> ws;
        std::vector<float> grads(model.parameter_count(), 0.0f);

        // ~6 * params * tokens for forward+backward of the dense stack.
        const double flops = 6.0 * static_cast<double>(model.parameter_count()) * rows;
        kernels::parallel_enabled() = true;
        const double fwd_s =
            time_it([&] { (void)sequence_nll<float>(model, tokens, mask, nullptr, ws); });
        const double step_s = time_it([&] {
            std::fill(grads.begin(), grads.end(), 0.0f);
            (void)sequence_nll<float>(model, tokens, mask, &grads, ws);
        });
        std::printf("\nmodel %dx%d (%zu params), %d tokens:\n", cfg.n_layers, cfg.d_model,
                    model.parameter_count(), rows);
        std::printf("  forward only:     %8.3f ms  (%.0f tokens/s)\n", fwd_s * 1e3, rows / fwd_s);
        std::printf("  forward+backward: %8.3f ms  (%.0f tokens/s, %.2f GF/s at 6NP)\n", step_s * 1e3,
                    rows / step_s, flops / step_s / 1e9);
    }
    return 0;
}
