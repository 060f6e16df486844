#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "eventlm/tpp.hpp"

namespace eventlm {

// Sharpness-parameterised softplus: beta * log(1 + exp(x / beta)).
// Overflow-safe for large |x|; approaches max(x, 0) as beta -> 0.
[[nodiscard]] double softplus(double x, double beta);
// Its partial derivatives (needed by the head gradients).
[[nodiscard]] double softplus_dx(double x, double beta);
[[nodiscard]] double softplus_dbeta(double x, double beta);
// b such that softplus(b, beta) = value (value > 0); used to initialise the
// bias at a target rate.
[[nodiscard]] double softplus_inverse(double value, double beta);

// Per-type intensity conditioned on the hidden state of the most recent
// event:
//   lambda(t, e) = softplus(alpha_e * (t - t_i)/max(t_i, eps)
//                           + w_e . h(t_i) + b_e,  beta_e)
// for t in (t_i, t_{i+1}]. The interval before the first event is
// conditioned on a learned initial state h0.
struct IntensityHead {
    int type_count = 0; // E
    int hidden_dim = 0; // d

    std::vector<double> alpha; // [E] slope on normalised elapsed time
    std::vector<double> w;     // [E, d] hidden-state projection
    std::vector<double> b;     // [E] bias
    std::vector<double> beta;  // [E] softplus sharpness, > 0
    std::vector<double> h0;    // [d] hidden for the interval before event 1

    // Denominator floor for the elapsed-time slope when t_i = 0.
    static constexpr double time_floor = 1e-6;

    void validate() const;

    // Zeroed slopes and projections, beta = 1, bias at the homogeneous rate
    // `rate_per_type` (so the initial model is the best constant one).
    static IntensityHead init(int type_count, int hidden_dim, double rate_per_type);
    [[nodiscard]] IntensityHead zeros_like() const;

    // Flat parameter vector in a fixed order (alpha, b, beta, w, h0); the
    // stage-3 optimiser works on this packing.
    [[nodiscard]] std::size_t parameter_count() const;
    [[nodiscard]] std::vector<double> pack() const;
    void unpack(std::span<const double> packed);
};

// Eq. value at time t > t_i for type `e`, conditioned on `hidden`.
[[nodiscard]] double intensity_at(const IntensityHead& head, std::span<const double> hidden, double t_i,
                                  double t, int e);

// Log-likelihood of `seq` under the head: sum of log-intensities at the
// observed events minus a Monte-Carlo estimate of the integral of the total
// intensity over (0, T]. `hiddens` holds one d-vector per event (flat,
// [N * d]); the pre-first-event interval uses head.h0. Sample points are
// stratified uniform, seeded per (seed, seq_id, interval): deterministic.
[[nodiscard]] double sequence_loglik(const IntensityHead& head, std::span<const double> hiddens,
                                     const EventSequence& seq, int mc_samples, std::uint64_t seed,
                                     std::uint64_t seq_id);

// Gradients of -sequence_loglik with respect to every head parameter, using
// the same MC sample points as sequence_loglik for the given seed. Also
// returns the log-likelihood value through `loglik_out` when non-null.
[[nodiscard]] IntensityHead head_gradients(const IntensityHead& head, std::span<const double> hiddens,
                                           const EventSequence& seq, int mc_samples, std::uint64_t seed,
                                           std::uint64_t seq_id, double* loglik_out = nullptr);

// One training example for the stage-3 fit: a sequence with its cached
// per-event hidden states.
struct HeadFitSequence {
    const EventSequence* seq = nullptr;
    std::vector<double> hiddens; // [N * hidden_dim]
    std::uint64_t seq_id = 0;
};

struct HeadFitOptions {
    int steps = 200;
    double lr = 0.05;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    int mc_samples = 10;
    std::uint64_t seed = 0;
    double beta_floor = 1e-3; // sharpness clamp after each step
    // Step damping for the elapsed-time slopes. In the interval before the
    // first event the slope multiplies (t - 0)/max(0, eps) ~ 1e6 * t, so the
    // likelihood is extremely stiff along alpha: a slope of even 1e-4 drives
    // the first event's intensity into overflow/underflow. Adam's unit-size
    // steps must therefore be scaled way down on this block.
    double alpha_step_scale = 1e-6;
};

// Full-batch Adam on the packed parameters, minimising the per-event
// negative log-likelihood of the whole dataset. Every step is guarded by
// deterministic backtracking: the proposed update is halved until the
// fixed-seed objective is finite and does not increase, so the objective is
// non-increasing across steps by construction. Returns the objective at the
// returned parameters.
double fit_intensity_head(IntensityHead& head, std::span<const HeadFitSequence> data,
                          const HeadFitOptions& options);

} // namespace eventlm
