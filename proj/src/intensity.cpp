#include "eventlm/intensity.hpp"

#include <cmath>

#include "eventlm/errors.hpp"
#include "eventlm/kernels.hpp"
#include "eventlm/rng.hpp"

namespace eventlm {

namespace {

// Numerically stable sigmoid.
double sigmoid(double z) {
    if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
    const double e = std::exp(z);
    return e / (1.0 + e);
}

} // namespace

double softplus(double x, double beta) {
    require(beta > 0.0, Errc::invalid_parameter, "softplus sharpness must be positive");
    const double z = x / beta;
    if (z > 0.0) return beta * (z + std::log1p(std::exp(-z)));
    return beta * std::log1p(std::exp(z));
}

double softplus_dx(double x, double beta) {
    require(beta > 0.0, Errc::invalid_parameter, "softplus sharpness must be positive");
    return sigmoid(x / beta);
}

double softplus_dbeta(double x, double beta) {
    const double z = x / beta;
    return softplus(x, beta) / beta - z * sigmoid(z);
}

double softplus_inverse(double value, double beta) {
    require(beta > 0.0, Errc::invalid_parameter, "softplus sharpness must be positive");
    require(value > 0.0, Errc::invalid_parameter, "softplus only takes positive values");
    const double w = value / beta;
    if (w > 30.0) return beta * (w + std::log1p(-std::exp(-w)));
    return beta * std::log(std::expm1(w));
}

void IntensityHead::validate() const {
    require(type_count > 0 && hidden_dim > 0, Errc::invalid_parameter,
            "head needs at least one type and one hidden dimension");
    const auto e = static_cast<std::size_t>(type_count);
    const auto d = static_cast<std::size_t>(hidden_dim);
    require(alpha.size() == e && b.size() == e && beta.size() == e && w.size() == e * d &&
                h0.size() == d,
            Errc::shape_mismatch, "head parameter shapes disagree with (type_count, hidden_dim)");
    for (double s : beta) {
        require(s > 0.0 && std::isfinite(s), Errc::invalid_parameter,
                "softplus sharpness must be positive and finite");
    }
}

IntensityHead IntensityHead::init(int type_count, int hidden_dim, double rate_per_type) {
    require(rate_per_type > 0.0, Errc::invalid_parameter, "initial rate must be positive");
    IntensityHead head;
    head.type_count = type_count;
    head.hidden_dim = hidden_dim;
    head.alpha.assign(static_cast<std::size_t>(type_count), 0.0);
    head.b.assign(static_cast<std::size_t>(type_count), softplus_inverse(rate_per_type, 1.0));
    head.beta.assign(static_cast<std::size_t>(type_count), 1.0);
    head.w.assign(static_cast<std::size_t>(type_count) * static_cast<std::size_t>(hidden_dim), 0.0);
    head.h0.assign(static_cast<std::size_t>(hidden_dim), 0.0);
    head.validate();
    return head;
}

IntensityHead IntensityHead::zeros_like() const {
    IntensityHead z;
    z.type_count = type_count;
    z.hidden_dim = hidden_dim;
    z.alpha.assign(alpha.size(), 0.0);
    z.b.assign(b.size(), 0.0);
    z.beta.assign(beta.size(), 0.0);
    z.w.assign(w.size(), 0.0);
    z.h0.assign(h0.size(), 0.0);
    return z;
}

std::size_t IntensityHead::parameter_count() const {
    return alpha.size() + b.size() + beta.size() + w.size() + h0.size();
}

std::vector<double> IntensityHead::pack() const {
    std::vector<double> out;
    out.reserve(parameter_count());
    out.insert(out.end(), alpha.begin(), alpha.end());
    out.insert(out.end(), b.begin(), b.end());
    out.insert(out.end(), beta.begin(), beta.end());
    out.insert(out.end(), w.begin(), w.end());
    out.insert(out.end(), h0.begin(), h0.end());
    return out;
}

void IntensityHead::unpack(std::span<const double> packed) {
    require(packed.size() == parameter_count(), Errc::shape_mismatch,
            "packed parameter vector has the wrong length");
    std::size_t at = 0;
    auto take = [&](std::vector<double>& dst) {
        for (double& x : dst) x = packed[at++];
    };
    take(alpha);
    take(b);
    take(beta);
    take(w);
    take(h0);
}

namespace {

// The affine argument of Eq.-style intensity for type `e`, elapsed time `dt`
// past an interval starting at `left`, conditioned on `hidden`.
double head_argument(const IntensityHead& head, const double* hidden, double left, double dt, int e) {
    const double denom = std::max(left, IntensityHead::time_floor);
    double x = head.alpha[static_cast<std::size_t>(e)] * (dt / denom) +
               head.b[static_cast<std::size_t>(e)];
    const double* w_e = head.w.data() + static_cast<std::size_t>(e) * head.hidden_dim;
    for (int j = 0; j < head.hidden_dim; ++j) x += w_e[j] * hidden[j];
    return x;
}

// Walks the N + 1 inter-event intervals of `seq`: (0, t_1], ..., (t_N, T].
// Interval k is conditioned on the hidden state of event k (h0 for k = 0).
struct IntervalWalk {
    const EventSequence& seq;
    const IntensityHead& head;
    std::span<const double> hiddens;

    [[nodiscard]] int interval_count() const { return static_cast<int>(seq.events.size()) + 1; }
    [[nodiscard]] double left(int k) const {
        return k == 0 ? 0.0 : seq.events[static_cast<std::size_t>(k - 1)].time;
    }
    [[nodiscard]] double right(int k) const {
        return k < static_cast<int>(seq.events.size()) ? seq.events[static_cast<std::size_t>(k)].time
                                                       : seq.t_end;
    }
    [[nodiscard]] const double* hidden(int k) const {
        return k == 0 ? head.h0.data()
                      : hiddens.data() + static_cast<std::size_t>(k - 1) * head.hidden_dim;
    }
};

void check_shapes(const IntensityHead& head, std::span<const double> hiddens, const EventSequence& seq,
                  int mc_samples) {
    head.validate();
    seq.validate();
    require(mc_samples >= 1, Errc::invalid_parameter, "need at least one MC sample per interval");
    require(hiddens.size() == seq.events.size() * static_cast<std::size_t>(head.hidden_dim),
            Errc::shape_mismatch, "expected one hidden state of size hidden_dim per event");
    for (const Event& event : seq.events) {
        require(event.type_index < head.type_count, Errc::shape_mismatch,
                "event type index outside the head's type count");
    }
}

// Stratified uniform sample points for interval k: one draw per equal slice,
// reproducible from (seed, seq_id, k).
std::vector<double> mc_points(double left, double right, int mc_samples, std::uint64_t seed,
                              std::uint64_t seq_id, int k) {
    auto rng = make_rng(substream_seed(seed, "intensity-mc", seq_id), "interval",
                        static_cast<std::uint64_t>(k));
    std::uniform_real_distribution<double> uniform(0.0, 1.0);
    const double slice = (right - left) / mc_samples;
    std::vector<double> points(static_cast<std::size_t>(mc_samples));
    for (int s = 0; s < mc_samples; ++s) {
        points[static_cast<std::size_t>(s)] = left + (s + uniform(rng)) * slice;
    }
    return points;
}

} // namespace

double intensity_at(const IntensityHead& head, std::span<const double> hidden, double t_i, double t,
                    int e) {
    head.validate();
    require(hidden.size() == static_cast<std::size_t>(head.hidden_dim), Errc::shape_mismatch,
            "hidden state size does not match the head");
    require(e >= 0 && e < head.type_count, Errc::shape_mismatch, "type index out of range");
    require(t_i >= 0.0 && std::isfinite(t_i) && std::isfinite(t), Errc::invalid_parameter,
            "times must be finite and non-negative");
    require(t > t_i, Errc::out_of_interval, "intensity is conditioned on (t_i, t_{i+1}]; need t > t_i");
    const double x = head_argument(head, hidden.data(), t_i, t - t_i, e);
    return softplus(x, head.beta[static_cast<std::size_t>(e)]);
}

double sequence_loglik(const IntensityHead& head, std::span<const double> hiddens,
                       const EventSequence& seq, int mc_samples, std::uint64_t seed,
                       std::uint64_t seq_id) {
    check_shapes(head, hiddens, seq, mc_samples);
    const IntervalWalk walk{seq, head, hiddens};
    double loglik = 0.0;

    // Event terms: event k happens inside interval k.
    for (std::size_t k = 0; k < seq.events.size(); ++k) {
        const Event& event = seq.events[k];
        const double left = walk.left(static_cast<int>(k));
        const double x = head_argument(head, walk.hidden(static_cast<int>(k)), left, event.time - left,
                                       event.type_index);
        loglik += std::log(softplus(x, head.beta[static_cast<std::size_t>(event.type_index)]));
    }

    // Compensator: stratified MC estimate of the integral of the total
    // intensity over each interval.
    for (int k = 0; k < walk.interval_count(); ++k) {
        const double left = walk.left(k);
        const double right = walk.right(k);
        if (right <= left) continue;
        const auto points = mc_points(left, right, mc_samples, seed, seq_id, k);
        double mean_total = 0.0;
        for (const double u : points) {
            for (int e = 0; e < head.type_count; ++e) {
                const double x = head_argument(head, walk.hidden(k), left, u - left, e);
                mean_total += softplus(x, head.beta[static_cast<std::size_t>(e)]);
            }
        }
        loglik -= (right - left) * mean_total / mc_samples;
    }
    return loglik;
}

IntensityHead head_gradients(const IntensityHead& head, std::span<const double> hiddens,
                             const EventSequence& seq, int mc_samples, std::uint64_t seed,
                             std::uint64_t seq_id, double* loglik_out) {
    check_shapes(head, hiddens, seq, mc_samples);
    const IntervalWalk walk{seq, head, hiddens};
    IntensityHead grad = head.zeros_like();
    double loglik = 0.0;

    // Accumulates d(loglik)/d(params) for one evaluated intensity term of
    // type e at elapsed dt in interval k, where the term enters the
    // log-likelihood as `scale * lambda` (compensator) or `scale * log
    // lambda` (event term, log_term = true).
    auto accumulate = [&](int k, int e, double dt, double scale, bool log_term) {
        const double left = walk.left(k);
        const double* hidden = walk.hidden(k);
        const auto eu = static_cast<std::size_t>(e);
        const double x = head_argument(head, hidden, left, dt, e);
        const double sharp = head.beta[eu];
        const double dx = softplus_dx(x, sharp);
        const double dbeta = softplus_dbeta(x, sharp);
        double x_coeff, beta_coeff;
        if (log_term) {
            const double value = softplus(x, sharp);
            loglik += scale * std::log(value);
            x_coeff = scale * dx / value;
            beta_coeff = scale * dbeta / value;
        } else {
            loglik += scale * softplus(x, sharp);
            x_coeff = scale * dx;
            beta_coeff = scale * dbeta;
        }
        const double denom = std::max(left, IntensityHead::time_floor);
        grad.alpha[eu] += x_coeff * (dt / denom);
        grad.b[eu] += x_coeff;
        grad.beta[eu] += beta_coeff;
        double* gw = grad.w.data() + eu * static_cast<std::size_t>(head.hidden_dim);
        for (int j = 0; j < head.hidden_dim; ++j) gw[j] += x_coeff * hidden[j];
        if (k == 0) {
            const double* w_e = head.w.data() + eu * static_cast<std::size_t>(head.hidden_dim);
            for (int j = 0; j < head.hidden_dim; ++j) grad.h0[j] += x_coeff * w_e[j];
        }
    };

    for (std::size_t k = 0; k < seq.events.size(); ++k) {
        const Event& event = seq.events[k];
        accumulate(static_cast<int>(k), event.type_index, event.time - walk.left(static_cast<int>(k)),
                   1.0, true);
    }
    for (int k = 0; k < walk.interval_count(); ++k) {
        const double left = walk.left(k);
        const double right = walk.right(k);
        if (right <= left) continue;
        const auto points = mc_points(left, right, mc_samples, seed, seq_id, k);
        const double scale = -(right - left) / mc_samples;
        for (const double u : points) {
            for (int e = 0; e < head.type_count; ++e) accumulate(k, e, u - left, scale, false);
        }
    }

    // Flip sign: gradients of the negative log-likelihood.
    for (auto* field : {&grad.alpha, &grad.b, &grad.beta, &grad.w, &grad.h0}) {
        for (double& g : *field) g = -g;
    }
    if (loglik_out) *loglik_out = loglik;
    return grad;
}

double fit_intensity_head(IntensityHead& head, std::span<const HeadFitSequence> data,
                          const HeadFitOptions& options) {
    head.validate();
    require(!data.empty(), Errc::no_data, "cannot fit an intensity head on an empty dataset");
    require(options.steps >= 1 && options.lr > 0.0, Errc::invalid_parameter,
            "need a positive step count and learning rate");
    require(options.alpha_step_scale >= 0.0, Errc::invalid_parameter,
            "the slope step scale cannot be negative");

    std::size_t total_events = 0;
    for (const HeadFitSequence& item : data) {
        require(item.seq != nullptr, Errc::no_data, "fit item without a sequence");
        total_events += item.seq->events.size();
    }
    const double norm = 1.0 / static_cast<double>(std::max<std::size_t>(total_events, 1));
    const std::size_t alpha_count = head.alpha.size(); // packed layout starts with alpha

    // Per-event negative log-likelihood at a packed parameter vector, with
    // the sharpness clamp applied in place so accepted parameters stay valid.
    IntensityHead probe = head;
    auto objective_at = [&](std::vector<double>& p) {
        for (std::size_t j = 2 * alpha_count; j < 3 * alpha_count; ++j) {
            p[j] = std::max(p[j], options.beta_floor);
        }
        probe.unpack(p);
        double total = 0.0;
        for (const HeadFitSequence& item : data) {
            total += sequence_loglik(probe, item.hiddens, *item.seq, options.mc_samples,
                                     options.seed, item.seq_id);
        }
        return -total * norm;
    };

    std::vector<double> params = head.pack();
    double objective = objective_at(params);
    require(std::isfinite(objective), Errc::training_diverged,
            "intensity-head objective is not finite at the starting parameters");

    std::vector<double> m(params.size(), 0.0), v(params.size(), 0.0);
    const std::vector<std::uint8_t> no_decay(params.size(), 0);

    std::vector<double> proposal(params.size()), candidate(params.size());
    for (int step = 1; step <= options.steps; ++step) {
        head.unpack(params);
        IntensityHead grad_total = head.zeros_like();
        for (const HeadFitSequence& item : data) {
            const IntensityHead grad = head_gradients(head, item.hiddens, *item.seq,
                                                      options.mc_samples, options.seed, item.seq_id);
            auto add = [](std::vector<double>& dst, const std::vector<double>& src) {
                for (std::size_t j = 0; j < dst.size(); ++j) dst[j] += src[j];
            };
            add(grad_total.alpha, grad.alpha);
            add(grad_total.b, grad.b);
            add(grad_total.beta, grad.beta);
            add(grad_total.w, grad.w);
            add(grad_total.h0, grad.h0);
        }
        std::vector<double> grads = grad_total.pack();
        for (double& g : grads) g *= norm;

        proposal = params;
        kernels::adamw_step(proposal.data(), grads.data(), m.data(), v.data(), no_decay.data(),
                            proposal.size(), options.lr, options.adam_beta1, options.adam_beta2,
                            options.adam_eps, 0.0, step);
        for (std::size_t j = 0; j < alpha_count; ++j) {
            proposal[j] = params[j] + (proposal[j] - params[j]) * options.alpha_step_scale;
        }

        // Backtrack the whole step until the objective is finite and does
        // not increase; give up on this step after 24 halvings.
        double scale = 1.0;
        for (int attempt = 0; attempt < 24; ++attempt) {
            for (std::size_t j = 0; j < params.size(); ++j) {
                candidate[j] = params[j] + (proposal[j] - params[j]) * scale;
            }
            const double value = objective_at(candidate);
            if (std::isfinite(value) && value <= objective) {
                params = candidate;
                objective = value;
                break;
            }
            scale *= 0.5;
        }
    }
    head.unpack(params);
    return objective;
}

} // namespace eventlm
