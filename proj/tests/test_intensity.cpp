#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "eventlm/errors.hpp"
#include "eventlm/intensity.hpp"
#include "eventlm/rng.hpp"
#include "oracles.hpp"

using namespace eventlm;

namespace {

EventSequence make_sequence(std::vector<std::pair<double, int>> events, double t_end) {
    EventSequence seq;
    for (auto& [t, e] : events) {
        Event ev;
        ev.time = t;
        ev.type_index = e;
        ev.type_label = "type_" + std::to_string(e);
        seq.events.push_back(std::move(ev));
    }
    seq.t_end = t_end;
    seq.validate();
    return seq;
}

IntensityHead random_head(int types, int dim, std::uint64_t seed) {
    auto rng = make_rng(seed, "head");
    std::normal_distribution<double> normal(0.0, 0.6);
    IntensityHead head = IntensityHead::init(types, dim, 1.0);
    for (auto& x : head.alpha) x = normal(rng);
    for (auto& x : head.w) x = normal(rng) * 0.3;
    for (auto& x : head.b) x = normal(rng);
    for (auto& x : head.beta) x = 0.5 + std::abs(normal(rng));
    for (auto& x : head.h0) x = normal(rng);
    return head;
}

std::vector<double> random_hiddens(std::size_t n, std::uint64_t seed) {
    auto rng = make_rng(seed, "hiddens");
    std::normal_distribution<double> normal(0.0, 1.0);
    std::vector<double> h(n);
    for (auto& x : h) x = normal(rng);
    return h;
}

} // namespace

TEST_CASE("softplus: published values, stability, inverse, derivatives") {
    CHECK(softplus(0.0, 1.0) == doctest::Approx(std::log(2.0)).epsilon(1e-12));
    CHECK(softplus(0.0, 2.0) == doctest::Approx(2.0 * std::log(2.0)).epsilon(1e-12));
    CHECK(std::abs(softplus(100.0, 1.0) - 100.0) < 1e-6);
    CHECK(std::abs(softplus(1000.0, 1.0) - 1000.0) < 1e-9); // no overflow
    // Strictly positive down to the edge of the representable range
    // (exp(-700) ~ 1e-304 is still a normal double)...
    CHECK(softplus(-700.0, 1.0) > 0.0);
    CHECK(softplus(-700.0, 1.0) < 1e-300);
    // ...and a graceful, exact underflow to +0 beyond it: exp(-1000) is
    // below the smallest subnormal, so the true value ~ 1e-435 has no
    // double representation.
    CHECK(softplus(-1000.0, 1.0) == 0.0);

    // Matches the naive formula where that formula is representable.
    for (double x : {-20.0, -3.1, -0.4, 0.0, 0.7, 4.2, 19.0}) {
        for (double beta : {0.25, 1.0, 3.5}) {
            CHECK(softplus(x, beta) ==
                  doctest::Approx(beta * std::log(1.0 + std::exp(x / beta))).epsilon(1e-12));
        }
    }

    SUBCASE("sharpness must be positive") {
        CHECK_THROWS_AS((void)softplus(1.0, 0.0), Error);
        CHECK_THROWS_AS((void)softplus(1.0, -2.0), Error);
    }

    SUBCASE("inverse round-trips") {
        for (double value : {1e-4, 0.3, 1.0, 7.0, 250.0}) {
            for (double beta : {0.5, 1.0, 2.0}) {
                CHECK(softplus(softplus_inverse(value, beta), beta) ==
                      doctest::Approx(value).epsilon(1e-10));
            }
        }
    }

    SUBCASE("derivatives agree with central differences") {
        for (double x : {-5.0, -0.3, 0.0, 1.7, 8.0}) {
            for (double beta : {0.4, 1.0, 2.5}) {
                const double fdx =
                    oracles::central_difference([&](double u) { return softplus(u, beta); }, x, 1e-6);
                const double fdb =
                    oracles::central_difference([&](double s) { return softplus(x, s); }, beta, 1e-6);
                CHECK(softplus_dx(x, beta) == doctest::Approx(fdx).epsilon(1e-8));
                CHECK(softplus_dbeta(x, beta) == doctest::Approx(fdb).epsilon(1e-7));
            }
        }
        // Finite at the symmetry point.
        CHECK(std::isfinite(softplus_dbeta(0.0, 1.0)));
        CHECK(softplus_dbeta(0.0, 1.0) == doctest::Approx(std::log(2.0)).epsilon(1e-12));
    }
}

TEST_CASE("intensity_at: closed-form spot values and domain checks") {
    const int dim = 4;
    IntensityHead zero = IntensityHead::init(1, dim, 1.0);
    zero.b[0] = 0.0; // all-zero head
    const std::vector<double> hidden(dim, 0.0);

    SUBCASE("all-zero head gives softplus(0) = ln 2 at any time") {
        for (double t : {0.5, 1.0, 99.0}) {
            CHECK(intensity_at(zero, hidden, 0.2, t + 0.2, 0) ==
                  doctest::Approx(std::log(2.0)).epsilon(1e-12));
        }
    }

    SUBCASE("projection term: w.h = 3 gives softplus(3)") {
        IntensityHead head = IntensityHead::init(1, dim, 1.0);
        head.b[0] = 0.0;
        head.w = {3.0, 0.0, 0.0, 0.0};
        const std::vector<double> h = {1.0, 5.0, -2.0, 0.0};
        CHECK(intensity_at(head, h, 1.0, 1.5, 0) ==
              doctest::Approx(std::log(1.0 + std::exp(3.0))).epsilon(1e-12));
        CHECK(intensity_at(head, h, 1.0, 1.5, 0) == doctest::Approx(3.048587).epsilon(1e-6));
    }

    SUBCASE("t at or before the interval start is rejected") {
        try {
            (void)intensity_at(zero, hidden, 2.0, 2.0, 0);
            FAIL("expected an error");
        } catch (const Error& e) {
            CHECK(e.code() == Errc::out_of_interval);
        }
        CHECK_THROWS_AS((void)intensity_at(zero, hidden, 2.0, 1.0, 0), Error);
    }

    SUBCASE("interval starting at zero uses the floored denominator") {
        // With t_i = 0 the elapsed-time feature is dt / 1e-6. A slope of
        // -1e-6 at dt = 0.5 therefore gives exactly softplus(-0.5).
        IntensityHead head = IntensityHead::init(1, dim, 1.0);
        head.b[0] = 0.0;
        head.alpha[0] = -1e-6;
        CHECK(intensity_at(head, hidden, 0.0, 0.5, 0) ==
              doctest::Approx(std::log1p(std::exp(-0.5))).epsilon(1e-12));

        // An O(1) slope drives the argument to -5e5; the mathematically
        // positive value underflows to exactly +0 (see the softplus case).
        head.alpha[0] = -1.0;
        const double value = intensity_at(head, hidden, 0.0, 0.5, 0);
        CHECK(std::isfinite(value));
        CHECK(value >= 0.0);
    }

    SUBCASE("positivity across random heads") {
        for (std::uint64_t s = 0; s < 100; ++s) {
            const IntensityHead head = random_head(3, dim, s);
            const auto h = random_hiddens(dim, s);
            // Interval starts away from zero keep the elapsed-time feature
            // O(1), where softplus positivity is representable.
            const double t_i = 0.3 * static_cast<double>(s % 7 + 1);
            CHECK(intensity_at(head, h, t_i, t_i + 0.01 + 0.2 * static_cast<double>(s % 5),
                               static_cast<int>(s % 3)) > 0.0);
        }
    }

    SUBCASE("shape errors") {
        CHECK_THROWS_AS((void)intensity_at(zero, std::vector<double>(3, 0.0), 0.0, 1.0, 0), Error);
        CHECK_THROWS_AS((void)intensity_at(zero, hidden, 0.0, 1.0, 1), Error);
    }
}

TEST_CASE("sequence_loglik: constant-intensity closed forms are exact for any sample count") {
    const int dim = 3;

    SUBCASE("lambda = 1, events {1,2,3}, T = 3 gives exactly -3") {
        const IntensityHead head = IntensityHead::init(1, dim, 1.0);
        const auto seq = make_sequence({{1.0, 0}, {2.0, 0}, {3.0, 0}}, 3.0);
        const auto hiddens = std::vector<double>(3 * dim, 0.0);
        for (int mc : {1, 10, 57}) {
            CHECK(sequence_loglik(head, hiddens, seq, mc, 42, 0) ==
                  doctest::Approx(-3.0).epsilon(1e-12));
        }
    }

    SUBCASE("lambda = 2, two events, T = 2 gives 2 ln 2 - 4") {
        const IntensityHead head = IntensityHead::init(1, dim, 2.0);
        const auto seq = make_sequence({{0.5, 0}, {1.25, 0}}, 2.0);
        const auto hiddens = std::vector<double>(2 * dim, 0.0);
        CHECK(sequence_loglik(head, hiddens, seq, 10, 7, 3) ==
              doctest::Approx(2.0 * std::log(2.0) - 4.0).epsilon(1e-12));
    }

    SUBCASE("multi-type constant head integrates the total intensity") {
        // Two types at rate 0.5 each: total 1.0; one type-1 event at t=2, T=4.
        const IntensityHead head = IntensityHead::init(2, dim, 0.5);
        const auto seq = make_sequence({{2.0, 1}}, 4.0);
        const auto hiddens = std::vector<double>(1 * dim, 0.0);
        CHECK(sequence_loglik(head, hiddens, seq, 10, 7, 0) ==
              doctest::Approx(std::log(0.5) - 4.0).epsilon(1e-12));
    }

    SUBCASE("empty sequence is pure compensator") {
        const IntensityHead head = IntensityHead::init(1, dim, 0.75);
        EventSequence empty;
        empty.t_end = 8.0;
        CHECK(sequence_loglik(head, {}, empty, 10, 1, 0) == doctest::Approx(-6.0).epsilon(1e-12));
    }
}

// For heads with O(1) random slopes the event times below grow geometrically
// from under the 1e-6 denominator floor, which keeps the elapsed-time feature
// (t - t_i)/max(t_i, 1e-6) of every interval at O(1). With times at natural
// scale that feature reaches ~1e6 in the interval before the first event and
// the intensity leaves the representable softplus range (the fitting code
// never goes there: any material slope costs the likelihood a fortune).
TEST_CASE("10-sample MC estimate is consistent with a high-sample reference") {
    const int dim = 6;
    const IntensityHead head = random_head(2, dim, 777);
    const auto seq =
        make_sequence({{5e-7, 0}, {2e-6, 1}, {7e-6, 0}, {2.5e-5, 1}, {9e-5, 0}}, 3e-4);
    const auto hiddens = random_hiddens(seq.events.size() * static_cast<std::size_t>(dim), 778);

    // Reference: same estimator at 200k samples per interval.
    const double reference = sequence_loglik(head, hiddens, seq, 200000, 5, 11);

    // 1000 reseeded 10-sample estimates.
    std::vector<double> estimates;
    estimates.reserve(1000);
    for (std::uint64_t s = 0; s < 1000; ++s) {
        estimates.push_back(sequence_loglik(head, hiddens, seq, 10, s, 11));
    }
    double mean = 0.0;
    for (double e : estimates) mean += e;
    mean /= static_cast<double>(estimates.size());
    double var = 0.0;
    for (double e : estimates) var += (e - mean) * (e - mean);
    var /= static_cast<double>(estimates.size() - 1);
    const double sd = std::sqrt(var);

    // A single estimate lies within 3 estimated standard errors.
    CHECK(std::abs(estimates[0] - reference) < 3.0 * sd);
    // Unbiasedness: the mean of 1000 estimates is within 3 SE of the mean.
    CHECK(std::abs(mean - reference) < 3.0 * sd / std::sqrt(1000.0));
    // Stratification helps: the spread is small relative to the value.
    CHECK(sd < 0.05 * std::abs(reference));

    SUBCASE("deterministic in (seed, seq_id)") {
        CHECK(sequence_loglik(head, hiddens, seq, 10, 123, 11) ==
              sequence_loglik(head, hiddens, seq, 10, 123, 11));
        CHECK(sequence_loglik(head, hiddens, seq, 10, 123, 11) !=
              sequence_loglik(head, hiddens, seq, 10, 124, 11));
        CHECK(sequence_loglik(head, hiddens, seq, 10, 123, 11) !=
              sequence_loglik(head, hiddens, seq, 10, 123, 12));
    }
}

TEST_CASE("head gradients match central finite differences on every parameter") {
    // Geometric event times for the same reason as the MC consistency case:
    // every interval's elapsed-time feature stays O(1), so the objective is
    // smooth at the central-difference step size along the slope block too.
    const int types = 3, dim = 8;
    IntensityHead head = random_head(types, dim, 31);
    const auto seq = make_sequence(
        {{5e-7, 0}, {2e-6, 2}, {7e-6, 1}, {2.5e-5, 2}, {9e-5, 0}, {3e-4, 1}}, 1e-3);
    const auto hiddens = random_hiddens(seq.events.size() * static_cast<std::size_t>(dim), 32);
    const int mc = 10;
    const std::uint64_t seed = 99, seq_id = 4;

    double loglik = 0.0;
    const IntensityHead grad = head_gradients(head, hiddens, seq, mc, seed, seq_id, &loglik);
    CHECK(loglik == doctest::Approx(sequence_loglik(head, hiddens, seq, mc, seed, seq_id)).epsilon(1e-12));

    std::vector<double> params = head.pack();
    const std::vector<double> analytic = grad.pack();
    REQUIRE(params.size() == analytic.size());
    const double h = 1e-6;
    for (std::size_t j = 0; j < params.size(); ++j) {
        IntensityHead probe = head;
        auto p = params;
        p[j] += h;
        probe.unpack(p);
        const double hi = sequence_loglik(probe, hiddens, seq, mc, seed, seq_id);
        p[j] = params[j] - h;
        probe.unpack(p);
        const double lo = sequence_loglik(probe, hiddens, seq, mc, seed, seq_id);
        const double fd = -(hi - lo) / (2.0 * h); // gradients of the NEGATIVE log-likelihood
        CHECK(std::abs(analytic[j] - fd) <= 1e-6 * std::max(1.0, std::abs(fd)));
    }
}

TEST_CASE("fitting on homogeneous Poisson data recovers the rate through the bias") {
    // Rate-0.7 Poisson data (Hawkes with zero excitation), constant zero
    // hiddens. Start the head at the wrong rate and fit.
    HawkesSpec spec;
    spec.base_rate = {0.7};
    spec.excitation = {{0.0}};
    spec.decay = 1.0;
    const int dim = 4;

    std::vector<EventSequence> seqs;
    std::vector<HeadFitSequence> data;
    std::size_t total_events = 0;
    SimulateOptions opts;
    opts.t_end = 20.0;
    for (std::uint64_t s = 0; s < 150; ++s) {
        seqs.push_back(simulate_hawkes(spec, opts, 9000 + s));
        total_events += seqs.back().events.size();
    }
    for (std::uint64_t s = 0; s < seqs.size(); ++s) {
        HeadFitSequence item;
        item.seq = &seqs[s];
        item.hiddens.assign(seqs[s].events.size() * static_cast<std::size_t>(dim), 0.0);
        item.seq_id = s;
        data.push_back(std::move(item));
    }
    CHECK(total_events > 1500); // sanity: enough signal at rate 0.7 over 150x20

    IntensityHead head = IntensityHead::init(1, dim, 0.2); // deliberately wrong
    HeadFitOptions fit;
    fit.steps = 50;
    fit.lr = 0.05;
    fit.mc_samples = 10;
    fit.seed = 5;

    // The fixed-seed objective does not increase across 50-step windows.
    std::vector<double> window_objectives;
    for (int window = 0; window < 6; ++window) {
        window_objectives.push_back(fit_intensity_head(head, data, fit));
    }
    for (std::size_t i = 1; i < window_objectives.size(); ++i) {
        CHECK(window_objectives[i] <= window_objectives[i - 1] + 1e-9);
    }

    // With zero hiddens the projection and initial-state parameters have no
    // gradient signal and stay at zero; the bias absorbs the rate.
    for (double x : head.w) CHECK(x == 0.0);
    for (double x : head.h0) CHECK(x == 0.0);

    // The fitted intensity away from the floored first interval: within 5%
    // of the true rate at representative (interval start, elapsed) probes.
    const std::vector<double> zero_hidden(dim, 0.0);
    for (double left : {2.0, 5.0, 10.0, 15.0}) {
        for (double dt : {0.2, 1.0}) {
            const double fitted = intensity_at(head, zero_hidden, left, left + dt, 0);
            CHECK(fitted == doctest::Approx(0.7).epsilon(0.05));
        }
    }
}

TEST_CASE("shape and parameter errors") {
    const IntensityHead head = IntensityHead::init(2, 3, 1.0);
    const auto seq = make_sequence({{1.0, 0}, {2.0, 1}}, 3.0);
    const auto hiddens = std::vector<double>(2 * 3, 0.0);

    SUBCASE("hidden count must match events") {
        const std::vector<double> wrong(3, 0.0);
        CHECK_THROWS_AS((void)sequence_loglik(head, wrong, seq, 10, 0, 0), Error);
    }
    SUBCASE("type index outside the head") {
        const auto bad_seq = make_sequence({{1.0, 0}, {2.0, 5}}, 3.0);
        CHECK_THROWS_AS((void)sequence_loglik(head, hiddens, bad_seq, 10, 0, 0), Error);
    }
    SUBCASE("sample count must be positive") {
        CHECK_THROWS_AS((void)sequence_loglik(head, hiddens, seq, 0, 0, 0), Error);
    }
    SUBCASE("invalid sharpness is rejected") {
        IntensityHead bad = head;
        bad.beta[1] = 0.0;
        CHECK_THROWS_AS((void)sequence_loglik(bad, hiddens, seq, 10, 0, 0), Error);
    }
    SUBCASE("fitting an empty dataset") {
        IntensityHead h = head;
        try {
            (void)fit_intensity_head(h, {}, HeadFitOptions{});
            FAIL("expected an error");
        } catch (const Error& e) {
            CHECK(e.code() == Errc::no_data);
        }
    }
    SUBCASE("pack/unpack round-trip") {
        const IntensityHead original = random_head(2, 3, 5);
        IntensityHead copy = IntensityHead::init(2, 3, 1.0);
        copy.unpack(original.pack());
        CHECK(copy.alpha == original.alpha);
        CHECK(copy.b == original.b);
        CHECK(copy.beta == original.beta);
        CHECK(copy.w == original.w);
        CHECK(copy.h0 == original.h0);
        CHECK_THROWS_AS(copy.unpack(std::vector<double>(3, 0.0)), Error);
    }
}
