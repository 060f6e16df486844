#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace eventlm {

// One marked event: an absolute occurrence time, a categorical type (both as
// a dense index and as the human-readable label that gets rendered), and an
// optional free-text description.
struct Event {
    double time = 0.0;
    int type_index = 0;
    std::string type_label;
    std::optional<std::string> description;
};

// A finite realisation observed on [0, t_end]. Times are strictly increasing
// and non-negative; t_end bounds the last event. `info` is the free-text
// sequence context rendered into the system block (never empty for shipped
// datasets).
struct EventSequence {
    std::vector<Event> events;
    double t_end = 0.0;
    std::string info;

    [[nodiscard]] int size() const { return static_cast<int>(events.size()); }
    // Raises not_time_ordered / ingest_error on violated invariants.
    void validate() const;
};

// Inter-event intervals under the convention that the first event's interval
// is zero (the absolute start offset is not modelled).
[[nodiscard]] std::vector<double> intervals(const EventSequence& seq);

// -- multivariate Hawkes process with exponential kernels ---------------------
//
// lambda_e(t) = mu_e + sum_{t_j <= t} alpha[e][e_j] * exp(-decay * (t - t_j))
//
// `excitation[target][source]` is the jump a source-type event adds to the
// target type's intensity. Stationarity requires the spectral radius of
// excitation/decay to stay below one.

struct HawkesSpec {
    std::vector<double> base_rate;               // mu, one per type
    std::vector<std::vector<double>> excitation; // alpha, [target][source]
    double decay = 1.0;                          // beta, shared

    [[nodiscard]] int num_types() const { return static_cast<int>(base_rate.size()); }
    [[nodiscard]] double branching_spectral_radius() const;
    // Raises invalid_parameter on shape/positivity problems, unstable_spec if
    // the branching ratio reaches 1.
    void validate() const;
};

// Intensity of `type` at time t given the realised history (events at times
// <= t contribute; the kernel is evaluated at lag zero for an event exactly
// at t).
[[nodiscard]] double analytic_intensity(const HawkesSpec& spec, const EventSequence& seq, double t,
                                        int type);

// Exact log-likelihood of the realisation on [0, t_end] under `spec`:
// sum_i log lambda_{e_i}(t_i^-) - integral of the total intensity. Events
// are conditioned on the strict past; the integral uses the closed form of
// the exponential kernel.
[[nodiscard]] double analytic_loglik(const HawkesSpec& spec, const EventSequence& seq);

// Maximum-likelihood homogeneous Poisson rates (one per type) for a set of
// realisations: count of type-e events divided by total observed time. Useful
// as the baseline every conditional model has to beat. Returned as a
// HawkesSpec with zero excitation so analytic_loglik applies unchanged.
[[nodiscard]] HawkesSpec fit_homogeneous_rates(const std::vector<EventSequence>& sequences, int num_types);

// Ogata thinning simulation on [0, t_end]. Deterministic in `seed`. Labels
// are "type_0", "type_1", ... unless `type_labels` provides overrides. When
// `with_descriptions` is set, each event gets a deterministic synthetic
// description derived from its type and preceding gap.
struct SimulateOptions {
    double t_end = 100.0;
    std::string info;
    std::vector<std::string> type_labels;
    bool with_descriptions = false;
};

[[nodiscard]] EventSequence simulate_hawkes(const HawkesSpec& spec, const SimulateOptions& options,
                                            std::uint64_t seed);

// Deterministic description text for synthetic corpora.
[[nodiscard]] std::string synthetic_description(const std::string& type_label, double gap);

// -- JSONL dataset ingestion ---------------------------------------------------
//
// One sequence per line:
//   {"info": str, "t_end": number, "events": [{"time": number,
//    "type_index": int, "type_label": str, "description": str?}]}

[[nodiscard]] std::vector<EventSequence> read_jsonl(std::istream& in, const std::string& origin);
[[nodiscard]] std::vector<EventSequence> read_jsonl_file(const std::string& path);
void write_jsonl(std::ostream& out, const std::vector<EventSequence>& sequences);
void write_jsonl_file(const std::string& path, const std::vector<EventSequence>& sequences);

// Largest type_index + 1 across the given sequences (0 when empty).
[[nodiscard]] int count_types(const std::vector<EventSequence>& sequences);

} // namespace eventlm
