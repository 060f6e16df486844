#include "eventlm/tpp.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

#include <json.hpp>

#include "eventlm/codec.hpp"
#include "eventlm/errors.hpp"
#include "eventlm/rng.hpp"

namespace eventlm {

void EventSequence::validate() const {
    require(std::isfinite(t_end) && t_end >= 0.0, Errc::not_time_ordered,
            "t_end must be finite and non-negative");
    double previous = -1.0;
    for (std::size_t i = 0; i < events.size(); ++i) {
        const Event& event = events[i];
        require(std::isfinite(event.time), Errc::not_time_ordered,
                "event " + std::to_string(i) + " has a non-finite time");
        require(event.time >= 0.0, Errc::not_time_ordered,
                "event " + std::to_string(i) + " has a negative time");
        require(i == 0 || event.time > previous, Errc::not_time_ordered,
                "event times must be strictly increasing (event " + std::to_string(i) + ")");
        require(event.time <= t_end, Errc::not_time_ordered,
                "event " + std::to_string(i) + " occurs after t_end");
        require(event.type_index >= 0, Errc::not_time_ordered,
                "event " + std::to_string(i) + " has a negative type index");
        previous = event.time;
    }
}

std::vector<double> intervals(const EventSequence& seq) {
    std::vector<double> out(seq.events.size(), 0.0);
    for (std::size_t i = 1; i < seq.events.size(); ++i) {
        out[i] = seq.events[i].time - seq.events[i - 1].time;
    }
    return out;
}

double HawkesSpec::branching_spectral_radius() const {
    const int n = num_types();
    if (n == 0) return 0.0;
    // Power iteration on the non-negative branching matrix alpha / decay. Its
    // Perron eigenvalue is the spectral radius. Start from all-ones so the
    // projection onto the leading eigenvector cannot vanish.
    std::vector<double> v(static_cast<std::size_t>(n), 1.0);
    std::vector<double> w(static_cast<std::size_t>(n), 0.0);
    double radius = 0.0;
    for (int iteration = 0; iteration < 200; ++iteration) {
        for (int target = 0; target < n; ++target) {
            double sum = 0.0;
            for (int source = 0; source < n; ++source) {
                sum += excitation[static_cast<std::size_t>(target)][static_cast<std::size_t>(source)] *
                       v[static_cast<std::size_t>(source)];
            }
            w[static_cast<std::size_t>(target)] = sum / decay;
        }
        double norm = 0.0;
        for (double x : w) norm = std::max(norm, std::abs(x));
        if (norm == 0.0) return 0.0;
        for (int i = 0; i < n; ++i) v[static_cast<std::size_t>(i)] = w[static_cast<std::size_t>(i)] / norm;
        radius = norm;
    }
    return radius;
}

void HawkesSpec::validate() const {
    const int n = num_types();
    require(n > 0, Errc::invalid_parameter, "Hawkes spec needs at least one type");
    require(std::isfinite(decay) && decay > 0.0, Errc::invalid_parameter, "decay must be positive");
    require(static_cast<int>(excitation.size()) == n, Errc::invalid_parameter,
            "excitation must be a num_types x num_types matrix");
    for (int target = 0; target < n; ++target) {
        require(std::isfinite(base_rate[static_cast<std::size_t>(target)]) &&
                    base_rate[static_cast<std::size_t>(target)] >= 0.0,
                Errc::invalid_parameter, "base rates must be non-negative");
        require(static_cast<int>(excitation[static_cast<std::size_t>(target)].size()) == n,
                Errc::invalid_parameter, "excitation must be a num_types x num_types matrix");
        for (int source = 0; source < n; ++source) {
            const double alpha = excitation[static_cast<std::size_t>(target)][static_cast<std::size_t>(source)];
            require(std::isfinite(alpha) && alpha >= 0.0, Errc::invalid_parameter,
                    "excitation entries must be non-negative");
        }
    }
    const double radius = branching_spectral_radius();
    require(radius < 1.0, Errc::unstable_spec,
            "branching spectral radius " + std::to_string(radius) + " >= 1: process is non-stationary");
}

double analytic_intensity(const HawkesSpec& spec, const EventSequence& seq, double t, int type) {
    require(type >= 0 && type < spec.num_types(), Errc::invalid_parameter,
            "type index " + std::to_string(type) + " outside spec with " +
                std::to_string(spec.num_types()) + " types");
    require(std::isfinite(t) && t >= 0.0, Errc::invalid_parameter, "query time must be non-negative");
    double value = spec.base_rate[static_cast<std::size_t>(type)];
    for (const Event& event : seq.events) {
        if (event.time > t) break;
        value += spec.excitation[static_cast<std::size_t>(type)][static_cast<std::size_t>(event.type_index)] *
                 std::exp(-spec.decay * (t - event.time));
    }
    return value;
}

double analytic_loglik(const HawkesSpec& spec, const EventSequence& seq) {
    seq.validate();
    const int n = spec.num_types();
    // Per-source-type decayed counters A_s(t) = sum_{t_j < t, e_j = s}
    // exp(-decay (t - t_j)), updated event to event. Using the counter before
    // inserting the current event conditions each term on the strict past.
    std::vector<double> decayed(static_cast<std::size_t>(n), 0.0);
    double previous = 0.0;
    double log_term = 0.0;
    for (const Event& event : seq.events) {
        require(event.type_index < n, Errc::invalid_parameter,
                "event type " + std::to_string(event.type_index) + " outside spec");
        const double shrink = std::exp(-spec.decay * (event.time - previous));
        for (double& a : decayed) a *= shrink;
        double intensity = spec.base_rate[static_cast<std::size_t>(event.type_index)];
        for (int source = 0; source < n; ++source) {
            intensity += spec.excitation[static_cast<std::size_t>(event.type_index)][static_cast<std::size_t>(source)] *
                         decayed[static_cast<std::size_t>(source)];
        }
        log_term += std::log(intensity);
        decayed[static_cast<std::size_t>(event.type_index)] += 1.0;
        previous = event.time;
    }
    // Integral of the total intensity on [0, t_end]: the base rates contribute
    // t_end each; each event's kernel integrates in closed form.
    double integral = 0.0;
    for (int type = 0; type < n; ++type) integral += spec.base_rate[static_cast<std::size_t>(type)] * seq.t_end;
    for (const Event& event : seq.events) {
        double column = 0.0;
        for (int target = 0; target < n; ++target) {
            column += spec.excitation[static_cast<std::size_t>(target)][static_cast<std::size_t>(event.type_index)];
        }
        integral += column * (1.0 - std::exp(-spec.decay * (seq.t_end - event.time))) / spec.decay;
    }
    return log_term - integral;
}

HawkesSpec fit_homogeneous_rates(const std::vector<EventSequence>& sequences, int num_types) {
    require(num_types > 0, Errc::invalid_parameter, "need at least one type");
    double total_time = 0.0;
    std::vector<double> counts(static_cast<std::size_t>(num_types), 0.0);
    for (const EventSequence& seq : sequences) {
        total_time += seq.t_end;
        for (const Event& event : seq.events) {
            require(event.type_index < num_types, Errc::invalid_parameter,
                    "event type " + std::to_string(event.type_index) + " outside the requested type count");
            counts[static_cast<std::size_t>(event.type_index)] += 1.0;
        }
    }
    require(total_time > 0.0, Errc::no_data, "total observed time is zero");
    HawkesSpec spec;
    spec.base_rate.resize(static_cast<std::size_t>(num_types));
    spec.excitation.assign(static_cast<std::size_t>(num_types),
                           std::vector<double>(static_cast<std::size_t>(num_types), 0.0));
    spec.decay = 1.0;
    for (int type = 0; type < num_types; ++type) {
        spec.base_rate[static_cast<std::size_t>(type)] = counts[static_cast<std::size_t>(type)] / total_time;
    }
    return spec;
}

std::string synthetic_description(const std::string& type_label, double gap) {
    const char* pace = gap < 0.1   ? "immediate"
                       : gap < 1.0 ? "quick"
                       : gap < 5.0 ? "steady"
                       : gap < 20.0 ? "slow"
                                    : "rare";
    return std::string(pace) + " " + type_label + " activity after a gap of " + format_interval_string(gap);
}

EventSequence simulate_hawkes(const HawkesSpec& spec, const SimulateOptions& options, std::uint64_t seed) {
    spec.validate();
    require(std::isfinite(options.t_end) && options.t_end >= 0.0, Errc::invalid_parameter,
            "t_end must be non-negative");
    const int n = spec.num_types();
    if (!options.type_labels.empty()) {
        require(static_cast<int>(options.type_labels.size()) == n, Errc::invalid_parameter,
                "need one label per type");
    }

    EventSequence seq;
    seq.t_end = options.t_end;
    seq.info = options.info;

    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> uniform(0.0, 1.0);

    // Ogata thinning. Between accepted candidates every intensity decays, so
    // the total intensity immediately after the current time is a valid upper
    // bound until the next event.
    std::vector<double> decayed(static_cast<std::size_t>(n), 0.0); // per source type, at `now`
    double now = 0.0;
    while (true) {
        double bound = 0.0;
        for (int target = 0; target < n; ++target) {
            double value = spec.base_rate[static_cast<std::size_t>(target)];
            for (int source = 0; source < n; ++source) {
                value += spec.excitation[static_cast<std::size_t>(target)][static_cast<std::size_t>(source)] *
                         decayed[static_cast<std::size_t>(source)];
            }
            bound += value;
        }
        if (bound <= 0.0) break;
        const double wait = -std::log1p(-uniform(rng)) / bound;
        const double candidate = now + wait;
        if (candidate > options.t_end) break;
        const double shrink = std::exp(-spec.decay * (candidate - now));
        for (double& a : decayed) a *= shrink;
        now = candidate;
        // Total intensity at the candidate, accumulated per target type so the
        // same uniform draw both thins and selects the type.
        std::vector<double> per_type(static_cast<std::size_t>(n), 0.0);
        double total = 0.0;
        for (int target = 0; target < n; ++target) {
            double value = spec.base_rate[static_cast<std::size_t>(target)];
            for (int source = 0; source < n; ++source) {
                value += spec.excitation[static_cast<std::size_t>(target)][static_cast<std::size_t>(source)] *
                         decayed[static_cast<std::size_t>(source)];
            }
            per_type[static_cast<std::size_t>(target)] = value;
            total += value;
        }
        const double mark = uniform(rng) * bound;
        if (mark >= total) continue; // thinned
        int type = 0;
        double cumulative = per_type[0];
        while (mark >= cumulative && type + 1 < n) {
            ++type;
            cumulative += per_type[static_cast<std::size_t>(type)];
        }
        Event event;
        event.time = now;
        event.type_index = type;
        event.type_label = options.type_labels.empty() ? "type_" + std::to_string(type)
                                                       : options.type_labels[static_cast<std::size_t>(type)];
        if (options.with_descriptions) {
            const double gap = seq.events.empty() ? now : now - seq.events.back().time;
            event.description = synthetic_description(event.type_label, gap);
        }
        seq.events.push_back(std::move(event));
        decayed[static_cast<std::size_t>(type)] += 1.0;
    }
    seq.validate();
    return seq;
}

namespace {

using nlohmann::json;

EventSequence sequence_from_json(const json& node, const std::string& where) {
    require(node.is_object(), Errc::ingest_error, where + ": line is not a JSON object");
    require(node.contains("info") && node["info"].is_string(), Errc::ingest_error,
            where + ": missing string field 'info'");
    require(node.contains("t_end") && node["t_end"].is_number(), Errc::ingest_error,
            where + ": missing numeric field 't_end'");
    require(node.contains("events") && node["events"].is_array(), Errc::ingest_error,
            where + ": missing array field 'events'");
    EventSequence seq;
    seq.info = node["info"].get<std::string>();
    seq.t_end = node["t_end"].get<double>();
    for (std::size_t i = 0; i < node["events"].size(); ++i) {
        const json& entry = node["events"][i];
        const std::string event_where = where + ", event " + std::to_string(i);
        require(entry.is_object(), Errc::ingest_error, event_where + ": not a JSON object");
        require(entry.contains("time") && entry["time"].is_number(), Errc::ingest_error,
                event_where + ": missing numeric field 'time'");
        require(entry.contains("type_index") && entry["type_index"].is_number_integer(), Errc::ingest_error,
                event_where + ": missing integer field 'type_index'");
        require(entry.contains("type_label") && entry["type_label"].is_string(), Errc::ingest_error,
                event_where + ": missing string field 'type_label'");
        Event event;
        event.time = entry["time"].get<double>();
        event.type_index = entry["type_index"].get<int>();
        event.type_label = entry["type_label"].get<std::string>();
        if (entry.contains("description") && !entry["description"].is_null()) {
            require(entry["description"].is_string(), Errc::ingest_error,
                    event_where + ": 'description' must be a string");
            event.description = entry["description"].get<std::string>();
        }
        seq.events.push_back(std::move(event));
    }
    try {
        seq.validate();
    } catch (const Error& error) {
        raise(Errc::ingest_error, where + ": " + error.what());
    }
    return seq;
}

} // namespace

std::vector<EventSequence> read_jsonl(std::istream& in, const std::string& origin) {
    std::vector<EventSequence> sequences;
    std::string line;
    int line_number = 0;
    while (std::getline(in, line)) {
        ++line_number;
        if (line.empty()) continue;
        const std::string where = origin + ":" + std::to_string(line_number);
        json node;
        try {
            node = json::parse(line);
        } catch (const json::parse_error& error) {
            raise(Errc::ingest_error, where + ": " + error.what());
        }
        sequences.push_back(sequence_from_json(node, where));
    }
    return sequences;
}

std::vector<EventSequence> read_jsonl_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    require(in.good(), Errc::io_error, "cannot open dataset file: " + path);
    return read_jsonl(in, path);
}

void write_jsonl(std::ostream& out, const std::vector<EventSequence>& sequences) {
    for (const EventSequence& seq : sequences) {
        json node;
        node["info"] = seq.info;
        node["t_end"] = seq.t_end;
        node["events"] = json::array();
        for (const Event& event : seq.events) {
            json entry;
            entry["time"] = event.time;
            entry["type_index"] = event.type_index;
            entry["type_label"] = event.type_label;
            if (event.description) entry["description"] = *event.description;
            node["events"].push_back(std::move(entry));
        }
        out << node.dump() << "\n";
    }
}

void write_jsonl_file(const std::string& path, const std::vector<EventSequence>& sequences) {
    std::ofstream out(path, std::ios::binary);
    require(out.good(), Errc::io_error, "cannot open dataset file for writing: " + path);
    write_jsonl(out, sequences);
    out.flush();
    require(out.good(), Errc::io_error, "failed writing dataset file: " + path);
}

int count_types(const std::vector<EventSequence>& sequences) {
    int max_index = -1;
    for (const EventSequence& seq : sequences) {
        for (const Event& event : seq.events) max_index = std::max(max_index, event.type_index);
    }
    return max_index + 1;
}

} // namespace eventlm
