#pragma once

#include <cstddef>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace eventlm {

// One evaluated metric with enough context to be reported on its own.
struct MetricReport {
    std::string dataset;
    std::string task;
    std::string metric;
    double value = 0.0;
    std::size_t n = 0;                        // sample count behind `value`
    std::map<std::string, std::size_t> aux;   // e.g. fallback / malformed counts

    bool operator==(const MetricReport&) const = default;

    void validate() const; // n >= 1 and finite value
};

// Root-mean-squared error over aligned interval vectors.
[[nodiscard]] double rmse(std::span<const double> truth, std::span<const double> predicted);

// Fraction of whitespace-trimmed exact string matches.
[[nodiscard]] double accuracy(std::span<const std::string> truth,
                              std::span<const std::string> predicted);

enum class TllNormalization {
    per_event,    // sum of logliks / sum of event counts (default)
    per_sequence, // mean loglik per sequence
    total,        // raw sum
};

// Aggregate per-sequence log-likelihoods into one number.
[[nodiscard]] double tll(std::span<const double> sequence_logliks,
                         std::span<const std::size_t> event_counts,
                         TllNormalization normalization = TllNormalization::per_event);

struct RougeScore {
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
};

// Word tokens for ROUGE-L: lowercase, punctuation split into separate
// tokens, whitespace-delimited. Exposed so tests can drive the LCS oracle on
// exactly the same token streams.
[[nodiscard]] std::vector<std::string> rouge_tokens(std::string_view text);

// Longest-common-subsequence F-measure (beta = 1) over rouge_tokens of both
// strings. Empty reference or candidate scores all zeros.
[[nodiscard]] RougeScore rouge_l(std::string_view reference, std::string_view candidate);

// Extension point for text-sentiment scoring. No lexicon ships with the
// repo; score() raises with guidance unless a caller installs an
// implementation.
class SentimentScorer {
public:
    virtual ~SentimentScorer() = default;
    [[nodiscard]] virtual double score(std::string_view text) const = 0;
};

// The built-in stub: always raises (the scoring lexicon is an external
// artifact; see README).
[[nodiscard]] const SentimentScorer& stub_sentiment_scorer();

} // namespace eventlm
