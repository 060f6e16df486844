#include "eventlm/metrics.hpp"

#include <cctype>
#include <cmath>

#include "eventlm/errors.hpp"

namespace eventlm {

void MetricReport::validate() const {
    require(n >= 1, Errc::degenerate_input, "a metric report needs at least one sample");
    require(std::isfinite(value), Errc::degenerate_input, "metric value must be finite");
}

double rmse(std::span<const double> truth, std::span<const double> predicted) {
    require(truth.size() == predicted.size(), Errc::shape_mismatch,
            "rmse needs aligned vectors of equal length");
    require(!truth.empty(), Errc::degenerate_input, "rmse of an empty vector is undefined");
    double sum = 0.0;
    for (std::size_t i = 0; i < truth.size(); ++i) {
        const double d = truth[i] - predicted[i];
        sum += d * d;
    }
    return std::sqrt(sum / static_cast<double>(truth.size()));
}

namespace {

std::string_view trim(std::string_view s) {
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
    return s;
}

} // namespace

double accuracy(std::span<const std::string> truth, std::span<const std::string> predicted) {
    require(truth.size() == predicted.size(), Errc::shape_mismatch,
            "accuracy needs aligned vectors of equal length");
    require(!truth.empty(), Errc::degenerate_input, "accuracy of an empty vector is undefined");
    std::size_t hits = 0;
    for (std::size_t i = 0; i < truth.size(); ++i) {
        if (trim(truth[i]) == trim(predicted[i])) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(truth.size());
}

double tll(std::span<const double> sequence_logliks, std::span<const std::size_t> event_counts,
           TllNormalization normalization) {
    require(sequence_logliks.size() == event_counts.size(), Errc::shape_mismatch,
            "tll needs one event count per sequence log-likelihood");
    require(!sequence_logliks.empty(), Errc::degenerate_input, "tll of an empty list is undefined");
    double sum = 0.0;
    std::size_t events = 0;
    for (std::size_t i = 0; i < sequence_logliks.size(); ++i) {
        sum += sequence_logliks[i];
        events += event_counts[i];
    }
    switch (normalization) {
        case TllNormalization::total: return sum;
        case TllNormalization::per_sequence:
            return sum / static_cast<double>(sequence_logliks.size());
        case TllNormalization::per_event:
            require(events > 0, Errc::degenerate_input,
                    "per-event tll needs at least one event in total");
            return sum / static_cast<double>(events);
    }
    raise(Errc::invalid_parameter, "unknown tll normalization");
}

std::vector<std::string> rouge_tokens(std::string_view text) {
    std::vector<std::string> tokens;
    std::string current;
    auto flush = [&] {
        if (!current.empty()) {
            tokens.push_back(current);
            current.clear();
        }
    };
    for (const char raw : text) {
        const auto c = static_cast<unsigned char>(raw);
        if (std::isspace(c)) {
            flush();
        } else if (std::isalnum(c)) {
            current.push_back(static_cast<char>(std::tolower(c)));
        } else {
            // Punctuation becomes its own single-character token.
            flush();
            tokens.emplace_back(1, static_cast<char>(c));
        }
    }
    flush();
    return tokens;
}

namespace {

// Classic O(n*m) LCS length with a two-row table.
std::size_t lcs_length(const std::vector<std::string>& a, const std::vector<std::string>& b) {
    std::vector<std::size_t> prev(b.size() + 1, 0), curr(b.size() + 1, 0);
    for (std::size_t i = 1; i <= a.size(); ++i) {
        for (std::size_t j = 1; j <= b.size(); ++j) {
            curr[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], curr[j - 1]);
        }
        std::swap(prev, curr);
    }
    return prev[b.size()];
}

} // namespace

RougeScore rouge_l(std::string_view reference, std::string_view candidate) {
    const auto ref = rouge_tokens(reference);
    const auto cand = rouge_tokens(candidate);
    if (ref.empty() || cand.empty()) return {};
    const auto lcs = static_cast<double>(lcs_length(ref, cand));
    RougeScore score;
    score.precision = lcs / static_cast<double>(cand.size());
    score.recall = lcs / static_cast<double>(ref.size());
    score.f1 = lcs == 0.0 ? 0.0
                          : 2.0 * score.precision * score.recall /
                                (score.precision + score.recall);
    return score;
}

namespace {

class StubSentimentScorer final : public SentimentScorer {
public:
    [[nodiscard]] double score(std::string_view) const override {
        raise(Errc::config_error,
              "no sentiment lexicon is bundled; install a SentimentScorer implementation "
              "backed by an external lexicon to use sentiment scoring");
    }
};

} // namespace

const SentimentScorer& stub_sentiment_scorer() {
    static const StubSentimentScorer stub;
    return stub;
}

} // namespace eventlm
