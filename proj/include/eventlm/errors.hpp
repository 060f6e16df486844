#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace eventlm {

// Every failure the library can signal. Keeping one enum (instead of an
// exception class per module) lets the CLI map failures onto exit codes in a
// single switch and lets tests assert on the precise failure kind.
enum class Errc {
    // codec
    invalid_interval,      // non-finite or negative interval, or float32 overflow
    malformed_time_tokens, // wrong arity or non-temporal token in a time field
    out_of_domain_time,    // decoded bit pattern is NaN/inf/negative
    malformed_text,        // non-text-byte token where text was expected
    // template
    decode_error,          // generated tokens do not form a well-formed field
    not_time_ordered,      // event times not strictly increasing / out of range
    invalid_prefix,        // prompt prefix length outside [1, N-1]
    no_description,        // description task requested on a dataset without them
    empty_prediction,      // model emitted EOS immediately
    // tpp_core
    unstable_spec,         // Hawkes branching ratio >= 1
    ingest_error,          // malformed JSONL dataset line
    // seq_model
    context_overflow,      // token stream longer than the model context
    empty_loss_mask,       // loss requested but no position is marked
    shape_mismatch,        // tensor/config dimensions disagree
    // intensity
    invalid_parameter,     // non-positive sharpness, wrong head dimensions
    out_of_interval,       // intensity queried outside the conditioned interval
    // pipeline / cli
    no_data,               // empty dataset split where data is required
    training_diverged,     // non-finite loss during optimisation
    prediction_failed,     // generation retries exhausted under reject policy
    incompatible_checkpoint, // vocabulary/config hash mismatch on load
    degenerate_input,      // metric input that has no defined value
    config_error,          // bad config file, unknown key, bad flag combination
    io_error,              // file not found / unwritable
};

[[nodiscard]] constexpr std::string_view errc_name(Errc code) noexcept {
    switch (code) {
    case Errc::invalid_interval: return "invalid_interval";
    case Errc::malformed_time_tokens: return "malformed_time_tokens";
    case Errc::out_of_domain_time: return "out_of_domain_time";
    case Errc::malformed_text: return "malformed_text";
    case Errc::decode_error: return "decode_error";
    case Errc::not_time_ordered: return "not_time_ordered";
    case Errc::invalid_prefix: return "invalid_prefix";
    case Errc::no_description: return "no_description";
    case Errc::empty_prediction: return "empty_prediction";
    case Errc::unstable_spec: return "unstable_spec";
    case Errc::ingest_error: return "ingest_error";
    case Errc::context_overflow: return "context_overflow";
    case Errc::empty_loss_mask: return "empty_loss_mask";
    case Errc::shape_mismatch: return "shape_mismatch";
    case Errc::invalid_parameter: return "invalid_parameter";
    case Errc::out_of_interval: return "out_of_interval";
    case Errc::no_data: return "no_data";
    case Errc::training_diverged: return "training_diverged";
    case Errc::prediction_failed: return "prediction_failed";
    case Errc::incompatible_checkpoint: return "incompatible_checkpoint";
    case Errc::degenerate_input: return "degenerate_input";
    case Errc::config_error: return "config_error";
    case Errc::io_error: return "io_error";
    }
    return "unknown";
}

// Single exception type for the whole library. carries the code so callers
// can branch (retry policies, CLI exit codes) without parsing messages.
class Error : public std::runtime_error {
public:
    Error(Errc code, const std::string& message)
        : std::runtime_error(std::string(errc_name(code)) + ": " + message), code_(code) {}

    [[nodiscard]] Errc code() const noexcept { return code_; }

private:
    Errc code_;
};

[[noreturn]] inline void raise(Errc code, const std::string& message) {
    throw Error(code, message);
}

inline void require(bool condition, Errc code, const std::string& message) {
    if (!condition) raise(code, message);
}

} // namespace eventlm
