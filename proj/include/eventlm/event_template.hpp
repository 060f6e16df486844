#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "eventlm/codec.hpp"
#include "eventlm/tpp.hpp"

namespace eventlm {

// The three next-event prediction tasks a prompt can request.
enum class TaskKind {
    time_prediction,
    type_prediction,
    description_prediction,
};

[[nodiscard]] std::string_view task_name(TaskKind task);
[[nodiscard]] TaskKind parse_task(std::string_view name);
[[nodiscard]] TokenId task_token(const Vocabulary& vocab, TaskKind task);

struct RenderOptions {
    ByteOrder byte_order = ByteOrder::most_significant_first;
    // When false, time fields are rendered as plain three-decimal strings
    // (the ablation path) instead of four temporal byte tokens.
    bool byte_tokens = true;
};

// Half-open token index range.
struct TokenSpan {
    int begin = 0;
    int end = 0;
    [[nodiscard]] int size() const { return end - begin; }
};

// Where each piece of one rendered event sits in the token stream.
struct EventSpans {
    TokenSpan whole;                         // <|start_of_event|> .. <|end_of_event|>
    TokenSpan type_text;
    std::optional<TokenSpan> description_text;
    TokenSpan time_tokens;                   // 4 temporal bytes, or the decimal text run
};

// A rendered training document: system block, one block per event, and a
// trailing <|endoftext|>. The spans let training and evaluation address
// fields without re-parsing.
struct TemplateDoc {
    std::vector<TokenId> tokens;
    TokenSpan system;                        // [0, first event block)
    std::vector<EventSpans> events;
    RenderOptions options;
};

// Fixed preambles for the system block (the wording differs between the byte
// token and the plain-number rendering so the model knows which spelling to
// expect).
[[nodiscard]] std::string_view system_preamble(bool byte_tokens);

// Render a whole sequence as a training document. The first event's interval
// is zero by convention; later intervals are consecutive time differences
// rounded to binary32.
[[nodiscard]] TemplateDoc render_sequence(const EventSequence& seq, const Vocabulary& vocab,
                                          const RenderOptions& options = {});

// Prompt for predicting a field of event `prefix_events` (0-based: the event
// right after the prefix): the document up to and including the prefix's last
// event, then <|start_of_event|> and the task token. Requires
// 1 <= prefix_events < doc.events.size().
[[nodiscard]] std::vector<TokenId> make_prompt(const TemplateDoc& doc, int prefix_events, TaskKind task,
                                               const Vocabulary& vocab);

// Ground-truth completion for the prompted field of event `target_event`,
// terminated by <|endoftext|>.
[[nodiscard]] std::vector<TokenId> make_response(const TemplateDoc& doc, int target_event, TaskKind task,
                                                 const Vocabulary& vocab);

// Prompt for predicting the event after the last rendered one (open-ended
// continuation; used when forecasting beyond an observed sequence).
[[nodiscard]] std::vector<TokenId> make_open_prompt(const TemplateDoc& doc, TaskKind task,
                                                    const Vocabulary& vocab);

// A parsed model completion for one task.
struct Prediction {
    TaskKind task = TaskKind::time_prediction;
    float interval = 0.0f;  // time task only
    std::string text;       // type/description tasks only
};

// Interpret a generated completion (everything after the prompt, with or
// without the trailing <|endoftext|>). Malformed completions raise instead of
// being silently repaired; the caller owns retry/fallback policy.
[[nodiscard]] Prediction parse_generation(std::span<const TokenId> generated, TaskKind task,
                                          const Vocabulary& vocab, const RenderOptions& options = {});

struct ParsedEvent {
    float interval = 0.0f;
    std::string type_label;
    std::optional<std::string> description;
};

struct ParsedDocument {
    std::string system_text;
    std::vector<ParsedEvent> events;
};

// Strict inverse of render_sequence at the token level (intervals come back
// as their binary32 roundings). Raises decode_error and friends on any
// structural violation.
[[nodiscard]] ParsedDocument parse_document(std::span<const TokenId> tokens, const Vocabulary& vocab,
                                            const RenderOptions& options = {});

// Canonical human-readable form of any token run: text bytes are printed
// raw, every other token as its surface form, with a line break before each
// structural token. Rendering a document reproduces the published sample
// layout.
[[nodiscard]] std::string pretty_print(std::span<const TokenId> tokens, const Vocabulary& vocab);

} // namespace eventlm
