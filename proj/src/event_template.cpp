#include "eventlm/event_template.hpp"

#include <algorithm>

#include "eventlm/errors.hpp"

namespace eventlm {

std::string_view task_name(TaskKind task) {
    switch (task) {
    case TaskKind::time_prediction: return "time";
    case TaskKind::type_prediction: return "type";
    case TaskKind::description_prediction: return "description";
    }
    return "unknown";
}

TaskKind parse_task(std::string_view name) {
    if (name == "time") return TaskKind::time_prediction;
    if (name == "type") return TaskKind::type_prediction;
    if (name == "description") return TaskKind::description_prediction;
    raise(Errc::config_error, "unknown task '" + std::string(name) + "' (expected time, type or description)");
}

TokenId task_token(const Vocabulary& vocab, TaskKind task) {
    switch (task) {
    case TaskKind::time_prediction: return vocab.time_prediction;
    case TaskKind::type_prediction: return vocab.type_prediction;
    case TaskKind::description_prediction: return vocab.description_prediction;
    }
    raise(Errc::config_error, "unknown task kind");
}

std::string_view system_preamble(bool byte_tokens) {
    if (byte_tokens) {
        return "textual representation of an event sequence denoted by event times in float Byte-tokens "
               "(each number as 4 byte tokens) along with textual event types";
    }
    return "textual representation of an event sequence denoted by event times in float numbers along "
           "with textual event types";
}

namespace {

void append_text(std::vector<TokenId>& tokens, std::string_view text) {
    for (unsigned char c : text) tokens.push_back(Vocabulary::text_byte(c));
}

} // namespace

TemplateDoc render_sequence(const EventSequence& seq, const Vocabulary& vocab, const RenderOptions& options) {
    seq.validate();
    TemplateDoc doc;
    doc.options = options;

    // System block: role, fixed preamble, INFO line. The newlines inside the
    // block are part of its canonical text; everywhere else line structure is
    // the pretty-printer's job, not token content.
    doc.tokens.push_back(vocab.im_start);
    append_text(doc.tokens, "system\n");
    append_text(doc.tokens, system_preamble(options.byte_tokens));
    append_text(doc.tokens, "\nINFO: ");
    append_text(doc.tokens, seq.info);
    doc.tokens.push_back(vocab.im_end);
    doc.tokens.push_back(vocab.im_start);
    append_text(doc.tokens, "sequence");
    doc.system = {0, static_cast<int>(doc.tokens.size())};

    const std::vector<double> taus = intervals(seq);
    doc.events.reserve(seq.events.size());
    for (std::size_t i = 0; i < seq.events.size(); ++i) {
        const Event& event = seq.events[i];
        EventSpans spans;
        spans.whole.begin = static_cast<int>(doc.tokens.size());

        doc.tokens.push_back(vocab.start_of_event);
        doc.tokens.push_back(vocab.type_prefix);
        spans.type_text.begin = static_cast<int>(doc.tokens.size());
        append_text(doc.tokens, event.type_label);
        spans.type_text.end = static_cast<int>(doc.tokens.size());

        if (event.description) {
            doc.tokens.push_back(vocab.description_prefix);
            TokenSpan description;
            description.begin = static_cast<int>(doc.tokens.size());
            append_text(doc.tokens, *event.description);
            description.end = static_cast<int>(doc.tokens.size());
            spans.description_text = description;
        }

        doc.tokens.push_back(vocab.time_prefix);
        spans.time_tokens.begin = static_cast<int>(doc.tokens.size());
        if (options.byte_tokens) {
            for (TokenId id : encode_interval(taus[i], options.byte_order)) doc.tokens.push_back(id);
        } else {
            append_text(doc.tokens, format_interval_string(taus[i]));
        }
        spans.time_tokens.end = static_cast<int>(doc.tokens.size());

        doc.tokens.push_back(vocab.end_of_event);
        spans.whole.end = static_cast<int>(doc.tokens.size());
        doc.events.push_back(spans);
    }

    doc.tokens.push_back(vocab.end_of_sequence);
    return doc;
}

std::vector<TokenId> make_prompt(const TemplateDoc& doc, int prefix_events, TaskKind task,
                                 const Vocabulary& vocab) {
    const int total = static_cast<int>(doc.events.size());
    require(prefix_events >= 1 && prefix_events < total, Errc::invalid_prefix,
            "prefix of " + std::to_string(prefix_events) + " events needs 1 <= prefix < " +
                std::to_string(total));
    const int cut = doc.events[static_cast<std::size_t>(prefix_events - 1)].whole.end;
    std::vector<TokenId> prompt(doc.tokens.begin(), doc.tokens.begin() + cut);
    prompt.push_back(vocab.start_of_event);
    prompt.push_back(task_token(vocab, task));
    return prompt;
}

std::vector<TokenId> make_response(const TemplateDoc& doc, int target_event, TaskKind task,
                                   const Vocabulary& vocab) {
    require(target_event >= 0 && target_event < static_cast<int>(doc.events.size()), Errc::invalid_prefix,
            "target event " + std::to_string(target_event) + " out of range");
    const EventSpans& spans = doc.events[static_cast<std::size_t>(target_event)];
    TokenSpan field;
    switch (task) {
    case TaskKind::time_prediction: field = spans.time_tokens; break;
    case TaskKind::type_prediction: field = spans.type_text; break;
    case TaskKind::description_prediction:
        require(spans.description_text.has_value(), Errc::no_description,
                "event " + std::to_string(target_event) + " has no description");
        field = *spans.description_text;
        break;
    }
    std::vector<TokenId> response(doc.tokens.begin() + field.begin, doc.tokens.begin() + field.end);
    response.push_back(vocab.end_of_sequence);
    return response;
}

std::vector<TokenId> make_open_prompt(const TemplateDoc& doc, TaskKind task, const Vocabulary& vocab) {
    require(!doc.events.empty(), Errc::invalid_prefix, "cannot continue an event-free document");
    // Everything up to the trailing <|endoftext|>, then a fresh event opening.
    const int cut = doc.events.back().whole.end;
    std::vector<TokenId> prompt(doc.tokens.begin(), doc.tokens.begin() + cut);
    prompt.push_back(vocab.start_of_event);
    prompt.push_back(task_token(vocab, task));
    return prompt;
}

Prediction parse_generation(std::span<const TokenId> generated, TaskKind task, const Vocabulary& vocab,
                            const RenderOptions& options) {
    // Cut at the first <|endoftext|>; everything after it is ignored.
    std::size_t end = generated.size();
    for (std::size_t i = 0; i < generated.size(); ++i) {
        if (generated[i] == vocab.end_of_sequence) {
            end = i;
            break;
        }
    }
    const std::span<const TokenId> body = generated.subspan(0, end);
    require(!body.empty(), Errc::empty_prediction, "model emitted no field content before <|endoftext|>");

    Prediction prediction;
    prediction.task = task;
    if (task == TaskKind::time_prediction) {
        if (options.byte_tokens) {
            require(body.size() == 4, Errc::malformed_time_tokens,
                    "time completion must be exactly 4 temporal byte tokens, got " +
                        std::to_string(body.size()));
            prediction.interval = decode_interval(body, options.byte_order);
        } else {
            for (TokenId id : body) {
                require(Vocabulary::is_text_byte(id), Errc::malformed_time_tokens,
                        "time completion must be plain text in number mode");
            }
            prediction.interval = parse_interval_string(detokenize_text(body));
        }
        return prediction;
    }
    for (TokenId id : body) {
        require(Vocabulary::is_text_byte(id), Errc::decode_error,
                "text completion contains non-text token id " + std::to_string(id));
    }
    prediction.text = detokenize_text(body);
    return prediction;
}

namespace {

// Cursor over a token stream with structural expectations.
class TokenCursor {
public:
    TokenCursor(std::span<const TokenId> tokens, const Vocabulary& vocab)
        : tokens_(tokens), vocab_(vocab) {}

    [[nodiscard]] bool done() const { return index_ >= tokens_.size(); }
    [[nodiscard]] TokenId peek() const {
        require(!done(), Errc::decode_error, "unexpected end of token stream");
        return tokens_[index_];
    }
    void expect(TokenId id, const char* what) {
        require(!done(), Errc::decode_error, std::string("expected ") + what + " but the stream ended");
        require(tokens_[index_] == id, Errc::decode_error,
                std::string("expected ") + what + " at token " + std::to_string(index_) + ", found '" +
                    vocab_.surface(tokens_[index_]) + "'");
        ++index_;
    }
    [[nodiscard]] std::string read_text_run() {
        std::string text;
        while (!done() && Vocabulary::is_text_byte(tokens_[index_])) {
            text.push_back(static_cast<char>(Vocabulary::byte_value(tokens_[index_])));
            ++index_;
        }
        return text;
    }
    [[nodiscard]] std::vector<TokenId> read_temporal_run() {
        std::vector<TokenId> run;
        while (!done() && Vocabulary::is_temporal_byte(tokens_[index_])) {
            run.push_back(tokens_[index_]);
            ++index_;
        }
        return run;
    }

private:
    std::span<const TokenId> tokens_;
    const Vocabulary& vocab_;
    std::size_t index_ = 0;
};

} // namespace

ParsedDocument parse_document(std::span<const TokenId> tokens, const Vocabulary& vocab,
                              const RenderOptions& options) {
    TokenCursor cursor(tokens, vocab);
    ParsedDocument parsed;

    cursor.expect(vocab.im_start, "<|im_start|>");
    parsed.system_text = cursor.read_text_run();
    require(!parsed.system_text.empty(), Errc::decode_error, "system block is empty");
    cursor.expect(vocab.im_end, "<|im_end|>");
    cursor.expect(vocab.im_start, "<|im_start|>");
    const std::string role = cursor.read_text_run();
    require(role == "sequence", Errc::decode_error, "expected the 'sequence' role, found '" + role + "'");

    while (!cursor.done() && cursor.peek() == vocab.start_of_event) {
        cursor.expect(vocab.start_of_event, "<|start_of_event|>");
        ParsedEvent event;
        cursor.expect(vocab.type_prefix, "<|type_prefix|>");
        event.type_label = cursor.read_text_run();
        require(!event.type_label.empty(), Errc::decode_error, "empty type label");
        if (!cursor.done() && cursor.peek() == vocab.description_prefix) {
            cursor.expect(vocab.description_prefix, "<|description_prefix|>");
            event.description = cursor.read_text_run();
        }
        cursor.expect(vocab.time_prefix, "<|time_prefix|>");
        if (options.byte_tokens) {
            const std::vector<TokenId> run = cursor.read_temporal_run();
            require(run.size() == 4, Errc::malformed_time_tokens,
                    "time field must hold exactly 4 temporal bytes, got " + std::to_string(run.size()));
            event.interval = decode_interval(run, options.byte_order);
        } else {
            const std::string text = cursor.read_text_run();
            event.interval = parse_interval_string(text);
        }
        cursor.expect(vocab.end_of_event, "<|end_of_event|>");
        parsed.events.push_back(std::move(event));
    }

    if (!cursor.done()) {
        cursor.expect(vocab.end_of_sequence, "<|endoftext|>");
        require(cursor.done(), Errc::decode_error, "tokens found after <|endoftext|>");
    }
    return parsed;
}

std::string pretty_print(std::span<const TokenId> tokens, const Vocabulary& vocab) {
    std::string out;
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        const TokenId id = tokens[i];
        const TokenKind kind = vocab.kind(id);
        if (kind == TokenKind::text_byte) {
            out.push_back(static_cast<char>(Vocabulary::byte_value(id)));
            continue;
        }
        if (kind == TokenKind::temporal_byte) {
            out += vocab.surface(id);
            continue;
        }
        // Structural and task tokens each open a new line.
        if (i != 0) out.push_back('\n');
        out += vocab.surface(id);
    }
    out.push_back('\n');
    return out;
}

} // namespace eventlm
