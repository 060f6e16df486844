#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <fstream>
#include <random>
#include <sstream>

#include "eventlm/errors.hpp"
#include "eventlm/event_template.hpp"
#include "oracles.hpp"

using namespace eventlm;

namespace {

std::string read_golden(const std::string& name) {
    const std::string path = std::string(EVENTLM_GOLDEN_DIR) + "/" + name;
    std::ifstream in(path, std::ios::binary);
    REQUIRE_MESSAGE(in.good(), "missing golden file ", path);
    std::ostringstream buffer;
    buffer << in.rdbuf();
    return buffer.str();
}

// The Amazon review sample: four events whose published byte spellings decode
// to intervals 0, 680, 70, 78.
EventSequence amazon_sample() {
    EventSequence seq;
    seq.info = "This sequence is a product review event from an Amazon user where event type is product "
               "category";
    seq.events = {
        {0.0, 0, "Luggage & Travel Gear", "Great bag..Scooby in pink!"},
        {680.0, 1, "Children Shoes", "Twinkle toes is the best!"},
        {750.0, 2, "Women Jewelry", "Pretty earrings."},
        {828.0, 3, "Men Uniforms, Work & Safety", "Nice, work shirt."},
    };
    seq.t_end = 830.0;
    return seq;
}

// The prompt-response sample: four observed events (intervals 0, 146, 18, 28)
// plus the target event whose interval is the published response spelling
// bytes 61,130,13,139.
EventSequence amazon_prompt_sample() {
    EventSequence seq;
    seq.info = "This sequence is a product review event from an Amazon user where event type is product "
               "category";
    const double target_interval = oracles::ieee754_binary32({61, 130, 13, 139});
    seq.events = {
        {0.0, 0, "Men Surf, Skate & Street", "I am a long-time fan of Reef sandals"},
        {146.0, 1, "Men Shoes", "I own 8 pair of Allen Edmonds and I like them all.  They are very comfortable"},
        {164.0, 2, "Shoe, Jewelry & Watch Accessories", "Easy to use"},
        {192.0, 1, "Men Shoes", "Great Shoe"},
        {192.0 + target_interval, 1, "Men Shoes", std::nullopt},
    };
    seq.t_end = 200.0;
    return seq;
}

EventSequence random_sequence(std::mt19937_64& rng, bool with_descriptions) {
    std::uniform_real_distribution<double> gap(0.001, 30.0);
    std::uniform_int_distribution<int> type(0, 2);
    std::uniform_int_distribution<int> count(1, 12);
    const char* labels[] = {"alpha", "beta mark", "gamma-3"};
    EventSequence seq;
    seq.info = "random sequence fixture";
    double t = 0.0;
    const int n = count(rng);
    for (int i = 0; i < n; ++i) {
        t += gap(rng);
        Event event;
        event.time = t;
        event.type_index = type(rng);
        event.type_label = labels[event.type_index];
        if (with_descriptions) event.description = "note " + std::to_string(i) + " on " + event.type_label;
        seq.events.push_back(event);
    }
    seq.t_end = t + gap(rng);
    return seq;
}

} // namespace

TEST_CASE("rendering reproduces the published Amazon sample byte for byte") {
    Vocabulary vocab;
    const TemplateDoc doc = render_sequence(amazon_sample(), vocab);

    REQUIRE(doc.tokens.back() == vocab.end_of_sequence);
    const std::span<const TokenId> body(doc.tokens.data(), doc.tokens.size() - 1);
    CHECK(pretty_print(body, vocab) == read_golden("table5_amazon.txt"));

    // Spot-check the raw token run of the second event against the published
    // spelling, independent of the pretty-printer.
    REQUIRE(doc.events.size() == 4);
    const EventSpans& spans = doc.events[1];
    std::vector<TokenId> want;
    want.push_back(vocab.start_of_event);
    want.push_back(vocab.type_prefix);
    for (unsigned char c : std::string("Children Shoes")) want.push_back(Vocabulary::text_byte(c));
    want.push_back(vocab.description_prefix);
    for (unsigned char c : std::string("Twinkle toes is the best!")) want.push_back(Vocabulary::text_byte(c));
    want.push_back(vocab.time_prefix);
    want.push_back(Vocabulary::temporal_byte(68));
    want.push_back(Vocabulary::temporal_byte(42));
    want.push_back(Vocabulary::temporal_byte(0));
    want.push_back(Vocabulary::temporal_byte(0));
    want.push_back(vocab.end_of_event);
    const std::vector<TokenId> got(doc.tokens.begin() + spans.whole.begin,
                                   doc.tokens.begin() + spans.whole.end);
    CHECK(got == want);
}

TEST_CASE("rendering reproduces the published StackOverflow sample prefix") {
    // The full published sample contains two events with a zero interval in
    // mid-sequence, which cannot arise from strictly increasing times; the
    // first ten events all have positive gaps and are covered here.
    const std::array<std::array<std::uint8_t, 4>, 10> spellings{{{0, 0, 0, 0},
                                                                 {58, 240, 0, 0},
                                                                 {64, 134, 225, 0},
                                                                 {62, 222, 48, 0},
                                                                 {61, 82, 128, 0},
                                                                 {64, 109, 212, 0},
                                                                 {62, 142, 64, 0},
                                                                 {63, 50, 24, 0},
                                                                 {60, 26, 0, 0},
                                                                 {63, 96, 232, 0}}};
    const char* labels[] = {"5", "13", "3", "3", "2", "3", "3", "5", "13", "7"};

    EventSequence seq;
    seq.info = "This sequence is a sequence of badges awarded to a user in StackOverflow. There are 22 "
               "event types.";
    double t = 0.0;
    for (std::size_t i = 0; i < spellings.size(); ++i) {
        t += oracles::ieee754_binary32(spellings[i]);
        Event event;
        event.time = t;
        event.type_index = std::stoi(labels[i]);
        event.type_label = labels[i];
        seq.events.push_back(event);
    }
    seq.t_end = t + 1.0;

    Vocabulary vocab;
    const TemplateDoc doc = render_sequence(seq, vocab);
    const std::span<const TokenId> body(doc.tokens.data(), doc.tokens.size() - 1);
    CHECK(pretty_print(body, vocab) == read_golden("table6_stackoverflow_prefix.txt"));

    // No description prefix anywhere: the dataset has no descriptions.
    for (TokenId id : doc.tokens) CHECK(id != vocab.description_prefix);
    // Every time field re-encodes to the published spelling.
    for (std::size_t i = 0; i < spellings.size(); ++i) {
        const TokenSpan span = doc.events[i].time_tokens;
        REQUIRE(span.size() == 4);
        for (int k = 0; k < 4; ++k) {
            CHECK(doc.tokens[static_cast<std::size_t>(span.begin + k)] ==
                  Vocabulary::temporal_byte(spellings[i][static_cast<std::size_t>(k)]));
        }
    }

    // How a zero spelling can arise at all: gaps below half the smallest
    // binary32 subnormal round to +0.0f.
    CHECK(encode_interval(5e-46, ByteOrder::most_significant_first) ==
          std::array<TokenId, 4>{Vocabulary::temporal_byte(0), Vocabulary::temporal_byte(0),
                                 Vocabulary::temporal_byte(0), Vocabulary::temporal_byte(0)});
}

TEST_CASE("prompt and response reproduce the published prompt-response pair") {
    Vocabulary vocab;
    const TemplateDoc doc = render_sequence(amazon_prompt_sample(), vocab);
    REQUIRE(doc.events.size() == 5);

    const std::vector<TokenId> prompt = make_prompt(doc, 4, TaskKind::time_prediction, vocab);
    CHECK(pretty_print(prompt, vocab) == read_golden("table7_prompt.txt"));

    // The prompt is a strict prefix of the document plus the task token: the
    // document itself continues with <|start_of_event|> at the same position.
    REQUIRE(prompt.size() >= 2);
    for (std::size_t i = 0; i + 1 < prompt.size(); ++i) CHECK(prompt[i] == doc.tokens[i]);
    CHECK(prompt.back() == vocab.time_prediction);

    const std::vector<TokenId> response = make_response(doc, 4, TaskKind::time_prediction, vocab);
    const std::vector<TokenId> want{Vocabulary::temporal_byte(61), Vocabulary::temporal_byte(130),
                                    Vocabulary::temporal_byte(13), Vocabulary::temporal_byte(139),
                                    vocab.end_of_sequence};
    CHECK(response == want);
}

TEST_CASE("first event interval is zero regardless of its absolute time") {
    Vocabulary vocab;
    EventSequence seq;
    seq.info = "offset start";
    seq.events = {{3.7, 0, "a", std::nullopt}};
    seq.t_end = 4.0;
    const TemplateDoc doc = render_sequence(seq, vocab);
    const TokenSpan span = doc.events[0].time_tokens;
    for (int k = 0; k < 4; ++k) {
        CHECK(doc.tokens[static_cast<std::size_t>(span.begin + k)] == Vocabulary::temporal_byte(0));
    }
}

TEST_CASE("event spans tile the document exactly") {
    Vocabulary vocab;
    std::mt19937_64 rng(3);
    for (int trial = 0; trial < 40; ++trial) {
        const EventSequence seq = random_sequence(rng, trial % 2 == 0);
        const TemplateDoc doc = render_sequence(seq, vocab);
        CHECK(doc.system.begin == 0);
        int cursor = doc.system.end;
        for (const EventSpans& spans : doc.events) {
            CHECK(spans.whole.begin == cursor);
            CHECK(spans.whole.begin < spans.type_text.begin);
            CHECK(spans.type_text.end <= spans.time_tokens.begin);
            if (spans.description_text) {
                CHECK(spans.type_text.end < spans.description_text->begin);
                CHECK(spans.description_text->end < spans.time_tokens.begin);
            }
            CHECK(spans.time_tokens.end < spans.whole.end);
            cursor = spans.whole.end;
        }
        CHECK(cursor == static_cast<int>(doc.tokens.size()) - 1);
        CHECK(doc.tokens.back() == vocab.end_of_sequence);
    }
}

TEST_CASE("render then parse inverts the document") {
    Vocabulary vocab;
    std::mt19937_64 rng(17);
    for (int trial = 0; trial < 60; ++trial) {
        const bool with_descriptions = trial % 2 == 0;
        RenderOptions options;
        options.byte_order =
            trial % 4 < 2 ? ByteOrder::most_significant_first : ByteOrder::least_significant_first;
        options.byte_tokens = trial % 3 != 0;
        const EventSequence seq = random_sequence(rng, with_descriptions);
        const TemplateDoc doc = render_sequence(seq, vocab, options);
        const ParsedDocument parsed = parse_document(doc.tokens, vocab, options);

        CHECK(parsed.system_text ==
              "system\n" + std::string(system_preamble(options.byte_tokens)) + "\nINFO: " + seq.info);
        REQUIRE(parsed.events.size() == seq.events.size());
        const std::vector<double> taus = intervals(seq);
        for (std::size_t i = 0; i < seq.events.size(); ++i) {
            if (options.byte_tokens) {
                CHECK(parsed.events[i].interval == static_cast<float>(taus[i]));
            } else {
                // The decimal path quantises to three fractional digits.
                CHECK(std::abs(static_cast<double>(parsed.events[i].interval) - taus[i]) <= 5.01e-4);
            }
            CHECK(parsed.events[i].type_label == seq.events[i].type_label);
            CHECK(parsed.events[i].description == seq.events[i].description);
        }
    }

    // Event-free documents parse to zero events.
    EventSequence empty;
    empty.info = "no events";
    empty.t_end = 1.0;
    const TemplateDoc doc = render_sequence(empty, vocab);
    const ParsedDocument parsed = parse_document(doc.tokens, vocab);
    CHECK(parsed.events.empty());
    CHECK(doc.events.empty());
    CHECK(doc.system.end == static_cast<int>(doc.tokens.size()) - 1);
}

TEST_CASE("parse rejects structural corruption") {
    Vocabulary vocab;
    const TemplateDoc doc = render_sequence(amazon_sample(), vocab);

    auto expect_code = [&](std::vector<TokenId> tokens, Errc want) {
        try {
            (void)parse_document(tokens, vocab);
            FAIL("expected a parse failure");
        } catch (const Error& error) {
            CHECK(error.code() == want);
        }
    };

    // Truncated document.
    expect_code(std::vector<TokenId>(doc.tokens.begin(), doc.tokens.begin() + 40), Errc::decode_error);
    // Clobber the time prefix of the first event.
    std::vector<TokenId> no_time = doc.tokens;
    no_time[static_cast<std::size_t>(doc.events[0].time_tokens.begin - 1)] = vocab.type_prefix;
    expect_code(no_time, Errc::decode_error);
    // Drop one temporal byte.
    std::vector<TokenId> short_time = doc.tokens;
    short_time.erase(short_time.begin() + doc.events[0].time_tokens.begin);
    expect_code(short_time, Errc::malformed_time_tokens);
    // Trailing garbage after the terminator.
    std::vector<TokenId> trailing = doc.tokens;
    trailing.push_back(Vocabulary::text_byte('x'));
    expect_code(trailing, Errc::decode_error);
    // Text where the document should start.
    expect_code({Vocabulary::text_byte('h'), Vocabulary::text_byte('i')}, Errc::decode_error);
}

TEST_CASE("prompt construction enforces prefix bounds") {
    Vocabulary vocab;
    const TemplateDoc doc = render_sequence(amazon_sample(), vocab);

    auto expect_invalid = [&](int prefix) {
        try {
            (void)make_prompt(doc, prefix, TaskKind::type_prediction, vocab);
            FAIL("expected invalid_prefix for prefix ", prefix);
        } catch (const Error& error) {
            CHECK(error.code() == Errc::invalid_prefix);
        }
    };
    expect_invalid(0);
    expect_invalid(4);  // == number of events: nothing left to predict
    expect_invalid(-1);

    for (int prefix = 1; prefix < 4; ++prefix) {
        const auto prompt = make_prompt(doc, prefix, TaskKind::type_prediction, vocab);
        CHECK(static_cast<int>(prompt.size()) ==
              doc.events[static_cast<std::size_t>(prefix - 1)].whole.end + 2);
        CHECK(prompt[prompt.size() - 2] == vocab.start_of_event);
        CHECK(prompt.back() == vocab.type_prediction);
    }
}

TEST_CASE("responses cover all three tasks") {
    Vocabulary vocab;
    const TemplateDoc doc = render_sequence(amazon_sample(), vocab);

    const auto type_response = make_response(doc, 2, TaskKind::type_prediction, vocab);
    CHECK(detokenize_text(std::span(type_response.data(), type_response.size() - 1)) == "Women Jewelry");
    CHECK(type_response.back() == vocab.end_of_sequence);

    const auto description_response = make_response(doc, 2, TaskKind::description_prediction, vocab);
    CHECK(detokenize_text(std::span(description_response.data(), description_response.size() - 1)) ==
          "Pretty earrings.");

    const auto time_response = make_response(doc, 1, TaskKind::time_prediction, vocab);
    REQUIRE(time_response.size() == 5);
    CHECK(decode_interval(std::span(time_response.data(), 4), ByteOrder::most_significant_first) == 680.0f);

    // Description task on an event without a description.
    EventSequence bare;
    bare.info = "bare";
    bare.events = {{1.0, 0, "a", std::nullopt}, {2.0, 0, "a", std::nullopt}};
    bare.t_end = 3.0;
    const TemplateDoc bare_doc = render_sequence(bare, vocab);
    try {
        (void)make_response(bare_doc, 1, TaskKind::description_prediction, vocab);
        FAIL("expected no_description");
    } catch (const Error& error) {
        CHECK(error.code() == Errc::no_description);
    }
}

TEST_CASE("open prompt continues past the last event") {
    Vocabulary vocab;
    const TemplateDoc doc = render_sequence(amazon_sample(), vocab);
    const auto prompt = make_open_prompt(doc, TaskKind::time_prediction, vocab);
    REQUIRE(prompt.size() == doc.tokens.size() + 1); // minus eos, plus start + task
    CHECK(prompt[prompt.size() - 2] == vocab.start_of_event);
    CHECK(prompt.back() == vocab.time_prediction);
    for (std::size_t i = 0; i + 2 < prompt.size(); ++i) CHECK(prompt[i] == doc.tokens[i]);

    EventSequence empty;
    empty.info = "no events";
    empty.t_end = 1.0;
    const TemplateDoc empty_doc = render_sequence(empty, vocab);
    CHECK_THROWS_AS((void)make_open_prompt(empty_doc, TaskKind::time_prediction, vocab), Error);
}

TEST_CASE("generation parsing is strict about field shape") {
    Vocabulary vocab;
    RenderOptions byte_mode;

    auto expect_code = [&](std::vector<TokenId> tokens, TaskKind task, const RenderOptions& options,
                           Errc want) {
        try {
            (void)parse_generation(tokens, task, vocab, options);
            FAIL("expected parse_generation failure");
        } catch (const Error& error) {
            CHECK(error.code() == want);
        }
    };

    // Well-formed time completion, with and without the terminator.
    const std::vector<TokenId> good{Vocabulary::temporal_byte(68), Vocabulary::temporal_byte(42),
                                    Vocabulary::temporal_byte(0), Vocabulary::temporal_byte(0),
                                    vocab.end_of_sequence};
    CHECK(parse_generation(good, TaskKind::time_prediction, vocab, byte_mode).interval == 680.0f);
    CHECK(parse_generation(std::span(good.data(), 4), TaskKind::time_prediction, vocab, byte_mode).interval ==
          680.0f);
    // Tokens after the terminator are ignored.
    std::vector<TokenId> padded = good;
    padded.push_back(Vocabulary::temporal_byte(7));
    CHECK(parse_generation(padded, TaskKind::time_prediction, vocab, byte_mode).interval == 680.0f);

    // Immediate end, wrong arity, text bytes in the field, NaN pattern.
    expect_code({vocab.end_of_sequence}, TaskKind::time_prediction, byte_mode, Errc::empty_prediction);
    expect_code({Vocabulary::temporal_byte(1), Vocabulary::temporal_byte(2), vocab.end_of_sequence},
                TaskKind::time_prediction, byte_mode, Errc::malformed_time_tokens);
    expect_code({Vocabulary::temporal_byte(1), Vocabulary::temporal_byte(2), Vocabulary::temporal_byte(3),
                 Vocabulary::temporal_byte(4), Vocabulary::temporal_byte(5), vocab.end_of_sequence},
                TaskKind::time_prediction, byte_mode, Errc::malformed_time_tokens);
    expect_code({Vocabulary::text_byte('1'), Vocabulary::temporal_byte(2), Vocabulary::temporal_byte(3),
                 Vocabulary::temporal_byte(4), vocab.end_of_sequence},
                TaskKind::time_prediction, byte_mode, Errc::malformed_time_tokens);
    expect_code({Vocabulary::temporal_byte(127), Vocabulary::temporal_byte(192), Vocabulary::temporal_byte(0),
                 Vocabulary::temporal_byte(0), vocab.end_of_sequence},
                TaskKind::time_prediction, byte_mode, Errc::out_of_domain_time);

    // Type completions are plain text.
    std::vector<TokenId> type_tokens = tokenize_text("Women Jewelry");
    type_tokens.push_back(vocab.end_of_sequence);
    CHECK(parse_generation(type_tokens, TaskKind::type_prediction, vocab, byte_mode).text ==
          "Women Jewelry");
    expect_code({vocab.end_of_sequence}, TaskKind::type_prediction, byte_mode, Errc::empty_prediction);
    std::vector<TokenId> type_with_byte = tokenize_text("oops");
    type_with_byte.push_back(Vocabulary::temporal_byte(9));
    expect_code(type_with_byte, TaskKind::type_prediction, byte_mode, Errc::decode_error);

    // Number mode accepts decimal text and rejects byte tokens.
    RenderOptions string_mode;
    string_mode.byte_tokens = false;
    std::vector<TokenId> decimal = tokenize_text("0.076");
    decimal.push_back(vocab.end_of_sequence);
    CHECK(parse_generation(decimal, TaskKind::time_prediction, vocab, string_mode).interval ==
          doctest::Approx(0.076));
    std::vector<TokenId> words = tokenize_text("soon");
    words.push_back(vocab.end_of_sequence);
    expect_code(words, TaskKind::time_prediction, string_mode, Errc::out_of_domain_time);
    expect_code(good, TaskKind::time_prediction, string_mode, Errc::malformed_time_tokens);
}

TEST_CASE("number mode renders decimal time fields and the numeric preamble") {
    Vocabulary vocab;
    RenderOptions options;
    options.byte_tokens = false;
    const TemplateDoc doc = render_sequence(amazon_sample(), vocab, options);

    const std::string text = pretty_print(doc.tokens, vocab);
    CHECK(text.find("event times in float numbers") != std::string::npos);
    CHECK(text.find("<|time_prefix|>680.000") != std::string::npos);
    CHECK(text.find("<|time_prefix|>0.000") != std::string::npos);
    CHECK(text.find("<|byte_") == std::string::npos);

    const auto response = make_response(doc, 1, TaskKind::time_prediction, vocab);
    CHECK(detokenize_text(std::span(response.data(), response.size() - 1)) == "680.000");
}

TEST_CASE("task names round trip") {
    Vocabulary vocab;
    for (TaskKind task : {TaskKind::time_prediction, TaskKind::type_prediction,
                          TaskKind::description_prediction}) {
        CHECK(parse_task(task_name(task)) == task);
        CHECK(vocab.is_task_token(task_token(vocab, task)));
    }
    CHECK_THROWS_AS((void)parse_task("translate"), Error);
}
