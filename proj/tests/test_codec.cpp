#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <bit>
#include <cmath>
#include <random>
#include <sstream>

#include "eventlm/codec.hpp"
#include "eventlm/errors.hpp"
#include "oracles.hpp"

using namespace eventlm;

namespace {

std::array<TokenId, 4> temporal(std::array<std::uint8_t, 4> bytes) {
    return {Vocabulary::temporal_byte(bytes[0]), Vocabulary::temporal_byte(bytes[1]),
            Vocabulary::temporal_byte(bytes[2]), Vocabulary::temporal_byte(bytes[3])};
}

Errc code_of(const std::function<void()>& fn) {
    try {
        fn();
    } catch (const Error& error) {
        return error.code();
    }
    FAIL("expected an eventlm::Error");
    return Errc::io_error;
}

} // namespace

TEST_CASE("vocabulary layout is fixed and complete") {
    Vocabulary vocab;
    CHECK(vocab.size() == 523);
    // Byte blocks sit at fixed offsets.
    CHECK(Vocabulary::text_byte(0) == 0);
    CHECK(Vocabulary::text_byte(255) == 255);
    CHECK(Vocabulary::temporal_byte(0) == 256);
    CHECK(Vocabulary::temporal_byte(255) == 511);
    // Specials and task tokens in declaration order after the byte blocks.
    CHECK(vocab.start_of_event == 512);
    CHECK(vocab.end_of_event == 513);
    CHECK(vocab.type_prefix == 514);
    CHECK(vocab.description_prefix == 515);
    CHECK(vocab.time_prefix == 516);
    CHECK(vocab.im_start == 517);
    CHECK(vocab.im_end == 518);
    CHECK(vocab.end_of_sequence == 519);
    CHECK(vocab.time_prediction == 520);
    CHECK(vocab.type_prediction == 521);
    CHECK(vocab.description_prediction == 522);

    CHECK(vocab.surface(vocab.start_of_event) == "<|start_of_event|>");
    CHECK(vocab.surface(vocab.end_of_event) == "<|end_of_event|>");
    CHECK(vocab.surface(vocab.type_prefix) == "<|type_prefix|>");
    CHECK(vocab.surface(vocab.description_prefix) == "<|description_prefix|>");
    CHECK(vocab.surface(vocab.time_prefix) == "<|time_prefix|>");
    CHECK(vocab.surface(vocab.im_start) == "<|im_start|>");
    CHECK(vocab.surface(vocab.im_end) == "<|im_end|>");
    CHECK(vocab.surface(vocab.end_of_sequence) == "<|endoftext|>");
    CHECK(vocab.surface(vocab.time_prediction) == "<|time_prediction|>");
    CHECK(vocab.surface(vocab.type_prediction) == "<|type_prediction|>");
    CHECK(vocab.surface(vocab.description_prediction) == "<|description_prediction|>");
    CHECK(vocab.surface(Vocabulary::temporal_byte(125)) == "<|byte_125|>");
    CHECK(vocab.surface(Vocabulary::text_byte('a')) == "a");

    CHECK(vocab.kind(17) == TokenKind::text_byte);
    CHECK(vocab.kind(300) == TokenKind::temporal_byte);
    CHECK(vocab.kind(vocab.im_end) == TokenKind::special);
    CHECK(vocab.kind(vocab.time_prediction) == TokenKind::task);
    CHECK(vocab.is_task_token(vocab.description_prediction));
    CHECK_FALSE(vocab.is_task_token(vocab.end_of_sequence));

    CHECK(Vocabulary::byte_value(Vocabulary::temporal_byte(61)) == 61);
    CHECK(Vocabulary::byte_value(Vocabulary::text_byte(61)) == 61);
    CHECK(code_of([&] { (void)Vocabulary::byte_value(vocab.im_start); }) == Errc::decode_error);
    CHECK(code_of([&] { (void)vocab.kind(523); }) == Errc::decode_error);
    CHECK(code_of([&] { (void)vocab.surface(-1); }) == Errc::decode_error);
}

TEST_CASE("vocabulary manifest is stable and hashable") {
    Vocabulary a;
    Vocabulary b;
    CHECK(a.manifest_text() == b.manifest_text());
    CHECK(a.manifest_hash() == b.manifest_hash());

    std::istringstream lines(a.manifest_text());
    std::string line;
    CHECK(std::getline(lines, line));
    CHECK(line == "eventlm-vocabulary v1");
    CHECK(std::getline(lines, line));
    CHECK(line == "size 523");
    int rows = 0;
    while (std::getline(lines, line)) ++rows;
    CHECK(rows == 523);
    // Non-printable surfaces are escaped, so the manifest is one row per line.
    CHECK(a.manifest_text().find("\\x0A") != std::string::npos);
}

TEST_CASE("published byte spellings decode to the published values") {
    // 0.075999237 spelled least-significant-byte first.
    const std::array<std::uint8_t, 4> msb_bytes{61, 155, 165, 125};
    const double want = oracles::ieee754_binary32(msb_bytes);
    CHECK(want == doctest::Approx(0.075999237).epsilon(1e-7));

    const float decoded = decode_interval(temporal({125, 165, 155, 61}), ByteOrder::least_significant_first);
    CHECK(static_cast<double>(decoded) == want);
    CHECK(std::bit_cast<std::uint32_t>(decoded) == 0x3D9BA57Du);

    CHECK(encode_interval(0.075999237, ByteOrder::least_significant_first) ==
          temporal({125, 165, 155, 61}));
    CHECK(encode_interval(0.075999237, ByteOrder::most_significant_first) ==
          temporal({61, 155, 165, 125}));

    // Most-significant-first spellings from the worked event-sequence samples.
    struct Sample {
        std::array<std::uint8_t, 4> bytes;
        double value;
    };
    const Sample samples[] = {
        {{0, 0, 0, 0}, 0.0},       {{68, 42, 0, 0}, 680.0},  {{66, 140, 0, 0}, 70.0},
        {{66, 156, 0, 0}, 78.0},   {{67, 18, 0, 0}, 146.0},  {{65, 144, 0, 0}, 18.0},
        {{65, 224, 0, 0}, 28.0},
    };
    for (const auto& sample : samples) {
        CAPTURE(sample.value);
        CHECK(oracles::ieee754_binary32(sample.bytes) == sample.value);
        CHECK(decode_interval(temporal(sample.bytes), ByteOrder::most_significant_first) ==
              doctest::Approx(sample.value));
        CHECK(encode_interval(sample.value, ByteOrder::most_significant_first) == temporal(sample.bytes));
    }
}

TEST_CASE("byte order only permutes the emitted tokens") {
    std::mt19937_64 rng(7);
    std::uniform_real_distribution<double> dist(0.0, 1e6);
    for (int i = 0; i < 200; ++i) {
        const double value = dist(rng);
        const auto msb = encode_interval(value, ByteOrder::most_significant_first);
        const auto lsb = encode_interval(value, ByteOrder::least_significant_first);
        for (int k = 0; k < 4; ++k) CHECK(msb[static_cast<std::size_t>(k)] == lsb[static_cast<std::size_t>(3 - k)]);
        CHECK(decode_interval(msb, ByteOrder::most_significant_first) ==
              decode_interval(lsb, ByteOrder::least_significant_first));
    }
}

TEST_CASE("round trip is bit-exact over random bit patterns and edges") {
    // Values are constructed by the independent field-arithmetic oracle, so a
    // matching round trip checks the codec against IEEE-754 itself.
    std::mt19937_64 rng(11);
    std::uniform_int_distribution<std::uint32_t> dist;
    int tested = 0;
    for (int order_index = 0; order_index < 2; ++order_index) {
        const ByteOrder order = order_index == 0 ? ByteOrder::most_significant_first
                                                 : ByteOrder::least_significant_first;
        for (int i = 0; i < 100000; ++i) {
            std::uint32_t bits = dist(rng) & 0x7FFFFFFFu; // clear the sign bit
            if (((bits >> 23) & 0xFF) == 255) bits &= 0x7F7FFFFFu; // avoid NaN/inf
            const std::array<std::uint8_t, 4> msb_bytes{
                static_cast<std::uint8_t>(bits >> 24), static_cast<std::uint8_t>(bits >> 16),
                static_cast<std::uint8_t>(bits >> 8), static_cast<std::uint8_t>(bits)};
            const double value = oracles::ieee754_binary32(msb_bytes);
            const auto tokens = encode_interval(value, order);
            const float back = decode_interval(tokens, order);
            if (static_cast<double>(back) != value) {
                CAPTURE(bits);
                REQUIRE(static_cast<double>(back) == value);
            }
            ++tested;
        }
    }
    CHECK(tested == 200000);

    // Edge values: zero, smallest subnormal, largest finite.
    for (const std::uint32_t bits : {0x00000000u, 0x00000001u, 0x7F7FFFFFu}) {
        const std::array<std::uint8_t, 4> msb_bytes{
            static_cast<std::uint8_t>(bits >> 24), static_cast<std::uint8_t>(bits >> 16),
            static_cast<std::uint8_t>(bits >> 8), static_cast<std::uint8_t>(bits)};
        const double value = oracles::ieee754_binary32(msb_bytes);
        const auto tokens = encode_interval(value, ByteOrder::most_significant_first);
        CHECK(static_cast<double>(decode_interval(tokens, ByteOrder::most_significant_first)) == value);
    }
    CHECK(oracles::ieee754_binary32({0, 0, 0, 1}) == std::ldexp(1.0, -149));
}

TEST_CASE("encode rejects out-of-domain intervals") {
    CHECK(code_of([] { (void)encode_interval(-1.0, ByteOrder::most_significant_first); }) ==
          Errc::invalid_interval);
    CHECK(code_of([] { (void)encode_interval(std::nan(""), ByteOrder::most_significant_first); }) ==
          Errc::invalid_interval);
    CHECK(code_of([] {
              (void)encode_interval(std::numeric_limits<double>::infinity(), ByteOrder::most_significant_first);
          }) == Errc::invalid_interval);
    // Finite in double but overflows binary32.
    CHECK(code_of([] { (void)encode_interval(1e39, ByteOrder::most_significant_first); }) ==
          Errc::invalid_interval);
}

TEST_CASE("decode rejects malformed and out-of-domain token runs") {
    Vocabulary vocab;
    const auto ok = temporal({68, 42, 0, 0});
    // Wrong arity.
    std::vector<TokenId> three(ok.begin(), ok.begin() + 3);
    CHECK(code_of([&] { (void)decode_interval(three, ByteOrder::most_significant_first); }) ==
          Errc::malformed_time_tokens);
    // A text byte in a time field.
    std::vector<TokenId> mixed(ok.begin(), ok.end());
    mixed[2] = Vocabulary::text_byte('0');
    CHECK(code_of([&] { (void)decode_interval(mixed, ByteOrder::most_significant_first); }) ==
          Errc::malformed_time_tokens);
    // A special token in a time field.
    mixed[2] = vocab.time_prefix;
    CHECK(code_of([&] { (void)decode_interval(mixed, ByteOrder::most_significant_first); }) ==
          Errc::malformed_time_tokens);
    // NaN pattern 0x7FC00000 and negative pattern 0xBF800000 (-1.0f).
    CHECK(code_of([&] {
              (void)decode_interval(temporal({127, 192, 0, 0}), ByteOrder::most_significant_first);
          }) == Errc::out_of_domain_time);
    CHECK(code_of([&] {
              (void)decode_interval(temporal({191, 128, 0, 0}), ByteOrder::most_significant_first);
          }) == Errc::out_of_domain_time);
    // Infinity pattern 0x7F800000.
    CHECK(code_of([&] {
              (void)decode_interval(temporal({127, 128, 0, 0}), ByteOrder::most_significant_first);
          }) == Errc::out_of_domain_time);
}

TEST_CASE("text tokenization is byte-level and lossless") {
    const std::string text = "0.075999237";
    const auto tokens = tokenize_text(text);
    CHECK(tokens.size() == 11); // digit-string spelling costs 11 tokens vs 4 byte tokens
    CHECK(detokenize_text(tokens) == text);

    // Arbitrary bytes, including UTF-8 multibyte sequences and NUL.
    std::string raw;
    for (int i = 0; i < 256; ++i) raw.push_back(static_cast<char>(i));
    raw += "κόσμε £→";
    CHECK(detokenize_text(tokenize_text(raw)) == raw);

    std::vector<TokenId> bad{Vocabulary::text_byte('a'), Vocabulary::temporal_byte(3)};
    CHECK(code_of([&] { (void)detokenize_text(bad); }) == Errc::malformed_text);
}

TEST_CASE("number-string fallback renders three decimals with banker's rounding") {
    CHECK(format_interval_string(0.075999237) == "0.076");
    CHECK(format_interval_string(680.0) == "680.000");
    CHECK(format_interval_string(0.0) == "0.000");
    CHECK(format_interval_string(0.075999237) == oracles::decimal3(0.075999237));
    CHECK(format_interval_string(680.0) == oracles::decimal3(680.0));

    std::mt19937_64 rng(23);
    std::uniform_real_distribution<double> dist(0.0, 1000.0);
    for (int i = 0; i < 2000; ++i) {
        const double value = dist(rng);
        CHECK(format_interval_string(value) == oracles::decimal3(value));
    }

    const auto tokens = encode_interval_string(0.075999237);
    CHECK(tokens.size() == 5); // "0.076"
    CHECK(detokenize_text(tokens) == "0.076");

    CHECK(parse_interval_string("0.076") == doctest::Approx(0.076));
    CHECK(parse_interval_string("680.000") == 680.0f);
    CHECK(code_of([] { (void)parse_interval_string(""); }) == Errc::out_of_domain_time);
    CHECK(code_of([] { (void)parse_interval_string("abc"); }) == Errc::out_of_domain_time);
    CHECK(code_of([] { (void)parse_interval_string("-1.0"); }) == Errc::out_of_domain_time);
    CHECK(code_of([] { (void)parse_interval_string("1.0x"); }) == Errc::out_of_domain_time);
    CHECK(code_of([] { (void)encode_interval_string(-2.0); }) == Errc::invalid_interval);
}
