#include "eventlm/codec.hpp"

#include <bit>
#include <cmath>
#include <cstdio>
#include <limits>
#include <ostream>
#include <sstream>

#include "eventlm/errors.hpp"
#include "eventlm/rng.hpp"

namespace eventlm {

std::string_view byte_order_name(ByteOrder order) {
    return order == ByteOrder::most_significant_first ? "msb" : "lsb";
}

ByteOrder parse_byte_order(std::string_view name) {
    if (name == "msb") return ByteOrder::most_significant_first;
    if (name == "lsb") return ByteOrder::least_significant_first;
    raise(Errc::config_error, "unknown byte order '" + std::string(name) + "' (expected msb or lsb)");
}

Vocabulary::Vocabulary() {
    surfaces_.reserve(523);
    kinds_.reserve(523);
    char buffer[32];
    for (int value = 0; value < 256; ++value) {
        // Text byte tokens render as the raw byte itself; surface kept
        // printable in the manifest via escaping there.
        surfaces_.push_back(std::string(1, static_cast<char>(value)));
        kinds_.push_back(TokenKind::text_byte);
    }
    for (int value = 0; value < 256; ++value) {
        std::snprintf(buffer, sizeof(buffer), "<|byte_%d|>", value);
        surfaces_.emplace_back(buffer);
        kinds_.push_back(TokenKind::temporal_byte);
    }
    start_of_event = add_special("<|start_of_event|>", TokenKind::special);
    end_of_event = add_special("<|end_of_event|>", TokenKind::special);
    type_prefix = add_special("<|type_prefix|>", TokenKind::special);
    description_prefix = add_special("<|description_prefix|>", TokenKind::special);
    time_prefix = add_special("<|time_prefix|>", TokenKind::special);
    im_start = add_special("<|im_start|>", TokenKind::special);
    im_end = add_special("<|im_end|>", TokenKind::special);
    end_of_sequence = add_special("<|endoftext|>", TokenKind::special);
    time_prediction = add_special("<|time_prediction|>", TokenKind::task);
    type_prediction = add_special("<|type_prediction|>", TokenKind::task);
    description_prediction = add_special("<|description_prediction|>", TokenKind::task);
}

TokenId Vocabulary::add_special(const std::string& surface, TokenKind kind) {
    surfaces_.push_back(surface);
    kinds_.push_back(kind);
    return static_cast<TokenId>(surfaces_.size() - 1);
}

TokenKind Vocabulary::kind(TokenId id) const {
    require(id >= 0 && id < size(), Errc::decode_error,
            "token id " + std::to_string(id) + " outside vocabulary of size " + std::to_string(size()));
    return kinds_[static_cast<std::size_t>(id)];
}

const std::string& Vocabulary::surface(TokenId id) const {
    require(id >= 0 && id < size(), Errc::decode_error,
            "token id " + std::to_string(id) + " outside vocabulary of size " + std::to_string(size()));
    return surfaces_[static_cast<std::size_t>(id)];
}

std::uint8_t Vocabulary::byte_value(TokenId id) {
    if (is_text_byte(id)) return static_cast<std::uint8_t>(id - text_byte_base);
    if (is_temporal_byte(id)) return static_cast<std::uint8_t>(id - temporal_byte_base);
    raise(Errc::decode_error, "token id " + std::to_string(id) + " carries no byte value");
}

bool Vocabulary::is_task_token(TokenId id) const {
    return id >= 0 && id < size() && kinds_[static_cast<std::size_t>(id)] == TokenKind::task;
}

namespace {

std::string escape_surface(const std::string& surface) {
    std::string out;
    for (unsigned char c : surface) {
        if (c >= 0x21 && c <= 0x7E) {
            out.push_back(static_cast<char>(c));
        } else {
            char buffer[8];
            std::snprintf(buffer, sizeof(buffer), "\\x%02X", c);
            out += buffer;
        }
    }
    return out;
}

std::string_view kind_name(TokenKind kind) {
    switch (kind) {
    case TokenKind::text_byte: return "text_byte";
    case TokenKind::temporal_byte: return "temporal_byte";
    case TokenKind::special: return "special";
    case TokenKind::task: return "task";
    }
    return "unknown";
}

} // namespace

void Vocabulary::write_manifest(std::ostream& out) const {
    out << "eventlm-vocabulary v1\n";
    out << "size " << size() << "\n";
    for (TokenId id = 0; id < size(); ++id) {
        out << id << "\t" << kind_name(kinds_[static_cast<std::size_t>(id)]) << "\t"
            << escape_surface(surfaces_[static_cast<std::size_t>(id)]) << "\n";
    }
}

std::string Vocabulary::manifest_text() const {
    std::ostringstream out;
    write_manifest(out);
    return out.str();
}

std::uint64_t Vocabulary::manifest_hash() const {
    return fnv1a64(manifest_text());
}

std::array<TokenId, 4> encode_interval(double interval, ByteOrder order) {
    require(std::isfinite(interval), Errc::invalid_interval, "interval is not finite");
    require(interval >= 0.0, Errc::invalid_interval,
            "interval must be non-negative, got " + std::to_string(interval));
    const float value = static_cast<float>(interval);
    require(std::isfinite(value), Errc::invalid_interval,
            "interval overflows binary32: " + std::to_string(interval));
    const auto bits = std::bit_cast<std::uint32_t>(value);
    std::array<std::uint8_t, 4> bytes{
        static_cast<std::uint8_t>(bits >> 24),
        static_cast<std::uint8_t>(bits >> 16),
        static_cast<std::uint8_t>(bits >> 8),
        static_cast<std::uint8_t>(bits),
    };
    if (order == ByteOrder::least_significant_first) {
        std::swap(bytes[0], bytes[3]);
        std::swap(bytes[1], bytes[2]);
    }
    return {Vocabulary::temporal_byte(bytes[0]), Vocabulary::temporal_byte(bytes[1]),
            Vocabulary::temporal_byte(bytes[2]), Vocabulary::temporal_byte(bytes[3])};
}

float decode_interval(std::span<const TokenId> tokens, ByteOrder order) {
    require(tokens.size() == 4, Errc::malformed_time_tokens,
            "a time field holds exactly 4 temporal byte tokens, got " + std::to_string(tokens.size()));
    std::array<std::uint8_t, 4> bytes{};
    for (std::size_t i = 0; i < 4; ++i) {
        require(Vocabulary::is_temporal_byte(tokens[i]), Errc::malformed_time_tokens,
                "token id " + std::to_string(tokens[i]) + " is not a temporal byte token");
        bytes[i] = Vocabulary::byte_value(tokens[i]);
    }
    if (order == ByteOrder::least_significant_first) {
        std::swap(bytes[0], bytes[3]);
        std::swap(bytes[1], bytes[2]);
    }
    const std::uint32_t bits = (static_cast<std::uint32_t>(bytes[0]) << 24) |
                               (static_cast<std::uint32_t>(bytes[1]) << 16) |
                               (static_cast<std::uint32_t>(bytes[2]) << 8) |
                               static_cast<std::uint32_t>(bytes[3]);
    const float value = std::bit_cast<float>(bits);
    require(std::isfinite(value), Errc::out_of_domain_time, "decoded time is NaN or infinite");
    require(!std::signbit(value), Errc::out_of_domain_time, "decoded time is negative");
    return value;
}

std::vector<TokenId> tokenize_text(std::string_view text) {
    std::vector<TokenId> tokens;
    tokens.reserve(text.size());
    for (unsigned char c : text) tokens.push_back(Vocabulary::text_byte(c));
    return tokens;
}

std::string detokenize_text(std::span<const TokenId> tokens) {
    std::string text;
    text.reserve(tokens.size());
    for (TokenId id : tokens) {
        require(Vocabulary::is_text_byte(id), Errc::malformed_text,
                "token id " + std::to_string(id) + " is not a text byte token");
        text.push_back(static_cast<char>(Vocabulary::byte_value(id)));
    }
    return text;
}

std::string format_interval_string(double interval) {
    require(std::isfinite(interval), Errc::invalid_interval, "interval is not finite");
    require(interval >= 0.0, Errc::invalid_interval,
            "interval must be non-negative, got " + std::to_string(interval));
    char buffer[64];
    std::snprintf(buffer, sizeof(buffer), "%.3f", interval);
    return buffer;
}

std::vector<TokenId> encode_interval_string(double interval) {
    return tokenize_text(format_interval_string(interval));
}

float parse_interval_string(std::string_view text) {
    require(!text.empty(), Errc::out_of_domain_time, "empty time string");
    std::string owned(text);
    char* end = nullptr;
    const double value = std::strtod(owned.c_str(), &end);
    require(end == owned.c_str() + owned.size() && end != owned.c_str(), Errc::out_of_domain_time,
            "time string '" + owned + "' is not a plain decimal");
    require(std::isfinite(value) && value >= 0.0, Errc::out_of_domain_time,
            "time string '" + owned + "' is out of domain");
    const float as_float = static_cast<float>(value);
    require(std::isfinite(as_float), Errc::out_of_domain_time,
            "time string '" + owned + "' overflows binary32");
    return as_float;
}

} // namespace eventlm
