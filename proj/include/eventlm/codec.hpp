#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace eventlm {

using TokenId = std::int32_t;

// Byte order used when an IEEE-754 binary32 interval is spelled as four byte
// tokens. MostSignificantFirst is the canonical order for datasets and
// checkpoints; LeastSignificantFirst is kept selectable because both spellings
// decode with the same machinery and published examples exist in either order.
enum class ByteOrder {
    most_significant_first,
    least_significant_first,
};

[[nodiscard]] std::string_view byte_order_name(ByteOrder order);
[[nodiscard]] ByteOrder parse_byte_order(std::string_view name);

enum class TokenKind {
    text_byte,     // one raw byte of UTF-8 text
    temporal_byte, // one byte of a float32 interval
    special,       // structural markers
    task,          // task selector appended to a prompt
};

// Fixed token inventory. Ids are stable by construction:
//   [0, 256)    text bytes            (id == byte value)
//   [256, 512)  temporal bytes        (id == 256 + byte value)
//   [512, ...)  structural + task tokens in declaration order
// The manifest hash pins this layout so checkpoints can refuse to load under
// a different vocabulary.
class Vocabulary {
public:
    static constexpr TokenId text_byte_base = 0;
    static constexpr TokenId temporal_byte_base = 256;
    static constexpr int bytes_per_interval = 4;

    Vocabulary();

    // Structural tokens.
    TokenId start_of_event{};
    TokenId end_of_event{};
    TokenId type_prefix{};
    TokenId description_prefix{};
    TokenId time_prefix{};
    TokenId im_start{};
    TokenId im_end{};
    TokenId end_of_sequence{}; // doubles as the generation stop token

    // Task tokens.
    TokenId time_prediction{};
    TokenId type_prediction{};
    TokenId description_prediction{};

    [[nodiscard]] int size() const { return static_cast<int>(surfaces_.size()); }
    [[nodiscard]] TokenKind kind(TokenId id) const;
    [[nodiscard]] const std::string& surface(TokenId id) const;

    [[nodiscard]] static constexpr TokenId text_byte(std::uint8_t value) { return text_byte_base + value; }
    [[nodiscard]] static constexpr TokenId temporal_byte(std::uint8_t value) {
        return temporal_byte_base + value;
    }
    [[nodiscard]] static constexpr bool is_text_byte(TokenId id) {
        return id >= text_byte_base && id < text_byte_base + 256;
    }
    [[nodiscard]] static constexpr bool is_temporal_byte(TokenId id) {
        return id >= temporal_byte_base && id < temporal_byte_base + 256;
    }
    // Byte value carried by a text or temporal byte token.
    [[nodiscard]] static std::uint8_t byte_value(TokenId id);

    [[nodiscard]] bool is_task_token(TokenId id) const;

    // Versioned plain-text listing of every token (id, kind, surface escaped).
    void write_manifest(std::ostream& out) const;
    [[nodiscard]] std::string manifest_text() const;
    // FNV-1a hash of the manifest text; stored in checkpoints.
    [[nodiscard]] std::uint64_t manifest_hash() const;

private:
    TokenId add_special(const std::string& surface, TokenKind kind);

    std::vector<std::string> surfaces_;
    std::vector<TokenKind> kinds_;
};

// -- interval <-> temporal byte tokens ---------------------------------------
//
// An interval is rounded to IEEE-754 binary32 and its four bytes are emitted
// as temporal byte tokens in the requested order. Decoding reassembles the
// bit pattern and rejects NaN/inf/negative results instead of clamping; the
// caller decides what to do with a malformed generation.

[[nodiscard]] std::array<TokenId, 4> encode_interval(double interval, ByteOrder order);
[[nodiscard]] float decode_interval(std::span<const TokenId> tokens, ByteOrder order);

// -- text <-> text byte tokens ------------------------------------------------

[[nodiscard]] std::vector<TokenId> tokenize_text(std::string_view text);
[[nodiscard]] std::string detokenize_text(std::span<const TokenId> tokens);

// -- number-string fallback (ablation path) -----------------------------------
//
// Renders the interval as a plain decimal with three fractional digits and
// tokenizes it as text bytes; parse_interval_string accepts what the renderer
// emits (and any ordinary non-negative decimal).

[[nodiscard]] std::string format_interval_string(double interval);
[[nodiscard]] std::vector<TokenId> encode_interval_string(double interval);
[[nodiscard]] float parse_interval_string(std::string_view text);

} // namespace eventlm
