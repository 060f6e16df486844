#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>

#include "eventlm/intensity.hpp"
#include "eventlm/model.hpp"

namespace eventlm {

// Everything a later stage (or evaluation) needs to resume from: the
// backbone, any fitted intensity heads keyed by dataset name, and enough
// header data to refuse incompatible loads.
struct Checkpoint {
    ModelConfig config;
    std::string stage;                           // "stage1" | "stage2" | "stage3"
    std::uint64_t vocab_hash = 0;                // Vocabulary::manifest_hash()
    std::map<std::string, double> validation;    // validation metric record
    Model<float> model;
    std::map<std::string, IntensityHead> heads;  // per-dataset intensity heads
};

// Versioned binary container: a JSON header (config, stage, vocab hash,
// validation record, tensor directory) followed by the named tensors as
// little-endian 32-bit reals. A sidecar text manifest of tensor names and
// shapes is written next to it (`<path>.manifest.txt`).
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);

// Loads and validates a container. The caller passes the hash of the
// vocabulary it is about to use; a mismatch (or a wrong magic/version/shape)
// raises incompatible_checkpoint rather than returning garbage.
[[nodiscard]] Checkpoint load_checkpoint(const std::filesystem::path& path,
                                         std::uint64_t expected_vocab_hash);

} // namespace eventlm
