#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>

#include "rose/net.hpp"

namespace rose::net {

// A loaded checkpoint: the model plus the run metadata that was frozen into
// the archive when it was written.
struct Checkpoint {
    ModelConfig config;
    text::Vocab vocab;
    uint64_t config_hash = 0;
    long step = 0;
    std::string run_config;  // canonical run-config text, empty for bare saves
    std::unique_ptr<Model<float>> model;
};

// Writes one self-describing archive: a JSON header (format version, step,
// config hash, run config text, model config, vocabulary, tensor index)
// followed by the raw float32 payload of every tensor with its Adam moments.
void save_checkpoint(const std::filesystem::path& path, const Model<float>& model,
                     uint64_t config_hash, long step, const std::string& run_config = "");

// Rebuilds the model from an archive. Throws ConfigError on a missing file,
// corrupt or truncated data, or a tensor set that does not match what the
// stored config describes. If expect_hash is nonzero it must equal the
// stored config hash.
Checkpoint load_checkpoint(const std::filesystem::path& path, uint64_t expect_hash = 0);

}  // namespace rose::net
