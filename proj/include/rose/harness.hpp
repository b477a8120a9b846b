#pragma once

#include <string>

#include "rose/losses.hpp"
#include "rose/manifest.hpp"
#include "rose/net.hpp"
#include "rose/runconfig.hpp"
#include "rose/vocab.hpp"

namespace rose::run {

// Everything derived from a RunConfig that the trainer, evaluator, and
// refiner all need: prompt banks, vocabulary, grid geometry, the role
// layout, and the frozen text embedder.
struct Session {
    RunConfig cfg;
    text::PromptBanks banks;
    text::Vocab vocab;
    grid::PatchGrid grid;
    grid::SuperPatchLayout layout;
    losses::TextEmbedder embedder;
};

Session make_session(const RunConfig& cfg);

// Replaces every occurrence of `key` in `text`.
std::string fill_placeholder(std::string text, const std::string& key, const std::string& value);

// Reads <data_dir>/<split>.json and rejects it unless its embedded hash
// matches the config's data hash.
synth::DatasetSplit load_split_checked(const RunConfig& cfg, const std::string& split);

// Generates the train and val splits under cfg.data_dir, embedding the
// config's data hash in each manifest.
void generate_splits(const RunConfig& cfg);

}  // namespace rose::run
