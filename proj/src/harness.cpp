#include "rose/harness.hpp"

#include "rose/common.hpp"

namespace rose::run {

Session make_session(const RunConfig& cfg) {
    cfg.validate();
    text::PromptBanks banks = text::load_prompt_banks(cfg.assets_dir);
    text::Vocab vocab = text::build_vocab(cfg.data, banks);
    grid::PatchGrid grid = grid::make_grid(cfg.model.image_side, cfg.model.patch_side);
    grid::SuperPatchLayout layout = grid::make_layout(grid);
    losses::TextEmbedder embedder(vocab, cfg.model.dim_sig,
                                  derive_seed(cfg.seed, kStreamEmbedder));
    return Session{cfg, std::move(banks), std::move(vocab), grid, std::move(layout),
                   std::move(embedder)};
}

std::string fill_placeholder(std::string text, const std::string& key, const std::string& value) {
    size_t pos = 0;
    while ((pos = text.find(key, pos)) != std::string::npos) {
        text.replace(pos, key.size(), value);
        pos += value.size();
    }
    return text;
}

synth::DatasetSplit load_split_checked(const RunConfig& cfg, const std::string& split) {
    synth::DatasetSplit ds = synth::read_split(cfg.data_dir, split);
    if (ds.config_hash != cfg.data_hash_hex())
        throw ConfigError("split '" + split + "' was generated under a different data config (" +
                          ds.config_hash + " != " + cfg.data_hash_hex() + ")");
    return ds;
}

void generate_splits(const RunConfig& cfg) {
    const struct {
        const char* name;
        int count;
        uint64_t stream;
    } splits[] = {{"train", cfg.train_scenes, kStreamTrainData},
                  {"val", cfg.val_scenes, kStreamValData}};
    for (const auto& sp : splits) {
        std::vector<synth::Scene> scenes;
        scenes.reserve(static_cast<size_t>(sp.count));
        for (int i = 0; i < sp.count; ++i)
            scenes.push_back(synth::generate_scene(
                cfg.data, derive_seed(cfg.seed, sp.stream, static_cast<uint64_t>(i))));
        synth::write_split(cfg.data_dir, sp.name, cfg.data, cfg.data_hash_hex(), scenes);
    }
}

}  // namespace rose::run
