#pragma once

#include <filesystem>
#include <string>
#include <unordered_map>
#include <vector>

#include "rose/scene.hpp"

namespace rose::text {

// Prompt template banks loaded from the versioned asset files. Task banks
// may have any size >= 1; each refinement bank holds exactly 10 templates.
struct PromptBanks {
    std::vector<std::string> semantic;
    std::vector<std::string> instance;
    std::vector<std::string> referring;   // contain {description}
    std::vector<std::string> refine_mask;     // contain {bbox}
    std::vector<std::string> refine_category; // contain {bbox} and {category}
    std::vector<std::string> refine_missed;   // contain {bbox}
};

PromptBanks load_prompt_banks(const std::filesystem::path& assets_dir);

// Word-level vocabulary. Specials occupy fixed low ids; everything else is
// appended in first-appearance order over the build corpus, so the table is
// deterministic under (config, assets).
struct Vocab {
    std::vector<std::string> words;
    std::unordered_map<std::string, int> index;

    static constexpr int kPad = 0;
    static constexpr int kBos = 1;
    static constexpr int kEos = 2;
    static constexpr int kImage = 3;
    static constexpr int kCategory = 4;
    static constexpr int kSeg = 5;

    int size() const { return static_cast<int>(words.size()); }
    bool contains(const std::string& token) const { return index.count(token) > 0; }
    int id(const std::string& token) const;  // throws ConfigError on unknown token
};

// Splits text into word-level tokens: specials (<...>) and the role markers
// USER: / ASSISTANT: pass through intact, words are lowercased, digits come
// out one per token, and . , ? [ ] are standalone tokens.
std::vector<std::string> tokenize_words(const std::string& text);

std::vector<int> encode(const Vocab& vocab, const std::string& text);

// Inverse of encode on in-vocabulary text: re-attaches punctuation and
// fuses adjacent digits so decode(encode(s)) == s for canonical strings.
std::string decode(const Vocab& vocab, const std::vector<int>& ids);

// Builds the vocabulary from the prompt banks, the generator's categories,
// and the fixed template sentences (counting, category decode, answers).
Vocab build_vocab(const synth::GeneratorConfig& config, const PromptBanks& banks);

}  // namespace rose::text
