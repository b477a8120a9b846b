#include "rose/vocab.hpp"

#include <algorithm>
#include <cctype>
#include <cstring>
#include <fstream>
#include <nlohmann/json.hpp>

#include "rose/common.hpp"

namespace rose::text {

using nlohmann::json;

namespace {

constexpr int kPromptFormatVersion = 1;

bool is_role_marker(const std::string& chunk) {
    return chunk == "USER:" || chunk == "ASSISTANT:";
}

bool is_special(const std::string& chunk) {
    return chunk.size() > 2 && chunk.front() == '<' && chunk.back() == '>';
}

bool is_standalone_punct(char c) {
    return c == '.' || c == ',' || c == '?' || c == '[' || c == ']';
}

std::vector<std::string> load_bank(const json& doc, const std::string& key,
                                   const std::filesystem::path& file) {
    if (!doc.contains(key))
        throw ConfigError("prompt file " + file.string() + " missing bank '" + key + "'");
    auto bank = doc.at(key).get<std::vector<std::string>>();
    if (bank.empty())
        throw ConfigError("prompt bank '" + key + "' in " + file.string() + " is empty");
    return bank;
}

json load_prompt_file(const std::filesystem::path& file) {
    std::ifstream in(file);
    if (!in) throw ConfigError("cannot open prompt file: " + file.string());
    json doc;
    try {
        in >> doc;
    } catch (const json::exception& e) {
        throw ConfigError("malformed prompt file " + file.string() + ": " + e.what());
    }
    if (doc.value("format_version", -1) != kPromptFormatVersion)
        throw ConfigError("unsupported prompt format_version in " + file.string());
    return doc;
}

void require_placeholder(const std::vector<std::string>& bank, const std::string& placeholder,
                         const std::string& name) {
    for (const auto& t : bank)
        if (t.find(placeholder) == std::string::npos)
            throw ConfigError("prompt bank '" + name + "' has a template without " + placeholder);
}

// Placeholders are filled at case-building time; for vocabulary purposes
// they contribute nothing.
std::string strip_placeholders(std::string s) {
    for (const char* ph : {"{description}", "{category}", "{bbox}"}) {
        size_t at;
        while ((at = s.find(ph)) != std::string::npos) s.replace(at, std::strlen(ph), " ");
    }
    return s;
}

}  // namespace

PromptBanks load_prompt_banks(const std::filesystem::path& assets_dir) {
    json tasks = load_prompt_file(assets_dir / "task_prompts.json");
    json refine = load_prompt_file(assets_dir / "refine_prompts.json");

    PromptBanks banks;
    banks.semantic = load_bank(tasks, "semantic", assets_dir / "task_prompts.json");
    banks.instance = load_bank(tasks, "instance", assets_dir / "task_prompts.json");
    banks.referring = load_bank(tasks, "referring", assets_dir / "task_prompts.json");
    banks.refine_mask = load_bank(refine, "mask", assets_dir / "refine_prompts.json");
    banks.refine_category = load_bank(refine, "category", assets_dir / "refine_prompts.json");
    banks.refine_missed = load_bank(refine, "missed", assets_dir / "refine_prompts.json");

    for (const auto* bank : {&banks.refine_mask, &banks.refine_category, &banks.refine_missed})
        if (bank->size() != 10)
            throw ConfigError("each refinement bank must hold exactly 10 templates");
    require_placeholder(banks.referring, "{description}", "referring");
    require_placeholder(banks.refine_mask, "{bbox}", "mask");
    require_placeholder(banks.refine_category, "{bbox}", "category");
    require_placeholder(banks.refine_category, "{category}", "category");
    require_placeholder(banks.refine_missed, "{bbox}", "missed");
    return banks;
}

int Vocab::id(const std::string& token) const {
    auto it = index.find(token);
    if (it == index.end()) throw ConfigError("token not in vocabulary: '" + token + "'");
    return it->second;
}

std::vector<std::string> tokenize_words(const std::string& text) {
    std::vector<std::string> out;
    size_t i = 0;
    while (i < text.size()) {
        if (std::isspace(static_cast<unsigned char>(text[i]))) {
            ++i;
            continue;
        }
        size_t end = i;
        while (end < text.size() && !std::isspace(static_cast<unsigned char>(text[end]))) ++end;
        std::string chunk = text.substr(i, end - i);
        i = end;

        if (is_role_marker(chunk) || is_special(chunk)) {
            out.push_back(chunk);
            continue;
        }
        std::string word;
        auto flush = [&] {
            if (!word.empty()) {
                out.push_back(word);
                word.clear();
            }
        };
        for (char c : chunk) {
            if (std::isalpha(static_cast<unsigned char>(c))) {
                word.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
            } else if (std::isdigit(static_cast<unsigned char>(c)) || is_standalone_punct(c)) {
                flush();
                out.push_back(std::string(1, c));
            } else {
                throw ConfigError(std::string("untokenizable character '") + c + "' in: " + chunk);
            }
        }
        flush();
    }
    return out;
}

std::vector<int> encode(const Vocab& vocab, const std::string& text) {
    std::vector<int> ids;
    for (const std::string& token : tokenize_words(text)) ids.push_back(vocab.id(token));
    return ids;
}

std::string decode(const Vocab& vocab, const std::vector<int>& ids) {
    auto is_digit_token = [](const std::string& t) {
        return t.size() == 1 && std::isdigit(static_cast<unsigned char>(t[0]));
    };
    auto attaches_left = [](const std::string& t) {
        return t == "." || t == "," || t == "?" || t == "]";
    };
    std::string out;
    std::string prev;
    for (int id : ids) {
        if (id < 0 || id >= vocab.size()) throw ConfigError("token id out of range in decode");
        const std::string& t = vocab.words[id];
        bool glue = out.empty() || prev == "[" || attaches_left(t) ||
                    (is_digit_token(t) && is_digit_token(prev));
        if (!glue) out += " ";
        out += t;
        prev = t;
    }
    return out;
}

Vocab build_vocab(const synth::GeneratorConfig& config, const PromptBanks& banks) {
    Vocab vocab;
    auto put = [&](const std::string& token) {
        if (vocab.index.count(token)) return;
        vocab.index[token] = vocab.size();
        vocab.words.push_back(token);
    };
    // fixed special ids first
    for (const char* s : {"<PAD>", "<BOS>", "<EOS>", "<IMAGE>", "<CATEGORY>", "<SEG>"}) put(s);
    put("USER:");
    put("ASSISTANT:");
    for (char c : {'.', ',', '?', '[', ']'}) put(std::string(1, c));
    for (char d = '0'; d <= '9'; ++d) put(std::string(1, d));

    std::vector<std::string> corpus;
    corpus.push_back("There are , in this image . There is nothing in this image .");
    corpus.push_back("Please decode this linguistic embedding into a noun concept . "
                     "Sure , it is unknown .");
    corpus.push_back("Sure , here it is .");
    for (const auto& color : synth::palette_color_names()) corpus.push_back(color);
    corpus.push_back("on the left right");
    for (const auto& cat : config.all_categories()) corpus.push_back(cat);
    for (const auto* bank : {&banks.semantic, &banks.instance, &banks.referring,
                             &banks.refine_mask, &banks.refine_category, &banks.refine_missed})
        for (const auto& t : *bank) corpus.push_back(strip_placeholders(t));

    for (const auto& sentence : corpus)
        for (const auto& token : tokenize_words(sentence)) put(token);

    for (const auto& cat : config.all_categories()) {
        size_t n = tokenize_words(cat).size();
        if (n < 1 || n > 2)
            throw ConfigError("category name must tokenize to 1-2 tokens: '" + cat + "'");
    }
    return vocab;
}

}  // namespace rose::text
