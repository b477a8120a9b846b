#include "rose/checkpoint.hpp"

#include <fstream>
#include <nlohmann/json.hpp>

namespace rose::net {

using nlohmann::json;

namespace {

constexpr char kMagic[8] = {'R', 'O', 'S', 'E', 'C', 'K', 'P', 'T'};
constexpr int kFormatVersion = 1;

std::string hash_to_hex(uint64_t h) {
    char buf[20];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

uint64_t hex_to_hash(const std::string& s) {
    return std::stoull(s, nullptr, 16);
}

json config_to_json(const ModelConfig& c) {
    return json{{"image_side", c.image_side},
                {"patch_side", c.patch_side},
                {"dim", c.dim},
                {"dim_mask", c.dim_mask},
                {"dim_sig", c.dim_sig},
                {"vision_layers", c.vision_layers},
                {"language_layers", c.language_layers},
                {"decoder_layers", c.decoder_layers},
                {"heads", c.heads},
                {"feature_stride", c.feature_stride},
                {"context_window", c.context_window},
                {"arch", c.arch}};
}

ModelConfig config_from_json(const json& j) {
    ModelConfig c;
    c.image_side = j.at("image_side").get<int>();
    c.patch_side = j.at("patch_side").get<int>();
    c.dim = j.at("dim").get<int>();
    c.dim_mask = j.at("dim_mask").get<int>();
    c.dim_sig = j.at("dim_sig").get<int>();
    c.vision_layers = j.at("vision_layers").get<int>();
    c.language_layers = j.at("language_layers").get<int>();
    c.decoder_layers = j.at("decoder_layers").get<int>();
    c.heads = j.at("heads").get<int>();
    c.feature_stride = j.at("feature_stride").get<int>();
    c.context_window = j.at("context_window").get<int>();
    c.arch = j.at("arch").get<std::string>();
    return c;
}

void write_tensor(std::ofstream& out, const ad::Mat<float>& m) {
    out.write(reinterpret_cast<const char*>(m.data()),
              static_cast<std::streamsize>(sizeof(float) * m.size()));
}

void read_tensor(std::ifstream& in, ad::Mat<float>& m, const std::filesystem::path& path) {
    in.read(reinterpret_cast<char*>(m.data()),
            static_cast<std::streamsize>(sizeof(float) * m.size()));
    if (in.gcount() != static_cast<std::streamsize>(sizeof(float) * m.size()))
        throw ConfigError("checkpoint truncated: " + path.string());
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Model<float>& model,
                     uint64_t config_hash, long step, const std::string& run_config) {
    const auto& store = model.params();
    json header;
    header["format_version"] = kFormatVersion;
    header["step"] = step;
    header["config_hash"] = hash_to_hex(config_hash);
    header["run_config"] = run_config;
    header["config"] = config_to_json(model.config());
    header["vocab"] = model.vocab().words;
    json tensors = json::array();
    for (int i = 0; i < store.count(); ++i) {
        const auto& p = store.at(i);
        tensors.push_back(json{{"name", p.name},
                               {"rows", static_cast<int>(p.value.rows())},
                               {"cols", static_cast<int>(p.value.cols())}});
    }
    header["tensors"] = std::move(tensors);

    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ConfigError("cannot write checkpoint: " + path.string());
    const std::string head = header.dump();
    const uint64_t head_len = head.size();
    out.write(kMagic, sizeof(kMagic));
    out.write(reinterpret_cast<const char*>(&head_len), sizeof(head_len));
    out.write(head.data(), static_cast<std::streamsize>(head.size()));
    for (int i = 0; i < store.count(); ++i) {
        const auto& p = store.at(i);
        write_tensor(out, p.value);
        write_tensor(out, p.m);
        write_tensor(out, p.v);
    }
    if (!out) throw ConfigError("checkpoint write failed: " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path, uint64_t expect_hash) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot read checkpoint: " + path.string());
    char magic[8];
    in.read(magic, sizeof(magic));
    if (in.gcount() != sizeof(magic) || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
        throw ConfigError("not a checkpoint file: " + path.string());
    uint64_t head_len = 0;
    in.read(reinterpret_cast<char*>(&head_len), sizeof(head_len));
    if (in.gcount() != sizeof(head_len) || head_len == 0 || head_len > (64u << 20))
        throw ConfigError("checkpoint header corrupt: " + path.string());
    std::string head(head_len, '\0');
    in.read(head.data(), static_cast<std::streamsize>(head_len));
    if (in.gcount() != static_cast<std::streamsize>(head_len))
        throw ConfigError("checkpoint truncated: " + path.string());

    json header;
    try {
        header = json::parse(head);
    } catch (const json::exception& e) {
        throw ConfigError("checkpoint header is not valid JSON: " + std::string(e.what()));
    }

    Checkpoint ck;
    try {
        if (header.at("format_version").get<int>() != kFormatVersion)
            throw ConfigError("unsupported checkpoint format_version");
        ck.step = header.at("step").get<long>();
        ck.config_hash = hex_to_hash(header.at("config_hash").get<std::string>());
        ck.run_config = header.value("run_config", std::string());
        ck.config = config_from_json(header.at("config"));
        ck.vocab.words = header.at("vocab").get<std::vector<std::string>>();
    } catch (const json::exception& e) {
        throw ConfigError("checkpoint header malformed: " + std::string(e.what()));
    }
    if (expect_hash != 0 && ck.config_hash != expect_hash)
        throw ConfigError("checkpoint config hash mismatch: expected " + hash_to_hex(expect_hash) +
                          ", found " + hash_to_hex(ck.config_hash));
    for (size_t i = 0; i < ck.vocab.words.size(); ++i)
        ck.vocab.index[ck.vocab.words[i]] = static_cast<int>(i);

    ck.model = std::make_unique<Model<float>>(ck.config, ck.vocab, /*seed=*/0);
    auto& store = ck.model->params();
    const auto& tensors = header.at("tensors");
    if (static_cast<int>(tensors.size()) != store.count())
        throw ConfigError("checkpoint tensor count mismatch: " + path.string());
    for (int i = 0; i < store.count(); ++i) {
        auto& p = store.at(i);
        const auto& tj = tensors.at(static_cast<size_t>(i));
        if (tj.at("name").get<std::string>() != p.name ||
            tj.at("rows").get<int>() != static_cast<int>(p.value.rows()) ||
            tj.at("cols").get<int>() != static_cast<int>(p.value.cols()))
            throw ConfigError("checkpoint tensor mismatch at " + p.name);
        read_tensor(in, p.value, path);
        read_tensor(in, p.m, path);
        read_tensor(in, p.v, path);
    }
    return ck;
}

}  // namespace rose::net
