#include "rose/manifest.hpp"

#include <fstream>
#include <nlohmann/json.hpp>

#include "rose/common.hpp"
#include "rose/grid.hpp"

namespace rose::synth {

using nlohmann::json;

namespace {

constexpr int kFormatVersion = 1;

std::string image_name(const std::string& split, int id) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "images/%s_%06d.f32", split.c_str(), id);
    return buf;
}

}  // namespace

void write_image_f32(const std::filesystem::path& path, const Image& image) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ConfigError("cannot write image file: " + path.string());
    out.write(reinterpret_cast<const char*>(image.data()),
              static_cast<std::streamsize>(sizeof(float) * image.size()));
}

Image read_image_f32(const std::filesystem::path& path, int side) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot read image file: " + path.string());
    Image image(side * side, 3);
    in.read(reinterpret_cast<char*>(image.data()),
            static_cast<std::streamsize>(sizeof(float) * image.size()));
    if (in.gcount() != static_cast<std::streamsize>(sizeof(float) * image.size()))
        throw ConfigError("image file truncated: " + path.string());
    return image;
}

void write_split(const std::filesystem::path& dir, const std::string& split,
                 const GeneratorConfig& config, const std::string& config_hash,
                 const std::vector<Scene>& scenes) {
    std::filesystem::create_directories(dir / "images");

    json manifest;
    manifest["format_version"] = kFormatVersion;
    manifest["split"] = split;
    manifest["image_side"] = config.image_side;
    manifest["categories"] = config.all_categories();
    manifest["thing_count"] = config.thing_categories.size();
    manifest["config_hash"] = config_hash;

    json scene_list = json::array();
    for (size_t i = 0; i < scenes.size(); ++i) {
        const Scene& scene = scenes[i];
        const std::string rel = image_name(split, static_cast<int>(i));
        write_image_f32(dir / rel, scene.image);

        json targets = json::array();
        for (const grid::Target& t : scene.targets) {
            targets.push_back({{"category_id", t.category_id},
                               {"category", t.category_name},
                               {"is_thing", t.is_thing},
                               {"rle", rle_encode(t.mask)}});
        }
        json referring = json::array();
        for (const auto& [phrase, index] : scene.referring)
            referring.push_back({{"phrase", phrase}, {"target", index}});

        scene_list.push_back({{"id", static_cast<int>(i)},
                              {"seed", scene.seed},
                              {"image", rel},
                              {"targets", std::move(targets)},
                              {"referring", std::move(referring)},
                              {"counting", scene.counting_sentence}});
    }
    manifest["scenes"] = std::move(scene_list);

    std::ofstream out(dir / (split + ".json"));
    if (!out) throw ConfigError("cannot write manifest: " + (dir / (split + ".json")).string());
    out << manifest.dump(1) << "\n";
}

DatasetSplit read_split(const std::filesystem::path& dir, const std::string& split) {
    const std::filesystem::path manifest_path = dir / (split + ".json");
    std::ifstream in(manifest_path);
    if (!in) throw ConfigError("cannot open manifest: " + manifest_path.string());
    json manifest;
    try {
        in >> manifest;
    } catch (const json::exception& e) {
        throw ConfigError("malformed manifest " + manifest_path.string() + ": " + e.what());
    }
    if (manifest.at("format_version").get<int>() != kFormatVersion)
        throw ConfigError("unsupported manifest format_version in " + manifest_path.string());

    DatasetSplit ds;
    ds.root = dir;
    ds.split = split;
    ds.image_side = manifest.at("image_side").get<int>();
    ds.categories = manifest.at("categories").get<std::vector<std::string>>();
    ds.config_hash = manifest.at("config_hash").get<std::string>();

    for (const json& s : manifest.at("scenes")) {
        Scene scene;
        scene.seed = s.at("seed").get<uint64_t>();
        scene.side = ds.image_side;
        for (const json& t : s.at("targets")) {
            Mask mask = rle_decode(t.at("rle").get<std::vector<int64_t>>(), ds.image_side, ds.image_side);
            scene.targets.push_back(grid::make_target(std::move(mask),
                                                      t.at("category_id").get<int>(),
                                                      t.at("category").get<std::string>(),
                                                      t.at("is_thing").get<bool>()));
        }
        for (const json& r : s.at("referring"))
            scene.referring.emplace_back(r.at("phrase").get<std::string>(), r.at("target").get<int>());
        scene.counting_sentence = s.at("counting").get<std::string>();
        ds.scenes.push_back(std::move(scene));
        ds.image_paths.push_back(s.at("image").get<std::string>());
    }
    return ds;
}

Image DatasetSplit::load_image(size_t index) const {
    return read_image_f32(root / image_paths.at(index), image_side);
}

}  // namespace rose::synth
