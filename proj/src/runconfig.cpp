#include "rose/runconfig.hpp"

#include <yaml-cpp/yaml.h>

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <initializer_list>
#include <sstream>

#include "rose/common.hpp"

namespace rose::run {

namespace {

std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

std::string quoted(const std::string& s) {
    std::string out = "\"";
    for (char c : s) {
        if (c == '"' || c == '\\') out.push_back('\\');
        out.push_back(c);
    }
    out.push_back('"');
    return out;
}

std::string name_list(const std::vector<std::string>& names) {
    std::string out = "[";
    for (size_t i = 0; i < names.size(); ++i) {
        if (i) out += ", ";
        out += quoted(names[i]);
    }
    return out + "]";
}

void check_keys(const YAML::Node& node, const std::string& section,
                std::initializer_list<const char*> known) {
    if (!node.IsDefined() || node.IsNull()) return;
    if (!node.IsMap()) throw ConfigError("config: '" + section + "' must be a mapping");
    for (const auto& kv : node) {
        const std::string key = kv.first.as<std::string>();
        bool ok = false;
        for (const char* k : known) ok = ok || key == k;
        if (!ok) throw ConfigError("config: unknown key '" + key + "' in section '" + section + "'");
    }
}

template <typename T>
void read(const YAML::Node& node, const char* key, T& out) {
    if (!node.IsDefined() || node.IsNull()) return;
    const YAML::Node v = node[key];
    if (!v.IsDefined() || v.IsNull()) return;
    try {
        out = v.as<T>();
    } catch (const YAML::Exception&) {
        throw ConfigError(std::string("config: bad value for '") + key + "'");
    }
}

}  // namespace

std::string RunConfig::canonical_data() const {
    std::ostringstream o;
    o << "seed: " << seed << "\n";
    o << "data:\n";
    o << "  image_side: " << data.image_side << "\n";
    o << "  thing_categories: " << name_list(data.thing_categories) << "\n";
    o << "  stuff_categories: " << name_list(data.stuff_categories) << "\n";
    o << "  min_things: " << data.min_things << "\n";
    o << "  max_things: " << data.max_things << "\n";
    o << "  pixel_noise: " << fmt(data.pixel_noise) << "\n";
    o << "train_scenes: " << train_scenes << "\n";
    o << "val_scenes: " << val_scenes << "\n";
    return o.str();
}

std::string RunConfig::canonical() const {
    std::ostringstream o;
    o << canonical_data();
    o << "model:\n";
    o << "  image_side: " << model.image_side << "\n";
    o << "  patch_side: " << model.patch_side << "\n";
    o << "  dim: " << model.dim << "\n";
    o << "  dim_mask: " << model.dim_mask << "\n";
    o << "  dim_sig: " << model.dim_sig << "\n";
    o << "  vision_layers: " << model.vision_layers << "\n";
    o << "  language_layers: " << model.language_layers << "\n";
    o << "  decoder_layers: " << model.decoder_layers << "\n";
    o << "  heads: " << model.heads << "\n";
    o << "  feature_stride: " << model.feature_stride << "\n";
    o << "  context_window: " << model.context_window << "\n";
    o << "  arch: " << quoted(model.arch) << "\n";
    o << "grid:\n";
    o << "  small_frac: " << fmt(roles.small_frac) << "\n";
    o << "  medium_frac: " << fmt(roles.medium_frac) << "\n";
    o << "  neg_ratio: " << fmt(neg_ratio) << "\n";
    o << "loss:\n";
    o << "  lambda_bce: " << fmt(loss.lambda_bce) << "\n";
    o << "  lambda_dice: " << fmt(loss.lambda_dice) << "\n";
    o << "  tau: " << fmt(loss.tau) << "\n";
    o << "optim:\n";
    o << "  lr: " << fmt(optim.lr) << "\n";
    o << "  warmup_steps: " << optim.warmup_steps << "\n";
    o << "  total_steps: " << optim.total_steps << "\n";
    o << "  batch_size: " << optim.batch_size << "\n";
    o << "  accumulation: " << optim.accumulation << "\n";
    o << "  checkpoint_every: " << optim.checkpoint_every << "\n";
    o << "infer:\n";
    o << "  top_n: " << infer.top_n << "\n";
    o << "  score_threshold: " << fmt(infer.score_threshold) << "\n";
    o << "  nms_iou: " << fmt(infer.nms_iou) << "\n";
    o << "  non_object_bias: " << fmt(infer.non_object_bias) << "\n";
    o << "task_mix:\n";
    o << "  semantic: " << fmt(mix.semantic) << "\n";
    o << "  instance: " << fmt(mix.instance) << "\n";
    o << "  referring: " << fmt(mix.referring) << "\n";
    o << "  refinement: " << fmt(mix.refinement) << "\n";
    return o.str();
}

std::string RunConfig::serialized() const {
    std::ostringstream o;
    o << canonical();
    o << "paths:\n";
    o << "  out_dir: " << quoted(out_dir) << "\n";
    o << "  data_dir: " << quoted(data_dir) << "\n";
    o << "  assets_dir: " << quoted(assets_dir) << "\n";
    return o.str();
}

uint64_t RunConfig::hash() const { return fnv1a64(canonical()); }
uint64_t RunConfig::data_hash() const { return fnv1a64(canonical_data()); }

namespace {
std::string hex16(uint64_t h) {
    char buf[20];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}
}  // namespace

std::string RunConfig::hash_hex() const { return hex16(hash()); }
std::string RunConfig::data_hash_hex() const { return hex16(data_hash()); }

void RunConfig::validate() const {
    if (model.image_side != data.image_side)
        throw ConfigError("config: model.image_side must match data.image_side");
    model.validate();
    grid::make_grid(model.image_side, model.patch_side);  // throws on a bad grid
    if (data.thing_categories.empty()) throw ConfigError("config: no thing categories");
    if (train_scenes < 0 || val_scenes < 0) throw ConfigError("config: negative scene count");
    if (data.min_things < 1 || data.max_things < data.min_things)
        throw ConfigError("config: bad min/max things");
    if (neg_ratio < 0.0) throw ConfigError("config: neg_ratio must be >= 0");
    if (roles.small_frac <= 0.0 || roles.medium_frac <= roles.small_frac)
        throw ConfigError("config: role thresholds must satisfy 0 < small < medium");
    if (optim.lr <= 0.0 || optim.total_steps <= 0 || optim.batch_size <= 0 ||
        optim.accumulation <= 0 || optim.warmup_steps < 0 || optim.checkpoint_every <= 0)
        throw ConfigError("config: optimizer fields must be positive");
    if (infer.top_n <= 0) throw ConfigError("config: infer.top_n must be positive");
    const double mix_sum = mix.semantic + mix.instance + mix.referring + mix.refinement;
    if (mix.semantic < 0 || mix.instance < 0 || mix.referring < 0 || mix.refinement < 0 ||
        mix_sum <= 0.0)
        throw ConfigError("config: task mix weights must be non-negative with a positive sum");
}

RunConfig parse_run_config(const std::string& yaml_text) {
    YAML::Node root;
    try {
        root = YAML::Load(yaml_text);
    } catch (const YAML::Exception& e) {
        throw ConfigError(std::string("config: YAML parse error: ") + e.what());
    }
    if (root.IsNull() || !root.IsDefined()) root = YAML::Node(YAML::NodeType::Map);
    check_keys(root, "(top level)",
               {"seed", "data", "train_scenes", "val_scenes", "model", "grid", "loss", "optim",
                "infer", "task_mix", "paths"});

    RunConfig c;
    read(root, "seed", c.seed);
    read(root, "train_scenes", c.train_scenes);
    read(root, "val_scenes", c.val_scenes);

    const YAML::Node d = root["data"];
    check_keys(d, "data",
               {"image_side", "thing_categories", "stuff_categories", "min_things", "max_things",
                "pixel_noise"});
    read(d, "image_side", c.data.image_side);
    read(d, "thing_categories", c.data.thing_categories);
    read(d, "stuff_categories", c.data.stuff_categories);
    read(d, "min_things", c.data.min_things);
    read(d, "max_things", c.data.max_things);
    read(d, "pixel_noise", c.data.pixel_noise);

    const YAML::Node m = root["model"];
    check_keys(m, "model",
               {"image_side", "patch_side", "dim", "dim_mask", "dim_sig", "vision_layers",
                "language_layers", "decoder_layers", "heads", "feature_stride", "context_window",
                "arch"});
    c.model.image_side = c.data.image_side;  // mirrored unless set explicitly
    read(m, "image_side", c.model.image_side);
    read(m, "patch_side", c.model.patch_side);
    read(m, "dim", c.model.dim);
    read(m, "dim_mask", c.model.dim_mask);
    read(m, "dim_sig", c.model.dim_sig);
    read(m, "vision_layers", c.model.vision_layers);
    read(m, "language_layers", c.model.language_layers);
    read(m, "decoder_layers", c.model.decoder_layers);
    read(m, "heads", c.model.heads);
    read(m, "feature_stride", c.model.feature_stride);
    read(m, "context_window", c.model.context_window);
    read(m, "arch", c.model.arch);

    const YAML::Node g = root["grid"];
    check_keys(g, "grid", {"small_frac", "medium_frac", "neg_ratio"});
    read(g, "small_frac", c.roles.small_frac);
    read(g, "medium_frac", c.roles.medium_frac);
    read(g, "neg_ratio", c.neg_ratio);

    const YAML::Node l = root["loss"];
    check_keys(l, "loss", {"lambda_bce", "lambda_dice", "tau"});
    read(l, "lambda_bce", c.loss.lambda_bce);
    read(l, "lambda_dice", c.loss.lambda_dice);
    read(l, "tau", c.loss.tau);

    const YAML::Node o = root["optim"];
    check_keys(o, "optim",
               {"lr", "warmup_steps", "total_steps", "batch_size", "accumulation",
                "checkpoint_every"});
    read(o, "lr", c.optim.lr);
    read(o, "warmup_steps", c.optim.warmup_steps);
    read(o, "total_steps", c.optim.total_steps);
    read(o, "batch_size", c.optim.batch_size);
    read(o, "accumulation", c.optim.accumulation);
    read(o, "checkpoint_every", c.optim.checkpoint_every);

    const YAML::Node inf = root["infer"];
    check_keys(inf, "infer", {"top_n", "score_threshold", "nms_iou", "non_object_bias"});
    read(inf, "top_n", c.infer.top_n);
    read(inf, "score_threshold", c.infer.score_threshold);
    read(inf, "nms_iou", c.infer.nms_iou);
    read(inf, "non_object_bias", c.infer.non_object_bias);

    const YAML::Node tm = root["task_mix"];
    check_keys(tm, "task_mix", {"semantic", "instance", "referring", "refinement"});
    read(tm, "semantic", c.mix.semantic);
    read(tm, "instance", c.mix.instance);
    read(tm, "referring", c.mix.referring);
    read(tm, "refinement", c.mix.refinement);

    const YAML::Node p = root["paths"];
    check_keys(p, "paths", {"out_dir", "data_dir", "assets_dir"});
    read(p, "out_dir", c.out_dir);
    read(p, "data_dir", c.data_dir);
    read(p, "assets_dir", c.assets_dir);
    if (c.assets_dir.empty()) c.assets_dir = ROSELAB_SOURCE_DIR "/assets";

    c.validate();
    return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config file: " + path.string());
    std::ostringstream buf;
    buf << in.rdbuf();
    RunConfig c = parse_run_config(buf.str());
    c.seed = seed_from_env(c.seed);
    return c;
}

uint64_t seed_from_env(uint64_t fallback) {
    const char* v = std::getenv("ROSE_LAB_SEED");
    if (v == nullptr || *v == '\0') return fallback;
    char* end = nullptr;
    const unsigned long long parsed = std::strtoull(v, &end, 10);
    if (end == v || *end != '\0')
        throw ConfigError(std::string("ROSE_LAB_SEED must be a non-negative integer, got '") + v +
                          "'");
    return parsed;
}

}  // namespace rose::run
