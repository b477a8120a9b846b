#include "rose/evaluator.hpp"

#include <fstream>

#include "rose/common.hpp"
#include "rose/metrics.hpp"
#include "rose/png.hpp"

namespace rose::run {

namespace fs = std::filesystem;
using nlohmann::json;

const std::vector<std::string>& eval_tasks() {
    static const std::vector<std::string> tasks{"semantic", "instance", "referring"};
    return tasks;
}

namespace {

std::vector<double> sigmoid_scores(const ad::Mat<float>& logits) {
    std::vector<double> s(static_cast<size_t>(logits.rows()));
    for (Eigen::Index i = 0; i < logits.rows(); ++i)
        s[static_cast<size_t>(i)] = 1.0 / (1.0 + std::exp(-static_cast<double>(logits(i, 0))));
    return s;
}

// Decodes masks and categories for the given patches of a perception pass.
std::vector<decode::Prediction> decode_patches(net::Model<float>& model, ad::Tape<float>& tape,
                                               const net::Perception& p,
                                               const synth::Image& image, const Mask* channel,
                                               const std::vector<int>& patches,
                                               const std::vector<double>& scores, int side) {
    std::vector<decode::Prediction> preds;
    if (patches.empty()) return preds;
    int soft = tape.sigmoid(model.decode_masks(tape.gather_rows(p.e_msk, patches),
                                               model.encode_features(image, channel)));
    std::vector<std::string> cats =
        model.generate_categories(tape.value(tape.gather_rows(p.e_cat, patches)));
    const ad::Mat<float>& sm = tape.value(soft);
    for (size_t i = 0; i < patches.size(); ++i) {
        preds.push_back(decode::make_prediction(patches[i], scores[static_cast<size_t>(patches[i])],
                                                cats[i], sm.col(static_cast<Eigen::Index>(i)),
                                                side));
    }
    return preds;
}

}  // namespace

ScenePredictions decode_scene(net::Model<float>& model, const Session& s,
                              const synth::DatasetSplit& split, size_t index,
                              const std::string& task) {
    const synth::Scene& scene = split.scenes[index];
    const synth::Image image = split.load_image(index);
    const int side = s.cfg.model.image_side;

    ScenePredictions out;
    out.scene_index = static_cast<int>(index);
    out.scene_seed = scene.seed;

    if (task == "referring") {
        for (size_t k = 0; k < scene.referring.size(); ++k) {
            const auto& [phrase, target_index] = scene.referring[k];
            net::SequenceLayout layout = net::build_sequence(
                s.vocab, fill_placeholder(s.banks.referring.at(0), "{description}", phrase), "");
            ad::Tape<float> tape;
            model.bind(tape);
            net::Perception p = model.forward_perception(image, nullptr, layout);
            std::vector<double> scores = sigmoid_scores(tape.value(p.obj));
            const int best = decode::select_referring(scores);
            auto preds = decode_patches(model, tape, p, image, nullptr, {best}, scores, side);
            out.preds.push_back(std::move(preds.at(0)));
            out.ref_targets.push_back(target_index);
        }
        return out;
    }

    const std::string& instruction =
        task == "instance" ? s.banks.instance.at(0) : s.banks.semantic.at(0);
    net::SequenceLayout layout = net::build_sequence(s.vocab, instruction, "");
    ad::Tape<float> tape;
    model.bind(tape);
    net::Perception p = model.forward_perception(image, nullptr, layout);
    std::vector<double> scores = sigmoid_scores(tape.value(p.obj));
    std::vector<int> top = decode::filter_topn(scores, s.cfg.infer.top_n);
    out.preds = decode_patches(model, tape, p, image, nullptr, top, scores, side);
    return out;
}

std::pair<long, long> category_accuracy_scene(net::Model<float>& model, const Session& s,
                                              const synth::DatasetSplit& split, size_t index) {
    const synth::Scene& scene = split.scenes[index];
    grid::SupervisionPlan plan = grid::assign_supervision(
        scene.targets, s.grid, &s.layout, s.cfg.neg_ratio,
        derive_seed(s.cfg.seed, kStreamEval, static_cast<uint64_t>(index)), s.cfg.roles);
    if (plan.positive.empty()) return {0, 0};

    const synth::Image image = split.load_image(index);
    net::SequenceLayout layout = net::build_sequence(s.vocab, s.banks.semantic.at(0), "");
    ad::Tape<float> tape;
    model.bind(tape);
    net::Perception p = model.forward_perception(image, nullptr, layout);

    std::vector<int> rows;
    for (const auto& [patch, ti] : plan.positive) rows.push_back(patch);
    std::vector<std::string> generated =
        model.generate_categories(tape.value(tape.gather_rows(p.e_cat, rows)));

    long correct = 0;
    for (size_t i = 0; i < plan.positive.size(); ++i) {
        const auto& gold = scene.targets[static_cast<size_t>(plan.positive[i].second)];
        if (generated[i] == gold.category_name) ++correct;
    }
    return {correct, static_cast<long>(plan.positive.size())};
}

void validate_report(const json& report, const fs::path& schema_path) {
    std::ifstream in(schema_path);
    if (!in) throw ConfigError("cannot read report schema: " + schema_path.string());
    json schema;
    try {
        schema = json::parse(in);
    } catch (const json::exception& e) {
        throw ConfigError("report schema is not valid JSON: " + std::string(e.what()));
    }
    if (!report.is_object()) throw ConfigError("report must be a JSON object");
    if (report.value("schema_version", -1) != schema.at("schema_version").get<int>())
        throw ConfigError("report schema_version does not match the schema file");
    for (const auto& [key, type] : schema.at("required").items()) {
        if (!report.contains(key)) throw ConfigError("report is missing required field '" + key + "'");
        const json& v = report.at(key);
        const std::string t = type.get<std::string>();
        const bool ok = (t == "string" && v.is_string()) || (t == "number" && v.is_number()) ||
                        (t == "object" && v.is_object()) ||
                        (t == "object_or_null" && (v.is_object() || v.is_null()));
        if (!ok) throw ConfigError("report field '" + key + "' must have type " + t);
    }
}

namespace {

json mask_to_json(const Mask& m) {
    json runs = json::array();
    for (int64_t r : rle_encode(m)) runs.push_back(r);
    return runs;
}

json prediction_record(const ScenePredictions& sp, size_t i, bool referring) {
    const decode::Prediction& p = sp.preds[i];
    json rec{{"scene", sp.scene_index}, {"scene_seed", sp.scene_seed},  {"patch", p.patch},
             {"score", p.score},        {"category", p.category},       {"side", p.mask.h},
             {"rle", mask_to_json(p.mask)}};
    if (referring) rec["ref_target"] = sp.ref_targets[i];
    return rec;
}

}  // namespace

EvalResult evaluate_run(net::Model<float>& model, const Session& s, const std::string& split_name,
                        const std::string& task, const fs::path& out_dir,
                        const fs::path& overlays_dir) {
    bool known = false;
    for (const auto& t : eval_tasks()) known = known || t == task;
    if (!known) {
        std::string names;
        for (const auto& t : eval_tasks()) names += (names.empty() ? "" : ", ") + t;
        throw ConfigError("unknown task '" + task + "'; expected one of: " + names);
    }

    synth::DatasetSplit split = load_split_checked(s.cfg, split_name);
    fs::create_directories(out_dir);

    EvalResult result;
    result.dump_path = out_dir / ("dump_" + split_name + "_" + task + ".jsonl");
    result.report_path = out_dir / ("report_" + split_name + "_" + task + ".json");

    std::ofstream dump(result.dump_path, std::ios::trunc);
    if (!dump) throw ConfigError("cannot write " + result.dump_path.string());
    dump << json{{"type", "rose-prediction-dump"},
                 {"schema_version", 1},
                 {"config_hash", s.cfg.hash_hex()},
                 {"split", split_name},
                 {"task", task}}
                .dump()
         << "\n";

    const int side = s.cfg.model.image_side;
    const std::vector<std::string> classes = s.cfg.data.all_categories();
    const int C = static_cast<int>(classes.size());

    Eigen::MatrixXd confusion = Eigen::MatrixXd::Zero(C + 1, C + 1);
    long cat_correct = 0, cat_total = 0;
    std::vector<metrics::EvalInstance> eval_instances;
    std::vector<metrics::GtInstance> gt_instances;
    std::vector<Mask> ref_pred, ref_gt;
    long sample_count = 0;
    const size_t overlay_cap = 24;

    for (size_t i = 0; i < split.size(); ++i) {
        ScenePredictions sp = decode_scene(model, s, split, i, task);
        const synth::Scene& scene = split.scenes[i];

        if (task == "semantic") {
            for (size_t k = 0; k < sp.preds.size(); ++k)
                dump << prediction_record(sp, k, false).dump() << "\n";
            decode::SemanticMap sem =
                stack_semantic(sp.preds, classes, side, s.cfg.infer.non_object_bias);
            confusion += metrics::confusion_matrix(sem.labels, synth::semantic_label_map(scene), C);
            auto [correct, total] = category_accuracy_scene(model, s, split, i);
            cat_correct += correct;
            cat_total += total;
            ++sample_count;
        } else if (task == "instance") {
            std::vector<decode::Prediction> kept = decode::postprocess_instances(
                sp.preds, s.cfg.infer.score_threshold, s.cfg.infer.nms_iou);
            ScenePredictions kept_sp{sp.scene_index, sp.scene_seed, kept, {}};
            for (size_t k = 0; k < kept.size(); ++k)
                dump << prediction_record(kept_sp, k, false).dump() << "\n";
            for (const auto& p : kept)
                eval_instances.push_back({p.mask, p.category, p.score, static_cast<int>(i)});
            for (const auto& t : scene.targets)
                if (t.is_thing) gt_instances.push_back({t.mask, t.category_name, static_cast<int>(i)});
            sp.preds = std::move(kept);
            ++sample_count;
        } else {
            for (size_t k = 0; k < sp.preds.size(); ++k) {
                dump << prediction_record(sp, k, true).dump() << "\n";
                ref_pred.push_back(sp.preds[k].mask);
                ref_gt.push_back(scene.targets[static_cast<size_t>(sp.ref_targets[k])].mask);
                ++sample_count;
            }
        }

        if (!overlays_dir.empty() && i < overlay_cap) {
            char name[32];
            std::snprintf(name, sizeof(name), "overlay_%04zu.png", i);
            render_overlay(split.load_image(i), side, sp.preds, classes, overlays_dir / name);
        }
    }
    dump.close();

    json metrics_json;
    if (sample_count == 0) {
        metrics_json = nullptr;
    } else if (task == "semantic") {
        metrics_json = {{"miou", metrics::miou(confusion)},
                        {"category_accuracy",
                         cat_total ? static_cast<double>(cat_correct) / cat_total : 0.0}};
    } else if (task == "instance") {
        metrics::CocoResult r = metrics::coco_map(eval_instances, gt_instances);
        metrics_json = {{"map", r.map}, {"ap50", r.ap50}, {"ap75", r.ap75}};
    } else {
        metrics_json = {{"ciou", metrics::ciou(ref_pred, ref_gt)}};
    }

    result.report = json{{"type", "rose-eval-report"},
                         {"schema_version", 1},
                         {"config_hash", s.cfg.hash_hex()},
                         {"split", split_name},
                         {"task", task},
                         {"sample_count", sample_count},
                         {"metrics", metrics_json}};
    validate_report(result.report, fs::path(s.cfg.assets_dir) / "report_schema.json");

    std::ofstream rep(result.report_path, std::ios::trunc);
    if (!rep) throw ConfigError("cannot write " + result.report_path.string());
    rep << result.report.dump(2) << "\n";
    return result;
}

// ---------------------------------------------------------------------------
// Overlay rendering

namespace {

// 3x5 glyphs, rows top to bottom, 3 bits per row (MSB = left pixel).
uint16_t glyph_for(char c) {
    auto g = [](int r0, int r1, int r2, int r3, int r4) {
        return static_cast<uint16_t>(r0 << 12 | r1 << 9 | r2 << 6 | r3 << 3 | r4);
    };
    switch (c) {
        case '0': return g(7, 5, 5, 5, 7);
        case '1': return g(2, 6, 2, 2, 7);
        case '2': return g(7, 1, 7, 4, 7);
        case '3': return g(7, 1, 7, 1, 7);
        case '4': return g(5, 5, 7, 1, 1);
        case '5': return g(7, 4, 7, 1, 7);
        case '6': return g(7, 4, 7, 5, 7);
        case '7': return g(7, 1, 1, 1, 1);
        case '8': return g(7, 5, 7, 5, 7);
        case '9': return g(7, 5, 7, 1, 7);
        case 'a': return g(2, 5, 7, 5, 5);
        case 'b': return g(6, 5, 6, 5, 6);
        case 'c': return g(3, 4, 4, 4, 3);
        case 'd': return g(6, 5, 5, 5, 6);
        case 'e': return g(7, 4, 6, 4, 7);
        case 'f': return g(7, 4, 6, 4, 4);
        case 'g': return g(3, 4, 5, 5, 3);
        case 'h': return g(5, 5, 7, 5, 5);
        case 'i': return g(7, 2, 2, 2, 7);
        case 'j': return g(1, 1, 1, 5, 2);
        case 'k': return g(5, 6, 4, 6, 5);
        case 'l': return g(4, 4, 4, 4, 7);
        case 'm': return g(5, 7, 7, 5, 5);
        case 'n': return g(6, 5, 5, 5, 5);
        case 'o': return g(2, 5, 5, 5, 2);
        case 'p': return g(6, 5, 6, 4, 4);
        case 'q': return g(2, 5, 5, 6, 3);
        case 'r': return g(6, 5, 6, 6, 5);
        case 's': return g(3, 4, 2, 1, 6);
        case 't': return g(7, 2, 2, 2, 2);
        case 'u': return g(5, 5, 5, 5, 7);
        case 'v': return g(5, 5, 5, 5, 2);
        case 'w': return g(5, 5, 7, 7, 5);
        case 'x': return g(5, 5, 2, 5, 5);
        case 'y': return g(5, 5, 2, 2, 2);
        case 'z': return g(7, 1, 2, 4, 7);
        default: return 0;
    }
}

struct Rgb {
    uint8_t r, g, b;
};

constexpr Rgb kOverlayPalette[8] = {{230, 60, 60},  {60, 200, 90},  {70, 110, 230},
                                    {235, 205, 60}, {205, 70, 205}, {70, 205, 205},
                                    {240, 140, 50}, {140, 80, 220}};

}  // namespace

void render_overlay(const synth::Image& image, int side,
                    const std::vector<decode::Prediction>& preds,
                    const std::vector<std::string>& class_names, const fs::path& path) {
    constexpr int kScale = 4;
    const int out_side = side * kScale;
    std::vector<uint8_t> rgb(static_cast<size_t>(3) * out_side * out_side);

    auto put = [&](int r, int c, Rgb color, double alpha) {
        uint8_t* px = rgb.data() + (static_cast<size_t>(r) * out_side + c) * 3;
        px[0] = static_cast<uint8_t>(px[0] * (1.0 - alpha) + color.r * alpha);
        px[1] = static_cast<uint8_t>(px[1] * (1.0 - alpha) + color.g * alpha);
        px[2] = static_cast<uint8_t>(px[2] * (1.0 - alpha) + color.b * alpha);
    };

    for (int r = 0; r < out_side; ++r)
        for (int c = 0; c < out_side; ++c) {
            const Eigen::Index pix =
                static_cast<Eigen::Index>(r / kScale) * side + c / kScale;
            uint8_t* px = rgb.data() + (static_cast<size_t>(r) * out_side + c) * 3;
            for (int ch = 0; ch < 3; ++ch)
                px[ch] = static_cast<uint8_t>(
                    std::clamp(image(pix, ch), 0.0f, 1.0f) * 255.0f);
        }

    for (size_t i = 0; i < preds.size(); ++i) {
        const decode::Prediction& p = preds[i];
        // Color by class when the category is known, by index otherwise.
        size_t color_index = i;
        for (size_t c = 0; c < class_names.size(); ++c)
            if (class_names[c] == p.category) color_index = c;
        const Rgb color = kOverlayPalette[color_index % 8];

        for (int r = 0; r < side; ++r)
            for (int c = 0; c < side; ++c) {
                if (!p.mask.at(r, c)) continue;
                const bool edge = r == 0 || c == 0 || r == side - 1 || c == side - 1 ||
                                  !p.mask.at(r - 1, c) || !p.mask.at(r + 1 == side ? r : r + 1, c) ||
                                  !p.mask.at(r, c - 1) || !p.mask.at(r, c + 1 == side ? c : c + 1);
                for (int dr = 0; dr < kScale; ++dr)
                    for (int dc = 0; dc < kScale; ++dc)
                        put(r * kScale + dr, c * kScale + dc, color, edge ? 0.95 : 0.40);
            }

        const std::array<int, 4> box = mask_bbox(p.mask);
        if (box[2] < box[0]) continue;  // empty mask, nothing to label
        int tr = std::clamp(box[0] * kScale - 6, 0, out_side - 6);
        int tc = std::clamp(box[1] * kScale, 0, out_side - 1);
        for (char ch : p.category) {
            const uint16_t glyph = glyph_for(ch);
            for (int gr = 0; gr < 5; ++gr)
                for (int gc = 0; gc < 3; ++gc)
                    if (glyph >> ((4 - gr) * 3 + (2 - gc)) & 1) {
                        const int rr = tr + gr, cc = tc + gc;
                        if (rr < out_side && cc < out_side) put(rr, cc, {255, 255, 255}, 1.0);
                    }
            tc += 4;
        }
    }
    png::write_rgb(path, rgb, out_side, out_side);
}

}  // namespace rose::run
