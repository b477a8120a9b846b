#include "rose/refiner.hpp"

#include <fstream>

#include "rose/common.hpp"
#include "rose/metrics.hpp"

namespace rose::run {

namespace fs = std::filesystem;
using nlohmann::json;

decode::Prediction refine_pass(net::Model<float>& model, const Session& s,
                               const synth::Image& image, const refine::RefinementCase& rcase) {
    const int side = s.cfg.model.image_side;
    const Mask* channel =
        rcase.channel.size() == static_cast<size_t>(side) * side ? &rcase.channel : nullptr;
    net::SequenceLayout layout = net::build_sequence(s.vocab, rcase.prompt, "");

    ad::Tape<float> tape;
    model.bind(tape);
    net::Perception p = model.forward_perception(image, channel, layout);
    const ad::Mat<float>& obj = tape.value(p.obj);
    std::vector<double> scores(static_cast<size_t>(obj.rows()));
    for (Eigen::Index i = 0; i < obj.rows(); ++i)
        scores[static_cast<size_t>(i)] = 1.0 / (1.0 + std::exp(-static_cast<double>(obj(i, 0))));
    const int best = decode::select_referring(scores);

    int soft = tape.sigmoid(model.decode_masks(tape.gather_rows(p.e_msk, {best}),
                                               model.encode_features(image, channel)));
    std::vector<std::string> cats =
        model.generate_categories(tape.value(tape.gather_rows(p.e_cat, {best})));
    return decode::make_prediction(best, scores[static_cast<size_t>(best)], cats.at(0),
                                   tape.value(soft).col(0), side);
}

namespace {

struct DumpRecord {
    json raw;
    decode::Prediction pred;
    int ref_target = -1;
};

json prediction_to_record(const decode::Prediction& p, int scene_index, uint64_t scene_seed,
                          int ref_target) {
    json runs = json::array();
    for (int64_t r : rle_encode(p.mask)) runs.push_back(r);
    json rec{{"scene", scene_index}, {"scene_seed", scene_seed}, {"patch", p.patch},
             {"score", p.score},     {"category", p.category},   {"side", p.mask.h},
             {"rle", std::move(runs)}};
    if (ref_target >= 0) rec["ref_target"] = ref_target;
    return rec;
}

Mask label_region(const std::vector<int>& labels, int side, int cls) {
    Mask m(side, side);
    for (size_t i = 0; i < labels.size(); ++i) m.data[i] = labels[i] == cls ? 1 : 0;
    return m;
}

uint64_t episode_seed(const RunConfig& cfg, int scene_index, int slot) {
    return derive_seed(cfg.seed, kStreamRefine,
                       static_cast<uint64_t>(scene_index) * 1000 + static_cast<uint64_t>(slot));
}

}  // namespace

RefineResult refine_run(net::Model<float>& model, const Session& s, const fs::path& dump_path,
                        const std::string& split_name, const fs::path& out_dir) {
    std::ifstream in(dump_path);
    if (!in) throw ConfigError("cannot read prediction dump: " + dump_path.string());
    std::string line;
    if (!std::getline(in, line)) throw ConfigError("prediction dump is empty: " + dump_path.string());

    json header;
    try {
        header = json::parse(line);
    } catch (const json::exception& e) {
        throw ConfigError("prediction dump header is not valid JSON: " + std::string(e.what()));
    }
    if (header.value("type", "") != "rose-prediction-dump")
        throw ConfigError("not a prediction dump: " + dump_path.string());
    if (header.value("config_hash", "") != s.cfg.hash_hex())
        throw ConfigError("prediction dump was produced under a different config (" +
                          header.value("config_hash", "?") + " != " + s.cfg.hash_hex() + ")");
    if (header.value("split", "") != split_name)
        throw ConfigError("prediction dump is for split '" + header.value("split", "?") +
                          "', not '" + split_name + "'");
    const std::string task = header.value("task", "");

    synth::DatasetSplit split = load_split_checked(s.cfg, split_name);
    const int side = s.cfg.model.image_side;

    // Parse records, grouped by scene, rejecting scenes the split lacks.
    std::vector<std::vector<DumpRecord>> by_scene(split.size());
    long line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        json rec;
        try {
            rec = json::parse(line);
        } catch (const json::exception& e) {
            throw ConfigError("prediction dump line " + std::to_string(line_no) +
                              " is not valid JSON: " + std::string(e.what()));
        }
        const int scene_index = rec.at("scene").get<int>();
        if (scene_index < 0 || static_cast<size_t>(scene_index) >= split.size() ||
            rec.at("scene_seed").get<uint64_t>() != split.scenes[static_cast<size_t>(scene_index)].seed)
            throw ConfigError("prediction dump does not match split '" + split_name +
                              "' at line " + std::to_string(line_no));
        if (rec.at("side").get<int>() != side)
            throw ConfigError("prediction dump mask size does not match the config");

        DumpRecord d;
        d.raw = rec;
        Mask m = rle_decode(rec.at("rle").get<std::vector<int64_t>>(), side, side);
        Eigen::VectorXf soft(static_cast<Eigen::Index>(m.data.size()));
        for (size_t i = 0; i < m.data.size(); ++i)
            soft[static_cast<Eigen::Index>(i)] = m.data[i] ? 1.0f : 0.0f;
        d.pred = decode::make_prediction(rec.at("patch").get<int>(), rec.at("score").get<double>(),
                                         rec.at("category").get<std::string>(), soft, side);
        d.ref_target = rec.value("ref_target", -1);
        by_scene[static_cast<size_t>(scene_index)].push_back(std::move(d));
    }
    in.close();

    const std::vector<std::string> classes = s.cfg.data.all_categories();
    const int C = static_cast<int>(classes.size());

    RefineResult result;
    result.task = task;
    fs::create_directories(out_dir);
    result.dump_path = out_dir / ("refined_" + split_name + "_" + task + ".jsonl");
    result.report_path = out_dir / ("refine_report_" + split_name + "_" + task + ".jsonl");

    std::ofstream dump(result.dump_path, std::ios::trunc);
    std::ofstream report(result.report_path, std::ios::trunc);
    if (!dump || !report)
        throw ConfigError("cannot write refinement outputs under " + out_dir.string());
    json out_header = header;
    dump << out_header.dump() << "\n";
    report << json{{"type", "rose-refinement-report"},
                   {"schema_version", 1},
                   {"config_hash", s.cfg.hash_hex()},
                   {"split", split_name},
                   {"task", task}}
                  .dump()
           << "\n";

    for (size_t si = 0; si < split.size(); ++si) {
        auto& records = by_scene[si];
        const synth::Scene& scene = split.scenes[si];
        if (records.empty()) continue;
        const synth::Image image = split.load_image(si);

        std::vector<decode::Prediction> preds;
        for (const auto& d : records) preds.push_back(d.pred);
        std::vector<RefinementRecord> episodes;

        if (task == "semantic") {
            decode::SemanticMap sem =
                decode::stack_semantic(preds, classes, side, s.cfg.infer.non_object_bias);
            const std::vector<int> gt_labels = synth::semantic_label_map(scene);
            const Eigen::MatrixXd conf = metrics::confusion_matrix(sem.labels, gt_labels, C);

            int slot = 0;
            for (int cls : refine::select_semantic_targets(conf, 5)) {
                const refine::Situation situation = refine::judge_situation(conf, cls);
                const Mask gt_region = label_region(gt_labels, side, cls);
                const Mask pred_region = label_region(sem.labels, side, cls);

                Mask region;
                std::string wrong, before_name;
                if (situation == refine::Situation::Mask) {
                    region = pred_region;
                    before_name = classes[static_cast<size_t>(cls)];
                } else if (situation == refine::Situation::Category) {
                    // The class most often predicted where `cls` should be;
                    // its prediction over the object is what gets repaired.
                    int capture = -1;
                    for (int m = 0; m < C; ++m)
                        if (m != cls && (capture < 0 || conf(m, cls) > conf(capture, cls)))
                            capture = m;
                    wrong = classes[static_cast<size_t>(capture)];
                    before_name = wrong;
                    const Mask cap_region = label_region(sem.labels, side, capture);
                    region = Mask(side, side);
                    for (size_t i = 0; i < region.data.size(); ++i)
                        region.data[i] = cap_region.data[i] && gt_region.data[i];
                } else {
                    region = gt_region;  // bbox hint only; the channel stays zero
                }

                refine::RefinementCase rcase = refine::build_case(
                    situation, region, wrong, s.banks, episode_seed(s.cfg, static_cast<int>(si), slot));
                decode::Prediction refined = refine_pass(model, s, image, rcase);

                RefinementRecord ep;
                ep.scene_index = static_cast<int>(si);
                ep.situation = situation;
                ep.iou_before = mask_iou(pred_region, gt_region);
                ep.iou_after = mask_iou(refined.mask, gt_region);
                ep.category_before = before_name;
                ep.category_after = refined.category;
                episodes.push_back(ep);

                // The refined prediction replaces the class's old records.
                std::vector<DumpRecord> kept;
                for (auto& d : records)
                    if (d.pred.category != classes[static_cast<size_t>(cls)])
                        kept.push_back(std::move(d));
                DumpRecord nd;
                nd.pred = refined;
                nd.raw = prediction_to_record(refined, static_cast<int>(si), scene.seed, -1);
                kept.push_back(std::move(nd));
                records = std::move(kept);
                ++slot;
            }
        } else if (task == "instance") {
            int slot = 0;
            for (const refine::InstanceTarget& t :
                 refine::select_instance_targets(preds, scene.targets, 10)) {
                const decode::Prediction& bad = preds[static_cast<size_t>(t.pred_index)];
                refine::RefinementCase rcase =
                    refine::build_case(t.situation, bad.mask, bad.category, s.banks,
                                       episode_seed(s.cfg, static_cast<int>(si), slot));
                decode::Prediction refined = refine_pass(model, s, image, rcase);

                RefinementRecord ep;
                ep.scene_index = static_cast<int>(si);
                ep.situation = t.situation;
                if (t.matched_gt >= 0) {
                    const Mask& gt = scene.targets[static_cast<size_t>(t.matched_gt)].mask;
                    ep.iou_before = mask_iou(bad.mask, gt);
                    ep.iou_after = mask_iou(refined.mask, gt);
                }
                ep.category_before = bad.category;
                ep.category_after = refined.category;
                episodes.push_back(ep);

                auto& d = records[static_cast<size_t>(t.pred_index)];
                d.pred = refined;
                d.raw = prediction_to_record(refined, static_cast<int>(si), scene.seed, -1);
                ++slot;
            }
        } else if (task == "referring") {
            for (size_t k = 0; k < records.size(); ++k) {
                auto& d = records[k];
                if (d.ref_target < 0 ||
                    static_cast<size_t>(d.ref_target) >= scene.targets.size())
                    throw ConfigError("referring dump record lacks a valid ref_target");
                const Mask& gt = scene.targets[static_cast<size_t>(d.ref_target)].mask;
                if (mask_iou(d.pred.mask, gt) >= 0.5) continue;  // already a good mask

                refine::RefinementCase rcase = refine::build_case(
                    refine::Situation::Mask, d.pred.mask, "", s.banks,
                    episode_seed(s.cfg, static_cast<int>(si), static_cast<int>(k)));
                decode::Prediction refined = refine_pass(model, s, image, rcase);

                RefinementRecord ep;
                ep.scene_index = static_cast<int>(si);
                ep.situation = refine::Situation::Mask;
                ep.iou_before = mask_iou(d.pred.mask, gt);
                ep.iou_after = mask_iou(refined.mask, gt);
                ep.category_before = d.pred.category;
                ep.category_after = refined.category;
                episodes.push_back(ep);

                const int ref_target = d.ref_target;
                d.pred = refined;
                d.raw = prediction_to_record(refined, static_cast<int>(si), scene.seed, ref_target);
            }
        } else {
            throw ConfigError("prediction dump has unknown task '" + task + "'");
        }

        for (const auto& ep : episodes) {
            report << json{{"scene_id", ep.scene_index},
                           {"situation", refine::situation_name(ep.situation)},
                           {"iou_before", ep.iou_before},
                           {"iou_after", ep.iou_after},
                           {"category_before", ep.category_before},
                           {"category_after", ep.category_after}}
                          .dump()
                   << "\n";
            result.records.push_back(ep);
        }
    }

    // Re-emit every record (refined or untouched) in scene order.
    for (const auto& scene_records : by_scene)
        for (const auto& d : scene_records) dump << d.raw.dump() << "\n";
    return result;
}

}  // namespace rose::run
