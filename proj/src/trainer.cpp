#include "rose/trainer.hpp"

#include <Eigen/Core>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <optional>
#include <sstream>

#include "rose/common.hpp"
#include "rose/refine.hpp"

namespace rose::run {

namespace fs = std::filesystem;

namespace {

const std::string& pick(const std::vector<std::string>& bank, Rng& rng) {
    if (bank.empty()) throw ConfigError("prompt bank is empty");
    return bank[static_cast<size_t>(rng.uniform_int(0, static_cast<int64_t>(bank.size()) - 1))];
}

std::vector<grid::Target> thing_targets(const synth::Scene& scene) {
    std::vector<grid::Target> things;
    for (const auto& t : scene.targets)
        if (t.is_thing) things.push_back(t);
    return things;
}

constexpr const char* kHereItIs = "Sure, here it is.";

}  // namespace

TrainExample build_semantic_example(const Session& s, const synth::Scene& scene, Rng& rng) {
    TrainExample ex;
    ex.task = "semantic";
    ex.layout = net::build_sequence(s.vocab, pick(s.banks.semantic, rng), scene.counting_sentence);
    ex.sup_targets = scene.targets;
    ex.plan = grid::assign_supervision(ex.sup_targets, s.grid, &s.layout, s.cfg.neg_ratio,
                                       rng.next_u64(), s.cfg.roles);
    ex.pairs = ex.plan.positive;
    return ex;
}

TrainExample build_instance_example(const Session& s, const synth::Scene& scene, Rng& rng) {
    TrainExample ex;
    ex.task = "instance";
    ex.layout = net::build_sequence(s.vocab, pick(s.banks.instance, rng), scene.counting_sentence);
    ex.sup_targets = thing_targets(scene);
    ex.plan = grid::assign_supervision(ex.sup_targets, s.grid, &s.layout, s.cfg.neg_ratio,
                                       rng.next_u64(), s.cfg.roles);
    ex.pairs = ex.plan.positive;
    return ex;
}

TrainExample build_referring_example(const Session& s, const synth::Scene& scene, Rng& rng) {
    if (scene.referring.empty()) return build_semantic_example(s, scene, rng);
    TrainExample ex;
    ex.task = "referring";
    const auto& [phrase, referred] = scene.referring[static_cast<size_t>(
        rng.uniform_int(0, static_cast<int64_t>(scene.referring.size()) - 1))];
    ex.layout = net::build_sequence(
        s.vocab, fill_placeholder(pick(s.banks.referring, rng), "{description}", phrase),
        kHereItIs);

    // Assign as usual, then keep only the referred target's patches as
    // positives; every patch claimed by another target turns into an extra
    // negative, since the answer must single out one object.
    ex.sup_targets = scene.targets;
    grid::SupervisionPlan full = grid::assign_supervision(
        ex.sup_targets, s.grid, &s.layout, s.cfg.neg_ratio, rng.next_u64(), s.cfg.roles);
    ex.plan.negative = full.negative;
    for (const auto& [patch, ti] : full.positive) {
        if (ti == referred)
            ex.plan.positive.emplace_back(patch, ti);
        else
            ex.plan.negative.push_back(patch);
    }
    std::sort(ex.plan.negative.begin(), ex.plan.negative.end());
    ex.pairs = ex.plan.positive;
    return ex;
}

TrainExample build_refinement_example(const Session& s, const synth::Scene& scene, Rng& rng) {
    std::vector<grid::Target> things = thing_targets(scene);
    if (things.empty()) return build_semantic_example(s, scene, rng);
    TrainExample ex;
    ex.task = "refinement";
    const grid::Target& target =
        things[static_cast<size_t>(rng.uniform_int(0, static_cast<int64_t>(things.size()) - 1))];

    const auto situation = static_cast<refine::Situation>(rng.uniform_int(0, 2));
    Mask region = target.mask;
    std::string wrong;
    if (situation == refine::Situation::Mask) {
        synth::CorruptionRecipe recipe;
        recipe.mode = rng.coin() ? synth::CorruptionMode::HolesPatches
                                 : synth::CorruptionMode::ShrinkStretch;
        recipe.magnitude = rng.uniform(0.35, 0.65);
        recipe.seed = rng.next_u64();
        region = synth::corrupt_mask(target.mask, recipe);
    } else if (situation == refine::Situation::Category) {
        std::vector<std::string> others;
        for (const auto& name : s.cfg.data.all_categories())
            if (name != target.category_name) others.push_back(name);
        wrong = others.empty() ? target.category_name : pick(others, rng);
    }
    refine::RefinementCase rcase =
        refine::build_case(situation, region, wrong, s.banks, rng.next_u64());

    ex.layout = net::build_sequence(s.vocab, rcase.prompt, kHereItIs);
    if (rcase.channel.size() == static_cast<size_t>(s.grid.image_side) * s.grid.image_side) {
        ex.has_channel = true;
        ex.channel = rcase.channel;
    }
    ex.sup_targets = {target};
    ex.plan = grid::assign_supervision(ex.sup_targets, s.grid, &s.layout, s.cfg.neg_ratio,
                                       rng.next_u64(), s.cfg.roles);
    ex.pairs = ex.plan.positive;
    return ex;
}

TrainExample build_vanilla_example(const Session& s, const synth::Scene& scene, Rng& rng) {
    TrainExample ex;
    ex.task = "vanilla";
    const std::vector<std::string> classes = s.cfg.data.all_categories();

    // Answer: "name <SEG>" per present class, ascending category id; each
    // <SEG> row later regresses the class's union mask.
    std::string answer;
    for (size_t c = 0; c < classes.size(); ++c) {
        Mask u(s.grid.image_side, s.grid.image_side);
        bool present = false;
        for (const auto& t : scene.targets) {
            if (t.category_id != static_cast<int>(c)) continue;
            present = true;
            for (size_t i = 0; i < u.data.size(); ++i) u.data[i] |= t.mask.data[i];
        }
        if (!present) continue;
        if (!answer.empty()) answer += " ";
        answer += classes[c] + " <SEG>";
        ex.seg_masks.push_back(std::move(u));
    }
    ex.layout = net::build_sequence(s.vocab, pick(s.banks.semantic, rng), answer);
    for (int j = ex.layout.answer_begin; j < ex.layout.answer_end; ++j)
        if (ex.layout.ids[static_cast<size_t>(j)] == text::Vocab::kSeg) ex.seg_tokens.push_back(j);
    if (ex.seg_tokens.size() != ex.seg_masks.size())
        throw std::logic_error("build_vanilla_example: <SEG> count mismatch");
    return ex;
}

TrainExample build_example(const Session& s, const synth::Scene& scene, Rng& rng) {
    if (s.cfg.model.arch == "vanilla") return build_vanilla_example(s, scene, rng);
    const TaskMix& m = s.cfg.mix;
    const double total = m.semantic + m.instance + m.referring + m.refinement;
    const double r = rng.uniform() * total;
    if (r < m.semantic) return build_semantic_example(s, scene, rng);
    if (r < m.semantic + m.instance) return build_instance_example(s, scene, rng);
    if (r < m.semantic + m.instance + m.referring) return build_referring_example(s, scene, rng);
    return build_refinement_example(s, scene, rng);
}

int example_loss(net::Model<float>& model, ad::Tape<float>& tape, const Session& s,
                 const synth::Image& image, const TrainExample& ex) {
    const Mask* channel = ex.has_channel ? &ex.channel : nullptr;
    net::Perception p = model.forward_perception(image, channel, ex.layout);

    net::TextStream answer = model.answer_stream(p);
    const std::vector<float> answer_mask(answer.targets.size(), 1.0f);
    int loss = losses::masked_ce(tape, answer.logits, answer.targets, answer_mask);

    if (ex.task == "vanilla") {
        if (!ex.seg_tokens.empty()) {
            std::vector<int> rows;
            for (int tok : ex.seg_tokens) rows.push_back(p.row_of_token(tok));
            int decoded = model.decode_masks(model.head_msk(tape.gather_rows(p.hidden, rows)),
                                             model.encode_features(image, channel));
            int acc = -1;
            for (size_t i = 0; i < ex.seg_masks.size(); ++i) {
                int one = losses::mask_loss(tape, tape.slice_cols(decoded, static_cast<int>(i), 1),
                                            ex.seg_masks[i], s.cfg.loss);
                acc = acc < 0 ? one : tape.add(acc, one);
            }
            loss = tape.add(loss, tape.scale(acc, 1.0f / static_cast<float>(ex.seg_masks.size())));
        }
        return loss;
    }

    if (!ex.pairs.empty()) {
        std::vector<int> rows;
        std::vector<std::string> names;
        for (const auto& [patch, ti] : ex.pairs) {
            rows.push_back(patch);
            names.push_back(ex.sup_targets[static_cast<size_t>(ti)].category_name);
        }

        net::TextStream cat = model.category_stream(tape.gather_rows(p.e_cat, rows), names);
        const std::vector<float> cat_mask(cat.targets.size(), 1.0f);
        loss = tape.add(loss, losses::masked_ce(tape, cat.logits, cat.targets, cat_mask));

        int decoded = model.decode_masks(tape.gather_rows(p.e_msk, rows),
                                         model.encode_features(image, channel));
        int acc = -1;
        for (size_t i = 0; i < ex.pairs.size(); ++i) {
            int one = losses::mask_loss(tape, tape.slice_cols(decoded, static_cast<int>(i), 1),
                                        ex.sup_targets[static_cast<size_t>(ex.pairs[i].second)].mask,
                                        s.cfg.loss);
            acc = acc < 0 ? one : tape.add(acc, one);
        }
        loss = tape.add(loss, tape.scale(acc, 1.0f / static_cast<float>(ex.pairs.size())));

        loss = tape.add(loss, losses::siglip_loss(tape, tape.gather_rows(p.e_sig, rows), names,
                                                  s.embedder, s.vocab, s.cfg.loss));
    }
    loss = tape.add(loss, losses::objectness_loss(tape, p.obj, ex.plan));
    return loss;
}

double lr_at(const OptimizerConfig& o, long update_index) {
    if (o.warmup_steps > 0 && update_index < o.warmup_steps)
        return o.lr * static_cast<double>(update_index + 1) / static_cast<double>(o.warmup_steps);
    if (o.total_steps <= o.warmup_steps) return o.lr;
    const double t = static_cast<double>(update_index - o.warmup_steps) /
                     static_cast<double>(o.total_steps - o.warmup_steps);
    return o.lr * (1.0 - t);
}

namespace {

// Reads loss.csv back and fills the two comparison windows.
void fill_loss_windows(const fs::path& csv_path, TrainResult& result) {
    std::ifstream in(csv_path);
    std::string line;
    std::getline(in, line);  // header
    std::vector<double> losses;
    while (std::getline(in, line)) {
        const size_t last = line.rfind(',');
        if (last == std::string::npos) continue;
        losses.push_back(std::strtod(line.c_str() + last + 1, nullptr));
    }
    auto window_mean = [&](size_t begin, size_t end) {
        double sum = 0.0;
        size_t n = 0;
        for (size_t i = begin; i < end && i < losses.size(); ++i, ++n) sum += losses[i];
        return n ? sum / static_cast<double>(n) : 0.0;
    };
    result.early_window_loss = window_mean(40, 60);
    if (losses.size() >= 20)
        result.final_window_loss = window_mean(losses.size() - 20, losses.size());
    else
        result.final_window_loss = window_mean(0, losses.size());
}

}  // namespace

TrainResult train_run(const RunConfig& cfg, const std::filesystem::path& resume,
                      bool deterministic, std::ostream& progress) {
    if (deterministic) Eigen::setNbThreads(1);
    Session ses = make_session(cfg);
    fs::create_directories(cfg.out_dir);

    synth::DatasetSplit train = load_split_checked(cfg, "train");
    if (train.size() == 0) throw ConfigError("train split is empty; run gen-data first");

    auto model = std::make_unique<net::Model<float>>(cfg.model, ses.vocab,
                                                     derive_seed(cfg.seed, kStreamModelInit));
    long start_step = 0;
    if (!resume.empty()) {
        net::Checkpoint ck = net::load_checkpoint(resume, cfg.hash());
        if (ck.vocab.words != ses.vocab.words)
            throw ConfigError("resume checkpoint vocabulary does not match the assets");
        model = std::move(ck.model);
        start_step = ck.step;
    }

    const fs::path csv_path = fs::path(cfg.out_dir) / "loss.csv";
    std::ofstream csv;
    if (start_step == 0) {
        csv.open(csv_path, std::ios::trunc);
        csv << "step,lr,loss\n";
    } else {
        csv.open(csv_path, std::ios::app);
    }
    if (!csv) throw ConfigError("cannot write " + csv_path.string());

    TrainResult result;
    result.loss_csv = csv_path;
    result.final_checkpoint = fs::path(cfg.out_dir) / "final.ckpt";

    std::vector<std::optional<synth::Image>> cache(train.size());
    auto image_of = [&](size_t idx) -> const synth::Image& {
        if (!cache[idx]) cache[idx] = train.load_image(idx);
        return *cache[idx];
    };

    const int items_per_step = cfg.optim.batch_size * cfg.optim.accumulation;
    const long total = cfg.optim.total_steps;
    for (long step = start_step; step < total; ++step) {
        const uint64_t step_seed = derive_seed(cfg.seed, kStreamBatch, static_cast<uint64_t>(step));
        double batch_loss = 0.0;
        for (int item = 0; item < items_per_step; ++item) {
            Rng rng(derive_seed(step_seed, static_cast<uint64_t>(item)));
            const auto scene_idx =
                static_cast<size_t>(rng.uniform_int(0, static_cast<int64_t>(train.size()) - 1));
            TrainExample ex = build_example(ses, train.scenes[scene_idx], rng);

            ad::Tape<float> tape;
            model->bind(tape);
            const int loss_node = example_loss(*model, tape, ses, image_of(scene_idx), ex);
            batch_loss += static_cast<double>(tape.value(loss_node)(0, 0)) / items_per_step;
            tape.backward(tape.scale(loss_node, 1.0f / static_cast<float>(items_per_step)));
            model->accumulate_grads();
        }

        if (!std::isfinite(batch_loss)) {
            std::ofstream diag(fs::path(cfg.out_dir) / "nan_diagnostic.json");
            diag << "{\"step\": " << step << ", \"batch_seed\": " << step_seed << "}\n";
            throw ConfigError("training aborted: non-finite loss at step " + std::to_string(step) +
                              " (batch seed " + std::to_string(step_seed) + ")");
        }

        net::AdamConfig opt;
        opt.lr = lr_at(cfg.optim, step);
        net::adam_step(model->params(), opt, step + 1);
        model->params().zero_grads();

        char line[96];
        std::snprintf(line, sizeof(line), "%ld,%.10e,%.10e\n", step, opt.lr, batch_loss);
        csv << line << std::flush;

        const long done = step + 1;
        if (done % cfg.optim.checkpoint_every == 0 && done < total) {
            char name[32];
            std::snprintf(name, sizeof(name), "ckpt_%06ld.ckpt", done);
            net::save_checkpoint(fs::path(cfg.out_dir) / name, *model, cfg.hash(), done,
                                 cfg.serialized());
        }
        if (done % 100 == 0 || done == total)
            progress << "step " << done << "/" << total << "  loss " << batch_loss << "  lr "
                     << opt.lr << "\n";
    }

    net::save_checkpoint(result.final_checkpoint, *model, cfg.hash(), total, cfg.serialized());
    result.steps_run = total - start_step;
    csv.close();
    fill_loss_windows(csv_path, result);
    return result;
}

}  // namespace rose::run
