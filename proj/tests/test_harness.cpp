#include "doctest.h"

#include <cstdlib>
#include <fstream>
#include <sstream>

#include "rose/evaluator.hpp"
#include "rose/refiner.hpp"
#include "rose/trainer.hpp"

using namespace rose;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

fs::path fresh_dir(const std::string& name) {
    fs::path dir = fs::temp_directory_path() / "rose_harness" / name;
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

run::RunConfig tiny_config(const fs::path& root) {
    run::RunConfig c;
    c.seed = 11;
    c.data.image_side = 48;
    c.data.max_things = 3;
    c.train_scenes = 10;
    c.val_scenes = 4;
    c.model.image_side = 48;
    c.model.dim = 32;
    c.model.dim_mask = 32;
    c.model.dim_sig = 16;
    c.model.vision_layers = 1;
    c.model.language_layers = 2;
    c.model.decoder_layers = 1;
    c.model.heads = 2;
    c.model.context_window = 192;
    c.optim.total_steps = 2;
    c.optim.batch_size = 2;
    c.optim.warmup_steps = 1;
    c.optim.checkpoint_every = 1;
    c.out_dir = (root / "run").string();
    c.data_dir = (root / "data").string();
    c.assets_dir = ROSELAB_SOURCE_DIR "/assets";
    c.validate();
    return c;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    REQUIRE(bool(in));
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

std::vector<double> csv_losses(const fs::path& p) {
    std::ifstream in(p);
    std::string line;
    std::vector<double> out;
    bool first = true;
    while (std::getline(in, line)) {
        if (first && line.rfind("step", 0) == 0) {
            first = false;
            continue;
        }
        first = false;
        const size_t comma = line.rfind(',');
        if (comma != std::string::npos) out.push_back(std::strtod(line.c_str() + comma + 1, nullptr));
    }
    return out;
}

std::ostream& null_stream() {
    static std::ofstream sink("/dev/null");
    return sink;
}

}  // namespace

TEST_CASE("run config: canonical text round-trips and drives the hash") {
    run::RunConfig c = tiny_config(fs::temp_directory_path());

    run::RunConfig back = run::parse_run_config(c.serialized());
    CHECK(back.canonical() == c.canonical());
    CHECK(back.hash() == c.hash());
    CHECK(back.out_dir == c.out_dir);
    CHECK(run::parse_run_config(c.canonical()).hash() == c.hash());

    run::RunConfig other = c;
    other.optim.lr = 1e-3;
    CHECK(other.hash() != c.hash());
    CHECK(other.data_hash() == c.data_hash());  // optimizer does not touch the data

    other = c;
    other.data.pixel_noise = 0.05;
    CHECK(other.data_hash() != c.data_hash());

    other = c;
    other.seed = 12;
    CHECK(other.hash() != c.hash());
    CHECK(other.data_hash() != c.data_hash());

    CHECK(c.hash_hex().size() == 16);
}

TEST_CASE("run config: bad input is rejected") {
    CHECK_THROWS_AS(run::parse_run_config("bogus_key: 1"), ConfigError);
    CHECK_THROWS_AS(run::parse_run_config("optim:\n  lr: -0.5"), ConfigError);
    CHECK_THROWS_AS(run::parse_run_config("optim:\n  lr: banana"), ConfigError);
    CHECK_THROWS_AS(run::parse_run_config("task_mix:\n  semantic: 0\n  instance: 0\n"
                                          "  referring: 0\n  refinement: 0"),
                    ConfigError);
    CHECK_THROWS_AS(run::parse_run_config("data:\n  image_side: 50"), ConfigError);  // bad grid
    // YAML that is not even parseable
    CHECK_THROWS_AS(run::parse_run_config("a: [unclosed"), ConfigError);
}

TEST_CASE("run config: ROSE_LAB_SEED overrides the file seed") {
    fs::path root = fresh_dir("env_seed");
    std::ofstream(root / "c.yaml") << "seed: 7\n";

    CHECK(run::load_run_config(root / "c.yaml").seed == 7);

    setenv("ROSE_LAB_SEED", "123", 1);
    CHECK(run::load_run_config(root / "c.yaml").seed == 123);

    setenv("ROSE_LAB_SEED", "12x", 1);
    CHECK_THROWS_AS(run::load_run_config(root / "c.yaml"), ConfigError);
    unsetenv("ROSE_LAB_SEED");
}

TEST_CASE("lr schedule: linear warmup then linear decay") {
    run::OptimizerConfig o;
    o.lr = 1e-3;
    o.warmup_steps = 10;
    o.total_steps = 100;
    CHECK(run::lr_at(o, 0) == doctest::Approx(1e-4));
    CHECK(run::lr_at(o, 9) == doctest::Approx(1e-3));
    CHECK(run::lr_at(o, 10) == doctest::Approx(1e-3));
    CHECK(run::lr_at(o, 55) == doctest::Approx(1e-3 * 0.5));
    CHECK(run::lr_at(o, 99) > 0.0);
    CHECK(run::lr_at(o, 99) < run::lr_at(o, 98));
}

TEST_CASE("gen-data artifacts: hash-checked splits") {
    fs::path root = fresh_dir("gen");
    run::RunConfig cfg = tiny_config(root);
    run::generate_splits(cfg);

    synth::DatasetSplit train = run::load_split_checked(cfg, "train");
    CHECK(train.size() == 10);
    CHECK(train.scenes[0].targets.size() > 0);
    synth::Image img = train.load_image(0);
    CHECK(img.rows() == 48 * 48);

    run::RunConfig other = cfg;
    other.data.pixel_noise = 0.5;
    CHECK_THROWS_AS(run::load_split_checked(other, "train"), ConfigError);
    CHECK_THROWS_AS(run::load_split_checked(cfg, "test"), ConfigError);  // no such split
}

TEST_CASE("training examples: every builder yields a finite loss") {
    fs::path root = fresh_dir("builders");
    run::RunConfig cfg = tiny_config(root);
    run::Session ses = run::make_session(cfg);
    synth::Scene scene = synth::generate_scene(cfg.data, 5);
    Rng rng(99);

    net::Model<float> model(cfg.model, ses.vocab, 1);

    auto check_example = [&](run::TrainExample ex) {
        ad::Tape<float> tape;
        model.bind(tape);
        const int loss = run::example_loss(model, tape, ses, scene.image, ex);
        const double v = tape.value(loss)(0, 0);
        CHECK(std::isfinite(v));
        CHECK(v > 0.0);
        tape.backward(loss);  // must not throw
    };

    run::TrainExample sem = run::build_semantic_example(ses, scene, rng);
    CHECK(sem.pairs.size() == sem.plan.positive.size());
    CHECK(sem.sup_targets.size() == scene.targets.size());
    check_example(sem);

    run::TrainExample ins = run::build_instance_example(ses, scene, rng);
    for (const auto& t : ins.sup_targets) CHECK(t.is_thing);
    check_example(ins);

    run::TrainExample ref = run::build_referring_example(ses, scene, rng);
    // every positive pair points at the single referred target
    for (size_t i = 1; i < ref.pairs.size(); ++i) CHECK(ref.pairs[i].second == ref.pairs[0].second);
    for (const auto& [patch, ti] : ref.pairs)
        for (int n : ref.plan.negative) CHECK(n != patch);
    check_example(ref);

    bool saw_channel = false;
    for (uint64_t s = 0; s < 8; ++s) {
        Rng r2(s);
        run::TrainExample fix = run::build_refinement_example(ses, scene, r2);
        saw_channel = saw_channel || fix.has_channel;
        CHECK(fix.sup_targets.size() == 1);
        if (s == 0) check_example(fix);
    }
    CHECK(saw_channel);

    run::TrainExample van = run::build_vanilla_example(ses, scene, rng);
    CHECK(van.seg_tokens.size() == van.seg_masks.size());
    CHECK(van.seg_masks.size() >= 1);
    for (int tok : van.seg_tokens)
        CHECK(van.layout.ids[static_cast<size_t>(tok)] == text::Vocab::kSeg);
    check_example(van);
}

TEST_CASE("train: two-step dry run leaves a loadable checkpoint and a loss log") {
    fs::path root = fresh_dir("dry_run");
    run::RunConfig cfg = tiny_config(root);
    run::generate_splits(cfg);

    run::TrainResult res = run::train_run(cfg, {}, true, null_stream());
    CHECK(res.steps_run == 2);
    CHECK(fs::exists(res.final_checkpoint));
    CHECK(fs::exists(fs::path(cfg.out_dir) / "ckpt_000001.ckpt"));

    net::Checkpoint ck = net::load_checkpoint(res.final_checkpoint, cfg.hash());
    CHECK(ck.step == 2);
    CHECK(ck.run_config == cfg.serialized());
    CHECK(ck.model->config().dim == 32);

    std::vector<double> losses = csv_losses(res.loss_csv);
    REQUIRE(losses.size() == 2);
    for (double v : losses) CHECK(std::isfinite(v));

    // resuming under a different config is rejected up front
    run::RunConfig other = cfg;
    other.optim.lr = 1e-3;
    CHECK_THROWS_AS(run::train_run(other, res.final_checkpoint, true, null_stream()), ConfigError);
}

TEST_CASE("train: vanilla arch runs the same trainer") {
    fs::path root = fresh_dir("vanilla_run");
    run::RunConfig cfg = tiny_config(root);
    run::generate_splits(cfg);

    cfg.model.arch = "vanilla";
    cfg.optim.total_steps = 1;
    cfg.out_dir = (root / "run_vanilla").string();
    run::TrainResult res = run::train_run(cfg, {}, true, null_stream());
    CHECK(fs::exists(res.final_checkpoint));
    CHECK(net::load_checkpoint(res.final_checkpoint, cfg.hash()).config.arch == "vanilla");
}

TEST_CASE("train: deterministic reruns are bitwise identical; resume reproduces the next loss") {
    fs::path root = fresh_dir("determinism");
    run::RunConfig cfg = tiny_config(root);
    cfg.optim.total_steps = 3;
    run::generate_splits(cfg);

    run::train_run(cfg, {}, true, null_stream());
    const std::string log_a = slurp(fs::path(cfg.out_dir) / "loss.csv");

    fs::remove_all(cfg.out_dir);
    run::train_run(cfg, {}, true, null_stream());
    const std::string log_b = slurp(fs::path(cfg.out_dir) / "loss.csv");
    CHECK(log_a == log_b);

    // fresh steps 0..2 vs resume-from-step-2: the step-2 loss must agree
    std::vector<double> fresh = csv_losses(fs::path(cfg.out_dir) / "loss.csv");
    REQUIRE(fresh.size() == 3);

    run::RunConfig resumed_cfg = cfg;
    resumed_cfg.out_dir = (root / "run_resumed").string();
    run::TrainResult resumed = run::train_run(
        resumed_cfg, fs::path(cfg.out_dir) / "ckpt_000002.ckpt", true, null_stream());
    std::vector<double> tail = csv_losses(resumed.loss_csv);
    REQUIRE(tail.size() == 1);
    CHECK(std::abs(tail[0] - fresh[2]) < 1e-5);
}

TEST_CASE("train: refuses to start without dataset manifests") {
    fs::path root = fresh_dir("no_data");
    run::RunConfig cfg = tiny_config(root);
    CHECK_THROWS_AS(run::train_run(cfg, {}, true, null_stream()), ConfigError);
}

namespace {

// Shared trained fixture for the evaluate/refine cases below.
struct Fixture {
    run::RunConfig cfg;
    run::Session ses;
    net::Checkpoint ck;
};

Fixture& fixture() {
    static Fixture* f = [] {
        fs::path root = fresh_dir("fixture");
        run::RunConfig cfg = tiny_config(root);
        run::generate_splits(cfg);
        run::TrainResult res = run::train_run(cfg, {}, true, null_stream());
        auto* out = new Fixture{cfg, run::make_session(cfg),
                                net::load_checkpoint(res.final_checkpoint, cfg.hash())};
        return out;
    }();
    return *f;
}

}  // namespace

TEST_CASE("evaluate: unknown task names the valid ones") {
    Fixture& f = fixture();
    try {
        run::evaluate_run(*f.ck.model, f.ses, "val", "panoptic", f.cfg.out_dir);
        FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("semantic") != std::string::npos);
        CHECK(msg.find("instance") != std::string::npos);
        CHECK(msg.find("referring") != std::string::npos);
    }
}

TEST_CASE("evaluate: all three tasks write schema-valid reports and parseable dumps") {
    Fixture& f = fixture();
    const int side = f.cfg.model.image_side;
    for (const std::string task : {"semantic", "instance", "referring"}) {
        run::EvalResult res = run::evaluate_run(*f.ck.model, f.ses, "val", task, f.cfg.out_dir);
        CHECK(fs::exists(res.report_path));
        CHECK(fs::exists(res.dump_path));
        CHECK(res.report.at("task") == task);
        CHECK(res.report.at("config_hash") == f.cfg.hash_hex());
        CHECK(res.report.at("sample_count").get<long>() > 0);
        CHECK(res.report.at("metrics").is_object());

        std::ifstream dump(res.dump_path);
        std::string line;
        REQUIRE(std::getline(dump, line));
        json header = json::parse(line);
        CHECK(header.at("type") == "rose-prediction-dump");
        CHECK(header.at("config_hash") == f.cfg.hash_hex());
        long records = 0;
        while (std::getline(dump, line)) {
            json rec = json::parse(line);
            const int scene = rec.at("scene").get<int>();
            CHECK(scene >= 0);
            CHECK(scene < f.cfg.val_scenes);
            Mask m = rle_decode(rec.at("rle").get<std::vector<int64_t>>(), side, side);
            CHECK(static_cast<int>(m.data.size()) == side * side);
            if (task == "referring") CHECK(rec.contains("ref_target"));
            ++records;
        }
        if (task == "semantic") CHECK(records == f.cfg.val_scenes * f.cfg.infer.top_n);
    }
}

TEST_CASE("evaluate: reports and dumps are deterministic") {
    Fixture& f = fixture();
    run::EvalResult a = run::evaluate_run(*f.ck.model, f.ses, "val", "semantic", f.cfg.out_dir);
    const std::string dump_a = slurp(a.dump_path);
    run::EvalResult b = run::evaluate_run(*f.ck.model, f.ses, "val", "semantic", f.cfg.out_dir);
    CHECK(a.report == b.report);
    CHECK(dump_a == slurp(b.dump_path));
}

TEST_CASE("evaluate: an empty split reports sample_count 0 and null metrics") {
    fs::path root = fresh_dir("empty_split");
    run::RunConfig cfg = tiny_config(root);
    cfg.val_scenes = 0;
    run::generate_splits(cfg);
    run::Session ses = run::make_session(cfg);
    net::Model<float> model(cfg.model, ses.vocab, 3);

    run::EvalResult res = run::evaluate_run(model, ses, "val", "semantic", cfg.out_dir);
    CHECK(res.report.at("sample_count").get<long>() == 0);
    CHECK(res.report.at("metrics").is_null());
}

TEST_CASE("evaluate: overlays are written when requested") {
    Fixture& f = fixture();
    fs::path ovl = fresh_dir("overlays");
    run::evaluate_run(*f.ck.model, f.ses, "val", "instance", f.cfg.out_dir, ovl);
    CHECK(fs::exists(ovl / "overlay_0000.png"));
    // PNG signature
    const std::string bytes = slurp(ovl / "overlay_0000.png");
    REQUIRE(bytes.size() > 8);
    CHECK(static_cast<unsigned char>(bytes[0]) == 0x89);
    CHECK(bytes.substr(1, 3) == "PNG");
}

TEST_CASE("report schema: tampered reports are rejected") {
    Fixture& f = fixture();
    const fs::path schema = fs::path(f.cfg.assets_dir) / "report_schema.json";
    json good{{"type", "rose-eval-report"}, {"schema_version", 1},
              {"config_hash", "00"},        {"split", "val"},
              {"task", "semantic"},         {"sample_count", 1},
              {"metrics", json::object()}};
    CHECK_NOTHROW(run::validate_report(good, schema));

    json bad = good;
    bad.erase("split");
    CHECK_THROWS_AS(run::validate_report(bad, schema), ConfigError);

    bad = good;
    bad["sample_count"] = "three";
    CHECK_THROWS_AS(run::validate_report(bad, schema), ConfigError);

    bad = good;
    bad["schema_version"] = 999;
    CHECK_THROWS_AS(run::validate_report(bad, schema), ConfigError);

    bad = good;
    bad["metrics"] = 7;
    CHECK_THROWS_AS(run::validate_report(bad, schema), ConfigError);
}

namespace {

// Writes a prediction dump whose records are exact ground truth.
fs::path write_perfect_semantic_dump(const Fixture& f, const synth::DatasetSplit& split,
                                     const fs::path& dir) {
    const fs::path path = dir / "perfect_dump.jsonl";
    std::ofstream out(path, std::ios::trunc);
    out << json{{"type", "rose-prediction-dump"},
                {"schema_version", 1},
                {"config_hash", f.cfg.hash_hex()},
                {"split", "val"},
                {"task", "semantic"}}
               .dump()
        << "\n";
    const std::vector<std::string> classes = f.cfg.data.all_categories();
    for (size_t i = 0; i < split.size(); ++i) {
        const synth::Scene& scene = split.scenes[i];
        for (size_t c = 0; c < classes.size(); ++c) {
            Mask u(f.cfg.model.image_side, f.cfg.model.image_side);
            bool present = false;
            for (const auto& t : scene.targets)
                if (t.category_id == static_cast<int>(c)) {
                    present = true;
                    for (size_t k = 0; k < u.data.size(); ++k) u.data[k] |= t.mask.data[k];
                }
            if (!present) continue;
            json runs = json::array();
            for (int64_t r : rle_encode(u)) runs.push_back(r);
            out << json{{"scene", i},           {"scene_seed", scene.seed},
                        {"patch", 0},           {"score", 0.99},
                        {"category", classes[c]}, {"side", u.h},
                        {"rle", runs}}
                       .dump()
                << "\n";
        }
    }
    return path;
}

}  // namespace

TEST_CASE("refine: a perfect dump is a no-op and mismatched dumps are rejected") {
    Fixture& f = fixture();
    fs::path dir = fresh_dir("refine_noop");
    synth::DatasetSplit split = run::load_split_checked(f.cfg, "val");
    fs::path dump = write_perfect_semantic_dump(f, split, dir);

    run::RefineResult res = run::refine_run(*f.ck.model, f.ses, dump, "val", dir);
    CHECK(res.records.empty());

    // output records equal input records
    std::istringstream in_lines(slurp(dump)), out_lines(slurp(res.dump_path));
    std::string a, b;
    std::getline(in_lines, a);
    std::getline(out_lines, b);  // headers
    long compared = 0;
    while (std::getline(in_lines, a)) {
        REQUIRE(std::getline(out_lines, b));
        CHECK(json::parse(a) == json::parse(b));
        ++compared;
    }
    CHECK(!std::getline(out_lines, b));
    CHECK(compared > 0);

    // wrong split
    CHECK_THROWS_AS(run::refine_run(*f.ck.model, f.ses, dump, "train", dir), ConfigError);

    // tampered config hash
    std::string text = slurp(dump);
    const std::string hash = f.cfg.hash_hex();
    text.replace(text.find(hash), hash.size(), std::string(16, '0'));
    std::ofstream(dir / "bad_hash.jsonl", std::ios::trunc) << text;
    CHECK_THROWS_AS(run::refine_run(*f.ck.model, f.ses, dir / "bad_hash.jsonl", "val", dir),
                    ConfigError);

    // tampered scene seed
    std::string text2 = slurp(dump);
    const std::string seed_str = std::to_string(split.scenes[0].seed);
    text2.replace(text2.find(seed_str), seed_str.size(), "1");
    std::ofstream(dir / "bad_seed.jsonl", std::ios::trunc) << text2;
    CHECK_THROWS_AS(run::refine_run(*f.ck.model, f.ses, dir / "bad_seed.jsonl", "val", dir),
                    ConfigError);
}

TEST_CASE("refine: imperfect dumps produce capped, logged episodes") {
    Fixture& f = fixture();
    fs::path dir = fresh_dir("refine_real");

    for (const std::string task : {"semantic", "instance", "referring"}) {
        run::EvalResult ev = run::evaluate_run(*f.ck.model, f.ses, "val", task, f.cfg.out_dir);
        run::RefineResult res = run::refine_run(*f.ck.model, f.ses, ev.dump_path, "val", dir);
        CHECK(fs::exists(res.report_path));
        CHECK(fs::exists(res.dump_path));

        std::map<int, int> per_scene;
        for (const auto& ep : res.records) per_scene[ep.scene_index]++;
        for (const auto& [scene, count] : per_scene) {
            if (task == "semantic") CHECK(count <= 5);
            if (task == "instance") CHECK(count <= 10);
        }

        // report lines parse and carry the required fields
        std::ifstream rep(res.report_path);
        std::string line;
        REQUIRE(std::getline(rep, line));
        CHECK(json::parse(line).at("type") == "rose-refinement-report");
        while (std::getline(rep, line)) {
            json ep = json::parse(line);
            for (const char* key : {"scene_id", "situation", "iou_before", "iou_after",
                                    "category_before", "category_after"})
                CHECK(ep.contains(key));
        }
    }
}
