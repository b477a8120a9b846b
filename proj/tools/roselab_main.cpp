#include <iostream>

#include "CLI11.hpp"
#include "rose/evaluator.hpp"
#include "rose/refiner.hpp"
#include "rose/trainer.hpp"

namespace {

namespace fs = std::filesystem;
using namespace rose;

// Rebuilds the session a checkpoint was trained under from its embedded
// run config, cross-checking the hash and the assets-derived vocabulary.
run::Session session_for_checkpoint(const net::Checkpoint& ck) {
    if (ck.run_config.empty())
        throw ConfigError("checkpoint has no embedded run config; re-train with this build");
    run::RunConfig cfg = run::parse_run_config(ck.run_config);
    if (cfg.hash() != ck.config_hash)
        throw ConfigError("checkpoint config hash does not match its embedded run config");
    run::Session ses = run::make_session(cfg);
    if (ck.vocab.words != ses.vocab.words)
        throw ConfigError("checkpoint vocabulary does not match the current assets");
    return ses;
}

int cmd_gen_data(const std::string& config_path, const std::string& out_dir) {
    run::RunConfig cfg = run::load_run_config(config_path);
    cfg.data_dir = out_dir;
    run::generate_splits(cfg);
    std::cout << "wrote " << cfg.train_scenes << " train + " << cfg.val_scenes
              << " val scenes to " << out_dir << "\n"
              << "data hash " << cfg.data_hash_hex() << "\n";
    return 0;
}

int cmd_train(const std::string& config_path, const std::string& resume, bool deterministic) {
    run::RunConfig cfg = run::load_run_config(config_path);
    run::TrainResult res = run::train_run(cfg, resume, deterministic, std::cout);
    std::cout << "final checkpoint: " << res.final_checkpoint.string() << "\n"
              << "loss log: " << res.loss_csv.string() << "\n"
              << "loss window means: steps 41-60 " << res.early_window_loss << ", last 20 "
              << res.final_window_loss << "\n";
    return 0;
}

int cmd_evaluate(const std::string& ckpt_path, const std::string& split, const std::string& task,
                 const std::string& overlays) {
    net::Checkpoint ck = net::load_checkpoint(ckpt_path);
    run::Session ses = session_for_checkpoint(ck);
    const fs::path out_dir = fs::path(ckpt_path).parent_path();
    run::EvalResult res = run::evaluate_run(*ck.model, ses, split, task, out_dir,
                                            overlays.empty() ? fs::path() : fs::path(overlays));
    std::cout << res.report.dump(2) << "\n"
              << "report: " << res.report_path.string() << "\n"
              << "dump: " << res.dump_path.string() << "\n";
    return 0;
}

int cmd_refine(const std::string& ckpt_path, const std::string& dump, const std::string& split) {
    net::Checkpoint ck = net::load_checkpoint(ckpt_path);
    run::Session ses = session_for_checkpoint(ck);
    const fs::path out_dir = fs::path(ckpt_path).parent_path();
    run::RefineResult res = run::refine_run(*ck.model, ses, dump, split, out_dir);

    double before = 0.0, after = 0.0;
    for (const auto& ep : res.records) {
        before += ep.iou_before;
        after += ep.iou_after;
    }
    const double n = res.records.empty() ? 1.0 : static_cast<double>(res.records.size());
    std::cout << "refined " << res.records.size() << " predictions (task " << res.task << ")\n"
              << "mean IoU before " << before / n << ", after " << after / n << "\n"
              << "report: " << res.report_path.string() << "\n"
              << "refined dump: " << res.dump_path.string() << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"rose-lab: patch-wise open-set dense segmentation on synthetic scenes"};
    app.require_subcommand(1);

    std::string config_path, ckpt_path, dump_path, split, task, overlays, resume, out_dir;
    bool deterministic = false;

    auto* gen = app.add_subcommand("gen-data", "Generate train/val split manifests");
    gen->add_option("--config", config_path, "run config YAML")->required();
    gen->add_option("--out", out_dir, "directory for manifests and images")->required();

    auto* train = app.add_subcommand("train", "Train a model from a run config");
    train->add_option("--config", config_path, "run config YAML")->required();
    train->add_option("--resume", resume, "checkpoint to resume from");
    train->add_flag("--deterministic", deterministic, "bitwise-reproducible loss log");

    auto* evaluate = app.add_subcommand("evaluate", "Evaluate a checkpoint on a split");
    evaluate->add_option("--ckpt", ckpt_path, "checkpoint file")->required();
    evaluate->add_option("--split", split, "split name, e.g. val")->required();
    evaluate->add_option("--task", task, "semantic | instance | referring")->required();
    evaluate->add_option("--overlays", overlays, "directory for PNG overlays");

    auto* refine = app.add_subcommand("refine", "Refine a prediction dump conversationally");
    refine->add_option("--ckpt", ckpt_path, "checkpoint file")->required();
    refine->add_option("--dump", dump_path, "prediction dump from evaluate")->required();
    refine->add_option("--split", split, "split the dump was produced from")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (gen->parsed()) return cmd_gen_data(config_path, out_dir);
        if (train->parsed()) return cmd_train(config_path, resume, deterministic);
        if (evaluate->parsed()) return cmd_evaluate(ckpt_path, split, task, overlays);
        if (refine->parsed()) return cmd_refine(ckpt_path, dump_path, split);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
