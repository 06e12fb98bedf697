#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "ivfuse/data/synthetic.hpp"
#include "ivfuse/metrics/metrics.hpp"
#include "ivfuse/train/trainer.hpp"

namespace fs = std::filesystem;
using namespace ivfuse;

namespace {

// Manifest arguments name the split directory: <root>/<split>.
std::pair<std::string, std::string> split_manifest_path(std::string path) {
    while (!path.empty() && (path.back() == '/' || path.back() == '\\')) path.pop_back();
    fs::path p(path);
    if (p.filename().empty() || p.parent_path().empty())
        throw ValidationError("manifest path must look like <root>/<split>: " + path);
    return {p.parent_path().string(), p.filename().string()};
}

// IVFUSE_OUT_DIR overrides any --out argument.
std::string resolve_out_dir(const std::string& cli_out) {
    const char* env = std::getenv("IVFUSE_OUT_DIR");
    return env && *env ? std::string(env) : cli_out;
}

train::TrainConfig config_from_checkpoint(const std::string& path) {
    Archive ar = Archive::load(path);
    train::TrainConfig cfg;
    train::Trainer<float>::net_config_from_json(ar.meta.at("net"), cfg);
    return cfg;
}

int cmd_fuse(const std::string& ckpt, const std::string& ir_path, const std::string& vis_path,
             const std::string& out_path, bool gray) {
    auto cfg = config_from_checkpoint(ckpt);
    train::Trainer<float> trainer(cfg, Rng(0));
    trainer.load_checkpoint(ckpt);

    data::ImagePair pair = data::load_pair(ir_path, vis_path);
    if (fs::path(out_path).has_parent_path())
        fs::create_directories(fs::path(out_path).parent_path());
    data::Plane fused_y = trainer.fuse_pair(pair);
    if (gray) {
        data::write_png(out_path, data::raw_from_plane(fused_y));
    } else {
        data::Plane y;
        data::Chroma cbcr;
        data::rgb_to_ycbcr(pair.visible, y, cbcr);
        data::ColorImage fused = data::reattach_color(fused_y, cbcr);
        data::write_png(out_path, data::raw_from_color(fused));
    }
    std::cout << "fused " << pair.id << " -> " << out_path << "\n";
    return 0;
}

int cmd_train(const std::string& manifest_path, const std::string& config_path,
              const std::string& out_arg, const std::string& resume) {
    auto [root, split] = split_manifest_path(manifest_path);
    auto manifest = data::scan_manifest(root, split, true);
    train::TrainConfig cfg =
        config_path.empty() ? train::TrainConfig{} : train::parse_config_file(config_path);
    std::string out_dir = resolve_out_dir(out_arg);
    auto result = train::run_training<float>(manifest, cfg, out_dir, resume, &std::cout);
    std::cout << "final epoch mean loss " << result.final_epoch_loss << "\n"
              << "best checkpoint: " << result.best_checkpoint << "\n"
              << "loss log: " << result.log_path << "\n";
    return 0;
}

int cmd_evaluate(const std::string& fused_dir, const std::string& manifest_path,
                 const std::string& out_csv, const std::string& dataset,
                 const std::string& method) {
    auto [root, split] = split_manifest_path(manifest_path);
    auto manifest = data::scan_manifest(root, split, false);
    auto report = metrics::evaluate_directory(fused_dir, manifest,
                                              dataset.empty() ? split : dataset, method);
    if (!out_csv.empty()) {
        if (fs::path(out_csv).has_parent_path())
            fs::create_directories(fs::path(out_csv).parent_path());
        std::ofstream f(out_csv);
        if (!f) throw IoError("cannot write " + out_csv);
        f << report.to_csv();
    }
    std::cout << report.to_table();
    return 0;
}

int cmd_ablate(const std::string& manifest_path, const std::string& config_path,
               const std::string& out_arg) {
    auto [root, split] = split_manifest_path(manifest_path);
    auto manifest = data::scan_manifest(root, split, true);
    train::TrainConfig cfg =
        config_path.empty() ? train::TrainConfig{} : train::parse_config_file(config_path);
    std::string out_dir = resolve_out_dir(out_arg);
    auto result = train::run_ablation<float>(manifest, cfg, out_dir, &std::cout);
    std::cout << result.table;
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"infrared/visible image fusion: train, fuse, evaluate, ablate"};
    app.require_subcommand(1);

    auto* mk = app.add_subcommand("make-data", "write a synthetic paired dataset");
    std::string mk_out = "toy_data", mk_split = "train";
    data::SyntheticSpec mk_spec;
    int mk_size = 32;
    mk->add_option("--out", mk_out, "dataset root directory");
    mk->add_option("--split", mk_split, "split name");
    mk->add_option("--pairs", mk_spec.pairs, "number of pairs");
    mk->add_option("--size", mk_size, "image side length");
    mk->add_option("--classes", mk_spec.classes, "class count incl. background");
    mk->add_option("--seed", mk_spec.seed, "generator seed");

    auto* tr = app.add_subcommand("train", "train the fusion network on a manifest");
    std::string tr_manifest, tr_config, tr_out = "train_out", tr_resume;
    tr->add_option("--manifest", tr_manifest, "dataset split dir: <root>/<split>")->required();
    tr->add_option("--config", tr_config, "key = value config file");
    tr->add_option("--out", tr_out, "output directory (IVFUSE_OUT_DIR overrides)");
    tr->add_option("--resume", tr_resume, "checkpoint to resume from");

    auto* fu = app.add_subcommand("fuse", "fuse one infrared/visible pair");
    std::string fu_ckpt, fu_ir, fu_vis, fu_out = "fused.png";
    bool fu_gray = false;
    fu->add_option("--ckpt", fu_ckpt, "trained checkpoint")->required();
    fu->add_option("--ir", fu_ir, "infrared image")->required();
    fu->add_option("--vis", fu_vis, "visible image")->required();
    fu->add_option("--out", fu_out, "output image path");
    fu->add_flag("--gray", fu_gray, "write fused luminance instead of re-colored output");

    auto* ev = app.add_subcommand("evaluate", "run the metric suite over fused outputs");
    std::string ev_dir, ev_manifest, ev_csv, ev_dataset, ev_method = "ours";
    ev->add_option("--fused-dir", ev_dir, "directory of fused images")->required();
    ev->add_option("--manifest", ev_manifest, "dataset split dir: <root>/<split>")->required();
    ev->add_option("--out-csv", ev_csv, "per-image metrics CSV path");
    ev->add_option("--dataset", ev_dataset, "dataset name for the report");
    ev->add_option("--method", ev_method, "method name for the report");

    auto* ab = app.add_subcommand("ablate", "train and evaluate the five ablation variants");
    std::string ab_manifest, ab_config, ab_out = "ablation_out";
    ab->add_option("--manifest", ab_manifest, "dataset split dir: <root>/<split>")->required();
    ab->add_option("--config", ab_config, "key = value config file");
    ab->add_option("--out", ab_out, "output directory (IVFUSE_OUT_DIR overrides)");

    CLI11_PARSE(app, argc, argv);

    try {
        if (mk->parsed()) {
            mk_spec.height = mk_spec.width = mk_size;
            data::write_synthetic_dataset(mk_out, mk_split, mk_spec);
            std::cout << "wrote " << mk_spec.pairs << " pairs under " << mk_out << "/"
                      << mk_split << "\n";
            return 0;
        }
        if (tr->parsed()) return cmd_train(tr_manifest, tr_config, tr_out, tr_resume);
        if (fu->parsed()) return cmd_fuse(fu_ckpt, fu_ir, fu_vis, fu_out, fu_gray);
        if (ev->parsed()) return cmd_evaluate(ev_dir, ev_manifest, ev_csv, ev_dataset, ev_method);
        if (ab->parsed()) return cmd_ablate(ab_manifest, ab_config, ab_out);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
