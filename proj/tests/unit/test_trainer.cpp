#include <doctest.h>

#include "ivfuse/data/synthetic.hpp"
#include "ivfuse/train/trainer.hpp"

#include <filesystem>
#include <fstream>

using namespace ivfuse;
using namespace ivfuse::train;
namespace fs = std::filesystem;

namespace {

TrainConfig tiny_config() {
    TrainConfig cfg;
    cfg.epochs = 2;
    cfg.batch_size = 2;
    cfg.lr = 1e-3;
    cfg.seed = 5;
    cfg.head_warmup_steps = 2;
    cfg.class_count = 3;
    cfg.head_channels = 4;
    cfg.net.channels = 8;
    cfg.net.blocks = 1;
    cfg.net.radix = 2;
    cfg.net.reduction = 2;
    cfg.net.nat_window = 3;
    cfg.net.nat_heads = 2;
    cfg.net.sa_hidden = 4;
    cfg.loss.ssim_window = 5;
    return cfg;
}

struct TempTree {
    fs::path root;
    explicit TempTree(const std::string& tag) {
        root = fs::temp_directory_path() / ("ivfuse_train_" + tag);
        fs::remove_all(root);
        fs::create_directories(root);
    }
    ~TempTree() { fs::remove_all(root); }
};

std::vector<Batch<float>> toy_batches(int pairs, int size, int batch, std::uint64_t seed) {
    data::SyntheticSpec spec;
    spec.pairs = pairs;
    spec.height = spec.width = size;
    spec.seed = seed;
    std::vector<Batch<float>> batches;
    std::vector<data::ImagePair> ps;
    std::vector<data::AnnotationSet> as;
    for (int i = 0; i < pairs; ++i) {
        data::AnnotationSet ann;
        ps.push_back(data::synthetic_pair(i, spec, &ann));
        as.push_back(ann);
        if (static_cast<int>(ps.size()) == batch) {
            batches.push_back(assemble_batch<float>(ps, as));
            ps.clear();
            as.clear();
        }
    }
    if (!ps.empty()) batches.push_back(assemble_batch<float>(ps, as));
    return batches;
}

}  // namespace

TEST_SUITE_BEGIN("trainer");

TEST_CASE("plateau schedule follows the stated rule") {
    auto run = [](std::vector<double> losses) {
        ScheduleState st;
        st.lr = 1e-3;
        for (double l : losses) lr_schedule(st, l, 0.1, 3, 1e-4);
        return st.lr;
    };
    CHECK(run({1.0, 0.9, 0.8}) == doctest::Approx(1e-3));
    CHECK(run({1.0, 1.0, 1.0, 1.0}) == doctest::Approx(1e-4));
    CHECK(run({1.0, 1.1, 0.9, 1.1, 1.1}) == doctest::Approx(1e-3));
    // decay, then the counter restarts
    CHECK(run({1.0, 1.0, 1.0, 1.0, 1.0, 1.0}) == doctest::Approx(1e-4));
    CHECK(run({1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0}) == doctest::Approx(1e-5));
}

TEST_CASE("config validation rejects bad values") {
    TrainConfig cfg = tiny_config();
    cfg.epochs = 0;
    CHECK_THROWS_AS(cfg.validate(), ValidationError);
    cfg = tiny_config();
    cfg.plateau_factor = 1.5;
    CHECK_THROWS_AS(cfg.validate(), ValidationError);
    cfg = tiny_config();
    cfg.lr = -1;
    CHECK_THROWS_AS(cfg.validate(), ValidationError);
}

TEST_CASE("config file parsing") {
    auto cfg = parse_config_text(
        "epochs = 7\nbatch_size = 1\nlr = 0.01   # comment\nuse_dsm = false\n"
        "nat_window = 5\nalpha2 = 3.5\nseed = 42\n");
    CHECK(cfg.epochs == 7);
    CHECK(cfg.batch_size == 1);
    CHECK(cfg.lr == 0.01);
    CHECK_FALSE(cfg.net.use_dsm);
    CHECK(cfg.net.nat_window == 5);
    CHECK(cfg.loss.alpha2 == 3.5);
    CHECK(cfg.seed == 42);
    auto ext = parse_config_text(
        "head_backend = external\nexternal_det_cmd = ./det.sh\nexternal_seg_cmd = ./seg.sh\n");
    CHECK(ext.head_backend == "external");
    CHECK(ext.external_det_cmd == "./det.sh");
    CHECK_THROWS_AS((void)parse_config_text("bogus_key = 1\n"), ConfigError);
    CHECK_THROWS_AS((void)parse_config_text("epochs 7\n"), ConfigError);
    CHECK_THROWS_AS((void)parse_config_text("epochs = x\n"), ConfigError);
}

TEST_CASE("isolated mff on a perfectly reconstructed constant input") {
    TrainConfig cfg = tiny_config();
    cfg.use_det_loss = false;
    cfg.use_seg_loss = false;
    cfg.head_warmup_steps = 0;
    Trainer<double> trainer(cfg, Rng(cfg.seed));
    // zero final projection: the decoder emits exactly sigmoid(0) = 0.5
    trainer.net().decoder.proj.w->value.array().setZero();
    trainer.net().decoder.proj.b->value.array().setZero();

    Tensor<double> half = Tensor<double>::constant(Shape::nchw(2, 1, 16, 16), 0.5);
    Batch<double> batch;
    batch.ids = {"c0", "c1"};
    batch.ir = ad::make_const(half);
    batch.vis_y = ad::make_const(half);
    batch.anns.resize(2);
    for (auto& a : batch.anns) a.mask = data::Mask::Zero(16, 16);

    trainer.warm_up({});
    auto bd = trainer.train_step(batch);
    CHECK(std::abs(bd.ssim) < 1e-12);
    CHECK(std::abs(bd.mse_ir) < 1e-12);
    CHECK(std::abs(bd.mse_vis) < 1e-12);
    CHECK(std::abs(bd.det) < 1e-15);
    CHECK(std::abs(bd.seg) < 1e-15);
    CHECK(std::abs(bd.mff - cfg.loss.alpha1 * bd.div) < 1e-12);
}

TEST_CASE("head freeze invariants across training steps") {
    TrainConfig cfg = tiny_config();
    cfg.head_warmup_steps = 2;
    Trainer<float> trainer(cfg, Rng(cfg.seed));
    auto batches = toy_batches(2, 16, 2, 7);

    // warm-up must move head weights (unfrozen step changes them)
    std::vector<Tensor<float>> before;
    for (auto& [name, v] : trainer.head_params().items) before.push_back(v->value);
    trainer.warm_up(batches);
    bool any_changed = false;
    for (std::size_t i = 0; i < before.size(); ++i)
        if ((trainer.head_params().items[i].second->value.array() != before[i].array()).any())
            any_changed = true;
    CHECK(any_changed);

    // after freeze: zero gradient into heads, weights bitwise stable
    std::vector<Tensor<float>> frozen;
    for (auto& [name, v] : trainer.head_params().items) frozen.push_back(v->value);
    for (int s = 0; s < 3; ++s) trainer.train_step(batches[0]);
    for (std::size_t i = 0; i < frozen.size(); ++i) {
        auto& v = trainer.head_params().items[i].second;
        CHECK((v->value.array() == frozen[i].array()).all());
        CHECK((!v->grad_ready || (v->grad.array() == 0.0f).all()));
    }
}

TEST_CASE("train_step before warm-up is rejected") {
    TrainConfig cfg = tiny_config();
    Trainer<float> trainer(cfg, Rng(1));
    auto batches = toy_batches(2, 16, 2, 8);
    CHECK_THROWS_AS((void)trainer.train_step(batches[0]), TrainingError);
}

TEST_CASE("loss breakdown identities hold at every logged step") {
    TempTree tmp("identities");
    data::SyntheticSpec spec;
    spec.pairs = 2;
    spec.height = spec.width = 16;
    spec.seed = 11;
    data::write_synthetic_dataset(tmp.root.string(), "train", spec);
    auto manifest = data::scan_manifest(tmp.root.string(), "train", true);

    TrainConfig cfg = tiny_config();
    cfg.epochs = 3;
    auto result = run_training<float>(manifest, cfg, (tmp.root / "out").string());
    CHECK(result.log_rows.size() == 3);  // one batch of 2 pairs, 3 epochs

    double prev_lr = std::numeric_limits<double>::infinity();
    for (const auto& row : result.log_rows) {
        std::istringstream is(row);
        std::string field;
        std::vector<double> vals;
        while (std::getline(is, field, ',')) vals.push_back(std::stod(field));
        REQUIRE(vals.size() == 14);  // step, epoch, lr + 11 breakdown fields
        double lr = vals[2], ssim = vals[3], div = vals[4], mse_ir = vals[5], mse_vis = vals[6];
        double mff = vals[7], det_i = vals[8], det_v = vals[9], det_f = vals[10];
        double det = vals[11], seg = vals[12], total = vals[13];
        CHECK(lr <= prev_lr);
        prev_lr = lr;
        double mff_expect = cfg.loss.alpha1 * div + ssim + cfg.loss.alpha2 * mse_ir +
                            cfg.loss.alpha3 * mse_vis;
        CHECK(std::abs(mff - mff_expect) <= 1e-9 * std::max(1.0, std::abs(mff_expect)));
        CHECK(std::abs(det - (det_i + det_v + det_f)) <= 1e-9 * std::max(1.0, std::abs(det)));
        double total_expect = mff + det + seg;
        CHECK(std::abs(total - total_expect) <= 1e-9 * std::max(1.0, std::abs(total_expect)));
    }
}

TEST_CASE("seeded runs are bit-identical") {
    TempTree tmp("determinism");
    data::SyntheticSpec spec;
    spec.pairs = 2;
    spec.height = spec.width = 16;
    spec.seed = 12;
    data::write_synthetic_dataset(tmp.root.string(), "train", spec);
    auto manifest = data::scan_manifest(tmp.root.string(), "train", true);
    TrainConfig cfg = tiny_config();
    cfg.epochs = 2;
    auto a = run_training<float>(manifest, cfg, (tmp.root / "a").string());
    auto b = run_training<float>(manifest, cfg, (tmp.root / "b").string());
    REQUIRE(a.log_rows.size() == b.log_rows.size());
    for (std::size_t i = 0; i < a.log_rows.size(); ++i) CHECK(a.log_rows[i] == b.log_rows[i]);
}

TEST_CASE("interrupted run resumes into the identical loss stream") {
    TempTree tmp("resume");
    data::SyntheticSpec spec;
    spec.pairs = 2;
    spec.height = spec.width = 16;
    spec.seed = 13;
    data::write_synthetic_dataset(tmp.root.string(), "train", spec);
    auto manifest = data::scan_manifest(tmp.root.string(), "train", true);

    TrainConfig cfg = tiny_config();
    cfg.epochs = 4;
    auto full = run_training<float>(manifest, cfg, (tmp.root / "full").string());

    TrainConfig cfg2 = cfg;
    cfg2.epochs = 2;
    auto part = run_training<float>(manifest, cfg2, (tmp.root / "part").string());
    auto resumed = run_training<float>(manifest, cfg, (tmp.root / "part").string(),
                                       part.last_checkpoint);
    REQUIRE(full.log_rows.size() == part.log_rows.size() + resumed.log_rows.size());
    for (std::size_t i = 0; i < part.log_rows.size(); ++i)
        CHECK(full.log_rows[i] == part.log_rows[i]);
    for (std::size_t i = 0; i < resumed.log_rows.size(); ++i)
        CHECK(full.log_rows[part.log_rows.size() + i] == resumed.log_rows[i]);
}

TEST_CASE("checkpoint round trip reproduces the fused output bitwise") {
    TempTree tmp("ckpt");
    auto batches = toy_batches(2, 16, 2, 14);
    TrainConfig cfg = tiny_config();
    Trainer<float> trainer(cfg, Rng(cfg.seed));
    trainer.warm_up(batches);
    trainer.train_step(batches[0]);
    std::string path = (tmp.root / "t.ckpt").string();
    trainer.save_checkpoint(path);

    data::SyntheticSpec spec;
    spec.pairs = 1;
    spec.height = spec.width = 16;
    spec.seed = 14;
    auto pair = data::synthetic_pair(0, spec, nullptr);
    data::Plane fused_a = trainer.fuse_pair(pair);

    Trainer<float> loaded(cfg, Rng(999));  // different init, then overwritten
    loaded.load_checkpoint(path);
    data::Plane fused_b = loaded.fuse_pair(pair);
    CHECK((fused_a == fused_b).all());
}

TEST_CASE("run_training validates inputs") {
    TempTree tmp("validate");
    data::DatasetManifest empty;
    TrainConfig cfg = tiny_config();
    CHECK_THROWS_AS((void)run_training<float>(empty, cfg, (tmp.root / "o").string()),
                    ValidationError);
    cfg.epochs = 0;
    CHECK_THROWS_AS((void)run_training<float>(empty, cfg, (tmp.root / "o").string()),
                    ValidationError);
}

TEST_CASE("dsm ablation routes around the gate with zero gradient") {
    TrainConfig cfg = tiny_config();
    cfg.net.use_dsm = false;
    cfg.head_warmup_steps = 0;
    Trainer<float> trainer(cfg, Rng(3));
    auto batches = toy_batches(2, 16, 2, 15);
    trainer.warm_up(batches);
    trainer.train_step(batches[0]);
    for (auto& [name, v] : trainer.fusion_params().items) {
        if (name.find("/dsm/") == std::string::npos) continue;
        CHECK((!v->grad_ready || (v->grad.array() == 0.0f).all()));
    }
}

TEST_CASE("external head backend feeds constant loss terms") {
    TempTree tmp("external");
    fs::path script = tmp.root / "echo_head.sh";
    {
        std::ofstream f(script);
        f << "#!/bin/sh\ncp \"$2\" \"$3\"\n";
    }
    fs::permissions(script, fs::perms::owner_all | fs::perms::group_read |
                                fs::perms::others_read);

    TrainConfig cfg = tiny_config();
    cfg.head_backend = "external";
    cfg.external_det_cmd = script.string();
    cfg.external_seg_cmd = script.string();
    cfg.external_workdir = (tmp.root / "scratch").string();
    Trainer<float> trainer(cfg, Rng(cfg.seed));
    auto batches = toy_batches(2, 16, 2, 17);
    trainer.warm_up(batches);
    auto bd = trainer.train_step(batches[0]);
    // the echo head predicts the ground truth exactly
    CHECK(bd.det == 0.0);
    CHECK(bd.seg == 0.0);
    CHECK(bd.mff > 0.0);
    CHECK(std::abs(bd.total - bd.mff) < 1e-15);

    TrainConfig bad = cfg;
    bad.external_seg_cmd.clear();
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    TrainConfig bogus = cfg;
    bogus.head_backend = "remote";
    CHECK_THROWS_AS(bogus.validate(), ConfigError);
}

TEST_CASE("five ablation variants emit five rows") {
    TempTree tmp("ablation");
    data::SyntheticSpec spec;
    spec.pairs = 2;
    spec.height = spec.width = 24;
    spec.seed = 16;
    data::write_synthetic_dataset(tmp.root.string(), "train", spec);
    auto manifest = data::scan_manifest(tmp.root.string(), "train", true);

    TrainConfig cfg = tiny_config();
    cfg.epochs = 1;
    cfg.head_warmup_steps = 1;
    cfg.loss.ssim_window = 5;
    auto result = run_ablation<float>(manifest, cfg, (tmp.root / "ab").string());
    REQUIRE(result.rows.size() == 5);
    CHECK(result.rows[0].name == "wo_dsm");
    CHECK(result.rows[1].name == "wo_det");
    CHECK(result.rows[2].name == "wo_seg");
    CHECK(result.rows[3].name == "wo_both");
    CHECK(result.rows[4].name == "full");
    CHECK(result.table.find("full") != std::string::npos);
    CHECK(fs::exists(tmp.root / "ab" / "ablation_table.txt"));
}

TEST_SUITE_END();
