#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "dssdn/dsp.hpp"
#include "dssdn/train.hpp"

using namespace dssdn;
namespace fs = std::filesystem;

namespace {

fs::path tmp_dir(const std::string& leaf) {
    auto p = fs::temp_directory_path() / "dssdn_train_tests" / leaf;
    fs::create_directories(p);
    return p;
}

// 64 mel bins so the frequency axis survives the five pooling stages
Dataset toy_dataset(int n, uint64_t seed = 1) {
    return make_synthetic_dataset(n, seed, /*time_frames=*/40, /*n_mels=*/64);
}

NetworkConfig toy_config(Variant v, uint64_t seed = 0) {
    return NetworkConfig::tiny(v, /*channels=*/4, seed);
}

std::vector<std::vector<double>> snapshot(const DSSDNModel& m) {
    std::vector<std::vector<double>> out;
    for (const auto& np : m.named_parameters()) out.push_back(np.tensor.data());
    return out;
}

}  // namespace

TEST_CASE("cosine schedule endpoints, midpoint, monotonicity") {
    CHECK(cosine_lr(0, 100, 0.2) == doctest::Approx(0.2));
    CHECK(cosine_lr(50, 100, 0.2) == doctest::Approx(0.1));
    CHECK(cosine_lr(100, 100, 0.2) == 0.0);
    CHECK(cosine_lr(250, 100, 0.2) == 0.0);
    double prev = 1e9;
    for (int s = 0; s <= 100; ++s) {
        const double lr = cosine_lr(s, 100, 0.2);
        CHECK(lr <= prev);
        CHECK(lr >= 0.0);
        prev = lr;
    }
    CHECK_THROWS_AS(cosine_lr(-1, 100, 0.2), UsageError);
}

TEST_CASE("sgd step arithmetic, grad clearing, missing-grad error") {
    Tensor w = Tensor::from_data({2}, {1.0, 2.0}, /*requires_grad=*/true);
    Tensor c = Tensor::from_data({2}, {3.0, -1.0});
    ops::sum(ops::mul(w, c)).backward();
    sgd_step({w}, 0.1);
    CHECK(w.data()[0] == doctest::Approx(1.0 - 0.3));
    CHECK(w.data()[1] == doctest::Approx(2.0 + 0.1));
    CHECK(!w.has_grad());

    CHECK_THROWS_AS(sgd_step({w}, 0.1), UsageError);  // no fresh gradient
}

TEST_CASE("sgd descends a quadratic bowl to its minimum") {
    Tensor w = Tensor::from_data({3}, {5.0, -4.0, 0.5}, true);
    Tensor target = Tensor::from_data({3}, {-1.0, 2.0, 0.25});
    for (int it = 0; it < 300; ++it) {
        Tensor d = ops::add(w, ops::mul_scalar(target, -1.0));
        ops::sum(ops::mul(d, d)).backward();
        sgd_step({w}, 0.1);
    }
    for (int i = 0; i < 3; ++i) {
        CHECK(w.data()[static_cast<size_t>(i)] ==
              doctest::Approx(target.data()[static_cast<size_t>(i)]).epsilon(1e-8));
    }
}

TEST_CASE("total_loss is plain cross entropy when no OSC layers exist") {
    DSSDNModel sc_model = build_network(toy_config(Variant::Large));
    Tensor logits = Tensor::from_data({1, 10}, std::vector<double>(10, 0.1));
    Tensor target = Tensor::zeros({1, 10});
    target.data()[3] = 1.0;
    Tensor plain = ops::softmax_cross_entropy(logits, target);
    CHECK(total_loss(logits, target, sc_model).item() == plain.item());

    DSSDNModel osc_model = build_network(toy_config(Variant::Small));
    const double expected = plain.item() +
                            osc_model.config.ortho_lambda *
                                osc_model.ortho_penalty_sum().item();
    CHECK(total_loss(logits, target, osc_model).item() == doctest::Approx(expected));

    DSSDNModel osc_off = build_network(toy_config(Variant::Small));
    osc_off.config.ortho_lambda = 0.0;
    CHECK(total_loss(logits, target, osc_off).item() == plain.item());
}

TEST_CASE("manifest csv round trip and validation") {
    auto dir = tmp_dir("manifest");
    DatasetManifest m;
    m.records.push_back({"clip1.wav", 3, "a", "paris"});
    m.records.push_back({"clip2.dssc", 9, "b", ""});
    auto path = (dir / "m.csv").string();
    m.save_csv(path);
    auto back = DatasetManifest::load_csv(path);
    REQUIRE(back.records.size() == 2);
    CHECK(back.records[0].path == "clip1.wav");
    CHECK(back.records[0].label == 3);
    CHECK(back.records[0].device == "a");
    CHECK(back.records[0].city == "paris");
    CHECK(back.records[1].label == 9);

    auto bad_header = dir / "bad1.csv";
    std::ofstream(bad_header) << "file,class\nclip,1\n";
    CHECK_THROWS_AS(DatasetManifest::load_csv(bad_header.string()), IoError);

    auto bad_label = dir / "bad2.csv";
    std::ofstream(bad_label) << "path,label,device,city\nclip,eleven,a,x\n";
    CHECK_THROWS_AS(DatasetManifest::load_csv(bad_label.string()), IoError);

    auto out_of_range = dir / "bad3.csv";
    std::ofstream(out_of_range) << "path,label,device,city\nclip,12,a,x\n";
    CHECK_THROWS_AS(DatasetManifest::load_csv(out_of_range.string()), IoError);
}

TEST_CASE("dataset load skips unreadable samples but fails when none load") {
    auto dir = tmp_dir("load");
    std::mt19937_64 rng(1);
    Tensor spec = Tensor::uniform({40, 64}, -6, 0, rng);
    auto cached = (dir / "ok.dssc").string();
    cache_write(cached, spec);

    DatasetManifest m;
    m.records.push_back({cached, 1, "a", ""});
    m.records.push_back({(dir / "missing.dssc").string(), 2, "b", ""});
    Dataset ds = Dataset::load(m);
    CHECK(ds.spectrograms.size() == 1);
    CHECK(ds.labels[0] == 1);

    DatasetManifest none;
    none.records.push_back({(dir / "also_missing.dssc").string(), 0, "a", ""});
    CHECK_THROWS_AS(Dataset::load(none), IoError);
}

TEST_CASE("synthetic dataset structure") {
    Dataset ds = toy_dataset(25, 7);
    REQUIRE(ds.spectrograms.size() == 25);
    for (int i = 0; i < 25; ++i) {
        CHECK(ds.labels[static_cast<size_t>(i)] == i % 10);
        CHECK(ds.spectrograms[static_cast<size_t>(i)].shape() == Shape{40, 64});
    }
    CHECK(ds.devices[0] == "a");
    CHECK(ds.devices[1] == "b");
    CHECK(ds.devices[3] == "a");
}

TEST_CASE("training is deterministic for a fixed seed") {
    Dataset ds = toy_dataset(12);
    TrainConfig cfg;
    cfg.epochs = 2;
    cfg.batch_size = 6;
    cfg.base_lr = 0.01;
    cfg.seed = 9;

    auto run = [&] {
        DSSDNModel m = build_network(toy_config(Variant::Large, 2));
        train(m, cfg, ds);
        return snapshot(m);
    };
    auto a = run();
    auto b = run();
    REQUIRE(a.size() == b.size());
    for (size_t i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);
}

TEST_CASE("epoch logs: lr decays, loss is finite, val accuracy recorded, jsonl parses") {
    Dataset ds = toy_dataset(12);
    Dataset val = toy_dataset(10, 2);
    TrainConfig cfg;
    cfg.epochs = 3;
    cfg.batch_size = 6;
    cfg.base_lr = 0.02;
    cfg.seed = 4;
    DSSDNModel m = build_network(toy_config(Variant::Large, 1));
    std::ostringstream log;
    auto result = train(m, cfg, ds, &val, 0, &log);
    REQUIRE(result.logs.size() == 3);
    CHECK(result.logs[0].lr > result.logs[2].lr);
    for (const auto& l : result.logs) {
        CHECK(std::isfinite(l.train_loss));
        REQUIRE(l.val_accuracy.has_value());
        CHECK(*l.val_accuracy >= 0.0);
        CHECK(*l.val_accuracy <= 1.0);
    }
    std::istringstream lines(log.str());
    std::string line;
    int n_lines = 0;
    while (std::getline(lines, line)) {
        auto j = nlohmann::json::parse(line);
        CHECK(j["epoch"].get<int>() == n_lines);
        CHECK(j.contains("val_accuracy"));
        ++n_lines;
    }
    CHECK(n_lines == 3);
}

TEST_CASE("resume from a checkpoint reproduces the uninterrupted run bit-exactly") {
    Dataset ds = toy_dataset(12);
    TrainConfig cfg;
    cfg.epochs = 4;
    cfg.batch_size = 6;
    cfg.base_lr = 0.01;
    cfg.seed = 21;
    cfg.checkpoint_dir = tmp_dir("resume_a").string();

    DSSDNModel full = build_network(toy_config(Variant::Small, 6));
    train(full, cfg, ds);

    DSSDNModel resumed = build_network(toy_config(Variant::Small, 6));
    load_checkpoint(resumed, cfg.checkpoint_dir + "/ckpt_epoch_1.dssw");
    TrainConfig cfg2 = cfg;
    cfg2.checkpoint_dir = tmp_dir("resume_b").string();
    train(resumed, cfg2, ds, nullptr, /*start_epoch=*/2);

    auto a = snapshot(full);
    auto b = snapshot(resumed);
    REQUIRE(a.size() == b.size());
    for (size_t i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);
}

TEST_CASE("an untrained model scores near chance on balanced data") {
    Dataset ds = toy_dataset(100, 5);
    DSSDNModel m = build_network(toy_config(Variant::Large, 8));
    Metrics metrics = evaluate(m, ds);
    CHECK(metrics.accuracy >= 0.02);
    CHECK(metrics.accuracy <= 0.25);
}

TEST_CASE("evaluate's confusion and per-device counts are self-consistent") {
    Dataset ds = toy_dataset(30, 3);
    DSSDNModel m = build_network(toy_config(Variant::Middle, 4));
    Metrics metrics = evaluate(m, ds);
    int64_t total = 0, diag = 0;
    for (size_t i = 0; i < metrics.confusion.size(); ++i) {
        for (size_t j = 0; j < metrics.confusion[i].size(); ++j) {
            total += metrics.confusion[i][j];
        }
        diag += metrics.confusion[i][i];
    }
    CHECK(total == 30);
    CHECK(metrics.accuracy ==
          doctest::Approx(static_cast<double>(diag) / 30.0).epsilon(1e-12));
    CHECK(metrics.per_device_accuracy.size() == 3);  // devices a, b, c
    for (const auto& [dev, acc] : metrics.per_device_accuracy) {
        CHECK(acc >= 0.0);
        CHECK(acc <= 1.0);
    }
}

TEST_CASE("training pushes the ortho penalty down when it dominates the loss") {
    Dataset ds = toy_dataset(10);
    auto cfg_net = toy_config(Variant::Small, 13);
    DSSDNModel m = build_network(cfg_net);
    m.config.ortho_lambda = 2.0;  // make the penalty the dominant term
    const double before = m.ortho_penalty_sum().item();
    REQUIRE(before > 0.0);
    TrainConfig cfg;
    cfg.epochs = 4;
    cfg.batch_size = 10;
    cfg.base_lr = 0.02;
    cfg.seed = 13;
    cfg.mixup_enabled = false;
    cfg.spec_augment_enabled = false;
    train(m, cfg, ds);
    CHECK(m.ortho_penalty_sum().item() < before);
}

TEST_CASE("a tiny model fits the synthetic task") {
    Dataset train_set = toy_dataset(40, 11);
    Dataset held_out = toy_dataset(40, 99);
    DSSDNModel m = build_network(NetworkConfig::tiny(Variant::Small, 24, 17));
    TrainConfig cfg;
    cfg.epochs = 30;
    cfg.batch_size = 8;
    cfg.base_lr = 1.0;
    cfg.seed = 17;
    cfg.mixup_enabled = false;
    cfg.spec_augment_enabled = false;
    train(m, cfg, train_set);
    CHECK(evaluate(m, train_set).accuracy >= 0.9);
    CHECK(evaluate(m, held_out).accuracy >= 0.7);
}
