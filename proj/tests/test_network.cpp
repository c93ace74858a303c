#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>

#include "dssdn/gradcheck.hpp"
#include "dssdn/network.hpp"
#include "oracles.hpp"

using namespace dssdn;
namespace fs = std::filesystem;

namespace {

NetworkConfig small_config(Variant v = Variant::Large) {
    NetworkConfig cfg;
    cfg.variant = v;
    cfg.n_blocks = 2;
    cfg.stage_channels = {4, 4};
    cfg.distill_depth = 1;
    cfg.n_classes = 3;
    return cfg;
}

void zero_params(std::vector<NamedParam>& named) {
    for (auto& np : named) {
        for (double& v : np.tensor.data()) v = 0.0;
    }
}

fs::path tmp_dir() {
    auto p = fs::temp_directory_path() / "dssdn_net_tests";
    fs::create_directories(p);
    return p;
}

}  // namespace

TEST_CASE("a zero-weight block is the identity (residual path)") {
    std::mt19937_64 rng(60);
    DSSDBlock block(OperatorKind::SC, 4, 0.5, 2, 0.25, rng);
    std::vector<NamedParam> named;
    block.collect("b", named);
    zero_params(named);
    Tensor x = Tensor::uniform({1, 4, 6, 8}, -1, 1, rng);
    Tensor y = block.forward(x);
    CHECK(oracle::max_abs_diff(y.data(), x.data()) == 0.0);
}

TEST_CASE("block preserves shape for every operator and needs freq >= 2") {
    std::mt19937_64 rng(61);
    for (auto kind : {OperatorKind::SC, OperatorKind::OSC, OperatorKind::SPC,
                      OperatorKind::PlainConv}) {
        DSSDBlock block(kind, 4, 0.5, 2, 0.5, rng);
        for (int f : {2, 3, 7, 16}) {
            Tensor x = Tensor::uniform({1, 4, 5, f}, -1, 1, rng);
            CHECK(block.forward(x).shape() == x.shape());
        }
        Tensor bad = Tensor::uniform({1, 4, 5, 1}, -1, 1, rng);
        CHECK_THROWS_AS(block.forward(bad), ConfigError);
    }
}

TEST_CASE("block forward equals its manual composition") {
    std::mt19937_64 rng(62);
    DSSDBlock block(OperatorKind::SC, 3, 0.5, 2, 0.25, rng);
    Tensor x = Tensor::uniform({2, 3, 5, 9}, -1, 1, rng);

    const int split = static_cast<int>(std::lround(0.5 * 9));  // 4 or 5 by rounding
    auto [low, high] = ops::split_frequency(x, std::clamp(split, 1, 8));
    for (int d = 0; d < 2; ++d) {
        low = ops::relu(block.low_path[static_cast<size_t>(d)].forward(low));
        high = ops::relu(block.sc_layers[static_cast<size_t>(d)].forward(high));
    }
    Tensor expect = ops::add(block.eca.forward(ops::concat_frequency(low, high)), x);

    CHECK(oracle::max_abs_diff(block.forward(x).data(), expect.data()) == 0.0);
}

TEST_CASE("variant names round-trip; unknown names throw") {
    for (auto v : {Variant::Large, Variant::Middle, Variant::Small, Variant::DLO,
                   Variant::DLB}) {
        CHECK(variant_from_string(variant_name(v)) == v);
    }
    CHECK(variant_from_string("LARGE") == Variant::Large);
    CHECK_THROWS_AS(variant_from_string("huge"), ConfigError);
}

TEST_CASE("config validation rejects bad settings") {
    NetworkConfig cfg = small_config();
    CHECK_NOTHROW(cfg.validate());

    NetworkConfig bad = cfg;
    bad.stage_channels = {4, 8};
    CHECK_THROWS_AS(bad.validate(), ConfigError);

    bad = cfg;
    bad.split_ratio = 1.0;
    CHECK_THROWS_AS(bad.validate(), ConfigError);

    bad = cfg;
    bad.distill_depth = 0;
    CHECK_THROWS_AS(bad.validate(), ConfigError);

    bad = cfg;
    bad.stage_channels = {4};
    CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("build_network wires the operator the variant asks for") {
    auto model_for = [](Variant v) { return build_network(small_config(v)); };
    CHECK(!model_for(Variant::Large).blocks[0].sc_layers.empty());
    CHECK(!model_for(Variant::Small).blocks[0].osc_layers.empty());
    CHECK(!model_for(Variant::Middle).blocks[0].spc_layers.empty());
    CHECK(!model_for(Variant::DLO).blocks[0].plain_layers.empty());
    CHECK(!model_for(Variant::DLB).plain_blocks.empty());
    CHECK(model_for(Variant::DLB).blocks.empty());
}

TEST_CASE("same config builds bit-identical networks") {
    auto cfg = NetworkConfig::tiny(Variant::Small, 8, 7);
    DSSDNModel a = build_network(cfg);
    DSSDNModel b = build_network(cfg);
    auto na = a.named_parameters();
    auto nb = b.named_parameters();
    REQUIRE(na.size() == nb.size());
    for (size_t i = 0; i < na.size(); ++i) {
        CHECK(na[i].name == nb[i].name);
        CHECK(na[i].tensor.data() == nb[i].tensor.data());
    }
    std::mt19937_64 rng(63);
    Tensor x = Tensor::uniform({1, 1, 64, 64}, -1, 1, rng);
    CHECK(a.forward(x).data() == b.forward(x).data());
}

TEST_CASE("forward produces finite logits of the right shape for all variants") {
    std::mt19937_64 rng(64);
    Tensor x = Tensor::uniform({2, 1, 64, 64}, -5, 2, rng);
    for (auto v : {Variant::Large, Variant::Middle, Variant::Small, Variant::DLO,
                   Variant::DLB}) {
        DSSDNModel m = build_network(NetworkConfig::tiny(v, 8, 1));
        Tensor logits = m.forward(x);
        CHECK(logits.shape() == Shape{2, 10});
        for (double val : logits.data()) CHECK(std::isfinite(val));
    }
}

TEST_CASE("ortho penalty sum is zero without OSC and positive with it") {
    DSSDNModel large = build_network(small_config(Variant::Large));
    CHECK(large.ortho_penalty_sum().item() == 0.0);

    DSSDNModel small = build_network(small_config(Variant::Small));
    Tensor p = small.ortho_penalty_sum();
    CHECK(p.item() > 0.0);
    p.backward();
    bool any = false;
    for (auto& np : small.named_parameters()) {
        if (np.name.find("m_1x1.weight") != std::string::npos) {
            REQUIRE(np.tensor.has_grad());
            for (double g : np.tensor.grad()) any = any || g != 0.0;
        }
    }
    CHECK(any);
}

TEST_CASE("fusion is live: dropping it changes the logits, early blocks get grads") {
    std::mt19937_64 rng(65);
    DSSDNModel m = build_network(NetworkConfig::tiny(Variant::Large, 8, 3));
    Tensor x = Tensor::uniform({1, 1, 64, 64}, -1, 1, rng);
    Tensor fused = m.forward(x);
    Tensor lone = m.forward_no_fusion(x);
    CHECK(oracle::max_abs_diff(fused.data(), lone.data()) > 1e-9);

    ops::sum(fused).backward();
    auto named = m.named_parameters();
    bool block0_grad = false;
    for (auto& np : named) {
        if (np.name.rfind("block0.", 0) == 0 && np.tensor.has_grad()) {
            for (double g : np.tensor.grad()) block0_grad = block0_grad || g != 0.0;
        }
    }
    CHECK(block0_grad);
}

TEST_CASE("checkpoint round trip restores the forward bit-exactly") {
    auto cfg = small_config(Variant::Small);
    cfg.seed = 11;
    DSSDNModel m = build_network(cfg);
    quantize_params_f32(m);
    auto path = (tmp_dir() / "model.dssw").string();
    save_checkpoint(m, path);

    auto cfg2 = cfg;
    cfg2.seed = 99;  // different init, same architecture digest
    DSSDNModel m2 = build_network(cfg2);
    load_checkpoint(m2, path);

    std::mt19937_64 rng(66);
    Tensor x = Tensor::uniform({1, 1, 16, 16}, -1, 1, rng);
    CHECK(m.forward(x).data() == m2.forward(x).data());
}

TEST_CASE("checkpoint rejects the wrong architecture and corruption") {
    DSSDNModel m = build_network(small_config(Variant::Small));
    auto path = (tmp_dir() / "mismatch.dssw").string();
    save_checkpoint(m, path);

    auto other_cfg = small_config(Variant::Small);
    other_cfg.stage_channels = {8, 8};
    DSSDNModel other = build_network(other_cfg);
    CHECK_THROWS_AS(load_checkpoint(other, path), ConfigError);

    auto trunc = tmp_dir() / "trunc.dssw";
    fs::copy_file(path, trunc, fs::copy_options::overwrite_existing);
    fs::resize_file(trunc, fs::file_size(trunc) / 2);
    DSSDNModel fresh = build_network(small_config(Variant::Small));
    CHECK_THROWS_AS(load_checkpoint(fresh, trunc.string()), IoError);

    auto garbage = tmp_dir() / "garbage.dssw";
    std::ofstream(garbage, std::ios::binary) << "not a checkpoint";
    CHECK_THROWS_AS(load_checkpoint(fresh, garbage.string()), IoError);
}

TEST_CASE("end-to-end gradients of a tiny model match finite differences") {
    auto cfg = small_config(Variant::Small);
    cfg.seed = 5;
    DSSDNModel m = build_network(cfg);
    std::mt19937_64 rng(67);
    Tensor x = Tensor::uniform({2, 1, 16, 16}, -1, 1, rng);
    Tensor target = Tensor::zeros({2, 3});
    target.data()[0] = 1.0;
    target.data()[5] = 1.0;
    auto loss = [&] {
        Tensor ce = ops::softmax_cross_entropy(m.forward(x), target);
        return ops::add(ce, ops::mul_scalar(m.ortho_penalty_sum(), cfg.ortho_lambda));
    };
    auto r = gradcheck::check(loss, m.parameters(), /*h=*/1e-4);
    CHECK(r.n_checked == m.param_count());
    CHECK(r.max_rel_err < 1e-3);
}
