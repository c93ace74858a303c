// dssdn command-line entry point: preprocess, analyze, train, eval, gradcheck.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "dssdn/augment.hpp"
#include "dssdn/complexity.hpp"
#include "dssdn/dsp.hpp"
#include "dssdn/gradcheck.hpp"
#include "dssdn/network.hpp"
#include "dssdn/train.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

json default_config() {
    return json{
        {"network",
         {{"variant", "large"},
          {"channels", 56},
          {"n_blocks", 5},
          {"split_ratio", 0.5},
          {"distill_depth", 3},
          {"n_classes", 10},
          {"spc_touched_fraction", 0.25},
          {"ortho_lambda", 1e-4}}},
        {"spectrogram",
         {{"n_fft", 2048},
          {"hop", 1024},
          {"n_mels", 256},
          {"sample_rate", 44100},
          {"log_floor", 1e-10},
          {"normalize", false}}},
        {"train",
         {{"epochs", 200},
          {"batch_size", 32},
          {"base_lr", 1e-3},
          {"momentum", 0.0},
          {"weight_decay", 0.0},
          {"mixup_enabled", true},
          {"mixup_alpha", 0.4},
          {"spec_augment_enabled", true},
          {"n_time_masks", 2},
          {"n_freq_masks", 2},
          {"max_mask_width", 2},
          {"spectrum_correction", true}}}};
}

void merge_strict(json& base, const json& file, const std::string& prefix) {
    for (auto it = file.begin(); it != file.end(); ++it) {
        const std::string key = prefix.empty() ? it.key() : prefix + "." + it.key();
        if (!base.contains(it.key())) {
            throw dssdn::ConfigError("unknown config field '" + key + "'");
        }
        if (it->is_object()) {
            merge_strict(base[it.key()], *it, key);
        } else {
            base[it.key()] = *it;
        }
    }
}

// key=value overrides with dotted keys; the key must already exist.
void apply_override(json& cfg, const std::string& kv) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) {
        throw dssdn::ConfigError("override '" + kv + "' must be key=value");
    }
    const std::string key = kv.substr(0, eq);
    const std::string value = kv.substr(eq + 1);
    json* node = &cfg;
    std::stringstream ss(key);
    std::string part;
    while (std::getline(ss, part, '.')) {
        if (!node->contains(part)) {
            throw dssdn::ConfigError("unknown config field '" + key + "'");
        }
        node = &(*node)[part];
    }
    if (node->is_object()) throw dssdn::ConfigError("'" + key + "' is a section, not a field");
    if (node->is_boolean()) {
        *node = (value == "true" || value == "1");
    } else if (node->is_number_integer()) {
        *node = std::stoll(value);
    } else if (node->is_number_float()) {
        *node = std::stod(value);
    } else {
        *node = value;
    }
}

json load_config(const std::string& path, const std::vector<std::string>& overrides) {
    json cfg = default_config();
    if (!path.empty()) {
        std::ifstream is(path);
        if (!is) throw dssdn::IoError("cannot open config file: " + path);
        json file;
        try {
            file = json::parse(is);
        } catch (const json::parse_error& e) {
            throw dssdn::ConfigError("config parse error in " + path + ": " + e.what());
        }
        merge_strict(cfg, file, "");
    }
    for (const auto& kv : overrides) apply_override(cfg, kv);
    return cfg;
}

dssdn::NetworkConfig network_config(const json& cfg, uint64_t seed) {
    const auto& n = cfg.at("network");
    dssdn::NetworkConfig nc;
    nc.variant = dssdn::variant_from_string(n.at("variant").get<std::string>());
    nc.n_blocks = n.at("n_blocks").get<int>();
    nc.stage_channels.assign(static_cast<size_t>(nc.n_blocks), n.at("channels").get<int>());
    nc.split_ratio = n.at("split_ratio").get<double>();
    nc.distill_depth = n.at("distill_depth").get<int>();
    nc.n_classes = n.at("n_classes").get<int>();
    nc.spc_touched_fraction = n.at("spc_touched_fraction").get<double>();
    nc.ortho_lambda = n.at("ortho_lambda").get<double>();
    nc.seed = seed;
    return nc;
}

dssdn::SpectrogramConfig spectrogram_config(const json& cfg) {
    const auto& s = cfg.at("spectrogram");
    dssdn::SpectrogramConfig sc;
    sc.n_fft = s.at("n_fft").get<int>();
    sc.hop = s.at("hop").get<int>();
    sc.n_mels = s.at("n_mels").get<int>();
    sc.sample_rate = s.at("sample_rate").get<int>();
    sc.log_floor = s.at("log_floor").get<double>();
    sc.normalize = s.at("normalize").get<bool>();
    return sc;
}

dssdn::TrainConfig train_config(const json& cfg, uint64_t seed) {
    const auto& t = cfg.at("train");
    dssdn::TrainConfig tc;
    tc.epochs = t.at("epochs").get<int>();
    tc.batch_size = t.at("batch_size").get<int>();
    tc.base_lr = t.at("base_lr").get<double>();
    tc.momentum = t.at("momentum").get<double>();
    tc.weight_decay = t.at("weight_decay").get<double>();
    tc.mixup_enabled = t.at("mixup_enabled").get<bool>();
    tc.mixup.alpha = t.at("mixup_alpha").get<double>();
    tc.spec_augment_enabled = t.at("spec_augment_enabled").get<bool>();
    tc.spec_augment_cfg.n_time_masks = t.at("n_time_masks").get<int>();
    tc.spec_augment_cfg.n_freq_masks = t.at("n_freq_masks").get<int>();
    tc.spec_augment_cfg.max_mask_width = t.at("max_mask_width").get<int>();
    tc.spectrum_correction_enabled = t.at("spectrum_correction").get<bool>();
    tc.seed = seed;
    return tc;
}

int cmd_preprocess(const std::string& manifest_path, const std::string& out_dir,
                   const json& cfg) {
    auto manifest = dssdn::DatasetManifest::load_csv(manifest_path);
    const auto sc = spectrogram_config(cfg);
    fs::create_directories(out_dir);
    dssdn::DatasetManifest out_manifest;
    int ok = 0, written = 0;
    for (const auto& rec : manifest.records) {
        const fs::path wav(rec.path);
        const fs::path cache = fs::path(out_dir) / (wav.stem().string() + ".dssc");
        try {
            const bool up_to_date = fs::exists(cache) && fs::exists(wav) &&
                                    fs::last_write_time(cache) >= fs::last_write_time(wav);
            if (!up_to_date) {
                auto clip = dssdn::load_wav(rec.path);
                auto spec = dssdn::log_mel(clip, sc);
                dssdn::cache_write(cache.string(), spec.values);
                ++written;
            }
            auto r = rec;
            r.path = cache.string();
            out_manifest.records.push_back(r);
            ++ok;
        } catch (const std::exception& e) {
            std::cerr << "warning: skipping " << rec.path << ": " << e.what() << "\n";
        }
    }
    if (ok == 0) {
        std::cerr << "error: no clips could be preprocessed\n";
        return 2;
    }
    out_manifest.save_csv((fs::path(out_dir) / "manifest.csv").string());
    std::cout << "preprocessed " << ok << " clips (" << written << " written, " << ok - written
              << " up to date) -> " << out_dir << "\n";
    return 0;
}

int cmd_analyze(const json& cfg, uint64_t seed, const std::vector<int>& input_shape,
                const std::string& json_out, bool check_ordering) {
    dssdn::Shape shape(input_shape.begin(), input_shape.end());
    if (check_ordering) {
        auto report_for = [&](const char* v) {
            json c = cfg;
            c["network"]["variant"] = v;
            return dssdn::analyze(dssdn::build_network(network_config(c, seed)), shape);
        };
        const auto large = report_for("large");
        const auto middle = report_for("middle");
        const auto small = report_for("small");
        const bool params_ok = small.total_params < large.total_params;
        const bool macs_ok = small.total_macs < middle.total_macs &&
                             middle.total_macs < large.total_macs;
        std::cout << "params: small=" << small.total_params << " middle=" << middle.total_params
                  << " large=" << large.total_params << "\n";
        std::cout << "macs:   small=" << small.total_macs << " middle=" << middle.total_macs
                  << " large=" << large.total_macs << "\n";
        std::cout << "ordering: " << ((params_ok && macs_ok) ? "PASS" : "FAIL") << "\n";
        return (params_ok && macs_ok) ? 0 : 2;
    }
    auto model = dssdn::build_network(network_config(cfg, seed));
    auto report = dssdn::analyze(model, shape);
    std::cout << report.table();
    if (json_out.empty()) {
        std::cout << report.to_json() << "\n";
    } else {
        std::ofstream os(json_out);
        os << report.to_json() << "\n";
    }
    return 0;
}

void split_train_val(const dssdn::Dataset& all, double holdout, uint64_t seed,
                     dssdn::Dataset& train, dssdn::Dataset& val) {
    std::mt19937_64 rng(seed ^ 0x5911Dull);
    std::vector<size_t> idx(all.spectrograms.size());
    for (size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    std::shuffle(idx.begin(), idx.end(), rng);
    const size_t n_val = static_cast<size_t>(static_cast<double>(idx.size()) * holdout);
    for (size_t i = 0; i < idx.size(); ++i) {
        auto& dst = i < n_val ? val : train;
        dst.spectrograms.push_back(all.spectrograms[idx[i]]);
        dst.labels.push_back(all.labels[idx[i]]);
        dst.devices.push_back(all.devices[idx[i]]);
    }
}

int cmd_gradcheck(uint64_t seed);

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Deep space separable distillation toolkit"};
    app.require_subcommand(1);

    std::string config_path;
    std::vector<std::string> overrides;
    uint64_t seed = 0;
    app.add_option("--config", config_path, "JSON config file")->capture_default_str();
    app.add_option("--set", overrides, "override config fields, e.g. network.channels=8");
    app.add_option("--seed", seed, "random seed")->capture_default_str();

    auto* pre = app.add_subcommand("preprocess", "WAV manifest -> spectrogram caches");
    std::string manifest_path, out_dir;
    pre->add_option("--manifest", manifest_path, "input manifest CSV")->required();
    pre->add_option("--out-dir", out_dir, "cache output directory")->required();

    auto* ana = app.add_subcommand("analyze", "params/MACs report for a variant");
    std::string variant = "large", json_out;
    std::vector<int> input_shape{1, 1, 431, 256};
    bool check_ordering = false;
    ana->add_option("--variant", variant, "large|middle|small|dl-o|dl-b")
        ->capture_default_str();
    ana->add_option("--input-shape", input_shape, "b c t f")->expected(4);
    ana->add_option("--json-out", json_out, "write the JSON report here instead of stdout");
    ana->add_flag("--check-ordering", check_ordering,
                  "verify params/MACs ordering across the three variants");

    auto* trn = app.add_subcommand("train", "train a model");
    std::string train_manifest, val_manifest, out_dir_train = "runs", resume;
    int synthetic = 0, start_epoch = 0;
    bool single_thread = true;
    trn->add_option("--manifest", train_manifest, "training manifest CSV");
    trn->add_option("--val-manifest", val_manifest, "validation manifest CSV");
    trn->add_option("--synthetic", synthetic, "use a bundled synthetic toy set of N samples");
    trn->add_option("--out", out_dir_train, "checkpoint/log directory")->capture_default_str();
    trn->add_option("--resume", resume, "checkpoint to resume from");
    trn->add_option("--start-epoch", start_epoch, "first epoch index when resuming");
    trn->add_flag("--single-threaded", single_thread,
                  "force single-threaded execution (always on; determinism contract)");

    auto* evl = app.add_subcommand("eval", "evaluate a checkpoint");
    std::string eval_manifest, checkpoint;
    int eval_synthetic = 0;
    evl->add_option("--manifest", eval_manifest, "evaluation manifest CSV");
    evl->add_option("--synthetic", eval_synthetic, "evaluate on a synthetic toy set");
    evl->add_option("--checkpoint", checkpoint, "model checkpoint")->required();
    evl->add_option("--variant", variant, "model variant")->capture_default_str();

    auto* grd = app.add_subcommand("gradcheck",
                                   "finite-difference gradient suite over all layer kinds");
    (void)grd;

    CLI11_PARSE(app, argc, argv);

    try {
        json cfg = load_config(config_path, overrides);

        if (pre->parsed()) return cmd_preprocess(manifest_path, out_dir, cfg);

        if (ana->parsed()) {
            cfg["network"]["variant"] = variant;
            return cmd_analyze(cfg, seed, input_shape, json_out, check_ordering);
        }

        if (trn->parsed()) {
            if ((synthetic > 0) == !train_manifest.empty()) {
                std::cerr << "error: pass exactly one of --manifest / --synthetic\n";
                return 1;
            }
            if (synthetic > 0) {
                // toy-scale defaults unless the user overrode them
                json d = default_config();
                if (cfg["network"]["channels"] == d["network"]["channels"])
                    cfg["network"]["channels"] = 24;
                if (cfg["network"]["distill_depth"] == d["network"]["distill_depth"])
                    cfg["network"]["distill_depth"] = 2;
                if (cfg["train"]["epochs"] == d["train"]["epochs"])
                    cfg["train"]["epochs"] = 30;
                if (cfg["train"]["base_lr"] == d["train"]["base_lr"])
                    cfg["train"]["base_lr"] = 1.0;
            }
            cfg["network"]["variant"] = variant;
            auto nc = network_config(cfg, seed);
            auto tc = train_config(cfg, seed);
            fs::create_directories(out_dir_train);
            tc.checkpoint_dir = out_dir_train;

            dssdn::Dataset train_set, val_set;
            if (synthetic > 0) {
                // 64 mel bins so the frequency axis survives all five pooling stages
                auto all = dssdn::make_synthetic_dataset(synthetic, seed, 40, 64);
                split_train_val(all, 0.2, seed, train_set, val_set);
            } else {
                train_set = dssdn::Dataset::load(dssdn::DatasetManifest::load_csv(train_manifest));
                if (!val_manifest.empty()) {
                    val_set = dssdn::Dataset::load(dssdn::DatasetManifest::load_csv(val_manifest));
                } else {
                    dssdn::Dataset all = train_set;
                    train_set = dssdn::Dataset{};
                    split_train_val(all, 0.1, seed, train_set, val_set);
                }
            }

            auto model = dssdn::build_network(nc);
            if (!resume.empty()) dssdn::load_checkpoint(model, resume);
            std::ofstream log_file((fs::path(out_dir_train) / "train_log.jsonl").string());
            auto result = dssdn::train(model, tc, train_set,
                                       val_set.spectrograms.empty() ? nullptr : &val_set,
                                       start_epoch, &log_file);
            for (const auto& l : result.logs) {
                std::cout << "epoch " << l.epoch << " lr " << l.lr << " loss " << l.train_loss;
                if (l.val_accuracy) std::cout << " val_acc " << *l.val_accuracy;
                std::cout << "\n";
            }
            std::cout << "final checkpoint: " << result.final_checkpoint << "\n";
            return 0;
        }

        if (evl->parsed()) {
            cfg["network"]["variant"] = variant;
            if (eval_synthetic > 0 && cfg["network"]["channels"] == default_config()["network"]["channels"]) {
                cfg["network"]["channels"] = 8;
                cfg["network"]["distill_depth"] = 2;
            }
            auto model = dssdn::build_network(network_config(cfg, seed));
            dssdn::load_checkpoint(model, checkpoint);
            dssdn::Dataset ds;
            if (eval_synthetic > 0) {
                ds = dssdn::make_synthetic_dataset(eval_synthetic, seed, 40, 64);
            } else if (!eval_manifest.empty()) {
                ds = dssdn::Dataset::load(dssdn::DatasetManifest::load_csv(eval_manifest));
            } else {
                std::cerr << "error: pass --manifest or --synthetic\n";
                return 1;
            }
            auto m = dssdn::evaluate(model, ds);
            std::cout << "accuracy: " << m.accuracy << "\n";
            std::cout << "confusion (rows=true, cols=pred):\n";
            for (const auto& row : m.confusion) {
                for (int64_t v : row) std::cout << v << " ";
                std::cout << "\n";
            }
            for (const auto& [dev, acc] : m.per_device_accuracy) {
                std::cout << "device " << (dev.empty() ? "?" : dev) << ": " << acc << "\n";
            }
            return 0;
        }

        if (grd->parsed()) return cmd_gradcheck(seed);
    } catch (const dssdn::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 1;
    } catch (const dssdn::UsageError& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return 1;
    } catch (const dssdn::IoError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 2;
    } catch (const dssdn::ValidationError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 2;
    } catch (const dssdn::DimensionError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "internal error: " << e.what() << "\n";
        return 3;
    }
    return 0;
}

namespace {

std::vector<dssdn::Tensor> param_tensors(const std::vector<dssdn::NamedParam>& named) {
    std::vector<dssdn::Tensor> out;
    for (const auto& np : named) out.push_back(np.tensor);
    return out;
}

int cmd_gradcheck(uint64_t seed) {
    using dssdn::Tensor;
    namespace ops = dssdn::ops;
    std::mt19937_64 rng(seed);
    bool all_ok = true;
    auto report = [&](const char* kind, const dssdn::gradcheck::Result& r) {
        const bool ok = r.max_rel_err < 1e-4;
        all_ok = all_ok && ok;
        std::cout << kind << ": max rel err " << r.max_rel_err << " over " << r.n_checked
                  << " elements -> " << (ok ? "OK" : "FAIL") << "\n";
    };

    Tensor x = Tensor::uniform({2, 4, 6, 6}, -1.0, 1.0, rng);

    {
        dssdn::Conv2d conv(4, 3, 3, 3, {1, 1}, 1, rng);
        std::vector<dssdn::NamedParam> named;
        conv.collect("conv", named);
        auto params = param_tensors(named);
        report("conv2d", dssdn::gradcheck::check(
                             [&] { return ops::sum(ops::relu(conv.forward(x))); }, params));
    }
    {
        dssdn::SCLayer layer(4, 4, rng);
        std::vector<dssdn::NamedParam> named;
        layer.collect("sc", named);
        auto params = param_tensors(named);
        report("sc", dssdn::gradcheck::check(
                         [&] { return ops::sum(ops::sigmoid(layer.forward(x))); }, params));
    }
    {
        dssdn::OSCLayer layer(4, 4, 2, rng);
        std::vector<dssdn::NamedParam> named;
        layer.collect("osc", named);
        auto params = param_tensors(named);
        report("osc", dssdn::gradcheck::check(
                          [&] {
                              return ops::add(ops::sum(ops::sigmoid(layer.forward(x))),
                                              ops::mul_scalar(layer.penalty(), 0.5));
                          },
                          params));
    }
    {
        dssdn::SPCLayer layer(4, 4, 0.5, rng);
        std::vector<dssdn::NamedParam> named;
        layer.collect("spc", named);
        auto params = param_tensors(named);
        report("spc", dssdn::gradcheck::check(
                          [&] { return ops::sum(ops::sigmoid(layer.forward(x))); }, params));
    }
    {
        dssdn::ECALayer layer(4, 3, rng);
        std::vector<dssdn::NamedParam> named;
        layer.collect("eca", named);
        auto params = param_tensors(named);
        report("eca", dssdn::gradcheck::check(
                          [&] { return ops::sum(ops::sigmoid(layer.forward(x))); }, params));
    }
    {
        auto cfg = dssdn::NetworkConfig::tiny(dssdn::Variant::Small, 4, seed);
        auto model = dssdn::build_network(cfg);
        Tensor xin = Tensor::uniform({1, 1, 64, 64}, -1.0, 1.0, rng);
        Tensor y = Tensor::zeros({1, 10});
        y.data()[3] = 1.0;
        auto params = model.parameters();
        report("tiny-model", dssdn::gradcheck::check(
                                 [&] {
                                     return dssdn::total_loss(model.forward(xin), y, model);
                                 },
                                 params));
    }
    std::cout << (all_ok ? "gradcheck PASS" : "gradcheck FAIL") << "\n";
    return all_ok ? 0 : 2;
}

}  // namespace
