#include "dssdn/train.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <numbers>
#include <numeric>
#include <sstream>

#include <nlohmann/json.hpp>

#include "dssdn/dsp.hpp"

namespace dssdn {

void TrainConfig::validate() const {
    if (epochs < 1) throw ConfigError("epochs must be >= 1");
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (base_lr <= 0.0) throw ConfigError("base_lr must be positive");
}

DatasetManifest DatasetManifest::load_csv(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open manifest: " + path);
    std::string line;
    if (!std::getline(is, line)) throw IoError("manifest is empty: " + path);
    if (line != "path,label,device,city" && line != "path,label,device,city\r") {
        throw IoError("manifest header must be 'path,label,device,city', got '" + line + "'");
    }
    DatasetManifest m;
    int line_no = 1;
    while (std::getline(is, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        std::vector<std::string> fields;
        std::stringstream ss(line);
        std::string field;
        while (std::getline(ss, field, ',')) fields.push_back(field);
        if (fields.size() < 2 || fields.size() > 4) {
            throw IoError("manifest line " + std::to_string(line_no) + ": expected 2-4 fields");
        }
        ManifestRecord r;
        r.path = fields[0];
        try {
            r.label = std::stoi(fields[1]);
        } catch (const std::exception&) {
            throw IoError("manifest line " + std::to_string(line_no) + ": bad label '" +
                          fields[1] + "'");
        }
        if (r.label < 0 || r.label > 9) {
            throw IoError("manifest line " + std::to_string(line_no) + ": label out of 0..9");
        }
        if (fields.size() > 2) r.device = fields[2];
        if (fields.size() > 3) r.city = fields[3];
        m.records.push_back(std::move(r));
    }
    return m;
}

void DatasetManifest::save_csv(const std::string& path) const {
    std::ofstream os(path);
    if (!os) throw IoError("cannot write manifest: " + path);
    os << "path,label,device,city\n";
    for (const auto& r : records) {
        os << r.path << "," << r.label << "," << r.device << "," << r.city << "\n";
    }
}

Dataset Dataset::load(const DatasetManifest& manifest) {
    Dataset ds;
    for (const auto& r : manifest.records) {
        try {
            Tensor spec;
            if (r.path.size() > 4 && r.path.substr(r.path.size() - 4) == ".wav") {
                spec = log_mel(load_wav(r.path), SpectrogramConfig{}).values;
            } else {
                spec = cache_read(r.path);
            }
            ds.spectrograms.push_back(spec);
            ds.labels.push_back(r.label);
            ds.devices.push_back(r.device);
        } catch (const std::exception& e) {
            std::cerr << "warning: skipping unreadable sample " << r.path << ": " << e.what()
                      << "\n";
        }
    }
    if (ds.spectrograms.empty() && !manifest.records.empty()) {
        throw IoError("no readable samples in manifest");
    }
    return ds;
}

double cosine_lr(int64_t step, int64_t total_steps, double base_lr) {
    if (step < 0) throw UsageError("cosine_lr: negative step");
    if (step >= total_steps) return 0.0;  // clamp past the end
    return 0.5 * base_lr *
           (1.0 + std::cos(std::numbers::pi * static_cast<double>(step) /
                           static_cast<double>(total_steps)));
}

void sgd_step(const std::vector<Tensor>& params, double lr) {
    for (const Tensor& p : params) {
        if (!p.has_grad()) {
            throw UsageError("sgd_step: trainable parameter has no gradient");
        }
    }
    for (const Tensor& handle : params) {
        Tensor p = handle;  // shares storage
        const auto g = p.grad();
        for (size_t i = 0; i < p.data().size(); ++i) p.data()[i] -= lr * g[i];
        p.zero_grad();
    }
}

Tensor total_loss(const Tensor& logits, const Tensor& targets, const DSSDNModel& model) {
    Tensor ce = ops::softmax_cross_entropy(logits, targets);
    bool has_osc = false;
    for (const auto& b : model.blocks) has_osc = has_osc || !b.osc_layers.empty();
    if (!has_osc || model.config.ortho_lambda == 0.0) return ce;
    return ops::add(ce, ops::mul_scalar(model.ortho_penalty_sum(), model.config.ortho_lambda));
}

namespace {

std::mt19937_64 stream_rng(uint64_t seed, uint64_t a, uint64_t b) {
    std::seed_seq seq{static_cast<uint32_t>(seed), static_cast<uint32_t>(seed >> 32),
                      static_cast<uint32_t>(a), static_cast<uint32_t>(a >> 32),
                      static_cast<uint32_t>(b), static_cast<uint32_t>(b >> 32)};
    return std::mt19937_64(seq);
}

Tensor one_hot(int label, int n_classes) {
    Tensor t = Tensor::zeros({n_classes});
    t.data()[static_cast<size_t>(label)] = 1.0;
    return t;
}

Tensor stack_batch(const std::vector<Tensor>& specs) {
    const int b = static_cast<int>(specs.size());
    const int t = specs[0].dim(0), f = specs[0].dim(1);
    Tensor x = Tensor::zeros({b, 1, t, f});
    for (int n = 0; n < b; ++n) {
        if (specs[static_cast<size_t>(n)].dim(0) != t ||
            specs[static_cast<size_t>(n)].dim(1) != f) {
            throw DimensionError("batch members have differing spectrogram shapes");
        }
        std::copy(specs[static_cast<size_t>(n)].data().begin(),
                  specs[static_cast<size_t>(n)].data().end(),
                  x.data().begin() + static_cast<int64_t>(n) * t * f);
    }
    return x;
}

// Linear-domain per-device mean mel spectra over the training set.
std::vector<std::pair<std::string, std::vector<double>>> device_mean_spectra(const Dataset& ds) {
    std::vector<std::pair<std::string, std::vector<double>>> means;
    std::vector<int64_t> counts;
    for (size_t i = 0; i < ds.spectrograms.size(); ++i) {
        const std::string& dev = ds.devices[i];
        size_t slot = means.size();
        for (size_t j = 0; j < means.size(); ++j) {
            if (means[j].first == dev) slot = j;
        }
        const Tensor& s = ds.spectrograms[i];
        const int t = s.dim(0), f = s.dim(1);
        if (slot == means.size()) {
            means.push_back({dev, std::vector<double>(static_cast<size_t>(f), 0.0)});
            counts.push_back(0);
        }
        for (int fi = 0; fi < f; ++fi) {
            double acc = 0.0;
            for (int ti = 0; ti < t; ++ti) {
                acc += std::exp(s.data()[static_cast<size_t>(ti) * f + fi]);
            }
            means[slot].second[static_cast<size_t>(fi)] += acc / t;
        }
        counts[slot] += 1;
    }
    for (size_t j = 0; j < means.size(); ++j) {
        for (double& v : means[j].second) v /= static_cast<double>(counts[j]);
    }
    return means;
}

}  // namespace

TrainResult train(DSSDNModel& model, const TrainConfig& config, const Dataset& train_set,
                  const Dataset* val_set, int start_epoch, std::ostream* log_stream) {
    config.validate();
    if (train_set.spectrograms.empty()) throw UsageError("train: empty dataset");

    // Working copy of the inputs; spectrum correction rewrites device-A clips.
    std::vector<Tensor> specs;
    specs.reserve(train_set.spectrograms.size());
    for (const auto& s : train_set.spectrograms) specs.push_back(s.clone());

    if (config.spectrum_correction_enabled) {
        bool has_a = false, has_other = false;
        for (const auto& d : train_set.devices) {
            if (d == "a") has_a = true;
            else if (!d.empty()) has_other = true;
        }
        if (has_a && has_other) {
            auto corrector = fit_spectrum_corrector(device_mean_spectra(train_set), "a");
            for (size_t i = 0; i < specs.size(); ++i) {
                if (train_set.devices[i] != "a") continue;
                Tensor& s = specs[i];
                for (size_t j = 0; j < s.data().size(); ++j) {
                    const size_t fi = j % static_cast<size_t>(s.dim(1));
                    s.data()[j] = std::log(std::exp(s.data()[j]) * corrector.correction[fi]);
                }
            }
        } else {
            std::cerr << "notice: spectrum correction skipped (device ids missing or no "
                         "device-a / reference devices)\n";
        }
    }

    const int n = static_cast<int>(specs.size());
    const int n_classes = model.config.n_classes;
    const int64_t steps_per_epoch = (n + config.batch_size - 1) / config.batch_size;
    const int64_t total_steps = steps_per_epoch * config.epochs;
    auto params = model.parameters();
    std::vector<std::vector<double>> velocity;
    if (config.momentum > 0.0) {
        velocity.resize(params.size());
        for (size_t i = 0; i < params.size(); ++i) {
            velocity[i].assign(params[i].data().size(), 0.0);
        }
    }

    TrainResult result;
    for (int epoch = start_epoch; epoch < config.epochs; ++epoch) {
        auto epoch_rng = stream_rng(config.seed, static_cast<uint64_t>(epoch), 0);
        std::vector<int> order(static_cast<size_t>(n));
        std::iota(order.begin(), order.end(), 0);
        std::shuffle(order.begin(), order.end(), epoch_rng);
        const bool mix_epoch =
            config.mixup_enabled && config.mixup.active(epoch, config.epochs, epoch_rng);

        double loss_sum = 0.0;
        double last_lr = 0.0;
        for (int64_t bi = 0; bi < steps_per_epoch; ++bi) {
            const int64_t lo = bi * config.batch_size;
            const int64_t hi = std::min<int64_t>(lo + config.batch_size, n);
            std::vector<Tensor> xs;
            std::vector<Tensor> ys;
            for (int64_t s = lo; s < hi; ++s) {
                const int idx = order[static_cast<size_t>(s)];
                auto sample_rng =
                    stream_rng(config.seed, static_cast<uint64_t>(epoch) + 1,
                               static_cast<uint64_t>(idx) + 1);
                Tensor x = specs[static_cast<size_t>(idx)];
                Tensor y = one_hot(train_set.labels[static_cast<size_t>(idx)], n_classes);
                if (mix_epoch) {
                    const int partner =
                        std::uniform_int_distribution<int>(0, n - 1)(sample_rng);
                    Tensor yp = one_hot(train_set.labels[static_cast<size_t>(partner)],
                                        n_classes);
                    auto [xm, ym] = mixup(x, specs[static_cast<size_t>(partner)], y, yp,
                                          config.mixup.alpha, sample_rng);
                    x = xm;
                    y = ym;
                }
                if (config.spec_augment_enabled) {
                    x = spec_augment(x, config.spec_augment_cfg, sample_rng);
                }
                xs.push_back(x);
                ys.push_back(y);
            }
            Tensor xb = stack_batch(xs);
            Tensor yb = Tensor::zeros({static_cast<int>(ys.size()), n_classes});
            for (size_t s = 0; s < ys.size(); ++s) {
                std::copy(ys[s].data().begin(), ys[s].data().end(),
                          yb.data().begin() + static_cast<int64_t>(s) * n_classes);
            }

            Tensor loss = total_loss(model.forward(xb), yb, model);
            loss.backward();
            const int64_t step = static_cast<int64_t>(epoch) * steps_per_epoch + bi;
            last_lr = cosine_lr(step, total_steps, config.base_lr);
            if (config.momentum == 0.0 && config.weight_decay == 0.0) {
                sgd_step(params, last_lr);
            } else {
                for (size_t pi = 0; pi < params.size(); ++pi) {
                    Tensor p = params[pi];
                    const auto g = p.grad();
                    for (size_t i = 0; i < p.data().size(); ++i) {
                        double gi = g[i] + config.weight_decay * p.data()[i];
                        if (config.momentum > 0.0) {
                            velocity[pi][i] = config.momentum * velocity[pi][i] + gi;
                            gi = velocity[pi][i];
                        }
                        p.data()[i] -= last_lr * gi;
                    }
                    p.zero_grad();
                }
            }
            loss_sum += loss.item();
        }

        EpochLog log;
        log.epoch = epoch;
        log.lr = last_lr;
        log.train_loss = loss_sum / static_cast<double>(steps_per_epoch);
        if (val_set) log.val_accuracy = evaluate(model, *val_set).accuracy;
        result.logs.push_back(log);
        if (log_stream) {
            nlohmann::json j{{"epoch", log.epoch}, {"lr", log.lr},
                             {"train_loss", log.train_loss}};
            if (log.val_accuracy) j["val_accuracy"] = *log.val_accuracy;
            (*log_stream) << j.dump() << "\n" << std::flush;
        }

        if (!config.checkpoint_dir.empty()) {
            // Round through f32 first so a resumed run starts from exactly
            // the state the checkpoint stores.
            quantize_params_f32(model);
            const std::string path =
                config.checkpoint_dir + "/ckpt_epoch_" + std::to_string(epoch) + ".dssw";
            save_checkpoint(model, path);
            result.final_checkpoint = path;
        }
    }
    return result;
}

Metrics evaluate(const DSSDNModel& model, const Dataset& dataset) {
    if (dataset.spectrograms.empty()) throw UsageError("evaluate: empty dataset");
    const int n_classes = model.config.n_classes;
    Metrics m;
    m.confusion.assign(static_cast<size_t>(n_classes),
                       std::vector<int64_t>(static_cast<size_t>(n_classes), 0));
    std::vector<std::pair<std::string, std::pair<int64_t, int64_t>>> dev_counts;
    for (size_t i = 0; i < dataset.spectrograms.size(); ++i) {
        const Tensor& s = dataset.spectrograms[i];
        Tensor x = ops::reshape(Tensor::from_data(s.shape(), s.data()),
                                {1, 1, s.dim(0), s.dim(1)});
        Tensor logits = model.forward(x);
        int pred = 0;
        for (int j = 1; j < n_classes; ++j) {
            if (logits.data()[static_cast<size_t>(j)] > logits.data()[static_cast<size_t>(pred)])
                pred = j;
        }
        const int truth = dataset.labels[i];
        m.confusion[static_cast<size_t>(truth)][static_cast<size_t>(pred)] += 1;
        size_t slot = dev_counts.size();
        for (size_t j = 0; j < dev_counts.size(); ++j) {
            if (dev_counts[j].first == dataset.devices[i]) slot = j;
        }
        if (slot == dev_counts.size()) dev_counts.push_back({dataset.devices[i], {0, 0}});
        dev_counts[slot].second.second += 1;
        if (pred == truth) dev_counts[slot].second.first += 1;
    }
    int64_t correct = 0, total = 0;
    for (int i = 0; i < n_classes; ++i) {
        for (int j = 0; j < n_classes; ++j) {
            total += m.confusion[static_cast<size_t>(i)][static_cast<size_t>(j)];
        }
        correct += m.confusion[static_cast<size_t>(i)][static_cast<size_t>(i)];
    }
    m.accuracy = static_cast<double>(correct) / static_cast<double>(total);
    for (const auto& [dev, c] : dev_counts) {
        m.per_device_accuracy.push_back(
            {dev, static_cast<double>(c.first) / static_cast<double>(c.second)});
    }
    return m;
}

Dataset make_synthetic_dataset(int n_samples, uint64_t seed, int time_frames, int n_mels,
                               int n_devices) {
    Dataset ds;
    const char* device_names[] = {"a", "b", "c", "d", "e", "f"};
    n_devices = std::clamp(n_devices, 1, 6);
    for (int i = 0; i < n_samples; ++i) {
        const int label = i % 10;
        const std::string device = device_names[i % n_devices];
        auto rng = stream_rng(seed, 0xda7a, static_cast<uint64_t>(i));
        std::normal_distribution<double> noise(0.0, 0.4);
        Tensor s = Tensor::zeros({time_frames, n_mels});
        const int band_lo = label * n_mels / 10;
        const int band_hi = (label + 1) * n_mels / 10;
        // Class cues must survive global average pooling, so each scene gets a
        // distinct overall energy (band amplitude) on top of its band position
        // and spectral ripple shape.
        const double band_amp = 2.5 + 1.0 * label;
        const double ripple_amp = 1.2 + 0.6 * label;
        for (int t = 0; t < time_frames; ++t) {
            for (int f = 0; f < n_mels; ++f) {
                // centered at zero: keeps block inputs near the relu knees
                double v = noise(rng);
                if (f >= band_lo && f < band_hi) v += band_amp;
                v += ripple_amp * std::cos(2.0 * std::numbers::pi * (label + 1) * f / n_mels);
                // mild per-device spectral tilt so spectrum correction has work to do
                v += 0.2 * (i % n_devices) * std::sin(2.0 * std::numbers::pi * f / n_mels);
                s.data()[static_cast<size_t>(t) * n_mels + f] = v;
            }
        }
        ds.spectrograms.push_back(s);
        ds.labels.push_back(label);
        ds.devices.push_back(device);
    }
    return ds;
}

}  // namespace dssdn
