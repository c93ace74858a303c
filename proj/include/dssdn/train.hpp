#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "dssdn/augment.hpp"
#include "dssdn/network.hpp"

namespace dssdn {

struct ManifestRecord {
    std::string path;  // spectrogram cache or wav
    int label = 0;
    std::string device;
    std::string city;
};

struct DatasetManifest {
    std::vector<ManifestRecord> records;

    static DatasetManifest load_csv(const std::string& path);
    void save_csv(const std::string& path) const;
};

struct TrainConfig {
    int epochs = 200;
    int batch_size = 32;
    double base_lr = 1e-3;
    uint64_t seed = 0;
    double momentum = 0.0;      // plain SGD by default
    double weight_decay = 0.0;
    MixupConfig mixup;
    bool mixup_enabled = true;
    SpecAugmentConfig spec_augment_cfg;
    bool spec_augment_enabled = true;
    bool spectrum_correction_enabled = true;
    std::string checkpoint_dir;

    void validate() const;
};

struct Metrics {
    double accuracy = 0.0;
    std::vector<std::vector<int64_t>> confusion;  // [true][pred]
    std::vector<std::pair<std::string, double>> per_device_accuracy;
};

struct EpochLog {
    int epoch = 0;
    double lr = 0.0;
    double train_loss = 0.0;
    std::optional<double> val_accuracy;
};

// In-memory dataset: one spectrogram tensor (time, n_mels) per record.
struct Dataset {
    std::vector<Tensor> spectrograms;
    std::vector<int> labels;
    std::vector<std::string> devices;

    static Dataset load(const DatasetManifest& manifest);
    int n_classes() const { return 10; }
};

// lr = 0.5 * base_lr * (1 + cos(pi * step / total_steps)); clamps past the end.
double cosine_lr(int64_t step, int64_t total_steps, double base_lr);

// p <- p - lr * g for every parameter; grads cleared afterwards.
void sgd_step(const std::vector<Tensor>& params, double lr);

// cross-entropy + ortho_lambda * sum of OSC m-layer penalties.
Tensor total_loss(const Tensor& logits, const Tensor& targets, const DSSDNModel& model);

struct TrainResult {
    std::vector<EpochLog> logs;
    std::string final_checkpoint;
};

TrainResult train(DSSDNModel& model, const TrainConfig& config, const Dataset& train_set,
                  const Dataset* val_set = nullptr, int start_epoch = 0,
                  std::ostream* log_stream = nullptr);

Metrics evaluate(const DSSDNModel& model, const Dataset& dataset);

// Synthetic 10-class toy corpus: class k is a band-limited energy pattern.
Dataset make_synthetic_dataset(int n_samples, uint64_t seed, int time_frames = 40,
                               int n_mels = 32, int n_devices = 3);

}  // namespace dssdn
