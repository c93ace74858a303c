#pragma once

#include <random>
#include <utility>
#include <vector>

#include "dssdn/tensor.hpp"

namespace dssdn {

struct MixupConfig {
    double alpha = 0.4;
    // Every batch for the first half of training, probability 0.5 thereafter.
    bool active(int epoch, int total_epochs, std::mt19937_64& rng) const;
};

struct SpecAugmentConfig {
    int n_time_masks = 2;
    int n_freq_masks = 2;
    int max_mask_width = 2;
};

struct SpectrumCorrector {
    std::vector<double> reference;   // per-mel-bin mean, linear power domain
    std::vector<double> device_a;    // device-A per-mel-bin mean
    std::vector<double> correction;  // reference / device_a
};

double sample_beta(double alpha, std::mt19937_64& rng);

// lambda ~ Beta(alpha, alpha); convex mix of spectrograms and labels.
std::pair<Tensor, Tensor> mixup(const Tensor& x_i, const Tensor& x_j,
                                const Tensor& y_i, const Tensor& y_j, double alpha,
                                std::mt19937_64& rng);
std::pair<Tensor, Tensor> mixup_with_lambda(const Tensor& x_i, const Tensor& x_j,
                                            const Tensor& y_i, const Tensor& y_j,
                                            double lambda);

// Time/frequency masks filled with the spectrogram mean. x: (time, n_mels).
Tensor spec_augment(const Tensor& x, const SpecAugmentConfig& config, std::mt19937_64& rng);

// per_device_means: (device id, per-mel-bin mean linear power spectrum).
// Reference = unweighted mean over non-A devices; correction = ref / device_a.
SpectrumCorrector fit_spectrum_corrector(
    const std::vector<std::pair<std::string, std::vector<double>>>& per_device_means,
    const std::string& device_a_id = "a");

// x: linear-power mel spectrogram (time, n_mels) from device A.
Tensor apply_correction(const Tensor& x, const SpectrumCorrector& corrector);

}  // namespace dssdn
