#include "dssdn/augment.hpp"

#include <algorithm>
#include <cmath>

namespace dssdn {

bool MixupConfig::active(int epoch, int total_epochs, std::mt19937_64& rng) const {
    if (epoch < total_epochs / 2) return true;
    return std::uniform_real_distribution<double>(0.0, 1.0)(rng) < 0.5;
}

double sample_beta(double alpha, std::mt19937_64& rng) {
    if (alpha <= 0.0) throw ConfigError("mixup alpha must be positive");
    std::gamma_distribution<double> g(alpha, 1.0);
    const double a = g(rng);
    const double b = g(rng);
    if (a + b == 0.0) return 0.5;
    return a / (a + b);
}

std::pair<Tensor, Tensor> mixup_with_lambda(const Tensor& x_i, const Tensor& x_j,
                                            const Tensor& y_i, const Tensor& y_j,
                                            double lambda) {
    if (x_i.shape() != x_j.shape()) {
        throw DimensionError("mixup inputs differ: " + shape_str(x_i.shape()) + " vs " +
                             shape_str(x_j.shape()));
    }
    if (y_i.shape() != y_j.shape()) throw DimensionError("mixup label shapes differ");
    Tensor x = Tensor::zeros(x_i.shape());
    for (size_t k = 0; k < x.data().size(); ++k) {
        x.data()[k] = lambda * x_i.data()[k] + (1.0 - lambda) * x_j.data()[k];
    }
    Tensor y = Tensor::zeros(y_i.shape());
    for (size_t k = 0; k < y.data().size(); ++k) {
        y.data()[k] = lambda * y_i.data()[k] + (1.0 - lambda) * y_j.data()[k];
    }
    return {x, y};
}

std::pair<Tensor, Tensor> mixup(const Tensor& x_i, const Tensor& x_j, const Tensor& y_i,
                                const Tensor& y_j, double alpha, std::mt19937_64& rng) {
    return mixup_with_lambda(x_i, x_j, y_i, y_j, sample_beta(alpha, rng));
}

Tensor spec_augment(const Tensor& x, const SpecAugmentConfig& config, std::mt19937_64& rng) {
    if (x.rank() != 2) {
        throw DimensionError("spec_augment expects (time, n_mels), got " + shape_str(x.shape()));
    }
    const int t = x.dim(0), f = x.dim(1);
    if (config.max_mask_width > t || config.max_mask_width > f) {
        throw ValidationError("mask width exceeds spectrogram axis length");
    }
    double mean = 0.0;
    for (double v : x.data()) mean += v;
    mean /= static_cast<double>(x.size());

    Tensor out = x.clone();
    auto draw = [&rng](int lo, int hi) {
        return std::uniform_int_distribution<int>(lo, hi)(rng);
    };
    for (int m = 0; m < config.n_time_masks; ++m) {
        const int w = draw(0, config.max_mask_width);
        if (w == 0) continue;
        const int start = draw(0, t - w);
        for (int ti = start; ti < start + w; ++ti)
            for (int fi = 0; fi < f; ++fi)
                out.data()[static_cast<size_t>(ti) * f + fi] = mean;
    }
    for (int m = 0; m < config.n_freq_masks; ++m) {
        const int w = draw(0, config.max_mask_width);
        if (w == 0) continue;
        const int start = draw(0, f - w);
        for (int ti = 0; ti < t; ++ti)
            for (int fi = start; fi < start + w; ++fi)
                out.data()[static_cast<size_t>(ti) * f + fi] = mean;
    }
    return out;
}

SpectrumCorrector fit_spectrum_corrector(
    const std::vector<std::pair<std::string, std::vector<double>>>& per_device_means,
    const std::string& device_a_id) {
    SpectrumCorrector c;
    size_t n_bins = 0;
    int n_other = 0;
    for (const auto& [dev, mean] : per_device_means) {
        if (n_bins == 0) n_bins = mean.size();
        if (mean.size() != n_bins) {
            throw DimensionError("spectrum corrector: device mean length mismatch");
        }
        for (double v : mean) {
            if (v <= 0.0) throw ValidationError("spectrum corrector: non-positive mean entry");
        }
        if (dev == device_a_id) {
            c.device_a = mean;
        } else {
            if (c.reference.empty()) c.reference.assign(n_bins, 0.0);
            for (size_t i = 0; i < n_bins; ++i) c.reference[i] += mean[i];
            ++n_other;
        }
    }
    if (n_other == 0) throw ConfigError("spectrum corrector: no non-A device present");
    if (c.device_a.empty()) throw ConfigError("spectrum corrector: device A not present");
    for (double& v : c.reference) v /= n_other;
    c.correction.resize(n_bins);
    for (size_t i = 0; i < n_bins; ++i) c.correction[i] = c.reference[i] / c.device_a[i];
    return c;
}

Tensor apply_correction(const Tensor& x, const SpectrumCorrector& corrector) {
    if (x.rank() != 2 || static_cast<size_t>(x.dim(1)) != corrector.correction.size()) {
        throw DimensionError("apply_correction: spectrogram mel axis does not match corrector");
    }
    Tensor out = x.clone();
    const int t = x.dim(0), f = x.dim(1);
    for (int ti = 0; ti < t; ++ti)
        for (int fi = 0; fi < f; ++fi)
            out.data()[static_cast<size_t>(ti) * f + fi] *=
                corrector.correction[static_cast<size_t>(fi)];
    return out;
}

}  // namespace dssdn
