#pragma once

#include <complex>
#include <cstdint>
#include <string>
#include <vector>

#include "dssdn/tensor.hpp"

namespace dssdn {

struct AudioClip {
    std::vector<double> samples;  // mono, [-1, 1]
    int sample_rate = 0;
};

struct SpectrogramConfig {
    int n_fft = 2048;
    int hop = 1024;
    int n_mels = 256;
    int sample_rate = 44100;
    double log_floor = 1e-10;
    bool normalize = false;  // optional per-feature normalization, off by default

    void validate() const;
};

struct LogMelSpectrogram {
    Tensor values;  // (time_frames, n_mels)
    SpectrogramConfig config;
};

// PCM 16-bit or float-32 WAV; stereo is averaged to mono.
AudioClip load_wav(const std::string& path);

// In-place iterative radix-2 FFT; n must be a power of two.
void fft_inplace(std::vector<std::complex<double>>& buf);

// Center-padded (reflect) framing, Hann window, |FFT|^2 over non-negative
// frequencies. Output: (1 + len/hop, n_fft/2 + 1).
Tensor stft_power(const AudioClip& clip, const SpectrogramConfig& config);

// Triangular filters on the HTK mel scale, band edges 0..sr/2.
// Output: (n_mels, n_fft/2 + 1).
Tensor mel_filterbank(const SpectrogramConfig& config);

inline double hz_to_mel(double f) { return 2595.0 * std::log10(1.0 + f / 700.0); }
inline double mel_to_hz(double m) { return 700.0 * (std::pow(10.0, m / 2595.0) - 1.0); }

// log(mel . power + log_floor), natural log.
LogMelSpectrogram log_mel(const AudioClip& clip, const SpectrogramConfig& config);

// Cache format: magic "DSSD", version u8, u32 LE time_frames, u32 LE n_mels,
// then f32 LE values row-major (time major).
void cache_write(const std::string& path, const Tensor& spectrogram);
Tensor cache_read(const std::string& path);

}  // namespace dssdn
