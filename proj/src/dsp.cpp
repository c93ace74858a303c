#include "dssdn/dsp.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>

namespace dssdn {

void SpectrogramConfig::validate() const {
    if (n_fft < 2 || (n_fft & (n_fft - 1)) != 0) {
        throw ConfigError("n_fft must be a power of two, got " + std::to_string(n_fft));
    }
    if (hop < 1 || hop > n_fft) throw ConfigError("hop must be in [1, n_fft]");
    if (n_mels < 1 || n_mels > n_fft / 2 + 1) {
        throw ConfigError("n_mels must be in [1, n_fft/2 + 1]");
    }
    if (sample_rate < 1) throw ConfigError("sample_rate must be positive");
    if (log_floor <= 0.0) throw ConfigError("log_floor must be positive");
}

namespace {

uint32_t rd_u32le(const unsigned char* p) {
    return static_cast<uint32_t>(p[0]) | (static_cast<uint32_t>(p[1]) << 8) |
           (static_cast<uint32_t>(p[2]) << 16) | (static_cast<uint32_t>(p[3]) << 24);
}

uint16_t rd_u16le(const unsigned char* p) {
    return static_cast<uint16_t>(p[0] | (p[1] << 8));
}

}  // namespace

AudioClip load_wav(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open wav file: " + path);
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(is)),
                                     std::istreambuf_iterator<char>());
    if (bytes.size() < 12 || std::memcmp(bytes.data(), "RIFF", 4) != 0 ||
        std::memcmp(bytes.data() + 8, "WAVE", 4) != 0) {
        throw IoError("wav parse error: missing RIFF/WAVE header in " + path);
    }

    int format = 0, channels = 0, bits = 0, sample_rate = 0;
    const unsigned char* data = nullptr;
    size_t data_len = 0;

    size_t pos = 12;
    while (pos + 8 <= bytes.size()) {
        const char* id = reinterpret_cast<const char*>(bytes.data() + pos);
        const uint32_t chunk_len = rd_u32le(bytes.data() + pos + 4);
        if (pos + 8 + chunk_len > bytes.size()) {
            throw IoError("wav parse error: chunk '" + std::string(id, 4) +
                          "' overruns file in " + path);
        }
        if (std::memcmp(id, "fmt ", 4) == 0) {
            if (chunk_len < 16) throw IoError("wav parse error: short fmt chunk in " + path);
            const unsigned char* f = bytes.data() + pos + 8;
            format = rd_u16le(f);
            channels = rd_u16le(f + 2);
            sample_rate = static_cast<int>(rd_u32le(f + 4));
            bits = rd_u16le(f + 14);
        } else if (std::memcmp(id, "data", 4) == 0) {
            data = bytes.data() + pos + 8;
            data_len = chunk_len;
        }
        pos += 8 + chunk_len + (chunk_len & 1);  // chunks are word-aligned
    }
    if (channels < 1 || !data) throw IoError("wav parse error: missing fmt/data chunk in " + path);

    AudioClip clip;
    clip.sample_rate = sample_rate;
    const size_t bytes_per_sample = static_cast<size_t>(bits) / 8;
    if (bytes_per_sample == 0 || data_len % (bytes_per_sample * channels) != 0) {
        throw IoError("wav parse error: data chunk size not a whole number of frames in " + path);
    }
    const size_t n_frames = data_len / (bytes_per_sample * channels);
    if (n_frames == 0) throw IoError("wav parse error: empty data chunk in " + path);
    clip.samples.resize(n_frames);

    if (format == 1 && bits == 16) {
        for (size_t i = 0; i < n_frames; ++i) {
            double acc = 0.0;
            for (int c = 0; c < channels; ++c) {
                const unsigned char* p = data + (i * channels + c) * 2;
                const int16_t v = static_cast<int16_t>(p[0] | (p[1] << 8));
                acc += static_cast<double>(v) / 32768.0;
            }
            clip.samples[i] = acc / channels;
        }
    } else if (format == 3 && bits == 32) {
        for (size_t i = 0; i < n_frames; ++i) {
            double acc = 0.0;
            for (int c = 0; c < channels; ++c) {
                float v;
                std::memcpy(&v, data + (i * channels + c) * 4, 4);
                acc += static_cast<double>(v);
            }
            clip.samples[i] = acc / channels;
        }
    } else {
        throw IoError("unsupported wav encoding (format=" + std::to_string(format) +
                      ", bits=" + std::to_string(bits) + ") in " + path);
    }
    return clip;
}

void fft_inplace(std::vector<std::complex<double>>& buf) {
    const size_t n = buf.size();
    if (n < 2 || (n & (n - 1)) != 0) throw UsageError("fft size must be a power of two");
    // bit reversal
    for (size_t i = 1, j = 0; i < n; ++i) {
        size_t bit = n >> 1;
        for (; j & bit; bit >>= 1) j ^= bit;
        j ^= bit;
        if (i < j) std::swap(buf[i], buf[j]);
    }
    for (size_t len = 2; len <= n; len <<= 1) {
        const double ang = -2.0 * std::numbers::pi / static_cast<double>(len);
        const std::complex<double> wlen(std::cos(ang), std::sin(ang));
        for (size_t i = 0; i < n; i += len) {
            std::complex<double> w(1.0, 0.0);
            for (size_t j = 0; j < len / 2; ++j) {
                const std::complex<double> u = buf[i + j];
                const std::complex<double> v = buf[i + j + len / 2] * w;
                buf[i + j] = u + v;
                buf[i + j + len / 2] = u - v;
                w *= wlen;
            }
        }
    }
}

namespace {

// reflect padding without edge repetition; valid for any offset
double sample_reflect(const std::vector<double>& s, int64_t i) {
    const int64_t n = static_cast<int64_t>(s.size());
    if (n == 1) return s[0];
    const int64_t period = 2 * (n - 1);
    int64_t m = i % period;
    if (m < 0) m += period;
    if (m >= n) m = period - m;
    return s[static_cast<size_t>(m)];
}

}  // namespace

Tensor stft_power(const AudioClip& clip, const SpectrogramConfig& config) {
    config.validate();
    if (clip.samples.empty()) throw ValidationError("stft_power: empty clip");
    const int n_fft = config.n_fft;
    const int hop = config.hop;
    const int n_bins = n_fft / 2 + 1;
    const int64_t len = static_cast<int64_t>(clip.samples.size());
    const int frames = static_cast<int>(1 + len / hop);

    std::vector<double> window(static_cast<size_t>(n_fft));
    for (int i = 0; i < n_fft; ++i) {
        window[static_cast<size_t>(i)] =
            0.5 * (1.0 - std::cos(2.0 * std::numbers::pi * i / n_fft));
    }

    Tensor out = Tensor::zeros({frames, n_bins});
    std::vector<std::complex<double>> buf(static_cast<size_t>(n_fft));
    for (int t = 0; t < frames; ++t) {
        const int64_t start = static_cast<int64_t>(t) * hop - n_fft / 2;  // center framing
        for (int i = 0; i < n_fft; ++i) {
            buf[static_cast<size_t>(i)] = {
                sample_reflect(clip.samples, start + i) * window[static_cast<size_t>(i)], 0.0};
        }
        fft_inplace(buf);
        for (int k = 0; k < n_bins; ++k) {
            out.data()[static_cast<size_t>(t) * n_bins + k] = std::norm(buf[static_cast<size_t>(k)]);
        }
    }
    return out;
}

Tensor mel_filterbank(const SpectrogramConfig& config) {
    config.validate();
    const int n_bins = config.n_fft / 2 + 1;
    const double nyquist = config.sample_rate / 2.0;
    const double bin_width = static_cast<double>(config.sample_rate) / config.n_fft;

    std::vector<double> edges(static_cast<size_t>(config.n_mels) + 2);
    const double mel_max = hz_to_mel(nyquist);
    for (size_t i = 0; i < edges.size(); ++i) {
        edges[i] = mel_to_hz(mel_max * static_cast<double>(i) / (config.n_mels + 1));
    }

    // Each weight is the mean of the triangle over the bin's frequency band
    // [f_k - w/2, f_k + w/2]; point sampling at bin centers would leave the
    // narrow low-frequency filters empty at this FFT resolution.
    Tensor fb = Tensor::zeros({config.n_mels, n_bins});
    for (int m = 0; m < config.n_mels; ++m) {
        const double l = edges[static_cast<size_t>(m)];
        const double c = edges[static_cast<size_t>(m) + 1];
        const double r = edges[static_cast<size_t>(m) + 2];
        bool any = false;
        for (int k = 0; k < n_bins; ++k) {
            const double a = k * bin_width - bin_width / 2.0;
            const double b = k * bin_width + bin_width / 2.0;
            // exact integral of the clamped triangle over [a, b]
            auto tri = [&](double f) {
                if (f <= l || f >= r) return 0.0;
                return f < c ? (f - l) / (c - l) : (r - f) / (r - c);
            };
            double integral = 0.0;
            double pts[5] = {a, std::clamp(l, a, b), std::clamp(c, a, b), std::clamp(r, a, b), b};
            std::sort(pts, pts + 5);
            for (int s = 0; s < 4; ++s) {
                const double x0 = pts[s], x1 = pts[s + 1];
                if (x1 > x0) integral += 0.5 * (tri(x0) + tri(x1)) * (x1 - x0);
            }
            const double w = integral / bin_width;
            if (w > 0.0) any = true;
            fb.data()[static_cast<size_t>(m) * n_bins + k] = w;
        }
        if (!any) {
            throw ConfigError("mel filter " + std::to_string(m) +
                              " is empty at this FFT resolution; reduce n_mels");
        }
    }
    return fb;
}

LogMelSpectrogram log_mel(const AudioClip& clip, const SpectrogramConfig& config) {
    Tensor power = stft_power(clip, config);          // (frames, n_bins)
    Tensor fb = mel_filterbank(config);               // (n_mels, n_bins)
    const int frames = power.dim(0), n_bins = power.dim(1), n_mels = fb.dim(0);
    Tensor out = Tensor::zeros({frames, n_mels});
    for (int t = 0; t < frames; ++t) {
        for (int m = 0; m < n_mels; ++m) {
            double acc = 0.0;
            for (int k = 0; k < n_bins; ++k) {
                acc += fb.data()[static_cast<size_t>(m) * n_bins + k] *
                       power.data()[static_cast<size_t>(t) * n_bins + k];
            }
            out.data()[static_cast<size_t>(t) * n_mels + m] = std::log(acc + config.log_floor);
        }
    }
    if (config.normalize) {
        for (int m = 0; m < n_mels; ++m) {
            double mean = 0.0, var = 0.0;
            for (int t = 0; t < frames; ++t) mean += out.data()[static_cast<size_t>(t) * n_mels + m];
            mean /= frames;
            for (int t = 0; t < frames; ++t) {
                const double d = out.data()[static_cast<size_t>(t) * n_mels + m] - mean;
                var += d * d;
            }
            const double sd = std::sqrt(var / frames + 1e-12);
            for (int t = 0; t < frames; ++t) {
                auto& v = out.data()[static_cast<size_t>(t) * n_mels + m];
                v = (v - mean) / sd;
            }
        }
    }
    return {out, config};
}

namespace {
constexpr char kCacheMagic[4] = {'D', 'S', 'S', 'D'};
constexpr uint8_t kCacheVersion = 1;
}  // namespace

void cache_write(const std::string& path, const Tensor& spectrogram) {
    if (spectrogram.rank() != 2) {
        throw DimensionError("cache_write expects (time_frames, n_mels), got " +
                             shape_str(spectrogram.shape()));
    }
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open cache for writing: " + path);
    os.write(kCacheMagic, 4);
    os.put(static_cast<char>(kCacheVersion));
    auto put_u32 = [&](uint32_t v) {
        unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                              static_cast<unsigned char>(v >> 16),
                              static_cast<unsigned char>(v >> 24)};
        os.write(reinterpret_cast<const char*>(b), 4);
    };
    put_u32(static_cast<uint32_t>(spectrogram.dim(0)));
    put_u32(static_cast<uint32_t>(spectrogram.dim(1)));
    for (double v : spectrogram.data()) {
        const float f = static_cast<float>(v);
        uint32_t bits;
        std::memcpy(&bits, &f, 4);
        put_u32(bits);
    }
    if (!os) throw IoError("cache write failed: " + path);
}

Tensor cache_read(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open cache: " + path);
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, kCacheMagic, 4) != 0) {
        throw IoError("cache corrupt: magic mismatch in " + path);
    }
    const int version = is.get();
    if (version != kCacheVersion) {
        throw IoError("cache corrupt: unsupported version in " + path);
    }
    auto get_u32 = [&]() {
        unsigned char b[4];
        is.read(reinterpret_cast<char*>(b), 4);
        if (!is) throw IoError("cache corrupt: truncated file " + path);
        return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
               (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
    };
    const uint32_t frames = get_u32();
    const uint32_t n_mels = get_u32();
    if (frames == 0 || n_mels == 0) throw IoError("cache corrupt: zero-length payload in " + path);
    Tensor out = Tensor::zeros({static_cast<int>(frames), static_cast<int>(n_mels)});
    for (double& v : out.data()) {
        const uint32_t bits = get_u32();
        float f;
        std::memcpy(&f, &bits, 4);
        v = static_cast<double>(f);
    }
    return out;
}

}  // namespace dssdn
