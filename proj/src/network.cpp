#include "dssdn/network.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

namespace dssdn {

Variant variant_from_string(const std::string& name) {
    std::string n;
    for (char c : name) n += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    if (n == "large") return Variant::Large;
    if (n == "middle") return Variant::Middle;
    if (n == "small") return Variant::Small;
    if (n == "dl-o" || n == "dlo") return Variant::DLO;
    if (n == "dl-b" || n == "dlb") return Variant::DLB;
    throw ConfigError("unknown variant '" + name + "' (large|middle|small|dl-o|dl-b)");
}

std::string variant_name(Variant v) {
    switch (v) {
        case Variant::Large: return "large";
        case Variant::Middle: return "middle";
        case Variant::Small: return "small";
        case Variant::DLO: return "dl-o";
        case Variant::DLB: return "dl-b";
    }
    return "?";
}

void NetworkConfig::validate() const {
    if (n_blocks < 1) throw ConfigError("n_blocks must be >= 1");
    if (static_cast<int>(stage_channels.size()) != n_blocks) {
        throw ConfigError("stage_channels must list one width per block");
    }
    for (int c : stage_channels) {
        if (c < 1) throw ConfigError("stage channel width must be >= 1");
    }
    // Blocks preserve channel count; widths must be uniform.
    for (int c : stage_channels) {
        if (c != stage_channels[0]) {
            throw ConfigError("stage_channels must be uniform (channel growth lives in the stem)");
        }
    }
    if (split_ratio <= 0.0 || split_ratio >= 1.0) {
        throw ConfigError("split_ratio must be in (0, 1)");
    }
    if (distill_depth < 1) throw ConfigError("distill_depth must be >= 1");
    if (n_classes < 2) throw ConfigError("n_classes must be >= 2");
    if (spc_touched_fraction <= 0.0 || spc_touched_fraction > 1.0) {
        throw ConfigError("spc_touched_fraction must be in (0, 1]");
    }
}

uint64_t NetworkConfig::digest() const {
    std::string s = variant_name(variant) + "|" + std::to_string(n_blocks) + "|";
    for (int c : stage_channels) s += std::to_string(c) + ",";
    s += "|" + std::to_string(split_ratio) + "|" + std::to_string(distill_depth) + "|" +
         std::to_string(n_classes) + "|" + std::to_string(spc_touched_fraction);
    uint64_t h = 1469598103934665603ull;  // FNV-1a
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

NetworkConfig NetworkConfig::tiny(Variant v, int channels, uint64_t seed) {
    NetworkConfig cfg;
    cfg.variant = v;
    cfg.stage_channels.assign(static_cast<size_t>(cfg.n_blocks), channels);
    cfg.distill_depth = 2;
    cfg.seed = seed;
    return cfg;
}

namespace {

OperatorKind operator_for(Variant v) {
    switch (v) {
        case Variant::Large: return OperatorKind::SC;
        case Variant::Middle: return OperatorKind::SPC;
        case Variant::Small: return OperatorKind::OSC;
        case Variant::DLO: return OperatorKind::PlainConv;
        case Variant::DLB: return OperatorKind::PlainConv;
    }
    return OperatorKind::SC;
}

}  // namespace

DSSDBlock::DSSDBlock(OperatorKind kind, int channels, double split_ratio, int depth,
                     double spc_fraction, std::mt19937_64& rng)
    : op_kind(kind), channels(channels), split_ratio(split_ratio) {
    for (int d = 0; d < depth; ++d) {
        low_path.emplace_back(channels, channels, 1, 1, ops::IntPair{0, 0}, 1, rng);
        switch (kind) {
            case OperatorKind::SC: sc_layers.emplace_back(channels, channels, rng); break;
            case OperatorKind::OSC:
                osc_layers.emplace_back(channels, channels,
                                        OSCLayer::default_mid_channels(channels, channels), rng);
                break;
            case OperatorKind::SPC:
                spc_layers.emplace_back(channels, channels, spc_fraction, rng);
                break;
            case OperatorKind::PlainConv:
                plain_layers.emplace_back(channels, channels, 3, 3, ops::IntPair{1, 1}, 1, rng);
                break;
        }
    }
    eca = ECALayer(channels, rng);
}

Tensor DSSDBlock::forward(const Tensor& x) const {
    const int f = x.dim(3);
    if (f < 2) throw ConfigError("DSSDB needs frequency dim >= 2, got " + std::to_string(f));
    const int split_index =
        std::clamp(static_cast<int>(std::lround(split_ratio * f)), 1, f - 1);
    auto [low, high] = ops::split_frequency(x, split_index);
    for (size_t d = 0; d < low_path.size(); ++d) {
        low = ops::relu(low_path[d].forward(low));
        switch (op_kind) {
            case OperatorKind::SC: high = ops::relu(sc_layers[d].forward(high)); break;
            case OperatorKind::OSC: high = ops::relu(osc_layers[d].forward(high)); break;
            case OperatorKind::SPC: high = ops::relu(spc_layers[d].forward(high)); break;
            case OperatorKind::PlainConv:
                high = ops::relu(plain_layers[d].forward(high));
                break;
        }
    }
    Tensor spliced = ops::concat_frequency(low, high);
    return ops::add(eca.forward(spliced), x);
}

int64_t DSSDBlock::param_count() const {
    int64_t n = eca.param_count();
    for (const auto& l : low_path) n += l.param_count();
    for (const auto& l : sc_layers) n += l.param_count();
    for (const auto& l : osc_layers) n += l.param_count();
    for (const auto& l : spc_layers) n += l.param_count();
    for (const auto& l : plain_layers) n += l.param_count();
    return n;
}

void DSSDBlock::collect(const std::string& prefix, std::vector<NamedParam>& out) const {
    for (size_t d = 0; d < low_path.size(); ++d) {
        const std::string sd = std::to_string(d);
        low_path[d].collect(prefix + ".low" + sd, out);
        if (op_kind == OperatorKind::SC) sc_layers[d].collect(prefix + ".sc" + sd, out);
        if (op_kind == OperatorKind::OSC) osc_layers[d].collect(prefix + ".osc" + sd, out);
        if (op_kind == OperatorKind::SPC) spc_layers[d].collect(prefix + ".spc" + sd, out);
        if (op_kind == OperatorKind::PlainConv)
            plain_layers[d].collect(prefix + ".conv" + sd, out);
    }
    eca.collect(prefix + ".eca", out);
}

PlainBlock::PlainBlock(int channels, std::mt19937_64& rng)
    : conv(channels, channels, 3, 3, ops::IntPair{1, 1}, 1, rng) {}

Tensor PlainBlock::forward(const Tensor& x) const { return ops::relu(conv.forward(x)); }

DSSDNModel build_network(const NetworkConfig& config) {
    config.validate();
    DSSDNModel m;
    m.config = config;
    std::mt19937_64 rng(config.seed ^ 0x5353444eull);  // parameter init stream
    const int c = config.stage_channels[0];
    m.stem = Conv2d(1, c, 1, 1, {0, 0}, 1, rng);
    for (int i = 0; i < config.n_blocks; ++i) {
        if (config.variant == Variant::DLB) {
            m.plain_blocks.emplace_back(c, rng);
        } else {
            m.blocks.emplace_back(operator_for(config.variant), c, config.split_ratio,
                                  config.distill_depth, config.spc_touched_fraction, rng);
        }
    }
    m.head_eca = ECALayer(c * config.n_blocks, rng);
    m.classifier = Linear(c * config.n_blocks, config.n_classes, rng);
    return m;
}

Tensor DSSDNModel::run_backbone(const Tensor& x, std::vector<Tensor>& block_outputs) const {
    if (x.rank() != 4 || x.dim(1) != 1) {
        throw DimensionError("model input must be (batch, 1, time, freq), got " +
                             shape_str(x.shape()));
    }
    Tensor h = ops::avg_pool_2x2(stem.forward(x));
    const int n = config.n_blocks;
    for (int i = 0; i < n; ++i) {
        Tensor out = config.variant == Variant::DLB ? plain_blocks[static_cast<size_t>(i)].forward(h)
                                                    : blocks[static_cast<size_t>(i)].forward(h);
        block_outputs.push_back(out);
        h = (i + 1 < n) ? ops::avg_pool_2x2(out) : out;
    }
    return h;
}

Tensor DSSDNModel::head(const Tensor& fused) const {
    Tensor a = head_eca.forward(fused);
    return classifier.forward(ops::global_avg_pool(a));
}

Tensor DSSDNModel::forward(const Tensor& x) const {
    std::vector<Tensor> outs;
    Tensor last = run_backbone(x, outs);
    const int th = last.dim(2), tw = last.dim(3);
    Tensor fused;
    for (const Tensor& o : outs) {
        Tensor p = (o.dim(2) == th && o.dim(3) == tw) ? o : ops::adaptive_avg_pool(o, th, tw);
        fused = fused.defined() ? ops::concat_channels(fused, p) : p;
    }
    return head(fused);
}

Tensor DSSDNModel::forward_no_fusion(const Tensor& x) const {
    std::vector<Tensor> outs;
    Tensor last = run_backbone(x, outs);
    // pad channels by repeating block-5 output so the head shapes still fit
    Tensor fused = last;
    for (int i = 1; i < config.n_blocks; ++i) fused = ops::concat_channels(fused, last);
    return head(fused);
}

Tensor DSSDNModel::ortho_penalty_sum() const {
    Tensor total;
    for (const auto& b : blocks) {
        for (const auto& l : b.osc_layers) {
            Tensor p = l.penalty();
            total = total.defined() ? ops::add(total, p) : p;
        }
    }
    if (!total.defined()) total = Tensor::zeros({1});
    return total;
}

std::vector<NamedParam> DSSDNModel::named_parameters() const {
    std::vector<NamedParam> out;
    stem.collect("stem", out);
    for (size_t i = 0; i < blocks.size(); ++i) {
        blocks[i].collect("block" + std::to_string(i), out);
    }
    for (size_t i = 0; i < plain_blocks.size(); ++i) {
        plain_blocks[i].conv.collect("block" + std::to_string(i) + ".conv", out);
    }
    head_eca.collect("head.eca", out);
    classifier.collect("head.fc", out);
    return out;
}

std::vector<Tensor> DSSDNModel::parameters() const {
    std::vector<Tensor> out;
    for (auto& np : named_parameters()) out.push_back(np.tensor);
    return out;
}

int64_t DSSDNModel::param_count() const {
    int64_t n = 0;
    for (const auto& np : named_parameters()) n += np.tensor.size();
    return n;
}

namespace {

void write_u32(std::ostream& os, uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16),
                          static_cast<unsigned char>(v >> 24)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

void write_u64(std::ostream& os, uint64_t v) {
    write_u32(os, static_cast<uint32_t>(v));
    write_u32(os, static_cast<uint32_t>(v >> 32));
}

uint32_t read_u32(std::istream& is) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    if (!is) throw IoError("checkpoint truncated");
    return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
           (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
}

uint64_t read_u64(std::istream& is) {
    uint64_t lo = read_u32(is);
    uint64_t hi = read_u32(is);
    return lo | (hi << 32);
}

void write_f32(std::ostream& os, float v) {
    static_assert(sizeof(float) == 4);
    uint32_t bits;
    std::memcpy(&bits, &v, 4);
    write_u32(os, bits);
}

float read_f32(std::istream& is) {
    uint32_t bits = read_u32(is);
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
}

constexpr char kCkptMagic[4] = {'D', 'S', 'S', 'W'};
constexpr uint8_t kCkptVersion = 1;

}  // namespace

void save_checkpoint(const DSSDNModel& model, const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open checkpoint for writing: " + path);
    os.write(kCkptMagic, 4);
    os.put(static_cast<char>(kCkptVersion));
    write_u64(os, model.config.digest());
    for (const auto& np : model.named_parameters()) {
        write_u32(os, static_cast<uint32_t>(np.name.size()));
        os.write(np.name.data(), static_cast<std::streamsize>(np.name.size()));
        write_u32(os, static_cast<uint32_t>(np.tensor.rank()));
        for (int d : np.tensor.shape()) write_u32(os, static_cast<uint32_t>(d));
        for (double v : np.tensor.data()) write_f32(os, static_cast<float>(v));
    }
    if (!os) throw IoError("checkpoint write failed: " + path);
}

void load_checkpoint(DSSDNModel& model, const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open checkpoint: " + path);
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, kCkptMagic, 4) != 0) {
        throw IoError("checkpoint magic mismatch: " + path);
    }
    const int version = is.get();
    if (version != kCkptVersion) {
        throw IoError("unsupported checkpoint version " + std::to_string(version));
    }
    const uint64_t digest = read_u64(is);
    if (digest != model.config.digest()) {
        throw ConfigError("checkpoint config digest does not match the constructed model");
    }
    for (auto& np : model.named_parameters()) {
        const uint32_t name_len = read_u32(is);
        std::string name(name_len, '\0');
        is.read(name.data(), name_len);
        if (!is || name != np.name) {
            throw IoError("checkpoint parameter order mismatch at '" + np.name + "'");
        }
        const uint32_t rank = read_u32(is);
        if (rank != static_cast<uint32_t>(np.tensor.rank())) {
            throw IoError("checkpoint rank mismatch for '" + name + "'");
        }
        for (int d : np.tensor.shape()) {
            if (read_u32(is) != static_cast<uint32_t>(d)) {
                throw IoError("checkpoint dim mismatch for '" + name + "'");
            }
        }
        for (double& v : np.tensor.data()) v = static_cast<double>(read_f32(is));
    }
}

void quantize_params_f32(DSSDNModel& model) {
    for (auto& np : model.named_parameters()) {
        for (double& v : np.tensor.data()) v = static_cast<double>(static_cast<float>(v));
    }
}

}  // namespace dssdn
