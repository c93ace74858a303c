#include "dssdn/complexity.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <sstream>

#include <nlohmann/json.hpp>

namespace dssdn {

namespace {

std::string human(int64_t n) {
    std::ostringstream os;
    os << std::fixed << std::setprecision(2);
    if (n >= 1000000000) {
        os << static_cast<double>(n) / 1e9 << "G";
    } else if (n >= 1000000) {
        os << static_cast<double>(n) / 1e6 << "M";
    } else if (n >= 1000) {
        os << static_cast<double>(n) / 1e3 << "K";
    } else {
        os << n;
        return os.str();
    }
    return os.str();
}

struct Walker {
    ComplexityReport& report;
    int64_t batch;

    void row(const std::string& path, const std::string& kind, int64_t params, int64_t macs) {
        report.rows.push_back({path, kind, params, macs * batch});
    }
};

}  // namespace

ComplexityReport analyze(const DSSDNModel& model, const Shape& input_shape) {
    if (input_shape.size() != 4 || input_shape[1] != 1) {
        throw DimensionError("analyze expects input shape (batch, 1, time, freq)");
    }
    ComplexityReport report;
    report.input_shape = input_shape;
    Walker w{report, input_shape[0]};

    const auto& cfg = model.config;
    int t = input_shape[2], f = input_shape[3];
    const int c = cfg.stage_channels[0];

    w.row("stem", "conv1x1", model.stem.param_count(), model.stem.macs(t, f));
    t = std::max(1, t / 2);  // pool after stem
    f = std::max(1, f / 2);

    for (int i = 0; i < cfg.n_blocks; ++i) {
        const std::string p = "block" + std::to_string(i);
        if (cfg.variant == Variant::DLB) {
            const auto& blk = model.plain_blocks[static_cast<size_t>(i)];
            w.row(p + ".conv", "conv3x3", blk.conv.param_count(), blk.conv.macs(t, f));
        } else {
            const auto& blk = model.blocks[static_cast<size_t>(i)];
            const int si = std::clamp(static_cast<int>(std::lround(blk.split_ratio * f)), 1, f - 1);
            const int f_high = f - si;
            for (int d = 0; d < cfg.distill_depth; ++d) {
                const std::string sd = std::to_string(d);
                const auto& low = blk.low_path[static_cast<size_t>(d)];
                w.row(p + ".low" + sd, "conv1x1", low.param_count(), low.macs(t, si));
                switch (blk.op_kind) {
                    case OperatorKind::SC: {
                        const auto& l = blk.sc_layers[static_cast<size_t>(d)];
                        w.row(p + ".sc" + sd, "sc", l.param_count(), l.macs(t, f_high));
                        break;
                    }
                    case OperatorKind::OSC: {
                        const auto& l = blk.osc_layers[static_cast<size_t>(d)];
                        w.row(p + ".osc" + sd, "osc", l.param_count(), l.macs(t, f_high));
                        break;
                    }
                    case OperatorKind::SPC: {
                        const auto& l = blk.spc_layers[static_cast<size_t>(d)];
                        w.row(p + ".spc" + sd, "spc", l.param_count(), l.macs(t, f_high));
                        break;
                    }
                    case OperatorKind::PlainConv: {
                        const auto& l = blk.plain_layers[static_cast<size_t>(d)];
                        w.row(p + ".conv" + sd, "conv3x3", l.param_count(), l.macs(t, f_high));
                        break;
                    }
                }
            }
            w.row(p + ".eca", "eca", blk.eca.param_count(), blk.eca.macs(c));
        }
        if (i + 1 < cfg.n_blocks) {
            t = std::max(1, t / 2);
            f = std::max(1, f / 2);
        }
    }

    const int fused_c = c * cfg.n_blocks;
    w.row("head.eca", "eca", model.head_eca.param_count(), model.head_eca.macs(fused_c));
    w.row("head.fc", "linear", model.classifier.param_count(), model.classifier.macs());

    for (const auto& r : report.rows) {
        report.total_params += r.params;
        report.total_macs += r.macs;
    }
    return report;
}

int64_t count_params(const DSSDNModel& model) { return model.param_count(); }

int64_t count_macs(const DSSDNModel& model, const Shape& input_shape) {
    return analyze(model, input_shape).total_macs;
}

std::string ComplexityReport::table() const {
    std::ostringstream os;
    size_t wpath = 10;
    for (const auto& r : rows) wpath = std::max(wpath, r.path.size());
    os << std::left << std::setw(static_cast<int>(wpath) + 2) << "layer" << std::setw(10)
       << "kind" << std::right << std::setw(12) << "params" << std::setw(16) << "macs"
       << "\n";
    for (const auto& r : rows) {
        os << std::left << std::setw(static_cast<int>(wpath) + 2) << r.path << std::setw(10)
           << r.kind << std::right << std::setw(12) << r.params << std::setw(16) << r.macs
           << "\n";
    }
    os << std::left << std::setw(static_cast<int>(wpath) + 2) << "TOTAL" << std::setw(10) << ""
       << std::right << std::setw(12) << total_params << std::setw(16) << total_macs << "\n";
    os << "params: " << human(total_params) << "  macs @" << shape_str(input_shape) << ": "
       << human(total_macs) << "\n";
    return os.str();
}

std::string ComplexityReport::to_json() const {
    nlohmann::json j;
    j["input_shape"] = input_shape;
    j["rows"] = nlohmann::json::array();
    for (const auto& r : rows) {
        j["rows"].push_back({{"path", r.path},
                             {"kind", r.kind},
                             {"params", r.params},
                             {"macs", r.macs}});
    }
    j["totals"] = {{"params", total_params}, {"macs", total_macs}};
    return j.dump(2);
}

}  // namespace dssdn
