#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "dssdn/layers.hpp"

namespace dssdn {

enum class Variant { Large, Middle, Small, DLO, DLB };
enum class OperatorKind { SC, OSC, SPC, PlainConv };

Variant variant_from_string(const std::string& name);
std::string variant_name(Variant v);

struct NetworkConfig {
    Variant variant = Variant::Large;
    int n_blocks = 5;
    std::vector<int> stage_channels = {56, 56, 56, 56, 56};
    double split_ratio = 0.5;
    int distill_depth = 3;
    int n_classes = 10;
    double spc_touched_fraction = 0.25;
    double ortho_lambda = 1e-4;
    uint64_t seed = 0;

    void validate() const;
    uint64_t digest() const;

    static NetworkConfig tiny(Variant v, int channels = 8, uint64_t seed = 0);
};

// One frequency-split distillation block. Low band: distill_depth 1x1 convs;
// high band: distill_depth DSSO layers; re-splice, ECA, residual add.
struct DSSDBlock {
    OperatorKind op_kind = OperatorKind::SC;
    int channels = 0;
    double split_ratio = 0.5;
    std::vector<Conv2d> low_path;
    std::vector<SCLayer> sc_layers;
    std::vector<OSCLayer> osc_layers;
    std::vector<SPCLayer> spc_layers;
    std::vector<Conv2d> plain_layers;  // DL-O ablation: 3x3 convs in the high path
    ECALayer eca;

    DSSDBlock(OperatorKind kind, int channels, double split_ratio, int depth,
              double spc_fraction, std::mt19937_64& rng);

    Tensor forward(const Tensor& x) const;
    int64_t param_count() const;
    void collect(const std::string& prefix, std::vector<NamedParam>& out) const;
};

// DL-B ablation block: a single 3x3 full conv + ReLU, no split/ECA/residual.
struct PlainBlock {
    Conv2d conv;
    PlainBlock(int channels, std::mt19937_64& rng);
    Tensor forward(const Tensor& x) const;
};

struct DSSDNModel {
    NetworkConfig config;
    Conv2d stem;  // 1 -> stage_channels[0]
    std::vector<DSSDBlock> blocks;
    std::vector<PlainBlock> plain_blocks;  // DL-B only
    ECALayer head_eca;
    Linear classifier;

    // (b, 1, t, f) -> (b, n_classes). Also exposes per-block fused features
    // via forward_with_fusion for tests.
    Tensor forward(const Tensor& x) const;
    Tensor forward_no_fusion(const Tensor& x) const;  // wires only block 5 to the head

    // Sum of ortho penalties over all OSC m-layers; zero tensor otherwise.
    Tensor ortho_penalty_sum() const;

    std::vector<NamedParam> named_parameters() const;
    std::vector<Tensor> parameters() const;
    int64_t param_count() const;

  private:
    Tensor run_backbone(const Tensor& x, std::vector<Tensor>& block_outputs) const;
    Tensor head(const Tensor& fused) const;
};

DSSDNModel build_network(const NetworkConfig& config);

// Checkpoint: magic "DSSW", version u8, config digest u64 LE, then per
// parameter: u32 name length, name bytes, u32 rank, u32 dims, f32 LE values.
void save_checkpoint(const DSSDNModel& model, const std::string& path);
void load_checkpoint(DSSDNModel& model, const std::string& path);
// Round every parameter through f32, so in-memory state matches what a
// checkpoint written now would load back.
void quantize_params_f32(DSSDNModel& model);

}  // namespace dssdn
