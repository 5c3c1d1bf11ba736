#pragma once

#include <string>
#include <vector>

#include "semcomm/autograd.hpp"
#include "semcomm/label_map.hpp"
#include "semcomm/optim.hpp"
#include "semcomm/params.hpp"

namespace semcomm {

// Transmitter-side segmentation network: residual backbone (output stride 8),
// 4-bin pyramid pooling with channel+spatial attention on each branch, and a
// fuse/classify/upsample head.
struct SegNetConfig {
    int num_classes = 21;
    int base_channels = 16;                    // 64 reproduces the full-size layout
    std::vector<int> stage_blocks = {1, 1, 1, 1};  // full size: {3,4,6,3}
    int output_stride = 8;
    std::vector<int> ppm_bins = {1, 2, 3, 6};
    int attention_reduction = 4;
    int spatial_kernel = 7;

    void validate() const;
    int backbone_channels() const { return 32 * base_channels; }
    int head_channels() const { return 8 * base_channels; }
};

// Replaces the convolution executor during inference (used by the INT8 path
// and by calibration observers). `name` is the kernel's parameter name.
struct ConvHook {
    virtual ~ConvHook() = default;
    virtual Tensor conv(const std::string& name, const Tensor& input, const Tensor& kernel,
                        const Tensor* bias, const ConvSpec& spec) = 0;
};

struct SegNetRun {
    Graph& g;
    ParamStore& ps;
    const SegNetConfig& cfg;
    ConvHook* hook = nullptr;
};

void init_segnet_params(ParamStore& ps, const SegNetConfig& cfg, Rng& rng);

// kind=conv projects the skip with a strided 1x1 convolution; kind=identity
// requires matching channel counts.
enum class BlockKind { Identity, Conv };
Var residual_block_forward(SegNetRun& r, Var x, const std::string& prefix, int in_ch, int planes,
                           int stride, int dilation, BlockKind kind);

Var backbone_forward(SegNetRun& r, Var image);
Var pyramid_pool_forward(SegNetRun& r, Var features);
Var channel_attention_forward(SegNetRun& r, Var u, const std::string& prefix);
Var spatial_attention_forward(SegNetRun& r, Var u, const std::string& prefix);
Var seg_head_forward(SegNetRun& r, Var features, int out_h, int out_w);
Var segnet_logits(SegNetRun& r, Var image);

LabelMap segment(const Tensor& image, const SegNetConfig& cfg, ParamStore& ps,
                 ConvHook* hook = nullptr);

struct SegLossWeights {
    float ce = 1.0f;
    float dice = 1.0f;
    float focal = 1.0f;
};
Var seg_total_loss(Graph& g, Var logits, const LabelMap& target,
                   const SegLossWeights& w = {});

// One forward+backward+Adam update over the batch; returns the pre-update
// mean loss.
float train_seg_step(ParamStore& ps, const SegNetConfig& cfg, AdamOptimizer& opt,
                     const std::vector<const Tensor*>& images,
                     const std::vector<const LabelMap*>& labels,
                     const SegLossWeights& w = {});

// Shape arithmetic of the full chain without running any tensor math:
// image -> backbone -> pyramid pooling -> logits.
struct SegNetShapes {
    std::vector<int> backbone;  // {Cb, H/8, W/8}
    std::vector<int> ppm;       // {2*Cb, H/8, W/8}
    std::vector<int> logits;    // {M, H, W}
};
SegNetShapes segnet_shape_chain(const SegNetConfig& cfg, int h, int w);

}  // namespace semcomm
