#include "semcomm/segnet.hpp"

#include <cmath>

namespace semcomm {

namespace {

struct StagePlan {
    int planes;    // bottleneck width
    int stride;    // applied in the first block
    int dilation;
};

// Output stride 8: the first two stages downsample (stem and the pooled
// stage already give /4), the stride-2 stage lands on /8, and the last two
// stages hold the extent with dilated 3x3 convolutions.
std::vector<StagePlan> stage_plans(int base) {
    return {
        {base, 1, 1},
        {2 * base, 2, 1},
        {4 * base, 1, 2},
        {8 * base, 1, 4},
    };
}

void init_conv(ParamStore& ps, Rng& rng, const std::string& name, int out_c, int in_c, int kh,
               int kw) {
    const float std = std::sqrt(2.0f / static_cast<float>(in_c * kh * kw));
    ps.create(name, gaussian_tensor(rng, {out_c, in_c, kh, kw}, std));
}

void init_norm(ParamStore& ps, const std::string& prefix, int c) {
    ps.create(prefix + ".gamma", Tensor({c}, 1.0f));
    ps.create(prefix + ".beta", Tensor({c}, 0.0f));
    ps.create(prefix + ".running_mean", Tensor({c}, 0.0f), /*trainable=*/false);
    ps.create(prefix + ".running_var", Tensor({c}, 1.0f), /*trainable=*/false);
}

void init_bias(ParamStore& ps, const std::string& name, int c) {
    ps.create(name, Tensor({c}, 0.0f));
}

Var net_conv(SegNetRun& r, Var x, const std::string& wname, const std::string& bname,
             const ConvSpec& spec) {
    if (r.hook) {
        const Tensor* bias = bname.empty() ? nullptr : &r.ps.value(bname);
        return r.g.input(r.hook->conv(wname, r.g.value(x), r.ps.value(wname), bias, spec));
    }
    const Var w = r.g.param(r.ps, wname);
    const Var b = bname.empty() ? -1 : r.g.param(r.ps, bname);
    return conv2d(r.g, x, w, b, spec);
}

Var batch_norm(SegNetRun& r, Var x, const std::string& prefix) {
    const Var gamma = r.g.param(r.ps, prefix + ".gamma");
    const Var beta = r.g.param(r.ps, prefix + ".beta");
    return normalize(r.g, x, gamma, beta, NormKind::Batch, 1e-5f,
                     &r.ps.value(prefix + ".running_mean"),
                     &r.ps.value(prefix + ".running_var"));
}

Var conv_bn_relu(SegNetRun& r, Var x, const std::string& prefix, const ConvSpec& spec) {
    Var y = net_conv(r, x, prefix + ".w", "", spec);
    y = batch_norm(r, y, prefix + ".bn");
    return activate(r.g, y, ActKind::Relu);
}

}  // namespace

void SegNetConfig::validate() const {
    if (num_classes < 2 || num_classes > 255) {
        throw ContractError("SegNetConfig: num_classes must be in [2,255]");
    }
    if (base_channels < 1) throw ContractError("SegNetConfig: base_channels >= 1");
    if (stage_blocks.size() != 4) throw ContractError("SegNetConfig: four stages expected");
    for (int b : stage_blocks) {
        if (b < 1) throw ContractError("SegNetConfig: every stage needs >= 1 block");
    }
    if (output_stride != 8) throw ContractError("SegNetConfig: only output stride 8 is built");
    if (ppm_bins.size() != 4) {
        throw ContractError("SegNetConfig: pyramid pooling needs exactly four bins");
    }
    for (std::size_t i = 1; i < ppm_bins.size(); ++i) {
        if (ppm_bins[i] <= ppm_bins[i - 1]) {
            throw ContractError("SegNetConfig: ppm_bins must be strictly increasing");
        }
    }
}

void init_segnet_params(ParamStore& ps, const SegNetConfig& cfg, Rng& rng) {
    cfg.validate();
    const int B = cfg.base_channels;

    init_conv(ps, rng, "stem.conv.w", B, 3, 7, 7);
    init_norm(ps, "stem.bn", B);

    int in_ch = B;
    const auto plans = stage_plans(B);
    for (std::size_t s = 0; s < plans.size(); ++s) {
        const StagePlan& pl = plans[s];
        const int out_ch = 4 * pl.planes;
        for (int b = 0; b < cfg.stage_blocks[s]; ++b) {
            const std::string p = "s" + std::to_string(s) + ".b" + std::to_string(b) + ".";
            init_conv(ps, rng, p + "conv1.w", pl.planes, in_ch, 1, 1);
            init_norm(ps, p + "bn1", pl.planes);
            init_conv(ps, rng, p + "conv2.w", pl.planes, pl.planes, 3, 3);
            init_norm(ps, p + "bn2", pl.planes);
            init_conv(ps, rng, p + "conv3.w", out_ch, pl.planes, 1, 1);
            init_norm(ps, p + "bn3", out_ch);
            if (b == 0) {
                init_conv(ps, rng, p + "down.w", out_ch, in_ch, 1, 1);
                init_norm(ps, p + "down_bn", out_ch);
            }
            in_ch = out_ch;
        }
    }

    const int cb = cfg.backbone_channels();
    const int branch = cb / 4;
    const int squeezed = std::max(branch / cfg.attention_reduction, 1);
    for (std::size_t k = 0; k < cfg.ppm_bins.size(); ++k) {
        const std::string p = "ppm.br" + std::to_string(k) + ".";
        init_conv(ps, rng, p + "conv.w", branch, cb, 1, 1);
        init_norm(ps, p + "bn", branch);
        init_conv(ps, rng, p + "ca.fc1.w", squeezed, branch, 1, 1);
        init_bias(ps, p + "ca.fc1.b", squeezed);
        init_conv(ps, rng, p + "ca.fc2.w", branch, squeezed, 1, 1);
        init_bias(ps, p + "ca.fc2.b", branch);
        init_conv(ps, rng, p + "sa.conv.w", 1, 2, cfg.spatial_kernel, cfg.spatial_kernel);
        init_bias(ps, p + "sa.conv.b", 1);
    }

    init_conv(ps, rng, "head.fuse.w", cfg.head_channels(), 2 * cb, 3, 3);
    init_norm(ps, "head.fuse_bn", cfg.head_channels());
    init_conv(ps, rng, "head.cls.w", cfg.num_classes, cfg.head_channels(), 1, 1);
    init_bias(ps, "head.cls.b", cfg.num_classes);
}

Var residual_block_forward(SegNetRun& r, Var x, const std::string& prefix, int in_ch, int planes,
                           int stride, int dilation, BlockKind kind) {
    if (kind == BlockKind::Identity && in_ch != 4 * planes) {
        throw ShapeError("identity residual block needs matching channels");
    }
    Var y = net_conv(r, x, prefix + "conv1.w", "", {1, 0, 1});
    y = batch_norm(r, y, prefix + "bn1");
    y = activate(r.g, y, ActKind::Relu);
    y = net_conv(r, y, prefix + "conv2.w", "", {stride, dilation, dilation});
    y = batch_norm(r, y, prefix + "bn2");
    y = activate(r.g, y, ActKind::Relu);
    y = net_conv(r, y, prefix + "conv3.w", "", {1, 0, 1});
    y = batch_norm(r, y, prefix + "bn3");

    Var skip = x;
    if (kind == BlockKind::Conv || stride > 1) {
        skip = net_conv(r, x, prefix + "down.w", "", {stride, 0, 1});
        skip = batch_norm(r, skip, prefix + "down_bn");
    }
    return activate(r.g, add(r.g, y, skip), ActKind::Relu);
}

Var backbone_forward(SegNetRun& r, Var image) {
    const Tensor& img = r.g.value(image);
    if (img.rank() != 3 || img.dim(0) != 3) throw ShapeError("backbone wants a 3xHxW image");
    if (img.dim(1) % r.cfg.output_stride != 0 || img.dim(2) % r.cfg.output_stride != 0) {
        throw GeometryError("image extents must be divisible by the output stride");
    }

    Var x = net_conv(r, image, "stem.conv.w", "", {2, 3, 1});
    x = batch_norm(r, x, "stem.bn");
    x = activate(r.g, x, ActKind::Relu);
    x = pool2d(r.g, x, PoolKind::Max, 3, 2, 1);

    int in_ch = r.cfg.base_channels;
    const auto plans = stage_plans(r.cfg.base_channels);
    for (std::size_t s = 0; s < plans.size(); ++s) {
        const StagePlan& pl = plans[s];
        for (int b = 0; b < r.cfg.stage_blocks[s]; ++b) {
            const std::string p = "s" + std::to_string(s) + ".b" + std::to_string(b) + ".";
            const BlockKind kind = (b == 0) ? BlockKind::Conv : BlockKind::Identity;
            const int stride = (b == 0) ? pl.stride : 1;
            x = residual_block_forward(r, x, p, in_ch, pl.planes, stride, pl.dilation, kind);
            in_ch = 4 * pl.planes;
        }
    }
    return x;
}

Var channel_attention_forward(SegNetRun& r, Var u, const std::string& prefix) {
    Var z = adaptive_avg_pool2d(r.g, u, 1);  // squeeze: per-channel mean
    Var e = net_conv(r, z, prefix + "fc1.w", prefix + "fc1.b", {1, 0, 1});
    e = activate(r.g, e, ActKind::Relu);
    e = net_conv(r, e, prefix + "fc2.w", prefix + "fc2.b", {1, 0, 1});
    e = activate(r.g, e, ActKind::Sigmoid);
    return mul(r.g, u, e);  // scale: per-channel weighting
}

Var spatial_attention_forward(SegNetRun& r, Var u, const std::string& prefix) {
    Var stacked = concat_channels(r.g, channel_max(r.g, u), channel_mean(r.g, u));
    const int pad = r.cfg.spatial_kernel / 2;
    Var w = net_conv(r, stacked, prefix + "conv.w", prefix + "conv.b", {1, pad, 1});
    w = activate(r.g, w, ActKind::Sigmoid);
    return mul(r.g, u, w);
}

Var pyramid_pool_forward(SegNetRun& r, Var features) {
    const Tensor& f = r.g.value(features);
    const int h = f.dim(1), w = f.dim(2);
    if (std::min(h, w) < r.cfg.ppm_bins.back()) {
        throw GeometryError("pyramid pooling: largest bin exceeds feature extent");
    }
    Var out = features;
    for (std::size_t k = 0; k < r.cfg.ppm_bins.size(); ++k) {
        const std::string p = "ppm.br" + std::to_string(k) + ".";
        Var b = adaptive_avg_pool2d(r.g, features, r.cfg.ppm_bins[k]);
        b = net_conv(r, b, p + "conv.w", "", {1, 0, 1});
        b = batch_norm(r, b, p + "bn");
        b = activate(r.g, b, ActKind::Relu);
        b = channel_attention_forward(r, b, p + "ca.");
        b = spatial_attention_forward(r, b, p + "sa.");
        b = bilinear_upsample(r.g, b, h, w);
        out = concat_channels(r.g, out, b);
    }
    return out;
}

Var seg_head_forward(SegNetRun& r, Var features, int out_h, int out_w) {
    const Tensor& f = r.g.value(features);
    if (out_h != f.dim(1) * r.cfg.output_stride || out_w != f.dim(2) * r.cfg.output_stride) {
        throw GeometryError("seg head: output extents must be stride times feature extents");
    }
    Var x = net_conv(r, features, "head.fuse.w", "", {1, 1, 1});
    x = batch_norm(r, x, "head.fuse_bn");
    x = activate(r.g, x, ActKind::Relu);
    x = net_conv(r, x, "head.cls.w", std::string("head.cls.b"), {1, 0, 1});
    return bilinear_upsample(r.g, x, out_h, out_w);
}

Var segnet_logits(SegNetRun& r, Var image) {
    const Tensor& img = r.g.value(image);
    Var x = backbone_forward(r, image);
    x = pyramid_pool_forward(r, x);
    return seg_head_forward(r, x, img.dim(1), img.dim(2));
}

LabelMap segment(const Tensor& image, const SegNetConfig& cfg, ParamStore& ps, ConvHook* hook) {
    Graph g(/*training=*/false);
    SegNetRun r{g, ps, cfg, hook};
    const Var logits = segnet_logits(r, g.input(image));
    return argmax_labels(g.value(logits));
}

Var seg_total_loss(Graph& g, Var logits, const LabelMap& target, const SegLossWeights& w) {
    if (w.ce < 0 || w.dice < 0 || w.focal < 0) {
        throw ContractError("seg_total_loss: weights must be >= 0");
    }
    Var total = scalar_mul(g, ce_loss(g, logits, target), w.ce);
    const Var probs = activate(g, logits, ActKind::SoftmaxChannel);
    total = add(g, total, scalar_mul(g, dice_loss(g, probs, target), w.dice));
    total = add(g, total, scalar_mul(g, focal_loss(g, probs, target), w.focal));
    return total;
}

float train_seg_step(ParamStore& ps, const SegNetConfig& cfg, AdamOptimizer& opt,
                     const std::vector<const Tensor*>& images,
                     const std::vector<const LabelMap*>& labels, const SegLossWeights& w) {
    if (images.empty() || images.size() != labels.size()) {
        throw ContractError("train_seg_step: batch images/labels mismatch");
    }
    ps.zero_grad();
    const float inv_batch = 1.0f / static_cast<float>(images.size());
    double loss = 0;
    for (std::size_t i = 0; i < images.size(); ++i) {
        Graph g(/*training=*/true);
        SegNetRun r{g, ps, cfg, nullptr};
        const Var logits = segnet_logits(r, g.input(*images[i]));
        const Var l = seg_total_loss(g, logits, *labels[i], w);
        g.backward(l, inv_batch);
        loss += static_cast<double>(g.scalar(l)) * inv_batch;
    }
    opt.step(ps);
    return static_cast<float>(loss);
}

SegNetShapes segnet_shape_chain(const SegNetConfig& cfg, int h, int w) {
    cfg.validate();
    if (h % cfg.output_stride || w % cfg.output_stride) {
        throw GeometryError("extents must be divisible by the output stride");
    }
    // stem 7x7/2 pad 3, maxpool 3x3/2 pad 1, one stride-2 stage
    int fh = conv_out_extent(h, 7, 2, 3, 1);
    int fw = conv_out_extent(w, 7, 2, 3, 1);
    fh = (fh + 2 - 3) / 2 + 1;
    fw = (fw + 2 - 3) / 2 + 1;
    fh = conv_out_extent(fh, 3, 2, 1, 1);
    fw = conv_out_extent(fw, 3, 2, 1, 1);

    SegNetShapes s;
    s.backbone = {cfg.backbone_channels(), fh, fw};
    s.ppm = {2 * cfg.backbone_channels(), fh, fw};
    s.logits = {cfg.num_classes, h, w};
    return s;
}

}  // namespace semcomm
