#include "semcomm/gan.hpp"

#include <cmath>

namespace semcomm {

namespace {

void init_conv(ParamStore& ps, Rng& rng, const std::string& name, int out_c, int in_c, int kh,
               int kw) {
    const float std = std::sqrt(2.0f / static_cast<float>(in_c * kh * kw));
    ps.create(name, gaussian_tensor(rng, {out_c, in_c, kh, kw}, std));
}

// instance norm: no running statistics
void init_norm(ParamStore& ps, const std::string& prefix, int c) {
    ps.create(prefix + ".gamma", Tensor({c}, 1.0f));
    ps.create(prefix + ".beta", Tensor({c}, 0.0f));
}

Var inst_norm(Graph& g, ParamStore& ps, Var x, const std::string& prefix) {
    return normalize(g, x, g.param(ps, prefix + ".gamma"), g.param(ps, prefix + ".beta"),
                     NormKind::Instance);
}

Var conv_norm_relu(Graph& g, ParamStore& ps, Var x, const std::string& prefix,
                   const ConvSpec& spec) {
    Var y = conv2d(g, x, g.param(ps, prefix + ".w"), -1, spec);
    y = inst_norm(g, ps, y, prefix + ".norm");
    return activate(g, y, ActKind::Relu);
}

// residual block used on the generator trunk: three conv/norm/relu layers
// plus the identity shortcut
Var gen_res_block(Graph& g, ParamStore& ps, Var x, const std::string& prefix) {
    Var y = x;
    for (int i = 0; i < 3; ++i) {
        y = conv_norm_relu(g, ps, y, prefix + "c" + std::to_string(i), {1, 1, 1});
    }
    return add(g, x, y);
}

void init_res_block(ParamStore& ps, Rng& rng, const std::string& prefix, int c) {
    for (int i = 0; i < 3; ++i) {
        init_conv(ps, rng, prefix + "c" + std::to_string(i) + ".w", c, c, 3, 3);
        init_norm(ps, prefix + "c" + std::to_string(i) + ".norm", c);
    }
}

}  // namespace

void init_generator_params(ParamStore& ps, const GeneratorConfig& cfg, const std::string& prefix,
                           Rng& rng) {
    int in_ch = cfg.in_channels;
    for (int l = 1; l <= cfg.levels; ++l) {
        const int f = cfg.level_filters(l);
        const std::string lp = prefix + "enc" + std::to_string(l) + ".";
        init_conv(ps, rng, lp + "conv.w", f, in_ch, 3, 3);
        init_norm(ps, lp + "conv.norm", f);
        for (int r = 0; r < cfg.res_blocks; ++r) {
            init_res_block(ps, rng, lp + "res" + std::to_string(r) + ".", f);
        }
        in_ch = f;
    }
    const int fb = cfg.level_filters(cfg.levels);
    init_conv(ps, rng, prefix + "bott.conv.w", fb, fb, 3, 3);
    init_norm(ps, prefix + "bott.conv.norm", fb);
    for (int r = 0; r < cfg.res_blocks; ++r) {
        init_res_block(ps, rng, prefix + "bott.res" + std::to_string(r) + ".", fb);
    }
    int up_in = fb;
    for (int l = cfg.levels; l >= 1; --l) {
        const int f = cfg.level_filters(l);
        const std::string lp = prefix + "dec" + std::to_string(l) + ".";
        ps.create(lp + "up.w",
                  gaussian_tensor(rng, {up_in, f, 3, 3},
                                  std::sqrt(2.0f / static_cast<float>(up_in * 9))));
        init_norm(ps, lp + "up.norm", f);
        init_conv(ps, rng, lp + "conv.w", f, 2 * f, 3, 3);
        init_norm(ps, lp + "conv.norm", f);
        up_in = f;
    }
    init_conv(ps, rng, prefix + "out.conv.w", cfg.out_channels, cfg.base_filters, 3, 3);
    ps.create(prefix + "out.conv.b", Tensor({cfg.out_channels}, 0.0f));
}

Var generator_forward(Graph& g, ParamStore& ps, const GeneratorConfig& cfg,
                      const std::string& prefix, Var image) {
    const Tensor& img = g.value(image);
    if (img.rank() != 3 || img.dim(0) != cfg.in_channels) {
        throw ShapeError("generator input must be " + std::to_string(cfg.in_channels) + "xHxW");
    }
    if (img.dim(1) % cfg.min_extent() || img.dim(2) % cfg.min_extent()) {
        throw GeometryError("generator extents must be divisible by " +
                            std::to_string(cfg.min_extent()));
    }

    std::vector<Var> skips;
    Var x = image;
    for (int l = 1; l <= cfg.levels; ++l) {
        const std::string lp = prefix + "enc" + std::to_string(l) + ".";
        x = conv_norm_relu(g, ps, x, lp + "conv", {1, 1, 1});
        for (int r = 0; r < cfg.res_blocks; ++r) {
            x = gen_res_block(g, ps, x, lp + "res" + std::to_string(r) + ".");
        }
        skips.push_back(x);
        x = pool2d(g, x, PoolKind::Max, 2, 2);
    }

    x = conv_norm_relu(g, ps, x, prefix + "bott.conv", {1, 1, 1});
    for (int r = 0; r < cfg.res_blocks; ++r) {
        x = gen_res_block(g, ps, x, prefix + "bott.res" + std::to_string(r) + ".");
    }

    for (int l = cfg.levels; l >= 1; --l) {
        const std::string lp = prefix + "dec" + std::to_string(l) + ".";
        x = conv_transpose2d(g, x, g.param(ps, lp + "up.w"), 2, 1, 1);
        x = inst_norm(g, ps, x, lp + "up.norm");
        x = activate(g, x, ActKind::Relu);
        x = concat_channels(g, x, skips[static_cast<std::size_t>(l - 1)]);
        x = conv_norm_relu(g, ps, x, lp + "conv", {1, 1, 1});
    }

    x = conv2d(g, x, g.param(ps, prefix + "out.conv.w"), g.param(ps, prefix + "out.conv.b"),
               {1, 1, 1});
    return activate(g, x, ActKind::Tanh);
}

void init_discriminator_params(ParamStore& ps, const DiscriminatorConfig& cfg,
                               const std::string& prefix, Rng& rng) {
    int in_ch = 3;
    for (int l = 1; l <= cfg.layers; ++l) {
        const std::string lp = prefix + "d" + std::to_string(l) + ".";
        init_conv(ps, rng, lp + "conv.w", cfg.filters, in_ch, 3, 3);
        init_norm(ps, lp + "conv.norm", cfg.filters);
        in_ch = cfg.filters;
    }
    init_conv(ps, rng, prefix + "out.conv.w", 1, cfg.filters, 1, 1);
    ps.create(prefix + "out.conv.b", Tensor({1}, 0.0f));
}

Var discriminator_forward(Graph& g, ParamStore& ps, const DiscriminatorConfig& cfg,
                          const std::string& prefix, Var image) {
    const Tensor& img = g.value(image);
    if (img.rank() != 3 || img.dim(0) != 3) throw ShapeError("discriminator wants 3xHxW");
    if (img.dim(1) < cfg.min_extent() || img.dim(2) < cfg.min_extent() ||
        img.dim(1) % cfg.min_extent() || img.dim(2) % cfg.min_extent()) {
        throw GeometryError("discriminator extents must be multiples of " +
                            std::to_string(cfg.min_extent()));
    }
    // 3x3 dilated conv, stride 2: pad = dilation keeps the halving exact
    Var x = image;
    for (int l = 1; l <= cfg.layers; ++l) {
        const std::string lp = prefix + "d" + std::to_string(l) + ".";
        x = conv_norm_relu(g, ps, x, lp + "conv", {cfg.stride, cfg.dilation, cfg.dilation});
    }
    x = conv2d(g, x, g.param(ps, prefix + "out.conv.w"), g.param(ps, prefix + "out.conv.b"),
               {1, 0, 1});
    return activate(g, x, ActKind::Sigmoid);
}

int discriminator_receptive_field(const DiscriminatorConfig& cfg, int dilation) {
    int rf = 1;
    int jump = 1;
    for (int l = 0; l < cfg.layers; ++l) {
        const int eff = dilation * (3 - 1) + 1;
        rf += (eff - 1) * jump;
        jump *= cfg.stride;
    }
    return rf;
}

Var gan_loss(Graph& g, Var d_real, Var d_fake, GanRole role, float eps) {
    if (role == GanRole::Generator) {
        Var lf = vlog(g, clamp(g, d_fake, eps, 1.0f - eps));
        return scalar_mul(g, mean_all(g, lf), -1.0f);
    }
    Var lr = vlog(g, clamp(g, d_real, eps, 1.0f - eps));
    Var fake_c = clamp(g, d_fake, eps, 1.0f - eps);
    Var lf = vlog(g, scalar_add(g, scalar_mul(g, fake_c, -1.0f), 1.0f));
    return sub(g, scalar_mul(g, mean_all(g, lr), -1.0f), mean_all(g, lf));
}

Var cycle_loss(Graph& g, Var x, Var f_g_x, Var y, Var g_f_y) {
    return add(g, mean_abs_diff(g, f_g_x, x), mean_abs_diff(g, g_f_y, y));
}

Var identity_loss(Graph& g, Var g_y, Var y, Var f_x, Var x) {
    return add(g, mean_abs_diff(g, g_y, y), mean_abs_diff(g, f_x, x));
}

Var total_gan_loss(Graph& g, Var adversarial, Var cycle, Var identity, float lambda,
                   float identity_weight) {
    if (lambda <= 0) throw ContractError("total_gan_loss: lambda must be > 0");
    Var t = add(g, adversarial, scalar_mul(g, cycle, lambda));
    return add(g, t, scalar_mul(g, identity, identity_weight));
}

// ---------------------------------------------------------------------------
// CycleState
// ---------------------------------------------------------------------------

namespace {
AdamOptimizer make_opt(const CycleConfig& cfg) {
    AdamOptimizer::Config oc;
    oc.lr = cfg.lr;
    oc.schedule = cfg.schedule;
    return AdamOptimizer(oc);
}
}  // namespace

CycleState::CycleState(CycleConfig cfg, std::uint64_t seed)
    : cfg_(cfg), opt_g_(make_opt(cfg)), opt_f_(make_opt(cfg)), opt_dx_(make_opt(cfg)),
      opt_dy_(make_opt(cfg)) {
    if (cfg_.lambda_cycle <= 0) throw ContractError("CycleState: lambda must be > 0");
    Rng rng(seed);
    init_generator_params(params_, cfg_.gen, "G/", rng);
    init_generator_params(params_, cfg_.gen, "F/", rng);
    init_discriminator_params(params_, cfg_.disc, "DX/", rng);
    init_discriminator_params(params_, cfg_.disc, "DY/", rng);
}

void CycleState::set_epoch(int epoch) {
    opt_g_.set_epoch(epoch);
    opt_f_.set_epoch(epoch);
    opt_dx_.set_epoch(epoch);
    opt_dy_.set_epoch(epoch);
}

Tensor CycleState::run_generator(const std::string& prefix, const Tensor& image) {
    Graph g(/*training=*/false);
    return g.value(generator_forward(g, params_, cfg_.gen, prefix, g.input(image)));
}

CycleState::StepLosses CycleState::train_step(const std::vector<const Tensor*>& batch_x,
                                              const std::vector<const Tensor*>& batch_y) {
    if (batch_x.empty() || batch_x.size() != batch_y.size()) {
        throw ContractError("cycle train step: batches must be non-empty and matched");
    }
    const float inv_b = 1.0f / static_cast<float>(batch_x.size());
    StepLosses out;

    // fakes for the discriminator phase, detached from the generators
    std::vector<Tensor> fake_y, fake_x;
    fake_y.reserve(batch_x.size());
    fake_x.reserve(batch_x.size());
    for (std::size_t i = 0; i < batch_x.size(); ++i) {
        fake_y.push_back(run_generator("G/", *batch_x[i]));
        fake_x.push_back(run_generator("F/", *batch_y[i]));
    }

    params_.zero_grad();
    for (std::size_t i = 0; i < batch_x.size(); ++i) {
        Graph g(/*training=*/true);
        const Var dy_real = discriminator_forward(g, params_, cfg_.disc, "DY/",
                                                  g.input(*batch_y[i]));
        const Var dy_fake = discriminator_forward(g, params_, cfg_.disc, "DY/",
                                                  g.input(fake_y[i]));
        const Var dx_real = discriminator_forward(g, params_, cfg_.disc, "DX/",
                                                  g.input(*batch_x[i]));
        const Var dx_fake = discriminator_forward(g, params_, cfg_.disc, "DX/",
                                                  g.input(fake_x[i]));
        const Var loss_dy = gan_loss(g, dy_real, dy_fake, GanRole::Discriminator);
        const Var loss_dx = gan_loss(g, dx_real, dx_fake, GanRole::Discriminator);
        g.backward(add(g, loss_dy, loss_dx), inv_b);
        out.d_y += g.scalar(loss_dy) * inv_b;
        out.d_x += g.scalar(loss_dx) * inv_b;
    }
    opt_dx_.step(params_, "DX/");
    opt_dy_.step(params_, "DY/");

    params_.zero_grad();
    for (std::size_t i = 0; i < batch_x.size(); ++i) {
        Graph g(/*training=*/true);
        const Var x = g.input(*batch_x[i]);
        const Var y = g.input(*batch_y[i]);
        const Var gen_y = generator_forward(g, params_, cfg_.gen, "G/", x);
        const Var rec_x = generator_forward(g, params_, cfg_.gen, "F/", gen_y);
        const Var gen_x = generator_forward(g, params_, cfg_.gen, "F/", y);
        const Var rec_y = generator_forward(g, params_, cfg_.gen, "G/", gen_x);
        const Var adv_g = gan_loss(g, -1,
                                   discriminator_forward(g, params_, cfg_.disc, "DY/", gen_y),
                                   GanRole::Generator);
        const Var adv_f = gan_loss(g, -1,
                                   discriminator_forward(g, params_, cfg_.disc, "DX/", gen_x),
                                   GanRole::Generator);
        const Var cyc = cycle_loss(g, x, rec_x, y, rec_y);
        const Var idt = identity_loss(g, generator_forward(g, params_, cfg_.gen, "G/", y), y,
                                      generator_forward(g, params_, cfg_.gen, "F/", x), x);
        const Var adv = add(g, adv_g, adv_f);
        const Var total = total_gan_loss(g, adv, cyc, idt, cfg_.lambda_cycle,
                                         cfg_.identity_scale * cfg_.lambda_cycle);
        g.backward(total, inv_b);
        out.adv_g += g.scalar(adv_g) * inv_b;
        out.adv_f += g.scalar(adv_f) * inv_b;
        out.cycle += g.scalar(cyc) * inv_b;
        out.identity += g.scalar(idt) * inv_b;
        out.total_gen += g.scalar(total) * inv_b;
    }
    opt_g_.step(params_, "G/");
    opt_f_.step(params_, "F/");
    return out;
}

Tensor restore_image(const Tensor& semantic_rgb, const GeneratorConfig& cfg, ParamStore& ps,
                     const std::string& prefix) {
    Tensor in(semantic_rgb.shape);
    for (std::size_t i = 0; i < in.data.size(); ++i) {
        in.data[i] = semantic_rgb.data[i] / 127.5f - 1.0f;
    }
    Graph g(/*training=*/false);
    const Tensor& out = g.value(generator_forward(g, ps, cfg, prefix, g.input(in)));
    Tensor rgb(out.shape);
    for (std::size_t i = 0; i < rgb.data.size(); ++i) {
        rgb.data[i] = (out.data[i] + 1.0f) * 127.5f;
    }
    return rgb;
}

}  // namespace semcomm
