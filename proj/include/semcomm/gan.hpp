#pragma once

#include <string>
#include <vector>

#include "semcomm/autograd.hpp"
#include "semcomm/optim.hpp"
#include "semcomm/params.hpp"

namespace semcomm {

// U-shaped generator: four conv/residual/maxpool encoder levels, a residual
// bottleneck, and a deconvolution decoder with skip concatenations. Output
// activation is tanh, so values stay in [-1,1].
struct GeneratorConfig {
    int in_channels = 3;
    int out_channels = 3;
    int levels = 4;
    int base_filters = 16;
    int res_blocks = 2;

    int level_filters(int level) const { return base_filters << (level - 1); }
    int min_extent() const { return 1 << levels; }
};

// PatchGAN with dilated 3x3 stride-2 convolutions; each output element is a
// local realness probability.
struct DiscriminatorConfig {
    int layers = 5;
    int filters = 32;
    int stride = 2;
    int dilation = 2;

    int min_extent() const { return 1 << layers; }
};

struct CycleConfig {
    GeneratorConfig gen;
    DiscriminatorConfig disc;
    float lambda_cycle = 10.0f;
    float identity_scale = 0.5f;  // identity term weight = identity_scale * lambda
    float lr = 2e-4f;
    StepSchedule schedule;
};

void init_generator_params(ParamStore& ps, const GeneratorConfig& cfg, const std::string& prefix,
                           Rng& rng);
void init_discriminator_params(ParamStore& ps, const DiscriminatorConfig& cfg,
                               const std::string& prefix, Rng& rng);

Var generator_forward(Graph& g, ParamStore& ps, const GeneratorConfig& cfg,
                      const std::string& prefix, Var image);
Var discriminator_forward(Graph& g, ParamStore& ps, const DiscriminatorConfig& cfg,
                          const std::string& prefix, Var image);

// Analytic receptive field of one patch output, for a given dilation rate.
int discriminator_receptive_field(const DiscriminatorConfig& cfg, int dilation);

enum class GanRole { Generator, Discriminator };
// Discriminator: -mean log D(real) - mean log(1-D(fake)).
// Generator (non-saturating): -mean log D(fake); d_real is ignored.
Var gan_loss(Graph& g, Var d_real, Var d_fake, GanRole role, float eps = 1e-7f);
Var cycle_loss(Graph& g, Var x, Var f_g_x, Var y, Var g_f_y);
Var identity_loss(Graph& g, Var g_y, Var y, Var f_x, Var x);
Var total_gan_loss(Graph& g, Var adversarial, Var cycle, Var identity, float lambda,
                   float identity_weight);

// The two generators (G: X->Y, F: Y->X), their discriminators and one Adam
// state per network, sharing a single parameter store under the prefixes
// "G/", "F/", "DX/", "DY/".
class CycleState {
  public:
    CycleState(CycleConfig cfg, std::uint64_t seed);

    ParamStore& params() { return params_; }
    const CycleConfig& config() const { return cfg_; }

    Tensor run_generator(const std::string& prefix, const Tensor& image);  // eval forward

    struct StepLosses {
        float d_x = 0;
        float d_y = 0;
        float adv_g = 0;
        float adv_f = 0;
        float cycle = 0;
        float identity = 0;
        float total_gen = 0;
    };
    // Discriminator updates first (on detached fakes), then one joint
    // generator step on the full objective. Losses are pre-update values.
    StepLosses train_step(const std::vector<const Tensor*>& batch_x,
                          const std::vector<const Tensor*>& batch_y);

    void set_epoch(int epoch);

  private:
    CycleConfig cfg_;
    ParamStore params_;
    AdamOptimizer opt_g_, opt_f_, opt_dx_, opt_dy_;
};

// Maps a palette-colorized semantic image ([0,255] RGB) through a trained
// generator and back to [0,255].
Tensor restore_image(const Tensor& semantic_rgb, const GeneratorConfig& cfg, ParamStore& ps,
                     const std::string& prefix = "F/");

}  // namespace semcomm
