#pragma once

#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "glotok/error.hpp"
#include "glotok/nn.hpp"
#include "glotok/tensor.hpp"

namespace glotok {

struct ResidualConfig {
    std::size_t code_dim = 8;
    std::size_t model_dim = 64;
    std::size_t heads = 4;
    std::size_t ff_dim = 128;
};

template <class T>
struct ResidualCache {
    Tensor<T> input, lifted, norm1_out, attn_in_res, norm2_out, ff_hidden, ff_act, block_out;
    nn::NormCache<T> norm1, norm2;
    nn::AttentionCache<T> attn;
    std::size_t samples = 0;
};

// Single pre-norm transformer block predicting the continuous quantization
// residual from quantized latents, bracketed by affine lift/projection
// between the code dimension and the model width. The output projection
// starts at zero so the block is initially a no-op.
template <class T>
class ResidualBlock {
public:
    ResidualBlock() = default;
    ResidualBlock(const std::string& name, ResidualConfig cfg)
        : cfg_(cfg),
          lift(name + ".lift", cfg.code_dim, cfg.model_dim),
          norm1(name + ".norm1", cfg.model_dim),
          attn(name + ".attn", cfg.model_dim, cfg.heads),
          norm2(name + ".norm2", cfg.model_dim),
          ff1(name + ".ff1", cfg.model_dim, cfg.ff_dim),
          ff2(name + ".ff2", cfg.ff_dim, cfg.model_dim),
          project(name + ".project", cfg.model_dim, cfg.code_dim) {}

    void init(std::mt19937_64& rng, bool zero_output = true) {
        lift.init(rng);
        attn.init(rng);
        ff1.init(rng);
        ff2.init(rng);
        project.init(rng);
        if (zero_output) project.zero_init();
    }

    const ResidualConfig& config() const noexcept { return cfg_; }

    // zhat: B x h x w x code_dim; tokens never mix across samples.
    Tensor<T> forward(const Tensor<T>& zhat, ResidualCache<T>& c) const {
        if (zhat.rank() != 4 || zhat.dim(3) != cfg_.code_dim)
            throw ShapeError(lift.weight.name + ": expected B x h x w x " + std::to_string(cfg_.code_dim) + ", got " +
                             shape_str(zhat.shape()));
        c.samples = zhat.dim(0);
        c.input = zhat;
        c.lifted = lift.forward(zhat);
        c.norm1_out = norm1.forward(c.lifted, c.norm1);
        c.attn_in_res = c.lifted + attn.forward(c.norm1_out, c.samples, c.attn);
        c.norm2_out = norm2.forward(c.attn_in_res, c.norm2);
        c.ff_hidden = ff1.forward(c.norm2_out);
        c.ff_act = nn::silu(c.ff_hidden);
        c.block_out = c.attn_in_res + ff2.forward(c.ff_act);
        return project.forward(c.block_out);
    }

    Tensor<T> forward(const Tensor<T>& zhat) const {
        ResidualCache<T> c;
        return forward(zhat, c);
    }

    Tensor<T> backward(const ResidualCache<T>& c, const Tensor<T>& dres) {
        Tensor<T> g = project.backward(c.block_out, dres);
        const Tensor<T> dff = ff1.backward(c.norm2_out, nn::silu_backward(c.ff_hidden, ff2.backward(c.ff_act, g)));
        add_inplace(g, norm2.backward(c.norm2, dff));
        const Tensor<T> dattn = attn.backward(c.attn, c.samples, g);
        add_inplace(g, norm1.backward(c.norm1, dattn));
        return lift.backward(c.input, g);
    }

    std::vector<nn::Param<T>*> params() {
        std::vector<nn::Param<T>*> out;
        auto add = [&](std::vector<nn::Param<T>*> ps) { out.insert(out.end(), ps.begin(), ps.end()); };
        add(lift.params());
        add(norm1.params());
        add(attn.params());
        add(norm2.params());
        add(ff1.params());
        add(ff2.params());
        add(project.params());
        return out;
    }

private:
    ResidualConfig cfg_;

public:
    nn::Linear<T> lift;
    nn::LayerNorm<T> norm1;
    nn::SelfAttention<T> attn;
    nn::LayerNorm<T> norm2;
    nn::Linear<T> ff1, ff2;
    nn::Linear<T> project;
};

enum class ResidualNorm : std::uint8_t { mse, l1 };

template <class T>
struct ResidualLoss {
    double value = 0;
    double sem = 0, vis = 0;
    // Gradients w.r.t. the predicted residuals only. Both sg[Z] and the
    // quantized latents act as constants in this term.
    Tensor<T> grad_res_sem, grad_res_vis;
};

namespace detail {

template <class T>
double residual_branch(const Tensor<T>& z, const Tensor<T>& zhat, const Tensor<T>& zres, ResidualNorm norm,
                       Tensor<T>& grad_res) {
    require_same_shape(z, zhat, "residual_loss");
    require_same_shape(z, zres, "residual_loss");
    grad_res = Tensor<T>(z.shape());
    if (z.empty()) return 0.0;
    const double n = static_cast<double>(z.size());
    double acc = 0;
    for (std::size_t i = 0; i < z.size(); ++i) {
        const double e = static_cast<double>(z[i]) - static_cast<double>(zhat[i]) - static_cast<double>(zres[i]);
        double g;
        if (norm == ResidualNorm::mse) {
            acc += e * e;
            g = -2.0 * e / n;
        } else {
            acc += std::abs(e);
            g = -(e > 0 ? 1.0 : (e < 0 ? -1.0 : 0.0)) / n;
        }
        grad_res[i] = static_cast<T>(g);
    }
    return acc / n;
}

} // namespace detail

template <class T>
ResidualLoss<T> residual_loss(const Tensor<T>& z_sem, const Tensor<T>& zhat_sem, const Tensor<T>& zres_sem,
                              const Tensor<T>& z_vis, const Tensor<T>& zhat_vis, const Tensor<T>& zres_vis,
                              ResidualNorm norm = ResidualNorm::mse) {
    ResidualLoss<T> out;
    out.sem = detail::residual_branch(z_sem, zhat_sem, zres_sem, norm, out.grad_res_sem);
    out.vis = detail::residual_branch(z_vis, zhat_vis, zres_vis, norm, out.grad_res_vis);
    out.value = out.sem + out.vis;
    return out;
}

template <class T>
Tensor<T> fuse(const Tensor<T>& zhat, const Tensor<T>& zres) {
    require_same_shape(zhat, zres, "fuse");
    return zhat + zres;
}

} // namespace glotok
