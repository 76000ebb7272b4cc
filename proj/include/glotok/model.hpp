#pragma once

#include <cmath>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "glotok/codebook.hpp"
#include "glotok/config.hpp"
#include "glotok/error.hpp"
#include "glotok/histrel.hpp"
#include "glotok/nn.hpp"
#include "glotok/residual.hpp"
#include "glotok/teacher.hpp"
#include "glotok/tensor.hpp"

namespace glotok {

// Named loss terms of one forward pass. Perceptual and adversarial slots are
// kept (always 0) so logs have a fixed layout.
struct LossBreakdown {
    double total = 0;
    double L_R = 0;
    double L_Q_sem = 0;
    double L_Q_vis = 0;
    double L_res = 0;
    double L_hist = 0;
    double L_P = 0;
    double L_G = 0;

    std::map<std::string, double> named() const {
        return {{"total", total}, {"L_R", L_R}, {"L_Q_sem", L_Q_sem}, {"L_Q_vis", L_Q_vis},
                {"L_res", L_res}, {"L_hist", L_hist}, {"L_P", L_P}, {"L_G", L_G}};
    }
};

template <class T>
struct EncodeResult {
    Tensor<T> Z, Z_sem, Z_vis;
};

template <class T>
struct ReconOutput {
    Tensor<T> x_hat;
    Tensor<T> Z, Z_sem, Z_vis;
    Tensor<T> Zhat_sem, Zhat_vis;   // selected code vectors
    Tensor<T> Zres_sem, Zres_vis;   // predicted residuals (zeros without residual blocks)
    IndexGrid indices_sem, indices_vis;
    LossBreakdown losses;
};

// Values held constant by stop-gradients, captured from a reference forward
// pass. Re-running the forward pass against a frozen snapshot evaluates the
// surrogate objective whose exact derivative is the straight-through /
// stop-gradient gradient, which is what finite differences can check.
template <class T>
struct FrozenQuantization {
    IndexGrid indices_sem, indices_vis;
    Tensor<T> Z_sem, Z_vis, Zhat_sem, Zhat_vis;
    Tensor<T> Zq_sem, Zq_vis;   // residual-block inputs as seen by the residual loss
};

// Intermediates of one forward pass needed by backward.
template <class T>
struct ForwardState {
    std::size_t batch = 0;
    Tensor<T> x;
    Tensor<T> e1, g1, s1, e2, g2, s2;
    nn::NormCache<T> en1, en2;
    Tensor<T> Z, Z_sem, Z_vis;
    Tensor<T> Z_sem_sg, Z_vis_sg;        // stop-gradient copies
    Tensor<T> Zhat_sem, Zhat_vis;        // gathered from the live codebooks
    Tensor<T> Zhat_sem_sg, Zhat_vis_sg;
    Tensor<T> Zq_sem, Zq_vis;            // straight-through outputs
    IndexGrid idx_sem, idx_vis;
    ResidualCache<T> rc_sem, rc_vis;
    Tensor<T> Zres_sem, Zres_vis;
    Tensor<T> Zres_loss_sem, Zres_loss_vis;   // block output at the detached input
    Tensor<T> F_sem, F_vis;
    Tensor<T> d_in, d1, dg1, ds1, u1, d2, dg2, ds2, u2, x_hat;
    nn::NormCache<T> dn1, dn2;
};

// Gradients of each loss term w.r.t. the tensors it touches directly.
template <class T>
struct LossGrads {
    Tensor<T> x_hat;                 // from L_R
    QuantLoss<T> q_sem, q_vis;       // from L_Q
    ResidualLoss<T> res;             // from L_res
    std::optional<HistLossResult<T>> hist;
};

template <class T>
class TokenizerModel {
public:
    explicit TokenizerModel(const TrainConfig& cfg)
        : cfg_(cfg),
          enc_conv1("encoder.conv1", 3, cfg.enc_channels, 3, 2),
          enc_norm1("encoder.norm1", cfg.enc_channels, cfg.norm_groups),
          enc_conv2("encoder.conv2", cfg.enc_channels, cfg.latent_channels, 3, 2),
          enc_norm2("encoder.norm2", cfg.latent_channels, cfg.norm_groups),
          enc_out("encoder.out", cfg.latent_channels, cfg.latent_channels),
          adapter_sem("adapter_sem", cfg.latent_channels, cfg.d_code),
          adapter_vis("adapter_vis", cfg.latent_channels, cfg.d_code),
          code_sem("codebook_sem", {cfg.K_sem, cfg.d_code}),
          code_vis("codebook_vis", {cfg.K_vis, cfg.d_code}),
          res_sem("residual_sem", residual_cfg(cfg)),
          res_vis("residual_vis", residual_cfg(cfg)),
          dec_conv1("decoder.conv1", 2 * cfg.d_code, cfg.dec_channels, 3, 1),
          dec_norm1("decoder.norm1", cfg.dec_channels, cfg.norm_groups),
          dec_conv2("decoder.conv2", cfg.dec_channels, cfg.enc_channels, 3, 1),
          dec_norm2("decoder.norm2", cfg.enc_channels, cfg.norm_groups),
          dec_conv3("decoder.conv3", cfg.enc_channels, 3, 3, 1) {
        cfg_.validate();
    }

    // Deterministic initialization from the config seed.
    void init(std::mt19937_64& rng) {
        enc_conv1.init(rng);
        enc_conv2.init(rng);
        enc_out.init(rng);
        adapter_sem.init(rng);
        adapter_vis.init(rng);
        init_codebook(code_sem.value, rng);
        init_codebook(code_vis.value, rng);
        res_sem.init(rng);
        res_vis.init(rng);
        dec_conv1.init(rng);
        dec_conv2.init(rng);
        dec_conv3.init(rng);
    }

    const TrainConfig& config() const noexcept { return cfg_; }

    Codebook<T> codebook_sem() const { return Codebook<T>(code_sem.value, cfg_.metric, "semantic"); }
    Codebook<T> codebook_vis() const { return Codebook<T>(code_vis.value, cfg_.metric, "visual"); }

    // All trainable tensors in a fixed order (checkpoints and the optimizer rely on it).
    std::vector<nn::Param<T>*> params() {
        std::vector<nn::Param<T>*> out;
        auto add = [&](std::vector<nn::Param<T>*> ps) { out.insert(out.end(), ps.begin(), ps.end()); };
        add(enc_conv1.params());
        add(enc_norm1.params());
        add(enc_conv2.params());
        add(enc_norm2.params());
        add(enc_out.params());
        add(adapter_sem.params());
        add(adapter_vis.params());
        out.push_back(&code_sem);
        out.push_back(&code_vis);
        add(res_sem.params());
        add(res_vis.params());
        add(dec_conv1.params());
        add(dec_norm1.params());
        add(dec_conv2.params());
        add(dec_norm2.params());
        add(dec_conv3.params());
        return out;
    }

    std::vector<const nn::Param<T>*> params() const {
        auto ps = const_cast<TokenizerModel*>(this)->params();
        return {ps.begin(), ps.end()};
    }

    void zero_grad() {
        for (auto* p : params()) p->zero_grad();
    }

    void validate_input(const Tensor<T>& x) const {
        if (x.rank() != 4 || x.dim(3) != 3) throw ShapeError("encode: expected B x H x W x 3 image batch, got " + shape_str(x.shape()));
        if (x.dim(1) % 4 != 0 || x.dim(2) % 4 != 0 || x.dim(1) == 0 || x.dim(2) == 0)
            throw ShapeError("encode: H and W must be positive multiples of 4, got " + shape_str(x.shape()));
        for (const T v : x.vec())
            if (!(v >= T(-1) && v <= T(1))) throw ValueError("encode: pixel values must lie in [-1, 1]");
    }

    EncodeResult<T> encode(const Tensor<T>& x) const {
        ForwardState<T> s;
        encode_into(x, s);
        return {s.Z, s.Z_sem, s.Z_vis};
    }

    Tensor<T> decode(const Tensor<T>& fused_sem, const Tensor<T>& fused_vis) const {
        if (fused_sem.rank() != 4 || fused_sem.dim(3) != cfg_.d_code)
            throw ShapeError("decode: expected B x h x w x " + std::to_string(cfg_.d_code) + " inputs");
        require_same_shape(fused_sem, fused_vis, "decode");
        ForwardState<T> s;
        s.batch = fused_sem.dim(0);
        s.F_sem = fused_sem;
        s.F_vis = fused_vis;
        decode_into(s);
        return std::move(s.x_hat);
    }

    // Full tokenizer pass. With `frozen`, indices and stop-gradient values are
    // taken from the snapshot instead of the current quantizer decisions.
    ReconOutput<T> forward(const Tensor<T>& x, ForwardState<T>& s, const FrozenQuantization<T>* frozen = nullptr) const {
        encode_into(x, s);
        const auto cb_sem = codebook_sem();
        const auto cb_vis = codebook_vis();
        quantize_branch(s.Z_sem, cb_sem, frozen ? &frozen->indices_sem : nullptr, frozen ? &frozen->Z_sem : nullptr,
                        frozen ? &frozen->Zhat_sem : nullptr, s.idx_sem, s.Zhat_sem, s.Z_sem_sg, s.Zhat_sem_sg, s.Zq_sem);
        quantize_branch(s.Z_vis, cb_vis, frozen ? &frozen->indices_vis : nullptr, frozen ? &frozen->Z_vis : nullptr,
                        frozen ? &frozen->Zhat_vis : nullptr, s.idx_vis, s.Zhat_vis, s.Z_vis_sg, s.Zhat_vis_sg, s.Zq_vis);
        if (cfg_.use_residual) {
            s.Zres_sem = res_sem.forward(s.Zq_sem, s.rc_sem);
            s.Zres_vis = res_vis.forward(s.Zq_vis, s.rc_vis);
            s.Zres_loss_sem = frozen ? res_sem.forward(frozen->Zq_sem) : s.Zres_sem;
            s.Zres_loss_vis = frozen ? res_vis.forward(frozen->Zq_vis) : s.Zres_vis;
        } else {
            s.Zres_sem = Tensor<T>(s.Zq_sem.shape());
            s.Zres_vis = Tensor<T>(s.Zq_vis.shape());
            s.Zres_loss_sem = s.Zres_sem;
            s.Zres_loss_vis = s.Zres_vis;
        }
        s.F_sem = fuse(s.Zq_sem, s.Zres_sem);
        s.F_vis = fuse(s.Zq_vis, s.Zres_vis);
        decode_into(s);

        ReconOutput<T> out;
        out.x_hat = s.x_hat;
        out.Z = s.Z;
        out.Z_sem = s.Z_sem;
        out.Z_vis = s.Z_vis;
        out.Zhat_sem = s.Zhat_sem;
        out.Zhat_vis = s.Zhat_vis;
        out.Zres_sem = s.Zres_sem;
        out.Zres_vis = s.Zres_vis;
        out.indices_sem = s.idx_sem;
        out.indices_vis = s.idx_vis;
        return out;
    }

    ReconOutput<T> forward(const Tensor<T>& x) const {
        ForwardState<T> s;
        return forward(x, s);
    }

    static FrozenQuantization<T> freeze(const ForwardState<T>& s) {
        return {s.idx_sem, s.idx_vis, s.Z_sem_sg, s.Z_vis_sg, s.Zhat_sem_sg, s.Zhat_vis_sg, s.Zq_sem, s.Zq_vis};
    }

    // Loss values and per-term gradients for a completed forward pass.
    LossGrads<T> losses(const ForwardState<T>& s, const TeacherDistribution* teacher, LossBreakdown& lb,
                        std::mt19937_64* rng = nullptr) const {
        LossGrads<T> g;
        lb = LossBreakdown{};
        lb.L_R = reconstruction_loss(s.x, s.x_hat);
        g.x_hat = reconstruction_loss_grad(s.x, s.x_hat);
        g.q_sem = quantization_loss(s.Z_sem, s.Z_sem_sg, s.Zhat_sem, s.Zhat_sem_sg, cfg_.beta);
        g.q_vis = quantization_loss(s.Z_vis, s.Z_vis_sg, s.Zhat_vis, s.Zhat_vis_sg, cfg_.beta);
        lb.L_Q_sem = g.q_sem.value;
        lb.L_Q_vis = g.q_vis.value;
        if (cfg_.use_residual) {
            g.res = residual_loss(s.Z_sem_sg, s.Zhat_sem_sg, s.Zres_loss_sem, s.Z_vis_sg, s.Zhat_vis_sg, s.Zres_loss_vis,
                                  cfg_.residual_norm);
            lb.L_res = g.res.value;
        }
        if (teacher) {
            g.hist = hist_loss(codebook_sem(), *teacher, hist_config(cfg_), rng);
            lb.L_hist = g.hist->value;
        }
        lb.total = total_loss(lb, cfg_);
        return g;
    }

    static double total_loss(const LossBreakdown& lb, const TrainConfig& cfg) {
        return cfg.lambda_R * lb.L_R + cfg.lambda_Q * (lb.L_Q_sem + lb.L_Q_vis) + cfg.lambda_res * lb.L_res +
               cfg.lambda_hist * lb.L_hist;
    }

    // Accumulates d total / d params into Param::grad.
    void backward(ForwardState<T>& s, const LossGrads<T>& g) {
        const T lr_w = static_cast<T>(cfg_.lambda_R);
        const T lq_w = static_cast<T>(cfg_.lambda_Q);
        const T lres_w = static_cast<T>(cfg_.use_residual ? cfg_.lambda_res : 0.0);
        const T lh_w = static_cast<T>(cfg_.lambda_hist);

        Tensor<T> gx = g.x_hat;
        for (auto& v : gx.vec()) v *= lr_w;
        Tensor<T> t = dec_conv3.backward(s.u2, gx);
        t = nn::upsample2x_backward(t);
        t = dec_norm2.backward(s.dn2, s.batch, nn::silu_backward(s.dg2, t));
        t = dec_conv2.backward(s.u1, t);
        t = nn::upsample2x_backward(t);
        t = dec_norm1.backward(s.dn1, s.batch, nn::silu_backward(s.dg1, t));
        t = dec_conv1.backward(s.d_in, t);
        auto [gF_sem, gF_vis] = split_channels(t, cfg_.d_code);

        const Tensor<T> gZ_sem = branch_backward(gF_sem, g.q_sem, cfg_.use_residual ? &g.res.grad_res_sem : nullptr,
                                                 s.idx_sem, s.rc_sem, res_sem, code_sem, lq_w, lres_w);
        const Tensor<T> gZ_vis = branch_backward(gF_vis, g.q_vis, cfg_.use_residual ? &g.res.grad_res_vis : nullptr,
                                                 s.idx_vis, s.rc_vis, res_vis, code_vis, lq_w, lres_w);
        if (g.hist && lh_w != T(0))
            for (std::size_t i = 0; i < code_sem.grad.size(); ++i) code_sem.grad[i] += lh_w * g.hist->grad[i];

        Tensor<T> gZ = adapter_sem.backward(s.Z, gZ_sem);
        add_inplace(gZ, adapter_vis.backward(s.Z, gZ_vis));
        t = enc_out.backward(s.s2, gZ);
        t = enc_norm2.backward(s.en2, s.batch, nn::silu_backward(s.g2, t));
        t = enc_conv2.backward(s.s1, t);
        t = enc_norm1.backward(s.en1, s.batch, nn::silu_backward(s.g1, t));
        enc_conv1.backward(s.x, t);
    }

    static double reconstruction_loss(const Tensor<T>& x, const Tensor<T>& x_hat) { return mse(x, x_hat); }

    static Tensor<T> reconstruction_loss_grad(const Tensor<T>& x, const Tensor<T>& x_hat) {
        require_same_shape(x, x_hat, "reconstruction_loss");
        Tensor<T> g(x.shape());
        const double n = static_cast<double>(x.size());
        for (std::size_t i = 0; i < x.size(); ++i)
            g[i] = static_cast<T>(2.0 * (static_cast<double>(x_hat[i]) - static_cast<double>(x[i])) / n);
        return g;
    }

private:
    static ResidualConfig residual_cfg(const TrainConfig& c) {
        ResidualConfig r = c.residual;
        r.code_dim = c.d_code;
        return r;
    }

    void init_codebook(Tensor<T>& e, std::mt19937_64& rng) {
        std::uniform_real_distribution<double> u(-cfg_.codebook_init, cfg_.codebook_init);
        for (auto& v : e.vec()) v = static_cast<T>(u(rng));
    }

    void encode_into(const Tensor<T>& x, ForwardState<T>& s) const {
        validate_input(x);
        s.batch = x.dim(0);
        s.x = x;
        s.e1 = enc_conv1.forward(x);
        s.g1 = enc_norm1.forward(s.e1, s.batch, s.en1);
        s.s1 = nn::silu(s.g1);
        s.e2 = enc_conv2.forward(s.s1);
        s.g2 = enc_norm2.forward(s.e2, s.batch, s.en2);
        s.s2 = nn::silu(s.g2);
        s.Z = enc_out.forward(s.s2);
        s.Z_sem = adapter_sem.forward(s.Z);
        s.Z_vis = adapter_vis.forward(s.Z);
    }

    void decode_into(ForwardState<T>& s) const {
        s.d_in = concat_channels(s.F_sem, s.F_vis);
        s.d1 = dec_conv1.forward(s.d_in);
        s.dg1 = dec_norm1.forward(s.d1, s.batch, s.dn1);
        s.ds1 = nn::silu(s.dg1);
        s.u1 = nn::upsample2x(s.ds1);
        s.d2 = dec_conv2.forward(s.u1);
        s.dg2 = dec_norm2.forward(s.d2, s.batch, s.dn2);
        s.ds2 = nn::silu(s.dg2);
        s.u2 = nn::upsample2x(s.ds2);
        s.x_hat = dec_conv3.forward(s.u2);
    }

    static void quantize_branch(const Tensor<T>& z, const Codebook<T>& cb, const IndexGrid* frozen_idx,
                                const Tensor<T>* frozen_z, const Tensor<T>* frozen_zhat, IndexGrid& idx, Tensor<T>& zhat,
                                Tensor<T>& z_sg, Tensor<T>& zhat_sg, Tensor<T>& zq) {
        if (!frozen_idx) {
            auto q = quantize(z, cb);
            idx = std::move(q.indices);
            zhat = std::move(q.quantized);
            z_sg = z;
            zhat_sg = zhat;
            zq = straight_through(z, zhat);
            return;
        }
        idx = *frozen_idx;
        zhat = Tensor<T>(z.shape());
        for (std::size_t r = 0; r < idx.values.size(); ++r) {
            const auto c = cb.code(static_cast<std::size_t>(idx.values[r]));
            std::copy(c.begin(), c.end(), zhat.row(r).begin());
        }
        z_sg = *frozen_z;
        zhat_sg = *frozen_zhat;
        // z + sg[zhat - z], with the constant evaluated at the snapshot.
        zq = Tensor<T>(z.shape());
        for (std::size_t i = 0; i < z.size(); ++i) zq[i] = z[i] + (zhat_sg[i] - z_sg[i]);
    }

    // Returns d total / d Z_branch; adds the codebook gradient of the
    // quantization loss's first term and routes residual gradients through
    // the block (whose input is the straight-through latent).
    static Tensor<T> branch_backward(const Tensor<T>& gF, const QuantLoss<T>& q, const Tensor<T>* g_res,
                                     const IndexGrid& idx, const ResidualCache<T>& rc,
                                     ResidualBlock<T>& block, nn::Param<T>& codes, T lq_w, T lres_w) {
        Tensor<T> g_zq = gF;
        if (g_res) {
            add_inplace(g_zq, block.backward(rc, gF));
            // The residual objective trains the block only; its input gradient is dropped.
            Tensor<T> g_zres(g_res->shape());
            add_inplace(g_zres, *g_res, lres_w);
            block.backward(rc, g_zres);
        }
        Tensor<T> g_code_cells = q.grad_quantized;
        for (auto& v : g_code_cells.vec()) v *= lq_w;
        accumulate_code_grad(idx, g_code_cells, codes.grad);
        Tensor<T> g_z = StraightThrough<T>::backward(g_zq);
        add_inplace(g_z, q.grad_features, lq_w);
        return g_z;
    }

    TrainConfig cfg_;

public:
    nn::Conv2d<T> enc_conv1;
    nn::GroupNorm<T> enc_norm1;
    nn::Conv2d<T> enc_conv2;
    nn::GroupNorm<T> enc_norm2;
    nn::Linear<T> enc_out;
    nn::Linear<T> adapter_sem, adapter_vis;
    nn::Param<T> code_sem, code_vis;
    ResidualBlock<T> res_sem, res_vis;
    nn::Conv2d<T> dec_conv1;
    nn::GroupNorm<T> dec_norm1;
    nn::Conv2d<T> dec_conv2;
    nn::GroupNorm<T> dec_norm2;
    nn::Conv2d<T> dec_conv3;
};

} // namespace glotok
