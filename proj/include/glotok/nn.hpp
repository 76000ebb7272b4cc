#pragma once

#include <cmath>
#include <limits>
#include <random>
#include <string>
#include <vector>

#include "glotok/error.hpp"
#include "glotok/parallel.hpp"
#include "glotok/tensor.hpp"

// Minimal layer set with explicit forward/backward passes. Activations
// are NHWC; every layer's backward accumulates into its Param::grad and
// returns the gradient with respect to its input.
namespace glotok::nn {

template <class T>
struct Param {
    std::string name;
    Tensor<T> value;
    Tensor<T> grad;

    Param() = default;
    Param(std::string n, Shape s) : name(std::move(n)), value(s), grad(s) {}
    void zero_grad() { grad.fill(T(0)); }
};

// PyTorch-style default init: U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
template <class T>
void init_uniform(Tensor<T>& t, double fan_in, std::mt19937_64& rng) {
    const double bound = 1.0 / std::sqrt(fan_in);
    std::uniform_real_distribution<double> u(-bound, bound);
    for (auto& v : t.vec()) v = static_cast<T>(u(rng));
}

// rows x cols row-major -> cols x rows.
template <class T>
std::vector<T> transpose(const T* m, std::size_t rows, std::size_t cols) {
    std::vector<T> t(rows * cols);
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c) t[c * rows + r] = m[r * cols + c];
    return t;
}

// Affine map over the last dimension: y = x W + b, W stored in x out.
template <class T>
class Linear {
public:
    Linear() = default;
    Linear(std::string name, std::size_t in, std::size_t out)
        : in_(in), out_(out), weight(name + ".weight", {in, out}), bias(name + ".bias", {out}) {}

    void init(std::mt19937_64& rng) {
        init_uniform(weight.value, static_cast<double>(in_), rng);
        init_uniform(bias.value, static_cast<double>(in_), rng);
    }
    void zero_init() {
        weight.value.fill(T(0));
        bias.value.fill(T(0));
    }

    std::size_t in_features() const noexcept { return in_; }
    std::size_t out_features() const noexcept { return out_; }

    Tensor<T> forward(const Tensor<T>& x) const {
        if (x.rank() < 1 || x.shape().back() != in_)
            throw ShapeError(weight.name + ": expected last dim " + std::to_string(in_) + ", got " + shape_str(x.shape()));
        Shape s = x.shape();
        s.back() = out_;
        Tensor<T> y(s);
        const T* w = weight.value.data();
        for (std::size_t r = 0; r < x.rows(); ++r) {
            const T* xr = x.data() + r * in_;
            T* yr = y.data() + r * out_;
            for (std::size_t o = 0; o < out_; ++o) yr[o] = bias.value[o];
            for (std::size_t i = 0; i < in_; ++i) {
                const T xv = xr[i];
                const T* wr = w + i * out_;
                for (std::size_t o = 0; o < out_; ++o) yr[o] += xv * wr[o];
            }
        }
        return y;
    }

    Tensor<T> backward(const Tensor<T>& x, const Tensor<T>& dy) {
        Tensor<T> dx(x.shape());
        const std::vector<T> wt = transpose(weight.value.data(), in_, out_);
        T* dw = weight.grad.data();
        for (std::size_t r = 0; r < x.rows(); ++r) {
            const T* xr = x.data() + r * in_;
            const T* dyr = dy.data() + r * out_;
            T* dxr = dx.data() + r * in_;
            for (std::size_t o = 0; o < out_; ++o) bias.grad[o] += dyr[o];
            for (std::size_t i = 0; i < in_; ++i) {
                const T xv = xr[i];
                T* dwr = dw + i * out_;
                for (std::size_t o = 0; o < out_; ++o) dwr[o] += xv * dyr[o];
            }
            for (std::size_t o = 0; o < out_; ++o) {
                const T gv = dyr[o];
                const T* wr = wt.data() + o * in_;
                for (std::size_t i = 0; i < in_; ++i) dxr[i] += gv * wr[i];
            }
        }
        return dx;
    }

    std::vector<Param<T>*> params() { return {&weight, &bias}; }

private:
    std::size_t in_ = 0, out_ = 0;

public:
    Param<T> weight;
    Param<T> bias;
};

// k x k convolution with zero padding k/2, NHWC, weight stored [k][k][in][out].
template <class T>
class Conv2d {
public:
    Conv2d() = default;
    Conv2d(std::string name, std::size_t in, std::size_t out, std::size_t k, std::size_t stride)
        : in_(in), out_(out), k_(k), stride_(stride), weight(name + ".weight", {k, k, in, out}), bias(name + ".bias", {out}) {}

    void init(std::mt19937_64& rng) {
        const double fan_in = static_cast<double>(in_ * k_ * k_);
        init_uniform(weight.value, fan_in, rng);
        init_uniform(bias.value, fan_in, rng);
    }

    std::size_t out_size(std::size_t n) const { return (n + 2 * (k_ / 2) - k_) / stride_ + 1; }

    Tensor<T> forward(const Tensor<T>& x) const {
        check(x);
        const std::size_t b = x.dim(0), h = x.dim(1), w = x.dim(2);
        const std::size_t oh = out_size(h), ow = out_size(w);
        const auto pad = static_cast<std::ptrdiff_t>(k_ / 2);
        Tensor<T> y({b, oh, ow, out_});
        const T* wt = weight.value.data();
        parallel_for(b, [&](std::size_t n) {
            for (std::size_t oy = 0; oy < oh; ++oy)
                for (std::size_t ox = 0; ox < ow; ++ox) {
                    T* acc = y.data() + ((n * oh + oy) * ow + ox) * out_;
                    for (std::size_t o = 0; o < out_; ++o) acc[o] = bias.value[o];
                    for (std::size_t ky = 0; ky < k_; ++ky) {
                        const auto iy = static_cast<std::ptrdiff_t>(oy * stride_ + ky) - pad;
                        if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
                        for (std::size_t kx = 0; kx < k_; ++kx) {
                            const auto ix = static_cast<std::ptrdiff_t>(ox * stride_ + kx) - pad;
                            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w)) continue;
                            const T* xp = x.data() + ((n * h + static_cast<std::size_t>(iy)) * w + static_cast<std::size_t>(ix)) * in_;
                            const T* wp = wt + (ky * k_ + kx) * in_ * out_;
                            for (std::size_t i = 0; i < in_; ++i) {
                                const T xv = xp[i];
                                const T* wr = wp + i * out_;
                                for (std::size_t o = 0; o < out_; ++o) acc[o] += xv * wr[o];
                            }
                        }
                    }
                }
        });
        return y;
    }

    Tensor<T> backward(const Tensor<T>& x, const Tensor<T>& dy) {
        const std::size_t b = x.dim(0), h = x.dim(1), w = x.dim(2);
        const std::size_t oh = out_size(h), ow = out_size(w);
        const auto pad = static_cast<std::ptrdiff_t>(k_ / 2);
        Tensor<T> dx(x.shape());
        // Per-tap transposed weights [k][k][out][in].
        std::vector<T> wt(weight.value.size());
        for (std::size_t tap = 0; tap < k_ * k_; ++tap) {
            const auto t = transpose(weight.value.data() + tap * in_ * out_, in_, out_);
            std::copy(t.begin(), t.end(), wt.begin() + static_cast<std::ptrdiff_t>(tap * in_ * out_));
        }
        // Per-sample weight gradients, reduced in sample order afterwards.
        const std::size_t wsize = weight.value.size();
        std::vector<T> dw_part(b * wsize, T(0)), db_part(b * out_, T(0));
        parallel_for(b, [&](std::size_t n) {
            T* dw = dw_part.data() + n * wsize;
            T* db = db_part.data() + n * out_;
            for (std::size_t oy = 0; oy < oh; ++oy)
                for (std::size_t ox = 0; ox < ow; ++ox) {
                    const T* g = dy.data() + ((n * oh + oy) * ow + ox) * out_;
                    for (std::size_t o = 0; o < out_; ++o) db[o] += g[o];
                    for (std::size_t ky = 0; ky < k_; ++ky) {
                        const auto iy = static_cast<std::ptrdiff_t>(oy * stride_ + ky) - pad;
                        if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
                        for (std::size_t kx = 0; kx < k_; ++kx) {
                            const auto ix = static_cast<std::ptrdiff_t>(ox * stride_ + kx) - pad;
                            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w)) continue;
                            const std::size_t off = ((n * h + static_cast<std::size_t>(iy)) * w + static_cast<std::size_t>(ix)) * in_;
                            const T* xp = x.data() + off;
                            T* dxp = dx.data() + off;
                            const std::size_t woff = (ky * k_ + kx) * in_ * out_;
                            for (std::size_t i = 0; i < in_; ++i) {
                                const T xv = xp[i];
                                T* dwr = dw + woff + i * out_;
                                for (std::size_t o = 0; o < out_; ++o) dwr[o] += xv * g[o];
                            }
                            const T* wtp = wt.data() + woff;
                            for (std::size_t o = 0; o < out_; ++o) {
                                const T gv = g[o];
                                const T* wr = wtp + o * in_;
                                for (std::size_t i = 0; i < in_; ++i) dxp[i] += gv * wr[i];
                            }
                        }
                    }
                }
        });
        for (std::size_t n = 0; n < b; ++n) {
            const T* dw = dw_part.data() + n * wsize;
            for (std::size_t j = 0; j < wsize; ++j) weight.grad[j] += dw[j];
            const T* db = db_part.data() + n * out_;
            for (std::size_t o = 0; o < out_; ++o) bias.grad[o] += db[o];
        }
        return dx;
    }

    std::vector<Param<T>*> params() { return {&weight, &bias}; }

private:
    void check(const Tensor<T>& x) const {
        if (x.rank() != 4 || x.dim(3) != in_)
            throw ShapeError(weight.name + ": expected NHWC input with " + std::to_string(in_) + " channels, got " +
                             shape_str(x.shape()));
    }

    std::size_t in_ = 0, out_ = 0, k_ = 3, stride_ = 1;

public:
    Param<T> weight;
    Param<T> bias;
};

// Per-sample normalization over groups of channels; also used as LayerNorm
// when given rank-2 rows and one group.
template <class T>
struct NormCache {
    Tensor<T> xhat;
    std::vector<T> rstd;
};

template <class T>
class GroupNorm {
public:
    GroupNorm() = default;
    GroupNorm(std::string name, std::size_t channels, std::size_t groups, double eps = 1e-5)
        : c_(channels), g_(groups), eps_(eps), gamma(name + ".gamma", {channels}), beta(name + ".beta", {channels}) {
        if (groups == 0 || channels % groups != 0) throw ShapeError(name + ": channels must divide into groups");
        gamma.value.fill(T(1));
    }

    // Samples are the leading dimension; each holds rows() / samples cells.
    Tensor<T> forward(const Tensor<T>& x, std::size_t samples, NormCache<T>& cache) const {
        if (x.shape().back() != c_) throw ShapeError(gamma.name + ": channel mismatch " + shape_str(x.shape()));
        const std::size_t cells = x.rows() / samples, cg = c_ / g_;
        const double n = static_cast<double>(cells * cg);
        Tensor<T> y(x.shape());
        cache.xhat = Tensor<T>(x.shape());
        cache.rstd.assign(samples * g_, T(0));
        for (std::size_t s = 0; s < samples; ++s)
            for (std::size_t g = 0; g < g_; ++g) {
                double mean = 0, var = 0;
                for (std::size_t p = 0; p < cells; ++p)
                    for (std::size_t c = g * cg; c < (g + 1) * cg; ++c) mean += x[(s * cells + p) * c_ + c];
                mean /= n;
                for (std::size_t p = 0; p < cells; ++p)
                    for (std::size_t c = g * cg; c < (g + 1) * cg; ++c) {
                        const double t = x[(s * cells + p) * c_ + c] - mean;
                        var += t * t;
                    }
                var /= n;
                const T rs = static_cast<T>(1.0 / std::sqrt(var + eps_));
                cache.rstd[s * g_ + g] = rs;
                for (std::size_t p = 0; p < cells; ++p)
                    for (std::size_t c = g * cg; c < (g + 1) * cg; ++c) {
                        const std::size_t i = (s * cells + p) * c_ + c;
                        const T xh = static_cast<T>((x[i] - mean)) * rs;
                        cache.xhat[i] = xh;
                        y[i] = gamma.value[c] * xh + beta.value[c];
                    }
            }
        return y;
    }

    Tensor<T> backward(const NormCache<T>& cache, std::size_t samples, const Tensor<T>& dy) {
        const std::size_t cells = dy.rows() / samples, cg = c_ / g_;
        const T n = static_cast<T>(cells * cg);
        Tensor<T> dx(dy.shape());
        for (std::size_t s = 0; s < samples; ++s)
            for (std::size_t g = 0; g < g_; ++g) {
                T sum_d = 0, sum_dx = 0;
                for (std::size_t p = 0; p < cells; ++p)
                    for (std::size_t c = g * cg; c < (g + 1) * cg; ++c) {
                        const std::size_t i = (s * cells + p) * c_ + c;
                        const T xh = cache.xhat[i];
                        beta.grad[c] += dy[i];
                        gamma.grad[c] += dy[i] * xh;
                        const T d = dy[i] * gamma.value[c];
                        sum_d += d;
                        sum_dx += d * xh;
                    }
                const T rs = cache.rstd[s * g_ + g];
                for (std::size_t p = 0; p < cells; ++p)
                    for (std::size_t c = g * cg; c < (g + 1) * cg; ++c) {
                        const std::size_t i = (s * cells + p) * c_ + c;
                        const T d = dy[i] * gamma.value[c];
                        dx[i] = rs / n * (n * d - sum_d - cache.xhat[i] * sum_dx);
                    }
            }
        return dx;
    }

    std::vector<Param<T>*> params() { return {&gamma, &beta}; }

private:
    std::size_t c_ = 0, g_ = 1;
    double eps_ = 1e-5;

public:
    Param<T> gamma;
    Param<T> beta;
};

// Row-wise LayerNorm: a GroupNorm with one group where every row is a sample.
template <class T>
class LayerNorm {
public:
    LayerNorm() = default;
    LayerNorm(std::string name, std::size_t dim) : norm_(std::move(name), dim, 1) {}

    Tensor<T> forward(const Tensor<T>& x, NormCache<T>& cache) const { return norm_.forward(x, x.rows(), cache); }
    Tensor<T> backward(const NormCache<T>& cache, const Tensor<T>& dy) { return norm_.backward(cache, dy.rows(), dy); }
    std::vector<Param<T>*> params() { return norm_.params(); }
    GroupNorm<T>& inner() noexcept { return norm_; }

private:
    GroupNorm<T> norm_;
};

template <class T>
T sigmoid(T x) {
    return T(1) / (T(1) + std::exp(-x));
}

template <class T>
Tensor<T> silu(const Tensor<T>& x) {
    Tensor<T> y(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] * sigmoid(x[i]);
    return y;
}

template <class T>
Tensor<T> silu_backward(const Tensor<T>& x, const Tensor<T>& dy) {
    Tensor<T> dx(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) {
        const T s = sigmoid(x[i]);
        dx[i] = dy[i] * s * (T(1) + x[i] * (T(1) - s));
    }
    return dx;
}

template <class T>
Tensor<T> upsample2x(const Tensor<T>& x) {
    const std::size_t b = x.dim(0), h = x.dim(1), w = x.dim(2), c = x.dim(3);
    Tensor<T> y({b, 2 * h, 2 * w, c});
    for (std::size_t n = 0; n < b; ++n)
        for (std::size_t yy = 0; yy < 2 * h; ++yy)
            for (std::size_t xx = 0; xx < 2 * w; ++xx)
                std::copy_n(x.data() + ((n * h + yy / 2) * w + xx / 2) * c, c, y.data() + ((n * 2 * h + yy) * 2 * w + xx) * c);
    return y;
}

template <class T>
Tensor<T> upsample2x_backward(const Tensor<T>& dy) {
    const std::size_t b = dy.dim(0), h = dy.dim(1) / 2, w = dy.dim(2) / 2, c = dy.dim(3);
    Tensor<T> dx({b, h, w, c});
    for (std::size_t n = 0; n < b; ++n)
        for (std::size_t yy = 0; yy < 2 * h; ++yy)
            for (std::size_t xx = 0; xx < 2 * w; ++xx) {
                const T* g = dy.data() + ((n * 2 * h + yy) * 2 * w + xx) * c;
                T* d = dx.data() + ((n * h + yy / 2) * w + xx / 2) * c;
                for (std::size_t k = 0; k < c; ++k) d[k] += g[k];
            }
    return dx;
}

// Multi-head self-attention over the (h*w) token sequence of each sample.
template <class T>
struct AttentionCache {
    Tensor<T> x, q, k, v, probs, heads;
};

template <class T>
class SelfAttention {
public:
    SelfAttention() = default;
    SelfAttention(const std::string& name, std::size_t dim, std::size_t heads)
        : dim_(dim), heads_(heads), wq(name + ".q", dim, dim), wk(name + ".k", dim, dim), wv(name + ".v", dim, dim),
          wo(name + ".o", dim, dim) {
        if (heads == 0 || dim % heads != 0) throw ShapeError(name + ": model dim must divide into heads");
    }

    void init(std::mt19937_64& rng) {
        wq.init(rng);
        wk.init(rng);
        wv.init(rng);
        wo.init(rng);
    }

    // x: samples x tokens x dim (any leading layout with rows() == samples*tokens).
    Tensor<T> forward(const Tensor<T>& x, std::size_t samples, AttentionCache<T>& c) const {
        const std::size_t tokens = x.rows() / samples, dh = dim_ / heads_;
        const T scale = static_cast<T>(1.0 / std::sqrt(static_cast<double>(dh)));
        c.x = x;
        c.q = wq.forward(x);
        c.k = wk.forward(x);
        c.v = wv.forward(x);
        c.probs = Tensor<T>({samples, heads_, tokens, tokens});
        c.heads = Tensor<T>(x.shape());
        for (std::size_t s = 0; s < samples; ++s)
            for (std::size_t hd = 0; hd < heads_; ++hd) {
                T* p = c.probs.data() + (s * heads_ + hd) * tokens * tokens;
                for (std::size_t i = 0; i < tokens; ++i) {
                    const T* qi = c.q.data() + (s * tokens + i) * dim_ + hd * dh;
                    T mx = -std::numeric_limits<T>::infinity();
                    for (std::size_t j = 0; j < tokens; ++j) {
                        const T* kj = c.k.data() + (s * tokens + j) * dim_ + hd * dh;
                        T acc = 0;
                        for (std::size_t e = 0; e < dh; ++e) acc += qi[e] * kj[e];
                        p[i * tokens + j] = acc * scale;
                        mx = std::max(mx, acc * scale);
                    }
                    T z = 0;
                    for (std::size_t j = 0; j < tokens; ++j) {
                        p[i * tokens + j] = std::exp(p[i * tokens + j] - mx);
                        z += p[i * tokens + j];
                    }
                    T* out = c.heads.data() + (s * tokens + i) * dim_ + hd * dh;
                    for (std::size_t j = 0; j < tokens; ++j) {
                        p[i * tokens + j] /= z;
                        const T pij = p[i * tokens + j];
                        const T* vj = c.v.data() + (s * tokens + j) * dim_ + hd * dh;
                        for (std::size_t e = 0; e < dh; ++e) out[e] += pij * vj[e];
                    }
                }
            }
        return wo.forward(c.heads);
    }

    Tensor<T> backward(const AttentionCache<T>& c, std::size_t samples, const Tensor<T>& dy) {
        const std::size_t tokens = c.x.rows() / samples, dh = dim_ / heads_;
        const T scale = static_cast<T>(1.0 / std::sqrt(static_cast<double>(dh)));
        const Tensor<T> dheads = wo.backward(c.heads, dy);
        Tensor<T> dq(c.q.shape()), dk(c.k.shape()), dv(c.v.shape());
        std::vector<T> dp(tokens);
        for (std::size_t s = 0; s < samples; ++s)
            for (std::size_t hd = 0; hd < heads_; ++hd) {
                const T* p = c.probs.data() + (s * heads_ + hd) * tokens * tokens;
                for (std::size_t i = 0; i < tokens; ++i) {
                    const T* go = dheads.data() + (s * tokens + i) * dim_ + hd * dh;
                    T dot = 0;
                    for (std::size_t j = 0; j < tokens; ++j) {
                        const T* vj = c.v.data() + (s * tokens + j) * dim_ + hd * dh;
                        T* dvj = dv.data() + (s * tokens + j) * dim_ + hd * dh;
                        const T pij = p[i * tokens + j];
                        T acc = 0;
                        for (std::size_t e = 0; e < dh; ++e) {
                            acc += go[e] * vj[e];
                            dvj[e] += pij * go[e];
                        }
                        dp[j] = acc;
                        dot += acc * pij;
                    }
                    const T* qi = c.q.data() + (s * tokens + i) * dim_ + hd * dh;
                    T* dqi = dq.data() + (s * tokens + i) * dim_ + hd * dh;
                    for (std::size_t j = 0; j < tokens; ++j) {
                        const T ds = p[i * tokens + j] * (dp[j] - dot) * scale;
                        const T* kj = c.k.data() + (s * tokens + j) * dim_ + hd * dh;
                        T* dkj = dk.data() + (s * tokens + j) * dim_ + hd * dh;
                        for (std::size_t e = 0; e < dh; ++e) {
                            dqi[e] += ds * kj[e];
                            dkj[e] += ds * qi[e];
                        }
                    }
                }
            }
        Tensor<T> dx = wq.backward(c.x, dq);
        add_inplace(dx, wk.backward(c.x, dk));
        add_inplace(dx, wv.backward(c.x, dv));
        return dx;
    }

    std::vector<Param<T>*> params() {
        std::vector<Param<T>*> out;
        for (auto* l : {&wq, &wk, &wv, &wo})
            for (auto* p : l->params()) out.push_back(p);
        return out;
    }

private:
    std::size_t dim_ = 0, heads_ = 1;

public:
    Linear<T> wq, wk, wv, wo;
};

} // namespace glotok::nn
