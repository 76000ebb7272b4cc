#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "glotok/binary_io.hpp"
#include "glotok/error.hpp"
#include "glotok/tensor.hpp"

namespace glotok {

enum class Metric : std::uint8_t { euclidean = 0, cosine = 1 };

inline const char* metric_name(Metric m) { return m == Metric::cosine ? "cosine" : "euclidean"; }

inline Metric parse_metric(const std::string& s) {
    if (s == "euclidean") return Metric::euclidean;
    if (s == "cosine") return Metric::cosine;
    throw ValueError("unknown metric '" + s + "' (expected euclidean|cosine)");
}

// K x d matrix of code vectors.
template <class T>
class Codebook {
public:
    Codebook() = default;
    Codebook(Tensor<T> entries, Metric metric = Metric::euclidean, std::string name = "semantic")
        : entries_(std::move(entries)), metric_(metric), name_(std::move(name)) {
        if (entries_.rank() != 2 || entries_.dim(0) < 1 || entries_.dim(1) < 1)
            throw ShapeError("codebook entries must be K x d with K,d >= 1, got " + shape_str(entries_.shape()));
        require_finite(entries_, "codebook");
    }

    std::size_t size() const { return entries_.dim(0); }
    std::size_t dim() const { return entries_.dim(1); }
    Metric metric() const noexcept { return metric_; }
    const std::string& name() const noexcept { return name_; }
    void set_metric(Metric m) noexcept { metric_ = m; }

    const Tensor<T>& entries() const noexcept { return entries_; }
    // Mutable access for the optimizer; callers keep entries finite.
    Tensor<T>& mutable_entries() noexcept { return entries_; }
    std::span<const T> code(std::size_t k) const { return entries_.row(k); }

private:
    Tensor<T> entries_;
    Metric metric_ = Metric::euclidean;
    std::string name_;
};

// Integer grid of selected code indices; shape is the feature shape minus
// the channel dimension.
struct IndexGrid {
    Shape shape;
    std::vector<std::int32_t> values;
};

template <class T>
struct QuantizeResult {
    IndexGrid indices;
    Tensor<T> quantized;
    // Cells whose zero query forced a euclidean fallback under the cosine metric.
    std::size_t cosine_fallbacks = 0;
};

namespace detail {

template <class T>
T squared_distance(std::span<const T> a, std::span<const T> b) {
    T acc = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const T d = a[i] - b[i];
        acc += d * d;
    }
    return acc;
}

template <class T>
T dot(std::span<const T> a, std::span<const T> b) {
    T acc = 0;
    for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
    return acc;
}

template <class T>
std::size_t nearest_euclidean(std::span<const T> q, const Codebook<T>& cb) {
    std::size_t best = 0;
    T best_d = std::numeric_limits<T>::infinity();
    for (std::size_t k = 0; k < cb.size(); ++k) {
        const T d = squared_distance(q, cb.code(k));
        if (d < best_d) {  // strict: lowest index wins ties
            best_d = d;
            best = k;
        }
    }
    return best;
}

} // namespace detail

// Nearest-code lookup for every cell of an NHWC (or any [..., d]) feature tensor.
template <class T>
QuantizeResult<T> quantize(const Tensor<T>& features, const Codebook<T>& cb) {
    if (features.rank() < 1 || features.shape().back() != cb.dim())
        throw ShapeError("quantize: feature channels " +
                         (features.rank() ? std::to_string(features.shape().back()) : std::string("?")) +
                         " != codebook dim " + std::to_string(cb.dim()));
    require_finite(features, "quantize");

    QuantizeResult<T> out;
    out.indices.shape.assign(features.shape().begin(), features.shape().end() - 1);
    out.indices.values.resize(features.rows());
    out.quantized = Tensor<T>(features.shape());

    std::vector<T> inv_norm;
    if (cb.metric() == Metric::cosine) {
        inv_norm.resize(cb.size());
        for (std::size_t k = 0; k < cb.size(); ++k)
            inv_norm[k] = T(1) / std::max(std::sqrt(detail::dot(cb.code(k), cb.code(k))), T(1e-12));
    }

    for (std::size_t r = 0; r < features.rows(); ++r) {
        const auto q = features.row(r);
        std::size_t best = 0;
        if (cb.metric() == Metric::cosine) {
            const T qn = detail::dot(q, q);
            if (qn == T(0)) {
                ++out.cosine_fallbacks;
                best = detail::nearest_euclidean(q, cb);
            } else {
                // |q| is common to all candidates, so ranking by q.c/|c| suffices.
                T best_s = -std::numeric_limits<T>::infinity();
                for (std::size_t k = 0; k < cb.size(); ++k) {
                    const T s = detail::dot(q, cb.code(k)) * inv_norm[k];
                    if (s > best_s) {
                        best_s = s;
                        best = k;
                    }
                }
            }
        } else {
            best = detail::nearest_euclidean(q, cb);
        }
        out.indices.values[r] = static_cast<std::int32_t>(best);
        const auto c = cb.code(best);
        std::copy(c.begin(), c.end(), out.quantized.row(r).begin());
    }
    return out;
}

// Value and the two stop-gradient-separated gradients of
// mean|sg[Z] - Zhat|^2 + beta * mean|sg[Zhat] - Z|^2.
template <class T>
struct QuantLoss {
    double value = 0;
    Tensor<T> grad_quantized;  // first term only: flows into the selected codes
    Tensor<T> grad_features;   // commitment term only: flows into the encoder
};

// Explicit stop-gradient form: z_sg and zhat_sg are constants,
// mean|z_sg - zhat|^2 + beta * mean|zhat_sg - z|^2.
template <class T>
QuantLoss<T> quantization_loss(const Tensor<T>& z, const Tensor<T>& z_sg, const Tensor<T>& zhat, const Tensor<T>& zhat_sg,
                               double beta) {
    require_same_shape(z, zhat, "quantization_loss");
    require_same_shape(z, z_sg, "quantization_loss");
    require_same_shape(zhat, zhat_sg, "quantization_loss");
    if (beta < 0) throw ValueError("quantization_loss: beta must be >= 0");
    require_finite(z, "quantization_loss");
    require_finite(zhat, "quantization_loss");
    QuantLoss<T> out;
    out.grad_quantized = Tensor<T>(z.shape());
    out.grad_features = Tensor<T>(z.shape());
    if (z.empty()) return out;
    const double n = static_cast<double>(z.size());
    double codebook_term = 0, commit_term = 0;
    for (std::size_t i = 0; i < z.size(); ++i) {
        const double a = static_cast<double>(z_sg[i]) - static_cast<double>(zhat[i]);
        const double b = static_cast<double>(zhat_sg[i]) - static_cast<double>(z[i]);
        codebook_term += a * a;
        commit_term += b * b;
        out.grad_quantized[i] = static_cast<T>(-2.0 * a / n);
        out.grad_features[i] = static_cast<T>(-2.0 * beta * b / n);
    }
    out.value = (codebook_term + beta * commit_term) / n;
    return out;
}

template <class T>
QuantLoss<T> quantization_loss(const Tensor<T>& z, const Tensor<T>& zhat, double beta) {
    return quantization_loss(z, z, zhat, zhat, beta);
}

// Straight-through estimator: the forward value is Zhat, the backward pass
// copies the upstream gradient onto Z and gives nothing to the selection.
template <class T>
struct StraightThrough {
    static Tensor<T> forward(const Tensor<T>& z, const Tensor<T>& zhat) {
        require_same_shape(z, zhat, "straight_through");
        return zhat;
    }
    static Tensor<T> backward(const Tensor<T>& upstream) { return upstream; }
};

template <class T>
Tensor<T> straight_through(const Tensor<T>& z, const Tensor<T>& zhat) {
    return StraightThrough<T>::forward(z, zhat);
}

// Scatter-add per-cell gradients onto the codes that produced them.
template <class T>
void accumulate_code_grad(const IndexGrid& idx, const Tensor<T>& grad_cells, Tensor<T>& grad_entries) {
    const std::size_t d = grad_entries.dim(1);
    if (grad_cells.rows() != idx.values.size() || grad_cells.shape().back() != d)
        throw ShapeError("accumulate_code_grad: gradient does not match index grid");
    for (std::size_t r = 0; r < idx.values.size(); ++r) {
        T* dst = grad_entries.data() + static_cast<std::size_t>(idx.values[r]) * d;
        const T* src = grad_cells.data() + r * d;
        for (std::size_t j = 0; j < d; ++j) dst[j] += src[j];
    }
}

inline std::vector<std::uint64_t> usage_histogram(std::span<const std::int32_t> indices, std::size_t k) {
    std::vector<std::uint64_t> counts(k, 0);
    for (const auto i : indices) {
        if (i < 0 || static_cast<std::size_t>(i) >= k)
            throw ValueError("usage_histogram: index " + std::to_string(i) + " outside [0," + std::to_string(k) + ")");
        ++counts[static_cast<std::size_t>(i)];
    }
    return counts;
}

inline std::vector<std::uint64_t> usage_histogram(const std::vector<IndexGrid>& grids, std::size_t k) {
    std::vector<std::uint64_t> counts(k, 0);
    for (const auto& g : grids) {
        const auto c = usage_histogram(g.values, k);
        for (std::size_t i = 0; i < k; ++i) counts[i] += c[i];
    }
    return counts;
}

// GTCB: "GTCB", u32 version, u32 K, u32 d, u8 metric, K*d float32 row-major.
inline constexpr std::uint32_t kCodebookVersion = 1;

template <class T>
std::vector<std::uint8_t> encode_codebook(const Codebook<T>& cb) {
    io::ByteWriter w;
    w.magic("GTCB");
    w.put<std::uint32_t>(kCodebookVersion);
    w.put<std::uint32_t>(static_cast<std::uint32_t>(cb.size()));
    w.put<std::uint32_t>(static_cast<std::uint32_t>(cb.dim()));
    w.put<std::uint8_t>(static_cast<std::uint8_t>(cb.metric()));
    for (const T v : cb.entries().vec()) w.put<float>(static_cast<float>(v));
    return w.bytes();
}

template <class T>
void save_codebook(const Codebook<T>& cb, const std::filesystem::path& path) {
    io::ByteWriter w;
    w.put_bytes(encode_codebook(cb));
    w.save(path);
}

template <class T = float>
Codebook<T> load_codebook(const std::filesystem::path& path, std::string name = "semantic") {
    auto r = io::ByteReader::from_file(path);
    r.expect_magic("GTCB");
    const auto version = r.get<std::uint32_t>("version");
    if (version != kCodebookVersion)
        throw FormatError(r.label() + ": unsupported codebook version " + std::to_string(version));
    const auto k = r.get<std::uint32_t>("K");
    const auto d = r.get<std::uint32_t>("d");
    const auto m = r.get<std::uint8_t>("metric");
    if (m > 1) throw FormatError(r.label() + ": unknown metric code " + std::to_string(m));
    const auto vals = r.get_array<float>(std::uint64_t{k} * d, "codebook entries");
    r.expect_end();
    Tensor<T> e({k, d});
    for (std::size_t i = 0; i < vals.size(); ++i) {
        if (!std::isfinite(vals[i])) throw FormatError(r.label() + ": non-finite codebook entry");
        e[i] = static_cast<T>(vals[i]);
    }
    return Codebook<T>(std::move(e), static_cast<Metric>(m), std::move(name));
}

template <class T>
void export_codebook_csv(const Codebook<T>& cb, const std::filesystem::path& path) {
    std::ofstream f(path);
    if (!f) throw Error("cannot open '" + path.string() + "' for writing");
    f.precision(9);
    for (std::size_t k = 0; k < cb.size(); ++k) {
        const auto c = cb.code(k);
        for (std::size_t j = 0; j < c.size(); ++j) f << (j ? "," : "") << static_cast<double>(c[j]);
        f << '\n';
    }
}

} // namespace glotok
