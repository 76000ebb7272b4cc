#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "glotok/codebook.hpp"
#include "glotok/error.hpp"
#include "glotok/tensor.hpp"

namespace glotok {

inline constexpr double kLogEps = 1e-12;
inline constexpr double kNormEps = 1e-12;

// Sharpness with a Gaussian sigma of half a bin width, 1/sqrt(2 alpha) = 1/(N-1).
inline double default_alpha(int bins) { return 2.0 * (bins - 1.0) * (bins - 1.0) / 4.0; }

struct BinGrid {
    std::vector<double> centers;
    std::size_t size() const noexcept { return centers.size(); }
};

inline BinGrid bin_grid(int n) {
    if (n < 2) throw ValueError("bin_grid: need at least 2 bins, got " + std::to_string(n));
    BinGrid g;
    g.centers.resize(static_cast<std::size_t>(n));
    for (int k = 0; k < n; ++k) g.centers[static_cast<std::size_t>(k)] = -1.0 + 2.0 * k / (n - 1.0);
    return g;
}

struct RelationHistogram {
    std::vector<double> mass;
    bool normalized = false;
    double alpha = 0;
    std::uint64_t pair_count = 0;

    std::size_t bins() const noexcept { return mass.size(); }
    double total() const {
        double s = 0;
        for (const double m : mass) s += m;
        return s;
    }
};

// Which pairs (i, j) of codebook rows enter the relation set.
struct PairSet {
    std::vector<std::pair<std::uint32_t, std::uint32_t>> pairs;
};

inline std::uint64_t relation_count(std::uint64_t k, bool include_diagonal) {
    return include_diagonal ? k * (k + 1) / 2 : k * (k - 1) / 2;
}

inline PairSet all_pairs(std::size_t k, bool include_diagonal) {
    if (!include_diagonal && k < 2) throw ValueError("pairwise relations: need K >= 2 when excluding the diagonal");
    PairSet s;
    s.pairs.reserve(relation_count(k, include_diagonal));
    for (std::uint32_t i = 0; i < k; ++i)
        for (std::uint32_t j = include_diagonal ? i : i + 1; j < k; ++j) s.pairs.emplace_back(i, j);
    return s;
}

// Uniform sample (with replacement) from the upper-triangular pair set.
inline PairSet sample_pairs(std::size_t k, bool include_diagonal, std::size_t count, std::mt19937_64& rng) {
    if (!include_diagonal && k < 2) throw ValueError("pairwise relations: need K >= 2 when excluding the diagonal");
    const std::uint64_t total = relation_count(k, include_diagonal);
    std::uniform_int_distribution<std::uint64_t> pick(0, total - 1);
    const auto kk = static_cast<std::uint64_t>(k);
    // Row i covers linear indices [off(i), off(i+1)).
    auto row_offset = [&](std::uint64_t i) {
        const std::uint64_t tri = i == 0 ? 0 : i * (i - 1) / 2;
        return include_diagonal ? i * kk - tri : i * (kk - 1) - tri;
    };
    PairSet s;
    s.pairs.reserve(count);
    for (std::size_t n = 0; n < count; ++n) {
        const std::uint64_t l = pick(rng);
        std::uint64_t lo = 0, hi = include_diagonal ? kk : kk - 1;  // find last row with offset <= l
        while (hi - lo > 1) {
            const std::uint64_t mid = (lo + hi) / 2;
            if (row_offset(mid) <= l) lo = mid; else hi = mid;
        }
        const std::uint64_t i = lo;
        const std::uint64_t j = (include_diagonal ? i : i + 1) + (l - row_offset(i));
        s.pairs.emplace_back(static_cast<std::uint32_t>(i), static_cast<std::uint32_t>(j));
    }
    return s;
}

namespace detail {

// Unit rows with norms clamped away from zero.
template <class T>
std::pair<std::vector<double>, std::vector<double>> unit_rows(const Tensor<T>& e) {
    const std::size_t k = e.dim(0), d = e.dim(1);
    std::vector<double> u(k * d), norm(k);
    for (std::size_t i = 0; i < k; ++i) {
        double s = 0;
        for (std::size_t j = 0; j < d; ++j) s += static_cast<double>(e[i * d + j]) * static_cast<double>(e[i * d + j]);
        norm[i] = std::max(std::sqrt(s), kNormEps);
        for (std::size_t j = 0; j < d; ++j) u[i * d + j] = static_cast<double>(e[i * d + j]) / norm[i];
    }
    return {std::move(u), std::move(norm)};
}

inline std::vector<double> cosines(const std::vector<double>& u, std::size_t d, const PairSet& ps) {
    std::vector<double> out(ps.pairs.size());
    for (std::size_t p = 0; p < ps.pairs.size(); ++p) {
        const double* a = u.data() + ps.pairs[p].first * d;
        const double* b = u.data() + ps.pairs[p].second * d;
        double s = 0;
        for (std::size_t j = 0; j < d; ++j) s += a[j] * b[j];
        out[p] = std::clamp(s, -1.0, 1.0);
    }
    return out;
}

} // namespace detail

// Cosine similarity of every row pair i <= j (or i < j), in row-major pair order.
template <class T>
std::vector<double> pairwise_cosine(const Codebook<T>& cb, bool include_diagonal) {
    const auto ps = all_pairs(cb.size(), include_diagonal);
    const auto [u, norm] = detail::unit_rows(cb.entries());
    return detail::cosines(u, cb.dim(), ps);
}

inline RelationHistogram smoothed_histogram(std::span<const double> d, const BinGrid& bins, double alpha) {
    if (d.empty()) throw ValueError("smoothed_histogram: empty relation set");
    if (!(alpha > 0)) throw ValueError("smoothed_histogram: alpha must be > 0");
    RelationHistogram h;
    h.mass.assign(bins.size(), 0.0);
    h.alpha = alpha;
    h.pair_count = d.size();
    for (const double v : d)
        for (std::size_t n = 0; n < bins.size(); ++n) {
            const double t = v - bins.centers[n];
            h.mass[n] += std::exp(-alpha * t * t);
        }
    return h;
}

// dL/dD_i = sum_n dL/dmass_n * (-2 alpha (D_i - B_n) exp(-alpha (D_i - B_n)^2)).
inline std::vector<double> smoothed_histogram_backward(std::span<const double> d, const BinGrid& bins, double alpha,
                                                       std::span<const double> grad_mass) {
    std::vector<double> g(d.size(), 0.0);
    for (std::size_t i = 0; i < d.size(); ++i) {
        double acc = 0;
        for (std::size_t n = 0; n < bins.size(); ++n) {
            const double t = d[i] - bins.centers[n];
            acc += grad_mass[n] * (-2.0 * alpha * t * std::exp(-alpha * t * t));
        }
        g[i] = acc;
    }
    return g;
}

inline RelationHistogram normalize(const RelationHistogram& h) {
    const double s = h.total();
    if (!(s > 0)) throw ValueError("normalize: histogram has zero total mass");
    RelationHistogram out = h;
    for (double& m : out.mass) m /= s;
    out.normalized = true;
    return out;
}

// Quotient rule through P = mass / sum(mass).
inline std::vector<double> normalize_backward(std::span<const double> mass, std::span<const double> grad_p) {
    double s = 0, dot = 0;
    for (std::size_t n = 0; n < mass.size(); ++n) s += mass[n];
    for (std::size_t n = 0; n < mass.size(); ++n) dot += grad_p[n] * mass[n];
    std::vector<double> g(mass.size());
    for (std::size_t n = 0; n < mass.size(); ++n) g[n] = grad_p[n] / s - dot / (s * s);
    return g;
}

// KL(p || q) with both logs stabilized by kLogEps.
inline double kl_divergence(std::span<const double> p, std::span<const double> q) {
    if (p.size() != q.size()) throw ShapeError("kl_divergence: bin count mismatch");
    double acc = 0;
    for (std::size_t n = 0; n < p.size(); ++n) acc += p[n] * (std::log(p[n] + kLogEps) - std::log(q[n] + kLogEps));
    return acc;
}

enum class KlOrientation : std::uint8_t {
    teacher_student,  // KL(P_t || P_s), the default
    student_teacher,  // KL(P_s || P_t)
};

struct HistConfig {
    int bins = 40;
    double alpha = default_alpha(40);
    bool include_diagonal = true;
    KlOrientation orientation = KlOrientation::teacher_student;
    std::size_t subsample_above = 4096;        // K beyond which pairs are sampled
    std::size_t sample_pairs = std::size_t{1} << 22;
};

template <class T>
struct HistLossResult {
    double value = 0;
    Tensor<T> grad;               // d loss / d student entries, K x d
    RelationHistogram student;    // normalized P_s
};

template <class T>
RelationHistogram codebook_histogram(const Codebook<T>& cb, int bins, double alpha, bool include_diagonal) {
    const auto d = pairwise_cosine(cb, include_diagonal);
    return normalize(smoothed_histogram(d, bin_grid(bins), alpha));
}

// KL between a frozen target relation histogram and the student codebook's
// normalized relation histogram, with the exact gradient onto the codes.
template <class T>
HistLossResult<T> hist_loss(const Codebook<T>& student, const RelationHistogram& target, const HistConfig& cfg,
                            std::mt19937_64* rng = nullptr) {
    if (target.bins() != static_cast<std::size_t>(cfg.bins))
        throw ValueError("hist_loss: teacher has " + std::to_string(target.bins()) + " bins, config expects " +
                         std::to_string(cfg.bins));
    if (!target.normalized || std::abs(target.total() - 1.0) > 1e-9)
        throw ValueError("hist_loss: teacher distribution is not normalized");

    const std::size_t k = student.size(), dim = student.dim();
    PairSet ps;
    if (k > cfg.subsample_above) {
        std::mt19937_64 fallback(0);
        ps = sample_pairs(k, cfg.include_diagonal, cfg.sample_pairs, rng ? *rng : fallback);
    } else {
        ps = all_pairs(k, cfg.include_diagonal);
    }

    const auto bins = bin_grid(cfg.bins);
    const auto [u, norm] = detail::unit_rows(student.entries());
    const auto d = detail::cosines(u, dim, ps);
    const auto raw = smoothed_histogram(d, bins, cfg.alpha);
    auto ps_hist = normalize(raw);

    const auto& pt = target.mass;
    const auto& p = ps_hist.mass;
    std::vector<double> grad_p(p.size());
    HistLossResult<T> out;
    if (cfg.orientation == KlOrientation::teacher_student) {
        out.value = kl_divergence(pt, p);
        for (std::size_t n = 0; n < p.size(); ++n) grad_p[n] = -pt[n] / (p[n] + kLogEps);
    } else {
        out.value = kl_divergence(p, pt);
        for (std::size_t n = 0; n < p.size(); ++n)
            grad_p[n] = std::log(p[n] + kLogEps) - std::log(pt[n] + kLogEps) + p[n] / (p[n] + kLogEps);
    }

    const auto grad_mass = normalize_backward(raw.mass, grad_p);
    const auto grad_d = smoothed_histogram_backward(d, bins, cfg.alpha, grad_mass);

    // dD/dt_i = (u_j - D u_i) / |t_i|, symmetric in (i, j).
    std::vector<double> g(k * dim, 0.0);
    for (std::size_t q = 0; q < ps.pairs.size(); ++q) {
        const auto [i, j] = ps.pairs[q];
        if (i == j) continue;  // self-similarity is constant
        const double gd = grad_d[q];
        if (gd == 0.0) continue;
        const double* ui = u.data() + i * dim;
        const double* uj = u.data() + j * dim;
        double* gi = g.data() + i * dim;
        double* gj = g.data() + j * dim;
        const double ci = gd / norm[i], cj = gd / norm[j];
        for (std::size_t c = 0; c < dim; ++c) {
            gi[c] += ci * (uj[c] - d[q] * ui[c]);
            gj[c] += cj * (ui[c] - d[q] * uj[c]);
        }
    }
    out.grad = Tensor<T>({k, dim});
    for (std::size_t i = 0; i < g.size(); ++i) out.grad[i] = static_cast<T>(g[i]);
    out.student = std::move(ps_hist);
    return out;
}

// Linear interpolation of a normalized histogram onto a grid with a different
// bin count, renormalized.
inline RelationHistogram rebin(const RelationHistogram& h, int bins) {
    const auto src = bin_grid(static_cast<int>(h.bins()));
    const auto dst = bin_grid(bins);
    RelationHistogram out;
    out.alpha = h.alpha;
    out.pair_count = h.pair_count;
    out.mass.resize(dst.size());
    for (std::size_t n = 0; n < dst.size(); ++n) {
        const double x = dst.centers[n];
        const double pos = (x + 1.0) / 2.0 * (static_cast<double>(src.size()) - 1.0);
        const auto lo = static_cast<std::size_t>(std::clamp(std::floor(pos), 0.0, static_cast<double>(src.size() - 2)));
        const double t = pos - static_cast<double>(lo);
        out.mass[n] = (1 - t) * h.mass[lo] + t * h.mass[lo + 1];
    }
    return normalize(out);
}

inline void export_histogram_csv(const RelationHistogram& h, const std::filesystem::path& path) {
    const auto bins = bin_grid(static_cast<int>(h.bins()));
    std::ofstream f(path);
    if (!f) throw Error("cannot open '" + path.string() + "' for writing");
    f.precision(17);
    f << "bin_center,mass\n";
    for (std::size_t n = 0; n < h.bins(); ++n) f << bins.centers[n] << ',' << h.mass[n] << '\n';
}

} // namespace glotok
