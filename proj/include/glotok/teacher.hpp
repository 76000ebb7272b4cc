#pragma once

#include <cassert>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <random>
#include <string>
#include <vector>

#include "glotok/binary_io.hpp"
#include "glotok/codebook.hpp"
#include "glotok/error.hpp"
#include "glotok/histrel.hpp"
#include "glotok/tensor.hpp"

namespace glotok {

struct FeatureCorpus {
    Tensor<float> vectors;  // M x d_f
    std::string source_tag;

    std::size_t rows() const { return vectors.rank() ? vectors.dim(0) : 0; }
    std::size_t dim() const { return vectors.rank() ? vectors.dim(1) : 0; }
};

// GTFT: "GTFT", u32 version, u64 M, u32 d_f, M*d_f float32 row-major.
inline constexpr std::uint32_t kFeatureVersion = 1;

inline void save_features(const FeatureCorpus& c, const std::filesystem::path& path) {
    io::ByteWriter w;
    w.magic("GTFT");
    w.put<std::uint32_t>(kFeatureVersion);
    w.put<std::uint64_t>(c.rows());
    w.put<std::uint32_t>(static_cast<std::uint32_t>(c.dim()));
    for (const float v : c.vectors.vec()) w.put<float>(v);
    w.save(path);
}

inline FeatureCorpus load_features(const std::filesystem::path& path) {
    auto r = io::ByteReader::from_file(path);
    r.expect_magic("GTFT");
    const auto version = r.get<std::uint32_t>("version");
    if (version != kFeatureVersion) throw FormatError(r.label() + ": unsupported feature version " + std::to_string(version));
    const auto m = r.get<std::uint64_t>("M");
    const auto d = r.get<std::uint32_t>("d_f");
    if (d == 0) throw FormatError(r.label() + ": feature dimension is zero");
    auto vals = r.get_array<float>(m * d, "feature payload");
    r.expect_end();
    for (const float v : vals)
        if (!std::isfinite(v)) throw FormatError(r.label() + ": non-finite feature value");
    return {Tensor<float>({static_cast<std::size_t>(m), d}, std::move(vals)), path.string()};
}

struct KMeansResult {
    Tensor<double> centroids;             // K x d_f
    std::vector<std::int32_t> assignment; // per corpus row
    std::vector<double> objective;        // after each assignment step
    int iterations = 0;
    bool degenerate = false;              // all corpus rows identical
};

namespace detail {

inline double sqdist(const double* a, const double* b, std::size_t d) {
    double s = 0;
    for (std::size_t j = 0; j < d; ++j) {
        const double t = a[j] - b[j];
        s += t * t;
    }
    return s;
}

} // namespace detail

// Lloyd iterations from k-means++ seeding. Ties go to the lowest centroid
// index; an emptied cluster is re-seeded at the point farthest from its centroid.
inline KMeansResult kmeans(const FeatureCorpus& corpus, std::size_t k, int max_iters, std::uint64_t seed) {
    const std::size_t m = corpus.rows(), d = corpus.dim();
    if (k == 0) throw ValueError("kmeans: K must be >= 1");
    if (k > m) throw ValueError("kmeans: K=" + std::to_string(k) + " exceeds corpus size M=" + std::to_string(m));
    if (max_iters < 1) throw ValueError("kmeans: max_iters must be >= 1");

    std::vector<double> x(m * d);
    for (std::size_t i = 0; i < x.size(); ++i) x[i] = corpus.vectors[i];

    KMeansResult res;
    res.centroids = Tensor<double>({k, d});
    double* c = res.centroids.data();

    bool all_same = true;
    for (std::size_t i = 1; i < m && all_same; ++i)
        all_same = std::equal(x.begin() + static_cast<std::ptrdiff_t>(i * d), x.begin() + static_cast<std::ptrdiff_t>((i + 1) * d), x.begin());
    if (all_same) {
        for (std::size_t q = 0; q < k; ++q) std::copy_n(x.data(), d, c + q * d);
        res.degenerate = true;
        res.assignment.assign(m, 0);
        res.objective.push_back(0.0);
        return res;
    }

    // k-means++ seeding.
    std::mt19937_64 rng(seed);
    std::vector<double> best(m, std::numeric_limits<double>::infinity());
    std::vector<char> chosen(m, 0);
    std::uniform_int_distribution<std::size_t> first(0, m - 1);
    std::size_t pick = first(rng);
    for (std::size_t q = 0; q < k; ++q) {
        std::copy_n(x.data() + pick * d, d, c + q * d);
        chosen[pick] = 1;
        double total = 0;
        for (std::size_t i = 0; i < m; ++i) {
            best[i] = std::min(best[i], detail::sqdist(x.data() + i * d, c + q * d, d));
            total += best[i];
        }
        if (q + 1 == k) break;
        if (total > 0) {
            std::uniform_real_distribution<double> u(0.0, total);
            const double r = u(rng);
            double acc = 0;
            pick = m;
            for (std::size_t i = 0; i < m; ++i) {
                acc += best[i];
                if (best[i] > 0 && acc >= r) { pick = i; break; }
            }
            if (pick == m)
                for (std::size_t i = m; i-- > 0;)
                    if (best[i] > 0) { pick = i; break; }
        } else {
            // Remaining rows duplicate chosen centroids; take the next unused row.
            pick = 0;
            while (chosen[pick]) ++pick;
        }
    }

    res.assignment.assign(m, -1);
    std::vector<double> dist(m);
    std::vector<double> sum(k * d);
    std::vector<std::size_t> count(k);
    for (int it = 0; it < max_iters; ++it) {
        bool changed = false;
        double obj = 0;
        for (std::size_t i = 0; i < m; ++i) {
            std::int32_t arg = 0;
            double bd = std::numeric_limits<double>::infinity();
            for (std::size_t q = 0; q < k; ++q) {
                const double t = detail::sqdist(x.data() + i * d, c + q * d, d);
                if (t < bd) { bd = t; arg = static_cast<std::int32_t>(q); }
            }
            changed |= res.assignment[i] != arg;
            res.assignment[i] = arg;
            dist[i] = bd;
            obj += bd;
        }
        assert(res.objective.empty() || obj <= res.objective.back() * (1 + 1e-9) + 1e-12);
        res.objective.push_back(obj);
        res.iterations = it + 1;
        if (!changed && it > 0) break;

        std::fill(sum.begin(), sum.end(), 0.0);
        std::fill(count.begin(), count.end(), 0);
        for (std::size_t i = 0; i < m; ++i) {
            const auto q = static_cast<std::size_t>(res.assignment[i]);
            ++count[q];
            for (std::size_t j = 0; j < d; ++j) sum[q * d + j] += x[i * d + j];
        }
        for (std::size_t q = 0; q < k; ++q) {
            if (count[q] == 0) {
                std::size_t far = 0;
                for (std::size_t i = 1; i < m; ++i)
                    if (dist[i] > dist[far]) far = i;
                std::copy_n(x.data() + far * d, d, c + q * d);
                dist[far] = 0;
                res.assignment[far] = static_cast<std::int32_t>(q);
                continue;
            }
            for (std::size_t j = 0; j < d; ++j) c[q * d + j] = sum[q * d + j] / static_cast<double>(count[q]);
        }
    }
    return res;
}

enum class TeacherSource : std::uint8_t { codebook_file = 0, kmeans = 1 };

inline const char* teacher_source_name(TeacherSource s) {
    return s == TeacherSource::kmeans ? "kmeans" : "codebook_file";
}

// Frozen relation distribution P_t. Construction-only: no mutators, and the
// loss never produces a gradient for it.
class TeacherDistribution {
public:
    static TeacherDistribution from_tokens(const Tensor<double>& tokens, int bins, double alpha, bool include_diagonal,
                                           TeacherSource source, std::uint64_t seed) {
        const Codebook<double> cb(tokens);
        auto h = codebook_histogram(cb, bins, alpha, include_diagonal);
        return TeacherDistribution(std::move(h), bins, alpha, static_cast<std::uint32_t>(cb.size()), source, seed);
    }

    // Rehydrates a stored distribution; masses must already be normalized.
    static TeacherDistribution from_masses(std::vector<double> mass, double alpha, std::uint32_t k, TeacherSource source,
                                           std::uint64_t seed) {
        RelationHistogram h;
        h.mass = std::move(mass);
        h.alpha = alpha;
        h.normalized = true;
        h.pair_count = 0;
        double s = 0;
        for (const double v : h.mass) {
            if (!(v >= 0) || !std::isfinite(v)) throw FormatError("teacher masses must be finite and nonnegative");
            s += v;
        }
        if (std::abs(s - 1.0) > 1e-9) throw FormatError("teacher masses are not normalized (sum " + std::to_string(s) + ")");
        const int n = static_cast<int>(h.mass.size());
        if (n < 2) throw FormatError("teacher needs at least 2 bins");
        return TeacherDistribution(std::move(h), n, alpha, k, source, seed);
    }

    const RelationHistogram& hist() const noexcept { return hist_; }
    int bins() const noexcept { return bins_; }
    double alpha() const noexcept { return alpha_; }
    std::uint32_t k() const noexcept { return k_; }
    TeacherSource source() const noexcept { return source_; }
    std::uint64_t seed() const noexcept { return seed_; }

    friend bool operator==(const TeacherDistribution& a, const TeacherDistribution& b) {
        return a.hist_.mass == b.hist_.mass && a.bins_ == b.bins_ && a.alpha_ == b.alpha_ && a.k_ == b.k_ &&
               a.source_ == b.source_ && a.seed_ == b.seed_;
    }

private:
    TeacherDistribution(RelationHistogram h, int bins, double alpha, std::uint32_t k, TeacherSource s, std::uint64_t seed)
        : hist_(std::move(h)), bins_(bins), alpha_(alpha), k_(k), source_(s), seed_(seed) {}

    RelationHistogram hist_;
    int bins_;
    double alpha_;
    std::uint32_t k_;
    TeacherSource source_;
    std::uint64_t seed_;
};

inline void validate_teacher_params(int bins, double alpha) {
    if (bins < 2) throw ValueError("teacher: need at least 2 bins");
    if (!(alpha > 0)) throw ValueError("teacher: alpha must be > 0");
}

inline TeacherDistribution build_teacher_from_codebook(const Codebook<double>& cb, int bins, double alpha,
                                                       bool include_diagonal, std::uint64_t seed = 0) {
    validate_teacher_params(bins, alpha);
    return TeacherDistribution::from_tokens(cb.entries(), bins, alpha, include_diagonal, TeacherSource::codebook_file, seed);
}

inline TeacherDistribution build_teacher_from_codebook_file(const std::filesystem::path& path, int bins, double alpha,
                                                            bool include_diagonal, std::uint64_t seed = 0) {
    return build_teacher_from_codebook(load_codebook<double>(path), bins, alpha, include_diagonal, seed);
}

struct KMeansTeacher {
    TeacherDistribution teacher;
    KMeansResult clustering;
};

inline KMeansTeacher build_teacher_from_kmeans(const FeatureCorpus& corpus, std::size_t k, int bins, double alpha,
                                               bool include_diagonal, std::uint64_t seed, int max_iters = 100) {
    validate_teacher_params(bins, alpha);
    auto km = kmeans(corpus, k, max_iters, seed);
    auto t = TeacherDistribution::from_tokens(km.centroids, bins, alpha, include_diagonal, TeacherSource::kmeans, seed);
    return {std::move(t), std::move(km)};
}

// GTTD: "GTTD", u32 version, u32 N, f64 alpha, u32 K, u8 source, u64 seed, N float64 masses.
inline constexpr std::uint32_t kTeacherVersion = 1;

inline std::vector<std::uint8_t> encode_teacher(const TeacherDistribution& t) {
    io::ByteWriter w;
    w.magic("GTTD");
    w.put<std::uint32_t>(kTeacherVersion);
    w.put<std::uint32_t>(static_cast<std::uint32_t>(t.bins()));
    w.put<double>(t.alpha());
    w.put<std::uint32_t>(t.k());
    w.put<std::uint8_t>(static_cast<std::uint8_t>(t.source()));
    w.put<std::uint64_t>(t.seed());
    for (const double m : t.hist().mass) w.put<double>(m);
    return w.bytes();
}

inline void save_teacher(const TeacherDistribution& t, const std::filesystem::path& path) {
    io::ByteWriter w;
    w.put_bytes(encode_teacher(t));
    w.save(path);
}

inline TeacherDistribution load_teacher(const std::filesystem::path& path) {
    auto r = io::ByteReader::from_file(path);
    r.expect_magic("GTTD");
    const auto version = r.get<std::uint32_t>("version");
    if (version != kTeacherVersion) throw FormatError(r.label() + ": unsupported teacher version " + std::to_string(version));
    const auto n = r.get<std::uint32_t>("N");
    const auto alpha = r.get<double>("alpha");
    const auto k = r.get<std::uint32_t>("K");
    const auto src = r.get<std::uint8_t>("source");
    if (src > 1) throw FormatError(r.label() + ": unknown teacher source " + std::to_string(src));
    const auto seed = r.get<std::uint64_t>("seed");
    auto mass = r.get_array<double>(n, "teacher masses");
    r.expect_end();
    return TeacherDistribution::from_masses(std::move(mass), alpha, k, static_cast<TeacherSource>(src), seed);
}

template <class T>
HistLossResult<T> hist_loss(const Codebook<T>& student, const TeacherDistribution& teacher, const HistConfig& cfg,
                            std::mt19937_64* rng = nullptr) {
    return hist_loss(student, teacher.hist(), cfg, rng);
}

} // namespace glotok
