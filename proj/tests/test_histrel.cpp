#include <gtest/gtest.h>

#include <algorithm>
#include <fstream>
#include <numeric>
#include <set>

#include "glotok/histrel.hpp"
#include "helpers.hpp"

using namespace glotok;

namespace {

std::vector<double> oracle_cosines(const Tensor<double>& e, bool diag) {
    const std::size_t k = e.dim(0), d = e.dim(1);
    std::vector<double> out;
    for (std::size_t i = 0; i < k; ++i)
        for (std::size_t j = diag ? i : i + 1; j < k; ++j) {
            double ab = 0, aa = 0, bb = 0;
            for (std::size_t c = 0; c < d; ++c) {
                ab += e[i * d + c] * e[j * d + c];
                aa += e[i * d + c] * e[i * d + c];
                bb += e[j * d + c] * e[j * d + c];
            }
            out.push_back(std::clamp(ab / (std::sqrt(aa) * std::sqrt(bb)), -1.0, 1.0));
        }
    return out;
}

std::vector<double> oracle_histogram(const std::vector<double>& d, int n, double alpha) {
    std::vector<double> m(static_cast<std::size_t>(n), 0.0);
    for (int b = 0; b < n; ++b) {
        const double c = -1.0 + 2.0 * b / (n - 1);
        for (const double v : d) m[static_cast<std::size_t>(b)] += std::exp(-alpha * (v - c) * (v - c));
    }
    return m;
}

RelationHistogram uniform_target(int n) {
    RelationHistogram h;
    h.mass.assign(static_cast<std::size_t>(n), 1.0 / n);
    h.normalized = true;
    return h;
}

HistConfig config(int bins, double alpha, bool diag = true) {
    HistConfig c;
    c.bins = bins;
    c.alpha = alpha;
    c.include_diagonal = diag;
    return c;
}

} // namespace

TEST(PairwiseCosine, OrthogonalAndCollinear) {
    const Codebook<double> ortho(Tensor<double>({2, 2}, {1, 0, 0, 1}));
    EXPECT_EQ(pairwise_cosine(ortho, false), std::vector<double>{0.0});
    const Codebook<double> line(Tensor<double>({2, 2}, {1, 0, 2, 0}));
    EXPECT_EQ(pairwise_cosine(line, true), (std::vector<double>{1.0, 1.0, 1.0}));
}

TEST(PairwiseCosine, MatchesDoubleLoopOracle) {
    std::mt19937_64 rng(21);
    const auto e = testutil::normal_tensor<double>({32, 8}, rng);
    for (const bool diag : {true, false}) {
        const auto d = pairwise_cosine(Codebook<double>(e), diag);
        const auto o = oracle_cosines(e, diag);
        ASSERT_EQ(d.size(), diag ? 32u * 33u / 2u : 32u * 31u / 2u);
        for (std::size_t i = 0; i < d.size(); ++i) {
            EXPECT_NEAR(d[i], o[i], 1e-12);
            EXPECT_LE(std::abs(d[i]), 1.0);
        }
    }
}

TEST(PairwiseCosine, ClampsZeroRowsAndRejectsTinyCodebooks) {
    const Codebook<double> zero(Tensor<double>({2, 2}, {0, 0, 1, 0}));
    for (const double v : pairwise_cosine(zero, true)) EXPECT_TRUE(std::isfinite(v));
    const Codebook<double> one(Tensor<double>({1, 2}, {1, 0}));
    EXPECT_THROW(pairwise_cosine(one, false), ValueError);
    EXPECT_EQ(pairwise_cosine(one, true).size(), 1u);
}

TEST(BinGrid, Spacing) {
    const auto g40 = bin_grid(40);
    EXPECT_NEAR(g40.centers[1] - g40.centers[0], 2.0 / 39.0, 1e-15);
    EXPECT_EQ(g40.centers.front(), -1.0);
    EXPECT_EQ(g40.centers.back(), 1.0);
    for (std::size_t k = 1; k < 40; ++k) EXPECT_GT(g40.centers[k], g40.centers[k - 1]);
    EXPECT_EQ(bin_grid(2).centers, (std::vector<double>{-1, 1}));
    EXPECT_EQ(bin_grid(5).centers, (std::vector<double>{-1, -0.5, 0, 0.5, 1}));
    EXPECT_THROW(bin_grid(1), ValueError);
}

TEST(SmoothedHistogram, SinglePairClosedForm) {
    const auto bins = bin_grid(7);
    const std::vector<double> d{0.3};
    const auto h = smoothed_histogram(d, bins, 4.5);
    for (std::size_t n = 0; n < 7; ++n) {
        const double t = 0.3 - bins.centers[n];
        EXPECT_EQ(h.mass[n], std::exp(-4.5 * t * t));
    }
    EXPECT_FALSE(h.normalized);
    EXPECT_EQ(h.pair_count, 1u);
}

TEST(SmoothedHistogram, DeltaLimit) {
    const std::vector<double> d{0.0};
    const auto h = smoothed_histogram(d, bin_grid(5), 1e6);
    const std::vector<double> want{0, 0, 1, 0, 0};
    for (std::size_t n = 0; n < 5; ++n) EXPECT_NEAR(h.mass[n], want[n], 1e-12);
}

TEST(SmoothedHistogram, MatchesDoubleLoopOracle) {
    std::mt19937_64 rng(31);
    std::uniform_real_distribution<double> u(-1, 1);
    std::vector<double> d(100);
    for (auto& v : d) v = u(rng);
    const auto h = smoothed_histogram(d, bin_grid(40), 50.0);
    const auto o = oracle_histogram(d, 40, 50.0);
    for (std::size_t n = 0; n < 40; ++n) EXPECT_NEAR(h.mass[n], o[n], 1e-10);
}

TEST(SmoothedHistogram, BackwardMatchesDerivative) {
    const auto bins = bin_grid(9);
    const std::vector<double> d{-0.4, 0.25};
    std::vector<double> gm(9, 0.0);
    gm[3] = 1.0;
    const auto g = smoothed_histogram_backward(d, bins, 8.0, gm);
    for (std::size_t i = 0; i < 2; ++i) {
        const double t = d[i] - bins.centers[3];
        EXPECT_NEAR(g[i], -2.0 * 8.0 * t * std::exp(-8.0 * t * t), 1e-15);
    }
}

TEST(SmoothedHistogram, RejectsBadInputs) {
    EXPECT_THROW(smoothed_histogram(std::vector<double>{}, bin_grid(4), 1.0), ValueError);
    EXPECT_THROW(smoothed_histogram(std::vector<double>{0.0}, bin_grid(4), 0.0), ValueError);
}

TEST(Normalize, ExampleIdempotenceAndConservation) {
    RelationHistogram h;
    h.mass = {1, 1, 2};
    const auto p = normalize(h);
    EXPECT_EQ(p.mass, (std::vector<double>{0.25, 0.25, 0.5}));
    EXPECT_TRUE(p.normalized);
    const auto q = normalize(p);
    for (std::size_t n = 0; n < 3; ++n) EXPECT_NEAR(q.mass[n], p.mass[n], 1e-12);

    std::mt19937_64 rng(2);
    std::uniform_real_distribution<double> u(1e-6, 10.0);
    for (int t = 0; t < 100; ++t) {
        RelationHistogram r;
        r.mass.resize(40);
        for (auto& m : r.mass) m = u(rng);
        EXPECT_NEAR(normalize(r).total(), 1.0, 1e-12);
    }
    RelationHistogram zero;
    zero.mass = {0, 0};
    EXPECT_THROW(normalize(zero), ValueError);
}

TEST(Kl, ZeroForIdenticalAndNonNegative) {
    std::mt19937_64 rng(4);
    std::uniform_real_distribution<double> u(0, 1);
    for (int t = 0; t < 200; ++t) {
        RelationHistogram a, b;
        a.mass.resize(12);
        b.mass.resize(12);
        for (auto& m : a.mass) m = u(rng) < 0.2 ? 0.0 : u(rng);
        for (auto& m : b.mass) m = u(rng) < 0.2 ? 0.0 : u(rng);
        if (a.total() == 0 || b.total() == 0) continue;
        const auto p = normalize(a), q = normalize(b);
        EXPECT_EQ(kl_divergence(p.mass, p.mass), 0.0);
        EXPECT_GE(kl_divergence(p.mass, q.mass), -1e-9);
    }
}

TEST(HistLoss, ZeroAgainstOwnDistribution) {
    std::mt19937_64 rng(5);
    const Codebook<double> cb(testutil::normal_tensor<double>({10, 4}, rng));
    const auto target = codebook_histogram(cb, 12, default_alpha(12), true);
    const auto r = hist_loss(cb, target, config(12, default_alpha(12)));
    EXPECT_EQ(r.value, 0.0);
    EXPECT_NEAR(r.student.total(), 1.0, 1e-12);
}

TEST(HistLoss, PositiveForConcentratedStudent) {
    const Codebook<double> cb(Tensor<double>({3, 2}, {1, 0, 2, 0, 3, 0}));
    EXPECT_GT(hist_loss(cb, uniform_target(10), config(10, 200.0)).value, 0.0);
}

TEST(HistLoss, GradientMatchesFiniteDifferencesOverSeeds) {
    const double h = 1e-5;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        std::mt19937_64 rng(seed);
        Tensor<double> e = testutil::normal_tensor<double>({8, 4}, rng);
        RelationHistogram target;
        target.mass.resize(10);
        std::uniform_real_distribution<double> u(0.05, 1.0);
        for (auto& m : target.mass) m = u(rng);
        target = normalize(target);
        const auto cfg = config(10, 20.0);
        const auto r = hist_loss(Codebook<double>(e), target, cfg);
        double worst = 0;
        for (std::size_t i = 0; i < e.size(); ++i) {
            const double orig = e[i];
            e[i] = orig + h;
            const double up = hist_loss(Codebook<double>(e), target, cfg).value;
            e[i] = orig - h;
            const double down = hist_loss(Codebook<double>(e), target, cfg).value;
            e[i] = orig;
            const double num = (up - down) / (2 * h);
            worst = std::max(worst, std::abs(num - r.grad[i]) / std::max({std::abs(num), std::abs(r.grad[i]), 1e-6}));
        }
        EXPECT_LT(worst, 1e-4) << "seed " << seed;
    }
}

TEST(HistLoss, ReverseOrientationGradient) {
    std::mt19937_64 rng(77);
    Tensor<double> e = testutil::normal_tensor<double>({6, 3}, rng);
    auto cfg = config(8, 12.0, false);
    cfg.orientation = KlOrientation::student_teacher;
    const auto target = uniform_target(8);
    const auto r = hist_loss(Codebook<double>(e), target, cfg);
    const double h = 1e-5;
    for (std::size_t i = 0; i < e.size(); ++i) {
        const double orig = e[i];
        e[i] = orig + h;
        const double up = hist_loss(Codebook<double>(e), target, cfg).value;
        e[i] = orig - h;
        const double down = hist_loss(Codebook<double>(e), target, cfg).value;
        e[i] = orig;
        EXPECT_NEAR(r.grad[i], (up - down) / (2 * h), 1e-6 + 1e-4 * std::abs(r.grad[i]));
    }
}

TEST(HistLoss, PermutationAndScaleInvariance) {
    std::mt19937_64 rng(9);
    const auto e = testutil::normal_tensor<double>({16, 5}, rng);
    const auto cfg = config(20, default_alpha(20));
    const auto target = uniform_target(20);
    const double base = hist_loss(Codebook<double>(e), target, cfg).value;

    std::vector<std::size_t> perm(16);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    Tensor<double> p(e.shape()), s(e.shape());
    for (std::size_t i = 0; i < 16; ++i)
        for (std::size_t j = 0; j < 5; ++j) p[i * 5 + j] = e[perm[i] * 5 + j];
    for (std::size_t i = 0; i < e.size(); ++i) s[i] = 3.7 * e[i];
    EXPECT_NEAR(hist_loss(Codebook<double>(p), target, cfg).value, base, 1e-12);
    EXPECT_NEAR(hist_loss(Codebook<double>(s), target, cfg).value, base, 1e-12);
}

TEST(HistLoss, SubsamplesLargeCodebooks) {
    std::mt19937_64 rng(3);
    const Codebook<double> cb(testutil::normal_tensor<double>({40, 4}, rng));
    auto cfg = config(10, 20.0);
    cfg.subsample_above = 16;
    cfg.sample_pairs = 500;
    std::mt19937_64 a(1), b(1);
    const auto ra = hist_loss(cb, uniform_target(10), cfg, &a);
    const auto rb = hist_loss(cb, uniform_target(10), cfg, &b);
    EXPECT_EQ(ra.value, rb.value);
    EXPECT_EQ(ra.student.pair_count, 500u);
    const auto full = hist_loss(cb, uniform_target(10), config(10, 20.0));
    EXPECT_NEAR(ra.value, full.value, 0.1);
}

TEST(SamplePairs, StaysInUpperTriangle) {
    std::mt19937_64 rng(6);
    for (const bool diag : {true, false}) {
        const auto ps = sample_pairs(9, diag, 2000, rng);
        std::set<std::pair<std::uint32_t, std::uint32_t>> seen;
        for (const auto& [i, j] : ps.pairs) {
            EXPECT_LT(j, 9u);
            if (diag) EXPECT_LE(i, j); else EXPECT_LT(i, j);
            seen.insert({i, j});
        }
        EXPECT_EQ(seen.size(), relation_count(9, diag));
    }
}

TEST(HistLoss, RejectsBadTeacher) {
    const Codebook<double> cb(Tensor<double>({3, 2}, {1, 0, 0, 1, 1, 1}));
    EXPECT_THROW(hist_loss(cb, uniform_target(8), config(10, 20.0)), ValueError);
    RelationHistogram raw;
    raw.mass.assign(10, 1.0);
    EXPECT_THROW(hist_loss(cb, raw, config(10, 20.0)), ValueError);
    const Codebook<double> one(Tensor<double>({1, 2}, {1, 0}));
    EXPECT_THROW(hist_loss(one, uniform_target(10), config(10, 20.0, false)), ValueError);
}

TEST(Rebin, PreservesShapeAndNormalization) {
    RelationHistogram h;
    h.mass = {0, 1, 0};
    const auto r = rebin(normalize(h), 5);
    EXPECT_NEAR(r.total(), 1.0, 1e-12);
    EXPECT_EQ(std::max_element(r.mass.begin(), r.mass.end()) - r.mass.begin(), 2);
    const auto same = rebin(normalize(h), 3);
    EXPECT_EQ(same.mass, (std::vector<double>{0, 1, 0}));
}

TEST(HistogramCsv, HeaderAndRows) {
    testutil::TempDir dir;
    RelationHistogram h;
    h.mass = {0.25, 0.75};
    export_histogram_csv(h, dir / "h.csv");
    std::ifstream f(dir / "h.csv");
    std::string line;
    std::vector<std::string> lines;
    while (std::getline(f, line)) lines.push_back(line);
    EXPECT_EQ(lines, (std::vector<std::string>{"bin_center,mass", "-1,0.25", "1,0.75"}));
}
