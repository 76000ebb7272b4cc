#include <gtest/gtest.h>

#include <algorithm>

#include "glotok/evaluate.hpp"
#include "glotok/metrics.hpp"
#include "helpers.hpp"

using namespace glotok;

namespace {

double pairwise_gini(const std::vector<std::uint64_t>& c) {
    const double total = static_cast<double>(std::accumulate(c.begin(), c.end(), std::uint64_t{0}));
    double s = 0;
    for (const auto a : c)
        for (const auto b : c) s += std::abs(static_cast<double>(a) - static_cast<double>(b)) / total;
    return s / (2.0 * static_cast<double>(c.size()));
}

std::vector<std::uint64_t> random_counts(std::mt19937_64& rng) {
    std::uniform_int_distribution<std::size_t> k(2, 80);
    std::uniform_int_distribution<std::uint64_t> v(0, 50);
    std::vector<std::uint64_t> c(k(rng));
    for (auto& x : c) x = v(rng);
    if (std::all_of(c.begin(), c.end(), [](auto x) { return x == 0; })) c[0] = 1;
    return c;
}

} // namespace

TEST(Psnr, IdenticalAndClosedForm) {
    const Tensor<double> x({1, 2, 2, 3}, 0.5);
    EXPECT_EQ(psnr(x, x), kPsnrIdentical);
    EXPECT_TRUE(std::isinf(psnr(x, x)));
    Tensor<double> y = x;
    for (auto& v : y.vec()) v += 0.1;   // MSE 0.01
    EXPECT_NEAR(psnr(x, y), 20.0, 1e-9);
}

TEST(Psnr, MatchesScalarOracle) {
    std::mt19937_64 rng(1);
    const auto a = testutil::random_tensor<double>({2, 4, 4, 3}, rng, 0, 1), b = testutil::random_tensor<double>({2, 4, 4, 3}, rng, 0, 1);
    double s = 0;
    for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
    EXPECT_NEAR(psnr(a, b), 10.0 * std::log10(1.0 / (s / static_cast<double>(a.size()))), 1e-9);
    EXPECT_THROW(psnr(a, Tensor<double>({1})), ShapeError);
}

TEST(DensityCv, Examples) {
    EXPECT_EQ(density_cv(UsageDistribution({5, 5, 5})), 0.0);
    EXPECT_DOUBLE_EQ(density_cv(UsageDistribution({2, 0})), 1.0);
    std::mt19937_64 rng(2);
    for (int t = 0; t < 100; ++t) {
        const auto c = random_counts(rng);
        const double k = static_cast<double>(c.size());
        double mean = 0, var = 0;
        for (const auto x : c) mean += static_cast<double>(x) / k;
        for (const auto x : c) var += (static_cast<double>(x) - mean) * (static_cast<double>(x) - mean) / k;
        EXPECT_NEAR(density_cv(UsageDistribution(c)), std::sqrt(var) / mean, 1e-12);
    }
}

TEST(NormalizedEntropy, Examples) {
    EXPECT_NEAR(normalized_entropy(UsageDistribution({4, 4, 4, 4})), 1.0, 1e-15);
    EXPECT_EQ(normalized_entropy(UsageDistribution({7, 0, 0})), 0.0);
    const double want = -(0.75 * std::log(0.75) + 0.25 * std::log(0.25)) / std::log(2.0);
    EXPECT_NEAR(normalized_entropy(UsageDistribution({3, 1})), want, 1e-12);
    EXPECT_NEAR(want, 0.8113, 1e-4);
}

TEST(Gini, Examples) {
    EXPECT_NEAR(gini(UsageDistribution({3, 3, 3, 3})), 0.0, 1e-15);
    EXPECT_DOUBLE_EQ(gini(UsageDistribution({1, 0})), 0.5);
}

TEST(Gini, MatchesPairwiseDifferenceOracle) {
    std::mt19937_64 rng(3);
    for (int t = 0; t < 1000; ++t) {
        const auto c = random_counts(rng);
        ASSERT_NEAR(gini(UsageDistribution(c)), pairwise_gini(c), 1e-12) << "case " << t;
    }
}

TEST(Uniformity, PermutationAndDuplicationInvariance) {
    std::mt19937_64 rng(4);
    for (int t = 0; t < 100; ++t) {
        auto c = random_counts(rng);
        const UsageDistribution u(c);
        auto p = c;
        std::shuffle(p.begin(), p.end(), rng);
        auto d = c;
        for (auto& x : d) x *= 3;
        for (const auto& v : {UsageDistribution(p), UsageDistribution(d)}) {
            EXPECT_NEAR(gini(v), gini(u), 1e-12);
            EXPECT_NEAR(density_cv(v), density_cv(u), 1e-12);
            EXPECT_NEAR(normalized_entropy(v), normalized_entropy(u), 1e-12);
        }
    }
}

TEST(Uniformity, UniformIffExtremes) {
    const UsageDistribution u({2, 2, 2}), n({2, 2, 3});
    EXPECT_NEAR(gini(u), 0.0, 1e-15);
    EXPECT_GT(gini(n), 1e-6);
    EXPECT_GT(density_cv(n), 1e-6);
    EXPECT_LT(normalized_entropy(n), 1.0 - 1e-6);
}

TEST(Uniformity, EmptyInputsAreErrors) {
    const UsageDistribution empty({0, 0});
    EXPECT_THROW(gini(empty), ValueError);
    EXPECT_THROW(density_cv(empty), ValueError);
    EXPECT_THROW(normalized_entropy(empty), ValueError);
    EXPECT_THROW(normalized_entropy(UsageDistribution({4})), ValueError);
    EXPECT_THROW(density_cv(UsageDistribution(std::vector<std::uint64_t>{})), ValueError);
}

TEST(Evaluate, CountsEveryCellAndChunksDoNotMatter) {
    TrainConfig c;
    c.image_size = 16;
    c.K_sem = c.K_vis = 16;
    TokenizerModel<float> m(c);
    std::mt19937_64 rng(5);
    m.init(rng);
    SyntheticSpec s;
    s.count = 5;
    s.size = 16;
    const auto x = generate_synthetic(s);
    const auto a = evaluate_model(m, x, true, 2), b = evaluate_model(m, x, false, 16);
    EXPECT_EQ(a.usage_sem.total, 5u * 4 * 4);
    EXPECT_EQ(a.usage_sem.counts, b.usage_sem.counts);
    EXPECT_NEAR(a.mse, b.mse, 1e-9);
    EXPECT_EQ(a.recon.shape(), x.shape());
    const auto whole = m.forward(x);
    const auto ux = to_unit_range(x), uy = to_unit_range(whole.x_hat);
    EXPECT_NEAR(a.psnr, psnr(ux, uy), 1e-6);
}
