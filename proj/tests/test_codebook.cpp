#include <gtest/gtest.h>

#include <fstream>
#include <limits>
#include <numeric>

#include "glotok/codebook.hpp"
#include "glotok/nn.hpp"
#include "helpers.hpp"

using namespace glotok;

namespace {

// Exhaustive nearest code with lowest-index ties, written independently of the library.
std::size_t brute_nearest(const double* q, const Tensor<double>& e) {
    const std::size_t k = e.dim(0), d = e.dim(1);
    std::size_t best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < k; ++c) {
        double s = 0;
        for (std::size_t j = 0; j < d; ++j) s += (q[j] - e[c * d + j]) * (q[j] - e[c * d + j]);
        if (s < best_d) {
            best_d = s;
            best = c;
        }
    }
    return best;
}

Codebook<double> two_axes(Metric m) { return Codebook<double>(Tensor<double>({2, 2}, {1, 0, 0, 1}), m); }

} // namespace

TEST(Quantize, NearestByInspection) {
    const auto r = quantize(Tensor<double>({1, 2}, {0.9, 0.1}), two_axes(Metric::euclidean));
    EXPECT_EQ(r.indices.values, std::vector<std::int32_t>{0});
    EXPECT_EQ(r.quantized.vec(), (std::vector<double>{1, 0}));
}

TEST(Quantize, CosineIsScaleInvariant) {
    const auto r = quantize(Tensor<double>({1, 2}, {5, 0}), two_axes(Metric::cosine));
    EXPECT_EQ(r.indices.values, std::vector<std::int32_t>{0});
    EXPECT_EQ(r.cosine_fallbacks, 0u);
}

TEST(Quantize, CosineZeroQueryFallsBackAndCounts) {
    const auto r = quantize(Tensor<double>({2, 2}, {0, 0, 0, 3}), two_axes(Metric::cosine));
    EXPECT_EQ(r.cosine_fallbacks, 1u);
    EXPECT_EQ(r.indices.values[1], 1);
}

TEST(Quantize, TiesGoToLowestIndex) {
    const Codebook<double> cb(Tensor<double>({3, 1}, {1, -1, 1}));
    const auto r = quantize(Tensor<double>({2, 1}, {0, 2}), cb);
    EXPECT_EQ(r.indices.values, (std::vector<std::int32_t>{0, 0}));
}

TEST(Quantize, MatchesBruteForceOnGrid) {
    std::mt19937_64 rng(11);
    const Codebook<double> cb(testutil::normal_tensor<double>({16, 8}, rng));
    const auto z = testutil::normal_tensor<double>({4, 4, 8}, rng);
    const auto r = quantize(z, cb);
    ASSERT_EQ(r.indices.shape, (Shape{4, 4}));
    for (std::size_t c = 0; c < 16; ++c) {
        const auto want = brute_nearest(z.data() + c * 8, cb.entries());
        EXPECT_EQ(static_cast<std::size_t>(r.indices.values[c]), want);
        for (std::size_t j = 0; j < 8; ++j) EXPECT_EQ(r.quantized[c * 8 + j], cb.entries()[want * 8 + j]);
    }
}

TEST(Quantize, OracleEquivalenceProperty) {
    std::mt19937_64 rng(2024);
    std::uniform_int_distribution<std::size_t> pk(1, 64), pd(1, 16), pc(1, 12);
    for (int trial = 0; trial < 1000; ++trial) {
        const std::size_t k = pk(rng), d = pd(rng), cells = pc(rng);
        const Codebook<double> cb(testutil::normal_tensor<double>({k, d}, rng));
        const auto z = testutil::normal_tensor<double>({cells, d}, rng);
        const auto r = quantize(z, cb);
        for (std::size_t c = 0; c < cells; ++c)
            ASSERT_EQ(static_cast<std::size_t>(r.indices.values[c]), brute_nearest(z.data() + c * d, cb.entries()))
                << "trial " << trial << " cell " << c;
    }
}

TEST(Quantize, Idempotent) {
    std::mt19937_64 rng(5);
    for (const Metric m : {Metric::euclidean, Metric::cosine}) {
        const Codebook<double> cb(testutil::normal_tensor<double>({32, 6}, rng), m);
        const auto first = quantize(testutil::normal_tensor<double>({5, 5, 6}, rng), cb);
        const auto second = quantize(first.quantized, cb);
        EXPECT_EQ(first.indices.values, second.indices.values);
        EXPECT_EQ(first.quantized, second.quantized);
    }
}

TEST(Quantize, RejectsDimensionMismatchAndNonFinite) {
    const auto cb = two_axes(Metric::euclidean);
    EXPECT_THROW(quantize(Tensor<double>({1, 3}), cb), ShapeError);
    EXPECT_THROW(quantize(Tensor<double>({1, 2}, {std::nan(""), 0}), cb), ValueError);
}

TEST(QuantLoss, ZeroForIdenticalTensors) {
    std::mt19937_64 rng(1);
    const auto z = testutil::normal_tensor<double>({3, 4}, rng);
    EXPECT_EQ(quantization_loss(z, z, 0.25).value, 0.0);
}

TEST(QuantLoss, HandEvaluatedExample) {
    const Tensor<double> z({2}, {1, 0}), zhat({2}, {0, 0});
    EXPECT_DOUBLE_EQ(quantization_loss(z, zhat, 0.25).value, 0.625);
}

TEST(QuantLoss, MatchesScalarLoopAndGradientRouting) {
    std::mt19937_64 rng(9);
    const auto z = testutil::normal_tensor<double>({2, 2, 4}, rng);
    const auto zhat = testutil::normal_tensor<double>({2, 2, 4}, rng);
    const double beta = 0.25;
    double a = 0, b = 0;
    for (std::size_t i = 0; i < z.size(); ++i) {
        a += (z[i] - zhat[i]) * (z[i] - zhat[i]);
        b += (zhat[i] - z[i]) * (zhat[i] - z[i]);
    }
    const double n = static_cast<double>(z.size());
    const auto r = quantization_loss(z, zhat, beta);
    EXPECT_NEAR(r.value, a / n + beta * b / n, 1e-14);
    for (std::size_t i = 0; i < z.size(); ++i) {
        EXPECT_NEAR(r.grad_quantized[i], 2.0 * (zhat[i] - z[i]) / n, 1e-15);
        EXPECT_NEAR(r.grad_features[i], 2.0 * beta * (z[i] - zhat[i]) / n, 1e-15);
    }
}

TEST(QuantLoss, NonNegativeAndZeroOnlyWhenEqual) {
    std::mt19937_64 rng(4);
    for (int t = 0; t < 200; ++t) {
        const auto z = testutil::normal_tensor<double>({3, 3}, rng);
        auto zhat = z;
        zhat[t % 9] += 1e-3;
        EXPECT_GT(quantization_loss(z, zhat, 0.25).value, 0.0);
        EXPECT_GE(quantization_loss(z, testutil::normal_tensor<double>({3, 3}, rng), 0.0).value, 0.0);
    }
}

TEST(QuantLoss, RejectsBadInputs) {
    const Tensor<double> a({2}), b({3});
    EXPECT_THROW(quantization_loss(a, b, 0.25), ShapeError);
    EXPECT_THROW(quantization_loss(a, a, -1.0), ValueError);
    EXPECT_THROW(quantization_loss(Tensor<double>({1}, {INFINITY}), Tensor<double>({1}), 0.25), ValueError);
}

TEST(StraightThrough, ForwardIsQuantizedBackwardCopiesToFeatures) {
    std::mt19937_64 rng(6);
    const auto z = testutil::normal_tensor<double>({4, 3}, rng);
    const auto zhat = testutil::normal_tensor<double>({4, 3}, rng);
    EXPECT_EQ(straight_through(z, zhat), zhat);
    const auto g = testutil::normal_tensor<double>({4, 3}, rng);
    EXPECT_EQ(StraightThrough<double>::backward(g), g);
    EXPECT_THROW(straight_through(z, Tensor<double>({3, 4})), ShapeError);
}

// Linear encoder -> quantize -> straight-through -> linear decoder on float64.
// The numerical objective holds the selected codes fixed via the
// stop-gradient surrogate z + sg(zhat - z).
TEST(StraightThrough, EncoderGradientMatchesFiniteDifferences) {
    std::mt19937_64 rng(12);
    nn::Linear<double> enc("enc", 5, 3), dec("dec", 3, 5);
    enc.init(rng);
    dec.init(rng);
    const Codebook<double> cb(testutil::normal_tensor<double>({8, 3}, rng));
    const auto x = testutil::normal_tensor<double>({6, 5}, rng);
    const double beta = 0.25;

    const auto z0 = enc.forward(x);
    const auto q0 = quantize(z0, cb);
    auto objective = [&](bool analytic) {
        const auto z = enc.forward(x);
        Tensor<double> zq(z.shape());
        for (std::size_t i = 0; i < z.size(); ++i) zq[i] = z[i] + (q0.quantized[i] - z0[i]);
        const auto y = dec.forward(zq);
        const auto ql = quantization_loss(z, z0, q0.quantized, q0.quantized, beta);
        double loss = mse(y, x) + ql.value;
        if (analytic) {
            Tensor<double> gy(y.shape());
            for (std::size_t i = 0; i < y.size(); ++i) gy[i] = 2.0 * (y[i] - x[i]) / static_cast<double>(y.size());
            auto gz = StraightThrough<double>::backward(dec.backward(zq, gy));
            add_inplace(gz, ql.grad_features);
            enc.backward(x, gz);
        }
        return loss;
    };
    enc.weight.zero_grad();
    enc.bias.zero_grad();
    objective(true);
    const double h = 1e-4;
    for (auto* p : enc.params()) {
        for (std::size_t i = 0; i < p->value.size(); ++i) {
            const double orig = p->value[i];
            p->value[i] = orig + h;
            const double up = objective(false);
            p->value[i] = orig - h;
            const double down = objective(false);
            p->value[i] = orig;
            const double num = (up - down) / (2 * h), ana = p->grad[i];
            EXPECT_LT(std::abs(num - ana) / std::max({std::abs(num), std::abs(ana), 1e-8}), 1e-3) << p->name << "[" << i << "]";
        }
    }
}

TEST(CodeGrad, ScatterAddsOntoSelectedCodes) {
    IndexGrid idx{{3}, {1, 1, 0}};
    const Tensor<double> g({3, 2}, {1, 2, 3, 4, 5, 6});
    Tensor<double> ge({2, 2});
    accumulate_code_grad(idx, g, ge);
    EXPECT_EQ(ge.vec(), (std::vector<double>{5, 6, 4, 6}));
}

TEST(UsageHistogram, CountsAndEmptyInput) {
    const std::vector<std::int32_t> idx{0, 0, 1};
    EXPECT_EQ(usage_histogram(idx, 2), (std::vector<std::uint64_t>{2, 1}));
    EXPECT_EQ(usage_histogram(std::span<const std::int32_t>{}, 3), (std::vector<std::uint64_t>{0, 0, 0}));
}

TEST(UsageHistogram, SumsToCellCountOverManyGrids) {
    std::mt19937_64 rng(8);
    std::uniform_int_distribution<int> pick(0, 15), side(1, 6);
    std::vector<IndexGrid> grids;
    std::uint64_t cells = 0;
    std::vector<std::uint64_t> oracle(16, 0);
    for (int g = 0; g < 50; ++g) {
        const auto h = static_cast<std::size_t>(side(rng)), w = static_cast<std::size_t>(side(rng));
        IndexGrid grid{{h, w}, {}};
        for (std::size_t c = 0; c < h * w; ++c) {
            grid.values.push_back(pick(rng));
            ++oracle[static_cast<std::size_t>(grid.values.back())];
        }
        cells += h * w;
        grids.push_back(std::move(grid));
    }
    const auto counts = usage_histogram(grids, 16);
    EXPECT_EQ(counts, oracle);
    EXPECT_EQ(std::accumulate(counts.begin(), counts.end(), std::uint64_t{0}), cells);
}

TEST(UsageHistogram, RejectsOutOfRange) {
    const std::vector<std::int32_t> bad{0, 2};
    EXPECT_THROW(usage_histogram(bad, 2), ValueError);
    const std::vector<std::int32_t> neg{-1};
    EXPECT_THROW(usage_histogram(neg, 2), ValueError);
}

TEST(CodebookFile, RoundTripAndFormatErrors) {
    testutil::TempDir dir;
    std::mt19937_64 rng(3);
    const Codebook<float> cb(testutil::normal_tensor<float>({7, 5}, rng), Metric::cosine);
    save_codebook(cb, dir / "cb.gtcb");
    const auto back = load_codebook<float>(dir / "cb.gtcb");
    EXPECT_EQ(back.entries(), cb.entries());
    EXPECT_EQ(back.metric(), Metric::cosine);
    EXPECT_EQ(std::filesystem::file_size(dir / "cb.gtcb"), 4u + 4 + 4 + 4 + 1 + 7 * 5 * 4);

    auto bytes = encode_codebook(cb);
    bytes[0] = 'X';
    std::ofstream(dir / "bad.gtcb", std::ios::binary).write(reinterpret_cast<const char*>(bytes.data()),
                                                            static_cast<std::streamsize>(bytes.size()));
    EXPECT_THROW(load_codebook<float>(dir / "bad.gtcb"), FormatError);

    const auto good = encode_codebook(cb);
    std::ofstream(dir / "short.gtcb", std::ios::binary).write(reinterpret_cast<const char*>(good.data()), 30);
    EXPECT_THROW(load_codebook<float>(dir / "short.gtcb"), FormatError);
}

TEST(CodebookFile, CsvHasOneRowPerCode) {
    testutil::TempDir dir;
    const Codebook<double> cb(Tensor<double>({3, 2}, {1, 2, 3, 4, 5, 6}));
    export_codebook_csv(cb, dir / "cb.csv");
    std::ifstream f(dir / "cb.csv");
    std::string line;
    std::vector<std::string> lines;
    while (std::getline(f, line)) lines.push_back(line);
    EXPECT_EQ(lines, (std::vector<std::string>{"1,2", "3,4", "5,6"}));
}

TEST(Codebook, RejectsBadEntries) {
    EXPECT_THROW(Codebook<double>(Tensor<double>({4})), ShapeError);
    EXPECT_THROW(Codebook<double>(Tensor<double>({1, 1}, {NAN})), ValueError);
}
