#include <gtest/gtest.h>

#include "glotok/binary_io.hpp"
#include "glotok/data.hpp"
#include "glotok/tensor.hpp"
#include "helpers.hpp"

using namespace glotok;

TEST(Tensor, ShapeAndRows) {
    Tensor<float> t({2, 3, 4});
    EXPECT_EQ(t.size(), 24u);
    EXPECT_EQ(t.rows(), 6u);
    EXPECT_EQ(t.row(1).size(), 4u);
    EXPECT_THROW(t.reshape({5, 5}), ShapeError);
    t.reshape({6, 4});
    EXPECT_EQ(t.dim(0), 6u);
}

TEST(Tensor, ConcatSplitRoundTrip) {
    std::mt19937_64 rng(3);
    const auto a = testutil::random_tensor<double>({2, 3, 3, 4}, rng);
    const auto b = testutil::random_tensor<double>({2, 3, 3, 5}, rng);
    const auto c = concat_channels(a, b);
    EXPECT_EQ(c.dim(3), 9u);
    const auto [x, y] = split_channels(c, 4);
    EXPECT_EQ(x, a);
    EXPECT_EQ(y, b);
}

TEST(Tensor, ArithmeticRejectsShapeMismatch) {
    Tensor<float> a({2, 2}), b({4});
    EXPECT_THROW(a + b, ShapeError);
    EXPECT_THROW(mse(a, b), ShapeError);
}

TEST(ByteIo, RoundTripsScalarsStringsArrays) {
    io::ByteWriter w;
    w.magic("TEST");
    w.put<std::uint32_t>(7);
    w.put<double>(-2.5);
    w.put_string("hello");
    for (float v : {1.0f, 2.0f, 3.0f}) w.put<float>(v);
    io::ByteReader r(w.bytes(), "buffer");
    r.expect_magic("TEST");
    EXPECT_EQ(r.get<std::uint32_t>(), 7u);
    EXPECT_EQ(r.get<double>(), -2.5);
    EXPECT_EQ(r.get_string(), "hello");
    EXPECT_EQ(r.get_array<float>(3), (std::vector<float>{1, 2, 3}));
    EXPECT_NO_THROW(r.expect_end());
}

TEST(ByteIo, TruncationNamesExpectedAndAvailableBytes) {
    io::ByteWriter w;
    w.put<std::uint32_t>(1);
    io::ByteReader r(w.bytes(), "short.bin");
    try {
        (void)r.get_array<double>(4, "payload");
        FAIL() << "expected FormatError";
    } catch (const FormatError& e) {
        const std::string msg = e.what();
        EXPECT_NE(msg.find("short.bin"), std::string::npos);
        EXPECT_NE(msg.find("expected 32 bytes"), std::string::npos);
        EXPECT_NE(msg.find("got 4"), std::string::npos);
    }
}

TEST(ByteIo, BadMagicAndTrailingBytes) {
    io::ByteWriter w;
    w.magic("ABCD");
    w.put<std::uint8_t>(0);
    io::ByteReader r(w.bytes(), "x");
    EXPECT_THROW(r.expect_magic("WXYZ"), FormatError);
    io::ByteReader r2(w.bytes(), "x");
    r2.expect_magic("ABCD");
    EXPECT_THROW(r2.expect_end(), FormatError);
}

TEST(Synthetic, DeterministicAndInRange) {
    SyntheticSpec s;
    s.count = 4;
    s.size = 16;
    const auto a = generate_synthetic(s), b = generate_synthetic(s);
    EXPECT_EQ(a, b);
    for (const float v : a.vec()) {
        EXPECT_GE(v, -1.0f);
        EXPECT_LE(v, 1.0f);
    }
    s.seed = 2;
    EXPECT_FALSE(generate_synthetic(s) == a);
}

TEST(Synthetic, SpecParsesBackFromString) {
    SyntheticSpec s;
    s.count = 9;
    s.size = 24;
    s.seed = 5;
    const auto p = parse_synthetic_spec(s.str());
    EXPECT_EQ(p.count, 9u);
    EXPECT_EQ(p.size, 24u);
    EXPECT_EQ(p.seed, 5u);
}

TEST(Ppm, RoundTripWithinQuantization) {
    testutil::TempDir dir;
    SyntheticSpec s;
    s.count = 2;
    s.size = 8;
    const auto imgs = generate_synthetic(s);
    write_ppm(dir / "a.ppm", imgs, 1);
    const auto back = read_ppm(dir / "a.ppm");
    ASSERT_EQ(back.size(), 8u * 8u * 3u);
    const std::size_t per = back.size();
    for (std::size_t k = 0; k < per; ++k) EXPECT_NEAR(back[k], imgs[per + k], 1.0 / 255.0 + 1e-6);
}

TEST(Ppm, DirectoryLoadIsSortedAndStacked) {
    testutil::TempDir dir;
    SyntheticSpec s;
    s.count = 3;
    s.size = 8;
    const auto imgs = generate_synthetic(s);
    for (std::size_t i = 0; i < 3; ++i) write_ppm(dir / ("img" + std::to_string(i) + ".ppm"), imgs, i);
    const auto all = load_image_dir(dir.path());
    ASSERT_EQ(all.dim(0), 3u);
    const auto second = read_ppm(dir / "img1.ppm");
    for (std::size_t k = 0; k < second.size(); ++k) EXPECT_EQ(all[second.size() + k], second[k]);
}
