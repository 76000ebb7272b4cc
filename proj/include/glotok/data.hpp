#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "glotok/error.hpp"
#include "glotok/tensor.hpp"

namespace glotok {

// Procedural toy images: a smooth background with a few flat-colored shapes
// modulated by an oriented sinusoidal texture.
struct SyntheticSpec {
    std::size_t count = 64;
    std::size_t size = 32;
    std::uint64_t seed = 1;
    double max_frequency = 4.0;  // texture cycles per image width
    std::size_t max_shapes = 3;

    std::string str() const {
        std::ostringstream os;
        os.precision(17);
        os << "count=" << count << ",size=" << size << ",seed=" << seed << ",freq=" << max_frequency
           << ",shapes=" << max_shapes;
        return os.str();
    }
};

inline SyntheticSpec parse_synthetic_spec(const std::string& text) {
    SyntheticSpec s;
    std::stringstream in(text);
    std::string item;
    while (std::getline(in, item, ',')) {
        if (item.empty()) continue;
        const auto eq = item.find('=');
        if (eq == std::string::npos) throw ValueError("synthetic spec: expected key=value, got '" + item + "'");
        const std::string key = item.substr(0, eq), val = item.substr(eq + 1);
        try {
            if (key == "count") s.count = std::stoul(val);
            else if (key == "size") s.size = std::stoul(val);
            else if (key == "seed") s.seed = std::stoull(val);
            else if (key == "freq") s.max_frequency = std::stod(val);
            else if (key == "shapes") s.max_shapes = std::stoul(val);
            else throw ValueError("synthetic spec: unknown key '" + key + "'");
        } catch (const std::logic_error&) {
            throw ValueError("synthetic spec: bad value for '" + key + "'");
        }
    }
    if (s.count == 0 || s.size == 0 || s.size % 4 != 0) throw ValueError("synthetic spec: need count >= 1 and size a multiple of 4");
    return s;
}

// Images in [-1, 1], shape count x size x size x 3.
inline Tensor<float> generate_synthetic(const SyntheticSpec& spec) {
    std::mt19937_64 rng(spec.seed);
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    const std::size_t n = spec.size;
    Tensor<float> out({spec.count, n, n, 3});
    std::vector<double> img(n * n * 3);
    for (std::size_t i = 0; i < spec.count; ++i) {
        double c0[3], c1[3];
        for (int c = 0; c < 3; ++c) {
            c0[c] = u01(rng);
            c1[c] = u01(rng);
        }
        const double bg_angle = u01(rng) * 2 * std::numbers::pi;
        for (std::size_t y = 0; y < n; ++y)
            for (std::size_t x = 0; x < n; ++x) {
                const double t = 0.5 + 0.5 * ((x / (n - 1.0) - 0.5) * std::cos(bg_angle) + (y / (n - 1.0) - 0.5) * std::sin(bg_angle));
                for (int c = 0; c < 3; ++c) img[(y * n + x) * 3 + c] = (1 - t) * c0[c] + t * c1[c];
            }
        const std::size_t shapes = 1 + static_cast<std::size_t>(u01(rng) * static_cast<double>(spec.max_shapes));
        for (std::size_t s = 0; s < std::min(shapes, spec.max_shapes); ++s) {
            const int kind = static_cast<int>(u01(rng) * 3) % 3;
            const double cx = (0.15 + 0.7 * u01(rng)) * n, cy = (0.15 + 0.7 * u01(rng)) * n;
            const double r = (0.12 + 0.2 * u01(rng)) * n;
            double col[3];
            for (double& c : col) c = u01(rng);
            const double freq = spec.max_frequency * u01(rng);
            const double theta = u01(rng) * std::numbers::pi;
            const double phase = u01(rng) * 2 * std::numbers::pi;
            const double amp = 0.35 * u01(rng);
            for (std::size_t y = 0; y < n; ++y)
                for (std::size_t x = 0; x < n; ++x) {
                    const double dx = x + 0.5 - cx, dy = y + 0.5 - cy;
                    bool inside = false;
                    if (kind == 0) inside = dx * dx + dy * dy <= r * r;
                    else if (kind == 1) inside = std::abs(dx) <= r && std::abs(dy) <= 0.7 * r;
                    else inside = dy <= r * 0.6 && dy >= -r && std::abs(dx) <= (dy + r) * 0.6;
                    if (!inside) continue;
                    const double w = (dx * std::cos(theta) + dy * std::sin(theta)) / n;
                    const double tex = 1.0 + amp * std::sin(2 * std::numbers::pi * freq * w + phase);
                    for (int c = 0; c < 3; ++c) img[(y * n + x) * 3 + c] = std::clamp(col[c] * tex, 0.0, 1.0);
                }
        }
        float* dst = out.data() + i * n * n * 3;
        for (std::size_t k = 0; k < img.size(); ++k) dst[k] = static_cast<float>(img[k] * 2.0 - 1.0);
    }
    return out;
}

// Binary PPM (P6, maxval 255). Pixel values are mapped from [-1, 1].
inline void write_ppm(const std::filesystem::path& path, const Tensor<float>& images, std::size_t index) {
    const std::size_t h = images.dim(1), w = images.dim(2);
    std::ofstream f(path, std::ios::binary);
    if (!f) throw Error("cannot open '" + path.string() + "' for writing");
    f << "P6\n" << w << ' ' << h << "\n255\n";
    const float* src = images.data() + index * h * w * 3;
    for (std::size_t k = 0; k < h * w * 3; ++k) {
        const double v = std::clamp((static_cast<double>(src[k]) + 1.0) * 0.5, 0.0, 1.0);
        f.put(static_cast<char>(static_cast<unsigned char>(std::lround(v * 255.0))));
    }
}

inline Tensor<float> read_ppm(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw Error("cannot open '" + path.string() + "'");
    std::string magic;
    f >> magic;
    auto next_int = [&]() {
        f >> std::ws;
        while (f.peek() == '#') {
            std::string line;
            std::getline(f, line);
            f >> std::ws;
        }
        long v = -1;
        f >> v;
        return v;
    };
    if (magic != "P6") throw FormatError(path.string() + ": not a binary PPM");
    const long w = next_int(), h = next_int(), maxval = next_int();
    if (w <= 0 || h <= 0 || maxval != 255) throw FormatError(path.string() + ": unsupported PPM header");
    f.get();
    const auto n = static_cast<std::size_t>(w * h * 3);
    std::vector<unsigned char> buf(n);
    f.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(f.gcount()) != n) throw FormatError(path.string() + ": truncated PPM payload");
    Tensor<float> out({1, static_cast<std::size_t>(h), static_cast<std::size_t>(w), 3});
    for (std::size_t k = 0; k < n; ++k) out[k] = static_cast<float>(buf[k] / 255.0 * 2.0 - 1.0);
    return out;
}

// All *.ppm files of a directory, sorted by name; images must share a size.
inline Tensor<float> load_image_dir(const std::filesystem::path& dir) {
    std::vector<std::filesystem::path> files;
    for (const auto& e : std::filesystem::directory_iterator(dir))
        if (e.is_regular_file() && e.path().extension() == ".ppm") files.push_back(e.path());
    std::sort(files.begin(), files.end());
    if (files.empty()) throw ValueError("dataset directory '" + dir.string() + "' contains no .ppm images");
    const auto first = read_ppm(files[0]);
    const std::size_t h = first.dim(1), w = first.dim(2);
    Tensor<float> out({files.size(), h, w, 3});
    for (std::size_t i = 0; i < files.size(); ++i) {
        const auto img = i == 0 ? first : read_ppm(files[i]);
        if (img.dim(1) != h || img.dim(2) != w) throw ShapeError(files[i].string() + ": image size differs from the first image");
        std::copy(img.vec().begin(), img.vec().end(), out.data() + i * h * w * 3);
    }
    return out;
}

template <class T>
Tensor<T> gather_images(const Tensor<float>& images, const std::vector<std::size_t>& idx) {
    const std::size_t per = images.size() / images.dim(0);
    Tensor<T> out({idx.size(), images.dim(1), images.dim(2), images.dim(3)});
    for (std::size_t b = 0; b < idx.size(); ++b)
        for (std::size_t k = 0; k < per; ++k) out[b * per + k] = static_cast<T>(images[idx[b] * per + k]);
    return out;
}

// [-1, 1] -> [0, 1], the range PSNR is computed in.
template <class T>
Tensor<T> to_unit_range(const Tensor<T>& x) {
    Tensor<T> out(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = std::clamp((x[i] + T(1)) * T(0.5), T(0), T(1));
    return out;
}

} // namespace glotok
