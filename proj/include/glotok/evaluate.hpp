#pragma once

#include <algorithm>
#include <numeric>
#include <vector>

#include "glotok/codebook.hpp"
#include "glotok/data.hpp"
#include "glotok/metrics.hpp"
#include "glotok/model.hpp"

namespace glotok {

struct EvalResult {
    double mse = 0;    // in the [-1, 1] training range
    double psnr = 0;   // after mapping to [0, 1]
    UsageDistribution usage_sem, usage_vis;
    std::vector<IndexGrid> indices_sem, indices_vis;
    Tensor<float> recon;   // only kept on request
};

// Reconstructs every image in chunks of `chunk` and gathers code usage.
template <class T>
EvalResult evaluate_model(const TokenizerModel<T>& model, const Tensor<float>& images, bool keep_recon = false,
                          std::size_t chunk = 16) {
    const std::size_t n = images.dim(0);
    if (n == 0) throw ValueError("evaluate: dataset is empty");
    const auto& cfg = model.config();
    EvalResult r;
    std::vector<std::uint64_t> cs(cfg.K_sem, 0), cv(cfg.K_vis, 0);
    double se = 0, se_unit = 0;
    std::size_t count = 0;
    if (keep_recon) r.recon = Tensor<float>(images.shape());
    const std::size_t per = images.size() / n;
    for (std::size_t start = 0; start < n; start += chunk) {
        std::vector<std::size_t> idx(std::min(chunk, n - start));
        std::iota(idx.begin(), idx.end(), start);
        const Tensor<T> x = gather_images<T>(images, idx);
        const auto out = model.forward(x);
        const auto ux = to_unit_range(x), uy = to_unit_range(out.x_hat);
        for (std::size_t i = 0; i < x.size(); ++i) {
            const double d = static_cast<double>(x[i]) - static_cast<double>(out.x_hat[i]);
            const double du = static_cast<double>(ux[i]) - static_cast<double>(uy[i]);
            se += d * d;
            se_unit += du * du;
        }
        count += x.size();
        const auto hs = usage_histogram(out.indices_sem.values, cfg.K_sem);
        const auto hv = usage_histogram(out.indices_vis.values, cfg.K_vis);
        for (std::size_t k = 0; k < cs.size(); ++k) cs[k] += hs[k];
        for (std::size_t k = 0; k < cv.size(); ++k) cv[k] += hv[k];
        r.indices_sem.push_back(out.indices_sem);
        r.indices_vis.push_back(out.indices_vis);
        if (keep_recon)
            for (std::size_t i = 0; i < out.x_hat.size(); ++i) r.recon[start * per + i] = static_cast<float>(out.x_hat[i]);
    }
    r.mse = se / static_cast<double>(count);
    const double mse_unit = se_unit / static_cast<double>(count);
    r.psnr = mse_unit == 0.0 ? kPsnrIdentical : 10.0 * std::log10(1.0 / mse_unit);
    r.usage_sem = UsageDistribution(std::move(cs));
    r.usage_vis = UsageDistribution(std::move(cv));
    return r;
}

} // namespace glotok
