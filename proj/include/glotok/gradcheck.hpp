#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "glotok/config.hpp"
#include "glotok/data.hpp"
#include "glotok/error.hpp"
#include "glotok/model.hpp"
#include "glotok/teacher.hpp"

// Central finite differences against the analytic backward pass of the full
// tokenizer, one loss term at a time.
namespace glotok {

enum class GradTerm { quant, hist, res, total };

inline const char* term_name(GradTerm t) {
    switch (t) {
    case GradTerm::quant: return "quant";
    case GradTerm::hist: return "hist";
    case GradTerm::res: return "res";
    case GradTerm::total: return "total";
    }
    return "?";
}

inline GradTerm parse_term(const std::string& s) {
    if (s == "quant") return GradTerm::quant;
    if (s == "hist") return GradTerm::hist;
    if (s == "res") return GradTerm::res;
    if (s == "total") return GradTerm::total;
    throw ValueError("unknown gradient term '" + s + "' (expected quant, hist, res or total)");
}

inline std::vector<GradTerm> all_terms() { return {GradTerm::quant, GradTerm::hist, GradTerm::res, GradTerm::total}; }

struct GradcheckOptions {
    double step = 1e-5;
    double tolerance = 1e-3;
    std::size_t samples_per_tensor = 4;
    std::uint64_t seed = 0;
};

struct GradcheckEntry {
    std::string param;
    std::size_t index = 0;
    double analytic = 0, numeric = 0, rel_error = 0;
};

struct GradcheckReport {
    GradTerm term = GradTerm::total;
    std::vector<GradcheckEntry> entries;
    double max_rel_error = 0;
    std::string worst_param;
    double seconds = 0;
    bool passed = false;
};

inline double relative_error(double a, double n) {
    return std::abs(a - n) / std::max({std::abs(a), std::abs(n), 1e-6});
}

// The tiny float64 configuration: two 16x16 images, small widths so every
// parameter group can be sampled in seconds.
inline TrainConfig gradcheck_config() {
    TrainConfig c;
    c.image_size = 16;
    c.batch = 2;
    c.enc_channels = 8;
    c.latent_channels = 16;
    c.dec_channels = 16;
    c.norm_groups = 4;
    c.K_sem = 16;
    c.K_vis = 16;
    c.d_code = 4;
    c.residual = ResidualConfig{4, 16, 2, 32};
    c.bins = 20;
    c.alpha = default_alpha(20);
    return c;
}

// Loss weights that isolate one term (total keeps the configured ones).
inline TrainConfig isolate_term(TrainConfig c, GradTerm t) {
    if (t == GradTerm::total) return c;
    c.lambda_R = 0;
    c.lambda_Q = t == GradTerm::quant ? 1.0 : 0.0;
    c.lambda_res = t == GradTerm::res ? 1.0 : 0.0;
    c.lambda_hist = t == GradTerm::hist ? 1.0 : 0.0;
    return c;
}

// A fixed, spread-out teacher so the histogram term has a nonzero gradient.
inline TeacherDistribution gradcheck_teacher(const TrainConfig& c, std::uint64_t seed) {
    std::mt19937_64 rng(seed ^ 0x7e57ULL);
    std::normal_distribution<double> n(0.0, 1.0);
    Tensor<double> tokens({c.K_sem, c.d_code + 4});
    for (auto& v : tokens.vec()) v = n(rng);
    return TeacherDistribution::from_tokens(tokens, c.bins, c.alpha, c.include_diagonal, TeacherSource::codebook_file, seed);
}

inline GradcheckReport gradcheck(GradTerm term, const GradcheckOptions& opt = {}, TrainConfig base = gradcheck_config()) {
    const auto t0 = std::chrono::steady_clock::now();
    const TrainConfig cfg = isolate_term(base, term);
    const TeacherDistribution teacher = gradcheck_teacher(cfg, opt.seed);

    TokenizerModel<double> model(cfg);
    std::mt19937_64 rng(opt.seed);
    model.init(rng);
    // Nonzero residual projections, otherwise everything upstream of them has a zero gradient.
    model.res_sem.init(rng, false);
    model.res_vis.init(rng, false);

    SyntheticSpec spec;
    spec.count = cfg.batch;
    spec.size = cfg.image_size;
    spec.seed = opt.seed + 1;
    const Tensor<double> x = generate_synthetic(spec).cast<double>();

    ForwardState<double> s;
    model.forward(x, s);
    const FrozenQuantization<double> frozen = TokenizerModel<double>::freeze(s);
    LossBreakdown lb;
    model.zero_grad();
    const auto grads = model.losses(s, &teacher, lb);
    model.backward(s, grads);

    auto objective = [&] {
        ForwardState<double> fs;
        model.forward(x, fs, &frozen);
        LossBreakdown l;
        model.losses(fs, &teacher, l);
        return l.total;
    };

    GradcheckReport rep;
    rep.term = term;
    std::mt19937_64 pick(opt.seed + 17);
    for (auto* p : model.params()) {
        const std::size_t n = p->value.size();
        std::vector<std::size_t> idx(n);
        for (std::size_t i = 0; i < n; ++i) idx[i] = i;
        std::shuffle(idx.begin(), idx.end(), pick);
        idx.resize(std::min(n, opt.samples_per_tensor));
        for (const std::size_t i : idx) {
            const double orig = p->value[i];
            p->value[i] = orig + opt.step;
            const double up = objective();
            p->value[i] = orig - opt.step;
            const double down = objective();
            p->value[i] = orig;
            GradcheckEntry e{p->name, i, p->grad[i], (up - down) / (2 * opt.step), 0};
            e.rel_error = relative_error(e.analytic, e.numeric);
            if (e.rel_error > rep.max_rel_error) {
                rep.max_rel_error = e.rel_error;
                rep.worst_param = p->name;
            }
            rep.entries.push_back(std::move(e));
        }
    }
    rep.passed = rep.max_rel_error < opt.tolerance;
    rep.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return rep;
}

} // namespace glotok
