#pragma once

#include <cstdint>
#include <string>

#include "json.hpp"

#include "glotok/codebook.hpp"
#include "glotok/error.hpp"
#include "glotok/histrel.hpp"
#include "glotok/residual.hpp"

namespace glotok {

// Every hyperparameter of a run. Defaults follow the published training
// recipe where one exists; the architecture is desk-scale.
struct TrainConfig {
    // Loss weights.
    double lambda_R = 1.0;
    double lambda_Q = 1.0;
    double lambda_res = 0.5;
    double lambda_hist = 0.01;
    double beta = 0.25;

    // Histogram relation loss.
    int bins = 40;
    double alpha = default_alpha(40);
    bool include_diagonal = true;
    KlOrientation kl_orientation = KlOrientation::teacher_student;

    // Codebooks.
    std::size_t K_sem = 64;
    std::size_t K_vis = 64;
    std::size_t d_code = 8;
    Metric metric = Metric::euclidean;
    double codebook_init = 0.3;   // entries start as U(-codebook_init, codebook_init)

    // Architecture.
    std::size_t image_size = 32;
    std::size_t enc_channels = 32;
    std::size_t latent_channels = 64;
    std::size_t dec_channels = 64;
    std::size_t norm_groups = 8;
    bool use_residual = true;
    ResidualConfig residual{};
    ResidualNorm residual_norm = ResidualNorm::mse;

    // Optimizer and schedule.
    double lr = 2e-4;
    double beta1 = 0.9;
    double beta2 = 0.95;
    double adam_eps = 1e-8;
    std::size_t batch = 8;
    std::size_t steps = 200;
    std::uint64_t seed = 0;
    std::string teacher_path;

    void validate() const {
        if (beta < 0) throw ValueError("config: beta must be >= 0");
        if (bins < 2) throw ValueError("config: bins must be >= 2");
        if (!(alpha > 0)) throw ValueError("config: alpha must be > 0");
        if (K_sem < 1 || K_vis < 1 || d_code < 1) throw ValueError("config: codebook sizes must be >= 1");
        if (!(codebook_init > 0)) throw ValueError("config: codebook_init must be > 0");
        if (image_size % 4 != 0 || image_size == 0) throw ValueError("config: image_size must be a positive multiple of 4");
        if (batch == 0) throw ValueError("config: batch must be >= 1");
        if (lr < 0) throw ValueError("config: lr must be >= 0");
        if (residual.code_dim != d_code) throw ValueError("config: residual code_dim must equal d_code");
    }
};

inline void to_json(nlohmann::json& j, const TrainConfig& c) {
    j = nlohmann::json{
        {"lambda_R", c.lambda_R}, {"lambda_Q", c.lambda_Q}, {"lambda_res", c.lambda_res}, {"lambda_hist", c.lambda_hist},
        {"beta", c.beta}, {"bins", c.bins}, {"alpha", c.alpha}, {"include_diagonal", c.include_diagonal},
        {"kl_orientation", c.kl_orientation == KlOrientation::teacher_student ? "teacher_student" : "student_teacher"},
        {"K_sem", c.K_sem}, {"K_vis", c.K_vis}, {"d_code", c.d_code}, {"metric", metric_name(c.metric)},
        {"codebook_init", c.codebook_init}, {"image_size", c.image_size}, {"enc_channels", c.enc_channels}, {"latent_channels", c.latent_channels},
        {"dec_channels", c.dec_channels}, {"norm_groups", c.norm_groups}, {"use_residual", c.use_residual},
        {"residual_model_dim", c.residual.model_dim}, {"residual_heads", c.residual.heads},
        {"residual_ff_dim", c.residual.ff_dim}, {"residual_norm", c.residual_norm == ResidualNorm::mse ? "mse" : "l1"},
        {"lr", c.lr}, {"beta1", c.beta1}, {"beta2", c.beta2}, {"adam_eps", c.adam_eps}, {"batch", c.batch},
        {"steps", c.steps}, {"seed", c.seed}, {"teacher_path", c.teacher_path}};
}

inline void from_json(const nlohmann::json& j, TrainConfig& c) {
    TrainConfig d;
    auto get = [&](const char* key, auto& field) {
        if (j.contains(key)) j.at(key).get_to(field);
    };
    c = d;
    get("lambda_R", c.lambda_R);
    get("lambda_Q", c.lambda_Q);
    get("lambda_res", c.lambda_res);
    get("lambda_hist", c.lambda_hist);
    get("beta", c.beta);
    get("bins", c.bins);
    get("alpha", c.alpha);
    get("include_diagonal", c.include_diagonal);
    if (j.contains("kl_orientation"))
        c.kl_orientation = j.at("kl_orientation").get<std::string>() == "student_teacher" ? KlOrientation::student_teacher
                                                                                         : KlOrientation::teacher_student;
    get("K_sem", c.K_sem);
    get("K_vis", c.K_vis);
    get("d_code", c.d_code);
    if (j.contains("metric")) c.metric = parse_metric(j.at("metric").get<std::string>());
    get("codebook_init", c.codebook_init);
    get("image_size", c.image_size);
    get("enc_channels", c.enc_channels);
    get("latent_channels", c.latent_channels);
    get("dec_channels", c.dec_channels);
    get("norm_groups", c.norm_groups);
    get("use_residual", c.use_residual);
    get("residual_model_dim", c.residual.model_dim);
    get("residual_heads", c.residual.heads);
    get("residual_ff_dim", c.residual.ff_dim);
    c.residual.code_dim = c.d_code;
    if (j.contains("residual_norm")) c.residual_norm = j.at("residual_norm").get<std::string>() == "l1" ? ResidualNorm::l1 : ResidualNorm::mse;
    get("lr", c.lr);
    get("beta1", c.beta1);
    get("beta2", c.beta2);
    get("adam_eps", c.adam_eps);
    get("batch", c.batch);
    get("steps", c.steps);
    get("seed", c.seed);
    get("teacher_path", c.teacher_path);
}

inline HistConfig hist_config(const TrainConfig& c) {
    HistConfig h;
    h.bins = c.bins;
    h.alpha = c.alpha;
    h.include_diagonal = c.include_diagonal;
    h.orientation = c.kl_orientation;
    return h;
}

} // namespace glotok
