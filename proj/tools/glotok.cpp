// glotok: teacher construction, toy training, evaluation and uniformity reports.
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "glotok/checkpoint.hpp"
#include "glotok/evaluate.hpp"
#include "glotok/gradcheck.hpp"
#include "glotok/metrics.hpp"
#include "glotok/report.hpp"
#include "glotok/teacher.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace glotok;

namespace {

struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

constexpr const char* kMetricsHeader = "model_id,K_sem,K_vis,psnr,density_cv,normalized_entropy,gini";

struct DatasetArgs {
    std::string synthetic;
    std::string dir;

    void add_to(CLI::App* cmd) {
        cmd->add_option("--synthetic", synthetic, "procedural dataset, e.g. count=64,size=32,seed=1");
        cmd->add_option("--data", dir, "directory of binary PPM images");
    }
    bool given() const { return !synthetic.empty() || !dir.empty(); }

    json descriptor() const {
        if (!synthetic.empty()) return {{"kind", "synthetic"}, {"spec", parse_synthetic_spec(synthetic).str()}};
        return {{"kind", "directory"}, {"path", dir}};
    }

    Tensor<float> load() const {
        if (!synthetic.empty() && !dir.empty()) throw UsageError("--synthetic and --data are mutually exclusive");
        if (!synthetic.empty()) return generate_synthetic(parse_synthetic_spec(synthetic));
        if (!dir.empty()) return load_image_dir(dir);
        throw UsageError("a dataset is required (--synthetic <spec> or --data <dir>)");
    }
};

DatasetArgs dataset_from_descriptor(const json& d) {
    DatasetArgs a;
    const auto kind = d.at("kind").get<std::string>();
    if (kind == "synthetic") a.synthetic = d.at("spec").get<std::string>();
    else if (kind == "directory") a.dir = d.at("path").get<std::string>();
    else throw UsageError("manifest: unknown dataset kind '" + kind + "'");
    return a;
}

json teacher_descriptor(const std::string& path, const TeacherDistribution& t) {
    return {{"path", path}, {"source", teacher_source_name(t.source())}, {"K", t.k()}, {"bins", t.bins()},
            {"alpha", t.alpha()}, {"seed", t.seed()}};
}

std::string metrics_row(const std::string& id, const TrainConfig& cfg, const EvalResult& r) {
    std::ostringstream o;
    o << std::setprecision(10) << id << ',' << cfg.K_sem << ',' << cfg.K_vis << ',' << r.psnr << ',' << density_cv(r.usage_sem)
      << ',' << normalized_entropy(r.usage_sem) << ',' << gini(r.usage_sem);
    return o.str();
}

void check_image_size(const TrainConfig& cfg, const Tensor<float>& images) {
    if (images.dim(1) != cfg.image_size || images.dim(2) != cfg.image_size)
        throw ValueError("checkpoint/dataset mismatch: model was trained on " + std::to_string(cfg.image_size) + "x" +
                         std::to_string(cfg.image_size) + " images, dataset has " + std::to_string(images.dim(1)) + "x" +
                         std::to_string(images.dim(2)));
}

bool has_magic(const fs::path& p, const char* magic) {
    std::ifstream f(p, std::ios::binary);
    char buf[4] = {};
    f.read(buf, 4);
    return f.gcount() == 4 && std::string(buf, 4) == magic;
}

// ---------------------------------------------------------------- teacher build

struct TeacherArgs {
    std::string from_codebook, from_features, out;
    std::size_t k = 0;
    int bins = 40;
    double alpha = 0;
    std::uint64_t seed = 0;
    int iters = 100;
    bool no_diagonal = false;
};

int cmd_teacher_build(const TeacherArgs& a) {
    if (!a.from_codebook.empty() == !a.from_features.empty())
        throw UsageError("exactly one of --from-codebook or --from-features is required");
    if (!a.from_features.empty() && a.k == 0) throw UsageError("--from-features needs --k");
    if (!a.from_codebook.empty() && a.k != 0) throw UsageError("--k only applies to --from-features");
    const double alpha = a.alpha > 0 ? a.alpha : default_alpha(a.bins);
    std::optional<TeacherDistribution> t;
    if (!a.from_codebook.empty()) {
        t = build_teacher_from_codebook_file(a.from_codebook, a.bins, alpha, !a.no_diagonal, a.seed);
    } else {
        auto built = build_teacher_from_kmeans(load_features(a.from_features), a.k, a.bins, alpha, !a.no_diagonal, a.seed, a.iters);
        if (built.clustering.degenerate) std::cerr << "warning: feature corpus is degenerate; centroids are identical\n";
        t = std::move(built.teacher);
    }
    save_teacher(*t, a.out);
    const auto& m = t->hist().mass;
    std::cout << "teacher " << a.out << ": K=" << t->k() << " N=" << t->bins() << " alpha=" << t->alpha()
              << " source=" << teacher_source_name(t->source()) << " mass_min=" << *std::min_element(m.begin(), m.end())
              << " mass_max=" << *std::max_element(m.begin(), m.end()) << '\n';
    return 0;
}

// ---------------------------------------------------------------- train

struct TrainArgs {
    std::string manifest, config, teacher, out, resume;
    DatasetArgs data;
    std::optional<double> lambda_hist, lambda_res, lr;
    std::optional<std::size_t> steps, batch, k_sem, k_vis;
    std::optional<std::uint64_t> seed;
    bool no_residual = false;
    std::size_t checkpoint_every = 0;
};

int cmd_train(TrainArgs a) {
    if (a.out.empty()) throw UsageError("--out <dir> is required");
    TrainConfig cfg;
    if (!a.manifest.empty()) {
        std::ifstream f(a.manifest);
        if (!f) throw Error("cannot open manifest '" + a.manifest + "'");
        const json m = json::parse(f);
        cfg = m.at("config").get<TrainConfig>();
        if (!a.data.given() && m.contains("dataset")) a.data = dataset_from_descriptor(m.at("dataset"));
        if (a.teacher.empty() && m.contains("teacher") && !m.at("teacher").is_null())
            a.teacher = m.at("teacher").at("path").get<std::string>();
    } else if (!a.config.empty()) {
        std::ifstream f(a.config);
        if (!f) throw Error("cannot open config '" + a.config + "'");
        cfg = json::parse(f).get<TrainConfig>();
    }
    std::optional<CheckpointData> ck;
    if (!a.resume.empty()) {
        ck = read_checkpoint(a.resume);
        cfg = ck->config;
    }
    if (a.lambda_hist) cfg.lambda_hist = *a.lambda_hist;
    if (a.lambda_res) cfg.lambda_res = *a.lambda_res;
    if (a.lr) cfg.lr = *a.lr;
    if (a.steps) cfg.steps = *a.steps;
    if (a.batch) cfg.batch = *a.batch;
    if (a.k_sem) cfg.K_sem = *a.k_sem;
    if (a.k_vis) cfg.K_vis = *a.k_vis;
    if (a.seed) cfg.seed = *a.seed;
    if (a.no_residual) cfg.use_residual = false;
    if (!a.teacher.empty()) cfg.teacher_path = a.teacher;
    if (cfg.lambda_hist != 0.0 && cfg.teacher_path.empty())
        throw UsageError("missing teacher: --teacher <file> is required when lambda_hist != 0 (use --lambda-hist 0 for a control run)");

    const Tensor<float> images = a.data.load();
    cfg.image_size = images.dim(1);
    cfg.validate();
    if (images.dim(1) != images.dim(2)) throw ValueError("train: images must be square");

    std::optional<TeacherDistribution> teacher;
    if (!cfg.teacher_path.empty()) teacher = load_teacher(cfg.teacher_path);

    Trainer<float> tr(cfg, teacher);
    if (ck) {
        if (ck->config.image_size != cfg.image_size) check_image_size(ck->config, images);
        apply_checkpoint(*ck, tr);
    }

    const fs::path out(a.out);
    fs::create_directories(out);
    json manifest = {{"config", cfg},
                     {"teacher", teacher ? teacher_descriptor(cfg.teacher_path, *teacher) : json(nullptr)},
                     {"dataset", a.data.descriptor()},
                     {"output_dir", a.out},
                     {"control", cfg.lambda_hist == 0.0}};
    if (ck) manifest["resumed_from"] = a.resume;
    write_text(out / "manifest.json", manifest.dump(2) + "\n");

    std::ofstream log(out / "log.jsonl", ck ? std::ios::app : std::ios::trunc);
    if (!log) throw Error("cannot open " + (out / "log.jsonl").string());
    while (tr.steps_done() < cfg.steps) {
        const std::uint64_t step = tr.steps_done();
        const auto lb = tr.step_on(images);
        log << step_record(step, lb).dump() << '\n';
        if (a.checkpoint_every > 0 && tr.steps_done() % a.checkpoint_every == 0 && tr.steps_done() < cfg.steps)
            save_checkpoint(tr, out / ("checkpoint_" + std::to_string(tr.steps_done()) + ".gtck"));
    }
    log.flush();
    save_checkpoint(tr, out / "checkpoint.gtck");

    const auto r = evaluate_model(tr.model(), images);
    const std::string row = metrics_row(out.filename().string(), cfg, r);
    write_text(out / "metrics.csv", std::string(kMetricsHeader) + "\n" + row + "\n");
    std::cout << kMetricsHeader << '\n' << row << '\n';
    return 0;
}

// ---------------------------------------------------------------- eval / metrics / quantize

struct EvalArgs {
    std::string checkpoint, out, dump_recon, model_id;
    DatasetArgs data;
};

int cmd_eval(const EvalArgs& a) {
    if (a.checkpoint.empty()) throw UsageError("--checkpoint is required");
    const Tensor<float> images = a.data.load();
    const auto model = load_model<float>(a.checkpoint);
    check_image_size(model.config(), images);
    const auto r = evaluate_model(model, images, !a.dump_recon.empty());
    const std::string id = a.model_id.empty() ? fs::path(a.checkpoint).parent_path().filename().string() : a.model_id;
    const std::string text = std::string(kMetricsHeader) + "\n" + metrics_row(id, model.config(), r) + "\n";
    if (a.out.empty()) std::cout << text;
    else write_text(a.out, text);
    if (!a.dump_recon.empty()) {
        fs::create_directories(a.dump_recon);
        for (std::size_t i = 0; i < images.dim(0); ++i) {
            char name[32];
            std::snprintf(name, sizeof name, "recon_%05zu.ppm", i);
            write_ppm(fs::path(a.dump_recon) / name, r.recon, i);
        }
    }
    return 0;
}

struct MetricsArgs {
    std::string counts, checkpoint, model_id;
    DatasetArgs data;
};

std::vector<std::uint64_t> read_counts(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw Error("cannot open counts file '" + path + "'");
    std::vector<std::uint64_t> counts;
    std::string line;
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        const auto comma = line.find_last_of(',');
        const std::string field = comma == std::string::npos ? line : line.substr(comma + 1);
        try {
            std::size_t used = 0;
            const long long v = std::stoll(field, &used);
            if (v < 0) throw FormatError(path + ": negative count");
            counts.push_back(static_cast<std::uint64_t>(v));
        } catch (const std::invalid_argument&) {
            if (counts.empty()) continue;  // header line
            throw FormatError(path + ": unparsable count '" + field + "'");
        }
    }
    return counts;
}

int cmd_metrics(const MetricsArgs& a) {
    if (!a.counts.empty() == !a.checkpoint.empty()) throw UsageError("exactly one of --counts or --checkpoint is required");
    if (!a.counts.empty()) {
        const UsageDistribution u(read_counts(a.counts));
        std::cout << "codes,total,density_cv,normalized_entropy,gini\n"
                  << std::setprecision(10) << u.codes() << ',' << u.total << ',' << density_cv(u) << ','
                  << normalized_entropy(u) << ',' << gini(u) << '\n';
        return 0;
    }
    const Tensor<float> images = a.data.load();
    const auto model = load_model<float>(a.checkpoint);
    check_image_size(model.config(), images);
    const auto r = evaluate_model(model, images);
    const std::string id = a.model_id.empty() ? fs::path(a.checkpoint).parent_path().filename().string() : a.model_id;
    std::cout << kMetricsHeader << '\n' << metrics_row(id, model.config(), r) << '\n';
    return 0;
}

struct QuantizeArgs {
    std::string checkpoint, out, features_out, codebook_out;
    DatasetArgs data;
};

int cmd_quantize(const QuantizeArgs& a) {
    if (a.checkpoint.empty()) throw UsageError("--checkpoint is required");
    const Tensor<float> images = a.data.load();
    const auto model = load_model<float>(a.checkpoint);
    check_image_size(model.config(), images);
    const auto r = evaluate_model(model, images);
    std::ostringstream csv;
    csv << "image,row,col,sem,vis\n";
    std::size_t image = 0;
    for (std::size_t c = 0; c < r.indices_sem.size(); ++c) {
        const auto& gs = r.indices_sem[c];
        const auto& gv = r.indices_vis[c];
        const std::size_t h = gs.shape[1], w = gs.shape[2];
        for (std::size_t b = 0; b < gs.shape[0]; ++b, ++image)
            for (std::size_t y = 0; y < h; ++y)
                for (std::size_t x = 0; x < w; ++x) {
                    const std::size_t i = (b * h + y) * w + x;
                    csv << image << ',' << y << ',' << x << ',' << gs.values[i] << ',' << gv.values[i] << '\n';
                }
    }
    if (a.out.empty()) std::cout << csv.str();
    else write_text(a.out, csv.str());
    if (!a.features_out.empty()) {
        const auto enc = model.encode(gather_images<float>(images, [&] {
            std::vector<std::size_t> idx(images.dim(0));
            std::iota(idx.begin(), idx.end(), std::size_t{0});
            return idx;
        }()));
        FeatureCorpus corpus;
        corpus.vectors = enc.Z_sem;
        corpus.vectors.reshape({enc.Z_sem.rows(), enc.Z_sem.shape().back()});
        corpus.source_tag = "checkpoint:" + a.checkpoint + ":Z_sem";
        save_features(corpus, a.features_out);
    }
    if (!a.codebook_out.empty()) save_codebook(model.codebook_sem(), a.codebook_out);
    return 0;
}

// ---------------------------------------------------------------- hist-compare

struct HistCompareArgs {
    std::vector<std::string> inputs;
    std::string out_dir;
    bool rebin = false;
};

int cmd_hist_compare(const HistCompareArgs& a) {
    if (a.inputs.size() < 2) throw UsageError("hist-compare needs at least two --input files");
    if (a.out_dir.empty()) throw UsageError("--out-dir is required");
    struct Input {
        std::string label;
        std::optional<TeacherDistribution> teacher;
        std::optional<TokenizerModel<float>> model;
        int bins = 0;
        double alpha = 0;
    };
    std::vector<Input> ins;
    for (const auto& p : a.inputs) {
        Input in;
        in.label = fs::path(p).stem().string();
        if (has_magic(p, "GTTD")) {
            in.teacher = load_teacher(p);
            in.bins = in.teacher->bins();
            in.alpha = in.teacher->alpha();
        } else if (has_magic(p, "GTCK")) {
            in.model = load_model<float>(p);
            in.bins = in.model->config().bins;
            in.alpha = in.model->config().alpha;
            if (in.label == "checkpoint") in.label = fs::path(p).parent_path().filename().string();
        } else {
            throw FormatError(p + ": neither a teacher (GTTD) nor a checkpoint (GTCK) file");
        }
        ins.push_back(std::move(in));
    }
    const int bins = ins.front().bins;
    const double alpha = ins.front().alpha;
    for (const auto& in : ins)
        if ((in.bins != bins || in.alpha != alpha) && !a.rebin)
            throw ValueError("inputs use different histogram settings (" + in.label + ": N=" + std::to_string(in.bins) +
                             ", alpha=" + std::to_string(in.alpha) + " vs N=" + std::to_string(bins) + ", alpha=" +
                             std::to_string(alpha) + "); pass --rebin to compare anyway");

    std::vector<LabeledHistogram> hs;
    for (const auto& in : ins) {
        RelationHistogram h;
        if (in.model) {
            const auto& c = in.model->config();
            h = codebook_histogram(in.model->codebook_sem(), bins, alpha, c.include_diagonal);
        } else {
            h = in.bins == bins ? in.teacher->hist() : rebin(in.teacher->hist(), bins);
        }
        hs.push_back({in.label, std::move(h)});
    }

    const fs::path out(a.out_dir);
    fs::create_directories(out);
    for (std::size_t i = 0; i < hs.size(); ++i)
        export_histogram_csv(hs[i].hist, out / ("hist_" + std::to_string(i) + "_" + hs[i].label + ".csv"));
    std::ostringstream kl;
    kl << std::setprecision(12) << "a,b,kl_a_b,kl_b_a\n";
    for (std::size_t i = 0; i < hs.size(); ++i)
        for (std::size_t j = i + 1; j < hs.size(); ++j)
            kl << hs[i].label << ',' << hs[j].label << ',' << kl_divergence(hs[i].hist.mass, hs[j].hist.mass) << ','
               << kl_divergence(hs[j].hist.mass, hs[i].hist.mass) << '\n';
    write_text(out / "kl.csv", kl.str());
    write_text(out / "overlay.svg", histogram_overlay_svg(hs));
    std::cout << kl.str();
    return 0;
}

// ---------------------------------------------------------------- gradcheck

struct GradcheckArgs {
    std::string term = "all";
    double perturb = 1e-5;
    double tolerance = 1e-3;
    std::size_t samples = 4;
    std::uint64_t seed = 0;
};

int cmd_gradcheck(const GradcheckArgs& a) {
    std::vector<GradTerm> terms = all_terms();
    if (a.term != "all") {
        try {
            terms = {parse_term(a.term)};
        } catch (const ValueError& e) {
            throw UsageError(e.what());
        }
    }
    GradcheckOptions opt;
    opt.step = a.perturb;
    opt.tolerance = a.tolerance;
    opt.samples_per_tensor = a.samples;
    opt.seed = a.seed;
    bool ok = true;
    std::cout << std::left << std::setw(7) << "term" << std::setw(15) << "max_rel_err" << std::setw(9) << "checked"
              << std::setw(9) << "seconds" << "status  worst_param\n";
    for (const auto t : terms) {
        const auto r = gradcheck(t, opt);
        ok = ok && r.passed;
        std::cout << std::left << std::setw(7) << term_name(t) << std::setw(15) << std::setprecision(4) << r.max_rel_error
                  << std::setw(9) << r.entries.size() << std::setw(9) << std::setprecision(3) << r.seconds
                  << (r.passed ? "PASS    " : "FAIL    ") << r.worst_param << '\n';
    }
    return ok ? 0 : 1;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"glotok: dual-codebook tokenizer with histogram relation and residual learning"};
    app.require_subcommand(1);

    auto* teacher = app.add_subcommand("teacher", "teacher distributions");
    teacher->require_subcommand(1);
    TeacherArgs ta;
    auto* tbuild = teacher->add_subcommand("build", "build a frozen relation distribution");
    tbuild->add_option("--from-codebook", ta.from_codebook, "codebook file (GTCB)");
    tbuild->add_option("--from-features", ta.from_features, "feature corpus (GTFT) to cluster");
    tbuild->add_option("--k", ta.k, "k-means cluster count");
    tbuild->add_option("--bins", ta.bins, "histogram bins N")->capture_default_str();
    tbuild->add_option("--alpha", ta.alpha, "kernel sharpness (default 2(N-1)^2/4)");
    tbuild->add_option("--seed", ta.seed, "k-means seed")->capture_default_str();
    tbuild->add_option("--iters", ta.iters, "maximum Lloyd iterations")->capture_default_str();
    tbuild->add_flag("--no-diagonal", ta.no_diagonal, "exclude self-relations");
    tbuild->add_option("--out", ta.out, "output teacher file")->required();

    TrainArgs tr;
    auto* train = app.add_subcommand("train", "train the toy tokenizer");
    train->add_option("--manifest", tr.manifest, "experiment manifest (JSON)");
    train->add_option("--config", tr.config, "TrainConfig JSON");
    tr.data.add_to(train);
    train->add_option("--teacher", tr.teacher, "teacher file (GTTD)");
    train->add_option("--lambda-hist", tr.lambda_hist, "histogram loss weight (0 = control run)");
    train->add_option("--lambda-res", tr.lambda_res, "residual loss weight");
    train->add_flag("--no-residual", tr.no_residual, "disable the residual blocks");
    train->add_option("--lr", tr.lr, "Adam learning rate");
    train->add_option("--steps", tr.steps, "total optimizer steps");
    train->add_option("--batch", tr.batch, "batch size");
    train->add_option("--k-sem", tr.k_sem, "semantic codebook size");
    train->add_option("--k-vis", tr.k_vis, "visual codebook size");
    train->add_option("--seed", tr.seed, "run seed");
    train->add_option("--resume", tr.resume, "continue from a checkpoint");
    train->add_option("--checkpoint-every", tr.checkpoint_every, "periodic checkpoint interval in steps");
    train->add_option("--out", tr.out, "output directory");

    EvalArgs ea;
    auto* eval = app.add_subcommand("eval", "reconstruction and uniformity metrics");
    eval->add_option("--checkpoint", ea.checkpoint, "checkpoint file");
    ea.data.add_to(eval);
    eval->add_option("--out", ea.out, "metrics CSV (default stdout)");
    eval->add_option("--model-id", ea.model_id, "model identifier for the CSV row");
    eval->add_option("--dump-recon", ea.dump_recon, "write one reconstruction per input image");

    QuantizeArgs qa;
    auto* quant = app.add_subcommand("quantize", "token indices for a dataset");
    quant->add_option("--checkpoint", qa.checkpoint, "checkpoint file");
    qa.data.add_to(quant);
    quant->add_option("--out", qa.out, "indices CSV (default stdout)");
    quant->add_option("--features-out", qa.features_out, "also save semantic latents as a feature corpus");
    quant->add_option("--codebook-out", qa.codebook_out, "also save the semantic codebook");

    HistCompareArgs ha;
    auto* hist = app.add_subcommand("hist-compare", "compare relation histograms");
    hist->add_option("--input", ha.inputs, "teacher or checkpoint file (repeatable)");
    hist->add_option("--out-dir", ha.out_dir, "report directory");
    hist->add_flag("--rebin", ha.rebin, "resample mismatched inputs onto the first input's grid");

    GradcheckArgs ga;
    auto* grad = app.add_subcommand("gradcheck", "finite-difference gradient suite");
    grad->add_option("--term", ga.term, "quant, hist, res, total or all")->capture_default_str();
    grad->add_option("--perturb", ga.perturb, "central-difference step")->capture_default_str();
    grad->add_option("--tolerance", ga.tolerance, "max relative error")->capture_default_str();
    grad->add_option("--samples", ga.samples, "entries checked per parameter tensor")->capture_default_str();
    grad->add_option("--seed", ga.seed, "seed")->capture_default_str();

    MetricsArgs ma;
    auto* metrics = app.add_subcommand("metrics", "uniformity metrics from usage counts or a checkpoint");
    metrics->add_option("--counts", ma.counts, "CSV of per-code usage counts (last column)");
    metrics->add_option("--checkpoint", ma.checkpoint, "checkpoint file");
    ma.data.add_to(metrics);
    metrics->add_option("--model-id", ma.model_id, "model identifier for the CSV row");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (tbuild->parsed()) return cmd_teacher_build(ta);
        if (train->parsed()) return cmd_train(tr);
        if (eval->parsed()) return cmd_eval(ea);
        if (quant->parsed()) return cmd_quantize(qa);
        if (hist->parsed()) return cmd_hist_compare(ha);
        if (grad->parsed()) return cmd_gradcheck(ga);
        if (metrics->parsed()) return cmd_metrics(ma);
    } catch (const UsageError& e) {
        std::cerr << "usage error: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 2;
}
