// Command-line workbench for width-reduced learned image compression:
// teacher training, latent distillation, frozen baselines, RD evaluation,
// Bjontegaard comparison, complexity analysis, and synthetic data.
//
// Exit codes: 0 success, 2 config error, 3 data error, 4 numeric divergence.

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "lic/lic.hpp"

namespace fs = std::filesystem;
using namespace lic;

namespace {

std::string fmt_g(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%g", v);
    return buf;
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw DataError("cannot open '" + path.string() + "' for writing");
    f << text;
    if (!f) throw DataError("short write to '" + path.string() + "'");
}

std::string read_text(const fs::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot open '" + path.string() + "'");
    return std::string((std::istreambuf_iterator<char>(f)),
                       std::istreambuf_iterator<char>());
}

// Conv/deconv channel chain, e.g. "3-64-64-64-192".
std::string widths_string(const NetworkSpec& spec) {
    std::string out = std::to_string(spec.layers.front().in_channels);
    for (const LayerSpec& l : spec.layers)
        if (l.kind == LayerKind::conv || l.kind == LayerKind::deconv)
            out += "-" + std::to_string(l.out_channels);
    return out;
}

// Shared --config / field-override plumbing. Flag values win over the file.
struct ConfigCli {
    std::string config_path;
    RunConfig cfg;

    void attach(CLI::App* cmd, bool needs_dataset) {
        cmd->add_option("--config", config_path, "JSON run configuration");
        cmd->add_option("--arch", cfg.arch, "factorized|hyper");
        cmd->add_option("--N", cfg.N, "transform interior width");
        cmd->add_option("--M", cfg.M, "latent channels");
        cmd->add_option("--Nh", cfg.Nh, "hyper transform interior width");
        cmd->add_option("--Mh", cfg.Mh, "hyper latent channels");
        cmd->add_option("--lambdas", cfg.lambdas, "rate-distortion tradeoffs");
        cmd->add_option("--r-values", cfg.r_values, "encoder width divisors");
        cmd->add_option("--rho-values", cfg.rho_values, "dataset percentages");
        cmd->add_option("--steps", cfg.steps, "optimizer steps per model");
        cmd->add_option("--batch-size", cfg.batch_size, "patches per step");
        cmd->add_option("--patch-size", cfg.patch_size, "training crop size");
        cmd->add_option("--lr", cfg.lr, "Adam learning rate");
        cmd->add_option("--seed", cfg.seed, "base RNG seed");
        auto* ds = cmd->add_option("--dataset", cfg.dataset, "directory of .ppm files");
        cmd->add_option("--output-dir", cfg.output_dir, "artifact directory");
        (void)ds;
        (void)needs_dataset;
    }

    // Loads the file (if any), re-applies flag overrides, validates.
    RunConfig resolve(CLI::App* cmd, bool needs_dataset) {
        RunConfig out;
        if (!config_path.empty()) out = load_run_config(config_path);
        auto seen = [&](const std::string& name) {
            return cmd->count(name) > 0;
        };
        if (seen("--arch")) out.arch = cfg.arch;
        if (seen("--N")) out.N = cfg.N;
        if (seen("--M")) out.M = cfg.M;
        if (seen("--Nh")) out.Nh = cfg.Nh;
        if (seen("--Mh")) out.Mh = cfg.Mh;
        if (seen("--lambdas")) out.lambdas = cfg.lambdas;
        if (seen("--r-values")) out.r_values = cfg.r_values;
        if (seen("--rho-values")) out.rho_values = cfg.rho_values;
        if (seen("--steps")) out.steps = cfg.steps;
        if (seen("--batch-size")) out.batch_size = cfg.batch_size;
        if (seen("--patch-size")) out.patch_size = cfg.patch_size;
        if (seen("--lr")) out.lr = cfg.lr;
        if (seen("--seed")) out.seed = cfg.seed;
        if (seen("--dataset")) out.dataset = cfg.dataset;
        if (seen("--output-dir")) out.output_dir = cfg.output_dir;
        validate(out);
        if (needs_dataset && out.dataset.empty())
            throw ConfigError("config: a dataset directory is required "
                              "(--dataset or the 'dataset' key)");
        return out;
    }
};

TrainConfig to_train_config(const RunConfig& cfg, Regime regime) {
    TrainConfig tc;
    tc.regime = regime;
    tc.steps = cfg.steps;
    tc.batch_size = cfg.batch_size;
    tc.patch_size = cfg.patch_size;
    tc.lr = cfg.lr;
    tc.seed = cfg.seed;
    return tc;
}

void write_model_and_log(const ModelState& m, const TrainLog& log,
                         const fs::path& outdir, const std::string& stem) {
    fs::create_directories(outdir);
    const fs::path ckpt = outdir / (stem + ".ckpt");
    save_checkpoint(m, ckpt.string());
    write_text(outdir / (stem + ".log.csv"), log_to_csv(log));
    std::cout << "wrote " << ckpt.string() << "\n";
}

// ---------------------------------------------------------------------------
// Commands
// ---------------------------------------------------------------------------

void cmd_train_teacher(ConfigCli& cc, CLI::App* cmd) {
    RunConfig cfg = cc.resolve(cmd, /*needs_dataset=*/true);
    const Arch arch = arch_from_string(cfg.arch);
    const Dataset ds = load_dataset_dir(cfg.dataset);
    for (size_t li = 0; li < cfg.lambdas.size(); ++li) {
        const double lambda = cfg.lambdas[li];
        Rng init_rng(Rng::mix(cfg.seed, 100 + static_cast<uint64_t>(li)));
        ModelState m = make_teacher(arch, cfg.N, cfg.M, cfg.Nh, cfg.Mh, lambda, init_rng);
        TrainConfig tc = to_train_config(cfg, Regime::teacher);
        tc.lambda = lambda;
        TrainLog log;
        train_teacher(m, tc, ds, &log);
        write_model_and_log(m, log, cfg.output_dir, "teacher_l" + fmt_g(lambda));
    }
}

// Shared grid driver for distill / train-frozen; the two differ only in the
// regime, the loss, and the artifact prefix.
void student_grid(ConfigCli& cc, CLI::App* cmd, const std::vector<std::string>& teachers,
                  Regime regime) {
    RunConfig cfg = cc.resolve(cmd, /*needs_dataset=*/true);
    if (teachers.empty()) throw ConfigError("at least one teacher checkpoint is required");
    const Dataset ds = load_dataset_dir(cfg.dataset);
    const std::string prefix =
        regime == Regime::kd ? "student_kd_" : "student_frozen_";
    for (const std::string& tpath : teachers) {
        const ModelState teacher = load_checkpoint(tpath);
        const std::string teacher_stem = fs::path(tpath).stem().string();
        for (size_t ri = 0; ri < cfg.r_values.size(); ++ri) {
            for (size_t pi = 0; pi < cfg.rho_values.size(); ++pi) {
                const int64_t r = cfg.r_values[ri];
                const double rho = cfg.rho_values[pi];
                // The KD student and its frozen twin share this init stream,
                // so paired runs start from identical encoders.
                Rng init_rng(Rng::mix(cfg.seed, 200 + 16 * static_cast<uint64_t>(ri) +
                                                    static_cast<uint64_t>(pi)));
                ModelState s = make_student(teacher, r, init_rng,
                                            /*copy_encoder=*/false, teacher_stem);
                const std::string stem = prefix + "r" + std::to_string(r) + "_rho" +
                                         fmt_g(rho) + "_l" + fmt_g(teacher.lambda);
                std::cout << stem << ": effective encoder widths "
                          << widths_string(s.g_a.spec());
                if (!s.h_a.empty())
                    std::cout << ", hyper " << widths_string(s.h_a.spec());
                std::cout << " (r=" << r << ")\n";

                TrainConfig tc = to_train_config(cfg, regime);
                tc.lambda = teacher.lambda;
                tc.rho_percent = rho;
                tc.r = r;
                TrainLog log;
                if (regime == Regime::kd)
                    distill(s, teacher, tc, ds, &log);
                else
                    train_frozen_baseline(s, tc, ds, &log);
                write_model_and_log(s, log, cfg.output_dir, stem);
            }
        }
    }
}

void cmd_eval(ConfigCli& cc, CLI::App* cmd, const std::vector<std::string>& ckpts,
              const std::string& out_path) {
    RunConfig cfg = cc.resolve(cmd, /*needs_dataset=*/true);
    if (ckpts.empty()) throw ConfigError("at least one checkpoint is required");
    const Dataset ds = load_dataset_dir(cfg.dataset);
    std::vector<RDPoint> points;
    for (const std::string& path : ckpts) {
        const ModelState m = load_checkpoint(path);
        points.push_back(eval_model(m, ds, fs::path(path).stem().string()));
        const RDPoint& p = points.back();
        std::cout << p.model_id << ": " << fmt_g(p.bpp) << " bpp, " << fmt_g(p.psnr_db)
                  << " dB\n";
    }
    if (!fs::path(out_path).parent_path().empty())
        fs::create_directories(fs::path(out_path).parent_path());
    write_text(out_path, rd_csv(points));
    std::cout << "wrote " << out_path << "\n";
}

void cmd_bd(const std::string& anchor_path, const std::vector<std::string>& test_paths,
            const std::string& out_path) {
    auto load_curve = [](const std::string& path) {
        RDCurve c;
        c.id = fs::path(path).stem().string();
        c.points = parse_rd_csv(read_text(path));
        c.sort_points();
        return c;
    };
    const RDCurve anchor = load_curve(anchor_path);
    std::vector<RDCurve> tests;
    for (const std::string& p : test_paths) tests.push_back(load_curve(p));
    std::vector<BDRow> rows;
    try {
        rows = compare_to_anchor(anchor, tests);
    } catch (const ContractError& e) {
        // Curve-shape problems here come from user-supplied CSVs.
        throw DataError(e.what());
    }
    if (!fs::path(out_path).parent_path().empty())
        fs::create_directories(fs::path(out_path).parent_path());
    write_text(out_path, bd_csv(rows));
    for (const BDRow& row : rows)
        std::cout << row.test_id << " vs " << row.anchor_id << ": BD-rate "
                  << fmt_g(row.bd.bd_rate_percent) << "%, BD-PSNR "
                  << fmt_g(row.bd.bd_psnr_db) << " dB\n";
    std::cout << "wrote " << out_path << "\n";
}

void cmd_analyze(const std::string& arch_name, int64_t N, int64_t M, int64_t Nh,
                 int64_t Mh, std::vector<int64_t> r_list, const std::string& out_path) {
    const Arch arch = arch_from_string(arch_name);
    if (r_list.empty()) r_list = {1, 2, 4, 8};
    bool has_one = false;
    for (int64_t r : r_list) has_one = has_one || r == 1;
    if (!has_one) throw ConfigError("analyze: the r list must contain 1 (the anchor)");

    std::string csv;
    auto [ga, gs] = build_factorized_codec(N, M);
    const auto ga_rows = relative_report(ga, r_list);
    csv += family_csv("g_a", ga_rows);
    std::cout << family_text("g_a", ga_rows);
    if (arch == Arch::hyper) {
        if (Nh < 1 || Mh < 1)
            throw ConfigError("analyze: hyper arch needs --Nh and --Mh");
        auto [ha, hs] = build_hyper_codec(M, Nh, Mh);
        const auto ha_rows = relative_report(ha, r_list);
        std::string part = family_csv("h_a", ha_rows);
        csv += part.substr(part.find('\n') + 1);  // keep a single header
        std::cout << family_text("h_a", ha_rows);
    }
    if (!out_path.empty()) {
        if (!fs::path(out_path).parent_path().empty())
            fs::create_directories(fs::path(out_path).parent_path());
        write_text(out_path, csv);
        std::cout << "wrote " << out_path << "\n";
    }
}

void cmd_synth_data(int64_t n, int64_t size, uint64_t seed, const std::string& out_dir) {
    if (n < 1) throw ConfigError("synth-data: --n must be >= 1");
    if (size < 16 || size % 16 != 0)
        throw ConfigError("synth-data: --size must be a positive multiple of 16");
    const Dataset ds = synth_dataset(n, size, seed);
    fs::create_directories(out_dir);
    for (size_t i = 0; i < ds.size(); ++i) {
        char name[32];
        std::snprintf(name, sizeof(name), "synth_%05zu.ppm", i);
        save_ppm(ds[i], (fs::path(out_dir) / name).string());
    }
    std::cout << "wrote " << n << " images to " << out_dir << "\n";
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"width-reduced learned image compression workbench"};
    app.require_subcommand(1);

    ConfigCli cc_teacher, cc_kd, cc_frozen, cc_eval;
    std::vector<std::string> kd_teachers, frozen_teachers, eval_ckpts, bd_tests;
    std::string eval_out = "rd.csv", bd_anchor, bd_out = "bd.csv";
    std::string an_arch = "factorized", an_out;
    int64_t an_N = 0, an_M = 0, an_Nh = 0, an_Mh = 0;
    std::vector<int64_t> an_r;
    int64_t sy_n = 0, sy_size = 64;
    uint64_t sy_seed = 0;
    std::string sy_out;

    CLI::App* t = app.add_subcommand("train-teacher",
                                     "train one full-width model per lambda");
    cc_teacher.attach(t, true);

    CLI::App* d = app.add_subcommand("distill",
                                     "train width-reduced students by latent matching");
    cc_kd.attach(d, true);
    d->add_option("teachers", kd_teachers, "teacher checkpoints")->required();

    CLI::App* z = app.add_subcommand(
        "train-frozen", "train width-reduced baselines through the frozen decoder");
    cc_frozen.attach(z, true);
    z->add_option("teachers", frozen_teachers, "teacher checkpoints")->required();

    CLI::App* e = app.add_subcommand("eval", "rate-distortion points for checkpoints");
    cc_eval.attach(e, true);
    e->add_option("checkpoints", eval_ckpts, "model checkpoints")->required();
    e->add_option("--out", eval_out, "output RD CSV path");

    CLI::App* b = app.add_subcommand("bd", "Bjontegaard deltas between RD CSVs");
    b->add_option("--anchor", bd_anchor, "anchor RD CSV")->required();
    b->add_option("tests", bd_tests, "test RD CSVs")->required();
    b->add_option("--out", bd_out, "output BD CSV path");

    CLI::App* a = app.add_subcommand("analyze", "MACs/params for a reduction family");
    a->add_option("--arch", an_arch, "factorized|hyper");
    a->add_option("--N", an_N, "transform interior width")->required();
    a->add_option("--M", an_M, "latent channels")->required();
    a->add_option("--Nh", an_Nh, "hyper interior width");
    a->add_option("--Mh", an_Mh, "hyper latent channels");
    a->add_option("--r", an_r, "width divisors (must include 1)");
    a->add_option("--out", an_out, "output complexity CSV path");

    CLI::App* s = app.add_subcommand("synth-data", "materialize a synthetic dataset");
    s->add_option("--n", sy_n, "number of images")->required();
    s->add_option("--size", sy_size, "square image size (multiple of 16)");
    s->add_option("--seed", sy_seed, "generator seed");
    s->add_option("--out", sy_out, "output directory")->required();

    try {
        app.parse(argc, argv);
        if (t->parsed()) cmd_train_teacher(cc_teacher, t);
        if (d->parsed()) student_grid(cc_kd, d, kd_teachers, Regime::kd);
        if (z->parsed()) student_grid(cc_frozen, z, frozen_teachers, Regime::frozen);
        if (e->parsed()) cmd_eval(cc_eval, e, eval_ckpts, eval_out);
        if (b->parsed()) cmd_bd(bd_anchor, bd_tests, bd_out);
        if (a->parsed()) cmd_analyze(an_arch, an_N, an_M, an_Nh, an_Mh, an_r, an_out);
        if (s->parsed()) cmd_synth_data(sy_n, sy_size, sy_seed, sy_out);
    } catch (const CLI::ParseError& err) {
        const int code = app.exit(err);
        return code == 0 ? 0 : 2;  // bad flags are config errors
    } catch (const ConfigError& err) {
        std::cerr << "config error: " << err.what() << "\n";
        return 2;
    } catch (const DataError& err) {
        std::cerr << "data error: " << err.what() << "\n";
        return 3;
    } catch (const FormatError& err) {
        std::cerr << "data error: " << err.what() << "\n";
        return 3;
    } catch (const NumericError& err) {
        std::cerr << "numeric error: " << err.what() << "\n";
        return 4;
    } catch (const std::exception& err) {
        std::cerr << "error: " << err.what() << "\n";
        return 1;
    }
    return 0;
}
