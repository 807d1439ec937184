// fmlab command-line driver: train, ema, sample, sweep, ablate, eval.

#include <CLI11.hpp>

#include <cmath>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "fmlab/ablate.hpp"
#include "fmlab/config.hpp"
#include "fmlab/errors.hpp"
#include "fmlab/evalsuite.hpp"
#include "fmlab/runner.hpp"
#include "fmlab/sampler.hpp"
#include "fmlab/snapshots.hpp"

using namespace fmlab;

namespace {

enum ExitCode { kOk = 0, kConfig = 1, kNumeric = 2, kIo = 3, kEmptyWindow = 4 };

json load_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config '" + path + "'");
    try {
        return json::parse(in);
    } catch (const json::parse_error& e) {
        throw ConfigError("config '" + path + "' is not valid JSON: " + e.what());
    }
}

// Config file plus --set overrides, validated.
json resolved_doc(const std::string& path, const std::vector<std::string>& sets) {
    json doc = load_json_file(path);
    for (const auto& s : sets) apply_override(doc, s);
    run_config_from_json(doc).validate();
    return doc;
}

void write_file(const std::string& path, const std::string& text) {
    if (path.empty() || path == "-") {
        std::cout << text;
        return;
    }
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open '" + path + "' for writing");
    out << text;
    if (!out) throw IoError("write failed for '" + path + "'");
}

std::vector<double> parse_scales(const std::string& spec) {
    std::vector<double> out;
    const auto dots = spec.find("..");
    try {
        if (dots != std::string::npos) {
            const double lo = std::stod(spec.substr(0, dots));
            const double hi = std::stod(spec.substr(dots + 2));
            if (hi < lo) throw ConfigError("--scales range '" + spec + "' is empty");
            for (double s = lo; s <= hi + 1e-9; s += 1.0) out.push_back(s);
        } else {
            std::stringstream ss(spec);
            std::string item;
            while (std::getline(ss, item, ',')) out.push_back(std::stod(item));
        }
    } catch (const std::logic_error&) {
        throw ConfigError("cannot parse --scales '" + spec + "' (use 3..15 or 3,5,7)");
    }
    if (out.empty()) throw ConfigError("--scales is empty");
    return out;
}

std::pair<double, double> parse_interval(const std::string& spec) {
    const auto comma = spec.find(',');
    if (comma == std::string::npos) throw ConfigError("--interval expects lo,hi");
    try {
        return {std::stod(spec.substr(0, comma)), std::stod(spec.substr(comma + 1))};
    } catch (const std::logic_error&) {
        throw ConfigError("cannot parse --interval '" + spec + "'");
    }
}

struct GenFlags {
    std::optional<double> cfg;
    std::optional<std::size_t> steps;
    std::string interval;
    std::optional<std::uint64_t> seed;
    bool zero_aux = false;

    void add_to(CLI::App* app) {
        app->add_option("--cfg", cfg, "CFG scale (default: config generation.cfg_scale)");
        app->add_option("--steps", steps, "Euler steps (default 100)");
        app->add_option("--interval", interval, "guidance interval lo,hi (default 0.1,0.9)");
        app->add_option("--seed", seed, "sampling seed");
        app->add_flag("--zero-aux", zero_aux, "zero the auxiliary conditioning branch");
    }

    GenerationConfig resolve(const RunConfig& cfg, std::uint64_t default_seed) const {
        GenerationConfig g;
        g.steps = steps.value_or(cfg.generation.steps);
        g.cfg_scale = this->cfg.value_or(cfg.generation.cfg_scale);
        g.t_lo = cfg.generation.t_lo;
        g.t_hi = cfg.generation.t_hi;
        if (!interval.empty()) std::tie(g.t_lo, g.t_hi) = parse_interval(interval);
        g.seed = seed.value_or(default_seed);
        g.forward.zero_aux = zero_aux;
        return g;
    }
};

struct LoadedModel {
    Checkpoint ckpt;
    RunConfig cfg;
    VelocityNet net;
};

LoadedModel load_model(const std::string& path) {
    Checkpoint c = read_checkpoint(path);
    RunConfig cfg = checkpoint_run_config(c);
    ArchConfig arch = c.arch;
    return LoadedModel{std::move(c), std::move(cfg), VelocityNet(std::move(arch))};
}

std::string samples_csv(const Tensor& x, int label) {
    std::string out = "label";
    for (std::size_t j = 0; j < x.cols(); ++j) out += ",x" + std::to_string(j);
    out += '\n';
    for (std::size_t i = 0; i < x.rows(); ++i) {
        out += std::to_string(label);
        for (double v : x.row(i)) out += ',' + format_double(v);
        out += '\n';
    }
    return out;
}

int run(int argc, char** argv) {
    CLI::App app{"fmlab: conditional flow matching experiments"};
    app.require_subcommand(1);

    // train
    std::string train_config;
    std::vector<std::string> train_sets;
    std::string runs_root = "runs";
    std::string train_out;
    bool quiet = false;
    auto* train = app.add_subcommand("train", "train a model from a config file");
    train->add_option("config", train_config, "run config (JSON)")->required();
    train->add_option("--set", train_sets, "override, e.g. training.cfg_dropout=0.3");
    train->add_option("--runs-dir", runs_root, "parent of timestamped run directories");
    train->add_option("--out", train_out, "exact run directory (must not hold a run)");
    train->add_flag("--quiet", quiet, "no progress output");

    // ema
    std::string ema_run;
    std::optional<std::int64_t> from_step, to_step;
    bool ema_auto = false;
    auto* ema = app.add_subcommand("ema", "post-hoc average of a run's snapshots");
    ema->add_option("run_dir", ema_run, "run directory")->required();
    ema->add_option("--from-step", from_step, "first step of the window (inclusive)");
    ema->add_option("--to-step", to_step, "last step of the window (inclusive)");
    ema->add_flag("--auto", ema_auto, "window from the validation-loss plateau");

    // sample
    std::string sample_ckpt, sample_out;
    int sample_label = 0;
    std::size_t sample_n = 16;
    GenFlags sample_gen;
    auto* sample = app.add_subcommand("sample", "generate samples with Euler + CFG");
    sample->add_option("checkpoint", sample_ckpt, ".fmc checkpoint")->required();
    sample->add_option("--label", sample_label, "class id");
    sample->add_option("--n", sample_n, "number of samples");
    sample->add_option("--out", sample_out, "CSV path (default stdout)");
    sample_gen.add_to(sample);

    // sweep
    std::string sweep_ckpt, sweep_out, scales = "3..15";
    std::optional<std::size_t> sweep_n;
    GenFlags sweep_gen;
    auto* sweep = app.add_subcommand("sweep", "CFG sweep with adherence and energy distance");
    sweep->add_option("checkpoint", sweep_ckpt, ".fmc checkpoint")->required();
    sweep->add_option("--scales", scales, "3..15 or a list like 3,5,7");
    sweep->add_option("--n", sweep_n, "samples per class");
    sweep->add_option("--out", sweep_out, "CSV path (default stdout)");
    sweep_gen.add_to(sweep);

    // ablate
    std::string ablate_config, matrix_name_arg, ablate_out, ablate_run;
    std::vector<std::string> ablate_sets;
    auto* ablate = app.add_subcommand("ablate", "run an ablation matrix");
    ablate->add_option("config", ablate_config, "base run config (JSON)")->required();
    ablate->add_option("--matrix", matrix_name_arg, "training | inference | conditioning")->required();
    ablate->add_option("--set", ablate_sets, "override applied to the base config");
    ablate->add_option("--out", ablate_out, "report directory (default runs/ablate-<matrix>-<time>)");
    ablate->add_option("--run-dir", ablate_run, "inference matrix: reuse this finished run");
    ablate->add_option("--runs-dir", runs_root, "parent of the default report directory");

    // eval
    std::string eval_ckpt, eval_config, eval_out;
    std::optional<std::size_t> eval_n;
    bool eval_real = false;
    GenFlags eval_gen;
    auto* eval = app.add_subcommand("eval", "adherence / energy distance report");
    eval->add_option("checkpoint", eval_ckpt, ".fmc checkpoint");
    eval->add_option("--config", eval_config, "run config supplying the dataset (default: the checkpoint's)");
    eval->add_option("--n", eval_n, "samples per class");
    eval->add_flag("--real", eval_real, "score fresh real data instead of model samples");
    eval->add_option("--out", eval_out, "JSON path (default stdout)");
    eval_gen.add_to(eval);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kOk : kConfig;
    }

    if (train->parsed()) {
        const json doc = resolved_doc(train_config, train_sets);
        const RunConfig cfg = run_config_from_json(doc);
        const std::filesystem::path dir = train_out.empty() ? fresh_run_dir(runs_root, cfg.run_id) : std::filesystem::path(train_out);
        const TrainOutcome out = run_training(cfg, dir, quiet ? nullptr : &std::cerr);
        std::cout << out.dir.string() << '\n';
        return kOk;
    }

    if (ema->parsed()) {
        EmaResult r;
        if (ema_auto) {
            if (from_step || to_step) throw ConfigError("ema: --auto excludes --from-step/--to-step");
            r = write_ema_auto(ema_run);
        } else {
            if (!from_step || !to_step) throw ConfigError("ema: give --from-step and --to-step, or --auto");
            r = write_ema(ema_run, *from_step, *to_step);
        }
        std::cerr << "averaged " << r.steps.size() << " snapshots in [" << r.from_step << ", " << r.to_step << "]"
                  << (r.auto_fallback ? " (fallback window)" : "") << '\n';
        std::cout << r.path.string() << '\n';
        return kOk;
    }

    if (sample->parsed()) {
        const LoadedModel m = load_model(sample_ckpt);
        GenerationConfig g = sample_gen.resolve(m.cfg, m.cfg.seed);
        g.label = sample_label;
        g.n_samples = sample_n;
        const GenerationResult res = euler_generate(m.net, m.ckpt.params, g);
        write_file(sample_out, samples_csv(res.samples, sample_label));
        return kOk;
    }

    if (sweep->parsed()) {
        const LoadedModel m = load_model(sweep_ckpt);
        const GenerationConfig g = sweep_gen.resolve(m.cfg, m.cfg.eval.seed);
        EvalSpec spec{m.cfg.dataset, sweep_n.value_or(m.cfg.eval.n_per_class), m.cfg.eval.seed};
        write_file(sweep_out, sweep_csv(sweep_cfg(m.net, m.ckpt.params, parse_scales(scales), g, spec)));
        return kOk;
    }

    if (ablate->parsed()) {
        const Matrix matrix = parse_matrix(matrix_name_arg);
        const json doc = resolved_doc(ablate_config, ablate_sets);
        AblationOptions opt;
        opt.out_dir = ablate_out.empty()
                          ? fresh_run_dir(runs_root, "ablate-" + std::string(fmlab::matrix_name(matrix)))
                          : std::filesystem::path(ablate_out);
        if (!ablate_run.empty()) opt.run_dir = ablate_run;
        opt.progress = &std::cerr;
        const AblationResult res = run_ablation(doc, matrix, opt);
        std::cout << res.markdown_path.string() << '\n';
        return kOk;
    }

    if (eval->parsed()) {
        std::optional<LoadedModel> m;
        if (!eval_ckpt.empty()) m = load_model(eval_ckpt);
        RunConfig cfg;
        if (!eval_config.empty()) {
            cfg = load_run_config(eval_config);
        } else if (m) {
            cfg = m->cfg;
        } else {
            throw ConfigError("eval: give a checkpoint or --config");
        }
        EvalSpec spec{cfg.dataset, eval_n.value_or(cfg.eval.n_per_class), cfg.eval.seed};
        EvalReport rep;
        json gen_doc = nullptr;
        if (eval_real) {
            // A third independent real draw stands in for the model.
            const Rng root = Rng(spec.seed).derive("real3");
            std::map<int, Tensor> samples;
            for (std::size_t c = 0; c < spec.dataset.n_classes(); ++c) {
                Rng r = root.derive(static_cast<std::uint64_t>(c));
                samples.emplace(static_cast<int>(c), reference_samples(spec.dataset, static_cast<int>(c),
                                                                       spec.n_per_class, r));
            }
            rep = evaluate_samples(samples, spec);
        } else {
            if (!m) throw ConfigError("eval: a checkpoint is required unless --real is given");
            if (m->net.input_dim() != spec.dataset.sample_dim()) {
                throw ConfigError("eval: checkpoint input_dim does not match the dataset");
            }
            const GenerationConfig g = eval_gen.resolve(m->cfg, cfg.eval.seed);
            rep = evaluate_model(m->net, m->ckpt.params, g, spec);
            gen_doc = {{"cfg_scale", g.cfg_scale},
                       {"steps", g.steps},
                       {"interval", {g.t_lo, g.t_hi}},
                       {"seed", g.seed},
                       {"zero_aux", g.forward.zero_aux}};
        }
        json doc = to_json(rep);
        doc["source"] = eval_real ? "real" : eval_ckpt;
        doc["generation"] = gen_doc;
        doc["submit_scales"] = cfg.generation.submit_scales;
        write_file(eval_out, doc.dump(2) + "\n");
        return kOk;
    }
    return kOk;
}

}  // namespace

int main(int argc, char** argv) {
    try {
        return run(argc, argv);
    } catch (const EmptyWindowError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kEmptyWindow;
    } catch (const IoError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kIo;
    } catch (const NumericError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kNumeric;
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kConfig;
    } catch (const std::filesystem::filesystem_error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kIo;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kConfig;
    }
}
