#include "fmlab/ablate.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <map>
#include <ostream>
#include <set>
#include <sstream>

#include "fmlab/config.hpp"
#include "fmlab/errors.hpp"
#include "fmlab/evalsuite.hpp"
#include "fmlab/runner.hpp"
#include "fmlab/snapshots.hpp"

namespace fmlab {

Matrix parse_matrix(std::string_view name) {
    if (name == "training") return Matrix::training;
    if (name == "inference") return Matrix::inference;
    if (name == "conditioning") return Matrix::conditioning;
    throw ConfigError("unknown ablation matrix '" + std::string(name) + "' (training|inference|conditioning)");
}

std::string_view matrix_name(Matrix m) {
    switch (m) {
        case Matrix::training: return "training";
        case Matrix::inference: return "inference";
        case Matrix::conditioning: return "conditioning";
    }
    return "?";
}

std::vector<ArmSpec> training_arms() {
    return {
        {"baseline", {}},
        {"cfg_dropout_0.05", {{"training.cfg_dropout", 0.05}}},
        {"cfg_dropout_0.30", {{"training.cfg_dropout", 0.30}}},
        {"min_snr_off", {{"training.min_snr", false}}},
        {"adaptive_off", {{"timesteps.adaptive", false}}},
        {"crop_off", {{"training.random_crop", false}}},
    };
}

namespace {

std::string fmt(double v, int prec = 4) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", prec, v);
    return buf;
}

std::string signed_fmt(double v, int prec = 4) { return (v >= 0 ? "+" : "") + fmt(v, prec); }

void write_text(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
    out << text;
    if (!out) throw IoError("write failed for '" + path.string() + "'");
}

std::uint64_t file_digest(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open '" + path.string() + "'");
    std::uint64_t h = 1469598103934665603ULL;
    for (std::istreambuf_iterator<char> it(in), end; it != end; ++it) {
        h ^= static_cast<unsigned char>(*it);
        h *= 1099511628211ULL;
    }
    return h;
}

std::string hex(std::uint64_t v) {
    char buf[24];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

// Config of one arm: overrides applied, run_id suffixed, validated.
std::pair<json, RunConfig> arm_config(const json& base, const std::string& arm,
                                      const std::vector<std::pair<std::string, json>>& overrides) {
    json doc = base;
    for (const auto& [path, value] : overrides) apply_override(doc, path + "=" + value.dump());
    RunConfig cfg = run_config_from_json(doc);
    cfg.run_id += "-" + arm;
    cfg.validate();
    return {to_json(cfg), cfg};
}

// Diff against the baseline, minus run_id. Fails loudly if an arm changes
// anything outside the keys it declares.
std::vector<std::string> checked_diff(const json& base, const json& arm, const std::string& arm_name,
                                      const std::vector<std::string>& allowed_prefixes) {
    std::vector<std::string> out;
    for (const auto& p : json_diff_paths(base, arm)) {
        if (p == "run_id") continue;
        const bool ok = std::any_of(allowed_prefixes.begin(), allowed_prefixes.end(),
                                    [&](const std::string& pre) { return p == pre || p.rfind(pre + ".", 0) == 0; });
        if (!ok) throw std::logic_error("ablation arm '" + arm_name + "' changes unexpected key '" + p + "'");
        out.push_back(p);
    }
    return out;
}

json eval_json(const EvalReport& r) {
    return json{{"mean_adherence", r.mean_adherence ? json(*r.mean_adherence) : json(nullptr)},
                {"min_adherence", r.min_adherence ? json(*r.min_adherence) : json(nullptr)},
                {"energy_distance", r.mean_energy_distance},
                {"baseline_b", r.mean_baseline},
                {"ratio", r.ratio}};
}

std::string adherence_cell(const EvalReport& r) { return r.mean_adherence ? fmt(*r.mean_adherence) : "n/a"; }

std::string diff_cell(const std::vector<std::string>& diff) {
    if (diff.empty()) return "-";
    std::string s;
    for (const auto& d : diff) s += (s.empty() ? "" : ", ") + ("`" + d + "`");
    return s;
}

GenerationConfig generation_from(const RunConfig& cfg) {
    GenerationConfig g;
    g.steps = cfg.generation.steps;
    g.cfg_scale = cfg.generation.cfg_scale;
    g.t_lo = cfg.generation.t_lo;
    g.t_hi = cfg.generation.t_hi;
    g.seed = cfg.eval.seed;
    return g;
}

EvalSpec eval_spec_from(const RunConfig& cfg) { return EvalSpec{cfg.dataset, cfg.eval.n_per_class, cfg.eval.seed}; }

void note(std::ostream* progress, const std::string& msg) {
    if (progress) *progress << msg << std::endl;
}

AblationResult training_matrix(const json& base_doc, const AblationOptions& opt) {
    struct ArmRun {
        ArmSpec spec;
        std::vector<std::string> diff;
        std::vector<std::pair<std::int64_t, double>> curve;
    };
    const json base = arm_config(base_doc, "baseline", {}).first;
    std::vector<ArmRun> runs;
    bool gmm = false;
    for (const auto& arm : training_arms()) {
        auto [doc, cfg] = arm_config(base_doc, arm.name, arm.overrides);
        gmm = cfg.dataset.kind == DatasetKind::gmm;
        std::vector<std::string> allowed;
        for (const auto& [path, v] : arm.overrides) allowed.push_back(path);
        ArmRun run{arm, checked_diff(base, doc, arm.name, allowed), {}};
        if (run.diff.size() != arm.overrides.size()) {
            // An override equal to the baseline value would make the arm a silent no-op.
            throw std::logic_error("ablation arm '" + arm.name + "' does not differ from the baseline");
        }
        note(opt.progress, "[training] arm " + arm.name);
        const TrainOutcome out = run_training(cfg, opt.out_dir / arm.name);
        run.curve = val_curve(out.records);
        runs.push_back(std::move(run));
    }

    // Steps where every arm logged a validation loss.
    std::set<std::int64_t> common;
    for (const auto& [s, v] : runs.front().curve) common.insert(s);
    for (const auto& r : runs) {
        std::set<std::int64_t> mine;
        for (const auto& [s, v] : r.curve) mine.insert(s);
        std::set<std::int64_t> keep;
        std::set_intersection(common.begin(), common.end(), mine.begin(), mine.end(), std::inserter(keep, keep.end()));
        common = std::move(keep);
    }
    if (common.empty()) throw std::logic_error("training arms share no validation steps");
    const std::vector<std::int64_t> steps(common.begin(), common.end());
    const std::int64_t last = steps.back();
    const double tail_from = static_cast<double>(last) - 0.25 * static_cast<double>(last - steps.front());

    auto at = [](const std::vector<std::pair<std::int64_t, double>>& curve, std::int64_t step) {
        return std::lower_bound(curve.begin(), curve.end(), std::make_pair(step, -1e300))->second;
    };

    json arms = json::array();
    std::ostringstream md;
    md << "# Training ablation\n\n"
       << "Validation loss (unweighted clamped MSE on the fixed held-out batch), compared at identical steps. "
       << "Delta = arm - baseline; negative is better.\n\n"
       << "| arm | changed keys | val @ " << last << " | delta @ " << last << " | mean delta, last 25% |\n"
       << "|---|---|---|---|---|\n";
    const auto& base_curve = runs.front().curve;
    for (const auto& r : runs) {
        json deltas = json::array();
        double tail_sum = 0.0;
        std::size_t tail_n = 0;
        for (auto s : steps) {
            const double d = at(r.curve, s) - at(base_curve, s);
            deltas.push_back({{"step", s}, {"val_loss", at(r.curve, s)}, {"delta", d}});
            if (static_cast<double>(s) >= tail_from) {
                tail_sum += d;
                ++tail_n;
            }
        }
        const double final_val = at(r.curve, last);
        const double final_delta = final_val - at(base_curve, last);
        const double tail_delta = tail_sum / static_cast<double>(tail_n);
        json overrides = json::object();
        for (const auto& [p, v] : r.spec.overrides) overrides[p] = v;
        arms.push_back({{"arm", r.spec.name},
                        {"overrides", overrides},
                        {"config_diff", r.diff},
                        {"final_step", last},
                        {"final_val_loss", final_val},
                        {"delta_final", final_delta},
                        {"delta_tail_mean", tail_delta},
                        {"step_aligned", deltas},
                        {"run_dir", (opt.out_dir / r.spec.name).string()}});
        md << "| " << r.spec.name << " | " << diff_cell(r.diff) << " | " << fmt(final_val) << " | "
           << (r.spec.name == "baseline" ? "0" : signed_fmt(final_delta)) << " | "
           << (r.spec.name == "baseline" ? "0" : signed_fmt(tail_delta)) << " |\n";
    }
    if (gmm) {
        md << "\nThe dataset is a GMM of fixed-width vectors, so there is nothing to crop: `crop_off` trains the same "
              "model as the baseline and its delta is expected to be zero.\n";
    }
    md << "\n## Step-aligned deltas\n\n| step |";
    for (const auto& r : runs) md << ' ' << r.spec.name << " |";
    md << "\n|---|";
    for (std::size_t i = 0; i < runs.size(); ++i) md << "---|";
    md << '\n';
    for (auto s : steps) {
        md << "| " << s << " |";
        for (const auto& r : runs) md << ' ' << signed_fmt(at(r.curve, s) - at(base_curve, s)) << " |";
        md << '\n';
    }

    AblationResult res;
    res.report = json{{"matrix", "training"}, {"metric", "val_loss"}, {"steps", steps}, {"arms", arms}};
    res.markdown = md.str();
    return res;
}

AblationResult inference_matrix(const json& base_doc, const AblationOptions& opt) {
    std::filesystem::path run_dir;
    if (opt.run_dir) {
        run_dir = *opt.run_dir;
    } else {
        auto [doc, cfg] = arm_config(base_doc, "inference", {});
        note(opt.progress, "[inference] training the shared checkpoint");
        run_dir = run_training(cfg, opt.out_dir / "run").dir;
    }
    const std::filesystem::path ckpt_path = run_dir / kFinalCheckpoint;
    const Checkpoint ckpt = read_checkpoint(ckpt_path);
    const RunConfig cfg = checkpoint_run_config(ckpt);
    const VelocityNet net(ckpt.arch);
    const EvalSpec spec = eval_spec_from(cfg);
    const GenerationConfig base_gen = generation_from(cfg);
    const std::string digest = hex(file_digest(ckpt_path));

    struct Arm {
        std::string name;
        std::string change;
        GenerationConfig gen;
        std::optional<std::pair<std::int64_t, std::int64_t>> ema;
    };
    std::vector<Arm> arms;
    arms.push_back({"baseline", "-", base_gen, std::nullopt});
    {
        GenerationConfig g = base_gen;
        g.t_lo = 0.0;
        g.t_hi = 1.0;
        arms.push_back({"gi_off", "guidance over the full [0, 1]", g, std::nullopt});
    }
    for (std::size_t steps : {std::size_t{50}, std::size_t{200}}) {
        GenerationConfig g = base_gen;
        g.steps = steps;
        arms.push_back({"steps_" + std::to_string(steps), std::to_string(steps) + " Euler steps", g, std::nullopt});
    }
    const SnapshotStore store(run_dir);
    const auto snaps = store.steps();
    if (!snaps.empty()) {
        const std::int64_t first = snaps.front(), last = snaps.back();
        const auto tail_from = last - static_cast<std::int64_t>(0.1 * static_cast<double>(last - first));
        arms.push_back({"ema_last_10pct", "post-hoc average of snapshots in the last 10% of steps", base_gen,
                        std::make_pair(tail_from, last)});
        arms.push_back({"ema_all", "post-hoc average of all snapshots", base_gen, std::make_pair(first, last)});
    }

    json rows = json::array();
    std::optional<EvalReport> baseline;
    std::ostringstream md;
    md << "# Inference ablation\n\n"
       << "All sampler arms load the same checkpoint `" << ckpt_path.string() << "` (digest " << digest
       << "). EMA arms average snapshots of that same run. CFG scale " << fmt(base_gen.cfg_scale, 2)
       << ", " << spec.n_per_class << " samples per class, seed " << base_gen.seed << ".\n\n"
       << "| arm | change | adherence | delta adherence | energy distance | delta ED | ED / b | uncond evals |\n"
       << "|---|---|---|---|---|---|---|---|\n";
    for (const auto& arm : arms) {
        note(opt.progress, "[inference] arm " + arm.name);
        std::filesystem::path source = ckpt_path;
        ModelParams params = ckpt.params;
        std::size_t n_avg = 0;
        if (arm.ema) {
            const EmaResult e = write_ema(run_dir, arm.ema->first, arm.ema->second);
            source = e.path;
            params = read_checkpoint(e.path).params;
            n_avg = e.steps.size();
        }
        const EvalReport rep = evaluate_model(net, params, arm.gen, spec);
        GenerationConfig probe = arm.gen;
        probe.n_samples = 1;
        const auto uncond = euler_generate(net, params, probe).uncond_evals;
        if (!baseline) baseline = rep;
        const double d_adh =
            rep.mean_adherence && baseline->mean_adherence ? *rep.mean_adherence - *baseline->mean_adherence : 0.0;
        const double d_ed = rep.mean_energy_distance - baseline->mean_energy_distance;
        json row{{"arm", arm.name},
                 {"change", arm.change},
                 {"checkpoint", source.string()},
                 {"checkpoint_digest", hex(file_digest(source))},
                 {"source_run", run_dir.string()},
                 {"steps", arm.gen.steps},
                 {"interval", {arm.gen.t_lo, arm.gen.t_hi}},
                 {"cfg_scale", arm.gen.cfg_scale},
                 {"uncond_evals_per_sample", uncond},
                 {"metrics", eval_json(rep)},
                 {"delta_adherence", d_adh},
                 {"delta_energy_distance", d_ed}};
        if (arm.ema) {
            row["ema_window"] = {arm.ema->first, arm.ema->second};
            row["ema_snapshots"] = n_avg;
        }
        rows.push_back(row);
        md << "| " << arm.name << " | " << arm.change << " | " << adherence_cell(rep) << " | " << signed_fmt(d_adh)
           << " | " << fmt(rep.mean_energy_distance) << " | " << signed_fmt(d_ed) << " | " << fmt(rep.ratio, 2)
           << " | " << uncond << " |\n";
    }
    md << "\n## Observed directions\n\n";
    for (const auto& r : rows) {
        if (r["arm"] == "baseline") continue;
        const double da = r["delta_adherence"].get<double>();
        const double de = r["delta_energy_distance"].get<double>();
        md << "- `" << r["arm"].get<std::string>() << "`: adherence " << (da < 0 ? "drops" : da > 0 ? "rises" : "unchanged")
           << " (" << signed_fmt(da) << "), energy distance " << (de > 0 ? "worse" : de < 0 ? "better" : "unchanged")
           << " (" << signed_fmt(de) << ").\n";
    }
    if (snaps.empty()) md << "- The run kept no snapshots, so the EMA arms were skipped.\n";

    AblationResult res;
    res.report = json{{"matrix", "inference"},
                      {"checkpoint", ckpt_path.string()},
                      {"checkpoint_digest", digest},
                      {"submit_scales", cfg.generation.submit_scales},
                      {"arms", rows}};
    res.markdown = md.str();
    return res;
}

AblationResult conditioning_matrix(const json& base_doc, const AblationOptions& opt) {
    const auto [base, base_cfg] = arm_config(base_doc, "full", {});
    if (!base_cfg.arch.aux || base_cfg.arch.variant != Variant::full) {
        throw ConfigError("conditioning matrix needs a full-variant base config with an aux branch");
    }
    const std::size_t full_params = arch_param_count(base_cfg.arch);

    struct Arm {
        Variant variant;
        ArchConfig arch;
        std::filesystem::path checkpoint;
    };
    std::vector<Arm> arms;
    for (Variant v : {Variant::full, Variant::aux_zeroed_at_inference, Variant::aux_removed, Variant::capacity_matched}) {
        arms.push_back({v, make_variant(base_cfg.arch, v), {}});
    }

    json rows = json::array();
    std::ostringstream md;
    md << "# Conditioning ablation\n\n"
       << "The zeroed variant reuses the full model's checkpoint and zeroes the auxiliary branch at inference. "
       << "Removed and capacity-matched variants are retrained from scratch with the same seed.\n\n"
       << "| variant | params | params / full | adherence | delta adherence | energy distance | delta ED | ED / b |\n"
       << "|---|---|---|---|---|---|---|---|\n";
    std::optional<EvalReport> full_rep;
    for (auto& arm : arms) {
        const std::string name(variant_name(arm.variant));
        if (arm.variant == Variant::aux_zeroed_at_inference) {
            arm.checkpoint = arms.front().checkpoint;
        } else {
            auto [doc, cfg] = arm_config(base_doc, name, {{"arch", to_json(arm.arch)}});
            checked_diff(base, doc, name, {"arch"});
            note(opt.progress, "[conditioning] training " + name);
            arm.checkpoint = run_training(cfg, opt.out_dir / name).final_checkpoint;
        }
        Checkpoint c = read_checkpoint(arm.checkpoint);
        const RunConfig cfg = checkpoint_run_config(c);
        const VelocityNet net(arm.arch);
        GenerationConfig gen = generation_from(cfg);
        const EvalReport rep = evaluate_model(net, c.params, gen, eval_spec_from(cfg));
        if (!full_rep) full_rep = rep;

        const std::size_t params = arch_param_count(arm.arch);
        const double frac = static_cast<double>(params) / static_cast<double>(full_params);
        const double d_adh =
            rep.mean_adherence && full_rep->mean_adherence ? *rep.mean_adherence - *full_rep->mean_adherence : 0.0;
        const double d_ed = rep.mean_energy_distance - full_rep->mean_energy_distance;
        rows.push_back({{"variant", name},
                        {"params", params},
                        {"params_ratio", frac},
                        {"arch", to_json(arm.arch)},
                        {"checkpoint", arm.checkpoint.string()},
                        {"metrics", eval_json(rep)},
                        {"delta_adherence", d_adh},
                        {"delta_energy_distance", d_ed}});
        md << "| " << name << " | " << params << " | " << fmt(frac, 4) << " | " << adherence_cell(rep) << " | "
           << signed_fmt(d_adh) << " | " << fmt(rep.mean_energy_distance) << " | " << signed_fmt(d_ed) << " | "
           << fmt(rep.ratio, 2) << " |\n";
    }
    const auto& cm = arms.back().arch;
    md << "\nCapacity-matched trunk: " << cm.n_hidden_layers << " hidden layers of width " << cm.hidden_dim << ".\n";

    AblationResult res;
    res.report = json{{"matrix", "conditioning"}, {"full_params", full_params}, {"variants", rows}};
    res.markdown = md.str();
    return res;
}

}  // namespace

AblationResult run_ablation(const json& base_config, Matrix matrix, const AblationOptions& options) {
    std::error_code ec;
    std::filesystem::create_directories(options.out_dir, ec);
    if (ec) throw IoError("cannot create '" + options.out_dir.string() + "': " + ec.message());

    AblationResult res;
    switch (matrix) {
        case Matrix::training: res = training_matrix(base_config, options); break;
        case Matrix::inference: res = inference_matrix(base_config, options); break;
        case Matrix::conditioning: res = conditioning_matrix(base_config, options); break;
    }
    res.report_path = options.out_dir / "report.json";
    res.markdown_path = options.out_dir / "report.md";
    write_text(res.report_path, res.report.dump(2) + "\n");
    write_text(res.markdown_path, res.markdown);
    return res;
}

}  // namespace fmlab
