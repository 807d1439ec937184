#include "fmlab/runner.hpp"

#include <chrono>
#include <ctime>
#include <fstream>
#include <ostream>

#include "fmlab/errors.hpp"

namespace fmlab {

namespace {

json rng_json(const Rng& r) { return json::array({r.key(), r.counter()}); }

void write_text(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
    out << text;
    if (!out) throw IoError("write failed for '" + path.string() + "'");
}

}  // namespace

DataBundle build_data(const RunConfig& cfg) {
    cfg.validate();
    const Rng root(cfg.seed);
    Rng gen = root.derive("dataset");
    Rng split = root.derive("split");
    const auto& ds = cfg.dataset;
    const LabeledSet all = ds.kind == DatasetKind::gmm ? make_gmm_dataset(ds.gmm, ds.n_per_class, gen)
                                                       : make_sequence_dataset(ds.sequence, ds.n_per_class, gen);
    auto [train, val] = split_train_val(all, ds.val_frac, split);

    DataBundle b;
    const std::uint64_t val_seed = root.derive("validation").key();
    const auto& ts = cfg.timesteps;
    if (ds.kind == DatasetKind::gmm) {
        b.source = std::make_unique<DatasetBatchSource>(train, ds.n_classes());
        b.validation = std::make_unique<ValidationSet>(val, val_seed, ts.fallback_mu, ts.fallback_sigma);
    } else {
        const auto& s = ds.sequence;
        const CropMode mode = cfg.training.random_crop ? CropMode::random : CropMode::center;
        b.source = std::make_unique<DatasetBatchSource>(train, ds.n_classes(), s.train_len, s.channels, s.window, mode);
        b.validation = std::make_unique<ValidationSet>(val, val_seed, s.train_len, s.channels, s.window,
                                                       ts.fallback_mu, ts.fallback_sigma);
    }
    b.train = std::move(train);
    b.val = std::move(val);
    return b;
}

std::filesystem::path fresh_run_dir(const std::filesystem::path& root, const std::string& run_id) {
    const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    char stamp[32];
    std::strftime(stamp, sizeof stamp, "%Y%m%dT%H%M%SZ", &tm);
    const std::string base = run_id + "-" + stamp;
    std::filesystem::path dir = root / base;
    for (int k = 1; std::filesystem::exists(dir); ++k) dir = root / (base + "-" + std::to_string(k));
    return dir;
}

json to_json(const MetricsRecord& r) {
    return json{{"step", r.step},
                {"train_loss", r.train_loss},
                {"val_loss", r.val_loss ? json(*r.val_loss) : json(nullptr)},
                {"lr", r.lr},
                {"clamp_hits", r.clamp_hits},
                {"sampler_mode", r.sampler_mode},
                {"bin_entropy", r.bin_entropy}};
}

MetricsRecord metrics_from_json(const json& j) {
    MetricsRecord r;
    r.step = j.at("step").get<std::int64_t>();
    r.train_loss = j.at("train_loss").get<double>();
    if (!j.at("val_loss").is_null()) r.val_loss = j.at("val_loss").get<double>();
    r.lr = j.at("lr").get<double>();
    r.clamp_hits = j.at("clamp_hits").get<std::int64_t>();
    r.sampler_mode = j.at("sampler_mode").get<std::string>();
    r.bin_entropy = j.at("bin_entropy").get<double>();
    return r;
}

std::vector<MetricsRecord> read_metrics(const std::filesystem::path& jsonl) {
    std::ifstream in(jsonl);
    if (!in) throw IoError("cannot open metrics log '" + jsonl.string() + "'");
    std::vector<MetricsRecord> out;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        try {
            out.push_back(metrics_from_json(json::parse(line)));
        } catch (const json::exception& e) {
            throw IoError("malformed metrics line in '" + jsonl.string() + "': " + e.what());
        }
    }
    return out;
}

TrainOutcome run_training(const RunConfig& cfg, const std::filesystem::path& dir, std::ostream* progress) {
    cfg.validate();
    const auto t0 = std::chrono::steady_clock::now();
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw IoError("cannot create run directory '" + dir.string() + "': " + ec.message());
    if (std::filesystem::exists(dir / kMetricsFile)) {
        throw IoError("run directory '" + dir.string() + "' already holds a run");
    }

    const json resolved = to_json(cfg);
    write_text(dir / kResolvedConfig, resolved.dump(2) + "\n");

    DataBundle data = build_data(cfg);
    const VelocityNet model(cfg.arch);
    Rng init = Rng(cfg.seed).derive("init");
    TrainState state;
    state.params = build_model(cfg.arch, init);
    state.opt = OptimizerState::init(state.params, cfg.training.adam);
    state.sampler = TimestepSamplerState::fresh(cfg.timesteps);
    state.rng = TrainStreams::from_seed(cfg.seed);

    SnapshotStore store(dir);
    std::ofstream log(dir / kMetricsFile, std::ios::binary | std::ios::trunc);
    if (!log) throw IoError("cannot open metrics log in '" + dir.string() + "'");

    auto checkpoint = [&]() {
        Checkpoint c;
        c.step = state.step;
        c.params = state.params;
        c.opt_state = state.opt;
        c.sampler_state = state.sampler;
        c.arch = cfg.arch;
        c.run_id = cfg.run_id;
        c.extra = json{{"config", resolved},
                       {"rng",
                        {{"data", rng_json(state.rng.data)},
                         {"dropout", rng_json(state.rng.dropout)},
                         {"time", rng_json(state.rng.time)},
                         {"noise", rng_json(state.rng.noise)}}}};
        return c;
    };

    TrainOutcome out;
    out.dir = dir;
    const double clamp = cfg.training.clamp;
    while (state.step < cfg.training.steps) {
        MetricsRecord rec = training_step(model, state, *data.source, cfg.training);
        if (rec.step % cfg.eval.every == 0 || rec.step == cfg.training.steps) {
            rec.val_loss = data.validation->loss(model, state.params, clamp);
        }
        log << to_json(rec).dump() << '\n';
        if (!log) throw IoError("write failed for metrics log in '" + dir.string() + "'");
        if (state.step % cfg.snapshots.every == 0) record_snapshot(store, checkpoint(), cfg.snapshots.every);
        if (progress && rec.val_loss) {
            *progress << "step " << rec.step << "  train " << rec.train_loss << "  val " << *rec.val_loss
                      << "  lr " << rec.lr << "  " << rec.sampler_mode << '\n';
        }
        out.records.push_back(std::move(rec));
    }
    log.close();
    out.final_checkpoint = dir / kFinalCheckpoint;
    write_checkpoint(checkpoint(), out.final_checkpoint);
    out.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return out;
}

std::vector<std::pair<std::int64_t, double>> val_curve(const std::vector<MetricsRecord>& records) {
    std::vector<std::pair<std::int64_t, double>> out;
    for (const auto& r : records) {
        if (r.val_loss) out.emplace_back(r.step, *r.val_loss);
    }
    return out;
}

std::vector<std::pair<std::int64_t, double>> train_curve(const std::vector<MetricsRecord>& records) {
    std::vector<std::pair<std::int64_t, double>> out;
    for (const auto& r : records) out.emplace_back(r.step, r.train_loss);
    return out;
}

RunConfig checkpoint_run_config(const Checkpoint& c) {
    if (!c.extra.contains("config")) throw ConfigError("checkpoint carries no run config");
    return run_config_from_json(c.extra.at("config"));
}

EmaResult write_ema(const std::filesystem::path& run_dir, std::int64_t from_step, std::int64_t to_step) {
    if (from_step > to_step) throw ConfigError("ema: from-step must not exceed to-step");
    const SnapshotStore store(run_dir);
    AveragedParams avg = posthoc_average(store, from_step, to_step);

    Checkpoint base = read_checkpoint(store.directory() / store.index().front().second);
    Checkpoint c;
    c.step = to_step;
    c.params = std::move(avg.params);
    c.arch = avg.arch;
    c.run_id = base.run_id;
    c.extra = json{{"ema_window", {from_step, to_step}}, {"ema_steps", avg.steps}};
    if (base.extra.contains("config")) c.extra["config"] = base.extra.at("config");

    EmaResult res;
    res.path = run_dir / ("ema_" + std::to_string(from_step) + "_" + std::to_string(to_step) + ".fmc");
    res.from_step = from_step;
    res.to_step = to_step;
    res.steps = std::move(avg.steps);
    write_checkpoint(c, res.path);
    return res;
}

EmaResult write_ema_auto(const std::filesystem::path& run_dir) {
    const RunConfig cfg = load_run_config(run_dir / kResolvedConfig);
    const auto curve = val_curve(read_metrics(run_dir / kMetricsFile));
    if (curve.empty()) throw IoError("run '" + run_dir.string() + "' logged no validation loss");
    const StableWindow w = detect_stable_window(curve, cfg.snapshots.rel_tol, cfg.snapshots.min_frac);
    EmaResult res = write_ema(run_dir, w.from_step, w.to_step);
    res.auto_fallback = w.fallback;
    return res;
}

}  // namespace fmlab
