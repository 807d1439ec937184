#include "fmlab/evalsuite.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <limits>

#include "fmlab/errors.hpp"

namespace fmlab {

namespace {

double mean_pair_distance(const Tensor& a, const Tensor& b) {
    const std::size_t d = a.cols();
    const auto x = a.data();
    const auto y = b.data();
    double total = 0.0;
    for (std::size_t i = 0; i < a.rows(); ++i) {
        const double* ai = x.data() + i * d;
        double row = 0.0;
        for (std::size_t j = 0; j < b.rows(); ++j) {
            const double* bj = y.data() + j * d;
            double s = 0.0;
            for (std::size_t k = 0; k < d; ++k) {
                const double r = ai[k] - bj[k];
                s += r * r;
            }
            row += std::sqrt(s);
        }
        total += row;
    }
    return total / (static_cast<double>(a.rows()) * static_cast<double>(b.rows()));
}

}  // namespace

double energy_distance(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2) throw ShapeError("energy_distance expects two sample matrices");
    if (a.cols() != b.cols()) {
        throw ShapeError("energy_distance: dim mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    }
    const double e = 2.0 * mean_pair_distance(a, b) - mean_pair_distance(a, a) - mean_pair_distance(b, b);
    return std::max(0.0, e);
}

double adherence(const Tensor& samples, int label, const GmmSpec& spec) {
    spec.validate();
    if (label < 0 || static_cast<std::size_t>(label) >= spec.n_classes()) {
        throw std::invalid_argument("adherence: label " + std::to_string(label) + " not defined by the spec");
    }
    if (samples.rank() != 2 || samples.cols() != spec.dim) {
        throw ShapeError("adherence: samples " + shape_str(samples.shape()) + " do not match dim " +
                         std::to_string(spec.dim));
    }
    const std::size_t n = samples.rows();
    if (n == 0) throw std::invalid_argument("adherence: no samples");
    std::size_t hits = 0;
    for (std::size_t i = 0; i < n; ++i) {
        if (bayes_classify(spec, samples.row(i)) == label) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(n);
}

GapSummary generalization_gap(const std::vector<std::pair<std::int64_t, double>>& train_curve,
                              const std::vector<std::pair<std::int64_t, double>>& val_curve) {
    if (train_curve.empty() || val_curve.empty()) throw std::invalid_argument("generalization_gap: empty curve");
    auto train = train_curve;
    auto val = val_curve;
    std::sort(train.begin(), train.end());
    std::sort(val.begin(), val.end());

    GapSummary out;
    for (const auto& [step, v] : val) {
        auto it = std::lower_bound(train.begin(), train.end(), std::make_pair(step, -std::numeric_limits<double>::infinity()));
        if (it == train.end() || (it != train.begin() && step - std::prev(it)->first <= it->first - step)) --it;
        out.series.push_back({step, v - it->second});
    }

    const double first = static_cast<double>(out.series.front().step);
    const double last = static_cast<double>(out.series.back().step);
    const double cutoff = last - 0.25 * (last - first);
    double sum = 0.0;
    std::size_t n = 0;
    out.min = std::numeric_limits<double>::infinity();
    out.max = -std::numeric_limits<double>::infinity();
    for (const auto& p : out.series) {
        if (static_cast<double>(p.step) < cutoff) continue;
        sum += p.gap;
        ++n;
        out.min = std::min(out.min, p.gap);
        out.max = std::max(out.max, p.gap);
    }
    out.mean = sum / static_cast<double>(n);
    return out;
}

Tensor reference_samples(const DatasetConfig& data, int label, std::size_t n, Rng& rng) {
    if (label < 0 || static_cast<std::size_t>(label) >= data.n_classes()) {
        throw std::invalid_argument("reference_samples: unknown label " + std::to_string(label));
    }
    if (data.kind == DatasetKind::gmm) return sample_gmm_class(data.gmm, label, n, rng);

    SequenceSpec one = data.sequence;
    one.train_len = one.window;
    one.classes = {data.sequence.classes[static_cast<std::size_t>(label)]};
    return make_sequence_dataset(one, n, rng).x;
}

EvalReport evaluate_samples(const std::map<int, Tensor>& samples, const EvalSpec& spec) {
    if (samples.empty()) throw std::invalid_argument("evaluate_samples: no classes");
    const bool gmm = spec.dataset.kind == DatasetKind::gmm;
    const Rng root(spec.seed);
    EvalReport rep;
    rep.n_per_class = spec.n_per_class;
    double adh_sum = 0.0;
    double adh_min = std::numeric_limits<double>::infinity();
    for (const auto& [label, x] : samples) {
        Rng r1 = root.derive("real1").derive(static_cast<std::uint64_t>(label));
        Rng r2 = root.derive("real2").derive(static_cast<std::uint64_t>(label));
        const Tensor real1 = reference_samples(spec.dataset, label, spec.n_per_class, r1);
        const Tensor real2 = reference_samples(spec.dataset, label, spec.n_per_class, r2);

        ClassEval ce;
        ce.label = label;
        ce.energy_distance = energy_distance(x, real1);
        ce.baseline = energy_distance(real1, real2);
        ce.ratio = ce.baseline > 0.0 ? ce.energy_distance / ce.baseline : std::numeric_limits<double>::infinity();
        if (gmm) {
            ce.adherence = adherence(x, label, spec.dataset.gmm);
            adh_sum += *ce.adherence;
            adh_min = std::min(adh_min, *ce.adherence);
        }
        rep.mean_energy_distance += ce.energy_distance;
        rep.mean_baseline += ce.baseline;
        rep.max_ratio = std::max(rep.max_ratio, ce.ratio);
        rep.classes.push_back(ce);
    }
    const auto k = static_cast<double>(rep.classes.size());
    rep.mean_energy_distance /= k;
    rep.mean_baseline /= k;
    rep.ratio = rep.mean_energy_distance / rep.mean_baseline;
    if (gmm) {
        rep.mean_adherence = adh_sum / k;
        rep.min_adherence = adh_min;
    }
    return rep;
}

EvalReport evaluate_model(const VelocityModel& model, const ModelParams& params, GenerationConfig gen,
                          const EvalSpec& spec) {
    std::map<int, Tensor> samples;
    gen.n_samples = spec.n_per_class;
    for (std::size_t c = 0; c < spec.dataset.n_classes(); ++c) {
        gen.label = static_cast<int>(c);
        samples.emplace(gen.label, euler_generate(model, params, gen).samples);
    }
    return evaluate_samples(samples, spec);
}

nlohmann::json to_json(const EvalReport& r) {
    auto opt = [](const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); };
    nlohmann::json classes = nlohmann::json::array();
    for (const auto& c : r.classes) {
        classes.push_back({{"label", c.label},
                           {"adherence", opt(c.adherence)},
                           {"energy_distance", c.energy_distance},
                           {"baseline", c.baseline},
                           {"ratio", c.ratio}});
    }
    return {{"schema_version", kEvalSchemaVersion},
            {"n_per_class", r.n_per_class},
            {"classes", classes},
            {"mean_adherence", opt(r.mean_adherence)},
            {"min_adherence", opt(r.min_adherence)},
            {"mean_energy_distance", r.mean_energy_distance},
            {"baseline", r.mean_baseline},
            {"ratio", r.ratio},
            {"max_ratio", r.max_ratio}};
}

std::vector<SweepRow> sweep_cfg(const VelocityModel& model, const ModelParams& params,
                                const std::vector<double>& scales, const GenerationConfig& gen, const EvalSpec& spec) {
    if (scales.empty()) throw std::invalid_argument("sweep_cfg: no scales");
    std::vector<SweepRow> rows;
    for (double s : scales) {
        GenerationConfig g = gen;
        g.cfg_scale = s;
        const EvalReport rep = evaluate_model(model, params, g, spec);
        rows.push_back({s, rep.mean_adherence.value_or(std::numeric_limits<double>::quiet_NaN()),
                        rep.mean_energy_distance, spec.n_per_class, gen.seed});
    }
    return rows;
}

std::string format_double(double v) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

std::string sweep_csv(const std::vector<SweepRow>& rows) {
    std::string out = "cfg,adherence,energy_distance,n,seed\n";
    for (const auto& r : rows) {
        out += format_double(r.cfg) + ',' + format_double(r.adherence) + ',' + format_double(r.energy_distance) + ',' +
               std::to_string(r.n) + ',' + std::to_string(r.seed) + '\n';
    }
    return out;
}

}  // namespace fmlab
