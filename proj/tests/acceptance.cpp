// Acceptance checks. Prints one PASS/FAIL line per criterion.
//   fmlab_acceptance [criterion ...]   (default: all of 1..9)

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iostream>
#include <iterator>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "fmlab/ablate.hpp"
#include "fmlab/config.hpp"
#include "fmlab/errors.hpp"
#include "fmlab/evalsuite.hpp"
#include "fmlab/flowmatch.hpp"
#include "fmlab/gradcheck.hpp"
#include "fmlab/layers.hpp"
#include "fmlab/optim.hpp"
#include "fmlab/runner.hpp"
#include "fmlab/sampler.hpp"
#include "fmlab/snapshots.hpp"
#include "fmlab/timesteps.hpp"
#include "fmlab/velocitynet.hpp"
#include "support.hpp"

using namespace fmlab;
using fmlab::testing::random_tensor;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

// Collects sub-checks; the criterion passes iff all of them do.
class Verdict {
public:
    void check(bool ok, const std::string& what) {
        if (!ok) ok_ = false;
        notes_.push_back((ok ? "ok   " : "FAIL ") + what);
    }
    void info(const std::string& what) { notes_.push_back("     " + what); }
    bool ok() const { return ok_; }
    const std::vector<std::string>& notes() const { return notes_; }

private:
    bool ok_ = true;
    std::vector<std::string> notes_;
};

std::string num(double v, int prec = 4) {
    std::ostringstream s;
    s.precision(prec);
    s << v;
    return s.str();
}

double projected(const Tensor& out, const Tensor& proj) {
    double s = 0;
    for (std::size_t i = 0; i < out.numel(); ++i) s += out[i] * proj[i];
    return s;
}

// ---------------------------------------------------------------- 1

void gradient_suite(Verdict& v) {
    const auto t0 = Clock::now();
    const double tol = 1e-5;
    GradcheckOptions opts;  // 100 probes
    Rng rng(101);
    auto record = [&](const std::string& name, const GradcheckReport& r) {
        v.check(r.max_rel_error < tol, name + ": max rel err " + num(r.max_rel_error, 3) + " (" + r.worst_param + ")");
    };

    {
        ModelParams p;
        p.add("w", random_tensor({6, 5}, rng));
        p.add("b", random_tensor({6}, rng));
        p.add("x", random_tensor({4, 5}, rng));
        const Tensor proj = random_tensor({4, 6}, rng);
        record("linear", fd_gradcheck_report(p, [&](const ModelParams& q, ModelParams* g) {
                   LinearCache c;
                   const Tensor y = linear_forward(q.at("w"), q.at("b"), q.at("x"), g ? &c : nullptr);
                   if (g) {
                       const auto lg = linear_backward(c, proj);
                       g->at("w") += lg.weights;
                       g->at("b") += lg.bias;
                       g->at("x") += lg.input;
                   }
                   return projected(y, proj);
               }, opts));
    }
    for (Activation act : {Activation::silu, Activation::tanh}) {
        ModelParams p;
        p.add("x", random_tensor({8, 6}, rng, 2.0));
        const Tensor proj = random_tensor({8, 6}, rng);
        record(std::string(activation_name(act)), fd_gradcheck_report(p, [&](const ModelParams& q, ModelParams* g) {
                   ActivationCache c;
                   const Tensor y = activation_forward(act, q.at("x"), g ? &c : nullptr);
                   if (g) g->at("x") += activation_backward(c, proj);
                   return projected(y, proj);
               }, opts));
    }
    {
        ModelParams p;
        p.add("x", random_tensor({5, 4}, rng));
        p.add("scale", random_tensor({5, 4}, rng));
        p.add("shift", random_tensor({5, 4}, rng));
        const Tensor proj = random_tensor({5, 4}, rng);
        record("film", fd_gradcheck_report(p, [&](const ModelParams& q, ModelParams* g) {
                   FilmCache c;
                   const Tensor y = film_forward(q.at("x"), q.at("scale"), q.at("shift"), g ? &c : nullptr);
                   if (g) {
                       const auto fg = film_backward(c, proj);
                       g->at("x") += fg.input;
                       g->at("scale") += fg.scale;
                       g->at("shift") += fg.shift;
                   }
                   return projected(y, proj);
               }, opts));
    }
    {
        ModelParams p;
        p.add("table", random_tensor({5, 6}, rng));
        const std::vector<int> ids{0, 4, 4, 2, 1, 3, 0};
        const Tensor proj = random_tensor({ids.size(), 6}, rng);
        record("embedding", fd_gradcheck_report(p, [&](const ModelParams& q, ModelParams* g) {
                   EmbeddingCache c;
                   const Tensor y = embedding_forward(q.at("table"), ids, g ? &c : nullptr);
                   if (g) g->at("table") += embedding_backward(c, proj);
                   return projected(y, proj);
               }, opts));
    }
    {
        ModelParams p;
        p.add("t", Tensor::vector({0.013, 0.2, 0.5, 0.77, 0.999}));
        const Tensor proj = random_tensor({5, 8}, rng);
        GradcheckOptions fo = opts;
        fo.eps = 1e-8;  // frequencies reach 1000
        record("fourier", fd_gradcheck_report(p, [&](const ModelParams& q, ModelParams* g) {
                   const auto t = q.at("t").data();
                   const Tensor y = fourier_features(t, 8);
                   if (g) {
                       const auto dt = fourier_features_backward(t, proj);
                       for (std::size_t i = 0; i < dt.size(); ++i) g->at("t")[i] += dt[i];
                   }
                   return projected(y, proj);
               }, fo));
    }

    // Assembled network against a random projection of its output. The
    // asserted checks use a narrow net so that f(x +- eps) is not dominated
    // by rounding noise at eps = 1e-6.
    auto net_check = [&](const ArchConfig& a, std::uint64_t seed, const GradcheckOptions& o) {
        const VelocityNet n(a);
        Rng init(seed);
        ModelParams p = build_model(a, init);
        for (auto& [name, tensor] : p) {
            if (name.ends_with("bias")) tensor = random_tensor(tensor.shape(), init, 0.1);
        }
        p.add("input.x", random_tensor({4, 2}, init));
        const std::vector<double> t{0.05, 0.3, 0.6, 0.95};
        const std::vector<int> y{0, 4, 2, 3};
        const Tensor proj = random_tensor({4, 2}, init);
        return fd_gradcheck_report(p, [&](const ModelParams& q, ModelParams* g) {
            std::unique_ptr<ForwardCache> cache;
            const Tensor out = n.forward(q, q.at("input.x"), t, y, {}, g ? &cache : nullptr);
            if (g) g->at("input.x") += n.backward(q, *cache, proj, *g);
            return projected(out, proj);
        }, o);
    };
    for (bool aux : {true, false}) {
        for (Activation act : {Activation::silu, Activation::tanh}) {
            ArchConfig a = testing::small_arch(aux);
            a.activation = act;
            record(std::string("velocity net (") + (aux ? "aux" : "no aux") + ", " +
                       std::string(activation_name(act)) + ")",
                   net_check(a, 13, opts));
        }
    }
    {
        GradcheckOptions wide = opts;
        const auto r6 = net_check(ArchConfig{}, 3, wide);
        wide.eps = 1e-5;
        const auto r5 = net_check(ArchConfig{}, 3, wide);
        v.info("default-width net, output projection: max rel err " + num(r6.max_rel_error, 3) + " at eps 1e-6, " +
               num(r5.max_rel_error, 3) + " at eps 1e-5 (" + r6.worst_param + ": analytic " + num(r6.analytic, 6) +
               ", numeric " + num(r6.numeric, 6) + ")");
    }

    // Weighted training loss over two micro-batches with dropout labels,
    // Min-SNR and the clamp.
    auto composition_check = [&](const ArchConfig& arch, std::uint64_t seed, const GradcheckOptions& o) {
        const VelocityNet net(arch);
        Rng init(seed);
        ModelParams params = build_model(arch, init);
        for (auto& [name, tensor] : params) {
            if (name.ends_with("bias")) tensor = random_tensor(tensor.shape(), init, 0.1);
        }
        Rng drng(5);
        const auto data = make_gmm_dataset(GmmSpec::four_corners(), 8, drng);
        std::vector<FlowBatch> micro;
        for (std::size_t m = 0; m < 2; ++m) {
            FlowBatch b;
            const auto xs = data.x.data();
            b.x0 = Tensor({8, 2}, std::vector<double>(xs.begin() + 16 * m, xs.begin() + 16 * m + 16));
            b.eps = random_tensor({8, 2}, init);
            b.t = sample_logit_normal(init, -0.4, 1.0, 8);
            b.t[0] = 0.03;
            std::vector<int> y(data.labels.begin() + 8 * m, data.labels.begin() + 8 * m + 8);
            b.labels = apply_cfg_dropout(y, 0.3, arch.null_label(), init);
            micro.push_back(std::move(b));
        }
        const LossSettings ls;
        return fd_gradcheck_report(params, [&](const ModelParams& q, ModelParams* g) {
            double total = 0;
            for (std::size_t m = 0; m < micro.size(); ++m) {
                total += flow_matching_loss(net, q, micro[m], ls, g, 1.0 / 16.0, m * 8).weighted_mean * 0.5;
            }
            return total;
        }, o);
    };
    for (bool aux : {true, false}) {
        record(std::string("training-step composition (") + (aux ? "aux" : "no aux") + ")",
               composition_check(testing::small_arch(aux), 17, opts));
    }
    {
        GradcheckOptions wide = opts;
        const auto r6 = composition_check(ArchConfig{}, 3, wide);
        wide.eps = 1e-5;
        const auto r5 = composition_check(ArchConfig{}, 3, wide);
        v.info("default-width training-step composition: max rel err " + num(r6.max_rel_error, 3) +
               " at eps 1e-6, " + num(r5.max_rel_error, 3) + " at eps 1e-5 (" + r6.worst_param + ")");
    }
    const double secs = seconds_since(t0);
    v.check(secs < 10.0, "runtime " + num(secs, 3) + " s < 10 s");
}

// ---------------------------------------------------------------- 2

void formula_exactness(Verdict& v) {
    auto near = [](double a, double b) { return std::abs(a - b) <= 1e-12; };
    v.check(near(snr(0.5), 1.0), "snr(0.5) = " + num(snr(0.5), 17));
    v.check(near(snr(1.0 / 6.0), 25.0), "snr(1/6) = " + num(snr(1.0 / 6.0), 17));
    v.check(near(minsnr_weight(1.0 / 6.0, 5.0), 0.2), "minsnr_weight(1/6, 5) = " + num(minsnr_weight(1.0 / 6.0, 5.0), 17));
    v.check(near(minsnr_weight(0.5, 5.0), 1.0), "minsnr_weight(0.5, 5) = " + num(minsnr_weight(0.5, 5.0), 17));
    v.check(near(minsnr_weight(1.0, 5.0), 1.0), "minsnr_weight(1, 5) = " + num(minsnr_weight(1.0, 5.0), 17));
    const double base = 3e-4;
    const double a = lr_at(0, 20000, base, 200), b = lr_at(200, 20000, base, 200), c = lr_at(20000, 20000, base, 200);
    v.check(a == 0.0 && b == base && c == 0.0, "lr_at endpoints {" + num(a) + ", " + num(b) + ", " + num(c) + "}");
}

// ---------------------------------------------------------------- 3

void timestep_sampler(Verdict& v) {
    const std::size_t n = 100000;
    const TimestepSettings settings;

    auto logit_moments = [](const std::vector<double>& t) {
        double s = 0, s2 = 0;
        for (double x : t) {
            const double z = std::log(x / (1 - x));
            s += z;
            s2 += z * z;
        }
        const double m = s / static_cast<double>(t.size());
        return std::make_pair(m, std::sqrt(s2 / static_cast<double>(t.size()) - m * m));
    };
    Rng r1(2024);
    const auto [m1, s1] = logit_moments(sample_logit_normal(r1, settings.fallback_mu, settings.fallback_sigma, n));
    v.check(std::abs(m1 + 0.4) <= 0.02 && std::abs(s1 - 1.0) <= 0.02,
            "(a) logit-normal logit mean " + num(m1) + ", std " + num(s1) + " vs (-0.4, 1.0)");
    TimestepSettings pure = settings;
    pure.fallback_mix = 0.0;
    Rng r2(2025);
    const auto [m2, s2] = logit_moments(sample_adaptive(TimestepSamplerState::fresh(pure), r2, n));
    v.check(std::abs(m2 + 0.4) <= 0.02 && std::abs(s2 - 1.0) <= 0.02,
            "(a) fallback sampler with no uniform mix: mean " + num(m2) + ", std " + num(s2));
    Rng r3(2026);
    const auto [m3, s3] = logit_moments(sample_adaptive(TimestepSamplerState::fresh(settings), r3, n));
    v.info("(a) default fallback (mix " + num(settings.fallback_mix) + " uniform): mean " + num(m3) + ", std " +
           num(s3) + ", not compared");

    // (b) active mode against the analytic softmax mixture.
    auto st = TimestepSamplerState::fresh(settings);
    Rng er(8);
    for (std::size_t i = 0; i < st.ema.size(); ++i) {
        st.counts[i] = settings.min_count;
        st.ema[i] = 0.5 + 2.0 * er.uniform();
    }
    double z = 0;
    for (double e : st.ema) z += std::exp(e / settings.temperature);
    std::vector<double> analytic(st.ema.size());
    for (std::size_t i = 0; i < analytic.size(); ++i) {
        analytic[i] = (1 - settings.uniform_floor) * std::exp(st.ema[i] / settings.temperature) / z +
                      settings.uniform_floor / static_cast<double>(analytic.size());
    }
    Rng r4(77);
    std::vector<double> freq(analytic.size(), 0.0);
    for (double t : sample_adaptive(st, r4, n)) freq[bin_index(t, analytic.size())] += 1.0 / static_cast<double>(n);
    double worst = 0;
    for (std::size_t i = 0; i < freq.size(); ++i) worst = std::max(worst, std::abs(freq[i] - analytic[i]));
    v.check(worst <= 0.01, "(b) active-mode bin frequencies, inf-norm " + num(worst, 3) + " <= 0.01");

    // (c) the switch happens on the update that brings the last bin to min_count.
    auto sw = TimestepSamplerState::fresh(settings);
    bool early = false;
    for (std::size_t i = 0; i < sw.ema.size(); ++i) {
        const std::int64_t hits = i == 63 ? settings.min_count - 1 : settings.min_count;
        for (std::int64_t k = 0; k < hits; ++k) {
            update_bin_ema(sw, (static_cast<double>(i) + 0.5) / 100.0, 1.0);
            early = early || sw.active();
        }
    }
    const bool before = sw.active();
    update_bin_ema(sw, 0.635, 1.0);
    v.check(!early && !before && sw.active(), "(c) inactive with one bin at min_count - 1, active at min_count");
}

// ---------------------------------------------------------------- 4

void posthoc_ema(Verdict& v) {
    testing::TempDir dir("accept-ema");
    const ArchConfig arch = testing::small_arch();
    Rng rng(4);
    const ModelParams a = build_model(arch, rng), b = build_model(arch, rng);
    auto ckpt = [&](std::int64_t step, const ModelParams& p) {
        Checkpoint c;
        c.step = step;
        c.params = p;
        c.arch = arch;
        return c;
    };

    SnapshotStore dup(dir / "dup");
    for (std::int64_t s : {100, 200, 300}) dup.put(ckpt(s, a));
    v.check(posthoc_average(dup, 100, 300).params.bit_equal(a), "identity on three duplicate snapshots");

    SnapshotStore pair(dir / "pair");
    pair.put(ckpt(100, a));
    pair.put(ckpt(200, b));
    const ModelParams mid = posthoc_average(pair, 100, 200).params;
    double mid_err = 0;
    for (const auto& [name, t] : mid) {
        for (std::size_t i = 0; i < t.numel(); ++i) mid_err = std::max(mid_err, std::abs(t[i] - (a.at(name)[i] + b.at(name)[i]) / 2));
    }
    v.check(mid_err <= 1e-15, "midpoint on a pair, max err " + num(mid_err, 3));

    const double alpha = -1.75;
    ModelParams sa = a, sb = b;
    sa *= alpha;
    sb *= alpha;
    SnapshotStore scaled(dir / "scaled");
    scaled.put(ckpt(100, sa));
    scaled.put(ckpt(200, sb));
    const ModelParams avg_scaled = posthoc_average(scaled, 100, 200).params;
    double lin_err = 0;
    for (const auto& [name, t] : avg_scaled) {
        for (std::size_t i = 0; i < t.numel(); ++i) {
            lin_err = std::max(lin_err, std::abs(t[i] - alpha * mid.at(name)[i]) / std::max(1.0, std::abs(t[i])));
        }
    }
    v.check(lin_err <= 1e-14, "linearity under scaling by " + num(alpha) + ", max rel err " + num(lin_err, 3));

    Checkpoint full = ckpt(1234, a);
    full.opt_state = OptimizerState::init(a, AdamWHyper{});
    full.opt_state->m = b;
    full.sampler_state = TimestepSamplerState::fresh(TimestepSettings{});
    full.sampler_state->ema[5] = 0.1 + 0.2;
    write_checkpoint(full, dir / "full.fmc");
    const Checkpoint back = read_checkpoint(dir / "full.fmc");
    const bool same = back.step == 1234 && back.params.bit_equal(a) && back.opt_state &&
                      back.opt_state->m.bit_equal(b) && back.sampler_state &&
                      back.sampler_state->ema == full.sampler_state->ema;
    v.check(same && encode_checkpoint(back) == encode_checkpoint(full), "checkpoint round trip bit-exact");

    auto bytes = encode_checkpoint(full);
    bytes[0] = 'X';
    bool rejected = false;
    try {
        decode_checkpoint(bytes);
    } catch (const CheckpointError& e) {
        rejected = e.kind() == CheckpointErrorKind::bad_magic;
    }
    v.check(rejected, "corrupted magic is rejected");
}

// ---------------------------------------------------------------- 5

void sampler(Verdict& v) {
    GenerationConfig g;
    g.n_samples = 64;
    g.label = 2;
    g.seed = 11;

    const testing::ConstantField constant(2, -1.3);
    double const_err = 0;
    for (std::size_t steps : {1, 10, 100}) {
        g.steps = steps;
        const Tensor x1 = initial_noise(g.n_samples, 2, g.seed, g.label);
        const Tensor x0 = euler_generate(constant, {}, g).samples;
        for (std::size_t i = 0; i < x0.numel(); ++i) const_err = std::max(const_err, std::abs(x0[i] - (x1[i] + 1.3)));
    }
    v.check(const_err < 1e-12, "constant field: max |error| " + num(const_err, 3));

    const testing::LinearField linear(2, 1.0, 2.0);
    auto lin_error = [&](std::size_t steps) {
        GenerationConfig h = g;
        h.steps = steps;
        const Tensor x1 = initial_noise(h.n_samples, 2, h.seed, h.label);
        const Tensor x0 = euler_generate(linear, {}, h).samples;
        double e = 0;
        for (std::size_t i = 0; i < x0.numel(); ++i) e = std::max(e, std::abs(x0[i] - std::exp(1.0) * x1[i]));
        return e;
    };
    const double ratio = lin_error(50) / lin_error(100);
    v.check(ratio >= 1.8 && ratio <= 2.2, "linear field: error ratio 50 -> 100 steps " + num(ratio));

    g.steps = 100;
    g.cfg_scale = 1.0;
    const auto s1 = euler_generate(linear, {}, g);
    GenerationConfig cond = g;
    cond.t_lo = cond.t_hi = 0.0;  // no grid point reaches t = 0
    v.check(s1.samples.bit_equal(euler_generate(linear, {}, cond).samples) && s1.uncond_evals == 0,
            "CFG s=1 bit-identical to the conditional sampler");

    GenerationConfig full = g;
    full.cfg_scale = 4.0;
    full.t_lo = 0.0;
    full.t_hi = 1.0;
    Tensor x = initial_noise(full.n_samples, 2, full.seed, full.label);
    const std::vector<int> c(full.n_samples, full.label), u(full.n_samples, linear.null_label());
    for (std::size_t k = full.steps; k >= 1; --k) {
        const std::vector<double> t(full.n_samples, static_cast<double>(k) / 100.0);
        const Tensor vc = linear.forward({}, x, t, c, full.forward);
        const Tensor vu = linear.forward({}, x, t, u, full.forward);
        for (std::size_t i = 0; i < x.numel(); ++i) x[i] -= 0.01 * (vu[i] + 4.0 * (vc[i] - vu[i]));
    }
    v.check(euler_generate(linear, {}, full).samples.bit_equal(x), "interval [0,1] identical to guidance everywhere");

    GenerationConfig gi = g;
    gi.cfg_scale = 3.0;
    std::size_t expected = 0;
    for (std::size_t k = 1; k <= gi.steps; ++k) {
        const double t = static_cast<double>(k) / static_cast<double>(gi.steps);
        if (t >= gi.t_lo && t <= gi.t_hi) ++expected;
    }
    const auto r = euler_generate(linear, {}, gi);
    v.check(r.uncond_evals == expected && r.cond_evals == gi.steps,
            "unconditional forwards " + std::to_string(r.uncond_evals) + " = in-interval steps " +
                std::to_string(expected) + " of " + std::to_string(gi.steps));
}

// ---------------------------------------------------------------- 6

void cfg_dropout(Verdict& v) {
    const std::size_t n = 10000;
    const double p = 0.15;
    Rng rng = TrainStreams::from_seed(1).dropout;
    std::vector<int> labels(n);
    Rng lr(2);
    for (auto& l : labels) l = static_cast<int>(lr.below(4));
    const auto out = apply_cfg_dropout(labels, p, 4, rng);
    const double nulls = static_cast<double>(std::count(out.begin(), out.end(), 4));
    const double sigma = std::sqrt(n * p * (1 - p));
    v.check(std::abs(nulls - n * p) <= 3 * sigma, "NULL fraction " + num(nulls / n) + " vs 0.15 +- " + num(3 * sigma / n));
}

// ---------------------------------------------------------------- 7

void end_to_end(Verdict& v) {
    RunConfig cfg = load_run_config(std::filesystem::path(FMLAB_SOURCE_DIR) / "configs" / "gmm_default.json");
    v.check(cfg.training.steps <= 20000, "training steps " + std::to_string(cfg.training.steps) + " <= 20000");

    // Baseline b per class, from two independent real draws, before training.
    const std::size_t n = cfg.eval.n_per_class;
    std::vector<double> b(cfg.dataset.n_classes());
    for (std::size_t c = 0; c < b.size(); ++c) {
        const int label = static_cast<int>(c);
        Rng r1 = Rng(cfg.eval.seed).derive("real1").derive(static_cast<std::uint64_t>(label));
        Rng r2 = Rng(cfg.eval.seed).derive("real2").derive(static_cast<std::uint64_t>(label));
        b[c] = energy_distance(reference_samples(cfg.dataset, label, n, r1), reference_samples(cfg.dataset, label, n, r2));
        v.info("class " + std::to_string(c) + ": b = " + num(b[c], 3) + " (n = " + std::to_string(n) + ")");
    }

    testing::TempDir dir("accept-e2e");
    const auto t0 = Clock::now();
    const TrainOutcome run = run_training(cfg, dir / "run");
    const double train_secs = seconds_since(t0);

    const Checkpoint ckpt = read_checkpoint(run.final_checkpoint);
    const VelocityNet net(ckpt.arch);
    GenerationConfig gen;
    gen.steps = cfg.generation.steps;
    gen.t_lo = cfg.generation.t_lo;
    gen.t_hi = cfg.generation.t_hi;
    gen.cfg_scale = 3.0;
    gen.seed = cfg.eval.seed;
    const EvalReport rep = evaluate_model(net, ckpt.params, gen, EvalSpec{cfg.dataset, n, cfg.eval.seed});
    const double total_secs = seconds_since(t0);
    v.check(total_secs < 600.0, "CPU time " + num(train_secs, 4) + " s training, " + num(total_secs, 4) +
                                    " s with evaluation, < 600 s");

    for (const auto& c : rep.classes) {
        const double bc = b[static_cast<std::size_t>(c.label)];
        v.check(c.adherence && *c.adherence >= 0.95,
                "class " + std::to_string(c.label) + ": adherence " + num(c.adherence.value_or(0.0)) + " >= 0.95");
        v.check(c.energy_distance <= 3 * bc, "class " + std::to_string(c.label) + ": ED " + num(c.energy_distance, 3) +
                                                 " <= 3b = " + num(3 * bc, 3) + " (ED/b " +
                                                 num(c.energy_distance / bc, 3) + ")");
    }

    // Same protocol with the exact conditional velocity of the data law.
    const testing::GmmOracleField oracle(cfg.dataset.gmm);
    const EvalReport exact = evaluate_model(oracle, {}, gen, EvalSpec{cfg.dataset, n, cfg.eval.seed});
    GenerationConfig plain = gen;
    plain.cfg_scale = 1.0;
    const EvalReport exact1 = evaluate_model(oracle, {}, plain, EvalSpec{cfg.dataset, n, cfg.eval.seed});
    const EvalReport model1 = evaluate_model(net, ckpt.params, plain, EvalSpec{cfg.dataset, n, cfg.eval.seed});
    v.info("reference: exact velocity field at CFG 3: ED/b per class max " + num(exact.max_ratio, 3) +
           ", mean-ED ratio " + num(exact.ratio, 3) + ", min adherence " + num(exact.min_adherence.value_or(0)));
    v.info("reference: exact velocity field at CFG 1: ED/b max " + num(exact1.max_ratio, 3) + "; trained model at CFG 1: ED/b max " +
           num(model1.max_ratio, 3) + ", min adherence " + num(model1.min_adherence.value_or(0)));
}

// ---------------------------------------------------------------- 8

json ablation_base(std::int64_t steps) {
    RunConfig c = load_run_config(std::filesystem::path(FMLAB_SOURCE_DIR) / "configs" / "gmm_default.json");
    c.training.steps = steps;
    c.training.warmup = 20;
    c.snapshots.every = steps / 5;
    c.eval.every = steps / 10;
    c.eval.n_per_class = 200;
    return to_json(c);
}

void ablation(Verdict& v) {
    testing::TempDir dir("accept-ablate");
    const json base = ablation_base(300);

    const auto tr = run_ablation(base, Matrix::training, {dir / "training", std::nullopt, nullptr});
    std::vector<std::string> names;
    for (const auto& a : tr.report.at("arms")) names.push_back(a.at("arm").get<std::string>());
    const std::vector<std::string> expected{"baseline", "cfg_dropout_0.05", "cfg_dropout_0.30", "min_snr_off",
                                            "adaptive_off", "crop_off"};
    v.check(names == expected, "training matrix arms: " + json(names).dump());
    const auto steps = tr.report.at("steps").get<std::vector<std::int64_t>>();
    bool aligned = !steps.empty();
    for (const auto& a : tr.report.at("arms")) {
        const auto& rows = a.at("step_aligned");
        aligned = aligned && rows.size() == steps.size();
        for (std::size_t i = 0; aligned && i < steps.size(); ++i) {
            aligned = rows[i].at("step") == steps[i] && rows[i].contains("delta");
        }
        aligned = aligned && a.contains("delta_final") && a.contains("delta_tail_mean");
    }
    v.check(aligned, "step-aligned delta columns at " + std::to_string(steps.size()) + " common steps in every arm");
    v.check(std::filesystem::exists(tr.markdown_path), "comparison document " + tr.markdown_path.filename().string());

    const auto inf = run_ablation(base, Matrix::inference, {dir / "inference", std::nullopt, nullptr});
    bool shared = true;
    std::size_t sampler_arms = 0, ema_arms = 0;
    for (const auto& a : inf.report.at("arms")) {
        shared = shared && a.at("source_run") == inf.report.at("arms")[0].at("source_run");
        if (a.at("arm").get<std::string>().rfind("ema_", 0) == 0) {
            ++ema_arms;
        } else {
            ++sampler_arms;
            shared = shared && a.at("checkpoint_digest") == inf.report.at("checkpoint_digest");
        }
    }
    v.check(shared && sampler_arms == 4, "inference matrix: " + std::to_string(sampler_arms) +
                                             " sampler arms load checkpoint digest " +
                                             inf.report.at("checkpoint_digest").get<std::string>() + ", " +
                                             std::to_string(ema_arms) + " EMA arms average the same run");
    for (const auto& a : inf.report.at("arms")) {
        v.info("  " + a.at("arm").get<std::string>() + ": delta adherence " +
               num(a.at("delta_adherence").get<double>(), 3) + ", delta ED " +
               num(a.at("delta_energy_distance").get<double>(), 3));
    }

    const auto cond = run_ablation(ablation_base(100), Matrix::conditioning, {dir / "conditioning", std::nullopt, nullptr});
    const auto& variants = cond.report.at("variants");
    double ratio = 0;
    for (const auto& row : variants) {
        if (row.at("variant") == "capacity_matched") ratio = row.at("params_ratio").get<double>();
        v.info("  " + row.at("variant").get<std::string>() + ": " + std::to_string(row.at("params").get<std::size_t>()) +
               " params");
    }
    v.check(std::abs(ratio - 1.0) <= 0.02, "capacity-matched params / full = " + num(ratio, 5) + " (within 2%)");
}

// ---------------------------------------------------------------- 9

std::vector<char> slurp(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void determinism(Verdict& v) {
    RunConfig cfg = load_run_config(std::filesystem::path(FMLAB_SOURCE_DIR) / "configs" / "gmm_default.json");
    cfg.training.steps = 500;
    cfg.snapshots.every = 100;
    testing::TempDir dir("accept-det");
    const auto a = run_training(cfg, dir / "a");
    const auto b = run_training(cfg, dir / "b");
    const auto ma = slurp(a.dir / kMetricsFile), mb = slurp(b.dir / kMetricsFile);
    v.check(!ma.empty() && ma == mb, "metrics logs byte-identical (" + std::to_string(ma.size()) + " bytes)");
    const auto ca = slurp(a.final_checkpoint), cb = slurp(b.final_checkpoint);
    v.check(!ca.empty() && ca == cb, "final checkpoints byte-identical (" + std::to_string(ca.size()) + " bytes)");
    bool snaps = true;
    for (std::int64_t s = 100; s <= 500; s += 100) snaps = snaps && slurp(a.dir / snapshot_filename(s)) == slurp(b.dir / snapshot_filename(s));
    v.check(snaps, "all five snapshots byte-identical");
}

struct Criterion {
    int id;
    const char* title;
    std::function<void(Verdict&)> run;
};

}  // namespace

int main(int argc, char** argv) {
    const std::vector<Criterion> all{
        {1, "gradient suite", gradient_suite},
        {2, "formula exactness", formula_exactness},
        {3, "timestep sampler", timestep_sampler},
        {4, "post-hoc EMA and checkpoints", posthoc_ema},
        {5, "Euler/CFG sampler", sampler},
        {6, "CFG dropout rate", cfg_dropout},
        {7, "end-to-end GMM", end_to_end},
        {8, "ablation harness", ablation},
        {9, "determinism", determinism},
    };
    std::vector<int> wanted;
    for (int i = 1; i < argc; ++i) wanted.push_back(std::stoi(argv[i]));

    int failed = 0;
    for (const auto& c : all) {
        if (!wanted.empty() && std::find(wanted.begin(), wanted.end(), c.id) == wanted.end()) continue;
        Verdict v;
        const auto t0 = Clock::now();
        try {
            c.run(v);
        } catch (const std::exception& e) {
            v.check(false, std::string("exception: ") + e.what());
        }
        for (const auto& note : v.notes()) std::cout << "    " << note << '\n';
        std::cout << "criterion " << c.id << " (" << c.title << "): " << (v.ok() ? "PASS" : "FAIL") << "  ["
                  << num(seconds_since(t0), 3) << " s]" << std::endl;
        if (!v.ok()) ++failed;
    }
    return failed == 0 ? 0 : 1;
}
