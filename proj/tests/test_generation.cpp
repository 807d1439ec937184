#include <doctest.h>

#include <cmath>
#include <limits>

#include "fmlab/errors.hpp"
#include "fmlab/evalsuite.hpp"
#include "fmlab/sampler.hpp"
#include "support.hpp"

using namespace fmlab;
using fmlab::testing::ConstantField;
using fmlab::testing::GmmOracleField;
using fmlab::testing::LinearField;

namespace {

GenerationConfig gen(std::size_t steps, double s, double lo = 0.1, double hi = 0.9) {
    GenerationConfig g;
    g.steps = steps;
    g.cfg_scale = s;
    g.t_lo = lo;
    g.t_hi = hi;
    g.n_samples = 8;
    g.label = 1;
    g.seed = 3;
    return g;
}

// CFG at every step, written out directly.
Tensor guided_everywhere(const VelocityModel& m, const GenerationConfig& g) {
    Tensor x = initial_noise(g.n_samples, m.input_dim(), g.seed, g.label);
    const std::vector<int> c(g.n_samples, g.label), u(g.n_samples, m.null_label());
    std::vector<double> t(g.n_samples);
    for (std::size_t k = g.steps; k >= 1; --k) {
        std::fill(t.begin(), t.end(), static_cast<double>(k) / static_cast<double>(g.steps));
        const Tensor vc = m.forward({}, x, t, c, g.forward);
        const Tensor vu = m.forward({}, x, t, u, g.forward);
        for (std::size_t i = 0; i < x.numel(); ++i) {
            x[i] -= (1.0 / static_cast<double>(g.steps)) * (vu[i] + g.cfg_scale * (vc[i] - vu[i]));
        }
    }
    return x;
}

}  // namespace

// ---------------------------------------------------------------- sampler

TEST_CASE("cfg combination") {
    const Tensor vc({1, 2}, 1.0), vu({1, 2}, 0.0);
    CHECK(cfg_combine(vc, vu, 7.0, 0.5, 0.1, 0.9)[0] == 7.0);
    CHECK(cfg_combine(vc, vu, 7.0, 0.95, 0.1, 0.9)[0] == 1.0);
    CHECK(cfg_combine(vc, vu, 0.0, 0.5, 0.1, 0.9)[1] == 0.0);
    CHECK(cfg_combine(vc, vu, 7.0, 0.1, 0.1, 0.9)[0] == 7.0);  // closed interval
    CHECK(cfg_combine(vc, vu, 7.0, 0.9, 0.1, 0.9)[0] == 7.0);
    CHECK_THROWS_AS(cfg_combine(vc, Tensor({2, 1}), 2.0, 0.5, 0.1, 0.9), ShapeError);
}

TEST_CASE("constant field integrates exactly") {
    const ConstantField m(3, 0.75);
    for (std::size_t steps : {1, 7, 100}) {
        GenerationConfig g = gen(steps, 1.0);
        const Tensor x1 = initial_noise(g.n_samples, 3, g.seed, g.label);
        const Tensor x0 = euler_generate(m, {}, g).samples;
        for (std::size_t i = 0; i < x0.numel(); ++i) CHECK(std::abs(x0[i] - (x1[i] - 0.75)) < 1e-12);
    }
}

TEST_CASE("euler is first order on a linear field") {
    // dx/dt = -x integrated from 1 to 0 gives x(0) = e * x(1).
    const LinearField m(2, 1.0, 1.0);
    auto error = [&](std::size_t steps) {
        GenerationConfig g = gen(steps, 1.0);
        const Tensor x1 = initial_noise(g.n_samples, 2, g.seed, g.label);
        const Tensor x0 = euler_generate(m, {}, g).samples;
        double e = 0.0;
        for (std::size_t i = 0; i < x0.numel(); ++i) e = std::max(e, std::abs(x0[i] - std::exp(1.0) * x1[i]));
        return e;
    };
    for (std::size_t n : {25, 50, 100, 200}) {
        const double ratio = error(n) / error(2 * n);
        CAPTURE(n);
        CHECK(ratio >= 1.8);
        CHECK(ratio <= 2.2);
    }
}

TEST_CASE("cfg scale 1 is the conditional sampler bit for bit") {
    const LinearField m(2, 1.0, 3.0);
    const auto guided = euler_generate(m, {}, gen(40, 1.0));
    GenerationConfig plain = gen(40, 1.0, 0.0, 0.0);
    const auto cond = euler_generate(m, {}, plain);
    CHECK(guided.samples.bit_equal(cond.samples));
    CHECK(guided.uncond_evals == 0);
    CHECK_FALSE(euler_generate(m, {}, gen(40, 1.5)).samples.bit_equal(cond.samples));
}

TEST_CASE("interval [0,1] is guidance at every step") {
    const LinearField m(2, 1.0, 3.0);
    for (double s : {0.0, 2.0, 7.0}) {
        const GenerationConfig g = gen(30, s, 0.0, 1.0);
        const auto r = euler_generate(m, {}, g);
        CHECK(r.samples.bit_equal(guided_everywhere(m, g)));
        CHECK(r.uncond_evals == 30);
    }
}

TEST_CASE("unconditional evaluations happen only inside the interval") {
    const ConstantField m(2, 0.0);
    CHECK(euler_generate(m, {}, gen(100, 3.0)).uncond_evals == 81);
    CHECK(euler_generate(m, {}, gen(100, 3.0)).cond_evals == 100);
    CHECK(euler_generate(m, {}, gen(50, 3.0)).uncond_evals == 41);
    CHECK(euler_generate(m, {}, gen(10, 3.0, 0.35, 0.38)).uncond_evals == 0);
    CHECK(euler_generate(m, {}, gen(10, 3.0, 0.5, 0.5)).uncond_evals == 1);
    CHECK(euler_generate(m, {}, gen(100, 1.0)).uncond_evals == 0);
}

TEST_CASE("generation is deterministic and seeded per label") {
    const LinearField m(2, 0.5, 1.0);
    GenerationConfig g = gen(20, 3.0);
    CHECK(euler_generate(m, {}, g).samples.bit_equal(euler_generate(m, {}, g).samples));
    GenerationConfig other = g;
    other.seed = 4;
    CHECK_FALSE(euler_generate(m, {}, other).samples.bit_equal(euler_generate(m, {}, g).samples));
    other = g;
    other.label = 2;
    CHECK_FALSE(euler_generate(m, {}, other).samples.bit_equal(euler_generate(m, {}, g).samples));
    // A larger batch extends, rather than reshuffles, the smaller one.
    other = g;
    other.n_samples = 16;
    const Tensor big = euler_generate(m, {}, other).samples;
    const Tensor small = euler_generate(m, {}, g).samples;
    for (std::size_t i = 0; i < small.numel(); ++i) CHECK(big[i] == small[i]);
}

TEST_CASE("generation input validation and numeric failure") {
    const ConstantField nan_field(2, std::numeric_limits<double>::quiet_NaN());
    CHECK_THROWS_WITH_AS(euler_generate(nan_field, {}, gen(10, 1.0)), doctest::Contains("step 1 "), NumericError);
    const ConstantField m(2, 0.0);
    GenerationConfig g = gen(10, 1.0);
    g.label = 4;
    CHECK_THROWS_AS(euler_generate(m, {}, g), ConfigError);
    CHECK_THROWS_AS(euler_generate(m, {}, gen(0, 1.0)), ConfigError);
    CHECK_THROWS_AS(euler_generate(m, {}, gen(10, 1.0, 0.6, 0.5)), ConfigError);
    CHECK_THROWS_AS(euler_generate(m, {}, gen(10, -1.0)), ConfigError);
}

// ---------------------------------------------------------------- metrics

TEST_CASE("energy distance worked examples") {
    CHECK(energy_distance(Tensor::matrix({{0.0}}), Tensor::matrix({{2.0}})) == 4.0);
    const Tensor a = Tensor::matrix({{0, 0}, {1, 0}, {0, 3}});
    const Tensor a_perm = Tensor::matrix({{0, 3}, {0, 0}, {1, 0}});
    CHECK(energy_distance(a, a_perm) == 0.0);
    const Tensor b = Tensor::matrix({{2, 2}, {-1, 0}});
    CHECK(energy_distance(a, b) == doctest::Approx(energy_distance(b, a)).epsilon(1e-15));
    CHECK(energy_distance(a, b) == doctest::Approx(energy_distance(a_perm, b)).epsilon(1e-15));

    // {0, 1} vs {3}: 2 * (3 + 2) / 2 - (0 + 1 + 1 + 0) / 4 - 0 = 4.5
    CHECK(energy_distance(Tensor::matrix({{0}, {1}}), Tensor::matrix({{3}})) == doctest::Approx(4.5));
    CHECK_THROWS_AS(energy_distance(a, Tensor::matrix({{1.0}})), ShapeError);
}

TEST_CASE("adherence worked examples") {
    const GmmSpec spec = GmmSpec::four_corners();
    const Tensor at_means = Tensor::matrix({{3, -3}, {3.1, -2.5}, {-3, 3}, {0.5, -0.1}});
    CHECK(adherence(at_means, 1, spec) == 0.75);
    CHECK(adherence(at_means, 2, spec) == 0.25);
    CHECK(adherence(at_means, 0, spec) == 0.0);
    CHECK_THROWS(adherence(Tensor::matrix({{0, 0}}), 4, spec));
}

TEST_CASE("generalization gap") {
    std::vector<std::pair<std::int64_t, double>> train, val;
    for (int s = 1; s <= 100; ++s) train.emplace_back(s, 0.5);
    for (int s = 10; s <= 100; s += 10) val.emplace_back(s, 0.8);
    GapSummary g = generalization_gap(train, val);
    CHECK(g.series.size() == 10);
    CHECK(g.mean == doctest::Approx(0.3));
    CHECK(g.min == doctest::Approx(0.3));
    CHECK(g.max == doctest::Approx(0.3));

    // Nearest train step, the lower one on ties.
    train = {{0, 1.0}, {10, 2.0}, {20, 3.0}};
    val = {{5, 0.0}, {16, 0.0}, {20, 5.0}};
    g = generalization_gap(train, val);
    CHECK(g.series[0].gap == -1.0);
    CHECK(g.series[1].gap == -3.0);
    CHECK(g.series[2].gap == 2.0);
    // Only the last quarter of the validation steps (16.25..20) enters the summary.
    CHECK(g.mean == 2.0);
    CHECK(g.min == 2.0);
}

TEST_CASE("real draws score near the baseline") {
    EvalSpec spec;
    spec.n_per_class = 400;
    Rng rng(99);
    std::map<int, Tensor> samples;
    for (int c = 0; c < 4; ++c) samples[c] = reference_samples(spec.dataset, c, 400, rng);
    const EvalReport r = evaluate_samples(samples, spec);
    REQUIRE(r.mean_adherence);
    CHECK(*r.min_adherence == 1.0);
    CHECK(r.ratio > 0.2);
    CHECK(r.ratio < 3.0);
    const json j = to_json(r);
    CHECK(j.at("schema_version") == kEvalSchemaVersion);
    CHECK(j.at("classes").size() == 4);

    // Shifted draws are far from the baseline.
    for (auto& [c, t] : samples) t += Tensor(t.shape(), 0.5);
    CHECK(evaluate_samples(samples, spec).ratio > 10.0);
}

TEST_CASE("exact field at scale 1 reproduces the data law") {
    const GmmSpec gmm = GmmSpec::four_corners();
    const GmmOracleField field(gmm);
    EvalSpec spec;
    spec.n_per_class = 300;
    GenerationConfig g;
    g.steps = 100;
    g.cfg_scale = 1.0;
    const EvalReport r = evaluate_model(field, {}, g, spec);
    CHECK(*r.min_adherence >= 0.99);
    CHECK(r.ratio < 3.0);

    // Guidance at 3 keeps samples in class but moves them off the law.
    g.cfg_scale = 3.0;
    const EvalReport guided = evaluate_model(field, {}, g, spec);
    CHECK(*guided.min_adherence >= 0.99);
    CHECK(guided.ratio > r.ratio);
}

TEST_CASE("cfg sweep rows") {
    const LinearField m(2, 0.5, 1.5);
    EvalSpec spec;
    spec.n_per_class = 30;
    GenerationConfig g;
    g.steps = 10;
    std::vector<double> scales;
    for (int s = 3; s <= 15; ++s) scales.push_back(s);
    const auto rows = sweep_cfg(m, {}, scales, g, spec);
    REQUIRE(rows.size() == 13);
    CHECK(rows.front().cfg == 3.0);
    CHECK(rows.back().cfg == 15.0);
    for (const auto& r : rows) {
        CHECK(r.n == 30);
        CHECK(r.seed == g.seed);
    }

    const auto dup = sweep_cfg(m, {}, {5.0, 5.0}, g, spec);
    CHECK(dup[0].energy_distance == dup[1].energy_distance);
    CHECK(dup[0].adherence == dup[1].adherence);
    g.cfg_scale = 5.0;
    const EvalReport single = evaluate_model(m, {}, g, spec);
    CHECK(single.mean_energy_distance == dup[0].energy_distance);
    CHECK(*single.mean_adherence == dup[0].adherence);

    const std::string csv = sweep_csv(rows);
    CHECK(csv.rfind("cfg,adherence,energy_distance,n,seed\n", 0) == 0);
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 14);
    CHECK(format_double(0.1) == "0.1");
    CHECK(format_double(3.0) == "3");
}
