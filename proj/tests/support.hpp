#pragma once

#include <unistd.h>

#include <cmath>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "fmlab/datasets.hpp"
#include "fmlab/rng.hpp"
#include "fmlab/tensor.hpp"
#include "fmlab/velocitynet.hpp"

namespace fmlab::testing {

// v(x, t, c) = value everywhere.
class ConstantField final : public VelocityModel {
public:
    ConstantField(std::size_t dim, double value, int null_label = 4) : dim_(dim), value_(value), null_(null_label) {}
    std::size_t input_dim() const override { return dim_; }
    int null_label() const override { return null_; }
    Tensor forward(const ModelParams&, const Tensor& x, std::span<const double>, std::span<const int>,
                   const ForwardOptions&, std::unique_ptr<ForwardCache>* = nullptr) const override {
        return Tensor(x.shape(), value_);
    }
    Tensor backward(const ModelParams&, const ForwardCache&, const Tensor& grad_v, ModelParams&) const override {
        return grad_v.zeros_like();
    }

private:
    std::size_t dim_;
    double value_;
    int null_;
};

// v = -a x for the conditional label, -b x for NULL.
class LinearField final : public VelocityModel {
public:
    LinearField(std::size_t dim, double a = 1.0, double b = 1.0, int null_label = 4)
        : dim_(dim), a_(a), b_(b), null_(null_label) {}
    std::size_t input_dim() const override { return dim_; }
    int null_label() const override { return null_; }
    Tensor forward(const ModelParams&, const Tensor& x, std::span<const double>, std::span<const int> labels,
                   const ForwardOptions&, std::unique_ptr<ForwardCache>* = nullptr) const override {
        Tensor v = x;
        for (std::size_t i = 0; i < x.rows(); ++i) {
            const double k = labels[i] == null_ ? b_ : a_;
            for (auto& e : v.row(i)) e *= -k;
        }
        return v;
    }
    Tensor backward(const ModelParams&, const ForwardCache&, const Tensor& grad_v, ModelParams&) const override {
        return grad_v.zeros_like();
    }

private:
    std::size_t dim_;
    double a_, b_;
    int null_;
};

// Exact E[eps - x0 | x_t = x, c] for a GMM whose classes are single
// isotropic-per-axis Gaussians; NULL gives the equal-prior mixture.
class GmmOracleField final : public VelocityModel {
public:
    explicit GmmOracleField(GmmSpec spec) : spec_(std::move(spec)) {}
    std::size_t input_dim() const override { return spec_.dim; }
    int null_label() const override { return static_cast<int>(spec_.n_classes()); }

    Tensor forward(const ModelParams&, const Tensor& x, std::span<const double> t, std::span<const int> labels,
                   const ForwardOptions&, std::unique_ptr<ForwardCache>* = nullptr) const override {
        const std::size_t d = spec_.dim;
        const std::size_t k = spec_.n_classes();
        Tensor v(x.shape());
        std::vector<double> logw(k);
        std::vector<std::vector<double>> vk(k, std::vector<double>(d));
        for (std::size_t i = 0; i < x.rows(); ++i) {
            const double ti = t[i];
            for (std::size_t c = 0; c < k; ++c) {
                const auto& comp = spec_.classes[c].front();
                double lw = 0.0;
                for (std::size_t j = 0; j < d; ++j) {
                    const double s2 = comp.stddev[j] * comp.stddev[j];
                    const double var = (1 - ti) * (1 - ti) * s2 + ti * ti;
                    const double r = x.at(i, j) - (1 - ti) * comp.mean[j];
                    const double ex0 = comp.mean[j] + (1 - ti) * s2 / var * r;
                    const double eeps = ti / var * r;
                    vk[c][j] = eeps - ex0;
                    lw += -0.5 * r * r / var - 0.5 * std::log(var);
                }
                logw[c] = lw;
            }
            const int lab = labels[i];
            if (lab != null_label()) {
                for (std::size_t j = 0; j < d; ++j) v.at(i, j) = vk[static_cast<std::size_t>(lab)][j];
                continue;
            }
            double mx = logw[0];
            for (double w : logw) mx = std::max(mx, w);
            double z = 0.0;
            for (auto& w : logw) z += (w = std::exp(w - mx));
            for (std::size_t j = 0; j < d; ++j) {
                double s = 0.0;
                for (std::size_t c = 0; c < k; ++c) s += logw[c] / z * vk[c][j];
                v.at(i, j) = s;
            }
        }
        return v;
    }
    Tensor backward(const ModelParams&, const ForwardCache&, const Tensor& grad_v, ModelParams&) const override {
        return grad_v.zeros_like();
    }

private:
    GmmSpec spec_;
};

// Scratch directory removed on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& tag) {
        static int counter = 0;
        path_ = std::filesystem::temp_directory_path() /
                ("fmlab-" + tag + "-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
        std::filesystem::remove_all(path_);
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;
    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& p) const { return path_ / p; }

private:
    std::filesystem::path path_;
};

// A narrow network that keeps gradient checks fast.
inline ArchConfig small_arch(bool with_aux = true) {
    ArchConfig a;
    a.hidden_dim = 12;
    a.n_hidden_layers = 2;
    a.time_feature_dim = 8;
    a.class_embed_dim = 6;
    a.cond_dim = 5;
    if (with_aux) {
        a.aux = AuxConfig{4, 2, 7, AuxInput::learned_token};
    } else {
        a.aux.reset();
        a.variant = Variant::aux_removed;
    }
    return a;
}

inline Tensor random_tensor(Shape shape, Rng& rng, double scale = 1.0) {
    Tensor t(std::move(shape));
    for (auto& v : t.values()) v = scale * rng.normal();
    return t;
}

}  // namespace fmlab::testing
