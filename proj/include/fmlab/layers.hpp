#pragma once

#include <span>
#include <string_view>
#include <vector>

#include "fmlab/tensor.hpp"

namespace fmlab {

// Fixed layer vocabulary with explicit backward passes. Each forward fills a
// cache; each backward checks the cache is populated and that grad_output has
// the shape the forward produced, and throws otherwise.

enum class Activation { silu, tanh };

Activation parse_activation(std::string_view name);
std::string_view activation_name(Activation a);

// y = x W^T + b, W is [out x in], x is [batch x in].
struct LinearCache {
    Tensor input;
    Tensor weights;
    bool valid = false;
};

struct LinearGrads {
    Tensor weights;
    Tensor bias;
    Tensor input;
};

Tensor linear_forward(const Tensor& weights, const Tensor& bias, const Tensor& input, LinearCache* cache = nullptr);
LinearGrads linear_backward(const LinearCache& cache, const Tensor& grad_output);

struct ActivationCache {
    Activation kind = Activation::silu;
    Tensor input;
    bool valid = false;
};

Tensor activation_forward(Activation kind, const Tensor& input, ActivationCache* cache = nullptr);
Tensor activation_backward(const ActivationCache& cache, const Tensor& grad_output);

// FiLM: y = x * (1 + scale) + shift, all [batch x features].
struct FilmCache {
    Tensor input;
    Tensor scale;
    bool valid = false;
};

struct FilmGrads {
    Tensor input;
    Tensor scale;
    Tensor shift;
};

Tensor film_forward(const Tensor& input, const Tensor& scale, const Tensor& shift, FilmCache* cache = nullptr);
FilmGrads film_backward(const FilmCache& cache, const Tensor& grad_output);

// Row lookup into a [rows x dim] table.
struct EmbeddingCache {
    std::vector<int> ids;
    Shape table_shape;
    bool valid = false;
};

Tensor embedding_forward(const Tensor& table, std::span<const int> ids, EmbeddingCache* cache = nullptr);
Tensor embedding_backward(const EmbeddingCache& cache, const Tensor& grad_output);

// Sinusoidal time features, [batch x dim] with dim even: the first half is
// sin(t * 1000 * f_k), the second half cos(...), f_k = 10000^(-k / half).
// Parameter-free; the backward gives d(loss)/dt per sample.
Tensor fourier_features(std::span<const double> t, std::size_t dim);
std::vector<double> fourier_features_backward(std::span<const double> t, const Tensor& grad_output);

// Column-block helpers used for concatenation and FiLM splitting.
Tensor concat_cols(const Tensor& a, const Tensor& b);
Tensor slice_cols(const Tensor& a, std::size_t begin, std::size_t end);

}  // namespace fmlab
