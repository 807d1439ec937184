#include "fmlab/layers.hpp"

#include <cmath>
#include <string>

#include "fmlab/errors.hpp"

namespace fmlab {

namespace {

void require_valid(bool valid, const char* layer) {
    if (!valid) throw std::logic_error(std::string(layer) + " backward called with a stale or empty cache");
}

void require_grad_shape(const Shape& expected, const Tensor& grad, const char* layer) {
    if (grad.shape() != expected) {
        throw ShapeError(std::string(layer) + " backward: grad_output " + shape_str(grad.shape()) +
                         " does not match forward output " + shape_str(expected));
    }
}

double dot(const double* a, const double* b, std::size_t n) {
    double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        s0 += a[i] * b[i];
        s1 += a[i + 1] * b[i + 1];
        s2 += a[i + 2] * b[i + 2];
        s3 += a[i + 3] * b[i + 3];
    }
    for (; i < n; ++i) s0 += a[i] * b[i];
    return (s0 + s1) + (s2 + s3);
}

void axpy(double alpha, const double* x, double* y, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace

Activation parse_activation(std::string_view name) {
    if (name == "silu") return Activation::silu;
    if (name == "tanh") return Activation::tanh;
    throw ConfigError("unknown activation '" + std::string(name) + "' (expected silu|tanh)");
}

std::string_view activation_name(Activation a) {
    return a == Activation::silu ? "silu" : "tanh";
}

Tensor linear_forward(const Tensor& weights, const Tensor& bias, const Tensor& input, LinearCache* cache) {
    if (weights.rank() != 2 || input.rank() != 2 || bias.rank() != 1 || weights.dim(1) != input.dim(1) ||
        bias.dim(0) != weights.dim(0)) {
        throw ShapeError("linear_forward: weights " + shape_str(weights.shape()) + ", bias " +
                         shape_str(bias.shape()) + ", input " + shape_str(input.shape()) + " are incompatible");
    }
    const std::size_t batch = input.dim(0);
    const std::size_t in = input.dim(1);
    const std::size_t out = weights.dim(0);
    Tensor y({batch, out});
    const double* w = weights.data().data();
    const double* x = input.data().data();
    double* yp = y.data().data();
    for (std::size_t b = 0; b < batch; ++b) {
        for (std::size_t o = 0; o < out; ++o) {
            yp[b * out + o] = dot(w + o * in, x + b * in, in) + bias[o];
        }
    }
    if (cache) {
        cache->input = input;
        cache->weights = weights;
        cache->valid = true;
    }
    return y;
}

LinearGrads linear_backward(const LinearCache& cache, const Tensor& grad_output) {
    require_valid(cache.valid, "linear");
    const std::size_t batch = cache.input.dim(0);
    const std::size_t in = cache.input.dim(1);
    const std::size_t out = cache.weights.dim(0);
    require_grad_shape({batch, out}, grad_output, "linear");

    LinearGrads g{Tensor({out, in}), Tensor({out}), Tensor({batch, in})};
    const double* w = cache.weights.data().data();
    const double* x = cache.input.data().data();
    const double* go = grad_output.data().data();
    double* gw = g.weights.data().data();
    double* gb = g.bias.data().data();
    double* gx = g.input.data().data();
    for (std::size_t b = 0; b < batch; ++b) {
        for (std::size_t o = 0; o < out; ++o) {
            const double gbo = go[b * out + o];
            if (gbo == 0.0) continue;
            gb[o] += gbo;
            axpy(gbo, x + b * in, gw + o * in, in);
            axpy(gbo, w + o * in, gx + b * in, in);
        }
    }
    return g;
}

Tensor activation_forward(Activation kind, const Tensor& input, ActivationCache* cache) {
    Tensor y = input;
    for (auto& v : y.values()) v = kind == Activation::silu ? v * sigmoid(v) : std::tanh(v);
    if (cache) {
        cache->kind = kind;
        cache->input = input;
        cache->valid = true;
    }
    return y;
}

Tensor activation_backward(const ActivationCache& cache, const Tensor& grad_output) {
    require_valid(cache.valid, "activation");
    require_grad_shape(cache.input.shape(), grad_output, "activation");
    Tensor g = grad_output;
    const auto& x = cache.input.values();
    auto& gv = g.values();
    for (std::size_t i = 0; i < gv.size(); ++i) {
        double d;
        if (cache.kind == Activation::silu) {
            const double s = sigmoid(x[i]);
            d = s * (1.0 + x[i] * (1.0 - s));
        } else {
            const double th = std::tanh(x[i]);
            d = 1.0 - th * th;
        }
        gv[i] *= d;
    }
    return g;
}

Tensor film_forward(const Tensor& input, const Tensor& scale, const Tensor& shift, FilmCache* cache) {
    require_same_shape(input, scale, "film_forward scale");
    require_same_shape(input, shift, "film_forward shift");
    Tensor y = input;
    auto& yv = y.values();
    for (std::size_t i = 0; i < yv.size(); ++i) yv[i] = yv[i] * (1.0 + scale[i]) + shift[i];
    if (cache) {
        cache->input = input;
        cache->scale = scale;
        cache->valid = true;
    }
    return y;
}

FilmGrads film_backward(const FilmCache& cache, const Tensor& grad_output) {
    require_valid(cache.valid, "film");
    require_grad_shape(cache.input.shape(), grad_output, "film");
    FilmGrads g{grad_output, grad_output, grad_output};
    for (std::size_t i = 0; i < grad_output.numel(); ++i) {
        g.input[i] = grad_output[i] * (1.0 + cache.scale[i]);
        g.scale[i] = grad_output[i] * cache.input[i];
    }
    return g;
}

Tensor embedding_forward(const Tensor& table, std::span<const int> ids, EmbeddingCache* cache) {
    if (table.rank() != 2) throw ShapeError("embedding table must be 2-D, got " + shape_str(table.shape()));
    const std::size_t rows = table.dim(0);
    const std::size_t dim = table.dim(1);
    Tensor y({ids.size(), dim});
    for (std::size_t b = 0; b < ids.size(); ++b) {
        if (ids[b] < 0 || static_cast<std::size_t>(ids[b]) >= rows) {
            throw std::out_of_range("embedding id " + std::to_string(ids[b]) + " outside table of " +
                                    std::to_string(rows) + " rows");
        }
        auto src = table.row(static_cast<std::size_t>(ids[b]));
        std::copy(src.begin(), src.end(), y.row(b).begin());
    }
    if (cache) {
        cache->ids.assign(ids.begin(), ids.end());
        cache->table_shape = table.shape();
        cache->valid = true;
    }
    return y;
}

Tensor embedding_backward(const EmbeddingCache& cache, const Tensor& grad_output) {
    require_valid(cache.valid, "embedding");
    require_grad_shape({cache.ids.size(), cache.table_shape[1]}, grad_output, "embedding");
    Tensor g(cache.table_shape);
    const std::size_t dim = cache.table_shape[1];
    for (std::size_t b = 0; b < cache.ids.size(); ++b) {
        axpy(1.0, grad_output.row(b).data(), g.row(static_cast<std::size_t>(cache.ids[b])).data(), dim);
    }
    return g;
}

namespace {
double fourier_freq(std::size_t k, std::size_t half) {
    return 1000.0 * std::exp(-std::log(10000.0) * static_cast<double>(k) / static_cast<double>(half));
}
}  // namespace

Tensor fourier_features(std::span<const double> t, std::size_t dim) {
    if (dim < 2 || dim % 2 != 0) throw ShapeError("fourier feature dim must be even and >= 2");
    const std::size_t half = dim / 2;
    Tensor y({t.size(), dim});
    for (std::size_t b = 0; b < t.size(); ++b) {
        for (std::size_t k = 0; k < half; ++k) {
            const double a = t[b] * fourier_freq(k, half);
            y.at(b, k) = std::sin(a);
            y.at(b, half + k) = std::cos(a);
        }
    }
    return y;
}

std::vector<double> fourier_features_backward(std::span<const double> t, const Tensor& grad_output) {
    if (grad_output.rank() != 2 || grad_output.dim(0) != t.size() || grad_output.dim(1) % 2 != 0) {
        throw ShapeError("fourier_features_backward: grad_output " + shape_str(grad_output.shape()) +
                         " does not match batch " + std::to_string(t.size()));
    }
    const std::size_t half = grad_output.dim(1) / 2;
    std::vector<double> gt(t.size(), 0.0);
    for (std::size_t b = 0; b < t.size(); ++b) {
        for (std::size_t k = 0; k < half; ++k) {
            const double f = fourier_freq(k, half);
            const double a = t[b] * f;
            gt[b] += grad_output.at(b, k) * f * std::cos(a) - grad_output.at(b, half + k) * f * std::sin(a);
        }
    }
    return gt;
}

Tensor concat_cols(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.dim(0) != b.dim(0)) {
        throw ShapeError("concat_cols: " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
    }
    const std::size_t ca = a.dim(1), cb = b.dim(1);
    Tensor y({a.dim(0), ca + cb});
    for (std::size_t r = 0; r < a.dim(0); ++r) {
        auto dst = y.row(r);
        auto ra = a.row(r);
        auto rb = b.row(r);
        std::copy(ra.begin(), ra.end(), dst.begin());
        std::copy(rb.begin(), rb.end(), dst.begin() + static_cast<std::ptrdiff_t>(ca));
    }
    return y;
}

Tensor slice_cols(const Tensor& a, std::size_t begin, std::size_t end) {
    if (a.rank() != 2 || begin >= end || end > a.dim(1)) {
        throw ShapeError("slice_cols [" + std::to_string(begin) + "," + std::to_string(end) + ") of " +
                         shape_str(a.shape()));
    }
    Tensor y({a.dim(0), end - begin});
    for (std::size_t r = 0; r < a.dim(0); ++r) {
        auto src = a.row(r);
        std::copy(src.begin() + static_cast<std::ptrdiff_t>(begin), src.begin() + static_cast<std::ptrdiff_t>(end),
                  y.row(r).begin());
    }
    return y;
}

}  // namespace fmlab
