#pragma once

#include <cstddef>
#include <memory>
#include <optional>
#include <span>
#include <string_view>

#include "fmlab/layers.hpp"
#include "fmlab/rng.hpp"
#include "fmlab/tensor.hpp"

namespace fmlab {

enum class Variant { full, aux_zeroed_at_inference, aux_removed, capacity_matched };
enum class AuxInput { learned_token, zeros };

Variant parse_variant(std::string_view name);
std::string_view variant_name(Variant v);
AuxInput parse_aux_input(std::string_view name);
std::string_view aux_input_name(AuxInput a);

// Auxiliary conditioning branch. Its input never changes: either a learned
// constant token or an all-zero vector.
struct AuxConfig {
    std::size_t token_dim = 16;
    std::size_t n_layers = 3;
    std::size_t out_dim = 112;
    AuxInput input = AuxInput::learned_token;
};

// Conditional velocity MLP.
//
//   phi   = fourier(t)                              [B x T]
//   te    = Linear_time(phi)                        [B x C]
//   cat   = [class_embed(label), aux_out]           [B x (E + A)]
//   z     = act(Linear_proj(cat) + te)              [B x C]
//   h     = x
//   for l < L:  h = act(FiLM(Linear_l(h), Linear_film_l(z)))
//   v     = Linear_out(h)                           [B x d]
//
// aux_out = act(Linear_{n-1}(... act(Linear_0(token)))) is one row shared by
// the whole batch. The class table has n_classes + 1 rows; the last is NULL.
//
// Parameter count (A = 0 and no aux terms when the branch is absent):
//   time  C*T + C
//   class (n_classes + 1) * E
//   proj  C*(E + A) + C
//   trunk (H*d + H) + (L-1)*(H*H + H) + L*(2H*C + 2H) + (d*H + d)
//   aux   [K if learned token] + (A*K + A) + (n_aux - 1)*(A*A + A)
struct ArchConfig {
    std::size_t input_dim = 2;
    std::size_t hidden_dim = 128;
    std::size_t n_hidden_layers = 4;
    std::size_t time_feature_dim = 32;
    std::size_t class_embed_dim = 32;
    std::size_t cond_dim = 32;
    std::size_t n_classes = 4;
    Activation activation = Activation::silu;
    std::optional<AuxConfig> aux = AuxConfig{};
    Variant variant = Variant::full;
    std::optional<std::size_t> target_params;

    int null_label() const { return static_cast<int>(n_classes); }
    void validate() const;
};

std::size_t arch_param_count(const ArchConfig& arch);

ModelParams build_model(const ArchConfig& arch, Rng& rng);

ArchConfig make_variant(const ArchConfig& arch_full, Variant which);

// Grows depth, then width, of `base` as far as possible without exceeding
// target_params; the result must land in [0.98, 1.0] * target_params.
ArchConfig match_capacity(const ArchConfig& base, std::size_t target_params);

enum class Phase { training, inference };

struct ForwardOptions {
    Phase phase = Phase::training;
    // Force the auxiliary output to zero regardless of variant.
    bool zero_aux = false;
};

struct ForwardCache {
    virtual ~ForwardCache() = default;
};

// Interface shared by the real network and test stubs.
class VelocityModel {
public:
    virtual ~VelocityModel() = default;

    virtual std::size_t input_dim() const = 0;
    virtual int null_label() const = 0;

    virtual Tensor forward(const ModelParams& params, const Tensor& x, std::span<const double> t,
                           std::span<const int> labels, const ForwardOptions& opts,
                           std::unique_ptr<ForwardCache>* cache = nullptr) const = 0;

    // Accumulates parameter gradients into `grads` and returns d(loss)/dx.
    virtual Tensor backward(const ModelParams& params, const ForwardCache& cache, const Tensor& grad_v,
                            ModelParams& grads) const = 0;
};

class VelocityNet final : public VelocityModel {
public:
    explicit VelocityNet(ArchConfig arch);

    const ArchConfig& arch() const { return arch_; }
    std::size_t input_dim() const override { return arch_.input_dim; }
    int null_label() const override { return arch_.null_label(); }

    Tensor forward(const ModelParams& params, const Tensor& x, std::span<const double> t, std::span<const int> labels,
                   const ForwardOptions& opts, std::unique_ptr<ForwardCache>* cache = nullptr) const override;

    Tensor backward(const ModelParams& params, const ForwardCache& cache, const Tensor& grad_v,
                    ModelParams& grads) const override;

    // Output of the auxiliary branch as seen by the conditioning projection
    // (zeros when absent or masked). Shape [1 x out_dim].
    Tensor aux_output(const ModelParams& params, const ForwardOptions& opts) const;

private:
    bool aux_masked(const ForwardOptions& opts) const;

    ArchConfig arch_;
};

}  // namespace fmlab
