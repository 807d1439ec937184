#include "fmlab/velocitynet.hpp"

#include <cmath>
#include <cstdio>
#include <string>
#include <vector>

#include "fmlab/errors.hpp"

namespace fmlab {

Variant parse_variant(std::string_view name) {
    if (name == "full") return Variant::full;
    if (name == "aux_zeroed_at_inference") return Variant::aux_zeroed_at_inference;
    if (name == "aux_removed") return Variant::aux_removed;
    if (name == "capacity_matched") return Variant::capacity_matched;
    throw ConfigError("unknown variant '" + std::string(name) + "'");
}

std::string_view variant_name(Variant v) {
    switch (v) {
        case Variant::full: return "full";
        case Variant::aux_zeroed_at_inference: return "aux_zeroed_at_inference";
        case Variant::aux_removed: return "aux_removed";
        case Variant::capacity_matched: return "capacity_matched";
    }
    return "full";
}

AuxInput parse_aux_input(std::string_view name) {
    if (name == "learned_token") return AuxInput::learned_token;
    if (name == "zeros") return AuxInput::zeros;
    throw ConfigError("unknown aux_input '" + std::string(name) + "' (expected learned_token|zeros)");
}

std::string_view aux_input_name(AuxInput a) {
    return a == AuxInput::learned_token ? "learned_token" : "zeros";
}

void ArchConfig::validate() const {
    if (input_dim == 0 || hidden_dim == 0 || n_hidden_layers == 0 || class_embed_dim == 0 || cond_dim == 0 ||
        n_classes == 0) {
        throw ConfigError("arch dimensions and layer counts must be >= 1");
    }
    if (time_feature_dim < 2 || time_feature_dim % 2 != 0) throw ConfigError("arch.time_feature_dim must be even and >= 2");
    if (aux) {
        if (aux->token_dim == 0 || aux->n_layers == 0 || aux->out_dim == 0) {
            throw ConfigError("arch.aux dimensions must be >= 1");
        }
    }
    const bool needs_aux = variant == Variant::full || variant == Variant::aux_zeroed_at_inference;
    if (needs_aux && !aux) throw ConfigError("variant '" + std::string(variant_name(variant)) + "' requires an aux branch");
    if (!needs_aux && aux) throw ConfigError("variant '" + std::string(variant_name(variant)) + "' must not carry an aux branch");
    if (variant == Variant::capacity_matched && !target_params) {
        throw ConfigError("capacity_matched arch must record target_params");
    }
}

namespace {

std::string layer_name(const char* prefix, std::size_t i) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%s%02zu", prefix, i);
    return buf;
}

std::string aux_layer(std::size_t k) { return layer_name("aux.layer", k); }
std::string block(std::size_t l) { return layer_name("trunk.block", l); }

void add_linear(ModelParams& p, const std::string& name, std::size_t out, std::size_t in, Rng& rng) {
    const double scale = std::sqrt(2.0 / static_cast<double>(in));
    Tensor w({out, in});
    for (auto& v : w.values()) v = scale * rng.normal();
    p.add(name + ".weight", std::move(w));
    p.add(name + ".bias", Tensor({out}));
}

std::size_t aux_width(const ArchConfig& a) { return a.aux ? a.aux->out_dim : 0; }

}  // namespace

std::size_t arch_param_count(const ArchConfig& a) {
    const std::size_t C = a.cond_dim, T = a.time_feature_dim, E = a.class_embed_dim, H = a.hidden_dim,
                      L = a.n_hidden_layers, d = a.input_dim, A = aux_width(a);
    std::size_t n = C * T + C;
    n += (a.n_classes + 1) * E;
    n += C * (E + A) + C;
    n += (H * d + H) + (L - 1) * (H * H + H) + L * (2 * H * C + 2 * H) + (d * H + d);
    if (a.aux) {
        const std::size_t K = a.aux->token_dim;
        if (a.aux->input == AuxInput::learned_token) n += K;
        n += A * K + A + (a.aux->n_layers - 1) * (A * A + A);
    }
    return n;
}

ModelParams build_model(const ArchConfig& arch, Rng& rng) {
    arch.validate();
    ModelParams p;
    const std::size_t C = arch.cond_dim, H = arch.hidden_dim, d = arch.input_dim;

    add_linear(p, "cond.time", C, arch.time_feature_dim, rng);
    Tensor table({arch.n_classes + 1, arch.class_embed_dim});
    for (auto& v : table.values()) v = 0.02 * rng.normal();
    p.add("cond.class_embed", std::move(table));
    add_linear(p, "cond.proj", C, arch.class_embed_dim + aux_width(arch), rng);

    for (std::size_t l = 0; l < arch.n_hidden_layers; ++l) {
        add_linear(p, block(l), H, l == 0 ? d : H, rng);
        add_linear(p, block(l) + ".film", 2 * H, C, rng);
    }
    add_linear(p, "trunk.out", d, H, rng);

    if (arch.aux) {
        const auto& aux = *arch.aux;
        if (aux.input == AuxInput::learned_token) {
            Tensor token({aux.token_dim});
            for (auto& v : token.values()) v = 0.02 * rng.normal();
            p.add("aux.token", std::move(token));
        }
        for (std::size_t k = 0; k < aux.n_layers; ++k) {
            add_linear(p, aux_layer(k), aux.out_dim, k == 0 ? aux.token_dim : aux.out_dim, rng);
        }
    }
    return p;
}

ArchConfig make_variant(const ArchConfig& arch_full, Variant which) {
    if (!arch_full.aux) throw ConfigError("make_variant: source arch has no aux branch");
    ArchConfig out = arch_full;
    out.variant = which;
    out.target_params.reset();
    switch (which) {
        case Variant::full:
        case Variant::aux_zeroed_at_inference:
            break;
        case Variant::aux_removed:
            out.aux.reset();
            break;
        case Variant::capacity_matched: {
            ArchConfig removed = make_variant(arch_full, Variant::aux_removed);
            ArchConfig full = arch_full;
            full.variant = Variant::full;
            return match_capacity(removed, arch_param_count(full));
        }
    }
    return out;
}

ArchConfig match_capacity(const ArchConfig& base, std::size_t target_params) {
    constexpr std::size_t kMaxLayers = 512;
    constexpr std::size_t kMaxWidth = 8192;
    const std::size_t base_count = arch_param_count(base);
    if (base_count > target_params) {
        throw ConfigError("match_capacity: base already has " + std::to_string(base_count) + " > target " +
                          std::to_string(target_params) + " parameters");
    }
    ArchConfig a = base;
    if (!a.aux) a.variant = Variant::capacity_matched;
    a.target_params = target_params;
    if (base_count == target_params) return a;

    auto grown = [&](std::size_t layers, std::size_t width) {
        ArchConfig c = a;
        c.n_hidden_layers = layers;
        c.hidden_dim = width;
        return arch_param_count(c);
    };
    while (a.n_hidden_layers < kMaxLayers && grown(a.n_hidden_layers + 1, a.hidden_dim) <= target_params) {
        ++a.n_hidden_layers;
    }
    while (a.hidden_dim < kMaxWidth && grown(a.n_hidden_layers, a.hidden_dim + 1) <= target_params) {
        ++a.hidden_dim;
    }
    const std::size_t realized = arch_param_count(a);
    if (static_cast<double>(realized) < 0.98 * static_cast<double>(target_params)) {
        throw ConfigError("match_capacity: best reachable count " + std::to_string(realized) + " is outside 2% of " +
                          std::to_string(target_params));
    }
    return a;
}

namespace {

struct NetCache final : ForwardCache {
    std::vector<double> t;
    Shape x_shape;
    bool aux_masked = false;

    LinearCache time_lin;
    EmbeddingCache embed;
    std::vector<LinearCache> aux_lin;
    std::vector<ActivationCache> aux_act;
    LinearCache proj;
    ActivationCache cond_act;

    std::vector<LinearCache> block_lin;
    std::vector<LinearCache> film_lin;
    std::vector<FilmCache> film;
    std::vector<ActivationCache> block_act;
    LinearCache out;
};

Tensor broadcast_row(const Tensor& row, std::size_t batch) {
    Tensor out({batch, row.cols()});
    for (std::size_t b = 0; b < batch; ++b) {
        std::copy(row.data().begin(), row.data().end(), out.row(b).begin());
    }
    return out;
}

void accumulate(ModelParams& grads, const std::string& name, const LinearGrads& g) {
    grads.at(name + ".weight") += g.weights;
    grads.at(name + ".bias") += g.bias;
}

}  // namespace

VelocityNet::VelocityNet(ArchConfig arch) : arch_(std::move(arch)) { arch_.validate(); }

bool VelocityNet::aux_masked(const ForwardOptions& opts) const {
    if (!arch_.aux) return true;
    if (opts.zero_aux) return true;
    return arch_.variant == Variant::aux_zeroed_at_inference && opts.phase == Phase::inference;
}

Tensor VelocityNet::aux_output(const ModelParams& params, const ForwardOptions& opts) const {
    const std::size_t A = aux_width(arch_);
    if (aux_masked(opts)) return Tensor({1, std::max<std::size_t>(A, 1)});
    const auto& aux = *arch_.aux;
    Tensor a({1, aux.token_dim});
    if (aux.input == AuxInput::learned_token) {
        const auto& tok = params.at("aux.token");
        std::copy(tok.data().begin(), tok.data().end(), a.data().begin());
    }
    for (std::size_t k = 0; k < aux.n_layers; ++k) {
        a = linear_forward(params.at(aux_layer(k) + ".weight"), params.at(aux_layer(k) + ".bias"), a);
        a = activation_forward(arch_.activation, a);
    }
    return a;
}

Tensor VelocityNet::forward(const ModelParams& params, const Tensor& x, std::span<const double> t,
                            std::span<const int> labels, const ForwardOptions& opts,
                            std::unique_ptr<ForwardCache>* cache_out) const {
    const std::size_t batch = x.rank() == 2 ? x.dim(0) : 0;
    if (x.rank() != 2 || x.dim(1) != arch_.input_dim || t.size() != batch || labels.size() != batch) {
        throw ShapeError("velocity_forward: x " + shape_str(x.shape()) + " with " + std::to_string(t.size()) +
                         " times and " + std::to_string(labels.size()) + " labels does not fit input_dim " +
                         std::to_string(arch_.input_dim));
    }
    for (int l : labels) {
        if (l < 0 || l > arch_.null_label()) throw std::out_of_range("velocity_forward: unknown label id " + std::to_string(l));
    }

    auto cache = std::make_unique<NetCache>();
    NetCache& c = *cache;
    c.t.assign(t.begin(), t.end());
    c.x_shape = x.shape();
    c.aux_masked = aux_masked(opts);
    const Activation act = arch_.activation;

    const Tensor phi = fourier_features(t, arch_.time_feature_dim);
    const Tensor te = linear_forward(params.at("cond.time.weight"), params.at("cond.time.bias"), phi, &c.time_lin);
    Tensor cat = embedding_forward(params.at("cond.class_embed"), labels, &c.embed);

    if (arch_.aux) {
        const auto& aux = *arch_.aux;
        Tensor a_row;
        if (c.aux_masked) {
            a_row = Tensor({1, aux.out_dim});
        } else {
            Tensor a({1, aux.token_dim});
            if (aux.input == AuxInput::learned_token) {
                const auto& tok = params.at("aux.token");
                std::copy(tok.data().begin(), tok.data().end(), a.data().begin());
            }
            c.aux_lin.resize(aux.n_layers);
            c.aux_act.resize(aux.n_layers);
            for (std::size_t k = 0; k < aux.n_layers; ++k) {
                a = linear_forward(params.at(aux_layer(k) + ".weight"), params.at(aux_layer(k) + ".bias"), a,
                                   &c.aux_lin[k]);
                a = activation_forward(act, a, &c.aux_act[k]);
            }
            a_row = std::move(a);
        }
        cat = concat_cols(cat, broadcast_row(a_row, batch));
    }

    Tensor pre = linear_forward(params.at("cond.proj.weight"), params.at("cond.proj.bias"), cat, &c.proj);
    pre += te;
    const Tensor z = activation_forward(act, pre, &c.cond_act);

    const std::size_t L = arch_.n_hidden_layers, H = arch_.hidden_dim;
    c.block_lin.resize(L);
    c.film_lin.resize(L);
    c.film.resize(L);
    c.block_act.resize(L);
    Tensor h = x;
    for (std::size_t l = 0; l < L; ++l) {
        const std::string name = block(l);
        Tensor u = linear_forward(params.at(name + ".weight"), params.at(name + ".bias"), h, &c.block_lin[l]);
        const Tensor fs =
            linear_forward(params.at(name + ".film.weight"), params.at(name + ".film.bias"), z, &c.film_lin[l]);
        u = film_forward(u, slice_cols(fs, 0, H), slice_cols(fs, H, 2 * H), &c.film[l]);
        h = activation_forward(act, u, &c.block_act[l]);
    }
    Tensor v = linear_forward(params.at("trunk.out.weight"), params.at("trunk.out.bias"), h, &c.out);

    if (cache_out) *cache_out = std::move(cache);
    return v;
}

Tensor VelocityNet::backward(const ModelParams& params, const ForwardCache& base_cache, const Tensor& grad_v,
                             ModelParams& grads) const {
    (void)params;
    const auto* cp = dynamic_cast<const NetCache*>(&base_cache);
    if (!cp) throw std::logic_error("VelocityNet::backward: cache was not produced by VelocityNet::forward");
    const NetCache& c = *cp;

    const LinearGrads g_out = linear_backward(c.out, grad_v);
    accumulate(grads, "trunk.out", g_out);
    Tensor g_h = g_out.input;

    Tensor g_z({c.x_shape[0], arch_.cond_dim});
    for (std::size_t l = arch_.n_hidden_layers; l-- > 0;) {
        const std::string name = block(l);
        const Tensor g_u = activation_backward(c.block_act[l], g_h);
        const FilmGrads g_film = film_backward(c.film[l], g_u);
        const LinearGrads g_fs = linear_backward(c.film_lin[l], concat_cols(g_film.scale, g_film.shift));
        accumulate(grads, name + ".film", g_fs);
        g_z += g_fs.input;
        const LinearGrads g_blk = linear_backward(c.block_lin[l], g_film.input);
        accumulate(grads, name, g_blk);
        g_h = g_blk.input;
    }

    const Tensor g_pre = activation_backward(c.cond_act, g_z);
    accumulate(grads, "cond.time", linear_backward(c.time_lin, g_pre));
    const LinearGrads g_proj = linear_backward(c.proj, g_pre);
    accumulate(grads, "cond.proj", g_proj);

    const std::size_t E = arch_.class_embed_dim;
    const Tensor g_embed = arch_.aux ? slice_cols(g_proj.input, 0, E) : g_proj.input;
    grads.at("cond.class_embed") += embedding_backward(c.embed, g_embed);

    if (arch_.aux && !c.aux_masked) {
        const auto& aux = *arch_.aux;
        const Tensor g_aux_b = slice_cols(g_proj.input, E, E + aux.out_dim);
        Tensor g_a({1, aux.out_dim});
        for (std::size_t b = 0; b < g_aux_b.dim(0); ++b) {
            for (std::size_t j = 0; j < aux.out_dim; ++j) g_a[j] += g_aux_b.at(b, j);
        }
        for (std::size_t k = aux.n_layers; k-- > 0;) {
            g_a = activation_backward(c.aux_act[k], g_a);
            const LinearGrads g_lin = linear_backward(c.aux_lin[k], g_a);
            accumulate(grads, aux_layer(k), g_lin);
            g_a = g_lin.input;
        }
        if (aux.input == AuxInput::learned_token) {
            Tensor& g_tok = grads.at("aux.token");
            for (std::size_t j = 0; j < aux.token_dim; ++j) g_tok[j] += g_a[j];
        }
    }
    return g_h;
}

}  // namespace fmlab
