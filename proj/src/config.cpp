#include "fmlab/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include "fmlab/errors.hpp"

namespace fmlab {

namespace {

// Strict reader over one JSON object: tracks consumed keys and rejects the rest.
class ObjectReader {
public:
    ObjectReader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
        if (!j_.is_object()) throw ConfigError(where() + " must be a JSON object");
    }

    template <class T>
    void get(const char* key, T& out) {
        if (!j_.contains(key)) return;
        seen_.insert(key);
        try {
            out = j_.at(key).get<T>();
        } catch (const json::exception& e) {
            throw ConfigError(where(key) + ": " + e.what());
        }
    }

    const json* child(const char* key) {
        if (!j_.contains(key)) return nullptr;
        seen_.insert(key);
        return &j_.at(key);
    }

    std::string where(const std::string& key = "") const {
        if (key.empty()) return path_.empty() ? "config" : path_;
        return path_.empty() ? key : path_ + "." + key;
    }

    void finish() const {
        for (auto it = j_.begin(); it != j_.end(); ++it) {
            if (!seen_.count(it.key())) throw ConfigError("unknown config key '" + where(it.key()) + "'");
        }
    }

private:
    const json& j_;
    std::string path_;
    std::set<std::string> seen_;
};

template <class Fn>
auto parse_enum(ObjectReader& r, const char* key, Fn fn, decltype(fn(std::string{})) fallback) {
    std::string name;
    r.get(key, name);
    return name.empty() ? fallback : fn(name);
}

json to_json(const GmmComponent& c) {
    return json{{"mean", c.mean}, {"stddev", c.stddev}, {"weight", c.weight}};
}

json to_json(const SequenceSpec& s) {
    json classes = json::array();
    for (const auto& c : s.classes) classes.push_back({{"frequency", c.frequency}, {"amplitude", c.amplitude}});
    return json{{"train_len", s.train_len}, {"window", s.window}, {"channels", s.channels},
                {"noise", s.noise}, {"classes", classes}};
}

SequenceSpec sequence_from_json(const json& j, const std::string& path) {
    SequenceSpec s;
    ObjectReader r(j, path);
    r.get("train_len", s.train_len);
    r.get("window", s.window);
    r.get("channels", s.channels);
    r.get("noise", s.noise);
    if (const json* cls = r.child("classes")) {
        if (!cls->is_array()) throw ConfigError(path + ".classes must be an array");
        s.classes.clear();
        for (std::size_t i = 0; i < cls->size(); ++i) {
            SequenceClass c;
            ObjectReader cr((*cls)[i], path + ".classes[" + std::to_string(i) + "]");
            cr.get("frequency", c.frequency);
            cr.get("amplitude", c.amplitude);
            cr.finish();
            s.classes.push_back(c);
        }
    }
    r.finish();
    return s;
}

GmmSpec gmm_from_json_at(const json& j, const std::string& path) {
    GmmSpec s;
    ObjectReader r(j, path);
    r.get("dim", s.dim);
    if (const json* cls = r.child("classes")) {
        if (!cls->is_array()) throw ConfigError(path + ".classes must be an array");
        s.classes.clear();
        for (std::size_t c = 0; c < cls->size(); ++c) {
            const json& comps = (*cls)[c];
            if (!comps.is_array()) throw ConfigError(path + ".classes[" + std::to_string(c) + "] must be an array");
            std::vector<GmmComponent> out;
            for (std::size_t k = 0; k < comps.size(); ++k) {
                GmmComponent g;
                ObjectReader cr(comps[k], path + ".classes[" + std::to_string(c) + "][" + std::to_string(k) + "]");
                cr.get("mean", g.mean);
                cr.get("stddev", g.stddev);
                cr.get("weight", g.weight);
                cr.finish();
                out.push_back(std::move(g));
            }
            s.classes.push_back(std::move(out));
        }
    }
    r.finish();
    return s;
}

ArchConfig arch_from_json_at(const json& j, const std::string& path) {
    ArchConfig a;
    ObjectReader r(j, path);
    r.get("input_dim", a.input_dim);
    r.get("hidden_dim", a.hidden_dim);
    r.get("n_hidden_layers", a.n_hidden_layers);
    r.get("time_feature_dim", a.time_feature_dim);
    r.get("class_embed_dim", a.class_embed_dim);
    r.get("cond_dim", a.cond_dim);
    r.get("n_classes", a.n_classes);
    a.activation = parse_enum(r, "activation", parse_activation, a.activation);
    a.variant = parse_enum(r, "variant", parse_variant, a.variant);
    if (const json* aux = r.child("aux")) {
        if (aux->is_null()) {
            a.aux.reset();
        } else {
            AuxConfig ac;
            ObjectReader ar(*aux, path + ".aux");
            ar.get("token_dim", ac.token_dim);
            ar.get("n_layers", ac.n_layers);
            ar.get("out_dim", ac.out_dim);
            ac.input = parse_enum(ar, "input", parse_aux_input, ac.input);
            ar.finish();
            a.aux = ac;
        }
    }
    if (const json* tp = r.child("target_params")) {
        if (tp->is_null()) {
            a.target_params.reset();
        } else {
            try {
                a.target_params = tp->get<std::size_t>();
            } catch (const json::exception& e) {
                throw ConfigError(path + ".target_params: " + e.what());
            }
        }
    }
    r.finish();
    return a;
}

TimestepSettings timesteps_from_json_at(const json& j, const std::string& path) {
    TimestepSettings s;
    ObjectReader r(j, path);
    r.get("adaptive", s.adaptive);
    r.get("n_bins", s.n_bins);
    r.get("beta", s.beta);
    r.get("temperature", s.temperature);
    r.get("uniform_floor", s.uniform_floor);
    r.get("min_count", s.min_count);
    r.get("fallback_mu", s.fallback_mu);
    r.get("fallback_sigma", s.fallback_sigma);
    r.get("fallback_mix", s.fallback_mix);
    r.finish();
    return s;
}

}  // namespace

json to_json(const GmmSpec& s) {
    json classes = json::array();
    for (const auto& comps : s.classes) {
        json arr = json::array();
        for (const auto& c : comps) arr.push_back(to_json(c));
        classes.push_back(arr);
    }
    return json{{"dim", s.dim}, {"classes", classes}};
}

GmmSpec gmm_from_json(const json& j) { return gmm_from_json_at(j, "gmm"); }

json to_json(const ArchConfig& a) {
    json j{{"input_dim", a.input_dim},
           {"hidden_dim", a.hidden_dim},
           {"n_hidden_layers", a.n_hidden_layers},
           {"time_feature_dim", a.time_feature_dim},
           {"class_embed_dim", a.class_embed_dim},
           {"cond_dim", a.cond_dim},
           {"n_classes", a.n_classes},
           {"activation", activation_name(a.activation)},
           {"variant", variant_name(a.variant)}};
    if (a.aux) {
        j["aux"] = {{"token_dim", a.aux->token_dim},
                    {"n_layers", a.aux->n_layers},
                    {"out_dim", a.aux->out_dim},
                    {"input", aux_input_name(a.aux->input)}};
    } else {
        j["aux"] = nullptr;
    }
    j["target_params"] = a.target_params ? json(*a.target_params) : json(nullptr);
    return j;
}

ArchConfig arch_from_json(const json& j) { return arch_from_json_at(j, "arch"); }

json to_json(const TimestepSettings& s) {
    return json{{"adaptive", s.adaptive},
                {"n_bins", s.n_bins},
                {"beta", s.beta},
                {"temperature", s.temperature},
                {"uniform_floor", s.uniform_floor},
                {"min_count", s.min_count},
                {"fallback_mu", s.fallback_mu},
                {"fallback_sigma", s.fallback_sigma},
                {"fallback_mix", s.fallback_mix}};
}

TimestepSettings timestep_settings_from_json(const json& j) { return timesteps_from_json_at(j, "timesteps"); }

json to_json(const RunConfig& c) {
    json dataset{{"kind", c.dataset.kind == DatasetKind::gmm ? "gmm" : "sequence"},
                 {"n_per_class", c.dataset.n_per_class},
                 {"val_frac", c.dataset.val_frac}};
    if (c.dataset.kind == DatasetKind::gmm) {
        dataset["gmm"] = to_json(c.dataset.gmm);
    } else {
        dataset["sequence"] = to_json(c.dataset.sequence);
    }
    const auto& t = c.training;
    json training{{"steps", t.steps},
                  {"batch", t.batch},
                  {"accum", t.accum},
                  {"lr_base", t.adam.lr_base},
                  {"weight_decay", t.adam.weight_decay},
                  {"betas", {t.adam.beta1, t.adam.beta2}},
                  {"adam_eps", t.adam.eps},
                  {"warmup", t.warmup},
                  {"clamp", t.clamp},
                  {"cfg_dropout", t.cfg_dropout},
                  {"gamma", t.gamma},
                  {"min_snr", t.min_snr},
                  {"random_crop", t.random_crop}};
    json j{{"run_id", c.run_id},
           {"seed", c.seed},
           {"dataset", dataset},
           {"arch", to_json(c.arch)},
           {"training", training},
           {"timesteps", to_json(c.timesteps)},
           {"snapshots", {{"every", c.snapshots.every}, {"rel_tol", c.snapshots.rel_tol}, {"min_frac", c.snapshots.min_frac}}},
           {"eval", {{"every", c.eval.every}, {"n_per_class", c.eval.n_per_class}, {"seed", c.eval.seed}}},
           {"generation",
            {{"steps", c.generation.steps},
             {"interval", {c.generation.t_lo, c.generation.t_hi}},
             {"cfg_scale", c.generation.cfg_scale},
             {"submit_scales", c.generation.submit_scales}}}};
    if (!c.comment.empty()) j["comment"] = c.comment;
    return j;
}

RunConfig run_config_from_json(const json& j) {
    RunConfig c;
    ObjectReader r(j, "");
    r.get("run_id", c.run_id);
    r.get("comment", c.comment);
    r.get("seed", c.seed);

    if (const json* d = r.child("dataset")) {
        ObjectReader dr(*d, "dataset");
        std::string kind = "gmm";
        dr.get("kind", kind);
        if (kind == "gmm") {
            c.dataset.kind = DatasetKind::gmm;
        } else if (kind == "sequence") {
            c.dataset.kind = DatasetKind::sequence;
        } else {
            throw ConfigError("dataset.kind must be gmm|sequence, got '" + kind + "'");
        }
        dr.get("n_per_class", c.dataset.n_per_class);
        dr.get("val_frac", c.dataset.val_frac);
        if (const json* g = dr.child("gmm")) c.dataset.gmm = gmm_from_json_at(*g, "dataset.gmm");
        if (const json* s = dr.child("sequence")) c.dataset.sequence = sequence_from_json(*s, "dataset.sequence");
        dr.finish();
    }
    if (const json* a = r.child("arch")) c.arch = arch_from_json_at(*a, "arch");
    if (const json* t = r.child("training")) {
        ObjectReader tr(*t, "training");
        auto& tc = c.training;
        tr.get("steps", tc.steps);
        tr.get("batch", tc.batch);
        tr.get("accum", tc.accum);
        tr.get("lr_base", tc.adam.lr_base);
        tr.get("weight_decay", tc.adam.weight_decay);
        std::vector<double> betas{tc.adam.beta1, tc.adam.beta2};
        tr.get("betas", betas);
        if (betas.size() != 2) throw ConfigError("training.betas must have two entries");
        tc.adam.beta1 = betas[0];
        tc.adam.beta2 = betas[1];
        tr.get("adam_eps", tc.adam.eps);
        tr.get("warmup", tc.warmup);
        tr.get("clamp", tc.clamp);
        tr.get("cfg_dropout", tc.cfg_dropout);
        tr.get("gamma", tc.gamma);
        tr.get("min_snr", tc.min_snr);
        tr.get("random_crop", tc.random_crop);
        std::string comment;
        tr.get("comment", comment);
        tr.finish();
    }
    if (const json* t = r.child("timesteps")) c.timesteps = timesteps_from_json_at(*t, "timesteps");
    if (const json* s = r.child("snapshots")) {
        ObjectReader sr(*s, "snapshots");
        sr.get("every", c.snapshots.every);
        sr.get("rel_tol", c.snapshots.rel_tol);
        sr.get("min_frac", c.snapshots.min_frac);
        sr.finish();
    }
    if (const json* e = r.child("eval")) {
        ObjectReader er(*e, "eval");
        er.get("every", c.eval.every);
        er.get("n_per_class", c.eval.n_per_class);
        er.get("seed", c.eval.seed);
        er.finish();
    }
    if (const json* g = r.child("generation")) {
        ObjectReader gr(*g, "generation");
        gr.get("steps", c.generation.steps);
        std::vector<double> interval{c.generation.t_lo, c.generation.t_hi};
        gr.get("interval", interval);
        if (interval.size() != 2) throw ConfigError("generation.interval must have two entries");
        c.generation.t_lo = interval[0];
        c.generation.t_hi = interval[1];
        gr.get("cfg_scale", c.generation.cfg_scale);
        gr.get("submit_scales", c.generation.submit_scales);
        gr.finish();
    }
    r.finish();
    c.validate();
    return c;
}

void RunConfig::validate() const {
    if (run_id.empty()) throw ConfigError("run_id must be non-empty");
    if (run_id.find_first_of("/\\") != std::string::npos) throw ConfigError("run_id must not contain path separators");
    if (dataset.kind == DatasetKind::gmm) {
        dataset.gmm.validate();
    } else {
        dataset.sequence.validate();
    }
    if (dataset.n_per_class < 1) throw ConfigError("dataset.n_per_class must be >= 1");
    if (!(dataset.val_frac > 0.0 && dataset.val_frac < 1.0)) throw ConfigError("dataset.val_frac must lie in (0, 1)");
    arch.validate();
    if (arch.input_dim != dataset.sample_dim()) {
        throw ConfigError("arch.input_dim " + std::to_string(arch.input_dim) + " does not match dataset sample width " +
                          std::to_string(dataset.sample_dim()));
    }
    if (arch.n_classes != dataset.n_classes()) {
        throw ConfigError("arch.n_classes " + std::to_string(arch.n_classes) + " does not match dataset class count " +
                          std::to_string(dataset.n_classes()));
    }
    training.validate();
    timesteps.validate();
    if (snapshots.every < 1) throw ConfigError("snapshots.every must be >= 1");
    if (!(snapshots.rel_tol >= 0.0)) throw ConfigError("snapshots.rel_tol must be >= 0");
    if (!(snapshots.min_frac >= 0.0 && snapshots.min_frac <= 1.0)) throw ConfigError("snapshots.min_frac must lie in [0, 1]");
    if (eval.every < 1) throw ConfigError("eval.every must be >= 1");
    if (eval.n_per_class < 1) throw ConfigError("eval.n_per_class must be >= 1");
    if (generation.steps < 1) throw ConfigError("generation.steps must be >= 1");
    if (!(generation.t_lo >= 0.0 && generation.t_lo <= generation.t_hi && generation.t_hi <= 1.0)) {
        throw ConfigError("generation.interval must satisfy 0 <= lo <= hi <= 1");
    }
    if (!(generation.cfg_scale >= 0.0)) throw ConfigError("generation.cfg_scale must be >= 0");
}

RunConfig load_run_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config '" + path.string() + "'");
    json j;
    try {
        j = json::parse(in);
    } catch (const json::parse_error& e) {
        throw ConfigError("config '" + path.string() + "' is not valid JSON: " + e.what());
    }
    return run_config_from_json(j);
}

void apply_override(json& config, const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + assignment + "' must look like key.path=value");
    const std::string path = assignment.substr(0, eq);
    const std::string raw = assignment.substr(eq + 1);
    json value;
    try {
        value = json::parse(raw);
    } catch (const json::parse_error&) {
        value = raw;
    }
    json* node = &config;
    std::stringstream ss(path);
    std::string part;
    std::vector<std::string> parts;
    while (std::getline(ss, part, '.')) parts.push_back(part);
    for (std::size_t i = 0; i + 1 < parts.size(); ++i) {
        if (!node->is_object()) throw ConfigError("override path '" + path + "' crosses a non-object");
        node = &(*node)[parts[i]];
        if (node->is_null()) *node = json::object();
    }
    (*node)[parts.back()] = value;
}

namespace {
void diff_into(const json& a, const json& b, const std::string& prefix, std::vector<std::string>& out) {
    if (a.is_object() && b.is_object()) {
        std::set<std::string> keys;
        for (auto it = a.begin(); it != a.end(); ++it) keys.insert(it.key());
        for (auto it = b.begin(); it != b.end(); ++it) keys.insert(it.key());
        for (const auto& k : keys) {
            const std::string p = prefix.empty() ? k : prefix + "." + k;
            if (!a.contains(k) || !b.contains(k)) {
                out.push_back(p);
            } else {
                diff_into(a.at(k), b.at(k), p, out);
            }
        }
        return;
    }
    if (a != b) out.push_back(prefix);
}
}  // namespace

std::vector<std::string> json_diff_paths(const json& a, const json& b) {
    std::vector<std::string> out;
    diff_into(a, b, "", out);
    return out;
}

}  // namespace fmlab
