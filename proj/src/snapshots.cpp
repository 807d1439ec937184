#include "fmlab/snapshots.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <iterator>
#include <map>
#include <set>

#include "fmlab/config.hpp"

namespace fmlab {

namespace {

constexpr char kMagic[8] = {'F', 'M', 'C', 'K', 'P', 'T', '1', '\0'};

class ByteWriter {
public:
    void raw(const void* p, std::size_t n) {
        const auto* b = static_cast<const std::uint8_t*>(p);
        out_.insert(out_.end(), b, b + n);
    }
    template <class T>
    void le(T value) {
        using U = std::make_unsigned_t<T>;
        auto u = static_cast<U>(value);
        for (std::size_t i = 0; i < sizeof(T); ++i) {
            out_.push_back(static_cast<std::uint8_t>(u & 0xFF));
            u = static_cast<U>(u >> 8);
        }
    }
    void f64(double v) { le(std::bit_cast<std::uint64_t>(v)); }
    std::vector<std::uint8_t> take() { return std::move(out_); }

private:
    std::vector<std::uint8_t> out_;
};

class ByteReader {
public:
    explicit ByteReader(const std::vector<std::uint8_t>& in) : in_(in) {}

    void need(std::size_t n, const char* what) const {
        if (in_.size() - pos_ < n) {
            throw CheckpointError(CheckpointErrorKind::truncated,
                                  std::string("checkpoint truncated while reading ") + what);
        }
    }
    template <class T>
    T le(const char* what) {
        need(sizeof(T), what);
        std::make_unsigned_t<T> u = 0;
        for (std::size_t i = 0; i < sizeof(T); ++i) {
            u |= static_cast<std::make_unsigned_t<T>>(static_cast<std::make_unsigned_t<T>>(in_[pos_ + i]) << (8 * i));
        }
        pos_ += sizeof(T);
        return static_cast<T>(u);
    }
    double f64(const char* what) { return std::bit_cast<double>(le<std::uint64_t>(what)); }
    std::string str(std::size_t n, const char* what) {
        need(n, what);
        std::string s(reinterpret_cast<const char*>(in_.data() + pos_), n);
        pos_ += n;
        return s;
    }
    std::size_t remaining() const { return in_.size() - pos_; }

private:
    const std::vector<std::uint8_t>& in_;
    std::size_t pos_ = 0;
};

json sampler_to_json(const TimestepSamplerState& s) {
    return json{{"settings", to_json(s.settings)}, {"ema", s.ema}, {"counts", s.counts}};
}

TimestepSamplerState sampler_from_json(const json& j) {
    TimestepSamplerState s;
    s.settings = timestep_settings_from_json(j.at("settings"));
    s.ema = j.at("ema").get<std::vector<double>>();
    s.counts = j.at("counts").get<std::vector<std::int64_t>>();
    if (s.ema.size() != static_cast<std::size_t>(s.settings.n_bins) || s.counts.size() != s.ema.size()) {
        throw CheckpointError(CheckpointErrorKind::bad_metadata, "sampler state length does not match n_bins");
    }
    return s;
}

json hyper_to_json(const OptimizerState& o) {
    return json{{"step", o.step},
                {"lr_base", o.hyper.lr_base},
                {"weight_decay", o.hyper.weight_decay},
                {"beta1", o.hyper.beta1},
                {"beta2", o.hyper.beta2},
                {"eps", o.hyper.eps}};
}

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& c) {
    std::map<std::string, const Tensor*> tensors;
    for (const auto& [name, t] : c.params) tensors.emplace("param/" + name, &t);
    if (c.opt_state) {
        for (const auto& [name, t] : c.opt_state->m) tensors.emplace("adam_m/" + name, &t);
        for (const auto& [name, t] : c.opt_state->v) tensors.emplace("adam_v/" + name, &t);
    }

    ByteWriter w;
    w.raw(kMagic, sizeof kMagic);
    w.le(static_cast<std::uint32_t>(tensors.size()));
    for (const auto& [name, t] : tensors) {
        if (name.size() > 0xFFFF) throw CheckpointError(CheckpointErrorKind::bad_metadata, "tensor name too long");
        w.le(static_cast<std::uint16_t>(name.size()));
        w.raw(name.data(), name.size());
        w.le(static_cast<std::uint8_t>(t->rank()));
        for (auto d : t->shape()) w.le(static_cast<std::uint64_t>(d));
        for (double v : t->data()) w.f64(v);
    }

    json meta{{"format", "fmc/1"}, {"step", c.step}, {"run_id", c.run_id}, {"arch", to_json(c.arch)}};
    meta["optimizer"] = c.opt_state ? hyper_to_json(*c.opt_state) : json(nullptr);
    meta["sampler"] = c.sampler_state ? sampler_to_json(*c.sampler_state) : json(nullptr);
    meta["extra"] = c.extra;
    const std::string text = meta.dump();
    w.le(static_cast<std::uint32_t>(text.size()));
    w.raw(text.data(), text.size());
    return w.take();
}

Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes) {
    if (bytes.size() < sizeof kMagic || std::memcmp(bytes.data(), kMagic, sizeof kMagic) != 0) {
        throw CheckpointError(CheckpointErrorKind::bad_magic, "not an .fmc checkpoint (bad magic)");
    }
    ByteReader r(bytes);
    r.str(sizeof kMagic, "magic");
    const auto count = r.le<std::uint32_t>("tensor count");

    std::map<std::string, Tensor> tensors;
    for (std::uint32_t k = 0; k < count; ++k) {
        const auto name_len = r.le<std::uint16_t>("name length");
        std::string name = r.str(name_len, "tensor name");
        const auto rank = r.le<std::uint8_t>("rank");
        Shape shape(rank);
        std::size_t numel = 1;
        for (auto& d : shape) {
            d = static_cast<std::size_t>(r.le<std::uint64_t>("dims"));
            if (d == 0) throw CheckpointError(CheckpointErrorKind::bad_metadata, "zero dimension in '" + name + "'");
            numel *= d;
        }
        if (rank == 0) throw CheckpointError(CheckpointErrorKind::bad_metadata, "rank-0 tensor '" + name + "'");
        r.need(numel * 8, "tensor payload");
        std::vector<double> data(numel);
        for (auto& v : data) v = r.f64("tensor payload");
        if (tensors.count(name)) {
            throw CheckpointError(CheckpointErrorKind::duplicate_name, "duplicate tensor name '" + name + "'");
        }
        tensors.emplace(std::move(name), Tensor(std::move(shape), std::move(data)));
    }
    const auto meta_len = r.le<std::uint32_t>("metadata length");
    const std::string text = r.str(meta_len, "metadata");

    Checkpoint c;
    try {
        const json meta = json::parse(text);
        c.step = meta.at("step").get<std::int64_t>();
        c.run_id = meta.at("run_id").get<std::string>();
        c.arch = arch_from_json(meta.at("arch"));
        if (!meta.at("sampler").is_null()) c.sampler_state = sampler_from_json(meta.at("sampler"));
        c.extra = meta.at("extra");
        const json& opt = meta.at("optimizer");
        if (!opt.is_null()) {
            OptimizerState o;
            o.step = opt.at("step").get<std::int64_t>();
            o.hyper = AdamWHyper{opt.at("lr_base").get<double>(), opt.at("weight_decay").get<double>(),
                                 opt.at("beta1").get<double>(), opt.at("beta2").get<double>(),
                                 opt.at("eps").get<double>()};
            c.opt_state = std::move(o);
        }
    } catch (const json::exception& e) {
        throw CheckpointError(CheckpointErrorKind::bad_metadata, std::string("bad checkpoint metadata: ") + e.what());
    } catch (const ConfigError& e) {
        throw CheckpointError(CheckpointErrorKind::bad_metadata, std::string("bad checkpoint metadata: ") + e.what());
    }

    for (auto& [name, t] : tensors) {
        const auto slash = name.find('/');
        const std::string kind = name.substr(0, slash);
        const std::string pname = slash == std::string::npos ? "" : name.substr(slash + 1);
        if (kind == "param") {
            c.params.add(pname, std::move(t));
        } else if ((kind == "adam_m" || kind == "adam_v") && c.opt_state) {
            (kind == "adam_m" ? c.opt_state->m : c.opt_state->v).add(pname, std::move(t));
        } else {
            throw CheckpointError(CheckpointErrorKind::bad_metadata, "unexpected tensor '" + name + "'");
        }
    }
    return c;
}

void write_checkpoint(const Checkpoint& c, const std::filesystem::path& path) {
    const auto bytes = encode_checkpoint(c);
    const auto tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw CheckpointError(CheckpointErrorKind::io, "cannot open '" + tmp + "' for writing");
        out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
        if (!out) throw CheckpointError(CheckpointErrorKind::io, "write failed for '" + tmp + "'");
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) throw CheckpointError(CheckpointErrorKind::io, "cannot move checkpoint into '" + path.string() + "'");
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw CheckpointError(CheckpointErrorKind::io, "cannot open checkpoint '" + path.string() + "'");
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return decode_checkpoint(bytes);
}

std::string snapshot_filename(std::int64_t step) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "ckpt_%09lld.fmc", static_cast<long long>(step));
    return buf;
}

SnapshotStore::SnapshotStore(std::filesystem::path dir) : dir_(std::move(dir)) {
    std::error_code ec;
    std::filesystem::create_directories(dir_, ec);
    if (ec) throw IoError("cannot create snapshot directory '" + dir_.string() + "': " + ec.message());
    for (const auto& entry : std::filesystem::directory_iterator(dir_)) {
        const std::string name = entry.path().filename().string();
        if (name.size() != 18 || name.rfind("ckpt_", 0) != 0 || name.substr(14) != ".fmc") continue;
        const std::string digits = name.substr(5, 9);
        if (!std::all_of(digits.begin(), digits.end(), [](char ch) { return ch >= '0' && ch <= '9'; })) continue;
        index_.emplace_back(std::stoll(digits), name);
    }
    std::sort(index_.begin(), index_.end());
}

std::vector<std::int64_t> SnapshotStore::steps() const {
    std::vector<std::int64_t> out;
    for (const auto& [step, name] : index_) out.push_back(step);
    return out;
}

std::filesystem::path SnapshotStore::put(const Checkpoint& c) {
    const std::string name = snapshot_filename(c.step);
    const auto path = dir_ / name;
    write_checkpoint(c, path);
    auto it = std::lower_bound(index_.begin(), index_.end(), std::make_pair(c.step, std::string{}));
    if (it != index_.end() && it->first == c.step) {
        it->second = name;
    } else {
        index_.insert(it, {c.step, name});
    }
    return path;
}

std::optional<std::filesystem::path> record_snapshot(SnapshotStore& store, const Checkpoint& c, std::int64_t every) {
    if (every < 1) throw std::invalid_argument("record_snapshot: every must be >= 1");
    if (c.step % every != 0) return std::nullopt;
    return store.put(c);
}

namespace {

// Running mean: mean += (x - mean) / k. Identical inputs leave it untouched.
void fold_into_mean(ModelParams& mean, const ModelParams& x, std::size_t k) {
    if (x.size() != mean.size()) throw ShapeError("average: snapshots hold different parameter sets");
    const double inv = 1.0 / static_cast<double>(k);
    for (auto& [name, m] : mean) {
        const Tensor& t = x.at(name);
        require_same_shape(m, t, "posthoc average");
        auto md = m.data();
        const auto td = t.data();
        for (std::size_t i = 0; i < md.size(); ++i) md[i] += (td[i] - md[i]) * inv;
    }
}

}  // namespace

ModelParams average_params(const std::vector<ModelParams>& items) {
    if (items.empty()) throw std::invalid_argument("average_params: nothing to average");
    ModelParams mean = items.front();
    for (std::size_t k = 1; k < items.size(); ++k) fold_into_mean(mean, items[k], k + 1);
    return mean;
}

AveragedParams posthoc_average(const SnapshotStore& store, std::int64_t from_step, std::int64_t to_step) {
    AveragedParams out;
    std::optional<ModelParams> acc;
    for (const auto& [step, name] : store.index()) {
        if (step < from_step || step > to_step) continue;
        Checkpoint c = read_checkpoint(store.directory() / name);
        out.steps.push_back(step);
        if (!acc) {
            acc = std::move(c.params);
            out.arch = c.arch;
        } else {
            fold_into_mean(*acc, c.params, out.steps.size());
        }
    }
    if (!acc) {
        std::string avail;
        for (auto s : store.steps()) avail += (avail.empty() ? "" : ", ") + std::to_string(s);
        throw EmptyWindowError("no snapshots in [" + std::to_string(from_step) + ", " + std::to_string(to_step) +
                               "]; available steps: " + (avail.empty() ? "(none)" : avail));
    }
    out.params = std::move(*acc);
    return out;
}

StableWindow detect_stable_window(const std::vector<std::pair<std::int64_t, double>>& val_curve, double rel_tol,
                                  double min_frac) {
    if (val_curve.empty()) throw std::invalid_argument("detect_stable_window: empty curve");
    auto curve = val_curve;
    std::sort(curve.begin(), curve.end());
    const std::int64_t first = curve.front().first;
    const std::int64_t last = curve.back().first;

    // Extending a suffix can only widen (max - min) and lower min, so the
    // admissible suffixes are exactly those starting at or after `start`.
    std::size_t start = curve.size() - 1;
    double lo = curve.back().second, hi = lo;
    for (std::size_t i = curve.size() - 1; i-- > 0;) {
        const double nlo = std::min(lo, curve[i].second);
        const double nhi = std::max(hi, curve[i].second);
        const double spread = nhi - nlo;
        const bool ok = spread == 0.0 || (nlo > 0.0 && spread / nlo <= rel_tol);
        if (!ok) break;
        lo = nlo;
        hi = nhi;
        start = i;
    }

    const double range = static_cast<double>(last - first);
    const double span = static_cast<double>(last - curve[start].first);
    if (range == 0.0 || span >= min_frac * range) return {curve[start].first, last, false};

    const double cutoff = static_cast<double>(last) - 0.3 * range;
    for (const auto& [step, loss] : curve) {
        if (static_cast<double>(step) >= cutoff) return {step, last, true};
    }
    return {last, last, true};
}

}  // namespace fmlab
