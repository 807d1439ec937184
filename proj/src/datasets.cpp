#include "fmlab/datasets.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>
#include <string>

#include "fmlab/errors.hpp"

namespace fmlab {

void GmmSpec::validate() const {
    if (dim == 0) throw ConfigError("gmm.dim must be >= 1");
    if (classes.empty()) throw ConfigError("gmm needs at least one class");
    for (std::size_t c = 0; c < classes.size(); ++c) {
        const auto& comps = classes[c];
        if (comps.empty()) throw ConfigError("gmm class " + std::to_string(c) + " has no components");
        double total = 0.0;
        for (const auto& comp : comps) {
            if (comp.mean.size() != dim || comp.stddev.size() != dim) {
                throw ConfigError("gmm class " + std::to_string(c) + ": component mean/stddev length != dim");
            }
            for (double s : comp.stddev) {
                if (!(s > 0.0)) throw ConfigError("gmm class " + std::to_string(c) + ": stddev must be > 0");
            }
            if (!(comp.weight > 0.0)) throw ConfigError("gmm class " + std::to_string(c) + ": weight must be > 0");
            total += comp.weight;
        }
        if (std::abs(total - 1.0) > 1e-9) {
            throw ConfigError("gmm class " + std::to_string(c) + ": component weights sum to " + std::to_string(total));
        }
    }
}

GmmSpec GmmSpec::four_corners() {
    GmmSpec spec;
    spec.dim = 2;
    const double corners[4][2] = {{-3.0, -3.0}, {3.0, -3.0}, {-3.0, 3.0}, {3.0, 3.0}};
    for (const auto& m : corners) spec.classes.push_back({GmmComponent{{m[0], m[1]}, {0.5, 0.5}, 1.0}});
    return spec;
}

namespace {

void draw_gmm_row(const GmmSpec& spec, int label, Rng& rng, std::span<double> out) {
    const auto& comps = spec.classes[static_cast<std::size_t>(label)];
    const double u = rng.uniform();
    std::size_t pick = comps.size() - 1;
    double acc = 0.0;
    for (std::size_t k = 0; k < comps.size(); ++k) {
        acc += comps[k].weight;
        if (u < acc) {
            pick = k;
            break;
        }
    }
    const auto& comp = comps[pick];
    for (std::size_t j = 0; j < spec.dim; ++j) out[j] = rng.normal(comp.mean[j], comp.stddev[j]);
}

double log_component_density(const GmmComponent& comp, std::span<const double> x) {
    double lp = std::log(comp.weight);
    for (std::size_t j = 0; j < x.size(); ++j) {
        const double z = (x[j] - comp.mean[j]) / comp.stddev[j];
        lp += -0.5 * z * z - std::log(comp.stddev[j]) - 0.5 * std::log(2.0 * std::numbers::pi);
    }
    return lp;
}

double log_sum_exp(const std::vector<double>& v) {
    const double top = *std::max_element(v.begin(), v.end());
    if (!std::isfinite(top)) return top;
    double s = 0.0;
    for (double a : v) s += std::exp(a - top);
    return top + std::log(s);
}

}  // namespace

Tensor sample_gmm_class(const GmmSpec& spec, int label, std::size_t n, Rng& rng) {
    if (label < 0 || static_cast<std::size_t>(label) >= spec.n_classes()) {
        throw std::out_of_range("gmm label " + std::to_string(label) + " out of range");
    }
    Tensor x({n, spec.dim});
    for (std::size_t i = 0; i < n; ++i) draw_gmm_row(spec, label, rng, x.row(i));
    return x;
}

LabeledSet make_gmm_dataset(const GmmSpec& spec, std::size_t n_per_class, Rng& rng) {
    spec.validate();
    if (n_per_class == 0) throw std::invalid_argument("make_gmm_dataset: n_per_class must be >= 1");
    const std::size_t n = n_per_class * spec.n_classes();
    LabeledSet set{Tensor({n, spec.dim}), std::vector<int>(n)};
    std::size_t r = 0;
    for (std::size_t c = 0; c < spec.n_classes(); ++c) {
        for (std::size_t i = 0; i < n_per_class; ++i, ++r) {
            set.labels[r] = static_cast<int>(c);
            draw_gmm_row(spec, static_cast<int>(c), rng, set.x.row(r));
        }
    }
    return set;
}

std::vector<double> bayes_class_posterior(const GmmSpec& spec, std::span<const double> x) {
    if (x.size() != spec.dim) throw ShapeError("bayes_class_posterior: point has wrong dimension");
    for (double v : x) {
        if (!std::isfinite(v)) throw NumericError("bayes_class_posterior: non-finite point");
    }
    std::vector<double> logp(spec.n_classes());
    std::vector<double> terms;
    for (std::size_t c = 0; c < spec.n_classes(); ++c) {
        terms.clear();
        for (const auto& comp : spec.classes[c]) terms.push_back(log_component_density(comp, x));
        logp[c] = log_sum_exp(terms);
    }
    const double norm = log_sum_exp(logp);
    std::vector<double> post(logp.size());
    for (std::size_t c = 0; c < post.size(); ++c) post[c] = std::exp(logp[c] - norm);
    return post;
}

int bayes_classify(const GmmSpec& spec, std::span<const double> x) {
    const auto post = bayes_class_posterior(spec, x);
    return static_cast<int>(std::max_element(post.begin(), post.end()) - post.begin());
}

void SequenceSpec::validate() const {
    if (window == 0 || train_len == 0 || channels == 0) throw ConfigError("sequence lengths must be >= 1");
    if (window > train_len) throw ConfigError("sequence.window must not exceed sequence.train_len");
    if (classes.empty()) throw ConfigError("sequence spec needs at least one class");
    if (!(noise >= 0.0)) throw ConfigError("sequence.noise must be >= 0");
}

SequenceSpec SequenceSpec::default_spec() {
    SequenceSpec spec;
    spec.classes = {{1.0, 1.0}, {2.0, 1.0}, {3.0, 0.8}, {5.0, 0.6}};
    return spec;
}

LabeledSet make_sequence_dataset(const SequenceSpec& spec, std::size_t n_per_class, Rng& rng) {
    spec.validate();
    if (n_per_class == 0) throw std::invalid_argument("make_sequence_dataset: n_per_class must be >= 1");
    const std::size_t n = n_per_class * spec.n_classes();
    const std::size_t row_len = spec.train_len * spec.channels;
    LabeledSet set{Tensor({n, row_len}), std::vector<int>(n)};
    std::size_t r = 0;
    for (std::size_t c = 0; c < spec.n_classes(); ++c) {
        const auto& cls = spec.classes[c];
        const double omega = 2.0 * std::numbers::pi * cls.frequency / static_cast<double>(spec.window);
        for (std::size_t i = 0; i < n_per_class; ++i, ++r) {
            set.labels[r] = static_cast<int>(c);
            auto row = set.x.row(r);
            for (std::size_t ch = 0; ch < spec.channels; ++ch) {
                const double phase = 2.0 * std::numbers::pi * rng.uniform();
                for (std::size_t k = 0; k < spec.train_len; ++k) {
                    row[k * spec.channels + ch] =
                        cls.amplitude * std::sin(omega * static_cast<double>(k) + phase) + spec.noise * rng.normal();
                }
            }
        }
    }
    return set;
}

Tensor crop_at(const Tensor& seq, std::size_t window, std::size_t offset) {
    if (seq.rank() != 2) throw ShapeError("crop expects a [L x d] sequence, got " + shape_str(seq.shape()));
    const std::size_t len = seq.dim(0);
    if (window > len) {
        throw std::invalid_argument("crop window " + std::to_string(window) + " exceeds sequence length " +
                                    std::to_string(len));
    }
    if (offset > len - window) throw std::out_of_range("crop offset past the end of the sequence");
    const std::size_t d = seq.dim(1);
    Tensor out({window, d});
    const auto src = seq.data().subspan(offset * d, window * d);
    std::copy(src.begin(), src.end(), out.data().begin());
    return out;
}

Tensor random_crop(const Tensor& seq, std::size_t window, Rng& rng) {
    if (seq.rank() != 2) throw ShapeError("crop expects a [L x d] sequence, got " + shape_str(seq.shape()));
    if (window > seq.dim(0)) {
        throw std::invalid_argument("crop window " + std::to_string(window) + " exceeds sequence length " +
                                    std::to_string(seq.dim(0)));
    }
    const auto offset = static_cast<std::size_t>(rng.below(seq.dim(0) - window + 1));
    return crop_at(seq, window, offset);
}

LabeledSet select_rows(const LabeledSet& data, std::span<const std::size_t> rows) {
    if (rows.empty()) throw std::invalid_argument("select_rows: empty row selection");
    LabeledSet out{Tensor({rows.size(), data.x.cols()}), {}};
    out.labels.reserve(rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        auto src = data.x.row(rows[i]);
        std::copy(src.begin(), src.end(), out.x.row(i).begin());
        out.labels.push_back(data.labels[rows[i]]);
    }
    return out;
}

std::pair<LabeledSet, LabeledSet> split_train_val(const LabeledSet& data, double frac, Rng& rng) {
    if (!(frac > 0.0 && frac < 1.0)) throw std::invalid_argument("split_train_val: frac must lie in (0, 1)");
    const std::size_t n = data.size();
    const auto n_val = static_cast<std::size_t>(std::llround(frac * static_cast<double>(n)));
    if (n_val == 0 || n_val >= n) {
        throw std::invalid_argument("split_train_val: frac " + std::to_string(frac) + " of " + std::to_string(n) +
                                    " rows leaves an empty side");
    }
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    for (std::size_t i = n - 1; i > 0; --i) std::swap(perm[i], perm[rng.below(i + 1)]);

    std::vector<std::size_t> val(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(n_val));
    std::vector<std::size_t> train(perm.begin() + static_cast<std::ptrdiff_t>(n_val), perm.end());
    std::sort(val.begin(), val.end());
    std::sort(train.begin(), train.end());
    return {select_rows(data, train), select_rows(data, val)};
}

DatasetBatchSource::DatasetBatchSource(LabeledSet data, std::size_t n_classes)
    : data_(std::move(data)), n_classes_(n_classes) {
    if (data_.size() == 0) throw std::invalid_argument("batch source needs at least one row");
}

DatasetBatchSource::DatasetBatchSource(LabeledSet data, std::size_t n_classes, std::size_t seq_len,
                                       std::size_t channels, std::size_t window, CropMode mode)
    : data_(std::move(data)), n_classes_(n_classes), seq_len_(seq_len), channels_(channels), window_(window), mode_(mode) {
    if (data_.size() == 0) throw std::invalid_argument("batch source needs at least one row");
    if (seq_len * channels != data_.x.cols()) throw ShapeError("sequence rows do not match seq_len x channels");
    if (window > seq_len) throw std::invalid_argument("crop window exceeds sequence length");
}

std::size_t DatasetBatchSource::dim() const {
    return mode_ == CropMode::none ? data_.x.cols() : window_ * channels_;
}

void DatasetBatchSource::draw(Rng& rng, std::size_t n, std::vector<double>& x0, std::vector<int>& labels) const {
    for (std::size_t i = 0; i < n; ++i) {
        const auto r = static_cast<std::size_t>(rng.below(data_.size()));
        labels.push_back(data_.labels[r]);
        auto row = data_.x.row(r);
        if (mode_ == CropMode::none) {
            x0.insert(x0.end(), row.begin(), row.end());
            continue;
        }
        std::size_t offset = (seq_len_ - window_) / 2;
        if (mode_ == CropMode::random) offset = static_cast<std::size_t>(rng.below(seq_len_ - window_ + 1));
        auto win = row.subspan(offset * channels_, window_ * channels_);
        x0.insert(x0.end(), win.begin(), win.end());
    }
}

}  // namespace fmlab
