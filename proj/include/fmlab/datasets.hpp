#pragma once

#include <cstddef>
#include <span>
#include <utility>
#include <vector>

#include "fmlab/rng.hpp"
#include "fmlab/tensor.hpp"

namespace fmlab {

struct GmmComponent {
    std::vector<double> mean;
    std::vector<double> stddev;  // diagonal
    double weight = 1.0;
};

// Class-conditional Gaussian mixtures with known densities.
struct GmmSpec {
    std::size_t dim = 2;
    std::vector<std::vector<GmmComponent>> classes;

    std::size_t n_classes() const { return classes.size(); }
    void validate() const;

    // Four classes, one isotropic component each at (+-3, +-3), sigma 0.5.
    static GmmSpec four_corners();
};

struct LabeledSet {
    Tensor x;  // [n x dim]
    std::vector<int> labels;

    std::size_t size() const { return labels.size(); }
};

LabeledSet make_gmm_dataset(const GmmSpec& spec, std::size_t n_per_class, Rng& rng);
Tensor sample_gmm_class(const GmmSpec& spec, int label, std::size_t n, Rng& rng);

// Exact posterior over classes under equal priors, via log-sum-exp.
std::vector<double> bayes_class_posterior(const GmmSpec& spec, std::span<const double> x);
// Argmax of the posterior; ties go to the lower class id.
int bayes_classify(const GmmSpec& spec, std::span<const double> x);

struct SequenceClass {
    double frequency = 1.0;  // cycles per crop window
    double amplitude = 1.0;
};

// Class-conditional sinusoids with random phase plus white noise. Samples
// are train_len x channels, flattened row-major into one dataset row.
struct SequenceSpec {
    std::size_t train_len = 750;
    std::size_t window = 250;
    std::size_t channels = 1;
    double noise = 0.1;
    std::vector<SequenceClass> classes;

    std::size_t n_classes() const { return classes.size(); }
    void validate() const;

    static SequenceSpec default_spec();
};

LabeledSet make_sequence_dataset(const SequenceSpec& spec, std::size_t n_per_class, Rng& rng);

// Contiguous [window x d] slice starting at a uniform offset in [0, L - window].
Tensor random_crop(const Tensor& seq, std::size_t window, Rng& rng);
Tensor crop_at(const Tensor& seq, std::size_t window, std::size_t offset);

// Seeded permutation; round(frac * n) rows go to validation. Both halves
// keep the original row order.
std::pair<LabeledSet, LabeledSet> split_train_val(const LabeledSet& data, double frac, Rng& rng);

LabeledSet select_rows(const LabeledSet& data, std::span<const std::size_t> rows);

enum class CropMode { none, random, center };

// Supplies training batches: rows drawn uniformly with replacement, then
// cropped to the window when the rows are sequences.
class BatchSource {
public:
    virtual ~BatchSource() = default;
    virtual std::size_t dim() const = 0;
    virtual std::size_t n_classes() const = 0;
    // Appends n samples; draws consume `rng` strictly sample by sample.
    virtual void draw(Rng& rng, std::size_t n, std::vector<double>& x0, std::vector<int>& labels) const = 0;
};

class DatasetBatchSource final : public BatchSource {
public:
    // Vector data (no cropping).
    DatasetBatchSource(LabeledSet data, std::size_t n_classes);
    // Sequence data: rows are [seq_len x channels], cropped to window.
    DatasetBatchSource(LabeledSet data, std::size_t n_classes, std::size_t seq_len, std::size_t channels,
                       std::size_t window, CropMode mode);

    std::size_t dim() const override;
    std::size_t n_classes() const override { return n_classes_; }
    void draw(Rng& rng, std::size_t n, std::vector<double>& x0, std::vector<int>& labels) const override;

    const LabeledSet& data() const { return data_; }
    CropMode crop_mode() const { return mode_; }
    std::size_t seq_len() const { return seq_len_; }
    std::size_t channels() const { return channels_; }
    std::size_t window() const { return window_; }

private:
    LabeledSet data_;
    std::size_t n_classes_;
    std::size_t seq_len_ = 0;
    std::size_t channels_ = 0;
    std::size_t window_ = 0;
    CropMode mode_ = CropMode::none;
};

}  // namespace fmlab
