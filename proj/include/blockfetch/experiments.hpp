#ifndef BLOCKFETCH_EXPERIMENTS_HPP
#define BLOCKFETCH_EXPERIMENTS_HPP

#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "blockfetch/payload.hpp"
#include "blockfetch/pipeline.hpp"
#include "blockfetch/sampling.hpp"

namespace blockfetch {

class ChunkedStore;

// Softmax regression: logits = x W + bias, W stored row-major d x C.
struct LinearModel {
    std::size_t d = 0;
    std::size_t C = 0;
    std::vector<double> weights;
    std::vector<double> bias;

    LinearModel() = default;
    LinearModel(std::size_t d, std::size_t C);

    /// Small Gaussian weights (scale 0.01), zero bias.
    static LinearModel random(std::size_t d, std::size_t C, std::uint64_t seed);

    std::vector<std::uint32_t> predict(const DenseRows& x) const;
    bool finite() const;
};

// Mean cross-entropy over the batch and its gradient with respect to
// weights and bias, laid out like the model.
struct LossAndGrad {
    double loss = 0;
    std::vector<double> grad_weights;
    std::vector<double> grad_bias;
};

LossAndGrad softmax_cross_entropy(const LinearModel& model, const DenseRows& x, std::span<const std::uint32_t> y);

struct AdamConfig {
    double learning_rate = 1e-5;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

// Bias-corrected Adam over a flat parameter vector.
class Adam {
public:
    Adam(AdamConfig cfg, std::size_t n_params);
    void step(std::span<double> params, std::span<const double> grads);
    std::uint64_t steps() const noexcept { return t_; }

private:
    AdamConfig cfg_;
    std::vector<double> m_;
    std::vector<double> v_;
    std::uint64_t t_ = 0;
};

struct TrainConfig {
    AdamConfig adam;
    std::uint64_t epochs = 1;
    std::uint64_t init_seed = 0;
    std::string feature_column = kRowsColumn;
    std::string label_column = kLabelColumn;
    /// Maps raw labels to training targets (e.g. fine class -> group).
    std::vector<std::uint32_t> label_map;
};

class TrainingError : public std::runtime_error {
public:
    TrainingError(std::uint64_t step, const std::string& what);
    std::uint64_t step() const noexcept { return step_; }

private:
    std::uint64_t step_;
};

/// One Adam step per minibatch of `stream`, in order.
LinearModel train(MinibatchSource& stream, std::size_t d, std::size_t C, const TrainConfig& cfg);
void train_on(LinearModel& model, Adam& opt, MinibatchSource& stream, const TrainConfig& cfg);

std::vector<std::uint32_t> apply_label_map(std::span<const std::uint32_t> labels, std::span<const std::uint32_t> map);

struct EvalResult {
    double macro_f1 = 0;
    std::vector<double> per_class_f1;
    std::vector<std::uint64_t> confusion;  // C x C, row = truth, column = prediction
    std::size_t C = 0;
};

/// Classes absent from both truth and predictions still count, with F1 0.
EvalResult score(std::span<const std::uint32_t> truth, std::span<const std::uint32_t> predicted, std::size_t C);
EvalResult evaluate(const LinearModel& model, const DenseRows& x, std::span<const std::uint32_t> truth);

struct StrategyRun {
    std::string name;
    SamplerConfig sampler;  // n and seed are filled in per run
};

/// The four loaders compared: streaming, buffered streaming with 256*m rows,
/// block shuffling (b=16, f=256), and per-row random sampling.
std::vector<StrategyRun> standard_strategies(std::uint64_t batch_size);

struct ComparisonSpec {
    std::uint64_t batch_size = 64;
    TrainConfig train;
    std::vector<std::uint64_t> seeds{0, 1};
    /// Tasks to run: "fine" uses the stored labels, "broad" the label groups.
    std::vector<std::string> tasks{"fine", "broad"};
    /// Shards held out for testing; the rest form the training window.
    std::uint32_t test_shards = 1;
};

struct RunRecord {
    std::string strategy;
    std::string task;
    std::uint64_t seed = 0;
    double macro_f1 = 0;
    double wall_time = 0;
};

struct StrategySummary {
    std::string strategy;
    std::string task;
    double mean = 0;
    double std = 0;
    std::size_t runs = 0;
};

std::vector<RunRecord> compare_strategies(const ChunkedStore& store, const std::vector<StrategyRun>& strategies,
                                          const ComparisonSpec& spec);

std::vector<StrategySummary> summarize_runs(const std::vector<RunRecord>& runs);

}  // namespace blockfetch

#endif  // BLOCKFETCH_EXPERIMENTS_HPP
