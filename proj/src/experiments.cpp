#include "blockfetch/experiments.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <map>

#include "blockfetch/rng.hpp"
#include "blockfetch/store.hpp"

namespace blockfetch {

LinearModel::LinearModel(std::size_t d_, std::size_t C_) : d(d_), C(C_), weights(d_ * C_, 0.0), bias(C_, 0.0) {}

LinearModel LinearModel::random(std::size_t d, std::size_t C, std::uint64_t seed) {
    LinearModel model(d, C);
    Xoshiro256 rng(derive_seed(seed, "linear-init", 0));
    for (auto& w : model.weights) w = 0.01 * rng.normal();
    return model;
}

namespace {

void logits_into(const LinearModel& model, std::span<const float> x, std::vector<double>& out) {
    out.assign(model.bias.begin(), model.bias.end());
    for (std::size_t j = 0; j < model.d; ++j) {
        const double xj = x[j];
        if (xj == 0.0) continue;
        const double* w = model.weights.data() + j * model.C;
        for (std::size_t c = 0; c < model.C; ++c) out[c] += xj * w[c];
    }
}

void check_shapes(const LinearModel& model, const DenseRows& x) {
    if (x.n_cols != model.d)
        throw std::invalid_argument("feature width " + std::to_string(x.n_cols) + " does not match model input " +
                                    std::to_string(model.d));
}

}  // namespace

std::vector<std::uint32_t> LinearModel::predict(const DenseRows& x) const {
    check_shapes(*this, x);
    std::vector<std::uint32_t> out(x.rows());
    std::vector<double> z;
    for (std::size_t r = 0; r < x.rows(); ++r) {
        logits_into(*this, x.row(r), z);
        out[r] = static_cast<std::uint32_t>(std::max_element(z.begin(), z.end()) - z.begin());
    }
    return out;
}

bool LinearModel::finite() const {
    auto ok = [](double v) { return std::isfinite(v); };
    return std::all_of(weights.begin(), weights.end(), ok) && std::all_of(bias.begin(), bias.end(), ok);
}

LossAndGrad softmax_cross_entropy(const LinearModel& model, const DenseRows& x, std::span<const std::uint32_t> y) {
    check_shapes(model, x);
    const std::size_t n = x.rows();
    if (y.size() != n) throw std::invalid_argument("label count does not match row count");
    if (n == 0) throw std::invalid_argument("empty batch");

    LossAndGrad out;
    out.grad_weights.assign(model.weights.size(), 0.0);
    out.grad_bias.assign(model.C, 0.0);
    std::vector<double> z;
    const double inv_n = 1.0 / static_cast<double>(n);
    for (std::size_t r = 0; r < n; ++r) {
        if (y[r] >= model.C) throw std::invalid_argument("label " + std::to_string(y[r]) + " out of range");
        const auto xr = x.row(r);
        logits_into(model, xr, z);
        const double zmax = *std::max_element(z.begin(), z.end());
        double sum = 0;
        for (auto& v : z) sum += (v = std::exp(v - zmax));
        out.loss += (std::log(sum) - std::log(z[y[r]])) * inv_n;
        for (std::size_t c = 0; c < model.C; ++c) {
            double g = z[c] / sum;
            if (c == y[r]) g -= 1.0;
            z[c] = g * inv_n;
            out.grad_bias[c] += z[c];
        }
        for (std::size_t j = 0; j < model.d; ++j) {
            const double xj = xr[j];
            if (xj == 0.0) continue;
            double* gw = out.grad_weights.data() + j * model.C;
            for (std::size_t c = 0; c < model.C; ++c) gw[c] += xj * z[c];
        }
    }
    return out;
}

Adam::Adam(AdamConfig cfg, std::size_t n_params) : cfg_(cfg), m_(n_params, 0.0), v_(n_params, 0.0) {
    if (!(cfg.learning_rate > 0)) throw std::invalid_argument("learning rate must be > 0");
}

void Adam::step(std::span<double> params, std::span<const double> grads) {
    if (params.size() != m_.size() || grads.size() != m_.size())
        throw std::invalid_argument("Adam parameter count mismatch");
    ++t_;
    const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < params.size(); ++i) {
        m_[i] = cfg_.beta1 * m_[i] + (1.0 - cfg_.beta1) * grads[i];
        v_[i] = cfg_.beta2 * v_[i] + (1.0 - cfg_.beta2) * grads[i] * grads[i];
        const double mhat = m_[i] / c1;
        const double vhat = v_[i] / c2;
        params[i] -= cfg_.learning_rate * mhat / (std::sqrt(vhat) + cfg_.epsilon);
    }
}

TrainingError::TrainingError(std::uint64_t step, const std::string& what)
    : std::runtime_error("training step " + std::to_string(step) + ": " + what), step_(step) {}

std::vector<std::uint32_t> apply_label_map(std::span<const std::uint32_t> labels, std::span<const std::uint32_t> map) {
    if (map.empty()) return {labels.begin(), labels.end()};
    std::vector<std::uint32_t> out(labels.size());
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] >= map.size()) throw std::invalid_argument("label " + std::to_string(labels[i]) + " has no mapping");
        out[i] = map[labels[i]];
    }
    return out;
}

void train_on(LinearModel& model, Adam& opt, MinibatchSource& stream, const TrainConfig& cfg) {
    // Parameters are updated as one flat vector: weights then bias.
    std::vector<double> params(model.weights.size() + model.bias.size());
    std::vector<double> grads(params.size());
    while (auto batch = stream.next()) {
        const std::uint64_t step = opt.steps();
        const auto* x = std::get_if<DenseRows>(&batch->payload.at(cfg.feature_column));
        if (x == nullptr) throw TrainingError(step, "feature column '" + cfg.feature_column + "' is not dense");
        const auto y = apply_label_map(batch->payload.get<LabelColumn>(cfg.label_column), cfg.label_map);

        const auto lg = softmax_cross_entropy(model, *x, y);
        if (!std::isfinite(lg.loss)) throw TrainingError(step, "non-finite loss");

        std::copy(model.weights.begin(), model.weights.end(), params.begin());
        std::copy(model.bias.begin(), model.bias.end(), params.begin() + static_cast<std::ptrdiff_t>(model.weights.size()));
        std::copy(lg.grad_weights.begin(), lg.grad_weights.end(), grads.begin());
        std::copy(lg.grad_bias.begin(), lg.grad_bias.end(), grads.begin() + static_cast<std::ptrdiff_t>(model.weights.size()));
        opt.step(params, grads);
        std::copy(params.begin(), params.begin() + static_cast<std::ptrdiff_t>(model.weights.size()), model.weights.begin());
        std::copy(params.begin() + static_cast<std::ptrdiff_t>(model.weights.size()), params.end(), model.bias.begin());
        if (!model.finite()) throw TrainingError(step, "non-finite parameters");
    }
}

LinearModel train(MinibatchSource& stream, std::size_t d, std::size_t C, const TrainConfig& cfg) {
    LinearModel model = LinearModel::random(d, C, cfg.init_seed);
    Adam opt(cfg.adam, model.weights.size() + model.bias.size());
    train_on(model, opt, stream, cfg);
    return model;
}

EvalResult score(std::span<const std::uint32_t> truth, std::span<const std::uint32_t> predicted, std::size_t C) {
    if (truth.empty()) throw std::invalid_argument("empty evaluation set");
    if (truth.size() != predicted.size()) throw std::invalid_argument("truth and predictions differ in length");
    if (C == 0) throw std::invalid_argument("class count must be >= 1");
    EvalResult r;
    r.C = C;
    r.confusion.assign(C * C, 0);
    for (std::size_t i = 0; i < truth.size(); ++i) {
        if (truth[i] >= C || predicted[i] >= C) throw std::invalid_argument("class index out of range");
        ++r.confusion[truth[i] * C + predicted[i]];
    }
    r.per_class_f1.assign(C, 0.0);
    for (std::size_t k = 0; k < C; ++k) {
        std::uint64_t tp = r.confusion[k * C + k], fp = 0, fn = 0;
        for (std::size_t j = 0; j < C; ++j) {
            if (j == k) continue;
            fp += r.confusion[j * C + k];
            fn += r.confusion[k * C + j];
        }
        const std::uint64_t denom = 2 * tp + fp + fn;
        r.per_class_f1[k] = denom == 0 ? 0.0 : 2.0 * static_cast<double>(tp) / static_cast<double>(denom);
    }
    double sum = 0;
    for (double f : r.per_class_f1) sum += f;
    r.macro_f1 = sum / static_cast<double>(C);
    return r;
}

EvalResult evaluate(const LinearModel& model, const DenseRows& x, std::span<const std::uint32_t> truth) {
    if (x.rows() == 0) throw std::invalid_argument("empty evaluation set");
    return score(truth, model.predict(x), model.C);
}

std::vector<StrategyRun> standard_strategies(std::uint64_t m) {
    auto make = [&](std::string name, Strategy strategy, std::uint64_t b, std::uint64_t f) {
        SamplerConfig cfg;
        cfg.block_size = b;
        cfg.batch_size = m;
        cfg.fetch_factor = f;
        cfg.strategy = std::move(strategy);
        return StrategyRun{std::move(name), cfg};
    };
    return {
        make("streaming", Streaming{}, 1, 1),
        make("streaming_buffered", StreamingBuffered{static_cast<std::size_t>(256 * m)}, 1, 1),
        make("block_shuffling", BlockShuffling{}, 16, 256),
        make("random", BlockShuffling{}, 1, 1),
    };
}

std::vector<RunRecord> compare_strategies(const ChunkedStore& store, const std::vector<StrategyRun>& strategies,
                                          const ComparisonSpec& spec) {
    const Manifest& manifest = store.manifest();
    if (spec.test_shards == 0 || spec.test_shards >= manifest.shards.size())
        throw std::invalid_argument("test_shards must leave at least one training shard");
    const auto offsets = manifest.offsets();
    const std::uint64_t train_rows = offsets[manifest.shards.size() - spec.test_shards];

    const RowRange test_range{train_rows, store.size() - train_rows};
    RowBatch test = store.read_rows(std::span(&test_range, 1));
    const DenseRows test_x = to_dense(test.rows);
    const std::vector<std::uint32_t> test_fine(test.labels.begin(), test.labels.end());

    const StoreBackend backend(store, 0, train_rows);
    CallbackSet callbacks;
    callbacks.fetch_transform = densify();

    std::vector<RunRecord> out;
    for (const auto& task : spec.tasks) {
        TrainConfig tc = spec.train;
        std::size_t C = manifest.labels.size();
        if (task == "broad") {
            if (manifest.label_groups.empty()) throw std::invalid_argument("store has no label groups for the broad task");
            tc.label_map = manifest.label_groups;
            C = manifest.groups.size();
        } else if (task != "fine") {
            throw std::invalid_argument("unknown task '" + task + "'");
        }
        const auto truth = apply_label_map(test_fine, tc.label_map);

        for (const auto& strategy : strategies) {
            for (auto seed : spec.seeds) {
                const auto t0 = std::chrono::steady_clock::now();
                SamplerConfig cfg = strategy.sampler;
                cfg.n = train_rows;
                cfg.batch_size = spec.batch_size;
                cfg.seed = seed;
                if (auto* sb = std::get_if<StreamingBuffered>(&cfg.strategy))
                    sb->buffer_rows = static_cast<std::size_t>(std::min<std::uint64_t>(sb->buffer_rows, train_rows));
                tc.init_seed = derive_seed(spec.train.init_seed, "run", seed);

                LinearModel model = LinearModel::random(manifest.n_cols, C, tc.init_seed);
                Adam opt(tc.adam, model.weights.size() + model.bias.size());
                for (std::uint64_t epoch = 0; epoch < tc.epochs; ++epoch) {
                    auto stream = make_stream(backend, cfg, epoch, callbacks);
                    train_on(model, opt, *stream, tc);
                }
                const double f1 = evaluate(model, test_x, truth).macro_f1;
                const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
                out.push_back({strategy.name, task, seed, f1, wall});
            }
        }
    }
    return out;
}

std::vector<StrategySummary> summarize_runs(const std::vector<RunRecord>& runs) {
    std::vector<StrategySummary> out;
    std::map<std::pair<std::string, std::string>, std::size_t> index;
    std::vector<std::vector<double>> values;
    for (const auto& r : runs) {
        auto [it, fresh] = index.try_emplace({r.strategy, r.task}, out.size());
        if (fresh) {
            out.push_back({r.strategy, r.task, 0, 0, 0});
            values.emplace_back();
        }
        values[it->second].push_back(r.macro_f1);
    }
    for (std::size_t i = 0; i < out.size(); ++i) {
        const auto& v = values[i];
        out[i].runs = v.size();
        double mean = 0;
        for (double x : v) mean += x;
        mean /= static_cast<double>(v.size());
        double ss = 0;
        for (double x : v) ss += (x - mean) * (x - mean);
        out[i].mean = mean;
        out[i].std = v.size() > 1 ? std::sqrt(ss / static_cast<double>(v.size() - 1)) : 0.0;
    }
    return out;
}

}  // namespace blockfetch
