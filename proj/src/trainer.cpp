#include "sepnet/trainer.hpp"

#include "sepnet/checkpoint.hpp"

#include <fmt/format.h>

#include <chrono>
#include <cmath>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

namespace sepnet {

namespace fs = std::filesystem;

void TrainConfig::validate() const {
    if (batch_size < 1) throw std::invalid_argument(fmt::format("batch size must be >= 1, got {}", batch_size));
    if (epochs < 0) throw std::invalid_argument(fmt::format("epochs must be >= 0, got {}", epochs));
    if (!(lr_decay_factor > 0.0 && lr_decay_factor < 1.0)) {
        throw std::invalid_argument(fmt::format("lr decay factor must be in (0, 1), got {}", lr_decay_factor));
    }
    if (!(initial_lr > 0.0)) throw std::invalid_argument(fmt::format("learning rate must be > 0, got {}", initial_lr));
    if (!(lr_floor >= 0.0)) throw std::invalid_argument(fmt::format("lr floor must be >= 0, got {}", lr_floor));
    if (!(momentum >= 0.0 && momentum < 1.0)) {
        throw std::invalid_argument(fmt::format("momentum must be in [0, 1), got {}", momentum));
    }
}

TrainState::TrainState(Model m, double initial_lr) : model(std::move(m)), lr(initial_lr) {
    for (auto& p : model.parameters())
        if (p.trainable) velocity.emplace_back(p.tensor->shape());
}

void sgd_momentum_step(const std::vector<Tensor*>& params, const std::vector<Tensor>& grads,
                       std::vector<Tensor>& velocity, double lr, double momentum) {
    if (params.size() != grads.size() || params.size() != velocity.size()) {
        throw std::invalid_argument(fmt::format("sgd: {} parameters, {} gradients, {} velocities", params.size(),
                                                grads.size(), velocity.size()));
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (params[i]->shape() != grads[i].shape() || params[i]->shape() != velocity[i].shape()) {
            throw std::invalid_argument(fmt::format("sgd: parameter {} has shape {}, gradient {}, velocity {}", i,
                                                    shape_to_string(params[i]->shape()),
                                                    shape_to_string(grads[i].shape()),
                                                    shape_to_string(velocity[i].shape())));
        }
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto v = velocity[i].array();
        v = static_cast<float>(momentum) * v - static_cast<float>(lr) * grads[i].array();
        params[i]->array() += v;
    }
}

int argmax_class(std::span<const float> probs) {
    int best = 0;
    for (std::size_t k = 1; k < probs.size(); ++k)
        if (probs[k] > probs[static_cast<std::size_t>(best)]) best = static_cast<int>(k);
    return best;
}

namespace {

Index count_correct(const Tensor& probs, const std::vector<int>& labels, EvalResult* eval = nullptr) {
    const Index k = probs.dim(1);
    Index correct = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        const int pred = argmax_class(std::span<const float>(probs.data() + static_cast<Index>(i) * k, k));
        if (pred == labels[i]) ++correct;
        if (eval && labels[i] < 2 && pred < 2) ++eval->confusion[labels[i]][pred];
    }
    return correct;
}

}  // namespace

std::pair<double, double> batch_loss(Model& model, const Batch& batch, Mode mode, Rng& rng) {
    Tensor logits = model.forward(batch.images, mode, rng);
    auto sce = softmax_cross_entropy(logits, std::span<const int>(batch.labels));
    const double acc = static_cast<double>(count_correct(sce.probs, batch.labels)) / batch.labels.size();
    return {sce.loss + model.regularization_loss(), acc};
}

EvalResult evaluate(Model& model, const BatchLoader& loader) {
    EvalResult r;
    double ce_sum = 0.0;
    Index correct = 0;
    Rng unused(0);
    loader.for_each(loader.sequential_order(), [&](const Batch& b) {
        Tensor logits = model.forward(b.images, Mode::infer, unused);
        auto sce = softmax_cross_entropy(logits, std::span<const int>(b.labels));
        ce_sum += sce.loss * static_cast<double>(b.labels.size());
        correct += count_correct(sce.probs, b.labels, &r);
        r.count += static_cast<Index>(b.labels.size());
    });
    r.loss = ce_sum / static_cast<double>(r.count) + model.regularization_loss();
    r.accuracy = static_cast<double>(correct) / static_cast<double>(r.count);
    return r;
}

Prediction predict(Model& model, const fs::path& image) {
    if (model.num_classes() != 2) throw std::invalid_argument("predict needs the binary head");
    Rng unused(0);
    Tensor probs = softmax(model.forward(load_image(image, model.config().resolution), Mode::infer, unused));
    Prediction p;
    p.label = argmax_class(probs.values());
    p.probs = {probs[0], probs[1]};
    return p;
}

EpochRecord run_epoch(TrainState& state, const BatchLoader& train, const Validator& validate,
                      const TrainConfig& config, const fs::path& checkpoint) {
    const auto start = std::chrono::steady_clock::now();
    EpochRecord rec;
    rec.epoch = static_cast<int>(state.history.size()) + 1;
    rec.learning_rate = state.lr;

    std::vector<Tensor*> params;
    for (auto& p : state.model.parameters())
        if (p.trainable) params.push_back(p.tensor);

    Rng dropout_rng = Rng::derive(config.seed ^ 0x5deece66dULL, static_cast<std::uint64_t>(rec.epoch));
    double loss_sum = 0.0;
    Index correct = 0, seen = 0;
    train.for_each(train.epoch_order(rec.epoch), [&](const Batch& b) {
        Activations acts;
        Tensor logits = state.model.forward(b.images, Mode::train, dropout_rng, &acts);
        auto sce = softmax_cross_entropy(logits, std::span<const int>(b.labels));
        const auto n = static_cast<Index>(b.labels.size());
        loss_sum += (sce.loss + state.model.regularization_loss()) * static_cast<double>(n);
        correct += count_correct(sce.probs, b.labels);
        seen += n;

        Gradients g = state.model.backward(acts, sce.d_logits);
        std::vector<Tensor> grads;
        grads.reserve(g.size());
        for (auto& nt : g) grads.push_back(std::move(nt.tensor));
        sgd_momentum_step(params, grads, state.velocity, state.lr, config.momentum);
    });
    rec.train_loss = loss_sum / static_cast<double>(seen);
    rec.train_accuracy = static_cast<double>(correct) / static_cast<double>(seen);

    const EvalResult val = validate(state.model);
    rec.val_loss = val.loss;
    rec.val_accuracy = val.accuracy;
    if (rec.val_accuracy > state.best_val_accuracy) {
        state.best_val_accuracy = rec.val_accuracy;
        state.best_epoch = rec.epoch;
        if (!checkpoint.empty()) {
            const fs::path tmp = fs::path(checkpoint).concat(".tmp");
            save_checkpoint(state.model, {rec.epoch, rec.val_accuracy, state.lr}, tmp);
            fs::rename(tmp, checkpoint);
            state.best_checkpoint = checkpoint;
        }
        rec.checkpointed = true;
    } else {
        state.lr = std::max(state.lr * config.lr_decay_factor, config.lr_floor);
    }
    rec.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    state.history.push_back(rec);
    return rec;
}

namespace {

// Reads a non-negative epoch count; 0, end of input or a closed stream stop.
int prompt_epochs(std::istream& in, std::ostream* out) {
    for (;;) {
        if (out) *out << "additional epochs (0 to stop): " << std::flush;
        std::string line;
        if (!std::getline(in, line)) return 0;
        std::istringstream ss(line);
        long n = -1;
        std::string rest;
        if (ss >> n && !(ss >> rest) && n >= 0 && n <= 1000000) return static_cast<int>(n);
        if (out) *out << "please enter a non-negative whole number\n";
    }
}

}  // namespace

TrainState fit(const ModelConfig& model_config, const TrainConfig& config, const fs::path& data_root,
               const DatasetManifest& manifest, const FitOptions& options) {
    config.validate();
    model_config.validate();
    if (model_config.head != Head::binary) throw std::invalid_argument("training needs the binary head");
    for (Split s : {Split::train, Split::val, Split::test}) {
        if (manifest.in_split(s).empty()) {
            throw DatasetError(fmt::format("manifest has no '{}' entries; run split first", to_string(s)));
        }
    }
    const int res = model_config.resolution;
    BatchLoader train = make_loader(data_root, manifest, Split::train, config.batch_size, res, config.seed, config.preload);
    BatchLoader val = make_loader(data_root, manifest, Split::val, config.batch_size, res, config.seed, config.preload);

    if (!options.out_dir.empty()) fs::create_directories(options.out_dir);
    const fs::path checkpoint = options.out_dir.empty() ? fs::path() : options.out_dir / kCheckpointFile;
    const fs::path metrics = options.out_dir.empty() ? fs::path() : options.out_dir / kMetricsFile;
    if (!checkpoint.empty()) fs::remove(checkpoint);

    TrainState state(build_model(model_config), config.initial_lr);
    Validator validate = [&](Model& m) { return evaluate(m, val); };

    auto run = [&](int epochs) {
        for (int e = 0; e < epochs; ++e) {
            const EpochRecord& r = run_epoch(state, train, validate, config, checkpoint);
            if (!metrics.empty()) save_metrics(metrics, state.history);
            if (options.log) {
                *options.log << fmt::format(
                    "epoch {:>3}  train loss {:.4f} acc {:.4f}  val loss {:.4f} acc {:.4f}  lr {:.6g}{}  ({:.1f}s)\n",
                    r.epoch, r.train_loss, r.train_accuracy, r.val_loss, r.val_accuracy, r.learning_rate,
                    r.checkpointed ? "  [saved]" : "", r.wall_seconds);
            }
        }
    };
    if (!metrics.empty()) save_metrics(metrics, state.history);
    run(config.epochs);
    if (config.interactive && options.prompt_in) {
        while (int more = prompt_epochs(*options.prompt_in, options.prompt_out)) run(more);
    }

    if (!state.best_checkpoint.empty()) state.model = load_checkpoint(state.best_checkpoint).model;
    if (!state.history.empty()) {
        BatchLoader test = make_loader(data_root, manifest, Split::test, config.batch_size, res, config.seed, false);
        state.test = evaluate(state.model, test);
    }
    return state;
}

// ---------------------------------------------------------------------------
// Metrics file

void write_metrics(std::ostream& out, const std::vector<EpochRecord>& history) {
    out << kMetricsHeader << '\n';
    for (const auto& r : history) {
        out << fmt::format("{},{:.6f},{:.6f},{:.6f},{:.6f},{:.8g}\n", r.epoch, r.train_loss, r.train_accuracy,
                           r.val_loss, r.val_accuracy, r.learning_rate);
    }
}

void save_metrics(const fs::path& path, const std::vector<EpochRecord>& history) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write metrics file " + path.string());
    write_metrics(out, history);
}

std::vector<EpochRecord> read_metrics(std::istream& in) {
    std::string line;
    if (!std::getline(in, line)) throw std::runtime_error("metrics file is empty");
    if (line != kMetricsHeader) {
        throw std::runtime_error(fmt::format("metrics line 1: expected header '{}'", kMetricsHeader));
    }
    std::vector<EpochRecord> out;
    for (int lineno = 2; std::getline(in, line); ++lineno) {
        if (line.empty()) continue;
        std::vector<double> v;
        std::istringstream ss(line);
        std::string field;
        bool ok = true;
        while (std::getline(ss, field, ',')) {
            try {
                std::size_t used = 0;
                v.push_back(std::stod(field, &used));
                ok &= used == field.size() && std::isfinite(v.back());
            } catch (const std::exception&) {
                ok = false;
            }
        }
        if (!ok || v.size() != 6 || v[0] < 1 || v[0] != std::floor(v[0])) {
            throw std::runtime_error(fmt::format("metrics line {}: malformed row '{}'", lineno, line));
        }
        EpochRecord r;
        r.epoch = static_cast<int>(v[0]);
        r.train_loss = v[1];
        r.train_accuracy = v[2];
        r.val_loss = v[3];
        r.val_accuracy = v[4];
        r.learning_rate = v[5];
        out.push_back(r);
    }
    if (out.empty()) throw std::runtime_error("metrics file has no rows");
    return out;
}

}  // namespace sepnet
