#ifndef SEPNET_TRAINER_HPP
#define SEPNET_TRAINER_HPP

#include "sepnet/dataset.hpp"
#include "sepnet/model.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace sepnet {

struct TrainConfig {
    int batch_size = 80;
    int epochs = 15;
    double initial_lr = 0.01;
    double lr_decay_factor = 0.5;
    double lr_floor = 1e-6;
    double momentum = 0.9;
    std::uint64_t seed = 0;
    bool interactive = false;
    bool preload = true;  // decode every image once up front

    void validate() const;
};

struct EpochRecord {
    int epoch = 0;  // 1-based
    double train_loss = 0.0;
    double train_accuracy = 0.0;
    double val_loss = 0.0;
    double val_accuracy = 0.0;
    double learning_rate = 0.0;  // rate used during this epoch
    double wall_seconds = 0.0;
    bool checkpointed = false;
};

struct EvalResult {
    double loss = 0.0;  // mean cross-entropy plus the L2 penalty
    double accuracy = 0.0;
    std::array<std::array<Index, 2>, 2> confusion{};  // [true label][predicted]
    Index count = 0;
};

struct TrainState {
    Model model;
    std::vector<Tensor> velocity;  // one per trainable parameter
    double lr = 0.0;
    double best_val_accuracy = -1.0;
    int best_epoch = 0;
    std::vector<EpochRecord> history;
    std::filesystem::path best_checkpoint;
    std::optional<EvalResult> test;

    TrainState(Model m, double initial_lr);
};

/// v <- momentum * v - lr * g; w <- w + v.
void sgd_momentum_step(const std::vector<Tensor*>& params, const std::vector<Tensor>& grads,
                       std::vector<Tensor>& velocity, double lr, double momentum);

/// Index of the larger probability; ties go to class 0.
int argmax_class(std::span<const float> probs);

/// Infer-mode pass over the loader in manifest order.
EvalResult evaluate(Model& model, const BatchLoader& loader);

/// Forward pass only (no weight update); returns (loss with L2 term, accuracy).
std::pair<double, double> batch_loss(Model& model, const Batch& batch, Mode mode, Rng& rng);

struct Prediction {
    int label = 0;
    std::array<double, 2> probs{};
};

/// Infer-mode prediction for one image file.
Prediction predict(Model& model, const std::filesystem::path& image);

/// Validation scorer used by run_epoch; the default is evaluate() on a loader.
using Validator = std::function<EvalResult(Model&)>;

/// One pass over `train` with SGD updates, then validation. A strictly better
/// validation accuracy saves a checkpoint to `checkpoint`; otherwise the
/// learning rate decays (never below the floor).
EpochRecord run_epoch(TrainState& state, const BatchLoader& train, const Validator& validate,
                      const TrainConfig& config, const std::filesystem::path& checkpoint);

struct FitOptions {
    std::filesystem::path out_dir;
    std::istream* prompt_in = nullptr;    // used when config.interactive
    std::ostream* prompt_out = nullptr;
    std::ostream* log = nullptr;          // one line per epoch
};

/// Trains config.epochs epochs on the manifest's train split, validating on
/// val, then (interactive) asks for more epochs until 0 or end of input. The
/// metrics file is rewritten after every epoch. Finally the best checkpoint
/// is reloaded and evaluated on test.
TrainState fit(const ModelConfig& model_config, const TrainConfig& config, const std::filesystem::path& data_root,
               const DatasetManifest& manifest, const FitOptions& options);

inline constexpr std::string_view kMetricsHeader = "epoch,train_loss,train_acc,val_loss,val_acc,lr";
inline constexpr std::string_view kMetricsFile = "metrics.csv";
inline constexpr std::string_view kCheckpointFile = "best.ckpt";

void write_metrics(std::ostream& out, const std::vector<EpochRecord>& history);
void save_metrics(const std::filesystem::path& path, const std::vector<EpochRecord>& history);
/// Errors name the offending line.
std::vector<EpochRecord> read_metrics(std::istream& in);

}  // namespace sepnet

#endif  // SEPNET_TRAINER_HPP
