#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "sjepa/checkpoint.hpp"
#include "sjepa/config.hpp"
#include "sjepa/data.hpp"
#include "sjepa/jepa.hpp"
#include "sjepa/sparsity.hpp"

namespace sjepa {

/// All learnable state of a run.
struct Model {
    ViTParams student;
    ViTParams teacher;
    PredictorParams predictor;
    Linear latent_proj;  // pooled context -> K latents
    GroupHead head;

    /// Parameters updated by the optimizer, in checkpoint order. The group
    /// head and latent projection are included only when the head is enabled.
    ParamSet trainable(const LossConfig& loss) const;
};

Model init_model(const RunConfig& cfg);

/// Checkpoint section prefixes.
inline constexpr const char* kStudentPrefix = "student/";
inline constexpr const char* kTeacherPrefix = "teacher/";
inline constexpr const char* kPredictorPrefix = "predictor/";
inline constexpr const char* kGroupHeadPrefix = "group_head/";
inline constexpr const char* kOptimizerPrefix = "optimizer/";
inline constexpr const char* kProbePrefix = "probe/";

struct StepMetrics {
    std::size_t step = 0;  // 1-based
    std::size_t epoch = 0;
    double jepa = 0.0;
    double group_recon = 0.0;
    double kl = 0.0;
    double penalty = 0.0;  // unweighted group-lasso value
    double total = 0.0;
    std::size_t zero_columns = 0;

    /// One JSON object on a single line, fixed key order.
    std::string to_json() const;
};

/// Loss terms of one batch; the tensors carry the autodiff graph.
struct BatchLoss {
    LossTerms terms;
    Tensor total;
    StepMetrics metrics;
};

/// SGD with momentum (v <- mu v + g; theta <- theta - lr v).
class Sgd {
public:
    Sgd(ParamSet params, double lr, double momentum);

    void step();
    const ParamSet& params() const { return params_; }
    /// Momentum buffers named like their parameters.
    ParamSet buffers() const;

private:
    ParamSet params_;
    std::vector<Tensor> velocity_;
    double lr_;
    double momentum_;
};

class Trainer {
public:
    /// `train` must outlive the trainer.
    Trainer(const RunConfig& cfg, const data::Dataset& train);

    const RunConfig& config() const { return cfg_; }
    const Model& model() const { return model_; }
    Model& model() { return model_; }
    std::size_t step() const { return step_; }
    std::size_t batches_per_epoch() const { return batches_.batches_per_epoch(); }

    /// Forward pass of the batch for step index s (0-based); does not update state.
    BatchLoss batch_loss(std::size_t s) const;

    /// One optimization step: loss, backward, SGD, proximal shrinkage, EMA.
    /// Throws NumericError (and leaves all state untouched) on a non-finite
    /// loss or gradient.
    StepMetrics train_step();

    Checkpoint checkpoint() const;
    /// Restores parameters, momentum buffers and the step counter.
    void restore(const Checkpoint& ckpt, bool force = false);

private:
    RunConfig cfg_;
    const data::Dataset* train_;
    data::BatchIterator batches_;
    GroupPartition partition_;
    Model model_;
    Sgd optimizer_;
    std::size_t step_ = 0;
};

/// Train split and held-out split for a dataset name, deterministic in seed.
/// The held-out split carries the train split's normalization.
struct DataSplits {
    data::Dataset train;
    data::Dataset test;
};
DataSplits load_splits(const DatasetConfig& ds, std::uint64_t seed);

struct RunResult {
    std::vector<StepMetrics> metrics;
    bool aborted = false;
    std::string abort_reason;
};

struct RunOptions {
    std::optional<std::string> resume;  // checkpoint path
    bool force = false;
    std::optional<std::size_t> stop_at;  // stop after this many total steps
    bool quiet = true;
};

/// Full pretraining run writing into cfg.out_dir:
///   config.json, metrics.jsonl (deterministic), timing.jsonl (wall time),
///   checkpoint.sjck after every epoch and at the end, final.sjck at the end.
/// On a non-finite loss the run stops, last_good.sjck holds the state before
/// the failing step, and the result is flagged as aborted.
RunResult run_pretrain(const RunConfig& cfg, const RunOptions& options = {});

}  // namespace sjepa
