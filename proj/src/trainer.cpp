#include "sjepa/trainer.hpp"

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <sstream>

#include "sjepa/errors.hpp"

namespace sjepa {

namespace {

using nlohmann::ordered_json;

// Independent random streams under the run seed.
enum Stream : std::uint64_t { kInitStream = 1, kMaskStream = 2, kBatchStream = 3, kDataStream = 4 };

data::SynthTask task_of(const std::string& name) {
    return name == "synth-count" ? data::SynthTask::count : data::SynthTask::classify;
}

ParamSet head_params(const Model& m) {
    ParamSet p = named(m.latent_proj, "proj");
    append(p, m.head.named());
    return p;
}

}  // namespace

ParamSet Model::trainable(const LossConfig& loss) const {
    ParamSet p = with_prefix(kStudentPrefix, student.named());
    append(p, with_prefix(kPredictorPrefix, predictor.named()));
    if (loss.group_head) {
        append(p, with_prefix(kGroupHeadPrefix, head_params(*this)));
    }
    return p;
}

Model init_model(const RunConfig& cfg) {
    Rng rng(derive_seed(cfg.seed, {kInitStream}));
    Model m;
    m.student = init_vit(cfg.vit, rng);
    m.teacher = clone(m.student);
    m.predictor = init_predictor(cfg.vit.embed_dim, cfg.predictor, rng);
    m.latent_proj = init_linear(cfg.vit.embed_dim, cfg.loss.latent_dim, rng);
    m.head = init_group_head(cfg.vit.embed_dim, cfg.loss.latent_dim, cfg.loss.groups, rng);
    return m;
}

std::string StepMetrics::to_json() const {
    ordered_json j;
    j["step"] = step;
    j["epoch"] = epoch;
    j["jepa_loss"] = jepa;
    j["group_recon"] = group_recon;
    j["kl"] = kl;
    j["penalty"] = penalty;
    j["total"] = total;
    j["zero_columns"] = zero_columns;
    return j.dump();
}

Sgd::Sgd(ParamSet params, double lr, double momentum) : params_(std::move(params)), lr_(lr), momentum_(momentum) {
    for (auto& p : params_) {
        p.tensor.set_requires_grad(true);
        velocity_.push_back(Tensor::zeros(p.tensor.shape()));
    }
}

void Sgd::step() {
    for (std::size_t i = 0; i < params_.size(); ++i) {
        Tensor p = params_[i].tensor;
        if (!p.has_grad()) {
            continue;
        }
        auto g = p.grad();
        auto v = velocity_[i].mutable_data();
        auto w = p.mutable_data();
        for (std::size_t k = 0; k < w.size(); ++k) {
            v[k] = momentum_ * v[k] + g[k];
            w[k] -= lr_ * v[k];
        }
    }
}

ParamSet Sgd::buffers() const {
    ParamSet out;
    for (std::size_t i = 0; i < params_.size(); ++i) {
        out.push_back({params_[i].name, velocity_[i]});
    }
    return out;
}

Trainer::Trainer(const RunConfig& cfg, const data::Dataset& train)
    : cfg_(cfg),
      train_(&train),
      batches_(train, cfg.optim.batch_size, derive_seed(cfg.seed, {kBatchStream})),
      partition_(spatial_partition(cfg.vit.grid(), cfg.loss.groups)),
      model_(init_model(cfg)),
      optimizer_(model_.trainable(cfg.loss), cfg.optim.lr, cfg.optim.momentum) {
    cfg_.validate();
    cfg_.loss.lr = cfg_.optim.lr;
}

BatchLoss Trainer::batch_loss(std::size_t s) const {
    Tape::current().reset();
    const std::size_t bpe = batches_.batches_per_epoch();
    const auto batch = batches_.batch(s / bpe, s % bpe);
    const std::size_t n = batch.images.size();
    const auto grid = cfg_.vit.grid();
    const bool head = cfg_.loss.group_head;

    Tensor jepa, recon;
    std::vector<Tensor> latents;
    for (std::size_t b = 0; b < n; ++b) {
        Rng rng(derive_seed(cfg_.seed, {kMaskStream, s, b}));
        const MaskSpec mask = sample_masks(grid, rng, cfg_.mask);
        const auto& image = batch.images[b];
        const TargetEncoding targets = encode_targets(image, cfg_.vit, model_.teacher, mask);
        const Tensor context = encode_context(image, cfg_.vit, model_.student, mask);
        const auto predictions = predict_targets(context, mask, model_.predictor, cfg_.predictor);
        const Tensor jl = jepa_loss(predictions, targets.blocks, mask);
        jepa = jepa.defined() ? add(jepa, jl) : jl;
        if (head) {
            const Tensor z = pool_latent(context, model_.latent_proj);
            const Tensor rl =
                group_reconstruction_loss(z, model_.head, group_targets(targets.full, partition_));
            recon = recon.defined() ? add(recon, rl) : rl;
            latents.push_back(reshape(z, {1, z.dim(0)}));
        }
    }
    const double inv = 1.0 / static_cast<double>(n);
    BatchLoss out;
    out.terms.jepa = scale(jepa, inv);
    if (head) {
        out.terms.group_recon = scale(recon, inv);
        out.terms.kl = kl_sparsity_penalty(concat(latents, 0), cfg_.loss.rho);
        if (cfg_.loss.mode == PenaltyMode::subgradient) {
            out.terms.penalty = group_lasso_penalty(model_.head);
        }
    }
    out.total = total_loss(out.terms, cfg_.loss);

    auto& m = out.metrics;
    m.step = s + 1;
    m.epoch = s / bpe;
    m.jepa = out.terms.jepa.item();
    if (head) {
        m.group_recon = out.terms.group_recon.item();
        m.kl = out.terms.kl.item();
        m.penalty = group_lasso_value(model_.head);
    }
    m.total = total_loss(m.jepa, m.group_recon, m.kl, m.penalty, cfg_.loss);
    return out;
}

StepMetrics Trainer::train_step() {
    BatchLoss bl = batch_loss(step_);
    ParamSet params = optimizer_.params();
    zero_grads(params);
    backward(bl.total);
    for (const auto& p : params) {
        if (!p.tensor.has_grad()) {
            continue;
        }
        for (double g : p.tensor.grad()) {
            if (!std::isfinite(g)) {
                zero_grads(params);
                throw NumericError("non-finite gradient in '" + p.name + "' at step " + std::to_string(step_ + 1));
            }
        }
    }
    optimizer_.step();
    if (cfg_.loss.group_head && cfg_.loss.mode == PenaltyMode::proximal) {
        proximal_step(model_.head, cfg_.loss.lambda, cfg_.optim.lr);
    }
    ema_update(model_.teacher.named(), model_.student.named(), cfg_.optim.ema_momentum);
    zero_grads(params);
    ++step_;
    bl.metrics.zero_columns = cfg_.loss.group_head ? sparsity_stats(model_.head).zero_columns : 0;
    return bl.metrics;
}

Checkpoint Trainer::checkpoint() const {
    Checkpoint c;
    c.config_hash = cfg_.hash();
    c.step = step_;
    c.config_json = cfg_.portable_json();
    store_params(c, "", optimizer_.params());
    store_params(c, kTeacherPrefix, model_.teacher.named());
    store_params(c, kOptimizerPrefix, optimizer_.buffers());
    return c;
}

void Trainer::restore(const Checkpoint& ckpt, bool force) {
    check_config_hash(ckpt, cfg_.hash(), force);
    restore_params(ckpt, "", optimizer_.params());
    restore_params(ckpt, kTeacherPrefix, model_.teacher.named());
    restore_params(ckpt, kOptimizerPrefix, optimizer_.buffers());
    step_ = static_cast<std::size_t>(ckpt.step);
}

DataSplits load_splits(const DatasetConfig& ds, std::uint64_t seed) {
    DataSplits s;
    if (ds.name == "cifar100") {
        const std::filesystem::path dir(ds.path);
        s.train = data::load_cifar100((dir / "train.bin").string(), data::Source::cifar100_train,
                                      data::kCifarTrainRecords);
        s.test = data::load_cifar100((dir / "test.bin").string(), data::Source::cifar100_test,
                                     data::kCifarTestRecords);
        s.train.stats = data::compute_stats(s.train);
    } else {
        const auto task = task_of(ds.name);
        s.train = data::synth_shapes(ds.train_size, task, derive_seed(seed, {kDataStream, 0}));
        s.test = data::synth_shapes(ds.test_size, task, derive_seed(seed, {kDataStream, 1}));
    }
    s.test.stats = s.train.stats;
    return s;
}

namespace {

// Keeps lines whose "step" is at most `last`; used when resuming into a run directory.
void truncate_jsonl(const std::filesystem::path& path, std::size_t last) {
    std::ifstream in(path);
    if (!in) {
        return;
    }
    std::vector<std::string> keep;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) {
            continue;
        }
        const auto j = nlohmann::json::parse(line, nullptr, false);
        if (!j.is_discarded() && j.contains("step") && j["step"].get<std::size_t>() <= last) {
            keep.push_back(line);
        }
    }
    in.close();
    std::ofstream out(path, std::ios::trunc);
    for (const auto& l : keep) {
        out << l << '\n';
    }
}

std::string sparsity_event(const StepMetrics& m, const SparsityStats& s) {
    ordered_json j;
    j["event"] = "sparsity";
    j["step"] = m.step;
    j["epoch"] = m.epoch;
    j["zero_columns"] = s.zero_columns;
    j["zero_columns_per_group"] = s.zero_columns_per_group;
    j["norm_histogram"] = s.norm_histogram;
    return j.dump();
}

}  // namespace

RunResult run_pretrain(const RunConfig& cfg, const RunOptions& options) {
    cfg.validate();
    const std::filesystem::path dir(cfg.out_dir);
    std::filesystem::create_directories(dir);
    {
        std::ofstream(dir / "config.json", std::ios::trunc) << cfg.to_json() << '\n';
    }
    const DataSplits splits = load_splits(cfg.dataset, cfg.seed);
    Trainer trainer(cfg, splits.train);

    const auto metrics_path = dir / "metrics.jsonl";
    const auto timing_path = dir / "timing.jsonl";
    if (options.resume) {
        trainer.restore(load_checkpoint(*options.resume), options.force);
        truncate_jsonl(metrics_path, trainer.step());
        truncate_jsonl(timing_path, trainer.step());
    } else {
        std::ofstream(metrics_path, std::ios::trunc);
        std::ofstream(timing_path, std::ios::trunc);
    }
    std::ofstream metrics(metrics_path, std::ios::app);
    std::ofstream timing(timing_path, std::ios::app);

    RunResult result;
    const std::size_t bpe = trainer.batches_per_epoch();
    const std::size_t end = options.stop_at ? std::min(*options.stop_at, cfg.optim.steps) : cfg.optim.steps;
    while (trainer.step() < end) {
        const auto t0 = std::chrono::steady_clock::now();
        StepMetrics m;
        try {
            m = trainer.train_step();
        } catch (const NumericError& e) {
            save_checkpoint((dir / "last_good.sjck").string(), trainer.checkpoint());
            ordered_json j;
            j["event"] = "abort";
            j["step"] = trainer.step() + 1;
            j["reason"] = e.what();
            metrics << j.dump() << '\n';
            result.aborted = true;
            result.abort_reason = e.what();
            return result;
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        metrics << m.to_json() << '\n';
        metrics.flush();
        ordered_json tj;
        tj["step"] = m.step;
        tj["wall_time"] = secs;
        timing << tj.dump() << '\n';
        timing.flush();
        result.metrics.push_back(m);
        if (!options.quiet && (m.step % 10 == 0 || m.step == 1)) {
            std::ostringstream os;
            os << "step " << m.step << " jepa " << m.jepa << " total " << m.total << " zero_cols " << m.zero_columns
               << " (" << secs << " s)\n";
            std::fputs(os.str().c_str(), stderr);
        }
        if (trainer.step() % bpe == 0) {
            if (cfg.loss.group_head) {
                metrics << sparsity_event(m, sparsity_stats(trainer.model().head)) << '\n';
            }
            save_checkpoint((dir / "checkpoint.sjck").string(), trainer.checkpoint());
        }
    }
    const auto ckpt = trainer.checkpoint();
    save_checkpoint((dir / "checkpoint.sjck").string(), ckpt);
    if (trainer.step() >= cfg.optim.steps) {
        save_checkpoint((dir / "final.sjck").string(), ckpt);
    }
    return result;
}

}  // namespace sjepa
