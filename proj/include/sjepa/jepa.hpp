#pragma once

#include <cstddef>
#include <utility>
#include <vector>

#include "sjepa/rng.hpp"
#include "sjepa/vit.hpp"

namespace sjepa {

using Range = std::pair<double, double>;

struct MaskParams {
    std::size_t num_targets = 4;
    Range target_scale{0.15, 0.2};
    Range target_aspect{0.75, 1.5};
    Range context_scale{0.85, 1.0};
    /// Attempts with the configured context scale before falling back to a
    /// full-grid context block; the fallback gets the same number of attempts.
    std::size_t max_retries = 20;

    void validate() const;
};

/// One context index set plus M target blocks over a patch grid.
struct MaskSpec {
    PatchGrid grid;
    std::vector<std::size_t> context;               // sorted, disjoint from every target
    std::vector<std::vector<std::size_t>> targets;  // row-major order within each block

    /// Throws ContractError if any structural invariant is broken.
    void validate() const;
    std::size_t total_target_patches() const;
    bool operator==(const MaskSpec&) const = default;
};

/// Samples M rectangular target blocks by area scale and aspect ratio, then one
/// square context block minus all target patches. Deterministic in the rng state.
MaskSpec sample_masks(const PatchGrid& grid, Rng& rng, const MaskParams& params = {});

struct PredictorConfig {
    std::size_t width = 64;
    std::size_t depth = 2;
    std::size_t heads = 4;
    double mlp_ratio = 4.0;
};

struct PredictorParams {
    Linear embed;       // encoder width -> predictor width
    Tensor mask_token;  // [width]
    std::vector<TransformerBlock> blocks;
    LayerNormParams norm;
    Linear head;  // predictor width -> encoder width

    ParamSet named() const;
};

PredictorParams init_predictor(std::size_t embed_dim, const PredictorConfig& cfg, Rng& rng);

struct EncoderPair {
    ViTParams student;
    ViTParams teacher;
    double momentum = 0.996;
};

/// Student encoding of the context patches only: [|context|, d].
Tensor encode_context(const Tensor& image, const ViTConfig& cfg, const ViTParams& student, const MaskSpec& mask);

struct TargetEncoding {
    Tensor full;                 // [n_patches, d] teacher embedding of the whole image
    std::vector<Tensor> blocks;  // rows of `full` for each target block
};

/// Teacher encodes the full image without recording gradients; rows of each
/// target block are then selected.
TargetEncoding encode_targets(const Tensor& image, const ViTConfig& cfg, const ViTParams& teacher,
                              const MaskSpec& mask);

/// For each target block, mask tokens (plus positions) are appended to the
/// projected context tokens and run through the predictor; returns one
/// [|B_i|, d] prediction per block in the block's patch order.
std::vector<Tensor> predict_targets(const Tensor& context_emb, const MaskSpec& mask, const PredictorParams& predictor,
                                    const PredictorConfig& cfg);

/// (1/M) * sum_i sum_{j in B_i} ||pred_j - target_j||^2. Averaged over blocks, not patches.
Tensor jepa_loss(const std::vector<Tensor>& predictions, const std::vector<Tensor>& targets, const MaskSpec& mask);

/// teacher <- m * teacher + (1 - m) * student, elementwise.
void ema_update(EncoderPair& pair);
void ema_update(const ParamSet& teacher, const ParamSet& student, double momentum);

}  // namespace sjepa
