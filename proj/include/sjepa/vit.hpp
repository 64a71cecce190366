#pragma once

#include <cstddef>
#include <vector>

#include "sjepa/params.hpp"
#include "sjepa/rng.hpp"
#include "sjepa/tensor.hpp"

namespace sjepa {

struct PatchGrid {
    std::size_t rows = 0;
    std::size_t cols = 0;

    std::size_t n_patches() const { return rows * cols; }
    bool operator==(const PatchGrid&) const = default;
};

struct ViTConfig {
    std::size_t image_size = 32;
    std::size_t patch_size = 4;
    std::size_t channels = 3;
    std::size_t embed_dim = 64;
    std::size_t depth = 4;
    std::size_t heads = 4;
    double mlp_ratio = 4.0;

    /// Throws ConfigError when sizes are inconsistent.
    void validate() const;

    PatchGrid grid() const { return {image_size / patch_size, image_size / patch_size}; }
    std::size_t patch_dim() const { return channels * patch_size * patch_size; }
    std::size_t mlp_dim() const;
};

inline constexpr double kLayerNormEps = 1e-6;
inline constexpr double kInitStd = 0.02;

struct Linear {
    Tensor weight;  // [in, out]
    Tensor bias;    // [out]
};

struct LayerNormParams {
    Tensor gain;
    Tensor bias;
};

struct TransformerBlock {
    LayerNormParams norm1;
    Linear qkv;
    Linear proj;
    LayerNormParams norm2;
    Linear fc1;
    Linear fc2;
};

struct ViTParams {
    Linear patch_embed;
    std::vector<TransformerBlock> blocks;
    LayerNormParams norm;

    ParamSet named() const;
};

/// Attention probabilities recorded per layer, then per head: [n, n] each.
using AttentionTrace = std::vector<Tensor>;

Linear init_linear(std::size_t in, std::size_t out, Rng& rng);
LayerNormParams init_layer_norm(std::size_t width);
TransformerBlock init_block(std::size_t width, std::size_t hidden, Rng& rng);
ViTParams init_vit(const ViTConfig& cfg, Rng& rng);

/// Deep copy with fresh storage and no gradient history.
Linear clone(const Linear& l);
LayerNormParams clone(const LayerNormParams& n);
TransformerBlock clone(const TransformerBlock& b);
ViTParams clone(const ViTParams& p);

ParamSet named(const Linear& l, const std::string& prefix);
ParamSet named(const LayerNormParams& n, const std::string& prefix);
ParamSet named(const TransformerBlock& b, const std::string& prefix);

Tensor linear(const Tensor& x, const Linear& l);
Tensor layer_norm(const Tensor& x, const LayerNormParams& n);

/// Pre-norm block: x + MHSA(LN(x)), then x + MLP(LN(x)).
Tensor transformer_block(const Tensor& x, const TransformerBlock& block, std::size_t heads,
                         AttentionTrace* trace = nullptr);

/// [C, H, W] image -> [n_patches, C*p*p]; row i is patch i in row-major grid order,
/// each row flattened channel-major then pixel row then pixel column.
Tensor patchify(const Tensor& image, const ViTConfig& cfg);

/// Inverse of patchify.
Tensor unpatchify(const Tensor& patches, const ViTConfig& cfg);

/// Fixed 2-D sine-cosine encoding. The first d/2 columns encode the patch row,
/// the last d/2 the patch column; within each half, column k and k + d/4 hold
/// sin and cos of the same frequency.
Tensor positional_encoding(const PatchGrid& grid, std::size_t d);

/// Runs the encoder on already-gathered patch rows with their positional rows.
Tensor encode_patches(const Tensor& patches, const Tensor& positions, const ViTConfig& cfg, const ViTParams& params,
                      AttentionTrace* trace = nullptr);

/// Full-image encoder: [C, H, W] -> [n_patches, d] patch embeddings (no class token).
Tensor encode(const Tensor& image, const ViTConfig& cfg, const ViTParams& params, AttentionTrace* trace = nullptr);

}  // namespace sjepa
