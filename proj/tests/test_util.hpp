#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "sjepa/grad_check.hpp"
#include "sjepa/jepa.hpp"
#include "sjepa/rng.hpp"
#include "sjepa/sparsity.hpp"
#include "sjepa/tensor.hpp"
#include "sjepa/vit.hpp"

namespace sjepa::test {

inline Tensor random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
    std::vector<double> v(shape_numel(shape));
    for (auto& x : v) {
        x = uniform(rng, lo, hi);
    }
    return Tensor::from(std::move(shape), std::move(v));
}

/// sum(w * y) with fixed random weights, so every output coordinate matters
/// and gradients stay O(1).
inline Tensor weighted_sum(const Tensor& y, std::uint64_t seed) {
    Rng rng(seed ^ 0x5eedULL);
    return sum(mul(y, random_tensor(y.shape(), rng)));
}

/// Tiny encoder: 8x8 image, patch 4 (2x2 grid), d=16, 2 blocks.
inline ViTConfig toy_vit() {
    ViTConfig c;
    c.image_size = 8;
    c.patch_size = 4;
    c.embed_dim = 16;
    c.depth = 2;
    c.heads = 2;
    c.mlp_ratio = 2.0;
    return c;
}

inline PredictorConfig toy_predictor() {
    PredictorConfig p;
    p.width = 16;
    p.depth = 2;
    p.heads = 2;
    p.mlp_ratio = 2.0;
    return p;
}

/// Random parameters with a larger spread than the training init so that
/// nonlinearities are exercised away from their linear regime.
inline void perturb(const ParamSet& params, Rng& rng, double spread) {
    for (const auto& p : params) {
        Tensor t = p.tensor;
        for (auto& v : t.mutable_data()) {
            v += uniform(rng, -spread, spread);
        }
    }
}

/// Full SparseJEPA objective on a toy model: JEPA + group reconstruction +
/// beta * KL + lambda * group lasso, over a batch of two fixed images.
struct ToyModel {
    ViTConfig vit = toy_vit();
    PredictorConfig pcfg = toy_predictor();
    ViTParams student, teacher;
    PredictorParams predictor;
    Linear proj;
    GroupHead head;
    GroupPartition partition;
    LossConfig loss;
    std::vector<Tensor> images;
    std::vector<MaskSpec> masks;

    explicit ToyModel(std::uint64_t seed) {
        Rng rng(seed);
        student = init_vit(vit, rng);
        teacher = init_vit(vit, rng);
        predictor = init_predictor(vit.embed_dim, pcfg, rng);
        loss.latent_dim = 6;
        loss.groups = 4;
        loss.lambda = 0.05;
        loss.beta = 0.3;
        loss.mode = PenaltyMode::subgradient;
        proj = init_linear(vit.embed_dim, loss.latent_dim, rng);
        head = init_group_head(vit.embed_dim, loss.latent_dim, loss.groups, rng);
        perturb(params(), rng, 0.3);
        perturb(teacher.named(), rng, 0.3);
        partition = spatial_partition(vit.grid(), loss.groups);
        for (int i = 0; i < 2; ++i) {
            images.push_back(random_tensor({3, 8, 8}, rng));
        }
        const PatchGrid g = vit.grid();
        masks.push_back(MaskSpec{g, {0, 1}, {{2}, {3}}});
        masks.push_back(MaskSpec{g, {1, 3}, {{0, 2}}});
    }

    ParamSet params() const {
        ParamSet p = with_prefix("student.", student.named());
        append(p, with_prefix("predictor.", predictor.named()));
        append(p, named(proj, "proj"));
        append(p, with_prefix("head.", head.named()));
        return p;
    }

    Tensor total() const {
        Tensor jepa, recon;
        std::vector<Tensor> latents;
        for (std::size_t b = 0; b < images.size(); ++b) {
            const auto targets = encode_targets(images[b], vit, teacher, masks[b]);
            const Tensor ctx = encode_context(images[b], vit, student, masks[b]);
            const Tensor jl = jepa_loss(predict_targets(ctx, masks[b], predictor, pcfg), targets.blocks, masks[b]);
            const Tensor z = pool_latent(ctx, proj);
            const Tensor rl = group_reconstruction_loss(z, head, group_targets(targets.full, partition));
            jepa = jepa.defined() ? add(jepa, jl) : jl;
            recon = recon.defined() ? add(recon, rl) : rl;
            latents.push_back(reshape(z, {1, z.dim(0)}));
        }
        LossTerms t;
        t.jepa = scale(jepa, 0.5);
        t.group_recon = scale(recon, 0.5);
        t.kl = kl_sparsity_penalty(concat(latents, 0), 0.3);
        t.penalty = group_lasso_penalty(head);
        return total_loss(t, loss);
    }
};

}  // namespace sjepa::test
