#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "sjepa/params.hpp"
#include "sjepa/rng.hpp"
#include "sjepa/vit.hpp"

namespace sjepa {

/// Assignment of every patch to exactly one of G >= 2 groups.
struct GroupPartition {
    std::size_t groups = 0;
    std::vector<std::size_t> assignment;  // patch index -> group id

    void validate(std::size_t n_patches) const;
    std::vector<std::vector<std::size_t>> members() const;
};

/// Splits the grid into a sqrt(G) x sqrt(G) arrangement of contiguous cells
/// (G = 4 gives quadrants). G must be a perfect square no larger than the grid.
GroupPartition spatial_partition(const PatchGrid& grid, std::size_t groups);

/// Latent-to-group matrices: W^(g) is [d, K]; column j of W^(g) is the
/// influence of latent j on group g.
struct GroupHead {
    std::vector<Tensor> weights;
    std::vector<Tensor> biases;  // [d] each

    std::size_t groups() const { return weights.size(); }
    std::size_t latent_dim() const { return weights.empty() ? 0 : weights[0].dim(1); }
    ParamSet named() const;
};

GroupHead init_group_head(std::size_t embed_dim, std::size_t latent_dim, std::size_t groups, Rng& rng);

enum class PenaltyMode { proximal, subgradient };

std::string to_string(PenaltyMode mode);
PenaltyMode penalty_mode_from_string(const std::string& s);

struct LossConfig {
    double lambda = 0.01;  // group-lasso weight
    double beta = 0.1;     // KL weight
    double rho = 0.05;     // target activation rate
    std::size_t latent_dim = 32;
    std::size_t groups = 4;
    double lr = 5e-4;  // step size coupling the proximal threshold lambda * lr
    PenaltyMode mode = PenaltyMode::proximal;
    bool group_head = true;  // false ablates pooling, group head, KL and penalty

    void validate() const;
};

/// Mean over context rows followed by a learned linear map to K dims: [n_ctx, d] -> [K].
Tensor pool_latent(const Tensor& context_emb, const Linear& projection);

/// Row g is the mean embedding over the patches of group g. Never carries gradient.
Tensor group_targets(const Tensor& target_emb_full, const GroupPartition& partition);

/// (1/G) * sum_g ||W^(g) z + b^(g) - t_g||^2.
Tensor group_reconstruction_loss(const Tensor& z, const GroupHead& head, const Tensor& targets);

/// sum_g sum_j ||W^(g)_{.,j}||_2 (without the lambda factor).
Tensor group_lasso_penalty(const GroupHead& head);
double group_lasso_value(const GroupHead& head);

/// Bernoulli KL between a target rate rho and the batch-mean logistic
/// activation of each latent, summed over latents. latents: [batch, K].
Tensor kl_sparsity_penalty(const Tensor& latents, double rho);

/// Loss components; undefined members are ablated and contribute nothing.
struct LossTerms {
    Tensor jepa;
    Tensor group_recon;
    Tensor kl;
    Tensor penalty;
};

/// jepa + group_recon + beta * kl + lambda * penalty. Throws NumericError when a
/// component is non-finite.
Tensor total_loss(const LossTerms& terms, const LossConfig& cfg);
double total_loss(double jepa, double group_recon, double kl, double penalty, const LossConfig& cfg);

/// Block soft-threshold of every column: col <- max(0, 1 - t/||col||) col with
/// t = lambda * lr. Columns with norm <= t become exact zeros.
void proximal_step(GroupHead& head, double lambda, double lr);

struct SparsityStats {
    std::vector<std::size_t> zero_columns_per_group;
    std::size_t zero_columns = 0;
    /// Column-norm histogram: bin 0 counts exact zeros, bins 1.. count norms
    /// in (edge[i-1], edge[i]], the last bin everything above the final edge.
    std::vector<std::size_t> norm_histogram;
    static const std::vector<double>& histogram_edges();
};

SparsityStats sparsity_stats(const GroupHead& head);

/// active[g][j] is true when column j of W^(g) is nonzero.
std::vector<std::vector<bool>> influence_map(const GroupHead& head);

}  // namespace sjepa
