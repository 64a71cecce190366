#include "sjepa/sparsity.hpp"

#include <cmath>

#include "sjepa/errors.hpp"

namespace sjepa {

void GroupPartition::validate(std::size_t n_patches) const {
    if (groups < 2) {
        throw ContractError("partition: need at least two groups, got " + std::to_string(groups));
    }
    if (assignment.size() != n_patches) {
        throw ContractError("partition: assigns " + std::to_string(assignment.size()) + " patches, grid has " +
                            std::to_string(n_patches));
    }
    std::vector<std::size_t> sizes(groups, 0);
    for (auto g : assignment) {
        if (g >= groups) {
            throw ContractError("partition: group id " + std::to_string(g) + " out of range");
        }
        ++sizes[g];
    }
    for (std::size_t g = 0; g < groups; ++g) {
        if (sizes[g] == 0) {
            throw ContractError("partition: group " + std::to_string(g) + " is empty");
        }
    }
}

std::vector<std::vector<std::size_t>> GroupPartition::members() const {
    std::vector<std::vector<std::size_t>> out(groups);
    for (std::size_t i = 0; i < assignment.size(); ++i) {
        out[assignment[i]].push_back(i);
    }
    return out;
}

GroupPartition spatial_partition(const PatchGrid& grid, std::size_t groups) {
    auto side = static_cast<std::size_t>(std::lround(std::sqrt(static_cast<double>(groups))));
    if (side * side != groups || side > grid.rows || side > grid.cols) {
        throw ConfigError("partition: " + std::to_string(groups) + " groups is not a square tiling of a " +
                          std::to_string(grid.rows) + "x" + std::to_string(grid.cols) + " grid");
    }
    GroupPartition p;
    p.groups = groups;
    p.assignment.resize(grid.n_patches());
    for (std::size_t r = 0; r < grid.rows; ++r) {
        for (std::size_t c = 0; c < grid.cols; ++c) {
            p.assignment[r * grid.cols + c] = (r * side / grid.rows) * side + c * side / grid.cols;
        }
    }
    p.validate(grid.n_patches());
    return p;
}

ParamSet GroupHead::named() const {
    ParamSet out;
    for (std::size_t g = 0; g < weights.size(); ++g) {
        out.push_back({"W." + std::to_string(g), weights[g]});
        out.push_back({"b." + std::to_string(g), biases[g]});
    }
    return out;
}

GroupHead init_group_head(std::size_t embed_dim, std::size_t latent_dim, std::size_t groups, Rng& rng) {
    GroupHead head;
    for (std::size_t g = 0; g < groups; ++g) {
        std::vector<double> w(embed_dim * latent_dim);
        for (auto& v : w) {
            v = truncated_normal(rng, kInitStd);
        }
        head.weights.push_back(Tensor::from({embed_dim, latent_dim}, std::move(w)));
        head.biases.push_back(Tensor::zeros({embed_dim}));
    }
    return head;
}

std::string to_string(PenaltyMode mode) { return mode == PenaltyMode::proximal ? "proximal" : "subgradient"; }

PenaltyMode penalty_mode_from_string(const std::string& s) {
    if (s == "proximal") {
        return PenaltyMode::proximal;
    }
    if (s == "subgradient") {
        return PenaltyMode::subgradient;
    }
    throw ConfigError("unknown penalty mode '" + s + "'");
}

void LossConfig::validate() const {
    if (!(lambda >= 0.0) || !(beta >= 0.0)) {
        throw ConfigError("loss: lambda and beta must be non-negative");
    }
    if (!(rho > 0.0 && rho < 1.0)) {
        throw ConfigError("loss: rho must lie in (0, 1)");
    }
    if (latent_dim == 0) {
        throw ConfigError("loss: latent_dim must be positive");
    }
    if (group_head && groups < 2) {
        throw ConfigError("loss: need at least two groups");
    }
    if (!(lr > 0.0)) {
        throw ConfigError("loss: learning rate must be positive");
    }
}

Tensor pool_latent(const Tensor& context_emb, const Linear& projection) {
    if (context_emb.rank() != 2) {
        throw DimensionError("pool_latent: expected [n_ctx, d], got " + shape_str(context_emb.shape()));
    }
    if (context_emb.dim(0) == 0) {
        throw ContractError("pool_latent: empty context");
    }
    const std::size_t d = context_emb.dim(1);
    Tensor pooled = reshape(mean(context_emb, 0), {1, d});
    Tensor z = linear(pooled, projection);
    return reshape(z, {z.dim(1)});
}

Tensor group_targets(const Tensor& target_emb_full, const GroupPartition& partition) {
    if (target_emb_full.rank() != 2) {
        throw DimensionError("group_targets: expected [n_patches, d], got " + shape_str(target_emb_full.shape()));
    }
    partition.validate(target_emb_full.dim(0));
    const std::size_t d = target_emb_full.dim(1);
    auto src = target_emb_full.data();
    std::vector<double> out(partition.groups * d, 0.0);
    std::vector<std::size_t> counts(partition.groups, 0);
    for (std::size_t i = 0; i < partition.assignment.size(); ++i) {
        const auto g = partition.assignment[i];
        ++counts[g];
        for (std::size_t k = 0; k < d; ++k) {
            out[g * d + k] += src[i * d + k];
        }
    }
    for (std::size_t g = 0; g < partition.groups; ++g) {
        for (std::size_t k = 0; k < d; ++k) {
            out[g * d + k] /= static_cast<double>(counts[g]);
        }
    }
    return Tensor::from({partition.groups, d}, std::move(out));
}

Tensor group_reconstruction_loss(const Tensor& z, const GroupHead& head, const Tensor& targets) {
    const std::size_t groups = head.groups();
    if (groups == 0 || targets.rank() != 2 || targets.dim(0) != groups) {
        throw DimensionError("group_reconstruction_loss: targets " + shape_str(targets.shape()) + " for " +
                             std::to_string(groups) + " groups");
    }
    const std::size_t k = head.latent_dim();
    const std::size_t d = targets.dim(1);
    if (z.shape() != Shape{k}) {
        throw DimensionError("group_reconstruction_loss: latent " + shape_str(z.shape()) + " vs K=" +
                             std::to_string(k));
    }
    Tensor column = reshape(z, {k, 1});
    Tensor total;
    for (std::size_t g = 0; g < groups; ++g) {
        if (head.weights[g].shape() != Shape{d, k}) {
            throw DimensionError("group_reconstruction_loss: W^(" + std::to_string(g) + ") is " +
                                 shape_str(head.weights[g].shape()));
        }
        std::size_t row = g;
        Tensor target = reshape(gather_rows(targets, std::span<const std::size_t>(&row, 1)), {d});
        Tensor out = add(reshape(matmul(head.weights[g], column), {d}), head.biases[g]);
        Tensor err = sum(square(sub(out, target)));
        total = total.defined() ? add(total, err) : err;
    }
    return scale(total, 1.0 / static_cast<double>(groups));
}

Tensor group_lasso_penalty(const GroupHead& head) {
    Tensor total;
    for (const auto& w : head.weights) {
        Tensor s = sum(column_norms(w));
        total = total.defined() ? add(total, s) : s;
    }
    return total.defined() ? total : Tensor::scalar(0.0);
}

double group_lasso_value(const GroupHead& head) {
    NoGradGuard no_grad;
    return group_lasso_penalty(head).item();
}

Tensor kl_sparsity_penalty(const Tensor& latents, double rho) {
    if (!(rho > 0.0 && rho < 1.0)) {
        throw ContractError("kl_sparsity_penalty: rho must lie in (0, 1)");
    }
    if (latents.rank() != 2) {
        throw DimensionError("kl_sparsity_penalty: expected [batch, K], got " + shape_str(latents.shape()));
    }
    constexpr double lo = 1e-6;
    const std::size_t k = latents.dim(1);
    Tensor rate = clamp(mean(sigmoid(latents), 0), lo, 1.0 - lo);
    Tensor complement = sub(Tensor::full({k}, 1.0), rate);
    const double constant = static_cast<double>(k) * (rho * std::log(rho) + (1.0 - rho) * std::log(1.0 - rho));
    Tensor cross = add(scale(sum(log(rate)), rho), scale(sum(log(complement)), 1.0 - rho));
    return sub(Tensor::scalar(constant), cross);
}

namespace {

void require_finite(const char* name, const Tensor& t) {
    if (t.defined() && !std::isfinite(t.item())) {
        throw NumericError(std::string("non-finite loss component '") + name + "': " + std::to_string(t.item()));
    }
}

}  // namespace

Tensor total_loss(const LossTerms& terms, const LossConfig& cfg) {
    require_finite("jepa", terms.jepa);
    require_finite("group_recon", terms.group_recon);
    require_finite("kl", terms.kl);
    require_finite("penalty", terms.penalty);
    if (!terms.jepa.defined()) {
        throw ContractError("total_loss: the prediction term is required");
    }
    Tensor total = terms.jepa;
    if (terms.group_recon.defined()) {
        total = add(total, terms.group_recon);
    }
    if (terms.kl.defined()) {
        total = add(total, scale(terms.kl, cfg.beta));
    }
    if (terms.penalty.defined()) {
        total = add(total, scale(terms.penalty, cfg.lambda));
    }
    return total;
}

double total_loss(double jepa, double group_recon, double kl, double penalty, const LossConfig& cfg) {
    for (double v : {jepa, group_recon, kl, penalty}) {
        if (!std::isfinite(v)) {
            throw NumericError("non-finite loss component: " + std::to_string(v));
        }
    }
    return jepa + group_recon + cfg.beta * kl + cfg.lambda * penalty;
}

void proximal_step(GroupHead& head, double lambda, double lr) {
    if (!(lambda >= 0.0) || !(lr >= 0.0)) {
        throw ContractError("proximal_step: lambda and lr must be non-negative");
    }
    const double threshold = lambda * lr;
    for (auto& w : head.weights) {
        const std::size_t d = w.dim(0), k = w.dim(1);
        auto data = w.mutable_data();
        for (std::size_t j = 0; j < k; ++j) {
            double sq = 0.0;
            for (std::size_t i = 0; i < d; ++i) {
                sq += data[i * k + j] * data[i * k + j];
            }
            const double norm = std::sqrt(sq);
            if (norm <= threshold) {
                for (std::size_t i = 0; i < d; ++i) {
                    data[i * k + j] = 0.0;
                }
            } else if (threshold > 0.0) {
                const double kept = norm - threshold;
                for (std::size_t i = 0; i < d; ++i) {
                    data[i * k + j] = data[i * k + j] * kept / norm;
                }
            }
        }
    }
}

const std::vector<double>& SparsityStats::histogram_edges() {
    static const std::vector<double> edges{1e-4, 1e-3, 1e-2, 1e-1, 1.0};
    return edges;
}

namespace {

std::vector<double> column_norm_values(const Tensor& w) {
    const std::size_t d = w.dim(0), k = w.dim(1);
    auto data = w.data();
    std::vector<double> norms(k, 0.0);
    for (std::size_t i = 0; i < d; ++i) {
        for (std::size_t j = 0; j < k; ++j) {
            norms[j] += data[i * k + j] * data[i * k + j];
        }
    }
    for (auto& n : norms) {
        n = std::sqrt(n);
    }
    return norms;
}

}  // namespace

SparsityStats sparsity_stats(const GroupHead& head) {
    const auto& edges = SparsityStats::histogram_edges();
    SparsityStats stats;
    stats.norm_histogram.assign(edges.size() + 2, 0);
    for (const auto& w : head.weights) {
        std::size_t zeros = 0;
        for (double n : column_norm_values(w)) {
            if (n == 0.0) {
                ++zeros;
                ++stats.norm_histogram[0];
                continue;
            }
            std::size_t bin = 1;
            while (bin <= edges.size() && n > edges[bin - 1]) {
                ++bin;
            }
            ++stats.norm_histogram[bin];
        }
        stats.zero_columns_per_group.push_back(zeros);
        stats.zero_columns += zeros;
    }
    return stats;
}

std::vector<std::vector<bool>> influence_map(const GroupHead& head) {
    std::vector<std::vector<bool>> out;
    for (const auto& w : head.weights) {
        std::vector<bool> row;
        for (double n : column_norm_values(w)) {
            row.push_back(n != 0.0);
        }
        out.push_back(std::move(row));
    }
    return out;
}

}  // namespace sjepa
