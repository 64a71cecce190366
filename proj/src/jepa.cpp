#include "sjepa/jepa.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "sjepa/errors.hpp"

namespace sjepa {

namespace {

void check_range(const char* what, const Range& r, bool unit) {
    bool ok = r.first > 0.0 && r.first <= r.second && (!unit || r.second <= 1.0);
    if (!ok) {
        throw ConfigError(std::string("mask: invalid ") + what + " range");
    }
}

struct Rect {
    std::size_t top, left, height, width;
};

Rect sample_rect(const PatchGrid& grid, Rng& rng, const Range& scale, const Range& aspect) {
    const double n = static_cast<double>(grid.n_patches());
    const double s = uniform(rng, scale.first, scale.second);
    const double r = uniform(rng, aspect.first, aspect.second);
    const double area = s * n;
    auto h = static_cast<std::size_t>(std::lround(std::sqrt(area * r)));
    auto w = static_cast<std::size_t>(std::lround(std::sqrt(area / r)));
    h = std::clamp<std::size_t>(h, 1, grid.rows);
    w = std::clamp<std::size_t>(w, 1, grid.cols);
    // Rounding both sides up can overshoot the largest admissible area.
    const auto cap = std::max<std::size_t>(1, static_cast<std::size_t>(std::floor(scale.second * n)));
    while (h * w > cap) {
        if (static_cast<double>(h) / static_cast<double>(w) > r && h > 1) {
            --h;
        } else if (w > 1) {
            --w;
        } else {
            --h;
        }
    }
    Rect rect{0, 0, h, w};
    rect.top = uniform_index(rng, grid.rows - h + 1);
    rect.left = uniform_index(rng, grid.cols - w + 1);
    return rect;
}

std::vector<std::size_t> rect_indices(const PatchGrid& grid, const Rect& r) {
    std::vector<std::size_t> out;
    out.reserve(r.height * r.width);
    for (std::size_t y = r.top; y < r.top + r.height; ++y) {
        for (std::size_t x = r.left; x < r.left + r.width; ++x) {
            out.push_back(y * grid.cols + x);
        }
    }
    return out;
}

}  // namespace

void MaskParams::validate() const {
    if (num_targets == 0) {
        throw ConfigError("mask: need at least one target block");
    }
    check_range("target scale", target_scale, true);
    check_range("target aspect", target_aspect, false);
    check_range("context scale", context_scale, true);
}

void MaskSpec::validate() const {
    const auto n = grid.n_patches();
    if (context.empty()) {
        throw ContractError("mask: empty context");
    }
    if (targets.empty()) {
        throw ContractError("mask: no target blocks");
    }
    std::vector<char> in_context(n, 0);
    for (auto i : context) {
        if (i >= n) {
            throw ContractError("mask: context index " + std::to_string(i) + " outside grid");
        }
        in_context[i] = 1;
    }
    for (const auto& block : targets) {
        if (block.empty()) {
            throw ContractError("mask: empty target block");
        }
        for (auto i : block) {
            if (i >= n) {
                throw ContractError("mask: target index " + std::to_string(i) + " outside grid");
            }
            if (in_context[i]) {
                throw ContractError("mask: patch " + std::to_string(i) + " is both context and target");
            }
        }
    }
}

std::size_t MaskSpec::total_target_patches() const {
    std::size_t n = 0;
    for (const auto& b : targets) {
        n += b.size();
    }
    return n;
}

MaskSpec sample_masks(const PatchGrid& grid, Rng& rng, const MaskParams& params) {
    params.validate();
    if (grid.n_patches() == 0) {
        throw ContractError("mask: empty grid");
    }
    const Range full{1.0, 1.0};
    for (std::size_t attempt = 0; attempt < 2 * params.max_retries; ++attempt) {
        const Range& ctx_scale = attempt < params.max_retries ? params.context_scale : full;
        MaskSpec spec;
        spec.grid = grid;
        std::vector<char> is_target(grid.n_patches(), 0);
        for (std::size_t m = 0; m < params.num_targets; ++m) {
            auto block = rect_indices(grid, sample_rect(grid, rng, params.target_scale, params.target_aspect));
            for (auto i : block) {
                is_target[i] = 1;
            }
            spec.targets.push_back(std::move(block));
        }
        for (auto i : rect_indices(grid, sample_rect(grid, rng, ctx_scale, {1.0, 1.0}))) {
            if (!is_target[i]) {
                spec.context.push_back(i);
            }
        }
        if (!spec.context.empty()) {
            return spec;
        }
    }
    throw SamplingError("mask: context empty after " + std::to_string(2 * params.max_retries) + " attempts");
}

ParamSet PredictorParams::named() const {
    ParamSet out = sjepa::named(embed, "embed");
    out.push_back({"mask_token", mask_token});
    for (std::size_t i = 0; i < blocks.size(); ++i) {
        append(out, sjepa::named(blocks[i], "blocks." + std::to_string(i)));
    }
    append(out, sjepa::named(norm, "norm"));
    append(out, sjepa::named(head, "head"));
    return out;
}

PredictorParams init_predictor(std::size_t embed_dim, const PredictorConfig& cfg, Rng& rng) {
    if (cfg.width == 0 || cfg.width % 4 != 0 || cfg.heads == 0 || cfg.width % cfg.heads != 0) {
        throw ConfigError("predictor: width must be divisible by 4 and by the head count");
    }
    PredictorParams p;
    p.embed = init_linear(embed_dim, cfg.width, rng);
    std::vector<double> token(cfg.width);
    for (auto& v : token) {
        v = truncated_normal(rng, kInitStd);
    }
    p.mask_token = Tensor::from({cfg.width}, std::move(token));
    const auto hidden = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(cfg.mlp_ratio * cfg.width)));
    for (std::size_t i = 0; i < cfg.depth; ++i) {
        p.blocks.push_back(init_block(cfg.width, hidden, rng));
    }
    p.norm = init_layer_norm(cfg.width);
    p.head = init_linear(cfg.width, embed_dim, rng);
    return p;
}

Tensor encode_context(const Tensor& image, const ViTConfig& cfg, const ViTParams& student, const MaskSpec& mask) {
    Tensor patches = gather_rows(patchify(image, cfg), mask.context);
    Tensor positions = gather_rows(positional_encoding(cfg.grid(), cfg.embed_dim), mask.context);
    return encode_patches(patches, positions, cfg, student);
}

TargetEncoding encode_targets(const Tensor& image, const ViTConfig& cfg, const ViTParams& teacher,
                              const MaskSpec& mask) {
    NoGradGuard no_grad;
    TargetEncoding out;
    out.full = encode(image, cfg, teacher).detach();
    for (const auto& block : mask.targets) {
        out.blocks.push_back(gather_rows(out.full, block));
    }
    return out;
}

std::vector<Tensor> predict_targets(const Tensor& context_emb, const MaskSpec& mask, const PredictorParams& predictor,
                                    const PredictorConfig& cfg) {
    if (context_emb.rank() != 2 || context_emb.dim(0) != mask.context.size()) {
        throw DimensionError("predict_targets: context embedding " + shape_str(context_emb.shape()) +
                             " does not match " + std::to_string(mask.context.size()) + " context patches");
    }
    const Tensor positions = positional_encoding(mask.grid, cfg.width);
    const Tensor token_row = reshape(predictor.mask_token, {1, cfg.width});
    const Tensor context_tokens = add(linear(context_emb, predictor.embed), gather_rows(positions, mask.context));
    const std::size_t n_ctx = mask.context.size();

    std::vector<Tensor> predictions;
    predictions.reserve(mask.targets.size());
    for (const auto& block : mask.targets) {
        std::vector<std::size_t> repeat(block.size(), 0);
        Tensor queries = add(gather_rows(token_row, repeat), gather_rows(positions, block));
        Tensor x = concat({context_tokens, queries}, 0);
        for (const auto& b : predictor.blocks) {
            x = transformer_block(x, b, cfg.heads);
        }
        x = layer_norm(x, predictor.norm);
        std::vector<std::size_t> tail(block.size());
        for (std::size_t i = 0; i < block.size(); ++i) {
            tail[i] = n_ctx + i;
        }
        predictions.push_back(linear(gather_rows(x, tail), predictor.head));
    }
    return predictions;
}

Tensor jepa_loss(const std::vector<Tensor>& predictions, const std::vector<Tensor>& targets, const MaskSpec& mask) {
    const auto m = mask.targets.size();
    if (m == 0 || predictions.size() != m || targets.size() != m) {
        throw ContractError("jepa_loss: expected " + std::to_string(m) + " blocks, got " +
                            std::to_string(predictions.size()) + " predictions and " + std::to_string(targets.size()) +
                            " targets");
    }
    Tensor total;
    for (std::size_t i = 0; i < m; ++i) {
        if (predictions[i].shape() != targets[i].shape() || predictions[i].rank() != 2 ||
            predictions[i].dim(0) != mask.targets[i].size()) {
            throw ContractError("jepa_loss: block " + std::to_string(i) + " misaligned: prediction " +
                                shape_str(predictions[i].shape()) + ", target " + shape_str(targets[i].shape()) +
                                ", mask has " + std::to_string(mask.targets[i].size()) + " patches");
        }
        Tensor block = sum(square(sub(predictions[i], targets[i])));
        total = total.defined() ? add(total, block) : block;
    }
    return scale(total, 1.0 / static_cast<double>(m));
}

void ema_update(const ParamSet& teacher, const ParamSet& student, double momentum) {
    if (!(momentum >= 0.0 && momentum <= 1.0)) {
        throw ContractError("ema_update: momentum must lie in [0, 1]");
    }
    if (teacher.size() != student.size()) {
        throw ContractError("ema_update: parameter lists differ in length");
    }
    for (std::size_t i = 0; i < teacher.size(); ++i) {
        Tensor t = teacher[i].tensor;
        const Tensor& s = student[i].tensor;
        if (t.shape() != s.shape()) {
            throw DimensionError("ema_update: " + teacher[i].name + " shape " + shape_str(t.shape()) + " vs " +
                                 shape_str(s.shape()));
        }
        auto td = t.mutable_data();
        auto sd = s.data();
        for (std::size_t k = 0; k < td.size(); ++k) {
            td[k] = momentum * td[k] + (1.0 - momentum) * sd[k];
        }
    }
}

void ema_update(EncoderPair& pair) { ema_update(pair.teacher.named(), pair.student.named(), pair.momentum); }

}  // namespace sjepa
