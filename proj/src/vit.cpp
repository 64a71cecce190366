#include "sjepa/vit.hpp"

#include <cmath>
#include <string>

#include "sjepa/errors.hpp"

namespace sjepa {

void ViTConfig::validate() const {
    if (image_size == 0 || patch_size == 0 || channels == 0 || embed_dim == 0 || depth == 0 || heads == 0) {
        throw ConfigError("vit: all sizes must be positive");
    }
    if (image_size % patch_size != 0) {
        throw ConfigError("vit: image_size " + std::to_string(image_size) + " not divisible by patch_size " +
                          std::to_string(patch_size));
    }
    if (embed_dim % heads != 0) {
        throw ConfigError("vit: embed_dim " + std::to_string(embed_dim) + " not divisible by heads " +
                          std::to_string(heads));
    }
    if (embed_dim % 4 != 0) {
        throw ConfigError("vit: embed_dim must be divisible by 4 for 2-D sin-cos positions");
    }
    if (!(mlp_ratio > 0.0)) {
        throw ConfigError("vit: mlp_ratio must be positive");
    }
}

std::size_t ViTConfig::mlp_dim() const {
    return std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(mlp_ratio * static_cast<double>(embed_dim))));
}

Linear init_linear(std::size_t in, std::size_t out, Rng& rng) {
    std::vector<double> w(in * out);
    for (auto& v : w) {
        v = truncated_normal(rng, kInitStd);
    }
    return {Tensor::from({in, out}, std::move(w)), Tensor::zeros({out})};
}

LayerNormParams init_layer_norm(std::size_t width) { return {Tensor::full({width}, 1.0), Tensor::zeros({width})}; }

TransformerBlock init_block(std::size_t width, std::size_t hidden, Rng& rng) {
    TransformerBlock b;
    b.norm1 = init_layer_norm(width);
    b.qkv = init_linear(width, 3 * width, rng);
    b.proj = init_linear(width, width, rng);
    b.norm2 = init_layer_norm(width);
    b.fc1 = init_linear(width, hidden, rng);
    b.fc2 = init_linear(hidden, width, rng);
    return b;
}

ViTParams init_vit(const ViTConfig& cfg, Rng& rng) {
    cfg.validate();
    ViTParams p;
    p.patch_embed = init_linear(cfg.patch_dim(), cfg.embed_dim, rng);
    for (std::size_t i = 0; i < cfg.depth; ++i) {
        p.blocks.push_back(init_block(cfg.embed_dim, cfg.mlp_dim(), rng));
    }
    p.norm = init_layer_norm(cfg.embed_dim);
    return p;
}

Linear clone(const Linear& l) { return {l.weight.detach(), l.bias.detach()}; }
LayerNormParams clone(const LayerNormParams& n) { return {n.gain.detach(), n.bias.detach()}; }

TransformerBlock clone(const TransformerBlock& b) {
    return {clone(b.norm1), clone(b.qkv), clone(b.proj), clone(b.norm2), clone(b.fc1), clone(b.fc2)};
}

ViTParams clone(const ViTParams& p) {
    ViTParams out;
    out.patch_embed = clone(p.patch_embed);
    for (const auto& b : p.blocks) {
        out.blocks.push_back(clone(b));
    }
    out.norm = clone(p.norm);
    return out;
}

ParamSet named(const Linear& l, const std::string& prefix) {
    return {{prefix + ".weight", l.weight}, {prefix + ".bias", l.bias}};
}

ParamSet named(const LayerNormParams& n, const std::string& prefix) {
    return {{prefix + ".gain", n.gain}, {prefix + ".bias", n.bias}};
}

ParamSet named(const TransformerBlock& b, const std::string& prefix) {
    ParamSet out;
    append(out, named(b.norm1, prefix + ".norm1"));
    append(out, named(b.qkv, prefix + ".qkv"));
    append(out, named(b.proj, prefix + ".proj"));
    append(out, named(b.norm2, prefix + ".norm2"));
    append(out, named(b.fc1, prefix + ".fc1"));
    append(out, named(b.fc2, prefix + ".fc2"));
    return out;
}

ParamSet ViTParams::named() const {
    ParamSet out = sjepa::named(patch_embed, "patch_embed");
    for (std::size_t i = 0; i < blocks.size(); ++i) {
        append(out, sjepa::named(blocks[i], "blocks." + std::to_string(i)));
    }
    append(out, sjepa::named(norm, "norm"));
    return out;
}

Tensor linear(const Tensor& x, const Linear& l) { return affine(x, l.weight, l.bias); }

Tensor layer_norm(const Tensor& x, const LayerNormParams& n) { return layer_norm(x, n.gain, n.bias, kLayerNormEps); }

Tensor transformer_block(const Tensor& x, const TransformerBlock& block, std::size_t heads, AttentionTrace* trace) {
    if (x.rank() != 2) {
        throw DimensionError("transformer_block: expected [tokens, width], got " + shape_str(x.shape()));
    }
    const std::size_t width = x.dim(1);
    if (width % heads != 0) {
        throw DimensionError("transformer_block: width " + std::to_string(width) + " not divisible into " +
                             std::to_string(heads) + " heads");
    }
    Tensor qkv = linear(layer_norm(x, block.norm1), block.qkv);
    Tensor mixed = attention(qkv, heads, trace);
    Tensor h = add(x, linear(mixed, block.proj));
    Tensor mlp = linear(gelu(linear(layer_norm(h, block.norm2), block.fc1)), block.fc2);
    return add(h, mlp);
}

namespace {

std::vector<std::size_t> patch_index(const ViTConfig& cfg) {
    const std::size_t p = cfg.patch_size, s = cfg.image_size, c = cfg.channels;
    const PatchGrid grid = cfg.grid();
    std::vector<std::size_t> index;
    index.reserve(c * s * s);
    for (std::size_t pr = 0; pr < grid.rows; ++pr) {
        for (std::size_t pc = 0; pc < grid.cols; ++pc) {
            for (std::size_t ch = 0; ch < c; ++ch) {
                for (std::size_t y = 0; y < p; ++y) {
                    for (std::size_t x = 0; x < p; ++x) {
                        index.push_back((ch * s + pr * p + y) * s + pc * p + x);
                    }
                }
            }
        }
    }
    return index;
}

}  // namespace

Tensor patchify(const Tensor& image, const ViTConfig& cfg) {
    const Shape expected{cfg.channels, cfg.image_size, cfg.image_size};
    if (image.shape() != expected) {
        throw DimensionError("patchify: image " + shape_str(image.shape()) + " does not match expected " +
                             shape_str(expected));
    }
    auto index = patch_index(cfg);
    return gather_flat(image, index, {cfg.grid().n_patches(), cfg.patch_dim()});
}

Tensor unpatchify(const Tensor& patches, const ViTConfig& cfg) {
    const Shape expected{cfg.grid().n_patches(), cfg.patch_dim()};
    if (patches.shape() != expected) {
        throw DimensionError("unpatchify: patches " + shape_str(patches.shape()) + " do not match " +
                             shape_str(expected));
    }
    auto forward = patch_index(cfg);
    std::vector<std::size_t> inverse(forward.size());
    for (std::size_t i = 0; i < forward.size(); ++i) {
        inverse[forward[i]] = i;
    }
    return gather_flat(patches, inverse, {cfg.channels, cfg.image_size, cfg.image_size});
}

Tensor positional_encoding(const PatchGrid& grid, std::size_t d) {
    if (d == 0 || d % 4 != 0) {
        throw DimensionError("positional_encoding: width " + std::to_string(d) + " not divisible by 4");
    }
    const std::size_t quarter = d / 4;
    std::vector<double> out(grid.n_patches() * d);
    for (std::size_t r = 0; r < grid.rows; ++r) {
        for (std::size_t c = 0; c < grid.cols; ++c) {
            double* row = out.data() + (r * grid.cols + c) * d;
            for (std::size_t k = 0; k < quarter; ++k) {
                double omega = 1.0 / std::pow(10000.0, static_cast<double>(k) / static_cast<double>(quarter));
                row[k] = std::sin(static_cast<double>(r) * omega);
                row[quarter + k] = std::cos(static_cast<double>(r) * omega);
                row[2 * quarter + k] = std::sin(static_cast<double>(c) * omega);
                row[3 * quarter + k] = std::cos(static_cast<double>(c) * omega);
            }
        }
    }
    return Tensor::from({grid.n_patches(), d}, std::move(out));
}

Tensor encode_patches(const Tensor& patches, const Tensor& positions, const ViTConfig& cfg, const ViTParams& params,
                      AttentionTrace* trace) {
    Tensor x = add(linear(patches, params.patch_embed), positions);
    for (const auto& block : params.blocks) {
        x = transformer_block(x, block, cfg.heads, trace);
    }
    return layer_norm(x, params.norm);
}

Tensor encode(const Tensor& image, const ViTConfig& cfg, const ViTParams& params, AttentionTrace* trace) {
    return encode_patches(patchify(image, cfg), positional_encoding(cfg.grid(), cfg.embed_dim), cfg, params, trace);
}

}  // namespace sjepa
