#include "sjepa/probe.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <set>

#include "sjepa/errors.hpp"
#include "sjepa/parallel.hpp"

namespace sjepa {

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMatrix>;
using Map = Eigen::Map<RowMatrix>;

}  // namespace

void FeatureTable::validate() const {
    if (features.size() != n * d || labels.size() != n) {
        throw ContractError("feature table: " + std::to_string(features.size()) + " values and " +
                            std::to_string(labels.size()) + " labels for " + std::to_string(n) + " x " +
                            std::to_string(d));
    }
    for (double v : features) {
        if (!std::isfinite(v)) {
            throw ContractError("feature table: non-finite feature");
        }
    }
}

std::vector<double> mean_pool(const Tensor& patch_embeddings) {
    if (patch_embeddings.rank() != 2 || patch_embeddings.dim(0) == 0) {
        throw DimensionError("mean_pool: expected non-empty [n, d], got " + shape_str(patch_embeddings.shape()));
    }
    const std::size_t n = patch_embeddings.dim(0), d = patch_embeddings.dim(1);
    std::vector<double> out(d, 0.0);
    auto v = patch_embeddings.data();
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < d; ++j) {
            out[j] += v[i * d + j];
        }
    }
    for (auto& x : out) {
        x /= static_cast<double>(n);
    }
    return out;
}

FeatureTable extract_features(const data::Dataset& dataset, const ViTConfig& cfg, const ViTParams& encoder) {
    FeatureTable t;
    t.n = dataset.size();
    t.d = cfg.embed_dim;
    t.features.assign(t.n * t.d, 0.0);
    t.labels.resize(t.n);
    parallel_for(t.n, [&](std::size_t i) {
        NoGradGuard guard;
        auto pooled = mean_pool(encode(dataset.image(i), cfg, encoder));
        std::copy(pooled.begin(), pooled.end(), t.features.begin() + static_cast<std::ptrdiff_t>(i * t.d));
        t.labels[i] = dataset.label(i);
    });
    t.validate();
    return t;
}

std::vector<double> LinearProbe::logits(const FeatureTable& table, std::size_t row) const {
    std::vector<double> out(bias);
    for (std::size_t j = 0; j < d; ++j) {
        const double x = (table.at(row, j) - feature_mean[j]) / feature_std[j];
        for (std::size_t c = 0; c < classes; ++c) {
            out[c] += x * weight[j * classes + c];
        }
    }
    return out;
}

FeatureTable standardize(const LinearProbe& probe, const FeatureTable& table) {
    FeatureTable s = table;
    for (std::size_t i = 0; i < s.n; ++i) {
        for (std::size_t j = 0; j < s.d; ++j) {
            s.features[i * s.d + j] = (table.at(i, j) - probe.feature_mean[j]) / probe.feature_std[j];
        }
    }
    return s;
}

double probe_objective(const LinearProbe& probe, const FeatureTable& standardized, double weight_decay,
                       std::vector<double>* grad_w, std::vector<double>* grad_b) {
    const auto n = static_cast<Eigen::Index>(standardized.n);
    const auto d = static_cast<Eigen::Index>(probe.d);
    const auto c = static_cast<Eigen::Index>(probe.classes);
    ConstMap x(standardized.features.data(), n, d);
    ConstMap w(probe.weight.data(), d, c);
    Eigen::Map<const Eigen::RowVectorXd> b(probe.bias.data(), c);

    RowMatrix logits = x * w;
    logits.rowwise() += b;
    double loss = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
        const double mx = logits.row(i).maxCoeff();
        logits.row(i).array() -= mx;
        const double lse = std::log(logits.row(i).array().exp().sum());
        loss += lse - logits(i, static_cast<Eigen::Index>(standardized.labels[static_cast<std::size_t>(i)]));
        // turn the row into softmax probabilities minus the one-hot label
        logits.row(i) = (logits.row(i).array() - lse).exp();
        logits(i, static_cast<Eigen::Index>(standardized.labels[static_cast<std::size_t>(i)])) -= 1.0;
    }
    loss /= static_cast<double>(n);
    loss += 0.5 * weight_decay * w.squaredNorm();
    if (grad_w) {
        grad_w->assign(probe.weight.size(), 0.0);
        Map gw(grad_w->data(), d, c);
        gw.noalias() = x.transpose() * logits / static_cast<double>(n);
        gw += weight_decay * w;
    }
    if (grad_b) {
        grad_b->assign(probe.bias.size(), 0.0);
        Eigen::Map<Eigen::RowVectorXd> gb(grad_b->data(), c);
        gb = logits.colwise().sum() / static_cast<double>(n);
    }
    return loss;
}

LinearProbe train_linear_probe(const FeatureTable& train, const ProbeConfig& cfg, std::size_t num_classes) {
    train.validate();
    if (train.n == 0) {
        throw ContractError("train_linear_probe: empty table");
    }
    const std::set<std::size_t> present(train.labels.begin(), train.labels.end());
    if (present.size() < 2) {
        throw ContractError("train_linear_probe: at least two classes are required, found " +
                            std::to_string(present.size()));
    }
    if (!(cfg.lr > 0.0) || cfg.weight_decay < 0.0) {
        throw ContractError("train_linear_probe: lr must be positive and weight decay non-negative");
    }
    LinearProbe p;
    p.d = train.d;
    p.classes = std::max(num_classes, *present.rbegin() + 1);
    p.feature_mean.assign(p.d, 0.0);
    p.feature_std.assign(p.d, 0.0);
    for (std::size_t i = 0; i < train.n; ++i) {
        for (std::size_t j = 0; j < p.d; ++j) {
            p.feature_mean[j] += train.at(i, j);
        }
    }
    for (auto& m : p.feature_mean) {
        m /= static_cast<double>(train.n);
    }
    for (std::size_t i = 0; i < train.n; ++i) {
        for (std::size_t j = 0; j < p.d; ++j) {
            const double dv = train.at(i, j) - p.feature_mean[j];
            p.feature_std[j] += dv * dv;
        }
    }
    for (auto& s : p.feature_std) {
        s = std::sqrt(s / static_cast<double>(train.n));
        if (!(s > 1e-12)) {
            s = 1.0;
        }
    }
    Rng rng(cfg.seed);
    p.weight.resize(p.d * p.classes);
    for (auto& w : p.weight) {
        w = truncated_normal(rng, 1e-3);
    }
    p.bias.assign(p.classes, 0.0);

    const FeatureTable x = standardize(p, train);
    std::vector<double> gw, gb;
    double lr = cfg.lr;
    double loss = probe_objective(p, x, cfg.weight_decay, &gw, &gb);
    LinearProbe candidate = p;
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        for (;;) {
            for (std::size_t k = 0; k < p.weight.size(); ++k) {
                candidate.weight[k] = p.weight[k] - lr * gw[k];
            }
            for (std::size_t k = 0; k < p.bias.size(); ++k) {
                candidate.bias[k] = p.bias[k] - lr * gb[k];
            }
            const double next = probe_objective(candidate, x, cfg.weight_decay, nullptr, nullptr);
            if (next <= loss) {
                break;
            }
            lr *= 0.5;
            if (lr < 1e-12) {
                candidate.weight = p.weight;
                candidate.bias = p.bias;
                break;
            }
        }
        p.weight = candidate.weight;
        p.bias = candidate.bias;
        loss = probe_objective(p, x, cfg.weight_decay, &gw, &gb);
        p.loss_history.push_back(loss);
    }
    return p;
}

double top1_from_logits(const std::vector<double>& logits, std::size_t classes, const std::vector<std::size_t>& labels) {
    if (labels.empty()) {
        throw ContractError("top1_accuracy: empty table");
    }
    if (classes == 0 || logits.size() != labels.size() * classes) {
        throw ContractError("top1_accuracy: logits do not match labels");
    }
    std::size_t correct = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        std::size_t best = 0;
        for (std::size_t c = 1; c < classes; ++c) {
            if (logits[i * classes + c] > logits[i * classes + best]) {
                best = c;
            }
        }
        correct += best == labels[i] ? 1 : 0;
    }
    return static_cast<double>(correct) / static_cast<double>(labels.size());
}

double top1_accuracy(const LinearProbe& probe, const FeatureTable& table) {
    if (table.n == 0) {
        throw ContractError("top1_accuracy: empty table");
    }
    if (table.d != probe.d) {
        throw ContractError("top1_accuracy: probe width " + std::to_string(probe.d) + " does not match table width " +
                            std::to_string(table.d));
    }
    std::vector<double> logits;
    logits.reserve(table.n * probe.classes);
    for (std::size_t i = 0; i < table.n; ++i) {
        auto row = probe.logits(table, i);
        logits.insert(logits.end(), row.begin(), row.end());
    }
    return top1_from_logits(logits, probe.classes, table.labels);
}

}  // namespace sjepa
