#include <Eigen/Core>

#include <algorithm>
#include <cassert>
#include <cmath>
#include <numbers>

#include "sjepa/errors.hpp"
#include "sjepa/tensor.hpp"

namespace sjepa {

namespace {

using detail::Node;
using NodePtr = std::shared_ptr<Node>;
using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

const NodePtr& node_of(const Tensor& t) {
    if (!t.defined()) {
        throw ContractError("use of an undefined tensor");
    }
    return t.node();
}

[[maybe_unused]] bool all_finite(std::span<const double> v) {
    return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

Tensor make_result(Shape shape, Buffer data, std::vector<NodePtr> inputs,
                   std::function<void(Node&)> backward_rule) {
    auto node = std::make_shared<Node>();
    node->shape = std::move(shape);
    node->data = std::move(data);
    assert(node->data.size() == shape_numel(node->shape));
#ifndef NDEBUG
    bool finite_inputs = std::all_of(inputs.begin(), inputs.end(), [](const NodePtr& n) { return all_finite(n->data); });
    assert(!finite_inputs || all_finite(node->data));
#endif
    auto& tape = Tape::current();
    bool needs_grad = tape.grad_enabled() &&
                      std::any_of(inputs.begin(), inputs.end(), [](const NodePtr& n) { return n->requires_grad; });
    if (needs_grad) {
        node->requires_grad = true;
        node->inputs = std::move(inputs);
        node->backward = std::move(backward_rule);
        tape.record(node);
    }
    return Tensor(std::move(node));
}

// Gradient buffer of input i if it participates in differentiation.
double* grad_target(Node& self, std::size_t i) {
    auto& in = *self.inputs[i];
    if (!in.requires_grad) {
        return nullptr;
    }
    in.ensure_grad();
    return in.grad.data();
}

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) {
        throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                             shape_str(b.shape()));
    }
}

void require_rank(const char* op, const Tensor& x, std::size_t rank) {
    if (x.rank() != rank) {
        throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                             shape_str(x.shape()));
    }
}

struct AxisSplit {
    std::size_t outer, len, inner;
};

AxisSplit split_at(const Shape& shape, std::size_t axis) {
    AxisSplit s{1, shape[axis], 1};
    for (std::size_t i = 0; i < axis; ++i) {
        s.outer *= shape[i];
    }
    for (std::size_t i = axis + 1; i < shape.size(); ++i) {
        s.inner *= shape[i];
    }
    return s;
}

template <class F, class DF>
Tensor unary(const Tensor& x, F f, DF df) {
    const auto& xn = node_of(x);
    Buffer out(xn->data.size());
    std::transform(xn->data.begin(), xn->data.end(), out.begin(), f);
    return make_result(xn->shape, std::move(out), {xn}, [df](Node& self) {
        if (double* gx = grad_target(self, 0)) {
            const auto& xd = self.inputs[0]->data;
            for (std::size_t i = 0; i < xd.size(); ++i) {
                gx[i] += self.grad[i] * df(xd[i], self.data[i]);
            }
        }
    });
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
        throw DimensionError("matmul: incompatible shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
    }
    const auto m = a.dim(0), k = a.dim(1), n = b.dim(1);
    Buffer out(m * n);
    MutMap(out.data(), m, n).noalias() = ConstMap(a.data().data(), m, k) * ConstMap(b.data().data(), k, n);
    return make_result({m, n}, std::move(out), {node_of(a), node_of(b)}, [m, k, n](Node& self) {
        ConstMap dc(self.grad.data(), m, n);
        if (double* ga = grad_target(self, 0)) {
            MutMap(ga, m, k).noalias() += dc * ConstMap(self.inputs[1]->data.data(), k, n).transpose();
        }
        if (double* gb = grad_target(self, 1)) {
            MutMap(gb, k, n).noalias() += ConstMap(self.inputs[0]->data.data(), m, k).transpose() * dc;
        }
    });
}

Tensor add(const Tensor& a, const Tensor& b) {
    require_same_shape("add", a, b);
    Buffer out(a.numel());
    auto ad = a.data(), bd = b.data();
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = ad[i] + bd[i];
    }
    return make_result(a.shape(), std::move(out), {node_of(a), node_of(b)}, [](Node& self) {
        for (std::size_t k = 0; k < 2; ++k) {
            if (double* g = grad_target(self, k)) {
                for (std::size_t i = 0; i < self.grad.size(); ++i) {
                    g[i] += self.grad[i];
                }
            }
        }
    });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    require_same_shape("sub", a, b);
    Buffer out(a.numel());
    auto ad = a.data(), bd = b.data();
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = ad[i] - bd[i];
    }
    return make_result(a.shape(), std::move(out), {node_of(a), node_of(b)}, [](Node& self) {
        if (double* g = grad_target(self, 0)) {
            for (std::size_t i = 0; i < self.grad.size(); ++i) {
                g[i] += self.grad[i];
            }
        }
        if (double* g = grad_target(self, 1)) {
            for (std::size_t i = 0; i < self.grad.size(); ++i) {
                g[i] -= self.grad[i];
            }
        }
    });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    require_same_shape("mul", a, b);
    Buffer out(a.numel());
    auto ad = a.data(), bd = b.data();
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = ad[i] * bd[i];
    }
    return make_result(a.shape(), std::move(out), {node_of(a), node_of(b)}, [](Node& self) {
        const auto& ad = self.inputs[0]->data;
        const auto& bd = self.inputs[1]->data;
        if (double* g = grad_target(self, 0)) {
            for (std::size_t i = 0; i < self.grad.size(); ++i) {
                g[i] += self.grad[i] * bd[i];
            }
        }
        if (double* g = grad_target(self, 1)) {
            for (std::size_t i = 0; i < self.grad.size(); ++i) {
                g[i] += self.grad[i] * ad[i];
            }
        }
    });
}

Tensor scale(const Tensor& a, double factor) {
    return unary(a, [factor](double x) { return x * factor; }, [factor](double, double) { return factor; });
}

Tensor add_row_vector(const Tensor& x, const Tensor& row) {
    require_rank("add_row_vector", x, 2);
    if (row.rank() != 1 || row.dim(0) != x.dim(1)) {
        throw DimensionError("add_row_vector: " + shape_str(row.shape()) + " does not broadcast over " +
                             shape_str(x.shape()));
    }
    const auto m = x.dim(0), n = x.dim(1);
    Buffer out(x.data().begin(), x.data().end());
    auto rd = row.data();
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            out[i * n + j] += rd[j];
        }
    }
    return make_result(x.shape(), std::move(out), {node_of(x), node_of(row)}, [m, n](Node& self) {
        if (double* gx = grad_target(self, 0)) {
            for (std::size_t i = 0; i < m * n; ++i) {
                gx[i] += self.grad[i];
            }
        }
        if (double* gr = grad_target(self, 1)) {
            for (std::size_t i = 0; i < m; ++i) {
                for (std::size_t j = 0; j < n; ++j) {
                    gr[j] += self.grad[i * n + j];
                }
            }
        }
    });
}

Tensor reshape(const Tensor& x, Shape shape) {
    if (shape_numel(shape) != x.numel() || std::find(shape.begin(), shape.end(), 0) != shape.end()) {
        throw DimensionError("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
    }
    Buffer out(x.data().begin(), x.data().end());
    return make_result(std::move(shape), std::move(out), {node_of(x)}, [](Node& self) {
        if (double* g = grad_target(self, 0)) {
            for (std::size_t i = 0; i < self.grad.size(); ++i) {
                g[i] += self.grad[i];
            }
        }
    });
}

Tensor transpose(const Tensor& x) {
    require_rank("transpose", x, 2);
    const auto m = x.dim(0), n = x.dim(1);
    Buffer out(m * n);
    MutMap(out.data(), n, m) = ConstMap(x.data().data(), m, n).transpose();
    return make_result({n, m}, std::move(out), {node_of(x)}, [m, n](Node& self) {
        if (double* g = grad_target(self, 0)) {
            MutMap(g, m, n) += ConstMap(self.grad.data(), n, m).transpose();
        }
    });
}

Tensor gather_rows(const Tensor& x, std::span<const std::size_t> rows) {
    if (x.rank() < 1 || rows.empty()) {
        throw DimensionError("gather_rows: need a non-scalar source and at least one index");
    }
    const auto n_rows = x.dim(0);
    const auto width = x.numel() / n_rows;
    for (auto r : rows) {
        if (r >= n_rows) {
            throw DimensionError("gather_rows: index " + std::to_string(r) + " out of range for " +
                                 shape_str(x.shape()));
        }
    }
    Shape shape = x.shape();
    shape[0] = rows.size();
    Buffer out(rows.size() * width);
    auto xd = x.data();
    for (std::size_t i = 0; i < rows.size(); ++i) {
        std::copy_n(xd.begin() + static_cast<std::ptrdiff_t>(rows[i] * width), width,
                    out.begin() + static_cast<std::ptrdiff_t>(i * width));
    }
    std::vector<std::size_t> idx(rows.begin(), rows.end());
    return make_result(std::move(shape), std::move(out), {node_of(x)}, [idx = std::move(idx), width](Node& self) {
        if (double* g = grad_target(self, 0)) {
            for (std::size_t i = 0; i < idx.size(); ++i) {
                for (std::size_t j = 0; j < width; ++j) {
                    g[idx[i] * width + j] += self.grad[i * width + j];
                }
            }
        }
    });
}

Tensor embedding_lookup(const Tensor& table, std::span<const std::size_t> ids) {
    require_rank("embedding_lookup", table, 2);
    return gather_rows(table, ids);
}

Tensor slice_cols(const Tensor& x, std::size_t start, std::size_t count) {
    require_rank("slice_cols", x, 2);
    const auto m = x.dim(0), n = x.dim(1);
    if (count == 0 || start + count > n) {
        throw DimensionError("slice_cols: columns [" + std::to_string(start) + ", " + std::to_string(start + count) +
                             ") out of range for " + shape_str(x.shape()));
    }
    Buffer out(m * count);
    auto xd = x.data();
    for (std::size_t i = 0; i < m; ++i) {
        std::copy_n(xd.begin() + static_cast<std::ptrdiff_t>(i * n + start), count,
                    out.begin() + static_cast<std::ptrdiff_t>(i * count));
    }
    return make_result({m, count}, std::move(out), {node_of(x)}, [m, n, start, count](Node& self) {
        if (double* g = grad_target(self, 0)) {
            for (std::size_t i = 0; i < m; ++i) {
                for (std::size_t j = 0; j < count; ++j) {
                    g[i * n + start + j] += self.grad[i * count + j];
                }
            }
        }
    });
}

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
    if (parts.empty()) {
        throw DimensionError("concat: no inputs");
    }
    const Shape& first = parts[0].shape();
    if (axis >= first.size()) {
        throw DimensionError("concat: axis " + std::to_string(axis) + " out of range for " + shape_str(first));
    }
    Shape shape = first;
    shape[axis] = 0;
    std::vector<NodePtr> inputs;
    for (const auto& p : parts) {
        const Shape& s = p.shape();
        bool ok = s.size() == first.size();
        for (std::size_t i = 0; ok && i < s.size(); ++i) {
            ok = i == axis || s[i] == first[i];
        }
        if (!ok) {
            throw DimensionError("concat: " + shape_str(s) + " incompatible with " + shape_str(first) +
                                 " along axis " + std::to_string(axis));
        }
        shape[axis] += s[axis];
        inputs.push_back(node_of(p));
    }
    const auto outer = split_at(shape, axis).outer;
    const auto inner = split_at(shape, axis).inner;
    const auto out_stride = shape[axis] * inner;
    Buffer out(shape_numel(shape));
    std::vector<std::size_t> lens;
    std::size_t offset = 0;
    for (const auto& p : parts) {
        const auto len = p.dim(axis) * inner;
        auto pd = p.data();
        for (std::size_t o = 0; o < outer; ++o) {
            std::copy_n(pd.begin() + static_cast<std::ptrdiff_t>(o * len), len,
                        out.begin() + static_cast<std::ptrdiff_t>(o * out_stride + offset));
        }
        lens.push_back(len);
        offset += len;
    }
    return make_result(std::move(shape), std::move(out), std::move(inputs),
                       [lens = std::move(lens), outer, out_stride](Node& self) {
                           std::size_t offset = 0;
                           for (std::size_t k = 0; k < lens.size(); ++k) {
                               if (double* g = grad_target(self, k)) {
                                   for (std::size_t o = 0; o < outer; ++o) {
                                       for (std::size_t j = 0; j < lens[k]; ++j) {
                                           g[o * lens[k] + j] += self.grad[o * out_stride + offset + j];
                                       }
                                   }
                               }
                               offset += lens[k];
                           }
                       });
}

Tensor gather_flat(const Tensor& x, std::span<const std::size_t> index, Shape shape) {
    if (shape_numel(shape) != index.size()) {
        throw DimensionError("gather_flat: " + std::to_string(index.size()) + " indices for shape " + shape_str(shape));
    }
    const auto n = x.numel();
    auto xd = x.data();
    Buffer out(index.size());
    for (std::size_t i = 0; i < index.size(); ++i) {
        if (index[i] >= n) {
            throw DimensionError("gather_flat: index " + std::to_string(index[i]) + " out of range for " +
                                 shape_str(x.shape()));
        }
        out[i] = xd[index[i]];
    }
    std::vector<std::size_t> idx(index.begin(), index.end());
    return make_result(std::move(shape), std::move(out), {node_of(x)}, [idx = std::move(idx)](Node& self) {
        if (double* g = grad_target(self, 0)) {
            for (std::size_t i = 0; i < idx.size(); ++i) {
                g[idx[i]] += self.grad[i];
            }
        }
    });
}

Tensor sum(const Tensor& x) {
    auto xd = x.data();
    double total = 0.0;
    for (double v : xd) {
        total += v;
    }
    return make_result({}, {total}, {node_of(x)}, [](Node& self) {
        if (double* g = grad_target(self, 0)) {
            const auto n = self.inputs[0]->data.size();
            for (std::size_t i = 0; i < n; ++i) {
                g[i] += self.grad[0];
            }
        }
    });
}

Tensor mean(const Tensor& x, std::size_t axis) {
    if (axis >= x.rank()) {
        throw DimensionError("mean: axis " + std::to_string(axis) + " out of range for " + shape_str(x.shape()));
    }
    const auto [outer, len, inner] = split_at(x.shape(), axis);
    Shape shape = x.shape();
    shape.erase(shape.begin() + static_cast<std::ptrdiff_t>(axis));
    Buffer out(outer * inner, 0.0);
    auto xd = x.data();
    for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t a = 0; a < len; ++a) {
            for (std::size_t i = 0; i < inner; ++i) {
                out[o * inner + i] += xd[(o * len + a) * inner + i];
            }
        }
    }
    const double inv = 1.0 / static_cast<double>(len);
    for (auto& v : out) {
        v *= inv;
    }
    return make_result(std::move(shape), std::move(out), {node_of(x)}, [outer, len, inner, inv](Node& self) {
        if (double* g = grad_target(self, 0)) {
            for (std::size_t o = 0; o < outer; ++o) {
                for (std::size_t a = 0; a < len; ++a) {
                    for (std::size_t i = 0; i < inner; ++i) {
                        g[(o * len + a) * inner + i] += self.grad[o * inner + i] * inv;
                    }
                }
            }
        }
    });
}

Tensor square(const Tensor& x) {
    return unary(x, [](double v) { return v * v; }, [](double v, double) { return 2.0 * v; });
}

Tensor sqrt(const Tensor& x) {
    return unary(x, [](double v) { return std::sqrt(v); }, [](double, double y) { return 0.5 / y; });
}

Tensor log(const Tensor& x) {
    return unary(x, [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; });
}

Tensor sigmoid(const Tensor& x) {
    return unary(
        x,
        [](double v) { return v >= 0.0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v)); },
        [](double, double y) { return y * (1.0 - y); });
}

Tensor clamp(const Tensor& x, double lo, double hi) {
    if (!(lo <= hi)) {
        throw ContractError("clamp: lower bound exceeds upper bound");
    }
    return unary(
        x, [lo, hi](double v) { return std::clamp(v, lo, hi); },
        [lo, hi](double v, double) { return (v >= lo && v <= hi) ? 1.0 : 0.0; });
}

Tensor gelu(const Tensor& x) {
    constexpr double c = 0.7978845608028654;  // sqrt(2/pi)
    constexpr double a = 0.044715;
    const auto& xn = node_of(x);
    const auto size = static_cast<Eigen::Index>(xn->data.size());
    Eigen::Map<const Eigen::ArrayXd> v(xn->data.data(), size);
    // tanh(u) = 1 - 2 / (exp(2u) + 1), using the vectorized exp
    auto t = std::make_shared<Eigen::ArrayXd>(1.0 - 2.0 / ((2.0 * c * (v + a * v.cube())).exp() + 1.0));
    Buffer out(xn->data.size());
    Eigen::Map<Eigen::ArrayXd>(out.data(), size) = 0.5 * v * (1.0 + *t);
    return make_result(xn->shape, std::move(out), {xn}, [t, c, a, size](Node& self) {
        if (double* gx = grad_target(self, 0)) {
            Eigen::Map<const Eigen::ArrayXd> v(self.inputs[0]->data.data(), size);
            Eigen::Map<const Eigen::ArrayXd> g(self.grad.data(), size);
            Eigen::Map<Eigen::ArrayXd>(gx, size) +=
                g * (0.5 * (1.0 + *t) + 0.5 * v * (1.0 - t->square()) * c * (1.0 + 3.0 * a * v.square()));
        }
    });
}

Tensor softmax(const Tensor& x, std::size_t axis) {
    if (axis >= x.rank()) {
        throw DimensionError("softmax: axis " + std::to_string(axis) + " out of range for " + shape_str(x.shape()));
    }
    const auto [outer, len, inner] = split_at(x.shape(), axis);
    auto xd = x.data();
    Buffer out(xd.size());
    for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t i = 0; i < inner; ++i) {
            auto at = [&, o = o, i = i](std::size_t a) { return (o * len + a) * inner + i; };
            double hi = xd[at(0)];
            for (std::size_t a = 1; a < len; ++a) {
                hi = std::max(hi, xd[at(a)]);
            }
            double z = 0.0;
            for (std::size_t a = 0; a < len; ++a) {
                out[at(a)] = std::exp(xd[at(a)] - hi);
                z += out[at(a)];
            }
            for (std::size_t a = 0; a < len; ++a) {
                out[at(a)] /= z;
            }
        }
    }
    return make_result(x.shape(), std::move(out), {node_of(x)}, [outer, len, inner](Node& self) {
        if (double* g = grad_target(self, 0)) {
            const auto& y = self.data;
            for (std::size_t o = 0; o < outer; ++o) {
                for (std::size_t i = 0; i < inner; ++i) {
                    double dot = 0.0;
                    for (std::size_t a = 0; a < len; ++a) {
                        auto k = (o * len + a) * inner + i;
                        dot += self.grad[k] * y[k];
                    }
                    for (std::size_t a = 0; a < len; ++a) {
                        auto k = (o * len + a) * inner + i;
                        g[k] += y[k] * (self.grad[k] - dot);
                    }
                }
            }
        }
    });
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
    if (!(eps > 0.0)) {
        throw ContractError("layer_norm: eps must be positive");
    }
    if (x.rank() < 1) {
        throw DimensionError("layer_norm: scalar input");
    }
    const auto width = x.shape().back();
    const auto rows = x.numel() / width;
    const bool affine = gain.defined();
    if (affine != bias.defined()) {
        throw ContractError("layer_norm: gain and bias must both be given or both omitted");
    }
    if (affine && (gain.shape() != Shape{width} || bias.shape() != Shape{width})) {
        throw DimensionError("layer_norm: affine parameters " + shape_str(gain.shape()) + "/" +
                             shape_str(bias.shape()) + " do not match width " + std::to_string(width));
    }
    auto xd = x.data();
    Buffer xhat(xd.size());
    std::vector<double> inv_std(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        const double* row = xd.data() + r * width;
        double mu = 0.0;
        for (std::size_t j = 0; j < width; ++j) {
            mu += row[j];
        }
        mu /= static_cast<double>(width);
        double var = 0.0;
        for (std::size_t j = 0; j < width; ++j) {
            var += (row[j] - mu) * (row[j] - mu);
        }
        var /= static_cast<double>(width);
        inv_std[r] = 1.0 / std::sqrt(var + eps);
        for (std::size_t j = 0; j < width; ++j) {
            xhat[r * width + j] = (row[j] - mu) * inv_std[r];
        }
    }
    Buffer out = xhat;
    std::vector<NodePtr> inputs{node_of(x)};
    if (affine) {
        auto gd = gain.data(), bd = bias.data();
        for (std::size_t r = 0; r < rows; ++r) {
            for (std::size_t j = 0; j < width; ++j) {
                out[r * width + j] = xhat[r * width + j] * gd[j] + bd[j];
            }
        }
        inputs.push_back(node_of(gain));
        inputs.push_back(node_of(bias));
    }
    return make_result(
        x.shape(), std::move(out), std::move(inputs),
        [xhat = std::move(xhat), inv_std = std::move(inv_std), rows, width, affine](Node& self) {
            const double* gd = affine ? self.inputs[1]->data.data() : nullptr;
            if (double* gx = grad_target(self, 0)) {
                std::vector<double> dxhat(width);
                for (std::size_t r = 0; r < rows; ++r) {
                    double m1 = 0.0, m2 = 0.0;
                    for (std::size_t j = 0; j < width; ++j) {
                        dxhat[j] = self.grad[r * width + j] * (gd ? gd[j] : 1.0);
                        m1 += dxhat[j];
                        m2 += dxhat[j] * xhat[r * width + j];
                    }
                    m1 /= static_cast<double>(width);
                    m2 /= static_cast<double>(width);
                    for (std::size_t j = 0; j < width; ++j) {
                        gx[r * width + j] += inv_std[r] * (dxhat[j] - m1 - xhat[r * width + j] * m2);
                    }
                }
            }
            if (!affine) {
                return;
            }
            if (double* gg = grad_target(self, 1)) {
                for (std::size_t r = 0; r < rows; ++r) {
                    for (std::size_t j = 0; j < width; ++j) {
                        gg[j] += self.grad[r * width + j] * xhat[r * width + j];
                    }
                }
            }
            if (double* gb = grad_target(self, 2)) {
                for (std::size_t r = 0; r < rows; ++r) {
                    for (std::size_t j = 0; j < width; ++j) {
                        gb[j] += self.grad[r * width + j];
                    }
                }
            }
        });
}

Tensor column_norms(const Tensor& x) {
    require_rank("column_norms", x, 2);
    const auto m = x.dim(0), n = x.dim(1);
    auto xd = x.data();
    Buffer out(n, 0.0);
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            out[j] += xd[i * n + j] * xd[i * n + j];
        }
    }
    for (auto& v : out) {
        v = std::sqrt(v);
    }
    return make_result({n}, std::move(out), {node_of(x)}, [m, n](Node& self) {
        if (double* g = grad_target(self, 0)) {
            const auto& xd = self.inputs[0]->data;
            for (std::size_t i = 0; i < m; ++i) {
                for (std::size_t j = 0; j < n; ++j) {
                    if (self.data[j] > 0.0) {
                        g[i * n + j] += self.grad[j] * xd[i * n + j] / self.data[j];
                    }
                }
            }
        }
    });
}

}  // namespace sjepa

namespace sjepa {

Tensor affine(const Tensor& x, const Tensor& w, const Tensor& b) {
    if (x.rank() != 2 || w.rank() != 2 || b.rank() != 1 || x.dim(1) != w.dim(0) || b.dim(0) != w.dim(1)) {
        throw DimensionError("affine: incompatible shapes " + shape_str(x.shape()) + ", " + shape_str(w.shape()) +
                             ", " + shape_str(b.shape()));
    }
    const auto m = x.dim(0), k = x.dim(1), n = w.dim(1);
    Buffer out(m * n);
    MutMap o(out.data(), m, n);
    o.noalias() = ConstMap(x.data().data(), m, k) * ConstMap(w.data().data(), k, n);
    o.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(b.data().data(), n);
    return make_result({m, n}, std::move(out), {node_of(x), node_of(w), node_of(b)}, [m, k, n](Node& self) {
        ConstMap dc(self.grad.data(), m, n);
        if (double* gx = grad_target(self, 0)) {
            MutMap(gx, m, k).noalias() += dc * ConstMap(self.inputs[1]->data.data(), k, n).transpose();
        }
        if (double* gw = grad_target(self, 1)) {
            MutMap(gw, k, n).noalias() += ConstMap(self.inputs[0]->data.data(), m, k).transpose() * dc;
        }
        if (double* gb = grad_target(self, 2)) {
            Eigen::Map<Eigen::RowVectorXd>(gb, n) += dc.colwise().sum();
        }
    });
}

Tensor attention(const Tensor& qkv, std::size_t heads, std::vector<Tensor>* probs) {
    if (qkv.rank() != 2 || heads == 0 || qkv.dim(1) % (3 * heads) != 0) {
        throw DimensionError("attention: expected [n, 3d] with d divisible by " + std::to_string(heads) + ", got " +
                             shape_str(qkv.shape()));
    }
    using Strided = Eigen::Map<const RowMat, 0, Eigen::OuterStride<>>;
    using MutStrided = Eigen::Map<RowMat, 0, Eigen::OuterStride<>>;
    const auto n = static_cast<Eigen::Index>(qkv.dim(0));
    const std::size_t d = qkv.dim(1) / 3;
    const auto dh = static_cast<Eigen::Index>(d / heads);
    const auto stride = static_cast<Eigen::Index>(3 * d);
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
    const double* src = qkv.data().data();

    auto p = std::make_shared<std::vector<RowMat>>(heads);
    Buffer out(static_cast<std::size_t>(n) * d);
    for (std::size_t h = 0; h < heads; ++h) {
        Strided q(src + h * dh, n, dh, Eigen::OuterStride<>(stride));
        Strided k(src + d + h * dh, n, dh, Eigen::OuterStride<>(stride));
        Strided v(src + 2 * d + h * dh, n, dh, Eigen::OuterStride<>(stride));
        RowMat& ph = (*p)[h];
        ph.noalias() = (q * k.transpose()) * inv_sqrt;
        for (Eigen::Index r = 0; r < n; ++r) {
            auto row = ph.row(r).array();
            row = (row - row.maxCoeff()).exp();
            row /= row.sum();
        }
        MutStrided(out.data() + h * dh, n, dh, Eigen::OuterStride<>(static_cast<Eigen::Index>(d))).noalias() = ph * v;
        if (probs) {
            probs->push_back(Tensor::from({qkv.dim(0), qkv.dim(0)}, std::vector<double>(ph.data(), ph.data() + ph.size())));
        }
    }
    return make_result({qkv.dim(0), d}, std::move(out), {node_of(qkv)}, [p, n, d, dh, stride, inv_sqrt](Node& self) {
        double* g = grad_target(self, 0);
        if (!g) {
            return;
        }
        const double* src = self.inputs[0]->data.data();
        RowMat dp, ds;
        for (std::size_t h = 0; h < p->size(); ++h) {
            const RowMat& ph = (*p)[h];
            Strided q(src + h * dh, n, dh, Eigen::OuterStride<>(stride));
            Strided k(src + d + h * dh, n, dh, Eigen::OuterStride<>(stride));
            Strided v(src + 2 * d + h * dh, n, dh, Eigen::OuterStride<>(stride));
            Strided dout(self.grad.data() + h * dh, n, dh, Eigen::OuterStride<>(static_cast<Eigen::Index>(d)));
            MutStrided gq(g + h * dh, n, dh, Eigen::OuterStride<>(stride));
            MutStrided gk(g + d + h * dh, n, dh, Eigen::OuterStride<>(stride));
            MutStrided gv(g + 2 * d + h * dh, n, dh, Eigen::OuterStride<>(stride));
            gv.noalias() += ph.transpose() * dout;
            dp.noalias() = dout * v.transpose();
            // softmax backward: dS = P * (dP - rowsum(dP * P))
            Eigen::VectorXd dots = (dp.array() * ph.array()).rowwise().sum();
            ds = (ph.array() * (dp.array().colwise() - dots.array())) * inv_sqrt;
            gq.noalias() += ds * k;
            gk.noalias() += ds.transpose() * q;
        }
    });
}

}  // namespace sjepa
