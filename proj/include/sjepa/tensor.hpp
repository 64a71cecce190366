#pragma once

// Dense f64 tensors with reverse-mode automatic differentiation.
//
// Every op that touches at least one tensor with requires_grad() (while grad
// mode is enabled) appends its output node to the thread-local Tape. backward()
// walks the tape in reverse creation order, which is a topological order since
// a node can only be created after its inputs.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace sjepa {

using Shape = std::vector<std::size_t>;

/// Tensor storage. Eigen peels vectorized loops up to the first aligned
/// element, so buffers at arbitrary addresses would change summation order
/// between otherwise identical runs; a fixed alignment keeps results bitwise
/// reproducible.
using Buffer = std::vector<double, Eigen::aligned_allocator<double>>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {

struct Node {
    Shape shape;
    Buffer data;
    Buffer grad;  // empty until the first gradient is accumulated
    bool requires_grad = false;
    std::uint64_t generation = 0;  // tape generation that recorded this node, 0 for leaves
    std::vector<std::shared_ptr<Node>> inputs;
    std::function<void(Node&)> backward;

    void ensure_grad() {
        if (grad.empty()) {
            grad.assign(data.size(), 0.0);
        }
    }
};

}  // namespace detail

class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(Shape shape);
    static Tensor full(Shape shape, double value);
    static Tensor from(Shape shape, std::vector<double> values);
    static Tensor scalar(double value);

    bool defined() const noexcept { return node_ != nullptr; }

    const Shape& shape() const;
    std::size_t dim(std::size_t axis) const;
    std::size_t rank() const { return shape().size(); }
    std::size_t numel() const;

    std::span<const double> data() const;
    /// Direct write access. Only valid for tensors not yet consumed by a
    /// recorded op (parameters between steps, freshly built inputs).
    std::span<double> mutable_data();

    double item() const;
    double operator[](std::size_t flat) const { return data()[flat]; }
    double at(std::size_t row, std::size_t col) const;

    bool requires_grad() const;
    Tensor& set_requires_grad(bool on);

    bool has_grad() const;
    std::span<const double> grad() const;
    std::span<double> mutable_grad();
    void zero_grad();

    /// Same values, no gradient history, never requires grad.
    Tensor detach() const;

    /// Nodes are shared by copies; identity compares the underlying node.
    bool same_node(const Tensor& other) const { return node_ == other.node_; }

    const std::shared_ptr<detail::Node>& node() const { return node_; }
    explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}

private:
    std::shared_ptr<detail::Node> node_;
};

/// Thread-local record of the operations executed since the last backward().
class Tape {
public:
    static Tape& current();

    bool grad_enabled() const { return grad_enabled_; }
    void set_grad_enabled(bool on) { grad_enabled_ = on; }

    std::size_t size() const { return nodes_.size(); }
    std::uint64_t generation() const { return generation_; }

    /// Appends a node; starts a fresh generation if the previous one was consumed.
    void record(const std::shared_ptr<detail::Node>& node);

    /// Runs reverse-mode accumulation from a scalar loss and consumes the tape.
    void backward(const Tensor& loss);

    /// Drops all recorded nodes without running backward.
    void reset();

private:
    std::vector<std::shared_ptr<detail::Node>> nodes_;
    std::uint64_t generation_ = 1;
    bool consumed_ = false;
    bool grad_enabled_ = true;
};

/// Disables recording for its lifetime on the current thread.
class NoGradGuard {
public:
    NoGradGuard() : previous_(Tape::current().grad_enabled()) { Tape::current().set_grad_enabled(false); }
    ~NoGradGuard() { Tape::current().set_grad_enabled(previous_); }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

/// Populates gradients of every requires_grad leaf reachable from loss.
void backward(const Tensor& loss);

// ---------------------------------------------------------------------------
// Differentiable primitives. All of them validate shapes before reading data
// and throw DimensionError on mismatch.

Tensor matmul(const Tensor& a, const Tensor& b);             // [m,k]·[k,n]
Tensor add(const Tensor& a, const Tensor& b);                // same shape
Tensor sub(const Tensor& a, const Tensor& b);                // same shape
Tensor mul(const Tensor& a, const Tensor& b);                // elementwise
Tensor scale(const Tensor& a, double factor);
Tensor add_row_vector(const Tensor& x, const Tensor& row);   // [m,n] + [n]
Tensor reshape(const Tensor& x, Shape shape);
Tensor transpose(const Tensor& x);                           // 2-D only
Tensor gather_rows(const Tensor& x, std::span<const std::size_t> rows);
Tensor embedding_lookup(const Tensor& table, std::span<const std::size_t> ids);
Tensor slice_cols(const Tensor& x, std::size_t start, std::size_t count);
Tensor concat(const std::vector<Tensor>& parts, std::size_t axis);
/// out.flat[i] = x.flat[index[i]]; gradients scatter-add back.
Tensor gather_flat(const Tensor& x, std::span<const std::size_t> index, Shape shape);
Tensor sum(const Tensor& x);                                 // -> scalar
Tensor mean(const Tensor& x, std::size_t axis);              // removes axis
Tensor square(const Tensor& x);
Tensor sqrt(const Tensor& x);
Tensor log(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor clamp(const Tensor& x, double lo, double hi);
Tensor gelu(const Tensor& x);                                // tanh approximation
Tensor softmax(const Tensor& x, std::size_t axis);
/// Normalizes over the last axis; gain/bias are [last] or both undefined.
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps);
/// Euclidean norm of each column of a 2-D tensor; subgradient 0 at zero columns.
Tensor column_norms(const Tensor& x);

/// x w + b as one node: x [n, in], w [in, out], b [out].
Tensor affine(const Tensor& x, const Tensor& w, const Tensor& b);

/// Scaled dot-product self-attention over packed projections. qkv is [n, 3d],
/// columns [Q | K | V], each split into `heads` contiguous blocks of d / heads.
/// Returns [n, d] with head h in its own column block. When probs is given,
/// each head's [n, n] attention matrix is appended as a constant tensor.
Tensor attention(const Tensor& qkv, std::size_t heads, std::vector<Tensor>* probs = nullptr);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator*(const Tensor& a, double s) { return scale(a, s); }
inline Tensor operator*(double s, const Tensor& a) { return scale(a, s); }

}  // namespace sjepa
