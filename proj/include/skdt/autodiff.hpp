#pragma once

#include <functional>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "skdt/array.hpp"

namespace skdt {

namespace detail {
struct Node;
}

/// Handle to a value in an expression graph.
///
/// Every op evaluates eagerly. A node records a backward rule when any input
/// requires a gradient, and carries a forward-mode tangent when any input
/// carries one, so one graph serves gradients, VJPs and JVPs.
class Var {
   public:
    Var() = default;

    static Var constant(Array value);
    static Var leaf(Array value, bool requires_grad = true);
    static Var with_tangent(Array value, Array tangent, bool requires_grad = false);

    const Array& value() const;
    const Shape& shape() const { return value().shape(); }
    bool requires_grad() const;
    bool has_tangent() const;
    /// Tangent of this node; zeros when no input carried one.
    Array tangent() const;
    /// Gradient accumulated by the last backward pass; zeros when unreached.
    Array grad() const;

    bool valid() const { return node_ != nullptr; }
    const std::shared_ptr<detail::Node>& handle() const { return node_; }

    explicit Var(std::shared_ptr<detail::Node> n) : node_(std::move(n)) {}

   private:
    std::shared_ptr<detail::Node> node_;
};

namespace ad {

Var matmul(const Var& a, const Var& b);
Var transpose(const Var& a);
/// Elementwise; `b` may also be a vector matching the last axis of `a`.
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double c);
Var concat_last(const std::vector<Var>& parts);
/// Normalizes over the last axis without affine terms: (x - mean) / sqrt(var + eps).
Var layer_norm(const Var& x, double eps = 1e-6);
Var softmax(const Var& x);
/// tanh approximation.
Var gelu(const Var& x);
Var silu(const Var& x);
Var reshape(const Var& x, Shape shape);
/// Mean over all elements, returned as a rank-0 array.
Var mean(const Var& x);
Var slice(const Var& x, std::size_t axis, std::size_t begin, std::size_t end);
/// out.flat[i] = x.flat[index[i]], viewed with `shape`.
Var take(const Var& x, std::vector<std::size_t> index, Shape shape);

inline constexpr double kGeluCoeff = 0.7978845608;

}  // namespace ad

/// Runs reverse mode from a scalar `loss` and returns the gradient of every
/// entry in `params`. Parameters the loss does not reach get zero gradients.
ParamSet gradient(const Var& loss, const std::map<std::string, Var>& params);

/// Seeds reverse mode at `out` with `seed` (shaped like out).
void backward(const Var& out, const Array& seed);

using GraphFn = std::function<Var(const Var&)>;

/// J(x) v by forward-mode tangents.
Array jvp(const GraphFn& f, const Array& x, const Array& v);
/// u^T J(x), shaped like x.
Array vjp(const GraphFn& f, const Array& x, const Array& u);

enum class OpId { matmul, transpose, add, sub, mul, concat, layer_norm, softmax, gelu, silu, scale, reshape, mean, slice };

std::string op_name(OpId op);

struct OpAttrs {
    double scalar = 1.0;  // scale factor
    double eps = 1e-6;    // layer-norm stabilizer
    Shape shape;          // reshape target
    std::size_t axis = 0;
    std::size_t begin = 0;
    std::size_t end = 0;
};

/// Evaluates one primitive on plain arrays.
Array primitive_forward(OpId op, std::span<const Array> inputs, const OpAttrs& attrs = {});

}  // namespace skdt
