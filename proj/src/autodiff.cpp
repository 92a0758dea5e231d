#include "skdt/autodiff.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <unordered_set>

namespace skdt {

namespace detail {

struct Node {
    Array value;
    Array tangent;
    Array grad;
    bool has_tangent = false;
    bool has_grad = false;
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    // Propagates this->grad into parents.
    std::function<void(Node&)> backward;

    void accumulate(const Array& g) {
        if (!requires_grad) return;
        if (!has_grad) {
            grad = g;
            has_grad = true;
        } else {
            grad += g;
        }
    }
};

}  // namespace detail

using detail::Node;

Var Var::constant(Array value) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    return Var(std::move(n));
}

Var Var::leaf(Array value, bool requires_grad) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    n->requires_grad = requires_grad;
    return Var(std::move(n));
}

Var Var::with_tangent(Array value, Array tangent, bool requires_grad) {
    if (tangent.shape() != value.shape()) {
        throw ShapeError("with_tangent: tangent " + shape_str(tangent.shape()) + " vs value " +
                         shape_str(value.shape()));
    }
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    n->tangent = std::move(tangent);
    n->has_tangent = true;
    n->requires_grad = requires_grad;
    return Var(std::move(n));
}

const Array& Var::value() const { return node_->value; }
bool Var::requires_grad() const { return node_->requires_grad; }
bool Var::has_tangent() const { return node_->has_tangent; }
Array Var::tangent() const { return node_->has_tangent ? node_->tangent : Array(node_->value.shape()); }
Array Var::grad() const { return node_->has_grad ? node_->grad : Array(node_->value.shape()); }

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapC = Eigen::Map<const RowMat>;
using MapM = Eigen::Map<RowMat>;

MapC as_mat(const Array& a) {
    return MapC(a.data(), static_cast<Eigen::Index>(a.dim(0)), static_cast<Eigen::Index>(a.dim(1)));
}
MapM as_mat(Array& a) { return MapM(a.data(), static_cast<Eigen::Index>(a.dim(0)), static_cast<Eigen::Index>(a.dim(1))); }

Array mm(const Array& a, const Array& b) {
    Array out(Shape{a.dim(0), b.dim(1)});
    as_mat(out).noalias() = as_mat(a) * as_mat(b);
    return out;
}

Array mm_nt(const Array& a, const Array& b) {
    Array out(Shape{a.dim(0), b.dim(0)});
    as_mat(out).noalias() = as_mat(a) * as_mat(b).transpose();
    return out;
}

Array mm_tn(const Array& a, const Array& b) {
    Array out(Shape{a.dim(1), b.dim(1)});
    as_mat(out).noalias() = as_mat(a).transpose() * as_mat(b);
    return out;
}

Array transpose_raw(const Array& a) {
    const std::size_t r = a.dim(0), c = a.dim(1);
    Array out(Shape{c, r});
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) out[j * r + i] = a[i * c + j];
    return out;
}

const Array* tan_of(const Var& v) { return v.has_tangent() ? &v.handle()->tangent : nullptr; }

std::shared_ptr<Node> make_node(Array value, std::initializer_list<const Var*> inputs) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    for (const Var* v : inputs) n->requires_grad = n->requires_grad || v->requires_grad();
    if (n->requires_grad) {
        for (const Var* v : inputs) n->parents.push_back(v->handle());
    }
    return n;
}

std::shared_ptr<Node> make_node(Array value, const std::vector<Var>& inputs) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    for (const Var& v : inputs) n->requires_grad = n->requires_grad || v.requires_grad();
    if (n->requires_grad) {
        for (const Var& v : inputs) n->parents.push_back(v.handle());
    }
    return n;
}

void set_tangent(Node& n, Array t) {
    n.tangent = std::move(t);
    n.has_tangent = true;
}

enum class Bcast { same, row };

Bcast broadcast_kind(const char* op, const Array& a, const Array& b) {
    if (a.shape() == b.shape()) return Bcast::same;
    if (b.rank() == 1 && a.rank() >= 1 && b.size() == a.last_dim()) return Bcast::row;
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

// Sums rows of g (viewed as rows x last) into a vector of the last extent.
Array sum_rows(const Array& g) {
    const std::size_t c = g.last_dim(), r = g.rows();
    Array out(Shape{c});
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) out[j] += g[i * c + j];
    return out;
}

// Elementwise a (op) b with b possibly row-broadcast.
template <typename F>
Array zip(const Array& a, const Array& b, Bcast k, F f) {
    Array out(a.shape());
    if (k == Bcast::same) {
        for (std::size_t i = 0; i < a.size(); ++i) out[i] = f(a[i], b[i]);
    } else {
        const std::size_t c = a.last_dim();
        for (std::size_t i = 0; i < a.size(); ++i) out[i] = f(a[i], b[i % c]);
    }
    return out;
}

template <typename F>
Array map(const Array& a, F f) {
    Array out(a.shape());
    for (std::size_t i = 0; i < a.size(); ++i) out[i] = f(a[i]);
    return out;
}

void require_rank2(const char* op, const Array& a) {
    if (a.rank() != 2) throw ShapeError(std::string(op) + ": expected a rank-2 array, got " + shape_str(a.shape()));
}

void require_rank_ge1(const char* op, const Array& a) {
    if (a.rank() < 1 || a.last_dim() == 0) {
        throw ShapeError(std::string(op) + ": needs a non-empty last axis, got " + shape_str(a.shape()));
    }
}

}  // namespace

namespace ad {

Var matmul(const Var& a, const Var& b) {
    const Array& A = a.value();
    const Array& B = b.value();
    require_rank2("matmul", A);
    require_rank2("matmul", B);
    if (A.dim(1) != B.dim(0)) {
        throw ShapeError("matmul: shape mismatch " + shape_str(A.shape()) + " x " + shape_str(B.shape()));
    }
    auto n = make_node(mm(A, B), {&a, &b});
    const Array* ta = tan_of(a);
    const Array* tb = tan_of(b);
    if (ta || tb) {
        Array t(n->value.shape());
        if (ta) t += mm(*ta, B);
        if (tb) t += mm(A, *tb);
        set_tangent(*n, std::move(t));
    }
    if (n->requires_grad) {
        n->backward = [](Node& self) {
            Node& pa = *self.parents[0];
            Node& pb = *self.parents[1];
            if (pa.requires_grad) pa.accumulate(mm_nt(self.grad, pb.value));
            if (pb.requires_grad) pb.accumulate(mm_tn(pa.value, self.grad));
        };
    }
    return Var(n);
}

Var transpose(const Var& a) {
    require_rank2("transpose", a.value());
    auto n = make_node(transpose_raw(a.value()), {&a});
    if (const Array* t = tan_of(a)) set_tangent(*n, transpose_raw(*t));
    if (n->requires_grad) {
        n->backward = [](Node& self) { self.parents[0]->accumulate(transpose_raw(self.grad)); };
    }
    return Var(n);
}

Var add(const Var& a, const Var& b) {
    const Bcast k = broadcast_kind("add", a.value(), b.value());
    auto n = make_node(zip(a.value(), b.value(), k, std::plus<>()), {&a, &b});
    const Array* ta = tan_of(a);
    const Array* tb = tan_of(b);
    if (ta || tb) {
        Array t = ta ? *ta : Array(n->value.shape());
        if (tb) t = zip(t, *tb, k, std::plus<>());
        set_tangent(*n, std::move(t));
    }
    if (n->requires_grad) {
        n->backward = [k](Node& self) {
            self.parents[0]->accumulate(self.grad);
            if (self.parents[1]->requires_grad) {
                self.parents[1]->accumulate(k == Bcast::same ? self.grad : sum_rows(self.grad));
            }
        };
    }
    return Var(n);
}

Var sub(const Var& a, const Var& b) {
    const Bcast k = broadcast_kind("sub", a.value(), b.value());
    auto n = make_node(zip(a.value(), b.value(), k, std::minus<>()), {&a, &b});
    const Array* ta = tan_of(a);
    const Array* tb = tan_of(b);
    if (ta || tb) {
        Array t = ta ? *ta : Array(n->value.shape());
        if (tb) t = zip(t, *tb, k, std::minus<>());
        set_tangent(*n, std::move(t));
    }
    if (n->requires_grad) {
        n->backward = [k](Node& self) {
            self.parents[0]->accumulate(self.grad);
            if (self.parents[1]->requires_grad) {
                Array g = k == Bcast::same ? self.grad : sum_rows(self.grad);
                self.parents[1]->accumulate(g *= -1.0);
            }
        };
    }
    return Var(n);
}

Var mul(const Var& a, const Var& b) {
    const Bcast k = broadcast_kind("mul", a.value(), b.value());
    auto n = make_node(zip(a.value(), b.value(), k, std::multiplies<>()), {&a, &b});
    const Array* ta = tan_of(a);
    const Array* tb = tan_of(b);
    if (ta || tb) {
        Array t(n->value.shape());
        if (ta) t += zip(*ta, b.value(), k, std::multiplies<>());
        if (tb) t += zip(a.value(), *tb, k, std::multiplies<>());
        set_tangent(*n, std::move(t));
    }
    if (n->requires_grad) {
        n->backward = [k](Node& self) {
            Node& pa = *self.parents[0];
            Node& pb = *self.parents[1];
            if (pa.requires_grad) pa.accumulate(zip(self.grad, pb.value, k, std::multiplies<>()));
            if (pb.requires_grad) {
                Array g = zip(self.grad, pa.value, Bcast::same, std::multiplies<>());
                pb.accumulate(k == Bcast::same ? g : sum_rows(g));
            }
        };
    }
    return Var(n);
}

Var scale(const Var& a, double c) {
    auto n = make_node(a.value() * c, {&a});
    if (const Array* t = tan_of(a)) set_tangent(*n, *t * c);
    if (n->requires_grad) {
        n->backward = [c](Node& self) { self.parents[0]->accumulate(self.grad * c); };
    }
    return Var(n);
}

Var concat_last(const std::vector<Var>& parts) {
    if (parts.empty()) throw ShapeError("concat: no inputs");
    const Shape& s0 = parts[0].value().shape();
    if (s0.empty()) throw ShapeError("concat: rank-0 input");
    std::vector<std::size_t> widths;
    std::size_t total = 0;
    for (const Var& p : parts) {
        const Shape& s = p.value().shape();
        if (s.size() != s0.size() || !std::equal(s.begin(), s.end() - 1, s0.begin())) {
            throw ShapeError("concat: shape mismatch " + shape_str(s0) + " vs " + shape_str(s));
        }
        widths.push_back(s.back());
        total += s.back();
    }
    Shape out_shape = s0;
    out_shape.back() = total;
    const std::size_t rows = shape_numel(out_shape) / std::max<std::size_t>(total, 1);

    auto gather = [&](auto get) {
        Array out(out_shape);
        std::size_t off = 0;
        for (std::size_t p = 0; p < parts.size(); ++p) {
            const Array* src = get(p);
            const std::size_t w = widths[p];
            if (src) {
                for (std::size_t r = 0; r < rows; ++r)
                    std::copy_n(src->data() + r * w, w, out.data() + r * total + off);
            }
            off += w;
        }
        return out;
    };

    auto n = make_node(gather([&](std::size_t p) { return &parts[p].value(); }), parts);
    bool any_t = std::any_of(parts.begin(), parts.end(), [](const Var& v) { return v.has_tangent(); });
    if (any_t) set_tangent(*n, gather([&](std::size_t p) { return tan_of(parts[p]); }));
    if (n->requires_grad) {
        n->backward = [widths, total, rows](Node& self) {
            std::size_t off = 0;
            for (std::size_t p = 0; p < self.parents.size(); ++p) {
                Node& pn = *self.parents[p];
                const std::size_t w = widths[p];
                if (pn.requires_grad) {
                    Array g(pn.value.shape());
                    for (std::size_t r = 0; r < rows; ++r)
                        std::copy_n(self.grad.data() + r * total + off, w, g.data() + r * w);
                    pn.accumulate(g);
                }
                off += w;
            }
        };
    }
    return Var(n);
}

Var layer_norm(const Var& x, double eps) {
    const Array& X = x.value();
    require_rank_ge1("layer_norm", X);
    const std::size_t c = X.last_dim(), r = X.rows();
    Array y(X.shape());
    std::vector<double> rstd(r);
    for (std::size_t i = 0; i < r; ++i) {
        const double* row = X.data() + i * c;
        double mu = 0.0;
        for (std::size_t j = 0; j < c; ++j) mu += row[j];
        mu /= static_cast<double>(c);
        double var = 0.0;
        for (std::size_t j = 0; j < c; ++j) var += (row[j] - mu) * (row[j] - mu);
        var /= static_cast<double>(c);
        rstd[i] = 1.0 / std::sqrt(var + eps);
        for (std::size_t j = 0; j < c; ++j) y[i * c + j] = (row[j] - mu) * rstd[i];
    }
    // The Jacobian rstd * (I - 11^T/c - y y^T/c) is symmetric, so the same map
    // serves tangents and cotangents.
    auto apply = [c, r](const Array& yv, const std::vector<double>& rs, const Array& g) {
        Array out(g.shape());
        for (std::size_t i = 0; i < r; ++i) {
            const double* gr = g.data() + i * c;
            const double* yr = yv.data() + i * c;
            double mg = 0.0, mgy = 0.0;
            for (std::size_t j = 0; j < c; ++j) {
                mg += gr[j];
                mgy += gr[j] * yr[j];
            }
            mg /= static_cast<double>(c);
            mgy /= static_cast<double>(c);
            for (std::size_t j = 0; j < c; ++j) out[i * c + j] = rs[i] * (gr[j] - mg - yr[j] * mgy);
        }
        return out;
    };
    auto n = make_node(y, {&x});
    if (const Array* t = tan_of(x)) set_tangent(*n, apply(n->value, rstd, *t));
    if (n->requires_grad) {
        n->backward = [apply, rstd](Node& self) { self.parents[0]->accumulate(apply(self.value, rstd, self.grad)); };
    }
    return Var(n);
}

Var softmax(const Var& x) {
    const Array& X = x.value();
    require_rank_ge1("softmax", X);
    const std::size_t c = X.last_dim(), r = X.rows();
    Array y(X.shape());
    for (std::size_t i = 0; i < r; ++i) {
        const double* row = X.data() + i * c;
        const double m = *std::max_element(row, row + c);
        double s = 0.0;
        for (std::size_t j = 0; j < c; ++j) s += (y[i * c + j] = std::exp(row[j] - m));
        for (std::size_t j = 0; j < c; ++j) y[i * c + j] /= s;
    }
    auto apply = [c, r](const Array& yv, const Array& g) {
        Array out(g.shape());
        for (std::size_t i = 0; i < r; ++i) {
            double d = 0.0;
            for (std::size_t j = 0; j < c; ++j) d += g[i * c + j] * yv[i * c + j];
            for (std::size_t j = 0; j < c; ++j) out[i * c + j] = yv[i * c + j] * (g[i * c + j] - d);
        }
        return out;
    };
    auto n = make_node(std::move(y), {&x});
    if (const Array* t = tan_of(x)) set_tangent(*n, apply(n->value, *t));
    if (n->requires_grad) {
        n->backward = [apply](Node& self) { self.parents[0]->accumulate(apply(self.value, self.grad)); };
    }
    return Var(n);
}

namespace {

double gelu_f(double x) {
    return 0.5 * x * (1.0 + std::tanh(kGeluCoeff * (x + 0.044715 * x * x * x)));
}

double gelu_df(double x) {
    const double u = kGeluCoeff * (x + 0.044715 * x * x * x);
    const double th = std::tanh(u);
    return 0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * kGeluCoeff * (1.0 + 3.0 * 0.044715 * x * x);
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }
double silu_f(double x) { return x * sigmoid(x); }
double silu_df(double x) {
    const double s = sigmoid(x);
    return s * (1.0 + x * (1.0 - s));
}

template <double (*F)(double), double (*DF)(double)>
Var unary(const Var& x) {
    auto n = make_node(map(x.value(), F), {&x});
    if (const Array* t = tan_of(x)) {
        Array d = map(x.value(), DF);
        set_tangent(*n, zip(d, *t, Bcast::same, std::multiplies<>()));
    }
    if (n->requires_grad) {
        n->backward = [](Node& self) {
            Node& p = *self.parents[0];
            Array d = map(p.value, DF);
            p.accumulate(zip(d, self.grad, Bcast::same, std::multiplies<>()));
        };
    }
    return Var(n);
}

}  // namespace

Var gelu(const Var& x) { return unary<gelu_f, gelu_df>(x); }
Var silu(const Var& x) { return unary<silu_f, silu_df>(x); }

Var reshape(const Var& x, Shape shape) {
    auto n = make_node(x.value().reshaped(shape), {&x});
    if (const Array* t = tan_of(x)) set_tangent(*n, t->reshaped(shape));
    if (n->requires_grad) {
        n->backward = [](Node& self) {
            Node& p = *self.parents[0];
            p.accumulate(self.grad.reshaped(p.value.shape()));
        };
    }
    return Var(n);
}

Var mean(const Var& x) {
    const Array& X = x.value();
    if (X.size() == 0) throw ShapeError("mean: empty input " + shape_str(X.shape()));
    const double inv = 1.0 / static_cast<double>(X.size());
    double s = 0.0;
    for (double v : X.values()) s += v;
    auto n = make_node(Array::scalar(s * inv), {&x});
    if (const Array* t = tan_of(x)) {
        double ts = 0.0;
        for (double v : t->values()) ts += v;
        set_tangent(*n, Array::scalar(ts * inv));
    }
    if (n->requires_grad) {
        n->backward = [inv](Node& self) {
            Node& p = *self.parents[0];
            p.accumulate(Array(p.value.shape(), self.grad[0] * inv));
        };
    }
    return Var(n);
}

Var slice(const Var& x, std::size_t axis, std::size_t begin, std::size_t end) {
    const Array& X = x.value();
    if (axis >= X.rank() || begin > end || end > X.dim(axis)) {
        throw ShapeError("slice: axis " + std::to_string(axis) + " range [" + std::to_string(begin) + "," +
                         std::to_string(end) + ") invalid for " + shape_str(X.shape()));
    }
    std::size_t outer = 1, inner = 1;
    for (std::size_t i = 0; i < axis; ++i) outer *= X.dim(i);
    for (std::size_t i = axis + 1; i < X.rank(); ++i) inner *= X.dim(i);
    const std::size_t ext = X.dim(axis), w = end - begin;
    Shape out_shape = X.shape();
    out_shape[axis] = w;

    auto cut = [=](const Array& src) {
        Array out(out_shape);
        for (std::size_t o = 0; o < outer; ++o)
            std::copy_n(src.data() + (o * ext + begin) * inner, w * inner, out.data() + o * w * inner);
        return out;
    };
    auto n = make_node(cut(X), {&x});
    if (const Array* t = tan_of(x)) set_tangent(*n, cut(*t));
    if (n->requires_grad) {
        n->backward = [=](Node& self) {
            Node& p = *self.parents[0];
            Array g(p.value.shape());
            for (std::size_t o = 0; o < outer; ++o)
                std::copy_n(self.grad.data() + o * w * inner, w * inner, g.data() + (o * ext + begin) * inner);
            p.accumulate(g);
        };
    }
    return Var(n);
}

Var take(const Var& x, std::vector<std::size_t> index, Shape shape) {
    const Array& X = x.value();
    if (shape_numel(shape) != index.size()) {
        throw ShapeError("take: " + std::to_string(index.size()) + " indices for shape " + shape_str(shape));
    }
    for (std::size_t i : index)
        if (i >= X.size()) throw ShapeError("take: index " + std::to_string(i) + " out of range for " + shape_str(X.shape()));
    auto idx = std::make_shared<const std::vector<std::size_t>>(std::move(index));
    auto gather = [idx, shape](const Array& src) {
        Array out(shape);
        for (std::size_t i = 0; i < idx->size(); ++i) out[i] = src[(*idx)[i]];
        return out;
    };
    auto n = make_node(gather(X), {&x});
    if (const Array* t = tan_of(x)) set_tangent(*n, gather(*t));
    if (n->requires_grad) {
        n->backward = [idx](Node& self) {
            Node& p = *self.parents[0];
            Array g(p.value.shape());
            for (std::size_t i = 0; i < idx->size(); ++i) g[(*idx)[i]] += self.grad[i];
            p.accumulate(g);
        };
    }
    return Var(n);
}

}  // namespace ad

namespace {

std::vector<Node*> topo_order(Node* root) {
    std::vector<Node*> order;
    std::unordered_set<Node*> seen;
    std::vector<std::pair<Node*, std::size_t>> stack{{root, 0}};
    seen.insert(root);
    while (!stack.empty()) {
        auto& [n, i] = stack.back();
        if (i < n->parents.size()) {
            Node* p = n->parents[i++].get();
            if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
        } else {
            order.push_back(n);
            stack.pop_back();
        }
    }
    return order;  // parents before children
}

}  // namespace

void backward(const Var& out, const Array& seed) {
    if (seed.shape() != out.value().shape()) {
        throw ShapeError("backward: seed " + shape_str(seed.shape()) + " vs output " + shape_str(out.value().shape()));
    }
    Node* root = out.handle().get();
    if (!root->requires_grad) return;
    auto order = topo_order(root);
    for (Node* n : order) {
        n->has_grad = false;
        n->grad = Array();
    }
    root->accumulate(seed);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        if (n->has_grad && n->backward) n->backward(*n);
    }
}

ParamSet gradient(const Var& loss, const std::map<std::string, Var>& params) {
    if (loss.value().size() != 1) {
        throw ShapeError("gradient: loss must be scalar, got " + shape_str(loss.value().shape()));
    }
    for (const auto& [_, v] : params) {
        v.handle()->has_grad = false;
        v.handle()->grad = Array();
    }
    backward(loss, Array(loss.value().shape(), 1.0));
    ParamSet out;
    for (const auto& [name, v] : params) out.add(name, v.grad());
    return out;
}

Array jvp(const GraphFn& f, const Array& x, const Array& v) {
    if (v.shape() != x.shape()) throw ShapeError("jvp: v " + shape_str(v.shape()) + " vs x " + shape_str(x.shape()));
    Var in = Var::with_tangent(x, v);
    Var out = f(in);
    return out.tangent();
}

Array vjp(const GraphFn& f, const Array& x, const Array& u) {
    Var in = Var::leaf(x, true);
    Var out = f(in);
    if (u.shape() != out.value().shape()) {
        throw ShapeError("vjp: u " + shape_str(u.shape()) + " vs f(x) " + shape_str(out.value().shape()));
    }
    backward(out, u);
    return in.grad();
}

std::string op_name(OpId op) {
    switch (op) {
        case OpId::matmul: return "matmul";
        case OpId::transpose: return "transpose";
        case OpId::add: return "add";
        case OpId::sub: return "sub";
        case OpId::mul: return "mul";
        case OpId::concat: return "concat";
        case OpId::layer_norm: return "layer_norm";
        case OpId::softmax: return "softmax";
        case OpId::gelu: return "gelu";
        case OpId::silu: return "silu";
        case OpId::scale: return "scale";
        case OpId::reshape: return "reshape";
        case OpId::mean: return "mean";
        case OpId::slice: return "slice";
    }
    return "unknown";
}

Array primitive_forward(OpId op, std::span<const Array> inputs, const OpAttrs& attrs) {
    auto arity = [&](std::size_t n) {
        if (inputs.size() != n) {
            throw ShapeError(op_name(op) + ": expected " + std::to_string(n) + " inputs, got " +
                             std::to_string(inputs.size()));
        }
    };
    std::vector<Var> in;
    for (const Array& a : inputs) in.push_back(Var::constant(a));
    switch (op) {
        case OpId::matmul: arity(2); return ad::matmul(in[0], in[1]).value();
        case OpId::transpose: arity(1); return ad::transpose(in[0]).value();
        case OpId::add: arity(2); return ad::add(in[0], in[1]).value();
        case OpId::sub: arity(2); return ad::sub(in[0], in[1]).value();
        case OpId::mul: arity(2); return ad::mul(in[0], in[1]).value();
        case OpId::concat: return ad::concat_last(in).value();
        case OpId::layer_norm: arity(1); return ad::layer_norm(in[0], attrs.eps).value();
        case OpId::softmax: arity(1); return ad::softmax(in[0]).value();
        case OpId::gelu: arity(1); return ad::gelu(in[0]).value();
        case OpId::silu: arity(1); return ad::silu(in[0]).value();
        case OpId::scale: arity(1); return ad::scale(in[0], attrs.scalar).value();
        case OpId::reshape: arity(1); return ad::reshape(in[0], attrs.shape).value();
        case OpId::mean: arity(1); return ad::mean(in[0]).value();
        case OpId::slice: arity(1); return ad::slice(in[0], attrs.axis, attrs.begin, attrs.end).value();
    }
    throw ShapeError("primitive_forward: unknown op");
}

}  // namespace skdt
