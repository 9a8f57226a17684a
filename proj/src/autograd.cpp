#include "neurodec/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

#include "neurodec/errors.hpp"
#include "neurodec/kernels.hpp"

namespace neurodec {

namespace kp = kernels::parallel;

namespace {

thread_local bool g_grad_enabled = true;
#ifdef NDEBUG
FiniteCheck g_finite_check = FiniteCheck::Sampled;
#else
FiniteCheck g_finite_check = FiniteCheck::Always;
#endif
thread_local std::size_t g_op_counter = 0;
constexpr std::size_t kFiniteSampleInterval = 32;

using BackwardFn = std::function<void(Node&)>;

void check_finite(const Tensor& t, const char* op) {
    bool check = false;
    switch (g_finite_check) {
        case FiniteCheck::Always: check = true; break;
        case FiniteCheck::Sampled: check = (g_op_counter++ % kFiniteSampleInterval) == 0; break;
        case FiniteCheck::Off: break;
    }
    if (check && !t.all_finite()) {
        throw NumericalError(std::string("non-finite value produced by op '") + op + "' with shape " +
                             shape_str(t.shape()));
    }
}

Var make_result(Tensor value, const char* op, std::initializer_list<const Var*> inputs,
                BackwardFn fn) {
    check_finite(value, op);
    auto node = std::make_shared<Node>();
    node->value = std::move(value);
    node->op = op;
    if (g_grad_enabled) {
        bool any = false;
        for (const Var* in : inputs) any = any || in->requires_grad();
        if (any) {
            node->requires_grad = true;
            node->inputs.reserve(inputs.size());
            for (const Var* in : inputs) node->inputs.push_back(in->shared());
            node->backward = std::move(fn);
        }
    }
    return Var(std::move(node));
}

Var make_result_n(Tensor value, const char* op, std::span<const Var> inputs, BackwardFn fn) {
    check_finite(value, op);
    auto node = std::make_shared<Node>();
    node->value = std::move(value);
    node->op = op;
    if (g_grad_enabled) {
        bool any = std::any_of(inputs.begin(), inputs.end(), [](const Var& v) { return v.requires_grad(); });
        if (any) {
            node->requires_grad = true;
            for (const Var& in : inputs) node->inputs.push_back(in.shared());
            node->backward = std::move(fn);
        }
    }
    return Var(std::move(node));
}

// Input i of a node, or nullptr when it does not need a gradient.
Node* grad_input(Node& self, std::size_t i) {
    Node* in = self.inputs[i].get();
    return in->requires_grad ? in : nullptr;
}

void require_same_shape(const Var& a, const Var& b, const char* op) {
    if (a.shape() != b.shape()) {
        throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
    }
}

void require_rank2(const Var& a, const char* op) {
    if (a.value().rank() != 2) {
        throw ShapeError(std::string(op) + ": expected a matrix, got " + shape_str(a.shape()));
    }
}

template <typename Fwd, typename Deriv>
Var unary(const Var& a, const char* op, Fwd f, Deriv df) {
    Tensor out(a.shape());
    const auto& x = a.value();
    for (std::size_t i = 0; i < x.numel(); ++i) out[i] = f(x[i]);
    return make_result(std::move(out), op, {&a}, [df](Node& self) {
        Node* in = grad_input(self, 0);
        if (!in) return;
        Tensor& g = in->grad_buffer();
        const Tensor& x = in->value;
        const Tensor& y = self.value;
        for (std::size_t i = 0; i < g.numel(); ++i) g[i] += self.grad[i] * df(x[i], y[i]);
    });
}

}  // namespace

// ---------------------------------------------------------------- core

Tensor& Node::grad_buffer() {
    if (!has_grad()) grad = Tensor(value.shape(), 0.0);
    return grad;
}

Var::Var(Tensor value, bool requires_grad) : node_(std::make_shared<Node>()) {
    node_->value = std::move(value);
    node_->requires_grad = requires_grad;
}

Tensor Var::grad() const {
    if (node_->has_grad()) return node_->grad;
    return Tensor(node_->value.shape(), 0.0);
}

void Var::zero_grad() {
    if (node_->has_grad()) node_->grad.fill(0.0);
}

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }
bool grad_enabled() { return g_grad_enabled; }

void set_finite_check(FiniteCheck mode) { g_finite_check = mode; }
FiniteCheck finite_check() { return g_finite_check; }

std::vector<Node*> topo_order(const Var& root) {
    std::vector<Node*> order;
    if (!root.defined() || !root.requires_grad()) return order;
    std::unordered_set<Node*> seen;
    // Iterative post-order DFS; the graph can be deep (one node per op).
    std::vector<std::pair<Node*, std::size_t>> stack;
    stack.emplace_back(root.node(), 0);
    seen.insert(root.node());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->inputs.size()) {
            Node* child = node->inputs[next++].get();
            if (child->requires_grad && seen.insert(child).second) stack.emplace_back(child, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }
    return order;
}

void backward(const Var& loss) {
    if (loss.numel() != 1) {
        throw ContractError("backward: loss must be a scalar, got shape " + shape_str(loss.shape()));
    }
    if (!loss.requires_grad()) {
        throw ContractError("backward: loss does not depend on any parameter requiring a gradient");
    }
    auto order = topo_order(loss);
    loss.node()->grad_buffer()[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        if (n->backward && n->has_grad()) n->backward(*n);
    }
}

// ----------------------------------------------------------- elementwise

Var add(const Var& a, const Var& b) {
    require_same_shape(a, b, "add");
    Tensor out = a.value();
    const auto& bv = b.value();
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] += bv[i];
    return make_result(std::move(out), "add", {&a, &b}, [](Node& self) {
        for (std::size_t k = 0; k < 2; ++k) {
            if (Node* in = grad_input(self, k)) {
                Tensor& g = in->grad_buffer();
                for (std::size_t i = 0; i < g.numel(); ++i) g[i] += self.grad[i];
            }
        }
    });
}

Var sub(const Var& a, const Var& b) {
    require_same_shape(a, b, "sub");
    Tensor out = a.value();
    const auto& bv = b.value();
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] -= bv[i];
    return make_result(std::move(out), "sub", {&a, &b}, [](Node& self) {
        if (Node* in = grad_input(self, 0)) {
            Tensor& g = in->grad_buffer();
            for (std::size_t i = 0; i < g.numel(); ++i) g[i] += self.grad[i];
        }
        if (Node* in = grad_input(self, 1)) {
            Tensor& g = in->grad_buffer();
            for (std::size_t i = 0; i < g.numel(); ++i) g[i] -= self.grad[i];
        }
    });
}

Var mul(const Var& a, const Var& b) {
    require_same_shape(a, b, "mul");
    Tensor out = a.value();
    const auto& bv = b.value();
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] *= bv[i];
    return make_result(std::move(out), "mul", {&a, &b}, [](Node& self) {
        const Tensor& av = self.inputs[0]->value;
        const Tensor& bv = self.inputs[1]->value;
        if (Node* in = grad_input(self, 0)) {
            Tensor& g = in->grad_buffer();
            for (std::size_t i = 0; i < g.numel(); ++i) g[i] += self.grad[i] * bv[i];
        }
        if (Node* in = grad_input(self, 1)) {
            Tensor& g = in->grad_buffer();
            for (std::size_t i = 0; i < g.numel(); ++i) g[i] += self.grad[i] * av[i];
        }
    });
}

Var scale(const Var& a, double s) {
    return unary(a, "scale", [s](double x) { return s * x; }, [s](double, double) { return s; });
}

Var add_scalar(const Var& a, double s) {
    return unary(a, "add_scalar", [s](double x) { return x + s; }, [](double, double) { return 1.0; });
}

Var neg(const Var& a) { return scale(a, -1.0); }

Var square(const Var& a) {
    return unary(a, "square", [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

Var relu(const Var& a) {
    return unary(a, "relu", [](double x) { return x > 0.0 ? x : 0.0; },
                 [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Var gelu(const Var& a) {
    // tanh approximation
    constexpr double c = 0.7978845608028654;  // sqrt(2/pi)
    constexpr double k = 0.044715;
    return unary(
        a, "gelu",
        [](double x) { return 0.5 * x * (1.0 + std::tanh(c * (x + k * x * x * x))); },
        [](double x, double) {
            const double u = c * (x + k * x * x * x);
            const double t = std::tanh(u);
            const double du = c * (1.0 + 3.0 * k * x * x);
            return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du;
        });
}

Var sigmoid(const Var& a) {
    return unary(a, "sigmoid", [](double x) { return 1.0 / (1.0 + std::exp(-x)); },
                 [](double, double y) { return y * (1.0 - y); });
}

Var silu(const Var& a) {
    return unary(a, "silu", [](double x) { return x / (1.0 + std::exp(-x)); },
                 [](double x, double) {
                     const double s = 1.0 / (1.0 + std::exp(-x));
                     return s * (1.0 + x * (1.0 - s));
                 });
}

Var tanh(const Var& a) {
    return unary(a, "tanh", [](double x) { return std::tanh(x); },
                 [](double, double y) { return 1.0 - y * y; });
}

Var add_row(const Var& x, const Var& row) {
    require_rank2(x, "add_row");
    const std::size_t r = x.value().rows(), c = x.value().cols();
    if (row.numel() != c) {
        throw ShapeError("add_row: row " + shape_str(row.shape()) + " does not match " + shape_str(x.shape()));
    }
    Tensor out = x.value();
    const auto& rv = row.value();
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) out[i * c + j] += rv[j];
    return make_result(std::move(out), "add_row", {&x, &row}, [r, c](Node& self) {
        if (Node* in = grad_input(self, 0)) {
            Tensor& g = in->grad_buffer();
            for (std::size_t i = 0; i < g.numel(); ++i) g[i] += self.grad[i];
        }
        if (Node* in = grad_input(self, 1)) {
            Tensor& g = in->grad_buffer();
            for (std::size_t i = 0; i < r; ++i)
                for (std::size_t j = 0; j < c; ++j) g[j] += self.grad[i * c + j];
        }
    });
}

Var mul_row(const Var& x, const Var& row) {
    require_rank2(x, "mul_row");
    const std::size_t r = x.value().rows(), c = x.value().cols();
    if (row.numel() != c) {
        throw ShapeError("mul_row: row " + shape_str(row.shape()) + " does not match " + shape_str(x.shape()));
    }
    Tensor out = x.value();
    const auto& rv = row.value();
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) out[i * c + j] *= rv[j];
    return make_result(std::move(out), "mul_row", {&x, &row}, [r, c](Node& self) {
        const Tensor& xv = self.inputs[0]->value;
        const Tensor& rv = self.inputs[1]->value;
        if (Node* in = grad_input(self, 0)) {
            Tensor& g = in->grad_buffer();
            for (std::size_t i = 0; i < r; ++i)
                for (std::size_t j = 0; j < c; ++j) g[i * c + j] += self.grad[i * c + j] * rv[j];
        }
        if (Node* in = grad_input(self, 1)) {
            Tensor& g = in->grad_buffer();
            for (std::size_t i = 0; i < r; ++i)
                for (std::size_t j = 0; j < c; ++j) g[j] += self.grad[i * c + j] * xv[i * c + j];
        }
    });
}

// ---------------------------------------------------------- linear algebra

Var matmul(const Var& a, const Var& b) {
    require_rank2(a, "matmul");
    require_rank2(b, "matmul");
    const std::size_t m = a.value().rows(), k = a.value().cols(), n = b.value().cols();
    if (b.value().rows() != k) {
        throw ShapeError("matmul: inner dimensions disagree: " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()));
    }
    Tensor out({m, n});
    kp::gemm_nn(a.value().data(), b.value().data(), out.data(), m, k, n);
    return make_result(std::move(out), "matmul", {&a, &b}, [m, k, n](Node& self) {
        const Tensor& av = self.inputs[0]->value;
        const Tensor& bv = self.inputs[1]->value;
        if (Node* in = grad_input(self, 0))  // dA = dC * B^T
            kp::gemm_nt(self.grad.data(), bv.data(), in->grad_buffer().data(), m, n, k, true);
        if (Node* in = grad_input(self, 1))  // dB = A^T * dC
            kp::gemm_tn(av.data(), self.grad.data(), in->grad_buffer().data(), k, m, n, true);
    });
}

Var matmul_nt(const Var& a, const Var& b) {
    require_rank2(a, "matmul_nt");
    require_rank2(b, "matmul_nt");
    const std::size_t m = a.value().rows(), k = a.value().cols(), n = b.value().rows();
    if (b.value().cols() != k) {
        throw ShapeError("matmul_nt: inner dimensions disagree: " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()) + "^T");
    }
    Tensor out({m, n});
    kp::gemm_nt(a.value().data(), b.value().data(), out.data(), m, k, n);
    return make_result(std::move(out), "matmul_nt", {&a, &b}, [m, k, n](Node& self) {
        const Tensor& av = self.inputs[0]->value;
        const Tensor& bv = self.inputs[1]->value;
        if (Node* in = grad_input(self, 0))  // dA = dC * B
            kp::gemm_nn(self.grad.data(), bv.data(), in->grad_buffer().data(), m, n, k, true);
        if (Node* in = grad_input(self, 1))  // dB = dC^T * A
            kp::gemm_tn(self.grad.data(), av.data(), in->grad_buffer().data(), n, m, k, true);
    });
}

Var transpose(const Var& a) {
    require_rank2(a, "transpose");
    const std::size_t r = a.value().rows(), c = a.value().cols();
    Tensor out({c, r});
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) out[j * r + i] = a.value()[i * c + j];
    return make_result(std::move(out), "transpose", {&a}, [r, c](Node& self) {
        if (Node* in = grad_input(self, 0)) {
            Tensor& g = in->grad_buffer();
            for (std::size_t i = 0; i < r; ++i)
                for (std::size_t j = 0; j < c; ++j) g[i * c + j] += self.grad[j * r + i];
        }
    });
}

// -------------------------------------------------------------- reductions

Var sum(const Var& a) {
    double s = 0.0;
    for (double v : a.value().values()) s += v;
    return make_result(Tensor::scalar(s), "sum", {&a}, [](Node& self) {
        if (Node* in = grad_input(self, 0)) {
            Tensor& g = in->grad_buffer();
            const double go = self.grad[0];
            for (std::size_t i = 0; i < g.numel(); ++i) g[i] += go;
        }
    });
}

Var mean(const Var& a) {
    if (a.numel() == 0) throw ContractError("mean: empty tensor");
    return scale(sum(a), 1.0 / static_cast<double>(a.numel()));
}

Var row_sums(const Var& a) {
    require_rank2(a, "row_sums");
    const std::size_t r = a.value().rows(), c = a.value().cols();
    Tensor out({r});
    for (std::size_t i = 0; i < r; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < c; ++j) s += a.value()[i * c + j];
        out[i] = s;
    }
    return make_result(std::move(out), "row_sums", {&a}, [r, c](Node& self) {
        if (Node* in = grad_input(self, 0)) {
            Tensor& g = in->grad_buffer();
            for (std::size_t i = 0; i < r; ++i)
                for (std::size_t j = 0; j < c; ++j) g[i * c + j] += self.grad[i];
        }
    });
}

Var mean_rows(const Var& a) {
    require_rank2(a, "mean_rows");
    const std::size_t r = a.value().rows(), c = a.value().cols();
    if (r == 0) throw ContractError("mean_rows: no rows");
    Tensor out({1, c});
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) out[j] += a.value()[i * c + j];
    const double inv = 1.0 / static_cast<double>(r);
    for (std::size_t j = 0; j < c; ++j) out[j] *= inv;
    return make_result(std::move(out), "mean_rows", {&a}, [r, c, inv](Node& self) {
        if (Node* in = grad_input(self, 0)) {
            Tensor& g = in->grad_buffer();
            for (std::size_t i = 0; i < r; ++i)
                for (std::size_t j = 0; j < c; ++j) g[i * c + j] += self.grad[j] * inv;
        }
    });
}

Var logsumexp_rows(const Var& a) {
    require_rank2(a, "logsumexp_rows");
    const std::size_t r = a.value().rows(), c = a.value().cols();
    if (c == 0) throw ContractError("logsumexp_rows: empty rows");
    Tensor out({r});
    for (std::size_t i = 0; i < r; ++i) {
        const double* x = a.value().data() + i * c;
        const double mx = *std::max_element(x, x + c);
        double z = 0.0;
        for (std::size_t j = 0; j < c; ++j) z += std::exp(x[j] - mx);
        out[i] = mx + std::log(z);
    }
    return make_result(std::move(out), "logsumexp_rows", {&a}, [r, c](Node& self) {
        if (Node* in = grad_input(self, 0)) {
            Tensor& g = in->grad_buffer();
            const Tensor& x = in->value;
            for (std::size_t i = 0; i < r; ++i)
                for (std::size_t j = 0; j < c; ++j)
                    g[i * c + j] += self.grad[i] * std::exp(x[i * c + j] - self.value[i]);
        }
    });
}

Var softmax(const Var& x, std::size_t axis) {
    const Shape& shape = x.shape();
    if (axis >= shape.size()) {
        throw ContractError("softmax: axis " + std::to_string(axis) + " out of range for " + shape_str(shape));
    }
    std::size_t outer = 1, inner = 1;
    for (std::size_t i = 0; i < axis; ++i) outer *= shape[i];
    for (std::size_t i = axis + 1; i < shape.size(); ++i) inner *= shape[i];
    const std::size_t len = shape[axis];
    Tensor out(shape);
    if (inner == 1) {
        kp::softmax_rows(x.value().data(), out.data(), outer, len);
    } else {
        const auto& xv = x.value();
        for (std::size_t o = 0; o < outer; ++o) {
            for (std::size_t in = 0; in < inner; ++in) {
                const std::size_t base = o * len * inner + in;
                double mx = xv[base];
                for (std::size_t l = 1; l < len; ++l) mx = std::max(mx, xv[base + l * inner]);
                double z = 0.0;
                for (std::size_t l = 0; l < len; ++l) {
                    out[base + l * inner] = std::exp(xv[base + l * inner] - mx);
                    z += out[base + l * inner];
                }
                for (std::size_t l = 0; l < len; ++l) out[base + l * inner] /= z;
            }
        }
    }
    return make_result(std::move(out), "softmax", {&x}, [outer, inner, len](Node& self) {
        Node* in = grad_input(self, 0);
        if (!in) return;
        Tensor& g = in->grad_buffer();
        const Tensor& y = self.value;
        for (std::size_t o = 0; o < outer; ++o) {
            for (std::size_t ii = 0; ii < inner; ++ii) {
                const std::size_t base = o * len * inner + ii;
                double dot = 0.0;
                for (std::size_t l = 0; l < len; ++l) dot += self.grad[base + l * inner] * y[base + l * inner];
                for (std::size_t l = 0; l < len; ++l) {
                    const std::size_t idx = base + l * inner;
                    g[idx] += y[idx] * (self.grad[idx] - dot);
                }
            }
        }
    });
}

Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps) {
    require_rank2(x, "layer_norm");
    const std::size_t r = x.value().rows(), c = x.value().cols();
    if (gamma.numel() != c || beta.numel() != c) {
        throw ShapeError("layer_norm: affine params " + shape_str(gamma.shape()) + "/" +
                         shape_str(beta.shape()) + " do not match " + shape_str(x.shape()));
    }
    Tensor xhat({r, c});
    auto stats = std::make_shared<std::vector<double>>(2 * r);
    kp::layer_norm_rows(x.value().data(), xhat.data(), stats->data(), stats->data() + r, r, c, eps);
    Tensor out({r, c});
    const auto& gv = gamma.value();
    const auto& bv = beta.value();
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) out[i * c + j] = xhat[i * c + j] * gv[j] + bv[j];
    auto xhat_ptr = std::make_shared<Tensor>(std::move(xhat));
    return make_result(std::move(out), "layer_norm", {&x, &gamma, &beta}, [r, c, stats, xhat_ptr](Node& self) {
        const Tensor& xh = *xhat_ptr;
        const Tensor& gv = self.inputs[1]->value;
        const double* rstd = stats->data() + r;
        if (Node* in = grad_input(self, 0)) {
            Tensor& g = in->grad_buffer();
            const double invc = 1.0 / static_cast<double>(c);
            for (std::size_t i = 0; i < r; ++i) {
                double m1 = 0.0, m2 = 0.0;
                for (std::size_t j = 0; j < c; ++j) {
                    const double gh = self.grad[i * c + j] * gv[j];
                    m1 += gh;
                    m2 += gh * xh[i * c + j];
                }
                m1 *= invc;
                m2 *= invc;
                for (std::size_t j = 0; j < c; ++j) {
                    const double gh = self.grad[i * c + j] * gv[j];
                    g[i * c + j] += rstd[i] * (gh - m1 - xh[i * c + j] * m2);
                }
            }
        }
        if (Node* in = grad_input(self, 1)) {
            Tensor& g = in->grad_buffer();
            for (std::size_t i = 0; i < r; ++i)
                for (std::size_t j = 0; j < c; ++j) g[j] += self.grad[i * c + j] * xh[i * c + j];
        }
        if (Node* in = grad_input(self, 2)) {
            Tensor& g = in->grad_buffer();
            for (std::size_t i = 0; i < r; ++i)
                for (std::size_t j = 0; j < c; ++j) g[j] += self.grad[i * c + j];
        }
    });
}

// -------------------------------------------------------------- structural

Var reshape(const Var& a, Shape shape) {
    Tensor out = a.value().reshaped(std::move(shape));
    return make_result(std::move(out), "reshape", {&a}, [](Node& self) {
        if (Node* in = grad_input(self, 0)) {
            Tensor& g = in->grad_buffer();
            for (std::size_t i = 0; i < g.numel(); ++i) g[i] += self.grad[i];
        }
    });
}

Var slice_cols(const Var& a, std::size_t begin, std::size_t end) {
    require_rank2(a, "slice_cols");
    const std::size_t r = a.value().rows(), c = a.value().cols();
    if (begin > end || end > c) {
        throw ShapeError("slice_cols: range [" + std::to_string(begin) + ", " + std::to_string(end) +
                         ") outside " + shape_str(a.shape()));
    }
    const std::size_t w = end - begin;
    Tensor out({r, w});
    for (std::size_t i = 0; i < r; ++i)
        std::copy_n(a.value().data() + i * c + begin, w, out.data() + i * w);
    return make_result(std::move(out), "slice_cols", {&a}, [r, c, w, begin](Node& self) {
        if (Node* in = grad_input(self, 0)) {
            Tensor& g = in->grad_buffer();
            for (std::size_t i = 0; i < r; ++i)
                for (std::size_t j = 0; j < w; ++j) g[i * c + begin + j] += self.grad[i * w + j];
        }
    });
}

Var concat_cols(std::span<const Var> parts) {
    if (parts.empty()) throw ContractError("concat_cols: no inputs");
    const std::size_t r = parts[0].value().rows();
    std::vector<std::size_t> widths;
    std::size_t total = 0;
    for (const auto& p : parts) {
        require_rank2(p, "concat_cols");
        if (p.value().rows() != r) throw ShapeError("concat_cols: row counts differ");
        widths.push_back(p.value().cols());
        total += p.value().cols();
    }
    Tensor out({r, total});
    std::size_t off = 0;
    for (std::size_t k = 0; k < parts.size(); ++k) {
        for (std::size_t i = 0; i < r; ++i)
            std::copy_n(parts[k].value().data() + i * widths[k], widths[k], out.data() + i * total + off);
        off += widths[k];
    }
    return make_result_n(std::move(out), "concat_cols", parts, [r, total, widths](Node& self) {
        std::size_t off = 0;
        for (std::size_t k = 0; k < widths.size(); ++k) {
            if (Node* in = grad_input(self, k)) {
                Tensor& g = in->grad_buffer();
                for (std::size_t i = 0; i < r; ++i)
                    for (std::size_t j = 0; j < widths[k]; ++j) g[i * widths[k] + j] += self.grad[i * total + off + j];
            }
            off += widths[k];
        }
    });
}

Var concat_rows(std::span<const Var> parts) {
    if (parts.empty()) throw ContractError("concat_rows: no inputs");
    const std::size_t c = parts[0].value().cols();
    std::size_t total = 0;
    std::vector<std::size_t> sizes;
    for (const auto& p : parts) {
        if (p.value().rank() > 2) throw ShapeError("concat_rows: expected matrices");
        if (p.value().cols() != c) {
            throw ShapeError("concat_rows: column counts differ: " + shape_str(parts[0].shape()) + " vs " +
                             shape_str(p.shape()));
        }
        sizes.push_back(p.numel());
        total += p.value().rows();
    }
    Tensor out({total, c});
    std::size_t off = 0;
    for (const auto& p : parts) {
        std::copy_n(p.value().data(), p.numel(), out.data() + off);
        off += p.numel();
    }
    return make_result_n(std::move(out), "concat_rows", parts, [sizes](Node& self) {
        std::size_t off = 0;
        for (std::size_t k = 0; k < sizes.size(); ++k) {
            if (Node* in = grad_input(self, k)) {
                Tensor& g = in->grad_buffer();
                for (std::size_t i = 0; i < sizes[k]; ++i) g[i] += self.grad[off + i];
            }
            off += sizes[k];
        }
    });
}

Var gather_rows(const Var& a, std::span<const std::size_t> rows) {
    require_rank2(a, "gather_rows");
    const std::size_t r = a.value().rows(), c = a.value().cols();
    std::vector<std::size_t> idx(rows.begin(), rows.end());
    Tensor out({idx.size(), c});
    for (std::size_t i = 0; i < idx.size(); ++i) {
        if (idx[i] >= r) {
            throw ContractError("gather_rows: index " + std::to_string(idx[i]) + " outside " + shape_str(a.shape()));
        }
        std::copy_n(a.value().data() + idx[i] * c, c, out.data() + i * c);
    }
    return make_result(std::move(out), "gather_rows", {&a}, [idx = std::move(idx), c](Node& self) {
        if (Node* in = grad_input(self, 0)) {
            Tensor& g = in->grad_buffer();
            for (std::size_t i = 0; i < idx.size(); ++i)
                for (std::size_t j = 0; j < c; ++j) g[idx[i] * c + j] += self.grad[i * c + j];
        }
    });
}

Var broadcast_row(const Var& row, std::size_t rows) {
    const std::size_t c = row.numel();
    Tensor out({rows, c});
    for (std::size_t i = 0; i < rows; ++i) std::copy_n(row.value().data(), c, out.data() + i * c);
    return make_result(std::move(out), "broadcast_row", {&row}, [rows, c](Node& self) {
        if (Node* in = grad_input(self, 0)) {
            Tensor& g = in->grad_buffer();
            for (std::size_t i = 0; i < rows; ++i)
                for (std::size_t j = 0; j < c; ++j) g[j] += self.grad[i * c + j];
        }
    });
}

Var pick_cols(const Var& a, std::span<const std::size_t> cols) {
    require_rank2(a, "pick_cols");
    const std::size_t r = a.value().rows(), c = a.value().cols();
    if (cols.size() != r) throw ShapeError("pick_cols: need one column index per row");
    std::vector<std::size_t> idx(cols.begin(), cols.end());
    Tensor out({r});
    for (std::size_t i = 0; i < r; ++i) {
        if (idx[i] >= c) throw ContractError("pick_cols: column index out of range");
        out[i] = a.value()[i * c + idx[i]];
    }
    return make_result(std::move(out), "pick_cols", {&a}, [idx = std::move(idx), c](Node& self) {
        if (Node* in = grad_input(self, 0)) {
            Tensor& g = in->grad_buffer();
            for (std::size_t i = 0; i < idx.size(); ++i) g[i * c + idx[i]] += self.grad[i];
        }
    });
}

Var gather_elements(const Var& a, std::span<const std::size_t> index, Shape shape) {
    if (shape_numel(shape) != index.size()) throw ShapeError("gather_elements: index count does not match shape");
    std::vector<std::size_t> idx(index.begin(), index.end());
    Tensor out(std::move(shape));
    for (std::size_t i = 0; i < idx.size(); ++i) {
        if (idx[i] >= a.numel()) throw ContractError("gather_elements: index out of range");
        out[i] = a.value()[idx[i]];
    }
    return make_result(std::move(out), "gather_elements", {&a}, [idx = std::move(idx)](Node& self) {
        if (Node* in = grad_input(self, 0)) {
            Tensor& g = in->grad_buffer();
            for (std::size_t i = 0; i < idx.size(); ++i) g[idx[i]] += self.grad[i];
        }
    });
}

Var normalize_rows(const Var& a, double eps) {
    require_rank2(a, "normalize_rows");
    const std::size_t r = a.value().rows(), c = a.value().cols();
    auto norms = std::make_shared<std::vector<double>>(r);
    Tensor out = a.value();
    for (std::size_t i = 0; i < r; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < c; ++j) s += out[i * c + j] * out[i * c + j];
        (*norms)[i] = std::sqrt(s) + eps;
        for (std::size_t j = 0; j < c; ++j) out[i * c + j] /= (*norms)[i];
    }
    return make_result(std::move(out), "normalize_rows", {&a}, [r, c, norms, eps](Node& self) {
        if (Node* in = grad_input(self, 0)) {
            Tensor& g = in->grad_buffer();
            const Tensor& y = self.value;
            for (std::size_t i = 0; i < r; ++i) {
                double dot = 0.0;
                for (std::size_t j = 0; j < c; ++j) dot += self.grad[i * c + j] * y[i * c + j];
                // y = x / n with n = |x| + eps:  dx = (dy - (dy.y) x/|x|) / n
                const double n = (*norms)[i];
                const double ratio = n / std::max(n - eps, eps);
                for (std::size_t j = 0; j < c; ++j)
                    g[i * c + j] += (self.grad[i * c + j] - dot * ratio * y[i * c + j]) / n;
            }
        }
    });
}

// ----------------------------------------------------------------- spatial

Var im2col(const Var& x, std::size_t h, std::size_t w, std::size_t k, std::size_t stride,
           std::size_t pad) {
    require_rank2(x, "im2col");
    if (x.value().rows() != h * w) {
        throw ShapeError("im2col: map " + shape_str(x.shape()) + " is not " + std::to_string(h) + "x" +
                         std::to_string(w) + " pixels");
    }
    if (k == 0 || stride == 0 || h + 2 * pad < k || w + 2 * pad < k) {
        throw ContractError("im2col: kernel does not fit the padded map");
    }
    const std::size_t c = x.value().cols();
    const std::size_t ho = kernels::conv_out_size(h, k, stride, pad);
    const std::size_t wo = kernels::conv_out_size(w, k, stride, pad);
    Tensor out({ho * wo, k * k * c});
    kp::im2col(x.value().data(), out.data(), h, w, c, k, stride, pad);
    return make_result(std::move(out), "im2col", {&x}, [h, w, c, k, stride, pad](Node& self) {
        if (Node* in = grad_input(self, 0)) {
            Tensor tmp({h * w, c});
            kp::col2im(self.grad.data(), tmp.data(), h, w, c, k, stride, pad);
            Tensor& g = in->grad_buffer();
            for (std::size_t i = 0; i < g.numel(); ++i) g[i] += tmp[i];
        }
    });
}

Var upsample2x(const Var& x, std::size_t h, std::size_t w) {
    require_rank2(x, "upsample2x");
    if (x.value().rows() != h * w) throw ShapeError("upsample2x: map size mismatch");
    const std::size_t c = x.value().cols();
    const std::size_t w2 = 2 * w;
    Tensor out({4 * h * w, c});
    for (std::size_t y = 0; y < 2 * h; ++y)
        for (std::size_t xx = 0; xx < w2; ++xx)
            std::copy_n(x.value().data() + ((y / 2) * w + xx / 2) * c, c, out.data() + (y * w2 + xx) * c);
    return make_result(std::move(out), "upsample2x", {&x}, [h, w, c, w2](Node& self) {
        if (Node* in = grad_input(self, 0)) {
            Tensor& g = in->grad_buffer();
            for (std::size_t y = 0; y < 2 * h; ++y)
                for (std::size_t xx = 0; xx < w2; ++xx)
                    for (std::size_t ch = 0; ch < c; ++ch)
                        g[((y / 2) * w + xx / 2) * c + ch] += self.grad[(y * w2 + xx) * c + ch];
        }
    });
}

// ------------------------------------------------------------------ losses

Var mse(const Var& a, const Var& b) { return mean(square(sub(a, b))); }

Var cross_entropy(const Var& logits, std::span<const std::size_t> labels) {
    return mean(sub(logsumexp_rows(logits), pick_cols(logits, labels)));
}

}  // namespace neurodec
