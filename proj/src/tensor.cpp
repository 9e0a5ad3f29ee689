#include "fedinv/tensor.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <optional>
#include <sstream>

namespace fedinv {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

const char* op_name(Op op) {
    switch (op) {
        case Op::leaf: return "leaf";
        case Op::add: return "add";
        case Op::sub: return "sub";
        case Op::mul: return "mul";
        case Op::div: return "div";
        case Op::smul: return "smul";
        case Op::scale: return "scale";
        case Op::add_scalar: return "add_scalar";
        case Op::matmul: return "matmul";
        case Op::transpose: return "transpose";
        case Op::reshape: return "reshape";
        case Op::sum: return "sum";
        case Op::slice: return "slice";
        case Op::pad: return "pad";
        case Op::im2col: return "im2col";
        case Op::col2im: return "col2im";
        case Op::avgpool: return "avgpool";
        case Op::avgunpool: return "avgunpool";
        case Op::bcast_channel: return "bcast_channel";
        case Op::channel_sum: return "channel_sum";
        case Op::sigmoid: return "sigmoid";
        case Op::tanh: return "tanh";
        case Op::relu: return "relu";
        case Op::exp: return "exp";
        case Op::log: return "log";
        case Op::sqrt: return "sqrt";
    }
    return "?";
}

void check_finite(const std::vector<double>& v, Op op) {
    for (double x : v) {
        if (!std::isfinite(x))
            throw NonFiniteError(std::string("non-finite value produced by op ") + op_name(op));
    }
}

struct Value {
    Shape shape;
    std::vector<double> data;
};

int conv_out_dim(int in, int k, int stride, int padding) {
    int span = in + 2 * padding - k;
    if (span < 0 || stride < 1)
        throw ShapeError("conv window does not fit: in=" + std::to_string(in) +
                         " k=" + std::to_string(k) + " pad=" + std::to_string(padding));
    return span / stride + 1;
}

// Forward kernels, pure functions of parent values + attributes. The same
// code runs at record time and at replay time.
Value eval_op(Op op, const std::vector<const Value*>& p, const std::vector<std::int64_t>& ia,
              const std::vector<double>& da) {
    auto elementwise2 = [&](auto fn) {
        Value out{p[0]->shape, std::vector<double>(p[0]->data.size())};
        const auto& a = p[0]->data;
        const auto& b = p[1]->data;
        for (std::size_t i = 0; i < a.size(); ++i) out.data[i] = fn(a[i], b[i]);
        return out;
    };
    auto elementwise1 = [&](auto fn) {
        Value out{p[0]->shape, std::vector<double>(p[0]->data.size())};
        const auto& a = p[0]->data;
        for (std::size_t i = 0; i < a.size(); ++i) out.data[i] = fn(a[i]);
        return out;
    };

    switch (op) {
        case Op::leaf:
            throw Error("leaf nodes are not recomputed");
        case Op::add:
            return elementwise2([](double a, double b) { return a + b; });
        case Op::sub:
            return elementwise2([](double a, double b) { return a - b; });
        case Op::mul:
            return elementwise2([](double a, double b) { return a * b; });
        case Op::div:
            return elementwise2([](double a, double b) { return a / b; });
        case Op::smul: {
            double s = p[1]->data[0];
            return elementwise1([s](double a) { return a * s; });
        }
        case Op::scale: {
            double c = da[0];
            return elementwise1([c](double a) { return a * c; });
        }
        case Op::add_scalar: {
            double c = da[0];
            return elementwise1([c](double a) { return a + c; });
        }
        case Op::matmul: {
            int m = p[0]->shape[0], k = p[0]->shape[1], n = p[1]->shape[1];
            Value out{{m, n}, std::vector<double>(static_cast<std::size_t>(m) * n)};
            Eigen::Map<const RowMat> A(p[0]->data.data(), m, k);
            Eigen::Map<const RowMat> B(p[1]->data.data(), k, n);
            Eigen::Map<RowMat> C(out.data.data(), m, n);
            C.noalias() = A * B;
            return out;
        }
        case Op::transpose: {
            int m = p[0]->shape[0], n = p[0]->shape[1];
            Value out{{n, m}, std::vector<double>(p[0]->data.size())};
            for (int i = 0; i < m; ++i)
                for (int j = 0; j < n; ++j)
                    out.data[static_cast<std::size_t>(j) * m + i] =
                        p[0]->data[static_cast<std::size_t>(i) * n + j];
            return out;
        }
        case Op::reshape: {
            Shape s(ia.begin(), ia.end());
            return Value{s, p[0]->data};
        }
        case Op::sum: {
            double acc = 0.0;
            for (double v : p[0]->data) acc += v;
            return Value{{}, {acc}};
        }
        case Op::slice: {
            std::size_t r = p[0]->shape.size();
            std::vector<int> starts(ia.begin(), ia.begin() + r);
            Shape sizes(ia.begin() + r, ia.end());
            Value out{sizes, std::vector<double>(static_cast<std::size_t>(shape_numel(sizes)))};
            std::vector<int> idx(r, 0);
            const Shape& full = p[0]->shape;
            for (std::size_t o = 0; o < out.data.size(); ++o) {
                std::int64_t src = 0;
                for (std::size_t d = 0; d < r; ++d) src = src * full[d] + (starts[d] + idx[d]);
                out.data[o] = p[0]->data[static_cast<std::size_t>(src)];
                for (std::size_t d = r; d-- > 0;) {
                    if (++idx[d] < sizes[d]) break;
                    idx[d] = 0;
                }
            }
            return out;
        }
        case Op::pad: {
            std::size_t r = p[0]->shape.size();
            std::vector<int> starts(ia.begin(), ia.begin() + r);
            Shape full(ia.begin() + r, ia.end());
            Value out{full, std::vector<double>(static_cast<std::size_t>(shape_numel(full)), 0.0)};
            std::vector<int> idx(r, 0);
            const Shape& sizes = p[0]->shape;
            for (std::size_t o = 0; o < p[0]->data.size(); ++o) {
                std::int64_t dst = 0;
                for (std::size_t d = 0; d < r; ++d) dst = dst * full[d] + (starts[d] + idx[d]);
                out.data[static_cast<std::size_t>(dst)] = p[0]->data[o];
                for (std::size_t d = r; d-- > 0;) {
                    if (++idx[d] < sizes[d]) break;
                    idx[d] = 0;
                }
            }
            return out;
        }
        case Op::im2col: {
            int C = p[0]->shape[0], H = p[0]->shape[1], W = p[0]->shape[2];
            int kh = static_cast<int>(ia[0]), kw = static_cast<int>(ia[1]);
            int s = static_cast<int>(ia[2]), pd = static_cast<int>(ia[3]);
            int oh = conv_out_dim(H, kh, s, pd), ow = conv_out_dim(W, kw, s, pd);
            int rows = C * kh * kw, cols = oh * ow;
            Value out{{rows, cols}, std::vector<double>(static_cast<std::size_t>(rows) * cols)};
            const double* x = p[0]->data.data();
            double* dst = out.data.data();
            for (int c = 0; c < C; ++c)
                for (int ki = 0; ki < kh; ++ki)
                    for (int kj = 0; kj < kw; ++kj) {
                        for (int oi = 0; oi < oh; ++oi) {
                            int ii = oi * s - pd + ki;
                            for (int oj = 0; oj < ow; ++oj) {
                                int jj = oj * s - pd + kj;
                                *dst++ = (ii >= 0 && ii < H && jj >= 0 && jj < W)
                                             ? x[(static_cast<std::size_t>(c) * H + ii) * W + jj]
                                             : 0.0;
                            }
                        }
                    }
            return out;
        }
        case Op::col2im: {
            int C = static_cast<int>(ia[0]), H = static_cast<int>(ia[1]),
                W = static_cast<int>(ia[2]);
            int kh = static_cast<int>(ia[3]), kw = static_cast<int>(ia[4]);
            int s = static_cast<int>(ia[5]), pd = static_cast<int>(ia[6]);
            int oh = conv_out_dim(H, kh, s, pd), ow = conv_out_dim(W, kw, s, pd);
            Value out{{C, H, W},
                      std::vector<double>(static_cast<std::size_t>(C) * H * W, 0.0)};
            const double* src = p[0]->data.data();
            for (int c = 0; c < C; ++c)
                for (int ki = 0; ki < kh; ++ki)
                    for (int kj = 0; kj < kw; ++kj) {
                        for (int oi = 0; oi < oh; ++oi) {
                            int ii = oi * s - pd + ki;
                            for (int oj = 0; oj < ow; ++oj) {
                                int jj = oj * s - pd + kj;
                                double v = *src++;
                                if (ii >= 0 && ii < H && jj >= 0 && jj < W)
                                    out.data[(static_cast<std::size_t>(c) * H + ii) * W + jj] += v;
                            }
                        }
                    }
            return out;
        }
        case Op::avgpool: {
            int C = p[0]->shape[0], H = p[0]->shape[1], W = p[0]->shape[2];
            int k = static_cast<int>(ia[0]), s = static_cast<int>(ia[1]);
            int oh = (H - k) / s + 1, ow = (W - k) / s + 1;
            double inv = 1.0 / (static_cast<double>(k) * k);
            Value out{{C, oh, ow}, std::vector<double>(static_cast<std::size_t>(C) * oh * ow)};
            for (int c = 0; c < C; ++c)
                for (int oi = 0; oi < oh; ++oi)
                    for (int oj = 0; oj < ow; ++oj) {
                        double acc = 0.0;
                        for (int a = 0; a < k; ++a)
                            for (int b = 0; b < k; ++b)
                                acc += p[0]->data[(static_cast<std::size_t>(c) * H + oi * s + a) *
                                                      W +
                                                  oj * s + b];
                        out.data[(static_cast<std::size_t>(c) * oh + oi) * ow + oj] = acc * inv;
                    }
            return out;
        }
        case Op::avgunpool: {
            int C = p[0]->shape[0], oh = p[0]->shape[1], ow = p[0]->shape[2];
            int k = static_cast<int>(ia[0]), s = static_cast<int>(ia[1]);
            int H = static_cast<int>(ia[2]), W = static_cast<int>(ia[3]);
            double inv = 1.0 / (static_cast<double>(k) * k);
            Value out{{C, H, W}, std::vector<double>(static_cast<std::size_t>(C) * H * W, 0.0)};
            for (int c = 0; c < C; ++c)
                for (int oi = 0; oi < oh; ++oi)
                    for (int oj = 0; oj < ow; ++oj) {
                        double v = p[0]->data[(static_cast<std::size_t>(c) * oh + oi) * ow + oj] *
                                   inv;
                        for (int a = 0; a < k; ++a)
                            for (int b = 0; b < k; ++b)
                                out.data[(static_cast<std::size_t>(c) * H + oi * s + a) * W +
                                         oj * s + b] += v;
                    }
            return out;
        }
        case Op::bcast_channel: {
            int C = p[0]->shape[0];
            int H = static_cast<int>(ia[0]), W = static_cast<int>(ia[1]);
            Value out{{C, H, W}, std::vector<double>(static_cast<std::size_t>(C) * H * W)};
            for (int c = 0; c < C; ++c)
                std::fill_n(out.data.begin() + static_cast<std::ptrdiff_t>(c) * H * W, H * W,
                            p[0]->data[static_cast<std::size_t>(c)]);
            return out;
        }
        case Op::channel_sum: {
            int C = p[0]->shape[0], H = p[0]->shape[1], W = p[0]->shape[2];
            Value out{{C}, std::vector<double>(static_cast<std::size_t>(C))};
            for (int c = 0; c < C; ++c) {
                double acc = 0.0;
                for (int i = 0; i < H * W; ++i)
                    acc += p[0]->data[static_cast<std::size_t>(c) * H * W + i];
                out.data[static_cast<std::size_t>(c)] = acc;
            }
            return out;
        }
        case Op::sigmoid:
            return elementwise1([](double a) { return 1.0 / (1.0 + std::exp(-a)); });
        case Op::tanh:
            return elementwise1([](double a) { return std::tanh(a); });
        case Op::relu:
            return elementwise1([](double a) { return a > 0.0 ? a : 0.0; });
        case Op::exp:
            return elementwise1([](double a) { return std::exp(a); });
        case Op::log:
            return elementwise1([](double a) { return std::log(a); });
        case Op::sqrt:
            return elementwise1([](double a) { return std::sqrt(a); });
    }
    throw Error("unknown op");
}

void require(bool cond, const std::string& msg) {
    if (!cond) throw ShapeError(msg);
}

}  // namespace

std::int64_t shape_numel(const Shape& s) {
    std::int64_t n = 1;
    for (int d : s) {
        if (d <= 0) throw ShapeError("non-positive dimension in shape " + shape_str(s));
        n *= d;
    }
    return n;
}

std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << ']';
    return os.str();
}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)) {
    if (static_cast<std::int64_t>(data.size()) != shape_numel(shape_))
        throw ShapeError("data size " + std::to_string(data.size()) + " does not match shape " +
                         shape_str(shape_));
    data_ = std::make_shared<const std::vector<double>>(std::move(data));
}

Tensor Tensor::full(const Shape& shape, double value) {
    return Tensor(shape, std::vector<double>(static_cast<std::size_t>(shape_numel(shape)), value));
}

Tensor Tensor::zeros(const Shape& shape) { return full(shape, 0.0); }

Tensor Tensor::scalar_value(double v) { return Tensor({}, std::vector<double>{v}); }

const std::vector<double>& Tensor::data() const {
    if (!data_) throw Error("use of default-constructed tensor");
    return *data_;
}

double Tensor::scalar() const {
    if (size() != 1) throw ShapeError("scalar() on tensor of shape " + shape_str(shape_));
    return data()[0];
}

Tensor Tensor::detach() const { return Tensor(shape_, data_, nullptr, -1); }

Tensor Graph::wrap(int node) const {
    const Node& n = nodes_[static_cast<std::size_t>(node)];
    return Tensor(n.shape, n.value, const_cast<Graph*>(this), node);
}

int Graph::append(Op op, Shape shape, std::shared_ptr<const std::vector<double>> value,
                  std::vector<int> parents, std::vector<std::int64_t> iattr,
                  std::vector<double> dattr) {
    nodes_.push_back(Node{op, std::move(shape), std::move(value), std::move(parents),
                          std::move(iattr), std::move(dattr)});
    return static_cast<int>(nodes_.size()) - 1;
}

Tensor Graph::leaf(const Tensor& value) {
    if (value.on_graph()) {
        if (value.graph() == this) return value;
        throw Error("leaf() argument already belongs to another graph");
    }
    if (!value.defined()) throw Error("leaf() of undefined tensor");
    int id = append(Op::leaf, value.shape(), value.data_, {}, {}, {});
    return wrap(id);
}

Tensor Graph::leaf(Shape shape, std::vector<double> data) {
    return leaf(Tensor(std::move(shape), std::move(data)));
}

bool Graph::replay_matches() const {
    for (const Node& n : nodes_) {
        if (n.op == Op::leaf) continue;
        std::vector<Value> pv;
        pv.reserve(n.parents.size());
        for (int pid : n.parents) {
            const Node& pn = nodes_[static_cast<std::size_t>(pid)];
            pv.push_back(Value{pn.shape, *pn.value});
        }
        std::vector<const Value*> pp;
        for (const Value& v : pv) pp.push_back(&v);
        Value got = eval_op(n.op, pp, n.iattr, n.dattr);
        if (got.shape != n.shape || got.data != *n.value) return false;
    }
    return true;
}

namespace {

// Resolves the graph shared by the operands (none, or exactly one).
Graph* resolve_graph(const std::vector<const Tensor*>& args) {
    Graph* g = nullptr;
    for (const Tensor* t : args) {
        if (!t->defined()) throw Error("op argument is an undefined tensor");
        if (!t->on_graph()) continue;
        if (g == nullptr)
            g = t->graph();
        else if (g != t->graph())
            throw Error("operands belong to different graphs");
    }
    return g;
}

}  // namespace

Tensor record_op(Op op, const std::vector<const Tensor*>& args, std::vector<std::int64_t> iattr,
                 std::vector<double> dattr) {
    Graph* g = resolve_graph(args);
    std::vector<Value> owned;
    owned.reserve(args.size());
    for (const Tensor* t : args) owned.push_back(Value{t->shape(), t->data()});
    std::vector<const Value*> pv;
    for (const Value& v : owned) pv.push_back(&v);
    Value out = eval_op(op, pv, iattr, dattr);
    check_finite(out.data, op);

    auto value = std::make_shared<const std::vector<double>>(std::move(out.data));
    if (g == nullptr || !g->recording()) return Tensor(out.shape, value, nullptr, -1);

    std::vector<int> parents;
    parents.reserve(args.size());
    for (const Tensor* t : args) {
        if (t->on_graph()) {
            parents.push_back(t->node());
        } else {
            // Plain value used inside a recorded expression: becomes a
            // constant leaf so backward has a node to stop at.
            Tensor lf = g->leaf(*t);
            parents.push_back(lf.node());
        }
    }
    int id = g->append(op, out.shape, value, std::move(parents), std::move(iattr),
                       std::move(dattr));
    return g->wrap(id);
}

namespace {

void require_same_shape(const Tensor& a, const Tensor& b, const char* what) {
    if (a.shape() != b.shape())
        throw ShapeError(std::string(what) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "add");
    return record_op(Op::add, {&a, &b}, {}, {});
}

Tensor sub(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "sub");
    return record_op(Op::sub, {&a, &b}, {}, {});
}

Tensor mul(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "mul");
    return record_op(Op::mul, {&a, &b}, {}, {});
}

Tensor div(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "div");
    return record_op(Op::div, {&a, &b}, {}, {});
}

Tensor smul(const Tensor& a, const Tensor& s) {
    if (s.size() != 1) throw ShapeError("smul: scalar operand has shape " + shape_str(s.shape()));
    return record_op(Op::smul, {&a, &s}, {}, {});
}

Tensor scale(const Tensor& a, double c) { return record_op(Op::scale, {&a}, {}, {c}); }

Tensor add_scalar(const Tensor& a, double c) { return record_op(Op::add_scalar, {&a}, {}, {c}); }

Tensor matmul(const Tensor& a, const Tensor& b) {
    require(a.shape().size() == 2 && b.shape().size() == 2,
            "matmul: operands must be rank-2, got " + shape_str(a.shape()) + " and " +
                shape_str(b.shape()));
    require(a.shape()[1] == b.shape()[0],
            "matmul: inner dims differ, " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
    return record_op(Op::matmul, {&a, &b}, {}, {});
}

Tensor transpose(const Tensor& a) {
    require(a.shape().size() == 2, "transpose: rank-2 required, got " + shape_str(a.shape()));
    return record_op(Op::transpose, {&a}, {}, {});
}

Tensor reshape(const Tensor& a, const Shape& shape) {
    require(shape_numel(shape) == a.size(),
            "reshape: cannot view " + shape_str(a.shape()) + " as " + shape_str(shape));
    std::vector<std::int64_t> ia(shape.begin(), shape.end());
    return record_op(Op::reshape, {&a}, std::move(ia), {});
}

Tensor flatten(const Tensor& a) { return reshape(a, {static_cast<int>(a.size())}); }

Tensor sum(const Tensor& a) { return record_op(Op::sum, {&a}, {}, {}); }

Tensor slice(const Tensor& a, const std::vector<int>& starts, const std::vector<int>& sizes) {
    const Shape& s = a.shape();
    require(starts.size() == s.size() && sizes.size() == s.size(),
            "slice: starts/sizes rank mismatch for " + shape_str(s));
    for (std::size_t d = 0; d < s.size(); ++d)
        require(starts[d] >= 0 && sizes[d] >= 1 && starts[d] + sizes[d] <= s[d],
                "slice: window out of bounds in dim " + std::to_string(d));
    std::vector<std::int64_t> ia;
    for (int v : starts) ia.push_back(v);
    for (int v : sizes) ia.push_back(v);
    return record_op(Op::slice, {&a}, std::move(ia), {});
}

Tensor pad(const Tensor& a, const std::vector<int>& starts, const Shape& full) {
    const Shape& s = a.shape();
    require(starts.size() == s.size() && full.size() == s.size(),
            "pad: starts/full rank mismatch for " + shape_str(s));
    for (std::size_t d = 0; d < s.size(); ++d)
        require(starts[d] >= 0 && starts[d] + s[d] <= full[d],
                "pad: placement out of bounds in dim " + std::to_string(d));
    std::vector<std::int64_t> ia;
    for (int v : starts) ia.push_back(v);
    for (int v : full) ia.push_back(v);
    return record_op(Op::pad, {&a}, std::move(ia), {});
}

Tensor im2col(const Tensor& x, int kh, int kw, int stride, int padding) {
    require(x.shape().size() == 3, "im2col: CxHxW input required, got " + shape_str(x.shape()));
    conv_out_dim(x.shape()[1], kh, stride, padding);
    conv_out_dim(x.shape()[2], kw, stride, padding);
    return record_op(Op::im2col, {&x}, {kh, kw, stride, padding}, {});
}

Tensor col2im(const Tensor& cols, int channels, int height, int width, int kh, int kw, int stride,
              int padding) {
    require(cols.shape().size() == 2, "col2im: rank-2 input required");
    int oh = conv_out_dim(height, kh, stride, padding);
    int ow = conv_out_dim(width, kw, stride, padding);
    require(cols.shape()[0] == channels * kh * kw && cols.shape()[1] == oh * ow,
            "col2im: input shape " + shape_str(cols.shape()) + " inconsistent with geometry");
    return record_op(Op::col2im, {&cols}, {channels, height, width, kh, kw, stride, padding}, {});
}

Tensor avgpool2d(const Tensor& x, int k, int stride) {
    require(x.shape().size() == 3, "avgpool2d: CxHxW input required");
    require(k >= 1 && stride >= 1 && x.shape()[1] >= k && x.shape()[2] >= k,
            "avgpool2d: window larger than input");
    return record_op(Op::avgpool, {&x}, {k, stride}, {});
}

Tensor avgunpool2d(const Tensor& g, int k, int stride, int height, int width) {
    require(g.shape().size() == 3, "avgunpool2d: CxHxW input required");
    require((height - k) / stride + 1 == g.shape()[1] && (width - k) / stride + 1 == g.shape()[2],
            "avgunpool2d: geometry mismatch");
    return record_op(Op::avgunpool, {&g}, {k, stride, height, width}, {});
}

Tensor bcast_channel(const Tensor& bias, int height, int width) {
    require(bias.shape().size() == 1, "bcast_channel: rank-1 bias required");
    return record_op(Op::bcast_channel, {&bias}, {height, width}, {});
}

Tensor channel_sum(const Tensor& x) {
    require(x.shape().size() == 3, "channel_sum: CxHxW input required");
    return record_op(Op::channel_sum, {&x}, {}, {});
}

Tensor sigmoid(const Tensor& a) { return record_op(Op::sigmoid, {&a}, {}, {}); }
Tensor tanh(const Tensor& a) { return record_op(Op::tanh, {&a}, {}, {}); }
Tensor relu(const Tensor& a) { return record_op(Op::relu, {&a}, {}, {}); }
Tensor exp(const Tensor& a) { return record_op(Op::exp, {&a}, {}, {}); }
Tensor log(const Tensor& a) { return record_op(Op::log, {&a}, {}, {}); }
Tensor sqrt(const Tensor& a) { return record_op(Op::sqrt, {&a}, {}, {}); }

Tensor conv2d(const Tensor& x, const Tensor& kernel, int stride, int padding) {
    require(x.shape().size() == 3, "conv2d: CxHxW input required, got " + shape_str(x.shape()));
    require(kernel.shape().size() == 4,
            "conv2d: OxCxKhxKw kernel required, got " + shape_str(kernel.shape()));
    require(kernel.shape()[1] == x.shape()[0],
            "conv2d: kernel expects " + std::to_string(kernel.shape()[1]) + " input channels, got " +
                std::to_string(x.shape()[0]));
    int co = kernel.shape()[0], kh = kernel.shape()[2], kw = kernel.shape()[3];
    int oh = conv_out_dim(x.shape()[1], kh, stride, padding);
    int ow = conv_out_dim(x.shape()[2], kw, stride, padding);
    Tensor cols = im2col(x, kh, kw, stride, padding);
    Tensor kmat = reshape(kernel, {co, kernel.shape()[1] * kh * kw});
    Tensor out = matmul(kmat, cols);
    return reshape(out, {co, oh, ow});
}

Tensor softmax(const Tensor& z) {
    require(z.shape().size() == 1, "softmax: rank-1 logits required, got " + shape_str(z.shape()));
    double m = *std::max_element(z.data().begin(), z.data().end());
    Tensor e = exp(add_scalar(z, -m));
    Tensor rec = div(Tensor::scalar_value(1.0), sum(e));
    return smul(e, rec);
}

Tensor one_hot(int label, int k) {
    if (label < 0 || label >= k)
        throw Error("one_hot: label " + std::to_string(label) + " outside [0," + std::to_string(k) +
                    ")");
    std::vector<double> v(static_cast<std::size_t>(k), 0.0);
    v[static_cast<std::size_t>(label)] = 1.0;
    return Tensor({k}, std::move(v));
}

Tensor softmax_cross_entropy(const Tensor& logits, const Tensor& label) {
    require(logits.shape().size() == 1, "softmax_cross_entropy: rank-1 logits required");
    require_same_shape(logits, label, "softmax_cross_entropy");
    // -sum_i y_i log softmax(z)_i == (sum_i y_i) * lse(z) - sum_i y_i z_i
    // with lse computed against the max logit (a constant shift, so the
    // derivatives are unaffected).
    double m = *std::max_element(logits.data().begin(), logits.data().end());
    Tensor lse = add_scalar(log(sum(exp(add_scalar(logits, -m)))), m);
    Tensor mass = sum(label);
    return sub(mul(mass, lse), sum(mul(label, logits)));
}

Tensor softmax_cross_entropy(const Tensor& logits, int label) {
    int k = static_cast<int>(logits.size());
    return softmax_cross_entropy(logits, one_hot(label, k));
}

namespace {

class RecordingGuardImpl {
public:
    RecordingGuardImpl(bool& flag, bool value) : flag_(flag), saved_(flag) { flag_ = value; }
    ~RecordingGuardImpl() { flag_ = saved_; }

private:
    bool& flag_;
    bool saved_;
};

}  // namespace

class RecordingGuard {
public:
    RecordingGuard(Graph& g, bool value) : impl_(g.recording_, value) {}

private:
    RecordingGuardImpl impl_;
};

std::vector<Tensor> gradient(const Tensor& output, const std::vector<Tensor>& wrt,
                             bool create_graph) {
    if (!output.on_graph()) throw Error("gradient: output does not carry a graph handle");
    if (output.size() != 1)
        throw ShapeError("gradient: output must be a scalar, got shape " +
                         shape_str(output.shape()));
    Graph& g = *output.graph();
    for (const Tensor& w : wrt) {
        if (!w.on_graph() || w.graph() != &g)
            throw Error("gradient: wrt tensor is not on the output's graph");
    }

    const int root = output.node();
    std::vector<char> needed(static_cast<std::size_t>(root) + 1, 0);
    needed[static_cast<std::size_t>(root)] = 1;
    for (int i = root; i >= 0; --i) {
        if (!needed[static_cast<std::size_t>(i)]) continue;
        for (int p : g.nodes_[static_cast<std::size_t>(i)].parents)
            needed[static_cast<std::size_t>(p)] = 1;
    }
    for (const Tensor& w : wrt) {
        if (w.node() > root || !needed[static_cast<std::size_t>(w.node())])
            throw Error("gradient: wrt tensor does not influence the output");
    }

    RecordingGuard guard(g, create_graph);

    std::vector<std::optional<Tensor>> adj(static_cast<std::size_t>(root) + 1);
    adj[static_cast<std::size_t>(root)] = Tensor::full(output.shape(), 1.0);

    auto accumulate = [&](int node, const Tensor& contribution) {
        auto& slot = adj[static_cast<std::size_t>(node)];
        slot = slot ? add(*slot, contribution) : contribution;
    };

    for (int i = root; i >= 0; --i) {
        if (!needed[static_cast<std::size_t>(i)] || !adj[static_cast<std::size_t>(i)]) continue;
        const Graph::Node& n = g.nodes_[static_cast<std::size_t>(i)];
        if (n.op == Op::leaf) continue;
        const Tensor& a = *adj[static_cast<std::size_t>(i)];
        auto parent = [&](std::size_t idx) { return g.wrap(n.parents[idx]); };
        Tensor self = g.wrap(i);

        switch (n.op) {
            case Op::leaf:
                break;
            case Op::add:
                accumulate(n.parents[0], a);
                accumulate(n.parents[1], a);
                break;
            case Op::sub:
                accumulate(n.parents[0], a);
                accumulate(n.parents[1], scale(a, -1.0));
                break;
            case Op::mul:
                accumulate(n.parents[0], mul(a, parent(1)));
                accumulate(n.parents[1], mul(a, parent(0)));
                break;
            case Op::div: {
                Tensor b = parent(1);
                accumulate(n.parents[0], div(a, b));
                accumulate(n.parents[1], scale(mul(a, div(parent(0), mul(b, b))), -1.0));
                break;
            }
            case Op::smul: {
                accumulate(n.parents[0], smul(a, parent(1)));
                accumulate(n.parents[1], reshape(sum(mul(a, parent(0))),
                                                 g.nodes_[static_cast<std::size_t>(n.parents[1])]
                                                     .shape));
                break;
            }
            case Op::scale:
                accumulate(n.parents[0], scale(a, n.dattr[0]));
                break;
            case Op::add_scalar:
                accumulate(n.parents[0], a);
                break;
            case Op::matmul:
                accumulate(n.parents[0], matmul(a, transpose(parent(1))));
                accumulate(n.parents[1], matmul(transpose(parent(0)), a));
                break;
            case Op::transpose:
                accumulate(n.parents[0], transpose(a));
                break;
            case Op::reshape:
                accumulate(n.parents[0],
                           reshape(a, g.nodes_[static_cast<std::size_t>(n.parents[0])].shape));
                break;
            case Op::sum: {
                const Shape& ps = g.nodes_[static_cast<std::size_t>(n.parents[0])].shape;
                accumulate(n.parents[0], smul(Tensor::full(ps, 1.0), a));
                break;
            }
            case Op::slice: {
                const Shape& ps = g.nodes_[static_cast<std::size_t>(n.parents[0])].shape;
                std::size_t r = ps.size();
                std::vector<int> starts(n.iattr.begin(), n.iattr.begin() + r);
                accumulate(n.parents[0], pad(a, starts, ps));
                break;
            }
            case Op::pad: {
                const Shape& ps = g.nodes_[static_cast<std::size_t>(n.parents[0])].shape;
                std::size_t r = ps.size();
                std::vector<int> starts(n.iattr.begin(), n.iattr.begin() + r);
                std::vector<int> sizes(ps.begin(), ps.end());
                accumulate(n.parents[0], slice(a, starts, sizes));
                break;
            }
            case Op::im2col: {
                const Shape& ps = g.nodes_[static_cast<std::size_t>(n.parents[0])].shape;
                accumulate(n.parents[0],
                           col2im(a, ps[0], ps[1], ps[2], static_cast<int>(n.iattr[0]),
                                  static_cast<int>(n.iattr[1]), static_cast<int>(n.iattr[2]),
                                  static_cast<int>(n.iattr[3])));
                break;
            }
            case Op::col2im:
                accumulate(n.parents[0],
                           im2col(a, static_cast<int>(n.iattr[3]), static_cast<int>(n.iattr[4]),
                                  static_cast<int>(n.iattr[5]), static_cast<int>(n.iattr[6])));
                break;
            case Op::avgpool: {
                const Shape& ps = g.nodes_[static_cast<std::size_t>(n.parents[0])].shape;
                accumulate(n.parents[0], avgunpool2d(a, static_cast<int>(n.iattr[0]),
                                                     static_cast<int>(n.iattr[1]), ps[1], ps[2]));
                break;
            }
            case Op::avgunpool:
                accumulate(n.parents[0], avgpool2d(a, static_cast<int>(n.iattr[0]),
                                                   static_cast<int>(n.iattr[1])));
                break;
            case Op::bcast_channel:
                accumulate(n.parents[0], channel_sum(a));
                break;
            case Op::channel_sum: {
                const Shape& ps = g.nodes_[static_cast<std::size_t>(n.parents[0])].shape;
                accumulate(n.parents[0], bcast_channel(a, ps[1], ps[2]));
                break;
            }
            case Op::sigmoid: {
                Tensor one_minus = add_scalar(scale(self, -1.0), 1.0);
                accumulate(n.parents[0], mul(a, mul(self, one_minus)));
                break;
            }
            case Op::tanh:
                accumulate(n.parents[0],
                           mul(a, add_scalar(scale(mul(self, self), -1.0), 1.0)));
                break;
            case Op::relu: {
                // Mask enters as a constant, so d/dx drops it; second
                // derivative is zero almost everywhere by construction.
                const auto& xv = *g.nodes_[static_cast<std::size_t>(n.parents[0])].value;
                std::vector<double> mask(xv.size());
                for (std::size_t j = 0; j < xv.size(); ++j) mask[j] = xv[j] > 0.0 ? 1.0 : 0.0;
                accumulate(n.parents[0], mul(a, Tensor(n.shape, std::move(mask))));
                break;
            }
            case Op::exp:
                accumulate(n.parents[0], mul(a, self));
                break;
            case Op::log:
                accumulate(n.parents[0], div(a, parent(0)));
                break;
            case Op::sqrt:
                accumulate(n.parents[0], scale(div(a, self), 0.5));
                break;
        }
    }

    std::vector<Tensor> out;
    out.reserve(wrt.size());
    for (const Tensor& w : wrt) out.push_back(*adj[static_cast<std::size_t>(w.node())]);
    return out;
}

Tensor finite_difference_gradient(const std::function<double(const Tensor&)>& f, const Tensor& x,
                                  double h) {
    if (h <= 0.0) throw Error("finite_difference_gradient: step must be positive");
    std::vector<double> g(static_cast<std::size_t>(x.size()));
    for (std::int64_t i = 0; i < x.size(); ++i) {
        std::vector<double> plus = x.data();
        std::vector<double> minus = x.data();
        plus[static_cast<std::size_t>(i)] += h;
        minus[static_cast<std::size_t>(i)] -= h;
        double fp = f(Tensor(x.shape(), std::move(plus)));
        double fm = f(Tensor(x.shape(), std::move(minus)));
        g[static_cast<std::size_t>(i)] = (fp - fm) / (2.0 * h);
    }
    return Tensor(x.shape(), std::move(g));
}

}  // namespace fedinv
