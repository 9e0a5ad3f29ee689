#ifndef FEDINV_TENSOR_HPP
#define FEDINV_TENSOR_HPP

#include <cstdint>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

namespace fedinv {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
public:
    using Error::Error;
};

class NonFiniteError : public Error {
public:
    using Error::Error;
};

/// Dimensions of a tensor; an empty shape denotes a rank-0 scalar.
using Shape = std::vector<int>;

std::int64_t shape_numel(const Shape& s);
std::string shape_str(const Shape& s);

class Graph;
enum class Op : std::uint8_t;

/// Dense row-major f64 tensor. Data is immutable and shared between copies.
/// A tensor may additionally carry a handle into the Graph that produced it;
/// such a tensor must not outlive its graph.
class Tensor {
public:
    Tensor() = default;
    Tensor(Shape shape, std::vector<double> data);

    static Tensor full(const Shape& shape, double value);
    static Tensor zeros(const Shape& shape);
    static Tensor scalar_value(double v);

    const Shape& shape() const { return shape_; }
    std::int64_t size() const { return data_ ? static_cast<std::int64_t>(data_->size()) : 0; }
    const std::vector<double>& data() const;
    double operator[](std::int64_t i) const { return data()[static_cast<std::size_t>(i)]; }

    /// Value of a single-element tensor.
    double scalar() const;

    bool defined() const { return data_ != nullptr; }
    bool on_graph() const { return graph_ != nullptr; }
    Graph* graph() const { return graph_; }
    int node() const { return node_; }

    /// Same values, no graph handle.
    Tensor detach() const;

private:
    friend class Graph;
    friend Tensor record_op(Op, const std::vector<const Tensor*>&, std::vector<std::int64_t>,
                            std::vector<double>);
    Tensor(Shape shape, std::shared_ptr<const std::vector<double>> data, Graph* g, int node)
        : shape_(std::move(shape)), data_(std::move(data)), graph_(g), node_(node) {}

    Shape shape_;
    std::shared_ptr<const std::vector<double>> data_;
    Graph* graph_ = nullptr;
    int node_ = -1;
};

enum class Op : std::uint8_t {
    leaf,
    add,
    sub,
    mul,
    div,
    smul,        // tensor * scalar-tensor
    scale,       // tensor * constant
    add_scalar,  // tensor + constant
    matmul,
    transpose,
    reshape,
    sum,
    slice,
    pad,
    im2col,
    col2im,
    avgpool,
    avgunpool,
    bcast_channel,
    channel_sum,
    sigmoid,
    tanh,
    relu,
    exp,
    log,
    sqrt,
};

/// Append-only tape of tensor operations. Nodes are stored in topological
/// order; parents always precede children. One graph is confined to one
/// logical thread.
class Graph {
public:
    Graph() = default;
    Graph(const Graph&) = delete;
    Graph& operator=(const Graph&) = delete;

    /// Registers a leaf holding the given values.
    Tensor leaf(const Tensor& value);
    Tensor leaf(Shape shape, std::vector<double> data);

    std::size_t node_count() const { return nodes_.size(); }
    bool recording() const { return recording_; }

    /// Recomputes every non-leaf node from its parents and checks the result
    /// is bit-identical to the cached forward value.
    bool replay_matches() const;

private:
    struct Node {
        Op op;
        Shape shape;
        std::shared_ptr<const std::vector<double>> value;
        std::vector<int> parents;
        std::vector<std::int64_t> iattr;
        std::vector<double> dattr;
    };

    Tensor wrap(int node) const;
    int append(Op op, Shape shape, std::shared_ptr<const std::vector<double>> value,
               std::vector<int> parents, std::vector<std::int64_t> iattr,
               std::vector<double> dattr);

    std::vector<Node> nodes_;
    bool recording_ = true;

    friend Tensor record_op(Op, const std::vector<const Tensor*>&, std::vector<std::int64_t>,
                            std::vector<double>);
    friend std::vector<Tensor> gradient(const Tensor&, const std::vector<Tensor>&, bool);
    friend class RecordingGuard;
};

// Elementwise and structural primitives. Each records a node when at least
// one operand lives on a recording graph; otherwise it is a plain value
// computation. Every backward rule is expressed with these same primitives,
// so gradients of gradients are available for all twice-differentiable ops.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor smul(const Tensor& a, const Tensor& s);  // s is rank-0/size-1
Tensor scale(const Tensor& a, double c);
Tensor add_scalar(const Tensor& a, double c);
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
Tensor reshape(const Tensor& a, const Shape& shape);
Tensor flatten(const Tensor& a);
Tensor sum(const Tensor& a);
Tensor slice(const Tensor& a, const std::vector<int>& starts, const std::vector<int>& sizes);
Tensor pad(const Tensor& a, const std::vector<int>& starts, const Shape& full);
Tensor im2col(const Tensor& x, int kh, int kw, int stride, int padding);
Tensor col2im(const Tensor& cols, int channels, int height, int width, int kh, int kw, int stride,
              int padding);
Tensor avgpool2d(const Tensor& x, int k, int stride);
Tensor avgunpool2d(const Tensor& g, int k, int stride, int height, int width);
Tensor bcast_channel(const Tensor& bias, int height, int width);
Tensor channel_sum(const Tensor& x);
Tensor sigmoid(const Tensor& a);
Tensor tanh(const Tensor& a);
Tensor relu(const Tensor& a);
Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);
Tensor sqrt(const Tensor& a);

/// 2-d convolution of a CxHxW input with an OxCxKhxKw kernel, built from
/// im2col + matmul so the whole chain stays differentiable to any order.
/// Output spatial dims follow floor((in + 2p - k)/s) + 1.
Tensor conv2d(const Tensor& x, const Tensor& kernel, int stride, int padding);

/// -sum_i y_i log softmax(z)_i for logits z and a label vector y (one-hot or
/// soft). Twice differentiable in both arguments.
Tensor softmax_cross_entropy(const Tensor& logits, const Tensor& label);
Tensor softmax_cross_entropy(const Tensor& logits, int label);

/// Softmax over a rank-1 tensor (max-shifted, simplex output).
Tensor softmax(const Tensor& z);

/// One-hot vector of length k.
Tensor one_hot(int label, int k);

/// Reverse-mode gradient of a scalar output with respect to each tensor in
/// wrt. With create_graph the returned tensors carry graph handles so a
/// further gradient() call through them is valid. A wrt tensor that is not on
/// the output's graph, or does not influence the output, is an error.
std::vector<Tensor> gradient(const Tensor& output, const std::vector<Tensor>& wrt,
                             bool create_graph = false);

/// Central-difference gradient (f(x+h e_i) - f(x-h e_i)) / 2h; the test
/// oracle for gradient(). Evaluates the closure only, never the tape.
Tensor finite_difference_gradient(const std::function<double(const Tensor&)>& f, const Tensor& x,
                                  double h);

}  // namespace fedinv

#endif
