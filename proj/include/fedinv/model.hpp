#ifndef FEDINV_MODEL_HPP
#define FEDINV_MODEL_HPP

#include <cstdint>
#include <filesystem>
#include <string>
#include <variant>
#include <vector>

#include "fedinv/tensor.hpp"

namespace fedinv {

enum class Activation { sigmoid, tanh, relu };

struct ConvSpec {
    int out_channels;
    int kernel;
    int stride;
    int padding;
};

struct ActSpec {
    Activation fn;
};

struct PoolSpec {
    int kernel;
    int stride;
};

struct FlattenSpec {};

struct DenseSpec {
    int out_dim;
};

/// Two channel-preserving kxk stride-1 convolutions with a skip connection:
/// out = act(conv2(act(conv1(x))) + x).
struct ResBlockSpec {
    int kernel;
    Activation fn;
};

using Layer = std::variant<ConvSpec, ActSpec, PoolSpec, FlattenSpec, DenseSpec, ResBlockSpec>;

struct ModelSpec {
    std::string name;
    Shape input_shape;  // {C,H,W}
    int classes = 0;
    std::vector<Layer> layers;

    /// Canonical description string; hashed into the serialization header.
    std::string signature() const;
};

/// Named parameter tensors in forward-pass order.
struct Parameters {
    std::vector<std::pair<std::string, Tensor>> tensors;

    std::int64_t count() const;
    const Tensor& at(const std::string& name) const;
};

enum class InitScheme { uniform, kaiming };

/// The 4-block strided CNN used as the main attack target: four 5x5 stride-2
/// pad-2 sigmoid conv blocks of 12 channels, then one fully connected layer.
ModelSpec build_cnn4(const Shape& input_shape, int classes);

/// flatten -> dense(hidden) -> sigmoid -> dense(classes).
ModelSpec build_mlp(const Shape& input_shape, int hidden, int classes);

/// Strided conv stem with two residual blocks and average pooling; the
/// deeper stand-in target.
ModelSpec build_rescnn(const Shape& input_shape, int classes);

/// Validates layer geometry and returns the shape after each layer (final
/// entry is {classes}).
std::vector<Shape> infer_shapes(const ModelSpec& spec);

std::int64_t param_count(const ModelSpec& spec);

/// Seeded parameter draw. uniform fills every tensor from U(-bound, bound);
/// kaiming uses per-layer U(-sqrt(6/fan_in), +sqrt(6/fan_in)) with zero
/// biases.
Parameters init_params(const ModelSpec& spec, std::uint64_t seed,
                       InitScheme scheme = InitScheme::uniform, double bound = 0.5);

/// Registers parameter tensors as leaves of g, in Parameters order.
std::vector<Tensor> register_params(Graph& g, const Parameters& params);

/// Runs the model on a single CxHxW input. Parameter tensors must be in
/// Parameters order; any that are not already on a graph join the input's
/// graph as constants.
Tensor forward(const ModelSpec& spec, const std::vector<Tensor>& params, const Tensor& x);

/// Convenience: forward pass on plain values, no graph required.
Tensor forward_values(const ModelSpec& spec, const Parameters& params, const Tensor& x);

int predict_class(const ModelSpec& spec, const Parameters& params, const Tensor& x);

/// Binary round-trip of a parameter set. The header carries a magic tag and
/// a hash of the model signature; loading with a mismatched spec is an
/// error. Data is a little-endian f64 stream, so files are byte-stable for
/// identical parameters.
void save_parameters(const std::filesystem::path& path, const ModelSpec& spec,
                     const Parameters& params);
Parameters load_parameters(const std::filesystem::path& path, const ModelSpec& spec);

}  // namespace fedinv

#endif
