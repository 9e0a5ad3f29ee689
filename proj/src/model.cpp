#include "fedinv/model.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "fedinv/rng.hpp"

namespace fedinv {

namespace {

const char* act_name(Activation a) {
    switch (a) {
        case Activation::sigmoid: return "sigmoid";
        case Activation::tanh: return "tanh";
        case Activation::relu: return "relu";
    }
    return "?";
}

Tensor apply_act(Activation a, const Tensor& x) {
    switch (a) {
        case Activation::sigmoid: return sigmoid(x);
        case Activation::tanh: return tanh(x);
        case Activation::relu: return relu(x);
    }
    throw Error("unknown activation");
}

std::uint64_t fnv1a(const std::string& s) {
    std::uint64_t h = 14695981039346656037ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

constexpr char kMagic[8] = {'F', 'I', 'N', 'V', 'P', 'A', 'R', '1'};

void put_u32(std::ostream& os, std::uint32_t v) {
    unsigned char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    os.write(reinterpret_cast<const char*>(b), 4);
}

void put_u64(std::ostream& os, std::uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    os.write(reinterpret_cast<const char*>(b), 8);
}

std::uint32_t get_u32(std::istream& is) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
    return v;
}

std::uint64_t get_u64(std::istream& is) {
    unsigned char b[8];
    is.read(reinterpret_cast<char*>(b), 8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return v;
}

}  // namespace

std::string ModelSpec::signature() const {
    std::ostringstream os;
    os << "in=";
    for (std::size_t i = 0; i < input_shape.size(); ++i) os << (i ? "x" : "") << input_shape[i];
    os << ";classes=" << classes;
    for (const Layer& l : layers) {
        os << ';';
        if (const auto* c = std::get_if<ConvSpec>(&l))
            os << "conv(" << c->out_channels << ',' << c->kernel << ',' << c->stride << ','
               << c->padding << ')';
        else if (const auto* a = std::get_if<ActSpec>(&l))
            os << act_name(a->fn);
        else if (const auto* p = std::get_if<PoolSpec>(&l))
            os << "avgpool(" << p->kernel << ',' << p->stride << ')';
        else if (std::get_if<FlattenSpec>(&l))
            os << "flatten";
        else if (const auto* d = std::get_if<DenseSpec>(&l))
            os << "dense(" << d->out_dim << ')';
        else if (const auto* r = std::get_if<ResBlockSpec>(&l))
            os << "resblock(" << r->kernel << ',' << act_name(r->fn) << ')';
    }
    return os.str();
}

std::int64_t Parameters::count() const {
    std::int64_t n = 0;
    for (const auto& [name, t] : tensors) n += t.size();
    return n;
}

const Tensor& Parameters::at(const std::string& name) const {
    for (const auto& [n, t] : tensors)
        if (n == name) return t;
    throw Error("no parameter named " + name);
}

ModelSpec build_cnn4(const Shape& input_shape, int classes) {
    ModelSpec spec;
    spec.name = "cnn4";
    spec.input_shape = input_shape;
    spec.classes = classes;
    for (int i = 0; i < 4; ++i) {
        spec.layers.push_back(ConvSpec{12, 5, 2, 2});
        spec.layers.push_back(ActSpec{Activation::sigmoid});
    }
    spec.layers.push_back(FlattenSpec{});
    spec.layers.push_back(DenseSpec{classes});
    infer_shapes(spec);
    return spec;
}

ModelSpec build_mlp(const Shape& input_shape, int hidden, int classes) {
    ModelSpec spec;
    spec.name = "mlp";
    spec.input_shape = input_shape;
    spec.classes = classes;
    spec.layers.push_back(FlattenSpec{});
    spec.layers.push_back(DenseSpec{hidden});
    spec.layers.push_back(ActSpec{Activation::sigmoid});
    spec.layers.push_back(DenseSpec{classes});
    infer_shapes(spec);
    return spec;
}

ModelSpec build_rescnn(const Shape& input_shape, int classes) {
    ModelSpec spec;
    spec.name = "rescnn";
    spec.input_shape = input_shape;
    spec.classes = classes;
    spec.layers.push_back(ConvSpec{12, 5, 2, 2});
    spec.layers.push_back(ActSpec{Activation::sigmoid});
    spec.layers.push_back(ResBlockSpec{3, Activation::sigmoid});
    spec.layers.push_back(ConvSpec{12, 5, 2, 2});
    spec.layers.push_back(ActSpec{Activation::sigmoid});
    spec.layers.push_back(ResBlockSpec{3, Activation::sigmoid});
    spec.layers.push_back(PoolSpec{2, 2});
    spec.layers.push_back(FlattenSpec{});
    spec.layers.push_back(DenseSpec{classes});
    infer_shapes(spec);
    return spec;
}

std::vector<Shape> infer_shapes(const ModelSpec& spec) {
    if (spec.input_shape.size() != 3)
        throw ShapeError("model input shape must be CxHxW, got " + shape_str(spec.input_shape));
    if (spec.classes < 2) throw Error("model needs at least 2 classes");
    std::vector<Shape> out;
    Shape cur = spec.input_shape;
    auto conv_dim = [](int in, int k, int s, int p) {
        int span = in + 2 * p - k;
        if (span < 0) throw ShapeError("conv window does not fit input of size " +
                                       std::to_string(in));
        return span / s + 1;
    };
    for (const Layer& l : spec.layers) {
        if (const auto* c = std::get_if<ConvSpec>(&l)) {
            if (cur.size() != 3) throw ShapeError("conv applied to non-spatial tensor");
            cur = {c->out_channels, conv_dim(cur[1], c->kernel, c->stride, c->padding),
                   conv_dim(cur[2], c->kernel, c->stride, c->padding)};
        } else if (std::get_if<ActSpec>(&l)) {
            // shape preserved
        } else if (const auto* p = std::get_if<PoolSpec>(&l)) {
            if (cur.size() != 3) throw ShapeError("pool applied to non-spatial tensor");
            if (cur[1] < p->kernel || cur[2] < p->kernel)
                throw ShapeError("pool window larger than feature map");
            cur = {cur[0], (cur[1] - p->kernel) / p->stride + 1,
                   (cur[2] - p->kernel) / p->stride + 1};
        } else if (std::get_if<FlattenSpec>(&l)) {
            cur = {static_cast<int>(shape_numel(cur))};
        } else if (const auto* d = std::get_if<DenseSpec>(&l)) {
            if (cur.size() != 1) throw ShapeError("dense layer requires a flattened input");
            cur = {d->out_dim};
        } else if (const auto* r = std::get_if<ResBlockSpec>(&l)) {
            if (cur.size() != 3) throw ShapeError("resblock applied to non-spatial tensor");
            if (r->kernel % 2 == 0) throw ShapeError("resblock kernel must be odd");
        }
        out.push_back(cur);
    }
    if (out.empty() || out.back() != Shape{spec.classes})
        throw ShapeError("model does not end in a dense layer of width " +
                         std::to_string(spec.classes));
    return out;
}

namespace {

struct ParamShape {
    std::string name;
    Shape shape;
    std::int64_t fan_in;
};

std::vector<ParamShape> param_layout(const ModelSpec& spec) {
    std::vector<ParamShape> out;
    Shape cur = spec.input_shape;
    std::vector<Shape> shapes = infer_shapes(spec);
    for (std::size_t i = 0; i < spec.layers.size(); ++i) {
        const Layer& l = spec.layers[i];
        std::string tag = "l" + std::to_string(i);
        if (const auto* c = std::get_if<ConvSpec>(&l)) {
            std::int64_t fan = static_cast<std::int64_t>(cur[0]) * c->kernel * c->kernel;
            out.push_back({tag + ".weight", {c->out_channels, cur[0], c->kernel, c->kernel}, fan});
            out.push_back({tag + ".bias", {c->out_channels}, fan});
        } else if (const auto* d = std::get_if<DenseSpec>(&l)) {
            out.push_back({tag + ".weight", {d->out_dim, cur[0]}, cur[0]});
            out.push_back({tag + ".bias", {d->out_dim}, cur[0]});
        } else if (const auto* r = std::get_if<ResBlockSpec>(&l)) {
            std::int64_t fan = static_cast<std::int64_t>(cur[0]) * r->kernel * r->kernel;
            out.push_back({tag + ".conv1.weight", {cur[0], cur[0], r->kernel, r->kernel}, fan});
            out.push_back({tag + ".conv1.bias", {cur[0]}, fan});
            out.push_back({tag + ".conv2.weight", {cur[0], cur[0], r->kernel, r->kernel}, fan});
            out.push_back({tag + ".conv2.bias", {cur[0]}, fan});
        }
        cur = shapes[i];
    }
    return out;
}

}  // namespace

std::int64_t param_count(const ModelSpec& spec) {
    std::int64_t n = 0;
    for (const auto& p : param_layout(spec)) n += shape_numel(p.shape);
    return n;
}

Parameters init_params(const ModelSpec& spec, std::uint64_t seed, InitScheme scheme,
                       double bound) {
    Rng rng(seed);
    Parameters out;
    for (const auto& p : param_layout(spec)) {
        std::vector<double> data(static_cast<std::size_t>(shape_numel(p.shape)));
        bool is_bias = p.name.size() >= 5 && p.name.compare(p.name.size() - 5, 5, ".bias") == 0;
        if (scheme == InitScheme::uniform) {
            for (double& v : data) v = rng.uniform(-bound, bound);
        } else {
            double b = std::sqrt(6.0 / static_cast<double>(p.fan_in));
            if (is_bias) {
                std::fill(data.begin(), data.end(), 0.0);
            } else {
                for (double& v : data) v = rng.uniform(-b, b);
            }
        }
        out.tensors.emplace_back(p.name, Tensor(p.shape, std::move(data)));
    }
    return out;
}

std::vector<Tensor> register_params(Graph& g, const Parameters& params) {
    std::vector<Tensor> out;
    out.reserve(params.tensors.size());
    for (const auto& [name, t] : params.tensors) out.push_back(g.leaf(t));
    return out;
}

Tensor forward(const ModelSpec& spec, const std::vector<Tensor>& params, const Tensor& x) {
    if (x.shape() != spec.input_shape)
        throw ShapeError("forward: input shape " + shape_str(x.shape()) + ", model expects " +
                         shape_str(spec.input_shape));
    auto layout = param_layout(spec);
    if (params.size() != layout.size())
        throw Error("forward: expected " + std::to_string(layout.size()) +
                    " parameter tensors, got " + std::to_string(params.size()));
    for (std::size_t i = 0; i < params.size(); ++i)
        if (params[i].shape() != layout[i].shape)
            throw ShapeError("forward: parameter " + layout[i].name + " has shape " +
                             shape_str(params[i].shape()) + ", expected " +
                             shape_str(layout[i].shape));

    Tensor cur = x;
    std::size_t pi = 0;
    auto conv_apply = [&](const Tensor& in, const Tensor& w, const Tensor& b, int stride,
                          int padding) {
        Tensor y = conv2d(in, w, stride, padding);
        return add(y, bcast_channel(b, y.shape()[1], y.shape()[2]));
    };
    for (const Layer& l : spec.layers) {
        if (const auto* c = std::get_if<ConvSpec>(&l)) {
            cur = conv_apply(cur, params[pi], params[pi + 1], c->stride, c->padding);
            pi += 2;
        } else if (const auto* a = std::get_if<ActSpec>(&l)) {
            cur = apply_act(a->fn, cur);
        } else if (const auto* p = std::get_if<PoolSpec>(&l)) {
            cur = avgpool2d(cur, p->kernel, p->stride);
        } else if (std::get_if<FlattenSpec>(&l)) {
            cur = flatten(cur);
        } else if (std::get_if<DenseSpec>(&l)) {
            Tensor col = reshape(cur, {cur.shape()[0], 1});
            Tensor y = matmul(params[pi], col);
            cur = add(flatten(y), params[pi + 1]);
            pi += 2;
        } else if (const auto* r = std::get_if<ResBlockSpec>(&l)) {
            int padd = r->kernel / 2;
            Tensor h = apply_act(r->fn, conv_apply(cur, params[pi], params[pi + 1], 1, padd));
            Tensor h2 = conv_apply(h, params[pi + 2], params[pi + 3], 1, padd);
            cur = apply_act(r->fn, add(h2, cur));
            pi += 4;
        }
    }
    return cur;
}

Tensor forward_values(const ModelSpec& spec, const Parameters& params, const Tensor& x) {
    Graph g;
    std::vector<Tensor> ps = register_params(g, params);
    return forward(spec, ps, g.leaf(x.detach())).detach();
}

int predict_class(const ModelSpec& spec, const Parameters& params, const Tensor& x) {
    Tensor logits = forward_values(spec, params, x);
    const auto& d = logits.data();
    return static_cast<int>(std::max_element(d.begin(), d.end()) - d.begin());
}

void save_parameters(const std::filesystem::path& path, const ModelSpec& spec,
                     const Parameters& params) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw Error("cannot open " + path.string() + " for writing");
    os.write(kMagic, sizeof kMagic);
    put_u64(os, fnv1a(spec.signature()));
    put_u32(os, static_cast<std::uint32_t>(params.tensors.size()));
    for (const auto& [name, t] : params.tensors) {
        put_u32(os, static_cast<std::uint32_t>(name.size()));
        os.write(name.data(), static_cast<std::streamsize>(name.size()));
        put_u32(os, static_cast<std::uint32_t>(t.shape().size()));
        for (int d : t.shape()) put_u32(os, static_cast<std::uint32_t>(d));
        for (double v : t.data()) {
            std::uint64_t bits;
            std::memcpy(&bits, &v, 8);
            put_u64(os, bits);
        }
    }
    if (!os) throw Error("write failed for " + path.string());
}

Parameters load_parameters(const std::filesystem::path& path, const ModelSpec& spec) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw Error("cannot open " + path.string());
    char magic[8];
    is.read(magic, 8);
    if (!is || std::memcmp(magic, kMagic, 8) != 0)
        throw Error(path.string() + " is not a parameter file");
    std::uint64_t hash = get_u64(is);
    if (hash != fnv1a(spec.signature()))
        throw Error(path.string() + " was saved for a different model architecture");
    std::uint32_t count = get_u32(is);
    Parameters out;
    for (std::uint32_t i = 0; i < count; ++i) {
        std::uint32_t name_len = get_u32(is);
        if (!is || name_len > 4096) throw Error("corrupt parameter file " + path.string());
        std::string name(name_len, '\0');
        is.read(name.data(), name_len);
        std::uint32_t rank = get_u32(is);
        if (!is || rank > 8) throw Error("corrupt parameter file " + path.string());
        Shape shape(rank);
        for (auto& d : shape) d = static_cast<int>(get_u32(is));
        std::vector<double> data(static_cast<std::size_t>(shape_numel(shape)));
        for (double& v : data) {
            std::uint64_t bits = get_u64(is);
            std::memcpy(&v, &bits, 8);
        }
        if (!is) throw Error("truncated parameter file " + path.string());
        out.tensors.emplace_back(std::move(name), Tensor(std::move(shape), std::move(data)));
    }
    auto layout = param_layout(spec);
    if (out.tensors.size() != layout.size())
        throw Error(path.string() + " holds a different number of tensors than the model");
    for (std::size_t i = 0; i < layout.size(); ++i) {
        if (out.tensors[i].first != layout[i].name || out.tensors[i].second.shape() != layout[i].shape)
            throw Error(path.string() + ": tensor " + out.tensors[i].first +
                        " does not match the model layout");
    }
    return out;
}

}  // namespace fedinv
