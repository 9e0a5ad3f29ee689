#include "fedinv/defense.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "fedinv/rng.hpp"

namespace fedinv {

const char* mechanism_name(Mechanism m) {
    switch (m) {
        case Mechanism::none: return "none";
        case Mechanism::laplace: return "laplace";
        case Mechanism::gaussian: return "gaussian";
        case Mechanism::compress: return "compress";
    }
    return "?";
}

Mechanism mechanism_from_name(const std::string& name) {
    if (name == "none") return Mechanism::none;
    if (name == "laplace") return Mechanism::laplace;
    if (name == "gaussian") return Mechanism::gaussian;
    if (name == "compress") return Mechanism::compress;
    throw Error("unknown defense mechanism: " + name);
}

ClientUpdate perturb(const ClientUpdate& update, const DefenseConfig& config) {
    if (config.mechanism == Mechanism::compress)
        return compress_update(update, config.keep_ratio);
    if (config.mechanism == Mechanism::none || config.noise_level == 0.0) return update;
    if (config.noise_level < 0.0) throw Error("perturb: negative noise level");
    if (config.base_unit <= 0.0) throw Error("perturb: base unit must be positive");

    double b = config.noise_level * config.base_unit;
    Rng rng(mix_seed(mix_seed(config.seed, static_cast<std::uint64_t>(update.client_id)),
                     static_cast<std::uint64_t>(update.round)));
    ClientUpdate out = update;
    for (Tensor& t : out.gradients) {
        std::vector<double> d = t.data();
        if (config.mechanism == Mechanism::laplace) {
            for (double& v : d) v += rng.laplace(b);
        } else {
            for (double& v : d) v += rng.normal(0.0, b);
        }
        t = Tensor(t.shape(), std::move(d));
    }
    return out;
}

ClientUpdate compress_update(const ClientUpdate& update, double keep_ratio) {
    if (!(keep_ratio > 0.0) || keep_ratio > 1.0)
        throw Error("compress_update: keep_ratio must be in (0, 1]");
    ClientUpdate out = update;
    for (Tensor& t : out.gradients) {
        std::size_t d = t.data().size();
        std::size_t keep = static_cast<std::size_t>(
            std::ceil(keep_ratio * static_cast<double>(d)));
        if (keep >= d) continue;
        std::vector<std::size_t> order(d);
        std::iota(order.begin(), order.end(), 0);
        const std::vector<double>& v = t.data();
        auto by_magnitude = [&v](std::size_t a, std::size_t b) {
            double ma = std::fabs(v[a]), mb = std::fabs(v[b]);
            if (ma != mb) return ma > mb;
            return a < b;
        };
        std::nth_element(order.begin(),
                         order.begin() + static_cast<std::ptrdiff_t>(keep) - 1, order.end(),
                         by_magnitude);
        std::vector<double> kept(d, 0.0);
        for (std::size_t i = 0; i < keep; ++i) kept[order[i]] = v[order[i]];
        t = Tensor(t.shape(), std::move(kept));
    }
    return out;
}

}  // namespace fedinv
