#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "fedinv/defense.hpp"
#include "fedinv/rng.hpp"
#include "fedinv/tensor.hpp"

using namespace fedinv;

namespace {

ClientUpdate make_update(std::vector<Tensor> grads, int client = 0, int round = 0) {
    ClientUpdate u;
    u.client_id = client;
    u.round = round;
    u.sample_count = 1;
    u.gradients = std::move(grads);
    return u;
}

bool same_values(const ClientUpdate& a, const ClientUpdate& b) {
    if (a.gradients.size() != b.gradients.size()) return false;
    for (std::size_t i = 0; i < a.gradients.size(); ++i)
        for (std::int64_t j = 0; j < a.gradients[i].size(); ++j)
            if (a.gradients[i][j] != b.gradients[i][j]) return false;
    return true;
}

}  // namespace

TEST_SUITE("defense") {

TEST_CASE("mechanism names round-trip") {
    for (Mechanism m :
         {Mechanism::none, Mechanism::laplace, Mechanism::gaussian, Mechanism::compress})
        CHECK(mechanism_from_name(mechanism_name(m)) == m);
    CHECK_THROWS_AS(mechanism_from_name("dropout"), Error);
}

TEST_CASE("level zero and mechanism none are bit-exact no-ops") {
    ClientUpdate u = make_update({Tensor({3}, {0.25, -1.5, 3.0}), Tensor({2}, {7.0, 0.0})});
    DefenseConfig cfg;
    cfg.mechanism = Mechanism::laplace;
    cfg.noise_level = 0.0;
    CHECK(same_values(perturb(u, cfg), u));
    cfg.mechanism = Mechanism::none;
    cfg.noise_level = 250.0;
    CHECK(same_values(perturb(u, cfg), u));
}

TEST_CASE("bad noise configuration is rejected") {
    ClientUpdate u = make_update({Tensor({2}, {1.0, 2.0})});
    DefenseConfig cfg;
    cfg.mechanism = Mechanism::laplace;
    cfg.noise_level = -1.0;
    CHECK_THROWS_AS(perturb(u, cfg), Error);
    cfg.noise_level = 10.0;
    cfg.base_unit = 0.0;
    CHECK_THROWS_AS(perturb(u, cfg), Error);
}

TEST_CASE("noise is one deterministic stream across the update's tensors") {
    ClientUpdate u = make_update({Tensor({3}, {1.0, 2.0, 3.0}), Tensor({2}, {4.0, 5.0})}, 6, 2);
    DefenseConfig cfg;
    cfg.mechanism = Mechanism::laplace;
    cfg.noise_level = 100.0;
    cfg.base_unit = 1e-3;
    cfg.seed = 41;

    ClientUpdate out1 = perturb(u, cfg);
    ClientUpdate out2 = perturb(u, cfg);
    CHECK(same_values(out1, out2));
    CHECK_FALSE(same_values(out1, u));

    // reproduce the stream: seed mixed with client then round, draws in order
    Rng rng(mix_seed(mix_seed(cfg.seed, 6), 2));
    double b = cfg.noise_level * cfg.base_unit;
    for (std::int64_t j = 0; j < 3; ++j)
        CHECK(out1.gradients[0][j] == u.gradients[0][j] + rng.laplace(b));
    for (std::int64_t j = 0; j < 2; ++j)
        CHECK(out1.gradients[1][j] == u.gradients[1][j] + rng.laplace(b));
}

TEST_CASE("different clients, rounds and seeds get independent noise") {
    Tensor g({4}, {0.0, 0.0, 0.0, 0.0});
    DefenseConfig cfg;
    cfg.mechanism = Mechanism::gaussian;
    cfg.noise_level = 50.0;
    cfg.seed = 7;

    ClientUpdate base = perturb(make_update({g}, 0, 0), cfg);
    CHECK_FALSE(same_values(base, perturb(make_update({g}, 1, 0), cfg)));
    CHECK_FALSE(same_values(base, perturb(make_update({g}, 0, 1), cfg)));
    DefenseConfig other = cfg;
    other.seed = 8;
    CHECK_FALSE(same_values(base, perturb(make_update({g}, 0, 0), other)));
}

TEST_CASE("laplace noise has the advertised moments") {
    const int n = 200000;
    DefenseConfig cfg;
    cfg.mechanism = Mechanism::laplace;
    cfg.noise_level = 500.0;
    cfg.base_unit = 1e-4;  // b = 0.05
    cfg.seed = 123;
    double b = 0.05;

    ClientUpdate u = make_update({Tensor::zeros({n})});
    ClientUpdate out = perturb(u, cfg);
    double mean = 0.0;
    for (std::int64_t i = 0; i < n; ++i) mean += out.gradients[0][i];
    mean /= n;
    double var = 0.0;
    int below_median = 0;
    for (std::int64_t i = 0; i < n; ++i) {
        double d = out.gradients[0][i] - mean;
        var += d * d;
        if (std::fabs(out.gradients[0][i]) <= b * std::log(2.0)) ++below_median;
    }
    var /= n;

    CHECK(std::fabs(mean) <= 4.0 * b * std::sqrt(2.0) / std::sqrt(static_cast<double>(n)));
    CHECK(std::fabs(var - 2.0 * b * b) <= 0.05 * 2.0 * b * b);
    CHECK(std::fabs(below_median / static_cast<double>(n) - 0.5) <= 0.01);
}

TEST_CASE("gaussian noise has the advertised variance") {
    const int n = 200000;
    DefenseConfig cfg;
    cfg.mechanism = Mechanism::gaussian;
    cfg.noise_level = 200.0;
    cfg.base_unit = 1e-3;  // b = 0.2
    cfg.seed = 321;
    double b = 0.2;

    ClientUpdate out = perturb(make_update({Tensor::zeros({n})}), cfg);
    double mean = 0.0;
    for (std::int64_t i = 0; i < n; ++i) mean += out.gradients[0][i];
    mean /= n;
    double var = 0.0;
    for (std::int64_t i = 0; i < n; ++i) {
        double d = out.gradients[0][i] - mean;
        var += d * d;
    }
    var /= n;
    CHECK(std::fabs(mean) <= 4.0 * b / std::sqrt(static_cast<double>(n)));
    CHECK(std::fabs(var - b * b) <= 0.05 * b * b);
}

TEST_CASE("compression keeps the largest magnitudes") {
    ClientUpdate u = make_update({Tensor({4}, {3.0, -4.0, 1.0, 2.0})});
    ClientUpdate half = compress_update(u, 0.5);
    CHECK(half.gradients[0][0] == 3.0);
    CHECK(half.gradients[0][1] == -4.0);
    CHECK(half.gradients[0][2] == 0.0);
    CHECK(half.gradients[0][3] == 0.0);

    ClientUpdate quarter = compress_update(u, 0.25);
    CHECK(quarter.gradients[0][0] == 0.0);
    CHECK(quarter.gradients[0][1] == -4.0);

    CHECK(same_values(compress_update(u, 1.0), u));
    CHECK_THROWS_AS(compress_update(u, 0.0), Error);
    CHECK_THROWS_AS(compress_update(u, -0.5), Error);
    CHECK_THROWS_AS(compress_update(u, 1.5), Error);
}

TEST_CASE("compression ties break toward lower indices") {
    ClientUpdate u = make_update({Tensor({4}, {1.0, -1.0, 1.0, -1.0})});
    ClientUpdate out = compress_update(u, 0.5);
    CHECK(out.gradients[0][0] == 1.0);
    CHECK(out.gradients[0][1] == -1.0);
    CHECK(out.gradients[0][2] == 0.0);
    CHECK(out.gradients[0][3] == 0.0);
}

TEST_CASE("compression agrees with a full-sort oracle") {
    Rng rng(55);
    std::vector<double> v(37);
    for (double& x : v) x = rng.uniform(-2.0, 2.0);
    ClientUpdate u = make_update({Tensor({37}, v)});
    double ratio = 0.3;
    ClientUpdate out = compress_update(u, ratio);

    std::size_t keep = static_cast<std::size_t>(std::ceil(ratio * 37.0));
    std::vector<std::size_t> order(37);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (std::fabs(v[a]) != std::fabs(v[b])) return std::fabs(v[a]) > std::fabs(v[b]);
        return a < b;
    });
    std::vector<double> want(37, 0.0);
    for (std::size_t i = 0; i < keep; ++i) want[order[i]] = v[order[i]];
    for (std::size_t i = 0; i < 37; ++i) CHECK(out.gradients[0][i] == want[i]);
}

TEST_CASE("perturb routes the compress mechanism") {
    ClientUpdate u = make_update({Tensor({4}, {3.0, -4.0, 1.0, 2.0})});
    DefenseConfig cfg;
    cfg.mechanism = Mechanism::compress;
    cfg.keep_ratio = 0.5;
    CHECK(same_values(perturb(u, cfg), compress_update(u, 0.5)));
}

TEST_CASE("perturbed updates keep their identity fields") {
    ClientUpdate u = make_update({Tensor({2}, {1.0, 2.0})}, 9, 4);
    u.sample_count = 13;
    DefenseConfig cfg;
    cfg.mechanism = Mechanism::laplace;
    cfg.noise_level = 10.0;
    ClientUpdate out = perturb(u, cfg);
    CHECK(out.client_id == 9);
    CHECK(out.round == 4);
    CHECK(out.sample_count == 13);
    CHECK(out.gradients[0].shape() == Shape{2});
}

}  // TEST_SUITE
