#include "fedinv/federation.hpp"

#include <algorithm>
#include <numeric>

#include "fedinv/rng.hpp"

namespace fedinv {

std::vector<std::vector<int>> make_even_partitions(int n, int c) {
    if (n < 1 || c < 1 || c > n) throw Error("make_even_partitions: need 1 <= clients <= samples");
    std::vector<std::vector<int>> parts(static_cast<std::size_t>(c));
    int base = n / c, extra = n % c;
    int next = 0;
    for (int k = 0; k < c; ++k) {
        int take = base + (k < extra ? 1 : 0);
        for (int i = 0; i < take; ++i) parts[static_cast<std::size_t>(k)].push_back(next++);
    }
    return parts;
}

namespace {

// single gradient of the mean loss at the given parameter values
std::vector<Tensor> mean_loss_gradient(const ModelSpec& spec, const Parameters& params,
                                       const std::vector<Example>& examples, double* loss_out) {
    Graph g;
    std::vector<Tensor> ps = register_params(g, params);
    Tensor total;
    for (std::size_t i = 0; i < examples.size(); ++i) {
        Tensor x = g.leaf(examples[i].input.detach());
        Tensor logits = forward(spec, ps, x);
        Tensor loss = softmax_cross_entropy(logits, examples[i].label);
        total = i == 0 ? loss : add(total, loss);
    }
    Tensor mean = scale(total, 1.0 / static_cast<double>(examples.size()));
    if (loss_out) *loss_out = mean.scalar();
    std::vector<Tensor> grads = gradient(mean, ps);
    for (Tensor& t : grads) t = t.detach();
    return grads;
}

void check_partitions(const FedConfig& cfg, std::size_t dataset_size) {
    if (cfg.partitions.size() != static_cast<std::size_t>(cfg.clients))
        throw Error("federation: " + std::to_string(cfg.partitions.size()) +
                    " partitions for " + std::to_string(cfg.clients) + " clients");
    std::vector<char> seen(dataset_size, 0);
    for (const auto& part : cfg.partitions) {
        if (part.empty()) throw Error("federation: a client has an empty partition");
        for (int idx : part) {
            if (idx < 0 || static_cast<std::size_t>(idx) >= dataset_size)
                throw Error("federation: partition index out of range");
            if (seen[static_cast<std::size_t>(idx)]++)
                throw Error("federation: partitions overlap at index " + std::to_string(idx));
        }
    }
    for (std::size_t i = 0; i < dataset_size; ++i)
        if (!seen[i]) throw Error("federation: partitions do not cover the dataset");
}

}  // namespace

ClientUpdate client_update(const ModelSpec& spec, const Parameters& params,
                           const std::vector<Example>& examples, int client_id, int round,
                           int local_epochs, double learning_rate, double* mean_loss_out) {
    if (examples.empty()) throw Error("client_update: client has no examples");
    if (local_epochs < 1) throw Error("client_update: local_epochs must be >= 1");

    ClientUpdate out;
    out.client_id = client_id;
    out.round = round;
    out.sample_count = static_cast<int>(examples.size());

    if (local_epochs == 1) {
        out.gradients = mean_loss_gradient(spec, params, examples, mean_loss_out);
        return out;
    }

    // E > 1: run E local steps and transmit the summed displacement / lr,
    // i.e. the sum of the per-step gradients.
    Parameters local = params;
    std::vector<Tensor> acc;
    for (int e = 0; e < local_epochs; ++e) {
        double loss = 0.0;
        std::vector<Tensor> g = mean_loss_gradient(spec, local, examples,
                                                   e == 0 ? mean_loss_out : &loss);
        if (acc.empty()) {
            acc = g;
        } else {
            for (std::size_t i = 0; i < acc.size(); ++i) acc[i] = add(acc[i], g[i]).detach();
        }
        for (std::size_t i = 0; i < local.tensors.size(); ++i)
            local.tensors[i].second =
                sub(local.tensors[i].second, scale(g[i], learning_rate)).detach();
    }
    out.gradients = std::move(acc);
    return out;
}

Parameters server_aggregate(const ModelSpec& spec, const Parameters& params,
                            const std::vector<ClientUpdate>& updates, double learning_rate) {
    if (updates.empty()) throw Error("server_aggregate: no updates to aggregate");
    std::int64_t total = 0;
    for (const ClientUpdate& u : updates) {
        if (u.sample_count < 1) throw Error("server_aggregate: update with no samples");
        if (u.gradients.size() != params.tensors.size())
            throw Error("server_aggregate: update tensor count mismatch");
        total += u.sample_count;
    }
    (void)spec;
    Parameters next = params;
    for (std::size_t i = 0; i < next.tensors.size(); ++i) {
        Tensor acc;
        for (const ClientUpdate& u : updates) {
            double wk = static_cast<double>(u.sample_count) / static_cast<double>(total);
            Tensor term = smul(u.gradients[i], Tensor::scalar_value(wk));
            acc = acc.defined() ? add(acc, term) : term;
        }
        next.tensors[i].second =
            sub(next.tensors[i].second, scale(acc, learning_rate)).detach();
    }
    return next;
}

Parameters run_rounds(const ModelSpec& spec, Parameters params, const FedConfig& config,
                      const std::vector<Example>& dataset, std::vector<RoundRecord>* log,
                      const InterceptHook& hook, const UpdateTransform& transform) {
    if (config.clients_per_round < 1 || config.clients_per_round > config.clients)
        throw Error("federation: clients_per_round must be in [1, clients]");
    if (config.rounds < 0) throw Error("federation: negative round count");
    check_partitions(config, dataset.size());

    Rng rng(mix_seed(config.seed, 0x66656473ULL));
    for (int round = 0; round < config.rounds; ++round) {
        // sample without replacement, then visit in ascending client id
        std::vector<int> ids(static_cast<std::size_t>(config.clients));
        std::iota(ids.begin(), ids.end(), 0);
        for (int j = 0; j < config.clients_per_round; ++j) {
            std::size_t pick = static_cast<std::size_t>(j) +
                               static_cast<std::size_t>(rng.below(
                                   static_cast<std::uint64_t>(config.clients - j)));
            std::swap(ids[static_cast<std::size_t>(j)], ids[pick]);
        }
        ids.resize(static_cast<std::size_t>(config.clients_per_round));
        std::sort(ids.begin(), ids.end());

        std::vector<ClientUpdate> updates;
        double loss_acc = 0.0;
        for (int id : ids) {
            std::vector<Example> local;
            for (int idx : config.partitions[static_cast<std::size_t>(id)])
                local.push_back(dataset[static_cast<std::size_t>(idx)]);
            double loss = 0.0;
            ClientUpdate u = client_update(spec, params, local, id, round, config.local_epochs,
                                           config.learning_rate, &loss);
            loss_acc += loss;
            if (transform) u = transform(u);
            if (hook) hook(u);
            updates.push_back(std::move(u));
        }
        params = server_aggregate(spec, params, updates, config.learning_rate);

        if (log) {
            RoundRecord rec;
            rec.round = round;
            rec.mean_loss = loss_acc / static_cast<double>(ids.size());
            rec.client_ids = ids;
            log->push_back(std::move(rec));
        }
    }
    return params;
}

}  // namespace fedinv
