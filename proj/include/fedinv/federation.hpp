#ifndef FEDINV_FEDERATION_HPP
#define FEDINV_FEDERATION_HPP

#include <cstdint>
#include <functional>
#include <vector>

#include "fedinv/data.hpp"
#include "fedinv/model.hpp"

namespace fedinv {

/// One training example, already preprocessed (resized + normalized).
struct Example {
    Tensor input;
    int label = 0;
};

struct FedConfig {
    int clients = 1;
    int clients_per_round = 1;
    double learning_rate = 0.1;
    int rounds = 1;
    /// Local gradient steps per round. 1 is the plain FedSGD transmission of
    /// a single gradient; E > 1 sends the summed displacement divided by the
    /// learning rate (an extension, off by default).
    int local_epochs = 1;
    std::uint64_t seed = 0;
    /// partitions[k] holds the dataset indices owned by client k. Must be
    /// disjoint and cover the dataset.
    std::vector<std::vector<int>> partitions;
};

/// What a client transmits: per-parameter gradient tensors plus its sample
/// count for the weighted average.
struct ClientUpdate {
    int client_id = 0;
    int round = 0;
    std::vector<Tensor> gradients;
    int sample_count = 0;
};

/// Observer for transmitted updates (the attacker's interception point).
using InterceptHook = std::function<void(const ClientUpdate&)>;

/// In-flight transform applied to every update before the server sees it
/// (the defense's insertion point).
using UpdateTransform = std::function<ClientUpdate(const ClientUpdate&)>;

struct RoundRecord {
    int round = 0;
    double mean_loss = 0.0;
    std::vector<int> client_ids;  // participating, ascending
};

/// Balanced contiguous split of n samples across c clients (first n % c
/// clients get one extra).
std::vector<std::vector<int>> make_even_partitions(int n, int c);

/// Gradient of the mean cross-entropy loss over the client's examples at the
/// given parameters. mean_loss_out, when non-null, receives the loss value.
ClientUpdate client_update(const ModelSpec& spec, const Parameters& params,
                           const std::vector<Example>& examples, int client_id = 0, int round = 0,
                           int local_epochs = 1, double learning_rate = 0.1,
                           double* mean_loss_out = nullptr);

/// omega - lr * sum_k (n_k / n) g_k. Empty update list is an error.
Parameters server_aggregate(const ModelSpec& spec, const Parameters& params,
                            const std::vector<ClientUpdate>& updates, double learning_rate);

/// Runs the synchronous rounds loop: sample clients, collect updates, apply
/// the transform, notify the hook, aggregate. Returns the final parameters
/// and fills the per-round log.
Parameters run_rounds(const ModelSpec& spec, Parameters params, const FedConfig& config,
                      const std::vector<Example>& dataset, std::vector<RoundRecord>* log = nullptr,
                      const InterceptHook& hook = {}, const UpdateTransform& transform = {});

}  // namespace fedinv

#endif
