#ifndef FEDINV_DEFENSE_HPP
#define FEDINV_DEFENSE_HPP

#include <cstdint>

#include "fedinv/federation.hpp"

namespace fedinv {

enum class Mechanism { none, laplace, gaussian, compress };

const char* mechanism_name(Mechanism m);
Mechanism mechanism_from_name(const std::string& name);

struct DefenseConfig {
    Mechanism mechanism = Mechanism::none;
    /// Dimensionless noise level N; the additive mechanisms draw with scale
    /// b = N * base_unit.
    double noise_level = 0.0;
    double base_unit = 1e-4;
    /// compress: fraction of entries kept (by absolute magnitude).
    double keep_ratio = 1.0;
    std::uint64_t seed = 0;
};

/// Applies the configured mechanism to every gradient tensor of the update.
/// Level 0 (or mechanism none) returns the update bit-for-bit unchanged.
/// Draws come from a stream seeded by (seed, client_id, round), one stream
/// across all tensors in order.
ClientUpdate perturb(const ClientUpdate& update, const DefenseConfig& config);

/// Keeps the ceil(keep_ratio * d) entries of largest |value| per tensor and
/// zeroes the rest. Ties at the threshold are broken toward lower flat
/// indices. keep_ratio outside (0, 1] is an error.
ClientUpdate compress_update(const ClientUpdate& update, double keep_ratio);

}  // namespace fedinv

#endif
