#pragma once

#include "stca/dataset.hpp"

namespace stca {

// Synthetic videos whose per-frame features cannot separate the object
// classes: every object proposal draws from one shared cluster. The class
// is recoverable only through context:
//   - a beacon proposal with a class-specific feature cluster appears in
//     every other frame (cross-frame cue),
//   - a context proposal sits at a class-specific offset from the object
//     formation (geometric cue).
// Per frame: n_proposals - 2 objects, one context, one beacon-or-filler.
// Deterministic per seed, byte-identical serialization.
Dataset generate_synthetic(const StcaConfig& config, const GeneratorConfig& gen,
                           std::uint64_t seed);

} // namespace stca
