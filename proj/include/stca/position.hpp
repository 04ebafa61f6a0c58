#pragma once

#include "stca/types.hpp"

#include <array>
#include <vector>

namespace stca {

// Pairwise box geometry in log space, invariant to uniform scaling and
// translation of both boxes:
//   r = < log(max(|cx_i-cx_j|/w_j, eps)), log(max(|cy_i-cy_j|/h_j, eps)),
//         log(w_i/w_j), log(h_i/h_j) >
struct GeomRelation {
    std::array<double, 4> r{};
};

struct SpatialEmbedding {
    std::vector<double> phi; // length 4*d_phi, entries in [-1, 1]
};

struct TemporalEmbedding {
    std::vector<double> phi; // length d_v, entries in [-1, 1]
};

// entry 2z   = sin(r / base^(2z/dim))
// entry 2z+1 = cos(r / base^(2z/dim))
std::vector<double> sinusoid_embed(double r, int dim, double base);

GeomRelation geometric_relation(const BoundingBox& p_i, const BoundingBox& p_j,
                                double eps_geom);

// per-entry sinusoid embeddings of r, concatenated in entry order
SpatialEmbedding spatial_embed(const GeomRelation& rel, int d_phi, double base);

// tau is the signed frame-index difference, candidate minus target
TemporalEmbedding temporal_embed(long long tau, int d_v, double base);

} // namespace stca
