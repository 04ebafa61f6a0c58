#include "stca/position.hpp"

#include <cmath>
#include <stdexcept>

namespace stca {

std::vector<double> sinusoid_embed(double r, int dim, double base) {
    if (dim <= 0 || dim % 2 != 0) {
        throw std::invalid_argument("sinusoid_embed: dim must be a positive even integer");
    }
    if (!(base > 0.0)) {
        throw std::invalid_argument("sinusoid_embed: base must be > 0");
    }
    std::vector<double> out(static_cast<std::size_t>(dim));
    for (int z = 0; z < dim / 2; ++z) {
        const double wavelength = std::pow(base, static_cast<double>(2 * z) / dim);
        const double arg = r / wavelength;
        out[static_cast<std::size_t>(2 * z)] = std::sin(arg);
        out[static_cast<std::size_t>(2 * z + 1)] = std::cos(arg);
    }
    return out;
}

GeomRelation geometric_relation(const BoundingBox& p_i, const BoundingBox& p_j,
                                double eps_geom) {
    if (p_i.w <= 0.0 || p_i.h <= 0.0 || p_j.w <= 0.0 || p_j.h <= 0.0) {
        throw std::invalid_argument("geometric_relation: boxes need positive extents");
    }
    GeomRelation rel;
    rel.r[0] = std::log(std::max(std::fabs(p_i.cx - p_j.cx) / p_j.w, eps_geom));
    rel.r[1] = std::log(std::max(std::fabs(p_i.cy - p_j.cy) / p_j.h, eps_geom));
    rel.r[2] = std::log(p_i.w / p_j.w);
    rel.r[3] = std::log(p_i.h / p_j.h);
    return rel;
}

SpatialEmbedding spatial_embed(const GeomRelation& rel, int d_phi, double base) {
    SpatialEmbedding emb;
    emb.phi.reserve(static_cast<std::size_t>(4 * d_phi));
    for (double r : rel.r) {
        const auto part = sinusoid_embed(r, d_phi, base);
        emb.phi.insert(emb.phi.end(), part.begin(), part.end());
    }
    return emb;
}

TemporalEmbedding temporal_embed(long long tau, int d_v, double base) {
    return {sinusoid_embed(static_cast<double>(tau), d_v, base)};
}

} // namespace stca
