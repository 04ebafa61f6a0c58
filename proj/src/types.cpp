#include "stca/types.hpp"

#include "stca/rng.hpp"

#include <cmath>

namespace stca {

const char* to_string(Variant v) {
    switch (v) {
        case Variant::semantic: return "semantic";
        case Variant::spatial: return "spatial";
        case Variant::full: return "full";
    }
    return "full";
}

Variant variant_from_string(const std::string& s) {
    if (s == "semantic") return Variant::semantic;
    if (s == "spatial" || s == "+spatial") return Variant::spatial;
    if (s == "full") return Variant::full;
    throw ConfigError("unknown variant '" + s + "' (expected semantic | +spatial | full)");
}

void StcaConfig::validate() const {
    if (d_v <= 0) throw ConfigError("d_v must be positive");
    if (d_v % 2 != 0) throw ConfigError("d_v must be even (temporal embedding pairs sin/cos)");
    if (d_phi <= 0 || d_phi % 2 != 0) throw ConfigError("d_phi must be a positive even integer");
    if (n_proposals <= 0) throw ConfigError("n_proposals must be positive");
    if (window <= 0 || window % 2 == 0) throw ConfigError("window must be a positive odd integer");
    if (tau <= 0) throw ConfigError("tau must be positive");
    if (!(eps_geom > 0.0)) throw ConfigError("eps_geom must be > 0");
    if (!(eps_spatial > 0.0)) throw ConfigError("eps_spatial must be > 0");
    if (!(sinusoid_base > 0.0)) throw ConfigError("sinusoid_base must be > 0");
}

namespace {

bool finite_box(const BoundingBox& b) {
    return std::isfinite(b.cx) && std::isfinite(b.cy) && std::isfinite(b.w) &&
           std::isfinite(b.h);
}

} // namespace

FrameValidation validate_frame(const FrameProposals& frame, const StcaConfig& config) {
    if (frame.proposals.size() != static_cast<std::size_t>(config.n_proposals)) {
        return {FrameStatus::count_mismatch,
                "frame " + std::to_string(frame.frame_id) + " has " +
                    std::to_string(frame.proposals.size()) + " proposals, expected " +
                    std::to_string(config.n_proposals)};
    }
    for (std::size_t i = 0; i < frame.proposals.size(); ++i) {
        const Proposal& p = frame.proposals[i];
        if (p.frame_id != frame.frame_id) {
            return {FrameStatus::frame_id_mismatch,
                    "proposal " + std::to_string(i) + " carries frame id " +
                        std::to_string(p.frame_id) + " inside frame " +
                        std::to_string(frame.frame_id)};
        }
        if (!finite_box(p.box) || !std::isfinite(p.objectness)) {
            return {FrameStatus::non_finite, "proposal " + std::to_string(i) + " has non-finite box"};
        }
        if (p.box.w <= 0.0 || p.box.h <= 0.0) {
            return {FrameStatus::non_positive_extent,
                    "proposal " + std::to_string(i) + " has non-positive extent"};
        }
        if (p.feature.size() != static_cast<std::size_t>(config.d_v)) {
            return {FrameStatus::dimension_mismatch,
                    "proposal " + std::to_string(i) + " feature length " +
                        std::to_string(p.feature.size()) + ", expected " +
                        std::to_string(config.d_v)};
        }
        for (double x : p.feature) {
            if (!std::isfinite(x)) {
                return {FrameStatus::non_finite,
                        "proposal " + std::to_string(i) + " has non-finite feature"};
            }
        }
    }
    return {};
}

StcaParams default_init_params(const StcaConfig& config, std::uint64_t seed) {
    config.validate();
    Rng rng(seed);
    const auto d = static_cast<std::size_t>(config.d_v);
    constexpr double kStddev = 0.01;

    auto fill = [&](Matrix& m, std::size_t rows, std::size_t cols) {
        m = Matrix(rows, cols);
        for (double& x : m.flat()) x = rng.gaussian(0.0, kStddev);
    };

    StcaParams p;
    fill(p.w_q, d, d);
    fill(p.w_k, d, d);
    p.w_s.resize(static_cast<std::size_t>(4 * config.d_phi));
    for (double& x : p.w_s) x = rng.gaussian(0.0, kStddev);
    fill(p.w_t, d, d);
    if (!config.share_query) fill(p.w_q_t, d, d);
    return p;
}

} // namespace stca
