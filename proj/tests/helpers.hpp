#pragma once

#include "stca/attention.hpp"
#include "stca/rng.hpp"

namespace stca::test {

inline AttentionSet random_set(Rng& rng, int count, int d_v, int frame_lo = -3,
                               int frame_hi = 3) {
    AttentionSet set;
    set.features = Matrix(static_cast<std::size_t>(count), static_cast<std::size_t>(d_v));
    for (double& x : set.features.flat()) x = rng.gaussian();
    for (int i = 0; i < count; ++i) {
        BoundingBox b;
        b.cx = rng.uniform(-40.0, 40.0);
        b.cy = rng.uniform(-40.0, 40.0);
        b.w = rng.uniform(2.0, 20.0);
        b.h = rng.uniform(2.0, 20.0);
        set.boxes.push_back(b);
        set.frames.push_back(static_cast<int>(rng.uniform_int(frame_lo, frame_hi)));
    }
    return set;
}

inline StcaParams random_params(Rng& rng, const StcaConfig& cfg, double scale = 0.3) {
    StcaParams p;
    const auto d = static_cast<std::size_t>(cfg.d_v);
    auto fill = [&](Matrix& m) {
        m = Matrix(d, d);
        for (double& x : m.flat()) x = rng.gaussian(0.0, scale);
    };
    fill(p.w_q);
    fill(p.w_k);
    p.w_s.resize(static_cast<std::size_t>(4 * cfg.d_phi));
    for (double& x : p.w_s) x = rng.gaussian(0.0, scale);
    fill(p.w_t);
    if (!cfg.share_query) fill(p.w_q_t);
    return p;
}

inline StcaParams zero_params(const StcaConfig& cfg) {
    StcaParams p;
    const auto d = static_cast<std::size_t>(cfg.d_v);
    p.w_q = Matrix(d, d);
    p.w_k = Matrix(d, d);
    p.w_s.assign(static_cast<std::size_t>(4 * cfg.d_phi), 0.0);
    p.w_t = Matrix(d, d);
    if (!cfg.share_query) p.w_q_t = Matrix(d, d);
    return p;
}

inline Proposal make_proposal(int frame_id, const BoundingBox& box,
                              std::vector<double> feature, double objectness = 0.5) {
    Proposal p;
    p.frame_id = frame_id;
    p.box = box;
    p.feature = std::move(feature);
    p.objectness = objectness;
    return p;
}

} // namespace stca::test
