#include "stca/synthetic.hpp"

#include "stca/rng.hpp"

#include <cmath>
#include <string>

namespace stca {

namespace {

constexpr double kCanvasW = 640.0;
constexpr double kCanvasH = 360.0;

// feature layout: coordinate 0 = shared (ambiguous) object cluster,
// 1 = context, 2 = filler, 2 + y = beacon of class y
constexpr int kObjectAxis = 0;
constexpr int kContextAxis = 1;
constexpr int kFillerAxis = 2;

std::vector<double> cluster_feature(int axis, double scale, double sigma, int d_v, Rng& rng) {
    std::vector<double> f(static_cast<std::size_t>(d_v), 0.0);
    f[static_cast<std::size_t>(axis)] = scale;
    for (double& x : f) x += rng.gaussian(0.0, sigma);
    return f;
}

// class-specific direction of the context offset; |dx|/|dy| patterns stay
// distinguishable under the absolute-value geometry transform
std::pair<double, double> context_direction(int label) {
    switch ((label - 1) % 3) {
        case 0: return {1.0, 0.0};
        case 1: return {0.0, 1.0};
        default: return {0.70710678118654752, 0.70710678118654752};
    }
}

} // namespace

Dataset generate_synthetic(const StcaConfig& config, const GeneratorConfig& gen,
                           std::uint64_t seed) {
    config.validate();
    if (config.n_proposals < 3) {
        throw ConfigError("synthetic generator needs n_proposals >= 3 "
                          "(objects + context + beacon slot)");
    }
    if (config.d_v < 3 + gen.classes) {
        throw ConfigError("synthetic generator needs d_v >= classes + 3");
    }
    if (gen.classes < 1) throw ConfigError("synthetic generator needs classes >= 1");

    Rng rng(seed);
    Dataset data;
    data.videos.reserve(static_cast<std::size_t>(gen.videos));
    const int n_objects = config.n_proposals - 2;

    for (int v = 0; v < gen.videos; ++v) {
        VideoRecord video;
        video.video_id = "v" + std::to_string(v);
        const int label = 1 + static_cast<int>(rng.uniform_int(0, gen.classes - 1));

        // object formation follows a linear trajectory across the video
        double cx = rng.uniform(140.0, 500.0);
        double cy = rng.uniform(110.0, 250.0);
        const double vx = rng.uniform(-3.0, 3.0);
        const double vy = rng.uniform(-2.0, 2.0);

        std::vector<double> obj_dx(static_cast<std::size_t>(n_objects));
        std::vector<double> obj_dy(static_cast<std::size_t>(n_objects));
        std::vector<double> obj_w(static_cast<std::size_t>(n_objects));
        std::vector<double> obj_h(static_cast<std::size_t>(n_objects));
        for (int i = 0; i < n_objects; ++i) {
            obj_dx[static_cast<std::size_t>(i)] = rng.uniform(-15.0, 15.0);
            obj_dy[static_cast<std::size_t>(i)] = rng.uniform(-15.0, 15.0);
            obj_w[static_cast<std::size_t>(i)] = rng.uniform(24.0, 40.0);
            obj_h[static_cast<std::size_t>(i)] = rng.uniform(24.0, 40.0);
        }
        const double ctx_w = rng.uniform(24.0, 40.0);
        const double ctx_h = rng.uniform(24.0, 40.0);
        const auto [dir_x, dir_y] = context_direction(label);

        for (int t = 0; t < gen.frames_per_video; ++t) {
            FrameRecord rec;
            rec.frame.frame_id = t;
            const double fx = cx + vx * t;
            const double fy = cy + vy * t;

            for (int i = 0; i < n_objects; ++i) {
                Proposal p;
                p.frame_id = t;
                p.box.cx = fx + obj_dx[static_cast<std::size_t>(i)] + rng.uniform(-2.0, 2.0);
                p.box.cy = fy + obj_dy[static_cast<std::size_t>(i)] + rng.uniform(-2.0, 2.0);
                p.box.w = obj_w[static_cast<std::size_t>(i)];
                p.box.h = obj_h[static_cast<std::size_t>(i)];
                p.feature = cluster_feature(kObjectAxis, gen.feature_scale, gen.noise_sigma,
                                            config.d_v, rng);
                p.objectness = rng.uniform(0.7, 0.95);
                rec.frame.proposals.push_back(std::move(p));
                rec.labels.push_back(label);
            }

            {
                // context proposal at a class-specific offset
                Proposal p;
                p.frame_id = t;
                const double gap = 3.0 * ctx_w * rng.uniform(0.95, 1.05);
                p.box.cx = fx + dir_x * gap + rng.uniform(-2.0, 2.0);
                p.box.cy = fy + dir_y * gap + rng.uniform(-2.0, 2.0);
                p.box.w = ctx_w;
                p.box.h = ctx_h;
                p.feature = cluster_feature(kContextAxis, gen.feature_scale, gen.noise_sigma,
                                            config.d_v, rng);
                p.objectness = rng.uniform(0.3, 0.6);
                rec.frame.proposals.push_back(std::move(p));
                rec.labels.push_back(0);
            }

            {
                // odd frames carry the class beacon, even frames a filler
                Proposal p;
                p.frame_id = t;
                const bool beacon = (t % 2) == 1;
                if (beacon) {
                    p.box.cx = fx + rng.uniform(-10.0, 10.0);
                    p.box.cy = fy + rng.uniform(-10.0, 10.0);
                } else {
                    p.box.cx = rng.uniform(30.0, kCanvasW - 30.0);
                    p.box.cy = rng.uniform(30.0, kCanvasH - 30.0);
                }
                p.box.w = rng.uniform(24.0, 40.0);
                p.box.h = rng.uniform(24.0, 40.0);
                const int axis = beacon ? (2 + label) : kFillerAxis;
                p.feature =
                    cluster_feature(axis, gen.feature_scale, gen.noise_sigma, config.d_v, rng);
                p.objectness = rng.uniform(0.3, 0.6);
                rec.frame.proposals.push_back(std::move(p));
                rec.labels.push_back(0);
            }

            video.frames.push_back(std::move(rec));
        }
        data.videos.push_back(std::move(video));
    }
    return data;
}

} // namespace stca
