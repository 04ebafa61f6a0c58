#include "stca/attention.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <stdexcept>

namespace stca {

namespace {

void check_set(const AttentionSet& s, const StcaConfig& config, const char* what) {
    if (s.features.cols() != static_cast<std::size_t>(config.d_v)) {
        throw std::invalid_argument(std::string(what) + ": feature width " +
                                    std::to_string(s.features.cols()) + ", expected d_v=" +
                                    std::to_string(config.d_v));
    }
    if (s.boxes.size() != s.size() || s.frames.size() != s.size()) {
        throw std::invalid_argument(std::string(what) +
                                    ": boxes/frames do not match feature rows");
    }
}

long long pair_tau(int target_frame, int candidate_frame, bool signed_tau) {
    const long long t = static_cast<long long>(candidate_frame) -
                        static_cast<long long>(target_frame);
    return signed_tau ? t : std::llabs(t);
}

// phi_tau * w_t for every distinct tau in the pair grid
std::map<long long, std::vector<double>> projected_temporal_embeddings(
    std::span<const int> target_frames, std::span<const int> candidate_frames,
    const Matrix& w_t, const StcaConfig& config) {
    std::map<long long, std::vector<double>> psi;
    for (int tf : target_frames) {
        for (int cf : candidate_frames) {
            const long long tau = pair_tau(tf, cf, config.signed_tau);
            if (psi.contains(tau)) continue;
            const auto phi = temporal_embed(tau, config.d_v, config.sinusoid_base).phi;
            std::vector<double> row(static_cast<std::size_t>(config.d_v), 0.0);
            for (std::size_t a = 0; a < phi.size(); ++a) {
                const double pa = phi[a];
                if (pa == 0.0) continue;
                for (std::size_t b = 0; b < row.size(); ++b) row[b] += pa * w_t(a, b);
            }
            psi.emplace(tau, std::move(row));
        }
    }
    return psi;
}

} // namespace

AttentionSet make_attention_set(std::span<const Proposal> proposals,
                                const StcaConfig& config) {
    AttentionSet set;
    set.features = Matrix(proposals.size(), static_cast<std::size_t>(config.d_v));
    set.boxes.reserve(proposals.size());
    set.frames.reserve(proposals.size());
    for (std::size_t i = 0; i < proposals.size(); ++i) {
        const Proposal& p = proposals[i];
        if (p.feature.size() != static_cast<std::size_t>(config.d_v)) {
            throw std::invalid_argument("make_attention_set: proposal feature length " +
                                        std::to_string(p.feature.size()) + ", expected " +
                                        std::to_string(config.d_v));
        }
        for (std::size_t j = 0; j < p.feature.size(); ++j) set.features(i, j) = p.feature[j];
        set.boxes.push_back(p.box);
        set.frames.push_back(p.frame_id);
    }
    return set;
}

AttentionSet make_attention_set(const FrameProposals& frame, const StcaConfig& config) {
    return make_attention_set(std::span<const Proposal>(frame.proposals), config);
}

Matrix content_logits(const Matrix& targets, const Matrix& candidates, const Matrix& w_q,
                      const Matrix& w_k, int d_v) {
    if (targets.cols() != static_cast<std::size_t>(d_v) ||
        candidates.cols() != static_cast<std::size_t>(d_v)) {
        throw std::invalid_argument("content_logits: feature width does not match d_v");
    }
    const Matrix q = matmul(targets, w_q);
    const Matrix k = matmul(candidates, w_k);
    Matrix e = matmul_bt(q, k);
    scale_inplace(e, 1.0 / std::sqrt(static_cast<double>(d_v)));
    return e;
}

Matrix spatial_logits(std::span<const BoundingBox> target_boxes,
                      std::span<const BoundingBox> candidate_boxes,
                      std::span<const double> w_s, const StcaConfig& config) {
    if (w_s.size() != static_cast<std::size_t>(4 * config.d_phi)) {
        throw std::invalid_argument("spatial_logits: w_s length " +
                                    std::to_string(w_s.size()) + ", expected " +
                                    std::to_string(4 * config.d_phi));
    }
    const int half = config.d_phi / 2;
    std::vector<double> inv_wavelength(static_cast<std::size_t>(half));
    for (int z = 0; z < half; ++z) {
        inv_wavelength[static_cast<std::size_t>(z)] =
            1.0 / std::pow(config.sinusoid_base, static_cast<double>(2 * z) / config.d_phi);
    }

    Matrix e(target_boxes.size(), candidate_boxes.size());
    for (std::size_t i = 0; i < target_boxes.size(); ++i) {
        for (std::size_t j = 0; j < candidate_boxes.size(); ++j) {
            const GeomRelation rel =
                geometric_relation(target_boxes[i], candidate_boxes[j], config.eps_geom);
            double acc = 0.0;
            std::size_t c = 0;
            for (double r : rel.r) {
                for (int z = 0; z < half; ++z) {
                    const double arg = r * inv_wavelength[static_cast<std::size_t>(z)];
                    acc += std::sin(arg) * w_s[c++];
                    acc += std::cos(arg) * w_s[c++];
                }
            }
            e(i, j) = acc;
        }
    }
    return e;
}

Matrix temporal_logits(const Matrix& targets, std::span<const int> target_frames,
                       std::span<const int> candidate_frames, const Matrix& w_q,
                       const Matrix& w_t, const StcaConfig& config) {
    if (targets.rows() != target_frames.size()) {
        throw std::invalid_argument("temporal_logits: target frames do not match features");
    }
    const Matrix q = matmul(targets, w_q);
    const auto psi = projected_temporal_embeddings(target_frames, candidate_frames, w_t, config);
    const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(config.d_v));

    Matrix e(targets.rows(), candidate_frames.size());
    for (std::size_t i = 0; i < targets.rows(); ++i) {
        const auto qi = q.row(i);
        for (std::size_t j = 0; j < candidate_frames.size(); ++j) {
            const long long tau =
                pair_tau(target_frames[i], candidate_frames[j], config.signed_tau);
            const auto& p = psi.at(tau);
            double acc = 0.0;
            for (std::size_t d = 0; d < p.size(); ++d) acc += qi[d] * p[d];
            e(i, j) = acc * inv_sqrt_d;
        }
    }
    return e;
}

Matrix fuse_logits(const Matrix& e_c, const Matrix& e_s, const Matrix& e_t,
                   double eps_spatial) {
    if (!e_c.same_shape(e_s) || !e_c.same_shape(e_t)) {
        throw std::invalid_argument("fuse_logits: logit shapes differ");
    }
    Matrix e = e_c;
    for (std::size_t i = 0; i < e.rows(); ++i) {
        for (std::size_t j = 0; j < e.cols(); ++j) {
            e(i, j) += std::log(std::max(e_s(i, j), eps_spatial)) + e_t(i, j);
        }
    }
    return e;
}

AttentionWeights softmax_rows(const Matrix& e) {
    AttentionWeights out;
    out.w = Matrix(e.rows(), e.cols());
    for (std::size_t i = 0; i < e.rows(); ++i) {
        const auto row = e.row(i);
        double mx = row[0];
        for (double x : row) mx = std::max(mx, x);
        double sum = 0.0;
        for (std::size_t j = 0; j < row.size(); ++j) {
            const double v = std::exp(row[j] - mx);
            out.w(i, j) = v;
            sum += v;
        }
        for (std::size_t j = 0; j < row.size(); ++j) out.w(i, j) /= sum;
    }
    return out;
}

Matrix aggregate(const Matrix& targets, const AttentionWeights& weights,
                 const Matrix& candidates) {
    if (weights.w.rows() != targets.rows() || weights.w.cols() != candidates.rows()) {
        throw std::invalid_argument("aggregate: weight shape does not match sets");
    }
    Matrix out = matmul(weights.w, candidates);
    add_inplace(out, targets);
    return out;
}

AttentionLogits attention_logits(const AttentionSet& targets, const AttentionSet& candidates,
                                 const StcaParams& params, const StcaConfig& config) {
    AttentionLogits out;
    out.e_c = content_logits(targets.features, candidates.features, params.w_q, params.w_k,
                             config.d_v);
    switch (config.variant) {
        case Variant::semantic:
            out.e = out.e_c;
            break;
        case Variant::spatial:
            out.e_s = spatial_logits(targets.boxes, candidates.boxes, params.w_s, config);
            out.e = out.e_c;
            for (std::size_t i = 0; i < out.e.rows(); ++i) {
                for (std::size_t j = 0; j < out.e.cols(); ++j) {
                    out.e(i, j) += std::log(std::max(out.e_s(i, j), config.eps_spatial));
                }
            }
            break;
        case Variant::full: {
            out.e_s = spatial_logits(targets.boxes, candidates.boxes, params.w_s, config);
            const Matrix& query = config.share_query ? params.w_q : params.w_q_t;
            out.e_t = temporal_logits(targets.features, targets.frames, candidates.frames,
                                      query, params.w_t, config);
            out.e = fuse_logits(out.e_c, out.e_s, out.e_t, config.eps_spatial);
            break;
        }
    }
    return out;
}

std::pair<Matrix, StcaForwardCache> stca_forward(const AttentionSet& targets,
                                                 const AttentionSet& candidates,
                                                 const StcaParams& params,
                                                 const StcaConfig& config) {
    config.validate();
    check_set(targets, config, "stca_forward targets");
    check_set(candidates, config, "stca_forward candidates");
    if (candidates.size() == 0) {
        throw std::invalid_argument("stca_forward: empty candidate set");
    }
    if (!config.share_query && !params.has_split_query()) {
        throw std::invalid_argument("stca_forward: config wants a split query projection "
                                    "but params carry none");
    }

    const bool temporal_active = config.variant == Variant::full;

    StcaForwardCache cache;
    cache.targets = targets;
    cache.candidates = candidates;
    cache.config = config;
    cache.w_q = params.w_q;
    cache.w_k = params.w_k;
    cache.w_t = params.w_t;
    cache.w_q_t = params.w_q_t;
    cache.q = matmul(targets.features, params.w_q);
    cache.k = matmul(candidates.features, params.w_k);
    cache.q_t = temporal_active
                    ? (config.share_query ? cache.q : matmul(targets.features, params.w_q_t))
                    : Matrix();

    AttentionLogits logits = attention_logits(targets, candidates, params, config);
    cache.e_s = std::move(logits.e_s);
    cache.e = std::move(logits.e);
    cache.weights = softmax_rows(cache.e).w;

    Matrix enhanced = aggregate(targets.features, {cache.weights}, candidates.features);
    return {std::move(enhanced), std::move(cache)};
}

StcaGrads stca_backward(const StcaForwardCache& cache, const Matrix& upstream) {
    const StcaConfig& config = cache.config;
    const std::size_t n = cache.targets.size();
    const std::size_t m = cache.candidates.size();
    const auto d = static_cast<std::size_t>(config.d_v);
    if (upstream.rows() != n || upstream.cols() != d) {
        throw std::invalid_argument("stca_backward: upstream shape does not match cache");
    }

    const bool spatial_active = config.variant != Variant::semantic;
    const bool temporal_active = config.variant == Variant::full;
    const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(config.d_v));

    const Matrix& f = cache.targets.features;
    const Matrix& g = cache.candidates.features;

    StcaGrads grads;
    grads.w_s.assign(static_cast<std::size_t>(4 * config.d_phi), 0.0);
    grads.w_t = Matrix(d, d);

    // aggregation: f_en = F + w G
    grads.candidates = matmul_at(cache.weights, upstream); // w^T U
    const Matrix dw = matmul_bt(upstream, g);              // dL/dw = U G^T

    // softmax rows: de_ij = w_ij (dw_ij - sum_k dw_ik w_ik)
    Matrix de(n, m);
    for (std::size_t i = 0; i < n; ++i) {
        double dot = 0.0;
        for (std::size_t j = 0; j < m; ++j) dot += dw(i, j) * cache.weights(i, j);
        for (std::size_t j = 0; j < m; ++j) {
            de(i, j) = cache.weights(i, j) * (dw(i, j) - dot);
        }
    }

    // spatial term: e += log(max(e_s, eps)); zero slope inside the clamp
    if (spatial_active) {
        const int half = config.d_phi / 2;
        std::vector<double> inv_wavelength(static_cast<std::size_t>(half));
        for (int z = 0; z < half; ++z) {
            inv_wavelength[static_cast<std::size_t>(z)] =
                1.0 / std::pow(config.sinusoid_base, static_cast<double>(2 * z) / config.d_phi);
        }
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = 0; j < m; ++j) {
                const double s = cache.e_s(i, j);
                if (s <= config.eps_spatial) continue;
                const double ds = de(i, j) / s;
                if (ds == 0.0) continue;
                const GeomRelation rel = geometric_relation(cache.targets.boxes[i],
                                                            cache.candidates.boxes[j],
                                                            config.eps_geom);
                std::size_t c = 0;
                for (double r : rel.r) {
                    for (int z = 0; z < half; ++z) {
                        const double arg = r * inv_wavelength[static_cast<std::size_t>(z)];
                        grads.w_s[c++] += ds * std::sin(arg);
                        grads.w_s[c++] += ds * std::cos(arg);
                    }
                }
            }
        }
    }

    // content term through Q and K
    Matrix dq = matmul(de, cache.k); // n x d
    scale_inplace(dq, inv_sqrt_d);
    Matrix dk = matmul_at(de, cache.q); // m x d
    scale_inplace(dk, inv_sqrt_d);

    // temporal term: e_t_ij = q_t_i . psi(tau_ij) / sqrt(d)
    Matrix dq_t(n, d);
    if (temporal_active) {
        const auto psi = projected_temporal_embeddings(cache.targets.frames,
                                                       cache.candidates.frames, cache.w_t,
                                                       config);
        std::map<long long, std::vector<double>> dpsi;
        for (const auto& [tau, unused] : psi) {
            dpsi.emplace(tau, std::vector<double>(d, 0.0));
        }
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = 0; j < m; ++j) {
                const double dde = de(i, j) * inv_sqrt_d;
                if (dde == 0.0) continue;
                const long long tau = pair_tau(cache.targets.frames[i],
                                               cache.candidates.frames[j], config.signed_tau);
                const auto& p = psi.at(tau);
                auto& dp = dpsi.at(tau);
                for (std::size_t a = 0; a < d; ++a) {
                    dq_t(i, a) += dde * p[a];
                    dp[a] += dde * cache.q_t(i, a);
                }
            }
        }
        for (const auto& [tau, dp] : dpsi) {
            const auto phi = temporal_embed(tau, config.d_v, config.sinusoid_base).phi;
            for (std::size_t a = 0; a < d; ++a) {
                const double pa = phi[a];
                if (pa == 0.0) continue;
                for (std::size_t b = 0; b < d; ++b) grads.w_t(a, b) += pa * dp[b];
            }
        }
    }

    // query/key projections and the residual path
    grads.w_k = matmul_at(g, dk);
    add_inplace(grads.candidates, matmul_bt(dk, cache.w_k));

    grads.targets = upstream;
    if (temporal_active && !config.share_query) {
        grads.w_q = matmul_at(f, dq);
        grads.w_q_t = matmul_at(f, dq_t);
        add_inplace(grads.targets, matmul_bt(dq, cache.w_q));
        add_inplace(grads.targets, matmul_bt(dq_t, cache.w_q_t));
    } else {
        if (temporal_active) add_inplace(dq, dq_t); // both pathways share w_q
        grads.w_q = matmul_at(f, dq);
        add_inplace(grads.targets, matmul_bt(dq, cache.w_q));
    }
    return grads;
}

} // namespace stca
