#pragma once

#include "stca/position.hpp"
#include "stca/types.hpp"

#include <span>
#include <utility>
#include <vector>

namespace stca {

// One side of an attention call: semantic features plus the geometry the
// spatial and temporal logits consume.
struct AttentionSet {
    Matrix features;                // n x d_v
    std::vector<BoundingBox> boxes; // n
    std::vector<int> frames;        // n

    std::size_t size() const { return features.rows(); }
};

AttentionSet make_attention_set(std::span<const Proposal> proposals, const StcaConfig& config);
AttentionSet make_attention_set(const FrameProposals& frame, const StcaConfig& config);

struct AttentionLogits {
    Matrix e_c; // content
    Matrix e_s; // spatial, pre-log
    Matrix e_t; // temporal
    Matrix e;   // fused
};

struct AttentionWeights {
    Matrix w; // every row sums to 1
};

// all four logit grids for inspection; terms dropped by the variant stay empty
AttentionLogits attention_logits(const AttentionSet& targets, const AttentionSet& candidates,
                                 const StcaParams& params, const StcaConfig& config);

// e_c[i][j] = (f_i W^Q) . (f_j W^K) / sqrt(d_v)
Matrix content_logits(const Matrix& targets, const Matrix& candidates, const Matrix& w_q,
                      const Matrix& w_k, int d_v);

// e_s[i][j] = phi(r(p_i, p_j)) . w_s, pre-log scalar per pair
Matrix spatial_logits(std::span<const BoundingBox> target_boxes,
                      std::span<const BoundingBox> candidate_boxes,
                      std::span<const double> w_s, const StcaConfig& config);

// e_t[i][j] = (f_i W^Q) . (phi_tau(ij) W^T) / sqrt(d_v),
// tau(ij) = frame(j) - frame(i) (absolute value when signed_tau is off)
Matrix temporal_logits(const Matrix& targets, std::span<const int> target_frames,
                       std::span<const int> candidate_frames, const Matrix& w_q,
                       const Matrix& w_t, const StcaConfig& config);

// e = e_c + log(max(e_s, eps_spatial)) + e_t
Matrix fuse_logits(const Matrix& e_c, const Matrix& e_s, const Matrix& e_t,
                   double eps_spatial);

// row-wise softmax with per-row max subtraction
AttentionWeights softmax_rows(const Matrix& e);

// f_en[i] = f[i] + sum_j w[i][j] f_g[j]; candidates enter unprojected
Matrix aggregate(const Matrix& targets, const AttentionWeights& weights,
                 const Matrix& candidates);

// Everything backward needs to replay the forward pass.
struct StcaForwardCache {
    AttentionSet targets;
    AttentionSet candidates;
    StcaConfig config;
    Matrix w_q, w_k, w_t, w_q_t; // parameter copies
    Matrix q;                    // targets * w_q
    Matrix k;                    // candidates * w_k
    Matrix q_t;                  // query projection feeding the temporal logits
    Matrix e_s;                  // pre-log spatial logits (empty when term inactive)
    Matrix e;                    // fused logits
    Matrix weights;              // softmax rows
};

std::pair<Matrix, StcaForwardCache> stca_forward(const AttentionSet& targets,
                                                 const AttentionSet& candidates,
                                                 const StcaParams& params,
                                                 const StcaConfig& config);

struct StcaGrads {
    Matrix w_q;
    Matrix w_k;
    std::vector<double> w_s;
    Matrix w_t;
    Matrix w_q_t;     // empty when the query projection is shared
    Matrix targets;   // d loss / d target features
    Matrix candidates; // d loss / d candidate features
};

// Exact gradients of the forward map. The clamp in the fused log is
// treated as a subgradient: zero where e_s <= eps_spatial.
StcaGrads stca_backward(const StcaForwardCache& cache, const Matrix& upstream);

} // namespace stca
