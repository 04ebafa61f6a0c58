#pragma once

#include "stca/matrix.hpp"

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace stca {

// Error taxonomy used at the CLI boundary: config/usage -> exit 1,
// malformed data -> exit 2, numerical failure -> exit 3.
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct DataError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Which logit terms take part in the fused attention score.
// semantic: content only; spatial: content + spatial; full: all three.
enum class Variant { semantic, spatial, full };

const char* to_string(Variant v);
Variant variant_from_string(const std::string& s); // accepts "+spatial" alias

struct BoundingBox {
    double cx = 0.0; // box center x
    double cy = 0.0; // box center y
    double w = 0.0;  // width, > 0
    double h = 0.0;  // height, > 0
};

struct Proposal {
    BoundingBox box;
    int frame_id = 0;
    std::vector<double> feature; // length d_v
    double objectness = 0.0;     // generator-assigned score in [0, 1]
};

struct FrameProposals {
    int frame_id = 0;
    std::vector<Proposal> proposals; // exactly n_proposals, all sharing frame_id
};

struct StcaConfig {
    int d_v = 16;              // feature dimension
    int d_phi = 8;             // per-scalar sinusoid dimension, even
    int n_proposals = 8;       // N, proposals per frame
    int window = 5;            // T, odd inference window
    int tau = 9;               // training frame-offset bound
    double eps_geom = 1e-3;    // clamp inside the offset logs
    double eps_spatial = 1e-6; // clamp inside the fused log
    double sinusoid_base = 1000.0;
    bool signed_tau = true;   // signed frame distance (candidate minus target)
    bool share_query = true;  // one query projection for content and temporal logits
    Variant variant = Variant::full;

    void validate() const; // throws ConfigError

    // defaults sized for experiments that run in seconds; the published
    // scale remains expressible
    static StcaConfig full_scale() {
        StcaConfig c;
        c.d_v = 1024;
        c.d_phi = 16;
        c.n_proposals = 300;
        c.window = 31;
        return c;
    }
};

// Learnable matrices for one aggregation stage. w_q_t is non-empty only
// when the query projection is not shared between the content and
// temporal logits.
struct StcaParams {
    Matrix w_q;              // d_v x d_v
    Matrix w_k;              // d_v x d_v
    std::vector<double> w_s; // 4*d_phi, column vector
    Matrix w_t;              // d_v x d_v
    Matrix w_q_t;            // d_v x d_v when present

    bool has_split_query() const { return !w_q_t.empty(); }
};

enum class FrameStatus {
    ok,
    dimension_mismatch,  // feature length != d_v
    count_mismatch,      // proposal count != N
    non_positive_extent, // box w or h <= 0
    frame_id_mismatch,   // proposal does not share the frame's id
    non_finite,          // NaN/inf in box or feature
};

struct FrameValidation {
    FrameStatus status = FrameStatus::ok;
    std::string detail;
    explicit operator bool() const { return status == FrameStatus::ok; }
};

FrameValidation validate_frame(const FrameProposals& frame, const StcaConfig& config);

// All entries i.i.d. N(0, 0.01^2) from the seeded generator; the same
// seed reproduces the exact bits.
StcaParams default_init_params(const StcaConfig& config, std::uint64_t seed);

// Dataset containers (file formats live in dataset.hpp).
struct FrameRecord {
    FrameProposals frame;
    std::vector<int> labels; // per-proposal class ids; empty when unlabeled
};

struct VideoRecord {
    std::string video_id;
    std::vector<FrameRecord> frames; // ascending frame_id
};

struct Dataset {
    std::vector<VideoRecord> videos;
};

} // namespace stca
