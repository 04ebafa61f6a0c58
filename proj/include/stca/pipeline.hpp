#pragma once

#include "stca/attention.hpp"
#include "stca/rng.hpp"

#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace stca {

// Three neighboring frames: two key frames whose proposals are enhanced
// and one supporting frame that contributes candidates only.
struct TrainingTriplet {
    FrameProposals key_a;
    FrameProposals support;
    FrameProposals key_b;
    std::vector<int> labels_a;
    std::vector<int> labels_b;
};

// First key frame uniform over the sequence; the other key frame and the
// supporting frame at uniform offsets in [-tau, tau], clipped to bounds.
// A single-frame sequence replicates that frame into all three slots.
TrainingTriplet sample_triplet(std::span<const FrameRecord> sequence, Rng& rng,
                               const StcaConfig& config);
TrainingTriplet sample_triplet(std::span<const FrameRecord> sequence, std::uint64_t seed,
                               const StcaConfig& config);

struct AttentionGroup {
    AttentionSet targets;
    AttentionSet candidates;
};

// Stage 1: group A targets key_a with candidates key_a + support, group B
// targets key_b with candidates key_b + support. Candidate rows keep the
// key frame first, then the supporting frame.
std::pair<AttentionGroup, AttentionGroup> stage1_groups(const TrainingTriplet& triplet,
                                                        const StcaConfig& config);

// Stage 2 mixes both enhanced key frames; every proposal is target and
// candidate at once. Stage-2 parameters are independent of stage 1.
AttentionGroup stage2_group(const AttentionSet& enhanced_a, const AttentionSet& enhanced_b);

struct HeadParams {
    Matrix weights;           // d_v x (classes + 1)
    std::vector<double> bias; // classes + 1

    int num_classes() const { return static_cast<int>(bias.size()) - 1; }
};

HeadParams default_init_head(const StcaConfig& config, int classes, std::uint64_t seed);

// affine map to classes+1 logits per proposal
Matrix head_forward(const Matrix& features, const HeadParams& head);

using StcaParamGrads = StcaParams;
using HeadGrads = HeadParams;

StcaParams zero_like_params(const StcaParams& p);
HeadParams zero_like_head(const HeadParams& h);

struct TripletGrads {
    double loss = 0.0;
    StcaParamGrads stage1;
    StcaParamGrads stage2;
    HeadGrads head;
};

// Forward through both aggregation stages and the head, mean softmax
// cross-entropy over both key frames' proposals, full analytic backward.
// use_stca=false drops both stages (head on raw features).
TripletGrads triplet_loss_and_grads(const TrainingTriplet& triplet, const StcaParams& stage1,
                                    const StcaParams& stage2, const HeadParams& head,
                                    const StcaConfig& config, bool use_stca = true);

struct TrainerConfig {
    int steps = 2000;
    double lr = 0.01;
    int lr_drop_step = 1400;
    double lr_drop_factor = 0.1;
    double momentum = 0.9;
    double weight_decay = 5e-4;
    std::uint64_t seed = 1;
};

double learning_rate_at(const TrainerConfig& cfg, int step);

// Flat view over every learnable block; bias is excluded from weight decay.
struct ParamBlockRef {
    std::string name;
    double* data = nullptr;
    std::size_t size = 0;
    bool decay = true;
};

std::vector<ParamBlockRef> stca_param_blocks(StcaParams& p, const std::string& prefix);
std::vector<ParamBlockRef> head_param_blocks(HeadParams& h);

class SgdOptimizer {
public:
    SgdOptimizer(double momentum, double weight_decay)
        : momentum_(momentum), weight_decay_(weight_decay) {}

    void step(std::span<const ParamBlockRef> params, std::span<const ParamBlockRef> grads,
              double lr);

private:
    double momentum_;
    double weight_decay_;
    std::vector<std::vector<double>> velocity_;
};

double train_step(const TrainingTriplet& triplet, StcaParams& stage1, StcaParams& stage2,
                  HeadParams& head, SgdOptimizer& opt, double lr, const StcaConfig& config,
                  bool use_stca = true);

struct TrainResult {
    StcaParams stage1;
    StcaParams stage2;
    HeadParams head;
    std::vector<std::pair<int, double>> loss_log; // (step, loss)
};

TrainResult run_training(const Dataset& data, const StcaConfig& config,
                         const TrainerConfig& trainer, int classes, bool use_stca = true);

// ----- inference -----

enum class Generation { raw, enhanced };

// Per-position store of proposal features for the staged inference.
// Positions may lie outside the sequence (boundary padding); entries keep
// the clamped boundary frame id. An enhanced entry may only exist where a
// raw entry exists, and once the stage-3 guard is armed, raw reads of
// enhanced positions throw.
class FeatureBuffer {
public:
    bool has(int pos, Generation g) const;
    void put(int pos, Generation g, AttentionSet set);
    const AttentionSet& get(int pos, Generation g) const;
    void set_stage3_guard(bool on) { stage3_guard_ = on; }

private:
    std::map<int, AttentionSet> raw_;
    std::map<int, AttentionSet> enhanced_;
    bool stage3_guard_ = false;
};

struct AttentionPair {
    int candidate_frame = 0;
    int candidate_index = 0;
    double weight = 0.0;
};

struct FrameDetections {
    int frame_id = 0;
    Matrix posteriors;       // N x (classes + 1)
    std::vector<int> labels; // argmax per proposal
    std::vector<std::vector<AttentionPair>> attention; // per target, top-k, optional
};

struct InferOptions {
    int window = 0;       // 0 = config.window
    int threads = 1;      // frame-parallel stage 2; results are unchanged
    int dump_attention = 0; // top-k dependency pairs per target, 0 = off
    bool use_stca = true; // false = head on raw features
    std::vector<double>* frame_times_ms = nullptr; // per-key-frame wall time sink
};

// Staged sliding-window inference with two shared feature buffers. Every
// frame of the sequence is detected as a key frame; buffer entries are
// reused across overlapping windows and the output matches stateless
// recomputation.
std::vector<FrameDetections> infer_window(std::span<const FrameRecord> sequence,
                                          const StcaParams& stage1, const StcaParams& stage2,
                                          const HeadParams& head, const StcaConfig& config,
                                          const InferOptions& opts = {});

// Materialized boundary padding: positions before the first frame copy the
// first frame, positions after the last copy the last, ids included.
std::vector<FrameRecord> pad_boundary(std::span<const FrameRecord> sequence, int lo, int hi);

} // namespace stca
