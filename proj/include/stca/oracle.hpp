#pragma once

#include "stca/pipeline.hpp"

#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

// Independent reference implementations backing the test and acceptance
// suites. Everything here is scalar-loop code that shares domain types
// with the main implementation but none of its matrix paths.
namespace stca::oracle {

// Same math as stca_forward, re-derived with explicit loops over pairs
// and dimensions.
Matrix naive_stca(const AttentionSet& targets, const AttentionSet& candidates,
                  const StcaParams& params, const StcaConfig& config);

// central differences (loss(x + h e_i) - loss(x - h e_i)) / 2h
std::vector<double> fd_gradient(const std::function<double(std::span<const double>)>& loss,
                                std::span<const double> theta, double h);

// Stateless re-derivation of the staged inference: every key frame is
// recomputed from scratch, no buffers, naive_stca inside.
std::vector<FrameDetections> naive_infer(std::span<const FrameRecord> sequence,
                                         const StcaParams& stage1, const StcaParams& stage2,
                                         const HeadParams& head, const StcaConfig& config,
                                         int window_override = 0);

// ----- gradient checking -----

struct GradCheckCase {
    std::uint64_t seed = 0;
    int d_v = 8;
    int d_phi = 4;
    int n_targets = 3;
    int n_candidates = 6;
    Variant variant = Variant::full;
    bool share_query = true;
};

// d_v x targets x candidates grid plus split-query and reduced-variant
// cases; >= 20 configurations total
std::vector<GradCheckCase> default_gradcheck_cases(std::uint64_t base_seed = 1);

struct GradCheckOptions {
    double h = 1e-5;
    double tolerance = 1e-5;
    double abs_floor = 1e-8;    // relative error floor for near-zero gradients
    double kink_window = 1e-7;  // skip cases with e_s this close to the clamp
    struct Corruption {
        std::string block;
        std::size_t index = 0;
        double delta = 0.0;
    };
    std::optional<Corruption> corrupt; // test hook: perturb one analytic gradient
};

struct GradBlockReport {
    std::string name;
    double max_abs_err = 0.0;
    double max_rel_err = 0.0;
    std::size_t worst_case = 0;  // index into the case list
    std::size_t worst_index = 0; // flat coordinate within the block
    std::size_t checked = 0;
    std::size_t excluded = 0;
    bool pass = true;
};

struct GradCheckReport {
    double tolerance = 0.0;
    double h = 0.0;
    std::size_t cases = 0;
    std::vector<GradBlockReport> blocks;
    double max_rel_err = 0.0;
    bool pass = false;
    double elapsed_seconds = 0.0;
};

GradCheckReport run_gradcheck(std::span<const GradCheckCase> cases,
                              const GradCheckOptions& opts = {});

std::string to_text(const GradCheckReport& report);
std::string to_json_string(const GradCheckReport& report);
GradCheckReport gradcheck_from_json_string(const std::string& text);

} // namespace stca::oracle
