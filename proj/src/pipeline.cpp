#include "stca/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <stdexcept>
#include <thread>

namespace stca {

namespace {

int clamp_index(int pos, int lo, int hi) { return std::min(std::max(pos, lo), hi); }

AttentionSet concat_sets(const AttentionSet& a, const AttentionSet& b) {
    AttentionSet out;
    out.features = vstack(a.features, b.features);
    out.boxes = a.boxes;
    out.boxes.insert(out.boxes.end(), b.boxes.begin(), b.boxes.end());
    out.frames = a.frames;
    out.frames.insert(out.frames.end(), b.frames.begin(), b.frames.end());
    return out;
}

struct CeResult {
    double loss = 0.0;
    Matrix dlogits;
};

CeResult softmax_cross_entropy(const Matrix& logits, std::span<const int> labels) {
    if (logits.rows() != labels.size()) {
        throw DataError("cross entropy: label count does not match rows");
    }
    CeResult res;
    res.dlogits = Matrix(logits.rows(), logits.cols());
    const double inv_rows = 1.0 / static_cast<double>(logits.rows());
    for (std::size_t r = 0; r < logits.rows(); ++r) {
        const int label = labels[r];
        if (label < 0 || static_cast<std::size_t>(label) >= logits.cols()) {
            throw DataError("cross entropy: label " + std::to_string(label) +
                            " outside [0, " + std::to_string(logits.cols() - 1) + "]");
        }
        const auto row = logits.row(r);
        double mx = row[0];
        for (double x : row) mx = std::max(mx, x);
        double sum = 0.0;
        for (double x : row) sum += std::exp(x - mx);
        const double lse = mx + std::log(sum);
        res.loss += (lse - row[static_cast<std::size_t>(label)]) * inv_rows;
        for (std::size_t c = 0; c < logits.cols(); ++c) {
            const double p = std::exp(row[c] - lse);
            res.dlogits(r, c) = (p - (static_cast<int>(c) == label ? 1.0 : 0.0)) * inv_rows;
        }
    }
    return res;
}

void add_params(StcaParams& acc, const StcaParams& inc) {
    add_inplace(acc.w_q, inc.w_q);
    add_inplace(acc.w_k, inc.w_k);
    for (std::size_t i = 0; i < acc.w_s.size(); ++i) acc.w_s[i] += inc.w_s[i];
    add_inplace(acc.w_t, inc.w_t);
    if (!acc.w_q_t.empty()) add_inplace(acc.w_q_t, inc.w_q_t);
}

StcaParams grads_to_params(const StcaGrads& g) {
    StcaParams p;
    p.w_q = g.w_q;
    p.w_k = g.w_k;
    p.w_s = g.w_s;
    p.w_t = g.w_t;
    p.w_q_t = g.w_q_t;
    return p;
}

} // namespace

TrainingTriplet sample_triplet(std::span<const FrameRecord> sequence, Rng& rng,
                               const StcaConfig& config) {
    if (sequence.empty()) throw DataError("sample_triplet: empty sequence");
    const auto last = static_cast<long long>(sequence.size()) - 1;
    const long long first_key = rng.uniform_int(0, last);
    const long long other_key =
        clamp_index(static_cast<int>(first_key + rng.uniform_int(-config.tau, config.tau)), 0,
                    static_cast<int>(last));
    const long long support =
        clamp_index(static_cast<int>(first_key + rng.uniform_int(-config.tau, config.tau)), 0,
                    static_cast<int>(last));

    TrainingTriplet t;
    t.key_a = sequence[static_cast<std::size_t>(first_key)].frame;
    t.labels_a = sequence[static_cast<std::size_t>(first_key)].labels;
    t.support = sequence[static_cast<std::size_t>(support)].frame;
    t.key_b = sequence[static_cast<std::size_t>(other_key)].frame;
    t.labels_b = sequence[static_cast<std::size_t>(other_key)].labels;
    return t;
}

TrainingTriplet sample_triplet(std::span<const FrameRecord> sequence, std::uint64_t seed,
                               const StcaConfig& config) {
    Rng rng(seed);
    return sample_triplet(sequence, rng, config);
}

std::pair<AttentionGroup, AttentionGroup> stage1_groups(const TrainingTriplet& triplet,
                                                        const StcaConfig& config) {
    const AttentionSet key_a = make_attention_set(triplet.key_a, config);
    const AttentionSet support = make_attention_set(triplet.support, config);
    const AttentionSet key_b = make_attention_set(triplet.key_b, config);

    AttentionGroup a{key_a, concat_sets(key_a, support)};
    AttentionGroup b{key_b, concat_sets(key_b, support)};
    return {std::move(a), std::move(b)};
}

AttentionGroup stage2_group(const AttentionSet& enhanced_a, const AttentionSet& enhanced_b) {
    AttentionSet mixed = concat_sets(enhanced_a, enhanced_b);
    return {mixed, mixed};
}

HeadParams default_init_head(const StcaConfig& config, int classes, std::uint64_t seed) {
    if (classes <= 0) throw ConfigError("head needs at least one foreground class");
    Rng rng(seed);
    HeadParams h;
    h.weights = Matrix(static_cast<std::size_t>(config.d_v),
                       static_cast<std::size_t>(classes + 1));
    for (double& x : h.weights.flat()) x = rng.gaussian(0.0, 0.01);
    h.bias.assign(static_cast<std::size_t>(classes + 1), 0.0);
    return h;
}

Matrix head_forward(const Matrix& features, const HeadParams& head) {
    if (features.cols() != head.weights.rows()) {
        throw std::invalid_argument("head_forward: feature width does not match head");
    }
    Matrix logits = matmul(features, head.weights);
    for (std::size_t r = 0; r < logits.rows(); ++r) {
        for (std::size_t c = 0; c < logits.cols(); ++c) logits(r, c) += head.bias[c];
    }
    return logits;
}

StcaParams zero_like_params(const StcaParams& p) {
    StcaParams z;
    z.w_q = Matrix(p.w_q.rows(), p.w_q.cols());
    z.w_k = Matrix(p.w_k.rows(), p.w_k.cols());
    z.w_s.assign(p.w_s.size(), 0.0);
    z.w_t = Matrix(p.w_t.rows(), p.w_t.cols());
    if (!p.w_q_t.empty()) z.w_q_t = Matrix(p.w_q_t.rows(), p.w_q_t.cols());
    return z;
}

HeadParams zero_like_head(const HeadParams& h) {
    HeadParams z;
    z.weights = Matrix(h.weights.rows(), h.weights.cols());
    z.bias.assign(h.bias.size(), 0.0);
    return z;
}

TripletGrads triplet_loss_and_grads(const TrainingTriplet& triplet, const StcaParams& stage1,
                                    const StcaParams& stage2, const HeadParams& head,
                                    const StcaConfig& config, bool use_stca) {
    const std::size_t n = triplet.key_a.proposals.size();
    if (triplet.labels_a.size() != n || triplet.labels_b.size() != triplet.key_b.proposals.size()) {
        throw DataError("triplet lacks labels for its key frames");
    }

    std::vector<int> labels = triplet.labels_a;
    labels.insert(labels.end(), triplet.labels_b.begin(), triplet.labels_b.end());

    TripletGrads out;
    out.stage1 = zero_like_params(stage1);
    out.stage2 = zero_like_params(stage2);

    if (!use_stca) {
        const AttentionSet key_a = make_attention_set(triplet.key_a, config);
        const AttentionSet key_b = make_attention_set(triplet.key_b, config);
        const Matrix features = vstack(key_a.features, key_b.features);
        const Matrix logits = head_forward(features, head);
        const CeResult ce = softmax_cross_entropy(logits, labels);
        out.loss = ce.loss;
        out.head.weights = matmul_at(features, ce.dlogits);
        out.head.bias.assign(head.bias.size(), 0.0);
        for (std::size_t r = 0; r < ce.dlogits.rows(); ++r)
            for (std::size_t c = 0; c < ce.dlogits.cols(); ++c)
                out.head.bias[c] += ce.dlogits(r, c);
        return out;
    }

    auto [group_a, group_b] = stage1_groups(triplet, config);
    auto [out_a, cache_a] = stca_forward(group_a.targets, group_a.candidates, stage1, config);
    auto [out_b, cache_b] = stca_forward(group_b.targets, group_b.candidates, stage1, config);

    AttentionSet enhanced_a{std::move(out_a), group_a.targets.boxes, group_a.targets.frames};
    AttentionSet enhanced_b{std::move(out_b), group_b.targets.boxes, group_b.targets.frames};
    const AttentionGroup mixed = stage2_group(enhanced_a, enhanced_b);

    auto [out2, cache2] = stca_forward(mixed.targets, mixed.candidates, stage2, config);
    const Matrix logits = head_forward(out2, head);
    const CeResult ce = softmax_cross_entropy(logits, labels);
    out.loss = ce.loss;

    // head backward
    out.head.weights = matmul_at(out2, ce.dlogits);
    out.head.bias.assign(head.bias.size(), 0.0);
    for (std::size_t r = 0; r < ce.dlogits.rows(); ++r)
        for (std::size_t c = 0; c < ce.dlogits.cols(); ++c) out.head.bias[c] += ce.dlogits(r, c);
    const Matrix d_out2 = matmul_bt(ce.dlogits, head.weights);

    // stage 2 backward; its targets and candidates alias the same rows
    const StcaGrads g2 = stca_backward(cache2, d_out2);
    out.stage2 = grads_to_params(g2);
    Matrix d_enhanced = g2.targets;
    add_inplace(d_enhanced, g2.candidates);

    Matrix d_a(enhanced_a.size(), d_enhanced.cols());
    Matrix d_b(enhanced_b.size(), d_enhanced.cols());
    for (std::size_t i = 0; i < enhanced_a.size(); ++i)
        for (std::size_t c = 0; c < d_enhanced.cols(); ++c) d_a(i, c) = d_enhanced(i, c);
    for (std::size_t i = 0; i < enhanced_b.size(); ++i)
        for (std::size_t c = 0; c < d_enhanced.cols(); ++c)
            d_b(i, c) = d_enhanced(enhanced_a.size() + i, c);

    // stage 1 backward; both groups update the same parameter store
    const StcaGrads ga = stca_backward(cache_a, d_a);
    const StcaGrads gb = stca_backward(cache_b, d_b);
    out.stage1 = grads_to_params(ga);
    add_params(out.stage1, grads_to_params(gb));
    return out;
}

double learning_rate_at(const TrainerConfig& cfg, int step) {
    return step >= cfg.lr_drop_step ? cfg.lr * cfg.lr_drop_factor : cfg.lr;
}

std::vector<ParamBlockRef> stca_param_blocks(StcaParams& p, const std::string& prefix) {
    std::vector<ParamBlockRef> blocks;
    blocks.push_back({prefix + ".w_q", p.w_q.flat().data(), p.w_q.size(), true});
    blocks.push_back({prefix + ".w_k", p.w_k.flat().data(), p.w_k.size(), true});
    blocks.push_back({prefix + ".w_s", p.w_s.data(), p.w_s.size(), true});
    blocks.push_back({prefix + ".w_t", p.w_t.flat().data(), p.w_t.size(), true});
    if (!p.w_q_t.empty()) {
        blocks.push_back({prefix + ".w_q_t", p.w_q_t.flat().data(), p.w_q_t.size(), true});
    }
    return blocks;
}

std::vector<ParamBlockRef> head_param_blocks(HeadParams& h) {
    std::vector<ParamBlockRef> blocks;
    blocks.push_back({"head.weights", h.weights.flat().data(), h.weights.size(), true});
    blocks.push_back({"head.bias", h.bias.data(), h.bias.size(), false});
    return blocks;
}

void SgdOptimizer::step(std::span<const ParamBlockRef> params,
                        std::span<const ParamBlockRef> grads, double lr) {
    if (params.size() != grads.size()) {
        throw std::invalid_argument("optimizer: parameter/gradient block mismatch");
    }
    if (velocity_.empty()) {
        velocity_.resize(params.size());
        for (std::size_t b = 0; b < params.size(); ++b) {
            velocity_[b].assign(params[b].size, 0.0);
        }
    }
    for (std::size_t b = 0; b < params.size(); ++b) {
        if (params[b].size != grads[b].size || velocity_[b].size() != params[b].size) {
            throw std::invalid_argument("optimizer: block " + params[b].name + " size changed");
        }
        const double wd = params[b].decay ? weight_decay_ : 0.0;
        double* value = params[b].data;
        const double* grad = grads[b].data;
        auto& vel = velocity_[b];
        for (std::size_t i = 0; i < params[b].size; ++i) {
            const double g = grad[i] + wd * value[i];
            vel[i] = momentum_ * vel[i] + g;
            value[i] -= lr * vel[i];
        }
    }
}

double train_step(const TrainingTriplet& triplet, StcaParams& stage1, StcaParams& stage2,
                  HeadParams& head, SgdOptimizer& opt, double lr, const StcaConfig& config,
                  bool use_stca) {
    TripletGrads grads = triplet_loss_and_grads(triplet, stage1, stage2, head, config, use_stca);
    if (!std::isfinite(grads.loss)) {
        throw NumericError("training loss is not finite");
    }
    std::vector<ParamBlockRef> params = stca_param_blocks(stage1, "stage1");
    auto p2 = stca_param_blocks(stage2, "stage2");
    params.insert(params.end(), p2.begin(), p2.end());
    auto ph = head_param_blocks(head);
    params.insert(params.end(), ph.begin(), ph.end());

    std::vector<ParamBlockRef> gblocks = stca_param_blocks(grads.stage1, "stage1");
    auto g2 = stca_param_blocks(grads.stage2, "stage2");
    gblocks.insert(gblocks.end(), g2.begin(), g2.end());
    auto gh = head_param_blocks(grads.head);
    gblocks.insert(gblocks.end(), gh.begin(), gh.end());

    opt.step(params, gblocks, lr);
    return grads.loss;
}

TrainResult run_training(const Dataset& data, const StcaConfig& config,
                         const TrainerConfig& trainer, int classes, bool use_stca) {
    if (data.videos.empty()) throw DataError("run_training: empty dataset");
    TrainResult result;
    result.stage1 = default_init_params(config, trainer.seed);
    result.stage2 = default_init_params(config, trainer.seed + 1);
    result.head = default_init_head(config, classes, trainer.seed + 2);

    SgdOptimizer opt(trainer.momentum, trainer.weight_decay);
    Rng rng(trainer.seed + 3);
    result.loss_log.reserve(static_cast<std::size_t>(trainer.steps));
    for (int step = 0; step < trainer.steps; ++step) {
        const auto& video = data.videos[static_cast<std::size_t>(
            rng.uniform_int(0, static_cast<long long>(data.videos.size()) - 1))];
        const TrainingTriplet triplet = sample_triplet(video.frames, rng, config);
        const double lr = learning_rate_at(trainer, step);
        const double loss =
            train_step(triplet, result.stage1, result.stage2, result.head, opt, lr, config,
                       use_stca);
        result.loss_log.emplace_back(step, loss);
    }
    return result;
}

// ----- inference -----

bool FeatureBuffer::has(int pos, Generation g) const {
    const auto& store = (g == Generation::raw) ? raw_ : enhanced_;
    return store.contains(pos);
}

void FeatureBuffer::put(int pos, Generation g, AttentionSet set) {
    if (g == Generation::enhanced && !raw_.contains(pos)) {
        throw std::logic_error("feature buffer: enhanced entry without raw entry at position " +
                               std::to_string(pos));
    }
    auto& store = (g == Generation::raw) ? raw_ : enhanced_;
    store.insert_or_assign(pos, std::move(set));
}

const AttentionSet& FeatureBuffer::get(int pos, Generation g) const {
    if (g == Generation::raw && stage3_guard_ && enhanced_.contains(pos)) {
        throw std::logic_error("feature buffer: stage-3 read of raw features at position " +
                               std::to_string(pos) + " which already holds enhanced features");
    }
    const auto& store = (g == Generation::raw) ? raw_ : enhanced_;
    const auto it = store.find(pos);
    if (it == store.end()) {
        throw std::logic_error("feature buffer: missing entry at position " +
                               std::to_string(pos));
    }
    return it->second;
}

namespace {

AttentionSet gather_window(const FeatureBuffer& buf, int lo, int hi, Generation g) {
    AttentionSet out = buf.get(lo, g);
    for (int p = lo + 1; p <= hi; ++p) out = concat_sets(out, buf.get(p, g));
    return out;
}

std::vector<std::vector<AttentionPair>> top_attention_pairs(const Matrix& weights,
                                                            const FeatureBuffer& buf, int lo,
                                                            int n_per_frame, int top_k) {
    std::vector<std::vector<AttentionPair>> out(weights.rows());
    for (std::size_t i = 0; i < weights.rows(); ++i) {
        std::vector<AttentionPair> pairs;
        pairs.reserve(weights.cols());
        for (std::size_t j = 0; j < weights.cols(); ++j) {
            const int pos = lo + static_cast<int>(j) / n_per_frame;
            const int index = static_cast<int>(j) % n_per_frame;
            pairs.push_back({buf.get(pos, Generation::enhanced).frames.front(), index,
                             weights(i, j)});
        }
        std::stable_sort(pairs.begin(), pairs.end(),
                         [](const AttentionPair& a, const AttentionPair& b) {
                             return a.weight > b.weight;
                         });
        if (static_cast<int>(pairs.size()) > top_k) pairs.resize(static_cast<std::size_t>(top_k));
        out[i] = std::move(pairs);
    }
    return out;
}

} // namespace

std::vector<FrameDetections> infer_window(std::span<const FrameRecord> sequence,
                                          const StcaParams& stage1, const StcaParams& stage2,
                                          const HeadParams& head, const StcaConfig& config,
                                          const InferOptions& opts) {
    if (sequence.empty()) throw DataError("infer_window: empty sequence");
    const int window = opts.window > 0 ? opts.window : config.window;
    if (window % 2 == 0) throw ConfigError("inference window must be odd");
    StcaConfig cfg = config;
    cfg.window = window;
    cfg.validate();
    for (const FrameRecord& rec : sequence) {
        if (const auto v = validate_frame(rec.frame, cfg); !v) {
            throw DataError("infer_window: " + v.detail);
        }
    }

    const int half = (window - 1) / 2;
    const int last = static_cast<int>(sequence.size()) - 1;
    const int n = cfg.n_proposals;

    FeatureBuffer buf;
    auto ensure_raw = [&](int pos) {
        if (!buf.has(pos, Generation::raw)) {
            const int phys = clamp_index(pos, 0, last);
            buf.put(pos, Generation::raw, make_attention_set(sequence[phys].frame, cfg));
        }
    };
    auto enhance_position = [&](int pos) {
        const AttentionSet& targets = buf.get(pos, Generation::raw);
        const AttentionSet candidates = gather_window(buf, pos - half, pos + half,
                                                      Generation::raw);
        auto [features, cache] = stca_forward(targets, candidates, stage1, cfg);
        return AttentionSet{std::move(features), targets.boxes, targets.frames};
    };

    std::vector<FrameDetections> results;
    results.reserve(sequence.size());

    for (int key = 0; key <= last; ++key) {
        const auto started = std::chrono::steady_clock::now();

        FrameDetections det;
        det.frame_id = sequence[static_cast<std::size_t>(key)].frame.frame_id;

        if (!opts.use_stca) {
            const AttentionSet raw = make_attention_set(sequence[static_cast<std::size_t>(key)].frame, cfg);
            det.posteriors = softmax_rows(head_forward(raw.features, head)).w;
        } else {
            // stage 1: raw features for the receptive field of this key frame
            for (int pos = key - 2 * half; pos <= key + 2 * half; ++pos) ensure_raw(pos);

            // stage 2: enhance every window position not already buffered
            std::vector<int> missing;
            for (int pos = key - half; pos <= key + half; ++pos) {
                if (!buf.has(pos, Generation::enhanced)) missing.push_back(pos);
            }
            if (opts.threads > 1 && missing.size() > 1) {
                std::vector<AttentionSet> computed(missing.size());
                std::vector<std::thread> workers;
                const std::size_t n_workers =
                    std::min<std::size_t>(static_cast<std::size_t>(opts.threads), missing.size());
                for (std::size_t w = 0; w < n_workers; ++w) {
                    workers.emplace_back([&, w]() {
                        for (std::size_t i = w; i < missing.size(); i += n_workers) {
                            computed[i] = enhance_position(missing[i]);
                        }
                    });
                }
                for (auto& t : workers) t.join();
                for (std::size_t i = 0; i < missing.size(); ++i) {
                    buf.put(missing[i], Generation::enhanced, std::move(computed[i]));
                }
            } else {
                for (int pos : missing) {
                    buf.put(pos, Generation::enhanced, enhance_position(pos));
                }
            }

            // stage 3: attend over enhanced features only
            buf.set_stage3_guard(true);
            const AttentionSet& targets = buf.get(key, Generation::enhanced);
            const AttentionSet candidates = gather_window(buf, key - half, key + half,
                                                          Generation::enhanced);
            auto [features, cache] = stca_forward(targets, candidates, stage2, cfg);
            buf.set_stage3_guard(false);

            det.posteriors = softmax_rows(head_forward(features, head)).w;
            if (opts.dump_attention > 0) {
                det.attention = top_attention_pairs(cache.weights, buf, key - half, n,
                                                    opts.dump_attention);
            }
        }

        det.labels.resize(det.posteriors.rows());
        for (std::size_t r = 0; r < det.posteriors.rows(); ++r) {
            const auto row = det.posteriors.row(r);
            det.labels[r] = static_cast<int>(
                std::max_element(row.begin(), row.end()) - row.begin());
        }
        results.push_back(std::move(det));

        if (opts.frame_times_ms) {
            const auto elapsed = std::chrono::steady_clock::now() - started;
            opts.frame_times_ms->push_back(
                std::chrono::duration<double, std::milli>(elapsed).count());
        }
    }
    return results;
}

std::vector<FrameRecord> pad_boundary(std::span<const FrameRecord> sequence, int lo, int hi) {
    if (sequence.empty()) throw DataError("pad_boundary: empty sequence");
    if (lo > hi) throw std::invalid_argument("pad_boundary: lo > hi");
    std::vector<FrameRecord> out;
    out.reserve(static_cast<std::size_t>(hi - lo + 1));
    const int last = static_cast<int>(sequence.size()) - 1;
    for (int pos = lo; pos <= hi; ++pos) {
        out.push_back(sequence[static_cast<std::size_t>(clamp_index(pos, 0, last))]);
    }
    return out;
}

} // namespace stca
