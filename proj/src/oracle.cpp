#include "stca/oracle.hpp"

#include "stca/rng.hpp"

#include <json.hpp>

#include <chrono>
#include <cmath>
#include <map>
#include <stdexcept>

namespace stca::oracle {

namespace {

// row-vector times matrix, scalar loops
std::vector<double> vec_mat(std::span<const double> v, const Matrix& m) {
    std::vector<double> out(m.cols(), 0.0);
    for (std::size_t a = 0; a < v.size(); ++a) {
        for (std::size_t b = 0; b < m.cols(); ++b) out[b] += v[a] * m(a, b);
    }
    return out;
}

double dot(std::span<const double> a, std::span<const double> b) {
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
    return acc;
}

std::vector<double> sinusoid_scalar(double r, int dim, double base) {
    std::vector<double> out(static_cast<std::size_t>(dim));
    for (int z = 0; z < dim / 2; ++z) {
        const double arg = r / std::pow(base, static_cast<double>(2 * z) / dim);
        out[static_cast<std::size_t>(2 * z)] = std::sin(arg);
        out[static_cast<std::size_t>(2 * z + 1)] = std::cos(arg);
    }
    return out;
}

} // namespace

Matrix naive_stca(const AttentionSet& targets, const AttentionSet& candidates,
                  const StcaParams& params, const StcaConfig& config) {
    if (candidates.size() == 0) {
        throw std::invalid_argument("naive_stca: empty candidate set");
    }
    const std::size_t n = targets.size();
    const std::size_t m = candidates.size();
    const auto d = static_cast<std::size_t>(config.d_v);
    const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(config.d_v));
    const bool spatial_active = config.variant != Variant::semantic;
    const bool temporal_active = config.variant == Variant::full;

    std::vector<std::vector<double>> q(n), qt(n), k(m);
    for (std::size_t i = 0; i < n; ++i) {
        q[i] = vec_mat(targets.features.row(i), params.w_q);
        if (temporal_active) {
            qt[i] = config.share_query ? q[i]
                                       : vec_mat(targets.features.row(i), params.w_q_t);
        }
    }
    for (std::size_t j = 0; j < m; ++j) {
        k[j] = vec_mat(candidates.features.row(j), params.w_k);
    }

    Matrix out(n, d);
    std::vector<double> logits(m);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < m; ++j) {
            double e = dot(q[i], k[j]) * inv_sqrt_d;
            if (spatial_active) {
                const BoundingBox& bi = targets.boxes[i];
                const BoundingBox& bj = candidates.boxes[j];
                const double r[4] = {
                    std::log(std::max(std::fabs(bi.cx - bj.cx) / bj.w, config.eps_geom)),
                    std::log(std::max(std::fabs(bi.cy - bj.cy) / bj.h, config.eps_geom)),
                    std::log(bi.w / bj.w),
                    std::log(bi.h / bj.h),
                };
                double e_s = 0.0;
                std::size_t c = 0;
                for (double rv : r) {
                    for (int z = 0; z < config.d_phi / 2; ++z) {
                        const double arg =
                            rv / std::pow(config.sinusoid_base,
                                          static_cast<double>(2 * z) / config.d_phi);
                        e_s += std::sin(arg) * params.w_s[c++];
                        e_s += std::cos(arg) * params.w_s[c++];
                    }
                }
                e += std::log(std::max(e_s, config.eps_spatial));
            }
            if (temporal_active) {
                long long tau = static_cast<long long>(candidates.frames[j]) -
                                static_cast<long long>(targets.frames[i]);
                if (!config.signed_tau) tau = std::llabs(tau);
                const auto phi = sinusoid_scalar(static_cast<double>(tau), config.d_v,
                                                 config.sinusoid_base);
                const auto psi = vec_mat(phi, params.w_t);
                e += dot(qt[i], psi) * inv_sqrt_d;
            }
            logits[j] = e;
        }

        double mx = logits[0];
        for (double v : logits) mx = std::max(mx, v);
        double sum = 0.0;
        for (double v : logits) sum += std::exp(v - mx);
        for (std::size_t a = 0; a < d; ++a) {
            double acc = targets.features(i, a);
            for (std::size_t j = 0; j < m; ++j) {
                acc += std::exp(logits[j] - mx) / sum * candidates.features(j, a);
            }
            out(i, a) = acc;
        }
    }
    return out;
}

std::vector<double> fd_gradient(const std::function<double(std::span<const double>)>& loss,
                                std::span<const double> theta, double h) {
    std::vector<double> point(theta.begin(), theta.end());
    std::vector<double> grad(theta.size(), 0.0);
    for (std::size_t i = 0; i < point.size(); ++i) {
        const double saved = point[i];
        point[i] = saved + h;
        const double up = loss(point);
        point[i] = saved - h;
        const double down = loss(point);
        point[i] = saved;
        if (!std::isfinite(up) || !std::isfinite(down)) {
            throw NumericError("fd_gradient: non-finite loss at coordinate " +
                               std::to_string(i));
        }
        grad[i] = (up - down) / (2.0 * h);
    }
    return grad;
}

std::vector<FrameDetections> naive_infer(std::span<const FrameRecord> sequence,
                                         const StcaParams& stage1, const StcaParams& stage2,
                                         const HeadParams& head, const StcaConfig& config,
                                         int window_override) {
    if (sequence.empty()) throw DataError("naive_infer: empty sequence");
    const int window = window_override > 0 ? window_override : config.window;
    if (window % 2 == 0) throw ConfigError("inference window must be odd");
    StcaConfig cfg = config;
    cfg.window = window;
    const int half = (window - 1) / 2;
    const int last = static_cast<int>(sequence.size()) - 1;

    auto raw_at = [&](int pos) {
        const int phys = std::min(std::max(pos, 0), last);
        return make_attention_set(sequence[static_cast<std::size_t>(phys)].frame, cfg);
    };
    auto concat = [&](const std::vector<AttentionSet>& sets) {
        AttentionSet out;
        std::size_t total = 0;
        for (const auto& s : sets) total += s.size();
        out.features = Matrix(total, static_cast<std::size_t>(cfg.d_v));
        std::size_t row = 0;
        for (const auto& s : sets) {
            for (std::size_t i = 0; i < s.size(); ++i, ++row) {
                for (std::size_t c = 0; c < out.features.cols(); ++c) {
                    out.features(row, c) = s.features(i, c);
                }
                out.boxes.push_back(s.boxes[i]);
                out.frames.push_back(s.frames[i]);
            }
        }
        return out;
    };

    std::vector<FrameDetections> results;
    results.reserve(sequence.size());
    for (int key = 0; key <= last; ++key) {
        // fresh buffers each key frame: enhance every window position
        std::vector<AttentionSet> enhanced;
        for (int pos = key - half; pos <= key + half; ++pos) {
            const AttentionSet targets = raw_at(pos);
            std::vector<AttentionSet> cands;
            for (int c = pos - half; c <= pos + half; ++c) cands.push_back(raw_at(c));
            AttentionSet e = targets;
            e.features = naive_stca(targets, concat(cands), stage1, cfg);
            enhanced.push_back(std::move(e));
        }
        const AttentionSet& key_set = enhanced[static_cast<std::size_t>(half)];
        const Matrix final_features = naive_stca(key_set, concat(enhanced), stage2, cfg);

        FrameDetections det;
        det.frame_id = sequence[static_cast<std::size_t>(key)].frame.frame_id;
        det.posteriors = Matrix(final_features.rows(), head.bias.size());
        det.labels.resize(final_features.rows());
        for (std::size_t r = 0; r < final_features.rows(); ++r) {
            std::vector<double> logits(head.bias.size());
            for (std::size_t c = 0; c < logits.size(); ++c) {
                double acc = head.bias[c];
                for (std::size_t a = 0; a < final_features.cols(); ++a) {
                    acc += final_features(r, a) * head.weights(a, c);
                }
                logits[c] = acc;
            }
            double mx = logits[0];
            for (double v : logits) mx = std::max(mx, v);
            double sum = 0.0;
            for (double v : logits) sum += std::exp(v - mx);
            std::size_t best = 0;
            for (std::size_t c = 0; c < logits.size(); ++c) {
                det.posteriors(r, c) = std::exp(logits[c] - mx) / sum;
                if (det.posteriors(r, c) > det.posteriors(r, best)) best = c;
            }
            det.labels[r] = static_cast<int>(best);
        }
        results.push_back(std::move(det));
    }
    return results;
}

// ----- gradient checking -----

std::vector<GradCheckCase> default_gradcheck_cases(std::uint64_t base_seed) {
    std::vector<GradCheckCase> cases;
    std::uint64_t seed = base_seed;
    for (int d_v : {4, 8, 16}) {
        for (int n_targets : {1, 3}) {
            for (int n_candidates : {2, 6, 10}) {
                cases.push_back({seed++, d_v, 4, n_targets, n_candidates, Variant::full, true});
            }
        }
    }
    // split query projection exercises the second w_q pathway separately
    cases.push_back({seed++, 8, 4, 3, 6, Variant::full, false});
    cases.push_back({seed++, 16, 4, 1, 10, Variant::full, false});
    // reduced variants keep the dropped-term gradients at exactly zero
    cases.push_back({seed++, 8, 4, 3, 6, Variant::semantic, true});
    cases.push_back({seed++, 8, 4, 3, 6, Variant::spatial, true});
    return cases;
}

namespace {

struct CaseSetup {
    StcaConfig config;
    StcaParams params;
    AttentionSet targets;
    AttentionSet candidates;
    Matrix upstream;
};

CaseSetup build_case(const GradCheckCase& c) {
    CaseSetup s;
    s.config.d_v = c.d_v;
    s.config.d_phi = c.d_phi;
    s.config.variant = c.variant;
    s.config.share_query = c.share_query;

    Rng rng(c.seed * 0x9e3779b9ULL + 17);
    const auto d = static_cast<std::size_t>(c.d_v);

    auto random_set = [&](int count, int frame_lo, int frame_hi) {
        AttentionSet set;
        set.features = Matrix(static_cast<std::size_t>(count), d);
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
    };
    s.targets = random_set(c.n_targets, -1, 1);
    s.candidates = random_set(c.n_candidates, -3, 3);

    // moderate parameter scale keeps the softmax away from saturation
    auto fill = [&](Matrix& m) {
        m = Matrix(d, d);
        for (double& x : m.flat()) x = rng.gaussian(0.0, 0.3);
    };
    fill(s.params.w_q);
    fill(s.params.w_k);
    s.params.w_s.resize(static_cast<std::size_t>(4 * c.d_phi));
    fill(s.params.w_t);
    if (!c.share_query) fill(s.params.w_q_t);

    // Central differences lose accuracy where the fused log is steep, so
    // condition the spatial logits: resample w_s until every pair sits
    // clear of (-0.05, 0.05) around the clamp and at least a third of the
    // pairs stay on the differentiable branch.
    const bool spatial_active = c.variant != Variant::semantic;
    for (int attempt = 0;; ++attempt) {
        for (double& x : s.params.w_s) x = rng.gaussian(0.0, 0.3);
        if (!spatial_active) break;
        const Matrix e_s =
            spatial_logits(s.targets.boxes, s.candidates.boxes, s.params.w_s, s.config);
        std::size_t positive = 0;
        bool clear = true;
        for (double v : e_s.flat()) {
            if (v > -0.05 && v < 0.05) clear = false;
            if (v >= 0.05) ++positive;
        }
        if (clear && positive * 3 >= e_s.size()) break;
        if (attempt > 1000) {
            throw NumericError("gradcheck case conditioning failed for seed " +
                               std::to_string(c.seed));
        }
    }

    s.upstream = Matrix(static_cast<std::size_t>(c.n_targets), d);
    for (double& x : s.upstream.flat()) x = rng.gaussian();
    return s;
}

double linear_loss(const Matrix& out, const Matrix& upstream) {
    double acc = 0.0;
    for (std::size_t i = 0; i < out.rows(); ++i) {
        for (std::size_t j = 0; j < out.cols(); ++j) acc += out(i, j) * upstream(i, j);
    }
    return acc;
}

struct BlockAccumulator {
    std::map<std::string, GradBlockReport> blocks;

    void record(const std::string& name, std::size_t case_index,
                std::span<const double> analytic, std::span<const double> numeric,
                const GradCheckOptions& opts) {
        GradBlockReport& b = blocks.try_emplace(name, GradBlockReport{name}).first->second;
        // rel < tolerance then means |a - f| < max(tol |a|, tol |f|, abs_floor):
        // near-zero gradients are held to the absolute floor instead of a
        // relative bound they cannot meet under finite-difference noise
        const double zero_band = opts.abs_floor / opts.tolerance;
        for (std::size_t i = 0; i < analytic.size(); ++i) {
            const double abs_err = std::fabs(analytic[i] - numeric[i]);
            const double denom =
                std::max({std::fabs(analytic[i]), std::fabs(numeric[i]), zero_band});
            const double rel_err = abs_err / denom;
            ++b.checked;
            if (rel_err > b.max_rel_err) {
                b.max_rel_err = rel_err;
                b.max_abs_err = abs_err;
                b.worst_case = case_index;
                b.worst_index = i;
            }
        }
    }

    void exclude(const std::string& name, std::size_t count) {
        GradBlockReport& b = blocks.try_emplace(name, GradBlockReport{name}).first->second;
        b.excluded += count;
    }
};

} // namespace

GradCheckReport run_gradcheck(std::span<const GradCheckCase> cases,
                              const GradCheckOptions& opts) {
    const auto started = std::chrono::steady_clock::now();
    BlockAccumulator acc;

    for (std::size_t ci = 0; ci < cases.size(); ++ci) {
        CaseSetup setup = build_case(cases[ci]);
        const StcaConfig& config = setup.config;

        auto [out, cache] = stca_forward(setup.targets, setup.candidates, setup.params, config);
        StcaGrads analytic = stca_backward(cache, setup.upstream);

        if (opts.corrupt) {
            auto apply = [&](const std::string& name, std::span<double> block) {
                if (opts.corrupt->block == name && opts.corrupt->index < block.size()) {
                    block[opts.corrupt->index] += opts.corrupt->delta;
                }
            };
            apply("w_q", analytic.w_q.flat());
            apply("w_k", analytic.w_k.flat());
            apply("w_s", analytic.w_s);
            apply("w_t", analytic.w_t.flat());
            if (!analytic.w_q_t.empty()) apply("w_q_t", analytic.w_q_t.flat());
            apply("targets", analytic.targets.flat());
            apply("candidates", analytic.candidates.flat());
        }

        // skip configurations that sit on the clamp kink; the subgradient
        // there is not comparable against central differences
        bool near_kink = false;
        if (config.variant != Variant::semantic) {
            for (double s : cache.e_s.flat()) {
                if (std::fabs(s - config.eps_spatial) < opts.kink_window) near_kink = true;
            }
        }
        if (near_kink) {
            acc.exclude("w_s", setup.params.w_s.size());
            continue;
        }

        auto loss_with_params = [&](const StcaParams& p) {
            return linear_loss(stca_forward(setup.targets, setup.candidates, p, config).first,
                               setup.upstream);
        };

        auto check_matrix_block = [&](const std::string& name, Matrix StcaParams::*field,
                                      const Matrix& grad) {
            StcaParams probe = setup.params;
            auto loss = [&](std::span<const double> theta) {
                auto flat = (probe.*field).flat();
                std::copy(theta.begin(), theta.end(), flat.begin());
                return loss_with_params(probe);
            };
            const auto numeric = fd_gradient(loss, (setup.params.*field).flat(), opts.h);
            acc.record(name, ci, grad.flat(), numeric, opts);
        };

        check_matrix_block("w_q", &StcaParams::w_q, analytic.w_q);
        check_matrix_block("w_k", &StcaParams::w_k, analytic.w_k);
        check_matrix_block("w_t", &StcaParams::w_t, analytic.w_t);
        if (!config.share_query) {
            check_matrix_block("w_q_t", &StcaParams::w_q_t, analytic.w_q_t);
        }
        {
            StcaParams probe = setup.params;
            auto loss = [&](std::span<const double> theta) {
                std::copy(theta.begin(), theta.end(), probe.w_s.begin());
                return loss_with_params(probe);
            };
            const auto numeric = fd_gradient(loss, setup.params.w_s, opts.h);
            acc.record("w_s", ci, analytic.w_s, numeric, opts);
        }
        {
            AttentionSet probe = setup.targets;
            auto loss = [&](std::span<const double> theta) {
                std::copy(theta.begin(), theta.end(), probe.features.flat().begin());
                return linear_loss(
                    stca_forward(probe, setup.candidates, setup.params, config).first,
                    setup.upstream);
            };
            const auto numeric = fd_gradient(loss, setup.targets.features.flat(), opts.h);
            acc.record("targets", ci, analytic.targets.flat(), numeric, opts);
        }
        {
            AttentionSet probe = setup.candidates;
            auto loss = [&](std::span<const double> theta) {
                std::copy(theta.begin(), theta.end(), probe.features.flat().begin());
                return linear_loss(
                    stca_forward(setup.targets, probe, setup.params, config).first,
                    setup.upstream);
            };
            const auto numeric = fd_gradient(loss, setup.candidates.features.flat(), opts.h);
            acc.record("candidates", ci, analytic.candidates.flat(), numeric, opts);
        }
    }

    GradCheckReport report;
    report.tolerance = opts.tolerance;
    report.h = opts.h;
    report.cases = cases.size();
    report.pass = true;
    for (auto& [name, block] : acc.blocks) {
        block.pass = block.max_rel_err < opts.tolerance;
        report.max_rel_err = std::max(report.max_rel_err, block.max_rel_err);
        report.pass = report.pass && block.pass;
        report.blocks.push_back(block);
    }
    report.elapsed_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    return report;
}

std::string to_text(const GradCheckReport& report) {
    std::string out;
    out += "gradient check: " + std::to_string(report.cases) + " cases, h=" +
           std::to_string(report.h) + ", tolerance=" + std::to_string(report.tolerance) + "\n";
    char line[256];
    for (const auto& b : report.blocks) {
        std::snprintf(line, sizeof(line),
                      "  %-10s max_rel=%.3e max_abs=%.3e worst=case %zu idx %zu checked=%zu "
                      "excluded=%zu %s\n",
                      b.name.c_str(), b.max_rel_err, b.max_abs_err, b.worst_case, b.worst_index,
                      b.checked, b.excluded, b.pass ? "ok" : "FAIL");
        out += line;
    }
    std::snprintf(line, sizeof(line), "  overall max_rel=%.3e elapsed=%.2fs -> %s\n",
                  report.max_rel_err, report.elapsed_seconds,
                  report.pass ? "PASS" : "FAIL");
    out += line;
    return out;
}

std::string to_json_string(const GradCheckReport& report) {
    nlohmann::json j;
    j["tolerance"] = report.tolerance;
    j["h"] = report.h;
    j["cases"] = report.cases;
    j["max_rel_err"] = report.max_rel_err;
    j["pass"] = report.pass;
    j["elapsed_seconds"] = report.elapsed_seconds;
    j["blocks"] = nlohmann::json::array();
    for (const auto& b : report.blocks) {
        j["blocks"].push_back({{"name", b.name},
                               {"max_abs_err", b.max_abs_err},
                               {"max_rel_err", b.max_rel_err},
                               {"worst_case", b.worst_case},
                               {"worst_index", b.worst_index},
                               {"checked", b.checked},
                               {"excluded", b.excluded},
                               {"pass", b.pass}});
    }
    return j.dump(2);
}

GradCheckReport gradcheck_from_json_string(const std::string& text) {
    const auto j = nlohmann::json::parse(text);
    GradCheckReport report;
    report.tolerance = j.at("tolerance").get<double>();
    report.h = j.at("h").get<double>();
    report.cases = j.at("cases").get<std::size_t>();
    report.max_rel_err = j.at("max_rel_err").get<double>();
    report.pass = j.at("pass").get<bool>();
    report.elapsed_seconds = j.at("elapsed_seconds").get<double>();
    for (const auto& e : j.at("blocks")) {
        GradBlockReport b;
        b.name = e.at("name").get<std::string>();
        b.max_abs_err = e.at("max_abs_err").get<double>();
        b.max_rel_err = e.at("max_rel_err").get<double>();
        b.worst_case = e.at("worst_case").get<std::size_t>();
        b.worst_index = e.at("worst_index").get<std::size_t>();
        b.checked = e.at("checked").get<std::size_t>();
        b.excluded = e.at("excluded").get<std::size_t>();
        b.pass = e.at("pass").get<bool>();
        report.blocks.push_back(std::move(b));
    }
    return report;
}

} // namespace stca::oracle
