#include "stca/commands.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <iostream>
#include <sstream>

namespace stca::cmd {

namespace {

struct VariantChoice {
    bool use_stca = true;
    Variant variant = Variant::full;
    bool force_window_one = false;
};

VariantChoice variant_choice(char letter) {
    switch (letter) {
        case 'a': return {false, Variant::full, true};
        case 'b': return {true, Variant::semantic, true};
        case 'c': return {true, Variant::semantic, false};
        case 'd': return {true, Variant::spatial, false};
        case 'e': return {true, Variant::full, false};
        default: throw ConfigError(std::string("unknown variant '") + letter + "' (a..e)");
    }
}

std::vector<VideoDetections> infer_dataset(const Dataset& data, const Checkpoint& ckpt,
                                           const StcaConfig& config, const InferOptions& opts,
                                           bool naive) {
    std::vector<VideoDetections> out;
    out.reserve(data.videos.size());
    for (const VideoRecord& video : data.videos) {
        VideoDetections vd;
        vd.video_id = video.video_id;
        if (naive && opts.use_stca) {
            vd.frames = oracle::naive_infer(video.frames, ckpt.stage1, ckpt.stage2, ckpt.head,
                                            config, opts.window);
        } else {
            vd.frames = infer_window(video.frames, ckpt.stage1, ckpt.stage2, ckpt.head, config,
                                     opts);
        }
        out.push_back(std::move(vd));
    }
    return out;
}

double evaluate_on(const Dataset& eval_data, const Checkpoint& ckpt, const StcaConfig& config,
                   const InferOptions& opts) {
    const auto detections = infer_dataset(eval_data, ckpt, config, opts, false);
    return evaluate_accuracy(detections, eval_data).accuracy;
}

} // namespace

void gen(const std::string& config_path, std::optional<std::uint64_t> seed,
         const std::string& out_path) {
    const RunConfig cfg = parse_run_config(config_path);
    const Dataset data =
        generate_synthetic(cfg.stca, cfg.gen, seed.value_or(cfg.trainer.seed));
    write_dataset(data, out_path);
}

TrainOutcome train(const std::string& config_path, const std::string& data_path,
                   const std::string& params_out, std::optional<char> variant,
                   std::optional<std::uint64_t> seed) {
    RunConfig cfg = parse_run_config(config_path);
    if (seed) cfg.trainer.seed = *seed;
    bool use_stca = true;
    if (variant) {
        const VariantChoice choice = variant_choice(*variant);
        use_stca = choice.use_stca;
        cfg.stca.variant = choice.variant;
    }

    Dataset data = parse_dataset(data_path);
    validate_dataset(data, cfg.stca);

    const TrainResult result =
        run_training(data, cfg.stca, cfg.trainer, cfg.gen.classes, use_stca);

    Checkpoint ckpt;
    ckpt.config = cfg.stca;
    ckpt.classes = cfg.gen.classes;
    ckpt.head_only = !use_stca;
    ckpt.stage1 = result.stage1;
    ckpt.stage2 = result.stage2;
    ckpt.head = result.head;
    save_checkpoint(ckpt, params_out);

    std::ostringstream csv;
    csv << "step,lr,loss\n";
    for (const auto& [step, loss] : result.loss_log) {
        csv << step << "," << learning_rate_at(cfg.trainer, step) << "," << loss << "\n";
    }
    TrainOutcome outcome;
    outcome.checkpoint_path = params_out;
    outcome.loss_csv_path = params_out + ".loss.csv";
    write_text_file(outcome.loss_csv_path, csv.str());
    if (!result.loss_log.empty()) {
        outcome.initial_loss = result.loss_log.front().second;
        outcome.final_loss = result.loss_log.back().second;
    }
    return outcome;
}

void infer(const std::string& config_path, const std::string& data_path,
           const std::string& params_path, const std::string& out_path,
           const InferCliOptions& cli_opts) {
    const RunConfig cfg = parse_run_config(config_path);
    const Checkpoint ckpt = load_checkpoint(params_path);
    if (ckpt.config.d_v != cfg.stca.d_v || ckpt.config.d_phi != cfg.stca.d_phi ||
        ckpt.config.n_proposals != cfg.stca.n_proposals) {
        throw ConfigError("checkpoint dimensions disagree with the config file");
    }

    StcaConfig config = ckpt.config;
    InferOptions opts;
    opts.threads = cli_opts.threads;
    opts.dump_attention = cli_opts.dump_attention;
    opts.use_stca = !ckpt.head_only;
    if (cli_opts.variant) {
        const VariantChoice choice = variant_choice(*cli_opts.variant);
        opts.use_stca = choice.use_stca;
        config.variant = choice.variant;
        if (choice.force_window_one) opts.window = 1;
    }
    if (cli_opts.window > 0) opts.window = cli_opts.window;

    Dataset data = parse_dataset(data_path);
    validate_dataset(data, config);

    const auto detections =
        infer_dataset(data, ckpt, config, opts, cli_opts.naive_oracle);
    write_detections(detections, out_path);
    if (cli_opts.dump_attention > 0) {
        write_text_file(out_path + ".attention.jsonl", serialize_attention(detections));
    }
}

std::vector<AblateRow> ablate(const std::string& config_path, const std::string& data_path) {
    const RunConfig cfg = parse_run_config(config_path);
    Dataset data = parse_dataset(data_path);
    validate_dataset(data, cfg.stca);
    if (data.videos.size() < 2) {
        throw DataError("ablation needs at least two videos (train/eval split)");
    }

    // hold out the tail videos for evaluation
    const std::size_t eval_count = std::max<std::size_t>(1, data.videos.size() / 4);
    Dataset train_data, eval_data;
    train_data.videos.assign(data.videos.begin(),
                             data.videos.end() - static_cast<std::ptrdiff_t>(eval_count));
    eval_data.videos.assign(data.videos.end() - static_cast<std::ptrdiff_t>(eval_count),
                            data.videos.end());

    auto train_model = [&](Variant variant, bool use_stca) {
        StcaConfig config = cfg.stca;
        config.variant = variant;
        const TrainResult r =
            run_training(train_data, config, cfg.trainer, cfg.gen.classes, use_stca);
        Checkpoint ckpt;
        ckpt.config = config;
        ckpt.classes = cfg.gen.classes;
        ckpt.head_only = !use_stca;
        ckpt.stage1 = r.stage1;
        ckpt.stage2 = r.stage2;
        ckpt.head = r.head;
        return ckpt;
    };
    auto accuracy = [&](const Checkpoint& ckpt, int window, bool use_stca) {
        InferOptions opts;
        opts.window = window;
        opts.use_stca = use_stca;
        StcaConfig config = ckpt.config;
        return evaluate_on(eval_data, ckpt, config, opts);
    };

    const Checkpoint head_only = train_model(cfg.stca.variant, false);
    const Checkpoint semantic = train_model(Variant::semantic, true);
    const Checkpoint spatial = train_model(Variant::spatial, true);
    const Checkpoint full = train_model(Variant::full, true);
    const int window = cfg.stca.window;

    std::vector<AblateRow> rows;
    rows.push_back({'a', false, false, false, 1, accuracy(head_only, 1, false), 74.5});
    rows.push_back({'b', true, false, false, 1, accuracy(semantic, 1, true), 77.4});
    rows.push_back({'c', true, false, false, window, accuracy(semantic, window, true), 79.3});
    rows.push_back({'d', true, true, false, window, accuracy(spatial, window, true), 79.8});
    rows.push_back({'e', true, true, true, window, accuracy(full, window, true), 80.3});
    return rows;
}

std::string ablate_table(const std::vector<AblateRow>& rows) {
    std::ostringstream out;
    out << "variant  semantic  spatial  temporal  T   accuracy  reference-mAP\n";
    char line[160];
    for (const AblateRow& r : rows) {
        std::snprintf(line, sizeof(line), "(%c)      %-9s %-8s %-9s %-3d %.4f    %.1f\n",
                      r.letter, r.semantic ? "yes" : "-", r.spatial ? "yes" : "-",
                      r.temporal ? "yes" : "-", r.window, r.accuracy, r.reference_map);
        out << line;
    }
    return out.str();
}

std::vector<BenchRow> bench(const std::string& config_path, const std::vector<int>& windows,
                            const std::vector<int>& proposal_counts, int measured_runs,
                            int warmup_runs) {
    const RunConfig cfg = parse_run_config(config_path);

    std::vector<BenchRow> rows;
    for (int n : proposal_counts) {
        StcaConfig config = cfg.stca;
        config.n_proposals = n;

        BenchRow row;
        row.n_proposals = n;

        const int total_keys = warmup_runs + measured_runs;
        const StcaParams stage1 = default_init_params(config, 11);
        const StcaParams stage2 = default_init_params(config, 12);
        const HeadParams head = default_init_head(config, cfg.gen.classes, 13);

        auto make_sequence = [&](std::uint64_t seed) {
            Rng rng(seed);
            std::vector<FrameRecord> frames;
            for (int t = 0; t < total_keys; ++t) {
                FrameRecord rec;
                rec.frame.frame_id = t;
                for (int i = 0; i < n; ++i) {
                    Proposal p;
                    p.frame_id = t;
                    p.box.cx = rng.uniform(30.0, 610.0);
                    p.box.cy = rng.uniform(30.0, 330.0);
                    p.box.w = rng.uniform(16.0, 60.0);
                    p.box.h = rng.uniform(16.0, 60.0);
                    p.feature.resize(static_cast<std::size_t>(config.d_v));
                    for (double& x : p.feature) x = rng.gaussian();
                    p.objectness = rng.uniform(0.0, 1.0);
                    rec.frame.proposals.push_back(std::move(p));
                }
                frames.push_back(std::move(rec));
            }
            return frames;
        };
        const auto sequence = make_sequence(1000 + static_cast<std::uint64_t>(n));

        // T = 0 column: aggregation disabled, head on raw proposals
        {
            std::vector<double> times;
            InferOptions opts;
            opts.use_stca = false;
            opts.window = 1;
            opts.frame_times_ms = &times;
            infer_window(sequence, stage1, stage2, head, config, opts);
            std::vector<double> measured(times.begin() + warmup_runs, times.end());
            std::sort(measured.begin(), measured.end());
            row.head_only_ms = measured[measured.size() / 2];
        }

        for (int window : windows) {
            std::vector<double> times;
            InferOptions opts;
            opts.window = window;
            opts.frame_times_ms = &times;
            infer_window(sequence, stage1, stage2, head, config, opts);
            // the first key frame fills both buffers; steady-state key
            // frames do the incremental per-frame work
            std::vector<double> measured(times.begin() + warmup_runs, times.end());
            std::sort(measured.begin(), measured.end());
            row.cells.push_back({window, measured[measured.size() / 2]});
        }
        rows.push_back(std::move(row));
    }
    return rows;
}

std::string bench_table(const std::vector<BenchRow>& rows) {
    std::ostringstream out;
    out << "median per-key-frame runtime in ms (T = 0 is the aggregation-free head)\n";
    out << "T        ";
    if (!rows.empty()) {
        out << "0";
        for (const BenchCell& c : rows.front().cells) out << "\t" << c.window;
    }
    out << "\n";
    char buf[64];
    for (const BenchRow& r : rows) {
        out << "N=" << r.n_proposals << "   ";
        std::snprintf(buf, sizeof(buf), "%.3f", r.head_only_ms);
        out << buf;
        for (const BenchCell& c : r.cells) {
            std::snprintf(buf, sizeof(buf), "\t%.3f", c.median_ms);
            out << buf;
        }
        out << "\n";
    }
    return out.str();
}

oracle::GradCheckReport gradcheck(std::uint64_t seed, const std::string& json_out) {
    const auto cases = oracle::default_gradcheck_cases(seed);
    const auto report = oracle::run_gradcheck(cases);
    if (!json_out.empty()) {
        write_text_file(json_out, oracle::to_json_string(report));
    }
    return report;
}

EvalResult eval(const std::string& detections_path, const std::string& data_path) {
    return evaluate_accuracy_files(detections_path, data_path);
}

std::string eval_table(const EvalResult& result) {
    std::ostringstream out;
    char line[128];
    std::snprintf(line, sizeof(line), "accuracy %.4f (%zu / %zu proposals)\n", result.accuracy,
                  result.correct, result.total);
    out << line;
    out << "class  total  correct  recall\n";
    for (const ClassStats& cs : result.per_class) {
        std::snprintf(line, sizeof(line), "%-6d %-6zu %-8zu %.4f\n", cs.class_id, cs.total,
                      cs.correct, cs.recall);
        out << line;
    }
    return out.str();
}

} // namespace stca::cmd

namespace stca {

int cli_main(int argc, const char* const* argv) {
    CLI::App app{"proposal-level spatio-temporal context aggregation for video detection"};
    app.require_subcommand(1);

    std::string config_path, data_path, params_path, out_path, detections_path;
    std::uint64_t seed = 0;
    bool seed_given = false;
    int window = 0;
    int threads = 1;
    int dump_attention = 0;
    bool naive_oracle = false;
    std::string variant;

    auto add_variant = [&](CLI::App* sub) {
        sub->add_option("--variant", variant, "ablation variant a|b|c|d|e")
            ->check(CLI::IsMember({"a", "b", "c", "d", "e"}));
    };

    CLI::App* sub_gen = app.add_subcommand("gen", "generate a synthetic dataset");
    sub_gen->add_option("--config", config_path, "run config path")->required();
    sub_gen->add_option("--seed", seed, "generator seed")->each([&](const std::string&) {
        seed_given = true;
    });
    sub_gen->add_option("--out", out_path, "dataset output path")->required();

    CLI::App* sub_train = app.add_subcommand("train", "train on a dataset");
    sub_train->add_option("--config", config_path, "run config path")->required();
    sub_train->add_option("--data", data_path, "dataset path")->required();
    sub_train->add_option("--out", out_path, "checkpoint output path")->required();
    sub_train->add_option("--seed", seed, "trainer seed")->each([&](const std::string&) {
        seed_given = true;
    });
    add_variant(sub_train);

    CLI::App* sub_infer = app.add_subcommand("infer", "detect on every key frame");
    sub_infer->add_option("--config", config_path, "run config path")->required();
    sub_infer->add_option("--data", data_path, "dataset path")->required();
    sub_infer->add_option("--params", params_path, "checkpoint path")->required();
    sub_infer->add_option("--out", out_path, "detections output path")->required();
    sub_infer->add_option("--window", window, "inference window T (odd)");
    sub_infer->add_option("--threads", threads, "stage-2 worker threads");
    sub_infer->add_option("--dump-attention", dump_attention,
                          "write top-k dependency pairs per target");
    sub_infer->add_flag("--naive-oracle", naive_oracle,
                        "stateless reference inference instead of buffers");
    add_variant(sub_infer);

    CLI::App* sub_ablate = app.add_subcommand("ablate", "train and score variants a..e");
    sub_ablate->add_option("--config", config_path, "run config path")->required();
    sub_ablate->add_option("--data", data_path, "dataset path")->required();

    CLI::App* sub_bench = app.add_subcommand("bench", "runtime vs window size and proposals");
    sub_bench->add_option("--config", config_path, "run config path")->required();

    CLI::App* sub_gradcheck =
        app.add_subcommand("gradcheck", "analytic vs finite-difference gradients");
    sub_gradcheck->add_option("--seed", seed, "case seed base")->each([&](const std::string&) {
        seed_given = true;
    });
    sub_gradcheck->add_option("--out", out_path, "JSON report path");

    CLI::App* sub_eval = app.add_subcommand("eval", "score detections against ground truth");
    sub_eval->add_option("detections", detections_path, "detections path")->required();
    sub_eval->add_option("--data", data_path, "dataset path")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 1;
    }

    try {
        if (sub_gen->parsed()) {
            cmd::gen(config_path, seed_given ? std::optional(seed) : std::nullopt, out_path);
            std::cout << "dataset written to " << out_path << "\n";
        } else if (sub_train->parsed()) {
            const auto outcome = cmd::train(
                config_path, data_path, out_path,
                variant.empty() ? std::nullopt : std::optional(variant[0]),
                seed_given ? std::optional(seed) : std::nullopt);
            std::cout << "checkpoint written to " << outcome.checkpoint_path << "\n"
                      << "loss " << outcome.initial_loss << " -> " << outcome.final_loss
                      << " (log: " << outcome.loss_csv_path << ")\n";
        } else if (sub_infer->parsed()) {
            cmd::InferCliOptions opts;
            opts.window = window;
            opts.threads = threads;
            opts.dump_attention = dump_attention;
            opts.naive_oracle = naive_oracle;
            if (!variant.empty()) opts.variant = variant[0];
            cmd::infer(config_path, data_path, params_path, out_path, opts);
            std::cout << "detections written to " << out_path << "\n";
        } else if (sub_ablate->parsed()) {
            const auto rows = cmd::ablate(config_path, data_path);
            std::cout << cmd::ablate_table(rows);
        } else if (sub_bench->parsed()) {
            const auto rows = cmd::bench(config_path);
            std::cout << cmd::bench_table(rows);
        } else if (sub_gradcheck->parsed()) {
            const auto report = cmd::gradcheck(seed_given ? seed : 1, out_path);
            std::cout << oracle::to_text(report);
            if (!report.pass) return 3;
        } else if (sub_eval->parsed()) {
            std::cout << cmd::eval_table(cmd::eval(detections_path, data_path));
        }
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 1;
    } catch (const DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 2;
    } catch (const NumericError& e) {
        std::cerr << "numerical failure: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    }
    return 0;
}

} // namespace stca
