#pragma once

#include "stca/dataset.hpp"
#include "stca/oracle.hpp"
#include "stca/synthetic.hpp"

#include <optional>
#include <string>
#include <vector>

namespace stca::cmd {

// subcommand bodies shared by the CLI and the acceptance suite; errors
// surface as ConfigError / DataError / NumericError

void gen(const std::string& config_path, std::optional<std::uint64_t> seed,
         const std::string& out_path);

struct TrainOutcome {
    double initial_loss = 0.0;
    double final_loss = 0.0;
    std::string checkpoint_path;
    std::string loss_csv_path;
};

// variant letter: a = head only, b/c = semantic, d = +spatial, e = full
TrainOutcome train(const std::string& config_path, const std::string& data_path,
                   const std::string& params_out, std::optional<char> variant = {},
                   std::optional<std::uint64_t> seed = {});

struct InferCliOptions {
    int window = 0;         // 0 = checkpoint window
    int dump_attention = 0; // top-k pairs, written next to the output file
    int threads = 1;
    bool naive_oracle = false; // stateless reference path instead of buffers
    std::optional<char> variant;
};

void infer(const std::string& config_path, const std::string& data_path,
           const std::string& params_path, const std::string& out_path,
           const InferCliOptions& opts = {});

struct AblateRow {
    char letter = 'a';
    bool semantic = false;
    bool spatial = false;
    bool temporal = false;
    int window = 1;
    double accuracy = 0.0;
    double reference_map = 0.0; // published full-scale number, context only
};

std::vector<AblateRow> ablate(const std::string& config_path, const std::string& data_path);
std::string ablate_table(const std::vector<AblateRow>& rows);

struct BenchCell {
    int window = 0;
    double median_ms = 0.0;
};

struct BenchRow {
    int n_proposals = 0;
    double head_only_ms = 0.0; // aggregation disabled, the T=0 column
    std::vector<BenchCell> cells;
};

std::vector<BenchRow> bench(const std::string& config_path,
                            const std::vector<int>& windows = {1, 7, 13, 19, 25, 31},
                            const std::vector<int>& proposal_counts = {128, 300},
                            int measured_runs = 5, int warmup_runs = 1);
std::string bench_table(const std::vector<BenchRow>& rows);

oracle::GradCheckReport gradcheck(std::uint64_t seed, const std::string& json_out = "");

EvalResult eval(const std::string& detections_path, const std::string& data_path);
std::string eval_table(const EvalResult& result);

} // namespace stca::cmd

namespace stca {

// full CLI entry point; returns the process exit code
// (0 ok, 1 usage/config, 2 data, 3 numerical)
int cli_main(int argc, const char* const* argv);

} // namespace stca
