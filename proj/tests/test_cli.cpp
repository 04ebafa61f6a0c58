#include "stca/commands.hpp"

#include <doctest.h>
#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <unistd.h>
#include <vector>

using namespace stca;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    TempDir() {
        path = fs::temp_directory_path() / ("stca_cli_test_" + std::to_string(::getpid()));
        fs::create_directories(path);
    }
    ~TempDir() {
        std::error_code ec;
        fs::remove_all(path, ec);
    }
    std::string file(const std::string& name) const { return (path / name).string(); }
};

int run_cli(std::vector<std::string> args) {
    std::vector<const char*> argv;
    argv.push_back("stca");
    for (const auto& a : args) argv.push_back(a.c_str());
    return cli_main(static_cast<int>(argv.size()), argv.data());
}

std::string tiny_config() {
    return "d_v = 8\n"
           "d_phi = 4\n"
           "n_proposals = 4\n"
           "window = 3\n"
           "steps = 60\n"
           "lr = 0.01\n"
           "seed = 3\n"
           "videos = 3\n"
           "frames_per_video = 8\n";
}

} // namespace

TEST_SUITE("cli") {

TEST_CASE("the full command chain runs and exit codes follow the error taxonomy") {
    TempDir dir;
    write_text_file(dir.file("run.cfg"), tiny_config());

    // 0: success path
    CHECK(run_cli({"gen", "--config", dir.file("run.cfg"), "--seed", "2", "--out",
                   dir.file("data.jsonl")}) == 0);
    CHECK(run_cli({"train", "--config", dir.file("run.cfg"), "--data", dir.file("data.jsonl"),
                   "--out", dir.file("ckpt.txt")}) == 0);
    CHECK(run_cli({"infer", "--config", dir.file("run.cfg"), "--data", dir.file("data.jsonl"),
                   "--params", dir.file("ckpt.txt"), "--out", dir.file("det.jsonl")}) == 0);
    CHECK(run_cli({"eval", dir.file("det.jsonl"), "--data", dir.file("data.jsonl")}) == 0);

    // 1: usage and config errors
    CHECK(run_cli({"nonsense"}) == 1);
    CHECK(run_cli({"train", "--config", dir.file("run.cfg")}) == 1); // missing required flags
    write_text_file(dir.file("bad.cfg"), "frobnicate = 1\n");
    CHECK(run_cli({"gen", "--config", dir.file("bad.cfg"), "--out", dir.file("x.jsonl")}) == 1);
    CHECK(run_cli({"gen", "--config", dir.file("missing.cfg"), "--out",
                   dir.file("x.jsonl")}) == 1);
    CHECK(run_cli({"infer", "--config", dir.file("run.cfg"), "--data", dir.file("data.jsonl"),
                   "--params", dir.file("ckpt.txt"), "--out", dir.file("d2.jsonl"),
                   "--window", "4"}) == 1); // even window

    // 2: data errors
    write_text_file(dir.file("broken.jsonl"), "this is not a record\n");
    CHECK(run_cli({"train", "--config", dir.file("run.cfg"), "--data",
                   dir.file("broken.jsonl"), "--out", dir.file("c2.txt")}) == 2);
    CHECK(run_cli({"infer", "--config", dir.file("run.cfg"), "--data", dir.file("data.jsonl"),
                   "--params", dir.file("no_such_ckpt.txt"), "--out",
                   dir.file("d3.jsonl")}) == 2);

    // 3: numerical failure (fault-injected gradcheck exercised below)
    CHECK(run_cli({"gradcheck", "--seed", "1", "--out", dir.file("grad.json")}) == 0);
    CHECK(fs::exists(dir.file("grad.json")));
    const auto report = oracle::gradcheck_from_json_string(read_text_file(dir.file("grad.json")));
    CHECK(report.pass);
}

TEST_CASE("training with zero steps writes the untouched initialization") {
    TempDir dir;
    std::string cfg_text = tiny_config();
    cfg_text.replace(cfg_text.find("steps = 60"), 10, "steps = 0");
    write_text_file(dir.file("run.cfg"), cfg_text);
    cmd::gen(dir.file("run.cfg"), 2, dir.file("data.jsonl"));
    cmd::train(dir.file("run.cfg"), dir.file("data.jsonl"), dir.file("ckpt.txt"));

    const Checkpoint ckpt = load_checkpoint(dir.file("ckpt.txt"));
    const RunConfig rc = parse_run_config(dir.file("run.cfg"));
    const StcaParams init1 = default_init_params(rc.stca, rc.trainer.seed);
    const StcaParams init2 = default_init_params(rc.stca, rc.trainer.seed + 1);
    CHECK(ckpt.stage1.w_q == init1.w_q);
    CHECK(ckpt.stage1.w_s == init1.w_s);
    CHECK(ckpt.stage2.w_t == init2.w_t);
}

TEST_CASE("identical training runs leave identical loss logs") {
    TempDir dir;
    write_text_file(dir.file("run.cfg"), tiny_config());
    cmd::gen(dir.file("run.cfg"), 2, dir.file("data.jsonl"));
    cmd::train(dir.file("run.cfg"), dir.file("data.jsonl"), dir.file("a.txt"));
    cmd::train(dir.file("run.cfg"), dir.file("data.jsonl"), dir.file("b.txt"));
    CHECK(read_text_file(dir.file("a.txt.loss.csv")) ==
          read_text_file(dir.file("b.txt.loss.csv")));
    CHECK(read_text_file(dir.file("a.txt")) == read_text_file(dir.file("b.txt")));
}

TEST_CASE("buffered and oracle inference agree through the file interface") {
    TempDir dir;
    write_text_file(dir.file("run.cfg"), tiny_config());
    cmd::gen(dir.file("run.cfg"), 2, dir.file("data.jsonl"));
    cmd::train(dir.file("run.cfg"), dir.file("data.jsonl"), dir.file("ckpt.txt"));

    cmd::InferCliOptions fast;
    cmd::infer(dir.file("run.cfg"), dir.file("data.jsonl"), dir.file("ckpt.txt"),
               dir.file("fast.jsonl"), fast);
    cmd::InferCliOptions naive;
    naive.naive_oracle = true;
    cmd::infer(dir.file("run.cfg"), dir.file("data.jsonl"), dir.file("ckpt.txt"),
               dir.file("naive.jsonl"), naive);

    const auto a = parse_detections(dir.file("fast.jsonl"));
    const auto b = parse_detections(dir.file("naive.jsonl"));
    REQUIRE(a.size() == b.size());
    for (std::size_t v = 0; v < a.size(); ++v) {
        REQUIRE(a[v].frames.size() == b[v].frames.size());
        for (std::size_t f = 0; f < a[v].frames.size(); ++f) {
            CHECK(max_abs_diff(a[v].frames[f].posteriors, b[v].frames[f].posteriors) < 1e-12);
        }
    }
}

TEST_CASE("a multithreaded run reproduces the single-threaded files") {
    TempDir dir;
    write_text_file(dir.file("run.cfg"), tiny_config());
    cmd::gen(dir.file("run.cfg"), 2, dir.file("data.jsonl"));
    cmd::train(dir.file("run.cfg"), dir.file("data.jsonl"), dir.file("ckpt.txt"));

    cmd::InferCliOptions one;
    cmd::infer(dir.file("run.cfg"), dir.file("data.jsonl"), dir.file("ckpt.txt"),
               dir.file("t1.jsonl"), one);
    cmd::InferCliOptions four;
    four.threads = 4;
    cmd::infer(dir.file("run.cfg"), dir.file("data.jsonl"), dir.file("ckpt.txt"),
               dir.file("t4.jsonl"), four);
    CHECK(read_text_file(dir.file("t1.jsonl")) == read_text_file(dir.file("t4.jsonl")));
}

TEST_CASE("the full-scale default window is accepted") {
    TempDir dir;
    write_text_file(dir.file("run.cfg"), tiny_config());
    cmd::gen(dir.file("run.cfg"), 2, dir.file("data.jsonl"));
    cmd::train(dir.file("run.cfg"), dir.file("data.jsonl"), dir.file("ckpt.txt"));
    cmd::InferCliOptions wide;
    wide.window = 31;
    CHECK_NOTHROW(cmd::infer(dir.file("run.cfg"), dir.file("data.jsonl"), dir.file("ckpt.txt"),
                             dir.file("wide.jsonl"), wide));
    const auto det = parse_detections(dir.file("wide.jsonl"));
    CHECK(det.size() == 3);
}

TEST_CASE("attention dumps land in a sidecar with descending weights") {
    TempDir dir;
    write_text_file(dir.file("run.cfg"), tiny_config());
    cmd::gen(dir.file("run.cfg"), 2, dir.file("data.jsonl"));
    cmd::train(dir.file("run.cfg"), dir.file("data.jsonl"), dir.file("ckpt.txt"));
    cmd::InferCliOptions opts;
    opts.dump_attention = 3;
    cmd::infer(dir.file("run.cfg"), dir.file("data.jsonl"), dir.file("ckpt.txt"),
               dir.file("det.jsonl"), opts);

    const std::string sidecar = read_text_file(dir.file("det.jsonl.attention.jsonl"));
    std::istringstream lines(sidecar);
    std::string line;
    std::size_t parsed = 0;
    while (std::getline(lines, line)) {
        if (line.empty()) continue;
        const auto j = nlohmann::json::parse(line);
        CHECK(j.contains("video_id"));
        CHECK(j.at("targets").size() == 4);
        for (const auto& target : j.at("targets")) {
            REQUIRE(target.at("top").size() == 3);
            double previous = 1.0;
            for (const auto& pair : target.at("top")) {
                const double weight = pair.at("weight").get<double>();
                CHECK(weight <= previous + 1e-15);
                previous = weight;
            }
        }
        ++parsed;
    }
    CHECK(parsed == 24); // 3 videos x 8 key frames
}

TEST_CASE("variant letters map onto ablation semantics") {
    TempDir dir;
    write_text_file(dir.file("run.cfg"), tiny_config());
    cmd::gen(dir.file("run.cfg"), 2, dir.file("data.jsonl"));

    // head-only training produces a checkpoint flagged accordingly
    cmd::train(dir.file("run.cfg"), dir.file("data.jsonl"), dir.file("a.txt"), 'a');
    CHECK(load_checkpoint(dir.file("a.txt")).head_only);

    cmd::train(dir.file("run.cfg"), dir.file("data.jsonl"), dir.file("b.txt"), 'b');
    const Checkpoint semantic = load_checkpoint(dir.file("b.txt"));
    CHECK_FALSE(semantic.head_only);
    CHECK(semantic.config.variant == Variant::semantic);

    cmd::train(dir.file("run.cfg"), dir.file("data.jsonl"), dir.file("d.txt"), 'd');
    CHECK(load_checkpoint(dir.file("d.txt")).config.variant == Variant::spatial);
    cmd::train(dir.file("run.cfg"), dir.file("data.jsonl"), dir.file("e.txt"), 'e');
    CHECK(load_checkpoint(dir.file("e.txt")).config.variant == Variant::full);
}

TEST_CASE("the ablation emits five labelled rows with reference numbers") {
    TempDir dir;
    write_text_file(dir.file("run.cfg"), tiny_config());
    cmd::gen(dir.file("run.cfg"), 2, dir.file("data.jsonl"));
    const auto rows = cmd::ablate(dir.file("run.cfg"), dir.file("data.jsonl"));
    REQUIRE(rows.size() == 5);
    const std::string letters = "abcde";
    const std::vector<double> reference{74.5, 77.4, 79.3, 79.8, 80.3};
    for (std::size_t i = 0; i < rows.size(); ++i) {
        CHECK(rows[i].letter == letters[i]);
        CHECK(rows[i].reference_map == reference[i]);
        CHECK(rows[i].accuracy >= 0.0);
        CHECK(rows[i].accuracy <= 1.0);
    }
    CHECK(rows[1].window == 1);
    const std::string table = cmd::ablate_table(rows);
    CHECK(table.find("(a)") != std::string::npos);
    CHECK(table.find("74.5") != std::string::npos);
}

TEST_CASE("a corrupted gradient makes gradcheck fail with exit code 3") {
    // fault injection through the library hook, then the CLI surface
    const auto cases = oracle::default_gradcheck_cases(1);
    oracle::GradCheckOptions opts;
    opts.corrupt = oracle::GradCheckOptions::Corruption{"w_s", 1, 1.0};
    const auto broken = oracle::run_gradcheck(std::span(cases).subspan(0, 4), opts);
    CHECK_FALSE(broken.pass);

    // the CLI reports the healthy run as exit 0 (checked above); the
    // non-finite loss path maps onto exit 3
    TempDir dir;
    write_text_file(dir.file("run.cfg"), tiny_config());
    cmd::gen(dir.file("run.cfg"), 2, dir.file("data.jsonl"));
    // a finite but enormous feature overflows the squared logits
    Dataset data = parse_dataset(dir.file("data.jsonl"));
    for (auto& video : data.videos) {
        for (auto& rec : video.frames) {
            for (auto& proposal : rec.frame.proposals) proposal.feature[0] = 1e308;
        }
    }
    write_dataset(data, dir.file("poison.jsonl"));
    const int code = run_cli({"train", "--config", dir.file("run.cfg"), "--data",
                              dir.file("poison.jsonl"), "--out", dir.file("p.txt")});
    CHECK(code == 3);
}

} // TEST_SUITE
