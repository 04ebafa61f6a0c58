#include "stca/dataset.hpp"

#include "helpers.hpp"
#include "stca/synthetic.hpp"

#include <doctest.h>

#include <cmath>

using namespace stca;

namespace {

StcaConfig desk_config() {
    StcaConfig cfg;
    cfg.d_v = 16;
    cfg.d_phi = 8;
    cfg.n_proposals = 8;
    cfg.window = 5;
    return cfg;
}

bool datasets_equal(const Dataset& a, const Dataset& b) {
    if (a.videos.size() != b.videos.size()) return false;
    for (std::size_t v = 0; v < a.videos.size(); ++v) {
        const auto& va = a.videos[v];
        const auto& vb = b.videos[v];
        if (va.video_id != vb.video_id || va.frames.size() != vb.frames.size()) return false;
        for (std::size_t f = 0; f < va.frames.size(); ++f) {
            const auto& fa = va.frames[f];
            const auto& fb = vb.frames[f];
            if (fa.frame.frame_id != fb.frame.frame_id) return false;
            if (fa.labels != fb.labels) return false;
            if (fa.frame.proposals.size() != fb.frame.proposals.size()) return false;
            for (std::size_t p = 0; p < fa.frame.proposals.size(); ++p) {
                const auto& pa = fa.frame.proposals[p];
                const auto& pb = fb.frame.proposals[p];
                if (pa.frame_id != pb.frame_id) return false;
                if (pa.box.cx != pb.box.cx || pa.box.cy != pb.box.cy ||
                    pa.box.w != pb.box.w || pa.box.h != pb.box.h) return false;
                if (pa.objectness != pb.objectness) return false;
                if (pa.feature != pb.feature) return false;
            }
        }
    }
    return true;
}

} // namespace

TEST_SUITE("dataset") {

TEST_CASE("run config parsing fills defaults and validates") {
    const RunConfig cfg = parse_run_config_text("d_v = 4\nsteps = 10\n");
    CHECK(cfg.stca.d_v == 4);
    CHECK(cfg.stca.d_phi == 8);
    CHECK(cfg.trainer.steps == 10);
    CHECK(cfg.trainer.momentum == 0.9);
    CHECK(cfg.trainer.weight_decay == 5e-4);
    CHECK(cfg.gen.classes == 2);
}

TEST_CASE("unknown config keys abort") {
    CHECK_THROWS_AS((void)parse_run_config_text("d_w = 4\n"), ConfigError);
    CHECK_THROWS_AS((void)parse_run_config_text("lr 0.1\n"), ConfigError);
    CHECK_THROWS_AS((void)parse_run_config_text("lr = fast\n"), ConfigError);
    CHECK_THROWS_AS((void)parse_run_config_text("window = 4\n"), ConfigError);
}

TEST_CASE("config comments and the +spatial alias parse") {
    const RunConfig cfg = parse_run_config_text(
        "# desk setup\nvariant = +spatial\nwindow = 3 # small window\n");
    CHECK(cfg.stca.variant == Variant::spatial);
    CHECK(cfg.stca.window == 3);
}

TEST_CASE("run config round-trips through its serializer") {
    RunConfig cfg;
    cfg.stca.d_v = 32;
    cfg.stca.variant = Variant::semantic;
    cfg.stca.signed_tau = false;
    cfg.trainer.lr = 0.25;
    cfg.trainer.seed = 77;
    cfg.gen.videos = 3;
    const RunConfig parsed = parse_run_config_text(serialize_run_config(cfg));
    CHECK(parsed.stca.d_v == 32);
    CHECK(parsed.stca.variant == Variant::semantic);
    CHECK(parsed.stca.signed_tau == false);
    CHECK(parsed.trainer.lr == 0.25);
    CHECK(parsed.trainer.seed == 77);
    CHECK(parsed.gen.videos == 3);
}

TEST_CASE("datasets survive a serialize/parse round-trip exactly") {
    const auto cfg = desk_config();
    GeneratorConfig gen;
    gen.videos = 3;
    gen.frames_per_video = 6;
    const Dataset data = generate_synthetic(cfg, gen, 42);
    const Dataset back = parse_dataset_text(serialize_dataset(data));
    CHECK(datasets_equal(data, back));
    // a second round adds nothing
    CHECK(serialize_dataset(back) == serialize_dataset(data));
}

TEST_CASE("generation is deterministic per seed and differs across seeds") {
    const auto cfg = desk_config();
    GeneratorConfig gen;
    gen.videos = 2;
    gen.frames_per_video = 4;
    const std::string a = serialize_dataset(generate_synthetic(cfg, gen, 7));
    const std::string b = serialize_dataset(generate_synthetic(cfg, gen, 7));
    const std::string c = serialize_dataset(generate_synthetic(cfg, gen, 8));
    CHECK(a == b);
    CHECK(a != c);
}

TEST_CASE("the generator emits valid frames with labels everywhere") {
    const auto cfg = desk_config();
    GeneratorConfig gen;
    gen.videos = 4;
    gen.frames_per_video = 6;
    const Dataset data = generate_synthetic(cfg, gen, 5);
    CHECK(data.videos.size() == 4);
    CHECK_NOTHROW(validate_dataset(data, cfg));
    for (const auto& video : data.videos) {
        CHECK(video.frames.size() == 6);
        for (const auto& rec : video.frames) {
            REQUIRE(rec.labels.size() == 8);
            for (int label : rec.labels) {
                CHECK(label >= 0);
                CHECK(label <= 2);
            }
        }
    }
}

TEST_CASE("the generator rejects configurations it cannot encode") {
    StcaConfig cfg = desk_config();
    cfg.d_v = 4; // too small for classes + 3 axes
    GeneratorConfig gen;
    CHECK_THROWS_AS((void)generate_synthetic(cfg, gen, 1), ConfigError);
    StcaConfig tiny = desk_config();
    tiny.n_proposals = 2;
    CHECK_THROWS_AS((void)generate_synthetic(tiny, gen, 1), ConfigError);
}

TEST_CASE("object features alone cannot separate the classes") {
    // Bayes rule on a single proposal's feature: both classes share one
    // cluster, so any fixed tie-break scores ~50% on the ambiguous pair.
    const auto cfg = desk_config();
    GeneratorConfig gen;
    gen.videos = 200;
    gen.frames_per_video = 4;
    const Dataset data = generate_synthetic(cfg, gen, 99);

    std::size_t class_one = 0;
    std::size_t objects = 0;
    std::vector<double> mean_one(16, 0.0), mean_two(16, 0.0);
    std::size_t n_one = 0, n_two = 0;
    for (const auto& video : data.videos) {
        for (const auto& rec : video.frames) {
            for (std::size_t i = 0; i < rec.labels.size(); ++i) {
                if (rec.labels[i] == 0) continue;
                ++objects;
                if (rec.labels[i] == 1) ++class_one;
                auto& mean = rec.labels[i] == 1 ? mean_one : mean_two;
                auto& count = rec.labels[i] == 1 ? n_one : n_two;
                for (std::size_t d = 0; d < 16; ++d) {
                    mean[d] += rec.frame.proposals[i].feature[d];
                }
                ++count;
            }
        }
    }
    // "always predict class one" is Bayes-optimal here
    const double always_one = static_cast<double>(class_one) / static_cast<double>(objects);
    CHECK(always_one > 0.40);
    CHECK(always_one < 0.60);
    // and the class-conditional feature means coincide
    for (std::size_t d = 0; d < 16; ++d) {
        mean_one[d] /= static_cast<double>(n_one);
        mean_two[d] /= static_cast<double>(n_two);
        CHECK(std::fabs(mean_one[d] - mean_two[d]) < 0.05);
    }
}

TEST_CASE("a cross-frame beacon reveals the class almost surely") {
    const auto cfg = desk_config();
    GeneratorConfig gen;
    gen.videos = 100;
    gen.frames_per_video = 6;
    const Dataset data = generate_synthetic(cfg, gen, 123);

    std::size_t correct = 0;
    std::size_t total = 0;
    for (const auto& video : data.videos) {
        const int truth = video.frames[0].labels[0];
        for (std::size_t t = 0; t < video.frames.size(); ++t) {
            // classify frame t's objects from the beacon in frame t or t+-1
            const std::size_t beacon_frame = (t % 2 == 1) ? t : (t + 1 < video.frames.size() ? t + 1 : t - 1);
            const auto& special = video.frames[beacon_frame].frame.proposals.back();
            // nearest beacon cluster: axis 3 is class 1, axis 4 is class 2
            const int guess = special.feature[3] > special.feature[4] ? 1 : 2;
            ++total;
            if (guess == truth) ++correct;
        }
    }
    CHECK(static_cast<double>(correct) / static_cast<double>(total) > 0.95);
}

TEST_CASE("dataset parsing rejects malformed records") {
    CHECK_THROWS_AS((void)parse_dataset_text("not json\n"), DataError);
    CHECK_THROWS_AS((void)parse_dataset_text(R"({"frame_id":0,"proposals":[]})" "\n"),
                    DataError); // missing video_id
    // descending frame ids
    const std::string out_of_order =
        R"({"frame_id":1,"proposals":[],"video_id":"v0"})" "\n"
        R"({"frame_id":0,"proposals":[],"video_id":"v0"})" "\n";
    CHECK_THROWS_AS((void)parse_dataset_text(out_of_order), DataError);
    // interleaved videos
    const std::string interleaved =
        R"({"frame_id":0,"proposals":[],"video_id":"v0"})" "\n"
        R"({"frame_id":0,"proposals":[],"video_id":"v1"})" "\n"
        R"({"frame_id":1,"proposals":[],"video_id":"v0"})" "\n";
    CHECK_THROWS_AS((void)parse_dataset_text(interleaved), DataError);
}

TEST_CASE("dataset validation reports dimension drift") {
    const auto cfg = desk_config();
    GeneratorConfig gen;
    gen.videos = 1;
    gen.frames_per_video = 2;
    Dataset data = generate_synthetic(cfg, gen, 3);
    data.videos[0].frames[1].frame.proposals[2].feature.resize(7);
    CHECK_THROWS_AS(validate_dataset(data, cfg), DataError);

    Dataset short_frame = generate_synthetic(cfg, gen, 3);
    short_frame.videos[0].frames[0].frame.proposals.pop_back();
    short_frame.videos[0].frames[0].labels.pop_back();
    CHECK_THROWS_AS(validate_dataset(short_frame, cfg), DataError);
}

TEST_CASE("checkpoints round-trip bit for bit") {
    StcaConfig cfg = desk_config();
    cfg.share_query = false;
    Rng rng(55);
    Checkpoint ckpt;
    ckpt.config = cfg;
    ckpt.classes = 3;
    ckpt.head_only = false;
    ckpt.stage1 = test::random_params(rng, cfg, 0.37);
    ckpt.stage2 = test::random_params(rng, cfg, 0.11);
    ckpt.head = default_init_head(cfg, 3, 8);

    const Checkpoint back = parse_checkpoint_text(serialize_checkpoint(ckpt));
    CHECK(back.config.d_v == cfg.d_v);
    CHECK(back.config.share_query == false);
    CHECK(back.config.eps_spatial == cfg.eps_spatial);
    CHECK(back.classes == 3);
    CHECK(back.stage1.w_q == ckpt.stage1.w_q);
    CHECK(back.stage1.w_s == ckpt.stage1.w_s);
    CHECK(back.stage1.w_q_t == ckpt.stage1.w_q_t);
    CHECK(back.stage2.w_t == ckpt.stage2.w_t);
    CHECK(back.head.weights == ckpt.head.weights);
    CHECK(back.head.bias == ckpt.head.bias);
    // serialized form is stable
    CHECK(serialize_checkpoint(back) == serialize_checkpoint(ckpt));
}

TEST_CASE("checkpoint parsing rejects garbage") {
    CHECK_THROWS_AS((void)parse_checkpoint_text("hello 1\n"), DataError);
    CHECK_THROWS_AS((void)parse_checkpoint_text("stca-checkpoint 1\nbogus 3\n"), DataError);
}

TEST_CASE("detections round-trip") {
    Rng rng(66);
    std::vector<VideoDetections> detections(1);
    detections[0].video_id = "v3";
    FrameDetections det;
    det.frame_id = 4;
    det.posteriors = Matrix(2, 3);
    for (double& x : det.posteriors.flat()) x = rng.next_double();
    det.labels = {2, 0};
    detections[0].frames.push_back(det);

    const auto back = parse_detections_text(serialize_detections(detections));
    REQUIRE(back.size() == 1);
    CHECK(back[0].video_id == "v3");
    REQUIRE(back[0].frames.size() == 1);
    CHECK(back[0].frames[0].frame_id == 4);
    CHECK(back[0].frames[0].labels == det.labels);
    CHECK(back[0].frames[0].posteriors == det.posteriors);
}

TEST_CASE("accuracy evaluation closed forms") {
    // two frames, three proposals each, labels 0/1/2
    Dataset data;
    data.videos.push_back({"v0", {}});
    for (int t = 0; t < 2; ++t) {
        FrameRecord rec;
        rec.frame.frame_id = t;
        for (int i = 0; i < 3; ++i) {
            rec.frame.proposals.push_back(test::make_proposal(
                t, BoundingBox{10.0 * i, 0, 4, 4}, std::vector<double>(4, 0.0)));
            rec.labels.push_back(i);
        }
        data.videos[0].frames.push_back(rec);
    }

    auto detections_with = [&](std::vector<std::vector<int>> labels) {
        std::vector<VideoDetections> d(1);
        d[0].video_id = "v0";
        for (int t = 0; t < 2; ++t) {
            FrameDetections det;
            det.frame_id = t;
            det.posteriors = Matrix(3, 3, 1.0 / 3.0);
            det.labels = labels[static_cast<std::size_t>(t)];
            d[0].frames.push_back(det);
        }
        return d;
    };

    SUBCASE("all correct") {
        const auto r = evaluate_accuracy(detections_with({{0, 1, 2}, {0, 1, 2}}), data);
        CHECK(r.accuracy == 1.0);
        CHECK(r.per_class.size() == 3);
        for (const auto& cs : r.per_class) CHECK(cs.recall == 1.0);
    }
    SUBCASE("all background matches background prevalence") {
        const auto r = evaluate_accuracy(detections_with({{0, 0, 0}, {0, 0, 0}}), data);
        CHECK(r.accuracy == doctest::Approx(1.0 / 3.0));
    }
    SUBCASE("half correct") {
        const auto r = evaluate_accuracy(detections_with({{0, 1, 0}, {0, 2, 2}}), data);
        CHECK(r.accuracy == doctest::Approx(4.0 / 6.0));
    }
    SUBCASE("alignment mismatches throw") {
        auto d = detections_with({{0, 1, 2}, {0, 1, 2}});
        d[0].video_id = "nope";
        CHECK_THROWS_AS((void)evaluate_accuracy(d, data), DataError);
        auto d2 = detections_with({{0, 1, 2}, {0, 1, 2}});
        d2[0].frames[1].frame_id = 9;
        CHECK_THROWS_AS((void)evaluate_accuracy(d2, data), DataError);
    }
}

} // TEST_SUITE
