#include "stca/types.hpp"

#include "helpers.hpp"

#include <doctest.h>

#include <cmath>

using namespace stca;

namespace {

FrameProposals small_frame(int frame_id, int count, int d_v) {
    FrameProposals frame;
    frame.frame_id = frame_id;
    for (int i = 0; i < count; ++i) {
        frame.proposals.push_back(test::make_proposal(
            frame_id, BoundingBox{10.0 * i, 5.0, 4.0, 4.0},
            std::vector<double>(static_cast<std::size_t>(d_v), 0.25)));
    }
    return frame;
}

StcaConfig tiny_config() {
    StcaConfig cfg;
    cfg.d_v = 8;
    cfg.d_phi = 4;
    cfg.n_proposals = 3;
    return cfg;
}

} // namespace

TEST_SUITE("types") {

TEST_CASE("a well formed frame validates") {
    const auto cfg = tiny_config();
    CHECK(static_cast<bool>(validate_frame(small_frame(0, 3, 8), cfg)));
}

TEST_CASE("validation reports each violated invariant") {
    const auto cfg = tiny_config();

    SUBCASE("feature length") {
        auto frame = small_frame(0, 3, 8);
        frame.proposals[1].feature.resize(7);
        CHECK(validate_frame(frame, cfg).status == FrameStatus::dimension_mismatch);
    }
    SUBCASE("proposal count") {
        CHECK(validate_frame(small_frame(0, 2, 8), cfg).status == FrameStatus::count_mismatch);
    }
    SUBCASE("non-positive extent") {
        auto frame = small_frame(0, 3, 8);
        frame.proposals[2].box.w = 0.0;
        CHECK(validate_frame(frame, cfg).status == FrameStatus::non_positive_extent);
    }
    SUBCASE("frame id mismatch") {
        auto frame = small_frame(4, 3, 8);
        frame.proposals[0].frame_id = 5;
        CHECK(validate_frame(frame, cfg).status == FrameStatus::frame_id_mismatch);
    }
    SUBCASE("non-finite feature") {
        auto frame = small_frame(0, 3, 8);
        frame.proposals[0].feature[3] = std::nan("");
        CHECK(validate_frame(frame, cfg).status == FrameStatus::non_finite);
    }
    SUBCASE("non-finite box") {
        auto frame = small_frame(0, 3, 8);
        frame.proposals[0].box.cx = std::numeric_limits<double>::infinity();
        CHECK(validate_frame(frame, cfg).status == FrameStatus::non_finite);
    }
}

TEST_CASE("config validation flags bad hyperparameters") {
    StcaConfig cfg;
    cfg.d_phi = 3;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = StcaConfig{};
    cfg.window = 4;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = StcaConfig{};
    cfg.eps_spatial = 0.0;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    CHECK_NOTHROW(StcaConfig{}.validate());
    CHECK_NOTHROW(StcaConfig::full_scale().validate());
}

TEST_CASE("parameter init is a pure function of config and seed") {
    StcaConfig cfg;
    cfg.d_v = 4;
    cfg.d_phi = 4;
    const auto a = default_init_params(cfg, 42);
    const auto b = default_init_params(cfg, 42);
    CHECK(a.w_q == b.w_q);
    CHECK(a.w_k == b.w_k);
    CHECK(a.w_s == b.w_s);
    CHECK(a.w_t == b.w_t);
    CHECK(a.w_q_t.empty());

    const auto c = default_init_params(cfg, 43);
    CHECK(a.w_q != c.w_q);
}

TEST_CASE("split-query config adds the extra projection") {
    StcaConfig cfg;
    cfg.d_v = 4;
    cfg.d_phi = 4;
    cfg.share_query = false;
    const auto p = default_init_params(cfg, 7);
    CHECK(p.has_split_query());
    CHECK(p.w_q_t.rows() == 4);
}

TEST_CASE("init statistics match the target distribution") {
    // ~1e6 draws across the three d_v x d_v matrices
    StcaConfig cfg;
    cfg.d_v = 578;
    cfg.d_phi = 8;
    const auto p = default_init_params(cfg, 9001);

    double sum = 0.0;
    double sum_sq = 0.0;
    std::size_t count = 0;
    for (const Matrix* m : {&p.w_q, &p.w_k, &p.w_t}) {
        for (double x : m->flat()) {
            sum += x;
            sum_sq += x * x;
            ++count;
        }
    }
    REQUIRE(count >= 1000000);
    const double mean = sum / static_cast<double>(count);
    const double stddev = std::sqrt(sum_sq / static_cast<double>(count) - mean * mean);
    CHECK(std::fabs(mean) < 1e-3);
    CHECK(stddev == doctest::Approx(0.01).epsilon(0.05));
}

TEST_CASE("variant names round-trip and accept the +spatial alias") {
    CHECK(variant_from_string("semantic") == Variant::semantic);
    CHECK(variant_from_string("+spatial") == Variant::spatial);
    CHECK(variant_from_string("spatial") == Variant::spatial);
    CHECK(variant_from_string("full") == Variant::full);
    CHECK_THROWS_AS(variant_from_string("bogus"), ConfigError);
    CHECK(variant_from_string(to_string(Variant::semantic)) == Variant::semantic);
}

} // TEST_SUITE
