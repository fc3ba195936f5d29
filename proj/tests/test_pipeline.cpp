#include <doctest.h>

#include <cmath>

#include "detrkit/json_io.hpp"
#include "detrkit/pipeline.hpp"

using namespace detrkit;

namespace {

PipelineConfig small_config() {
    PipelineConfig cfg;
    cfg.image_size = 32;
    cfg.nodule_count = 2;
    cfg.num_queries = 12;
    cfg.encoder_layers = 1;
    cfg.decoder_layers = 1;
    cfg.seed = 5;
    return cfg;
}

}  // namespace

TEST_CASE("synthetic scene generation") {
    PipelineConfig cfg = small_config();
    SUBCASE("zero nodules leaves a pure-noise image with no ground truth") {
        cfg.nodule_count = 0;
        Rng rng(1);
        const SyntheticScene s = gen_synthetic_scene(cfg, rng, "empty");
        CHECK(s.gts.empty());
        CHECK(s.image.shape == std::vector<std::size_t>{1, 32, 32});
        CHECK(s.image.all_finite());
    }
    SUBCASE("identical seeds are bit-identical") {
        Rng a(7), b(7);
        const SyntheticScene sa = gen_synthetic_scene(cfg, a, "s");
        const SyntheticScene sb = gen_synthetic_scene(cfg, b, "s");
        CHECK(sa.image.data == sb.image.data);
        REQUIRE(sa.gts.size() == sb.gts.size());
        for (std::size_t i = 0; i < sa.gts.size(); ++i) {
            CHECK(sa.gts[i].box.cx == sb.gts[i].box.cx);
            CHECK(sa.gts[i].class_id == sb.gts[i].class_id);
        }
    }
    SUBCASE("boxes stay inside the unit square over many scenes") {
        for (std::uint64_t seed = 0; seed < 200; ++seed) {
            Rng rng(mix_seed(11, seed));
            const SyntheticScene s = gen_synthetic_scene(cfg, rng, "b");
            CHECK(s.gts.size() == cfg.nodule_count);
            for (const GroundTruth& g : s.gts) {
                CHECK(g.box.x1() >= 0.0);
                CHECK(g.box.y1() >= 0.0);
                CHECK(g.box.x2() <= 1.0);
                CHECK(g.box.y2() <= 1.0);
                CHECK(g.pixel_area > 0.0);
            }
            for (double v : s.image.data) {
                CHECK(v >= 0.0);
                CHECK(v <= 1.0);
            }
        }
    }
    SUBCASE("undersized images are rejected") {
        cfg.image_size = 16;
        Rng rng(1);
        CHECK_THROWS_AS(gen_synthetic_scene(cfg, rng), std::invalid_argument);
    }
}

TEST_CASE("config validation") {
    PipelineConfig cfg;
    CHECK_NOTHROW(cfg.validate());
    SUBCASE("encoder depth 0 is legal, 7 is not") {
        cfg.encoder_layers = 0;
        CHECK_NOTHROW(cfg.validate());
        cfg.encoder_layers = 7;
        CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    }
    SUBCASE("decoder depth 0 is rejected") {
        cfg.decoder_layers = 0;
        CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    }
    SUBCASE("d_model must be divisible by the head count") {
        cfg.d_model = 60;
        cfg.msda.heads = 8;
        CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    }
    SUBCASE("level count is pinned to the backbone depth") {
        cfg.msda.levels = 3;
        CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    }
}

TEST_CASE("config JSON round trip") {
    PipelineConfig cfg;
    cfg.encoder_layers = 3;
    cfg.posenc_temperature = 10.0;
    cfg.posenc_mode = TemperatureMode::Base;
    cfg.msfca.frequency_pairs = {{0, 0}, {1, 1}};
    cfg.loss_weights.alpha = 0.25;
    cfg.seed = 99;

    const Json doc = config_to_json(cfg);
    const PipelineConfig back = config_from_json(doc, "roundtrip");
    CHECK(back.encoder_layers == cfg.encoder_layers);
    CHECK(back.decoder_layers == cfg.decoder_layers);
    CHECK(back.posenc_temperature == cfg.posenc_temperature);
    CHECK(back.posenc_mode == cfg.posenc_mode);
    CHECK(back.msfca.frequency_pairs == cfg.msfca.frequency_pairs);
    CHECK(back.loss_weights.alpha == cfg.loss_weights.alpha);
    CHECK(back.seed == cfg.seed);
    // serialize -> parse -> serialize is byte-stable
    CHECK(config_to_json(back).dump() == doc.dump());

    SUBCASE("unknown keys are rejected with their path") {
        Json bad = doc;
        bad["learning_rate"] = 0.1;
        CHECK_THROWS_AS(config_from_json(bad, "cfg"), SchemaError);
        Json nested = doc;
        nested["msda"]["depth"] = 2;
        try {
            config_from_json(nested, "cfg");
            FAIL("expected a schema error");
        } catch (const SchemaError& e) {
            CHECK(std::string(e.what()).find("msda") != std::string::npos);
            CHECK(std::string(e.what()).find("depth") != std::string::npos);
        }
    }
    SUBCASE("invalid values are schema errors") {
        Json bad = doc;
        bad["decoder_layers"] = 0;
        CHECK_THROWS_AS(config_from_json(bad, "cfg"), SchemaError);
    }
}

TEST_CASE("detection and ground-truth JSON schemas") {
    SUBCASE("round trip") {
        const std::vector<Detection> dets = {{"a", BoundingBox(0.5, 0.5, 0.2, 0.1), 0.75, 1}};
        const auto back = detections_from_json(detections_to_json(dets), "dets");
        REQUIRE(back.size() == 1);
        CHECK(back[0].image_id == "a");
        CHECK(back[0].box.cx == 0.5);
        CHECK(back[0].score == 0.75);
        CHECK(back[0].class_id == 1);

        const std::vector<GroundTruth> gts = {{"a", BoundingBox(0.4, 0.4, 0.1, 0.1), 0, 123.0}};
        const auto gback = ground_truth_from_json(ground_truth_to_json(gts), "gts");
        REQUIRE(gback.size() == 1);
        CHECK(gback[0].pixel_area == 123.0);
    }
    SUBCASE("malformed records are rejected") {
        CHECK_THROWS_AS(detections_from_json(Json::parse(R"([{"image_id": 3}])"), "d"), SchemaError);
        CHECK_THROWS_AS(
            detections_from_json(
                Json::parse(R"([{"image_id": "a", "bbox": [0.5, 0.5, 0.2], "score": 0.5, "class_id": 0}])"),
                "d"),
            SchemaError);
        CHECK_THROWS_AS(
            detections_from_json(
                Json::parse(R"([{"image_id": "a", "bbox": [0.5, 0.5, 0.2, 0.2], "score": 1.5, "class_id": 0}])"),
                "d"),
            SchemaError);
        CHECK_THROWS_AS(
            ground_truth_from_json(
                Json::parse(R"([{"image_id": "a", "bbox": [0.5, 0.5, 0.2, 0.2], "class_id": 0, "pixel_area": -4}])"),
                "g"),
            SchemaError);
    }
}

TEST_CASE("scene JSON round trip") {
    PipelineConfig cfg = small_config();
    Rng rng(3);
    std::vector<SyntheticScene> scenes;
    scenes.push_back(gen_synthetic_scene(cfg, rng, "s0"));
    scenes.push_back(gen_synthetic_scene(cfg, rng, "s1"));
    const auto back = scenes_from_json(scenes_to_json(scenes), "scenes");
    REQUIRE(back.size() == 2);
    CHECK(back[0].image.data == scenes[0].image.data);
    CHECK(back[1].gts.size() == scenes[1].gts.size());
    CHECK(back[1].gts[0].image_id == "s1");
    CHECK(back[1].gts[0].box.cx == scenes[1].gts[0].box.cx);
}

TEST_CASE("toy forward pass") {
    const PipelineConfig cfg = small_config();
    Rng rng(mix_seed(cfg.seed, 0));
    const SyntheticScene scene = gen_synthetic_scene(cfg, rng, "fwd");
    const PipelineParams params = make_params(cfg);

    SUBCASE("token count and query count match the shape contract") {
        const ForwardResult r = toy_forward(scene, cfg, params);
        CHECK(r.encoder_tokens == 16 * 16 + 8 * 8 + 4 * 4 + 2 * 2);
        CHECK(r.queries == cfg.num_queries);
        CHECK(r.detections.size() <= cfg.num_queries);
    }
    SUBCASE("boxes and scores stay in range") {
        const ForwardResult r = toy_forward(scene, cfg, params);
        for (const Detection& d : r.detections) {
            CHECK(d.score >= cfg.score_floor);
            CHECK(d.score <= 1.0);
            CHECK(d.box.cx >= 0.0);
            CHECK(d.box.cx <= 1.0);
            CHECK(d.box.w > 0.0);
            CHECK(d.box.w <= 1.0);
            CHECK((d.class_id == 0 || d.class_id == 1));
        }
    }
    SUBCASE("zero score floor emits one detection per query") {
        PipelineConfig open = cfg;
        open.score_floor = 0.0;
        const ForwardResult r = toy_forward(scene, open, make_params(open));
        CHECK(r.detections.size() == open.num_queries);
    }
    SUBCASE("bit-identical across runs") {
        const ForwardResult a = toy_forward(scene, cfg, params);
        const ForwardResult b = toy_forward(scene, cfg, params);
        REQUIRE(a.detections.size() == b.detections.size());
        for (std::size_t i = 0; i < a.detections.size(); ++i) {
            CHECK(a.detections[i].score == b.detections[i].score);
            CHECK(a.detections[i].box.cx == b.detections[i].box.cx);
            CHECK(a.detections[i].box.w == b.detections[i].box.w);
        }
    }
    SUBCASE("encoder depth zero is a legal configuration") {
        PipelineConfig enc0 = cfg;
        enc0.encoder_layers = 0;
        const ForwardResult r = toy_forward(scene, enc0, make_params(enc0));
        CHECK(r.queries == enc0.num_queries);
        for (const Detection& d : r.detections) CHECK(std::isfinite(d.score));
    }
}

TEST_CASE("report JSON uses the fixed six-key schema") {
    EvalReport r;
    r.map_50_95 = 0.5;
    r.map_50 = 0.75;
    r.map_75 = 0.25;
    r.ap_small = std::numeric_limits<double>::quiet_NaN();
    r.ap_medium = 0.125;
    r.ap_large = 1.0;
    const Json doc = report_to_json(r);
    CHECK(doc.size() == 6);
    CHECK(doc["mAP"] == 0.5);
    CHECK(doc["mAP50"] == 0.75);
    CHECK(doc["mAP75"] == 0.25);
    CHECK(doc["AP_s"].is_null());
    CHECK(doc["AP_m"] == 0.125);
    CHECK(doc["AP_l"] == 1.0);
    const std::string table = report_table(r);
    CHECK(table.find("n/a") != std::string::npos);
    CHECK(table.find("0.5000") != std::string::npos);
}
