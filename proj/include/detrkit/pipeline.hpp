#pragma once

// Desk-scale end-to-end pipeline: synthetic grayscale scenes with elliptical
// blobs stand in for real imagery; a tiny fixed convolutional backbone feeds
// frequency channel attention per stage, channel projection + hierarchical
// fusion, grid positional encodings, a deformable-attention encoder/decoder
// stack and sigmoid prediction heads. Everything is a pure function of
// (scene, config, params), and params are derived deterministically from the
// config seed, so the whole pass is bit-reproducible.

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "detrkit/detection_eval.hpp"
#include "detrkit/hff.hpp"
#include "detrkit/msda.hpp"
#include "detrkit/msfca.hpp"
#include "detrkit/posenc.hpp"
#include "detrkit/set_matching.hpp"
#include "detrkit/tensor.hpp"

namespace detrkit {

struct MsdaConfig {
    std::size_t heads = 8;
    std::size_t levels = 4;
    std::size_t points = 4;
};

struct DnNoiseConfig {
    double box_noise_scale = 0.4;
    double label_flip_prob = 0.2;
};

struct MsfcaConfig {
    std::size_t groups = 16;  // clipped per stage to divide the channel count
    std::vector<std::pair<std::size_t, std::size_t>> frequency_pairs;  // empty = zigzag default
};

struct PipelineConfig {
    std::size_t encoder_layers = 6;  // 0..6
    std::size_t decoder_layers = 6;  // 1..6
    std::size_t d_model = 64;
    MsdaConfig msda;
    double posenc_temperature = 20.0;
    TemperatureMode posenc_mode = TemperatureMode::Scale;
    LossWeights loss_weights;
    DnNoiseConfig dn_noise;
    MsfcaConfig msfca;
    std::size_t num_queries = 100;
    std::uint64_t seed = 0;
    std::size_t image_size = 48;
    std::size_t nodule_count = 3;
    double score_floor = 0.05;
    std::size_t group_norm_groups = 32;

    void validate() const {
        if (encoder_layers > 6)
            throw std::invalid_argument("config: encoder_layers must lie in 0..6");
        if (decoder_layers < 1 || decoder_layers > 6)
            throw std::invalid_argument("config: decoder_layers must lie in 1..6");
        if (d_model == 0 || d_model % 4 != 0)
            throw std::invalid_argument("config: d_model must be a positive multiple of 4");
        if (msda.heads == 0 || d_model % msda.heads != 0)
            throw std::invalid_argument("config: d_model must be divisible by msda heads");
        if (msda.levels != 4)
            throw std::invalid_argument("config: msda levels must equal the 4 backbone stages");
        if (msda.points == 0) throw std::invalid_argument("config: msda points must be positive");
        if (!(posenc_temperature > 0.0))
            throw std::invalid_argument("config: positional encoding temperature must be positive");
        if (image_size < 32) throw std::invalid_argument("config: image_size must be >= 32");
        if (num_queries == 0) throw std::invalid_argument("config: num_queries must be positive");
        if (score_floor < 0.0 || score_floor > 1.0)
            throw std::invalid_argument("config: score_floor must lie in [0,1]");
        if (dn_noise.box_noise_scale < 0.0 || dn_noise.box_noise_scale > 1.0 ||
            dn_noise.label_flip_prob < 0.0 || dn_noise.label_flip_prob > 1.0)
            throw std::invalid_argument("config: denoising scales must lie in [0,1]");
        if (msfca.groups == 0) throw std::invalid_argument("config: msfca groups must be positive");
        if (group_norm_groups == 0)
            throw std::invalid_argument("config: group_norm_groups must be positive");
    }
};

// Grayscale scene with class-labeled elliptical blobs; class 0 blobs are
// brighter than the background, class 1 darker.
struct SyntheticScene {
    std::string image_id;
    Tensor image;  // [1 x H x W], values in [0, 1]
    std::vector<GroundTruth> gts;
};

inline SyntheticScene gen_synthetic_scene(const PipelineConfig& cfg, Rng& rng,
                                          const std::string& image_id = "scene_0") {
    cfg.validate();
    const std::size_t H = cfg.image_size;
    const std::size_t W = cfg.image_size;
    SyntheticScene scene;
    scene.image_id = image_id;
    scene.image = Tensor::full({1, H, W}, 0.45);

    const double max_r = std::min(18.0, static_cast<double>(std::min(H, W)) / 3.0);
    for (std::size_t i = 0; i < cfg.nodule_count; ++i) {
        const double rx = rng.uniform(3.0, max_r);
        const double ry = rng.uniform(3.0, max_r);
        const double cx = rng.uniform(rx + 1.0, static_cast<double>(W) - rx - 1.0);
        const double cy = rng.uniform(ry + 1.0, static_cast<double>(H) - ry - 1.0);
        const int cls = static_cast<int>(rng.index(2));
        const double amp = cls == 0 ? rng.uniform(0.25, 0.45) : -rng.uniform(0.2, 0.38);
        for (std::size_t y = 0; y < H; ++y) {
            for (std::size_t x = 0; x < W; ++x) {
                const double dx = (static_cast<double>(x) - cx) / rx;
                const double dy = (static_cast<double>(y) - cy) / ry;
                const double r2 = dx * dx + dy * dy;
                if (r2 < 1.0) scene.image(0, y, x) += amp * (1.0 - r2);
            }
        }
        GroundTruth gt;
        gt.image_id = image_id;
        gt.box = BoundingBox(cx / static_cast<double>(W), cy / static_cast<double>(H),
                             2.0 * rx / static_cast<double>(W), 2.0 * ry / static_cast<double>(H));
        gt.class_id = cls;
        gt.pixel_area = (2.0 * rx) * (2.0 * ry);
        scene.gts.push_back(gt);
    }

    // multiplicative speckle, then clamp into [0, 1]
    for (double& v : scene.image.data) {
        v *= 1.0 + 0.08 * rng.uniform(-1.0, 1.0);
        v = std::clamp(v, 0.0, 1.0);
    }
    return scene;
}

struct PipelineParams {
    std::vector<Tensor> backbone;           // 4 stages of [Cs x Cs-1 x 3 x 3]
    std::vector<MsfcaParams> stage_msfca;   // one per stage
    std::vector<Tensor> level_proj;         // stages 1..3: [D x Cs]; coarsest: [D x C4 x 3 x 3]
    std::vector<ScDownParams> fuse_down;    // 3 transitions
    std::vector<MsdaParams> encoder;
    std::vector<MsdaParams> decoder;
    Tensor query_embed;    // [numQueries x d]
    Tensor query_ref_raw;  // [numQueries x 2], sigmoid -> reference points
    Tensor box_head_w, box_head_b;  // [4 x d], [4]
    Tensor cls_head_w, cls_head_b;  // [2 x d], [2]
};

namespace detail {

inline std::size_t clip_to_divisor(std::size_t want, std::size_t total) {
    std::size_t g = std::min(want, total);
    while (total % g != 0) --g;
    return g;
}

inline const std::vector<std::size_t>& backbone_channels() {
    static const std::vector<std::size_t> c = {8, 16, 32, 64};
    return c;
}

}  // namespace detail

inline PipelineParams make_params(const PipelineConfig& cfg) {
    cfg.validate();
    Rng rng(mix_seed(cfg.seed, 0x706172616d73ull));  // independent parameter stream
    const auto& chans = detail::backbone_channels();
    const std::size_t d = cfg.d_model;

    PipelineParams p;
    std::size_t cin = 1;
    std::size_t side = cfg.image_size;
    for (std::size_t s = 0; s < 4; ++s) {
        const std::size_t cout = chans[s];
        side = (side + 1) / 2;  // stride-2 stage
        p.backbone.push_back(
            Tensor::random({cout, cin, 3, 3}, rng, 1.0 / std::sqrt(9.0 * static_cast<double>(cin))));

        MsfcaParams m;
        const std::size_t groups = detail::clip_to_divisor(cfg.msfca.groups, cout);
        if (cfg.msfca.frequency_pairs.empty()) {
            m.assignment = default_assignment(groups, side, side);
        } else {
            m.assignment.groups = groups;
            for (std::size_t i = 0; i < groups; ++i)
                m.assignment.pairs.push_back(
                    cfg.msfca.frequency_pairs[i % cfg.msfca.frequency_pairs.size()]);
        }
        m.fc_weight = Tensor::random({cout, cout}, rng, 1.0 / std::sqrt(static_cast<double>(cout)));
        m.fc_bias = Tensor::zeros({cout});
        p.stage_msfca.push_back(std::move(m));
        cin = cout;
    }

    for (std::size_t s = 0; s < 3; ++s)
        p.level_proj.push_back(
            Tensor::random({d, chans[s]}, rng, 1.0 / std::sqrt(static_cast<double>(chans[s]))));
    p.level_proj.push_back(Tensor::random({d, chans[3], 3, 3}, rng,
                                          1.0 / std::sqrt(9.0 * static_cast<double>(chans[3]))));

    for (std::size_t s = 0; s < 3; ++s) {
        ScDownParams sd;
        sd.pointwise = Tensor::random({d, d}, rng, 1.0 / std::sqrt(static_cast<double>(d)));
        sd.depthwise = Tensor::random({d, 3, 3}, rng, 1.0 / 3.0);
        p.fuse_down.push_back(std::move(sd));
    }

    const auto make_attn = [&]() {
        MsdaParams a = MsdaParams::zeros(cfg.msda.heads, cfg.msda.levels, cfg.msda.points, d);
        const std::size_t hd = a.head_dim();
        for (std::size_t h = 0; h < a.heads; ++h) {
            a.value_proj[h] = Tensor::random({hd, d}, rng, 1.0 / std::sqrt(static_cast<double>(d)));
            a.output_proj[h] =
                Tensor::random({d, hd}, rng, 0.35 / std::sqrt(static_cast<double>(hd)));
        }
        a.offset_proj = Tensor::random(a.offset_proj.shape, rng, 0.02);
        a.offset_bias = Tensor::random(a.offset_bias.shape, rng, 1.5);
        a.weight_proj = Tensor::random(a.weight_proj.shape, rng, 0.05);
        a.weight_bias = Tensor::random(a.weight_bias.shape, rng, 0.2);
        return a;
    };
    for (std::size_t i = 0; i < cfg.encoder_layers; ++i) p.encoder.push_back(make_attn());
    for (std::size_t i = 0; i < cfg.decoder_layers; ++i) p.decoder.push_back(make_attn());

    p.query_embed = Tensor::random({cfg.num_queries, d}, rng, 1.0);
    p.query_ref_raw = Tensor::random({cfg.num_queries, 2}, rng, 2.0);
    p.box_head_w = Tensor::random({4, d}, rng, 1.0 / std::sqrt(static_cast<double>(d)));
    p.box_head_b = Tensor::random({4}, rng, 0.2);
    p.cls_head_w = Tensor::random({2, d}, rng, 1.0 / std::sqrt(static_cast<double>(d)));
    p.cls_head_b = Tensor::random({2}, rng, 0.2);
    return p;
}

struct ForwardResult {
    std::vector<Detection> detections;
    std::size_t encoder_tokens = 0;  // sum of H_l * W_l over the fused pyramid
    std::size_t queries = 0;         // predictions emitted by the decoder before the score floor
};

inline ForwardResult toy_forward(const SyntheticScene& scene, const PipelineConfig& cfg,
                                 const PipelineParams& params) {
    cfg.validate();
    if (scene.image.rank() != 3 || scene.image.shape[0] != 1)
        throw std::invalid_argument("toy_forward: scene image must be 1xHxW");
    if (scene.image.shape[1] != cfg.image_size || scene.image.shape[2] != cfg.image_size)
        throw std::invalid_argument(
            "toy_forward: scene extent " + shape_str(scene.image) +
            " disagrees with config image_size " + std::to_string(cfg.image_size) +
            " (the per-stage frequency assignment is built from the config)");
    if (params.backbone.size() != 4 || params.level_proj.size() != 4 || params.fuse_down.size() != 3)
        throw std::invalid_argument("toy_forward: params do not describe a 4-stage pipeline");
    const std::size_t d = cfg.d_model;
    for (std::size_t s = 0; s < 3; ++s)
        if (params.level_proj[s].shape[0] != d)
            throw std::invalid_argument("toy_forward: projection width disagrees with d_model");

    // backbone stages with per-stage channel attention
    std::vector<Tensor> stages;
    Tensor x = scene.image;
    for (std::size_t s = 0; s < 4; ++s) {
        x = conv2d_3x3(x, params.backbone[s], 2);
        x = apply_msfca(x, params.stage_msfca[s]);
        stages.push_back(x);
    }

    // projection + fusion into a d_model pyramid
    const std::size_t gn = detail::clip_to_divisor(cfg.group_norm_groups, d);
    PyramidLevels pyramid;
    for (std::size_t s = 0; s < 3; ++s)
        pyramid.push_back(project_level(stages[s], params.level_proj[s], gn));
    pyramid.push_back(project_level_3x3(stages[3], params.level_proj[3], gn));
    pyramid = hff_fuse(pyramid, params.fuse_down);

    // grid positional encodings
    PosEncConfig pe{d, cfg.posenc_temperature, cfg.posenc_mode};
    for (Tensor& level : pyramid)
        level += encode_2d_grid(level.shape[1], level.shape[2], pe);

    ForwardResult result;
    for (const Tensor& level : pyramid) result.encoder_tokens += level.shape[1] * level.shape[2];

    // encoder: residual deformable self-attention over all pyramid tokens
    Tensor token = Tensor::zeros({d});
    for (const MsdaParams& layer : params.encoder) {
        PyramidLevels next = pyramid;
        for (std::size_t l = 0; l < pyramid.size(); ++l) {
            const std::size_t lh = pyramid[l].shape[1];
            const std::size_t lw = pyramid[l].shape[2];
            const std::size_t hw = lh * lw;
            for (std::size_t y = 0; y < lh; ++y) {
                for (std::size_t xx = 0; xx < lw; ++xx) {
                    for (std::size_t c = 0; c < d; ++c)
                        token.data[c] = pyramid[l].data[c * hw + y * lw + xx];
                    const ReferencePoint ref(
                        (static_cast<double>(xx) + 0.5) / static_cast<double>(lw),
                        (static_cast<double>(y) + 0.5) / static_cast<double>(lh));
                    const Tensor delta = ms_deform_attn(token, ref, pyramid, layer);
                    for (std::size_t c = 0; c < d; ++c)
                        next[l].data[c * hw + y * lw + xx] += delta.data[c];
                }
            }
        }
        pyramid = std::move(next);
    }

    // decoder: residual deformable cross-attention from learned queries
    std::vector<Tensor> queries;
    std::vector<ReferencePoint> refs;
    for (std::size_t q = 0; q < cfg.num_queries; ++q) {
        Tensor z = Tensor::zeros({d});
        for (std::size_t c = 0; c < d; ++c) z.data[c] = params.query_embed(q, c);
        queries.push_back(std::move(z));
        refs.emplace_back(sigmoid(params.query_ref_raw(q, 0)), sigmoid(params.query_ref_raw(q, 1)));
    }
    for (const MsdaParams& layer : params.decoder)
        for (std::size_t q = 0; q < cfg.num_queries; ++q)
            queries[q] += ms_deform_attn(queries[q], refs[q], pyramid, layer);

    // per-query heads: sigmoid box + two independent foreground probabilities
    result.queries = cfg.num_queries;
    for (std::size_t q = 0; q < cfg.num_queries; ++q) {
        const Tensor box_raw = sigmoid(linear(queries[q], params.box_head_w, params.box_head_b));
        const Tensor cls = sigmoid(linear(queries[q], params.cls_head_w, params.cls_head_b));
        const int cls_id = cls.data[1] > cls.data[0] ? 1 : 0;
        const double score = cls.data[static_cast<std::size_t>(cls_id)];
        if (score < cfg.score_floor) continue;
        Detection det;
        det.image_id = scene.image_id;
        det.box = BoundingBox(box_raw.data[0], box_raw.data[1], std::max(box_raw.data[2], 1e-4),
                              std::max(box_raw.data[3], 1e-4));
        det.score = score;
        det.class_id = cls_id;
        result.detections.push_back(std::move(det));
    }
    return result;
}

}  // namespace detrkit
