#pragma once

// JSON wire formats: detections, ground truth, synthetic scenes, pipeline
// configuration (unknown keys rejected) and the six-metric report. All
// serialization goes through ordered_json so output bytes are stable.

#include <cmath>
#include <cstddef>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "detrkit/detection_eval.hpp"
#include "detrkit/pipeline.hpp"

namespace detrkit {

using Json = nlohmann::ordered_json;

// Data / schema problem in an input file; the CLI maps this to exit code 2.
struct SchemaError : std::runtime_error {
    explicit SchemaError(const std::string& msg) : std::runtime_error(msg) {}
};

namespace jsondetail {

inline Json parse_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw SchemaError(path + ": cannot open file");
    try {
        return Json::parse(in);
    } catch (const std::exception& e) {
        throw SchemaError(path + ": malformed JSON: " + e.what());
    }
}

inline void require_keys(const Json& obj, const std::vector<std::string>& allowed,
                         const std::string& where) {
    if (!obj.is_object()) throw SchemaError(where + ": expected an object");
    for (const auto& item : obj.items()) {
        bool ok = false;
        for (const auto& k : allowed)
            if (item.key() == k) { ok = true; break; }
        if (!ok) throw SchemaError(where + ": unknown key '" + item.key() + "'");
    }
}

inline double number(const Json& v, const std::string& where) {
    if (!v.is_number()) throw SchemaError(where + ": expected a number");
    return v.get<double>();
}

inline BoundingBox bbox(const Json& v, const std::string& where) {
    if (!v.is_array() || v.size() != 4)
        throw SchemaError(where + ": bbox must be [cx, cy, w, h]");
    try {
        return BoundingBox(number(v[0], where), number(v[1], where), number(v[2], where),
                           number(v[3], where));
    } catch (const std::invalid_argument& e) {
        throw SchemaError(where + ": " + e.what());
    }
}

inline Json bbox_json(const BoundingBox& b) { return Json::array({b.cx, b.cy, b.w, b.h}); }

}  // namespace jsondetail

// ---- detections ----------------------------------------------------------

inline Json detections_to_json(const std::vector<Detection>& dets) {
    Json arr = Json::array();
    for (const auto& d : dets) {
        Json o;
        o["image_id"] = d.image_id;
        o["bbox"] = jsondetail::bbox_json(d.box);
        o["score"] = d.score;
        o["class_id"] = d.class_id;
        arr.push_back(std::move(o));
    }
    return arr;
}

inline std::vector<Detection> detections_from_json(const Json& doc, const std::string& where) {
    if (!doc.is_array()) throw SchemaError(where + ": expected an array of detections");
    std::vector<Detection> out;
    for (std::size_t i = 0; i < doc.size(); ++i) {
        const std::string at = where + "[" + std::to_string(i) + "]";
        const Json& o = doc[i];
        jsondetail::require_keys(o, {"image_id", "bbox", "score", "class_id"}, at);
        if (!o.contains("image_id") || !o["image_id"].is_string())
            throw SchemaError(at + ": missing string image_id");
        Detection d;
        d.image_id = o["image_id"].get<std::string>();
        d.box = jsondetail::bbox(o.value("bbox", Json()), at);
        d.score = jsondetail::number(o.value("score", Json()), at + ".score");
        if (d.score < 0.0 || d.score > 1.0) throw SchemaError(at + ": score must lie in [0,1]");
        if (!o.contains("class_id") || !o["class_id"].is_number_integer())
            throw SchemaError(at + ": missing integer class_id");
        d.class_id = o["class_id"].get<int>();
        out.push_back(std::move(d));
    }
    return out;
}

// ---- ground truth --------------------------------------------------------

inline Json ground_truth_to_json(const std::vector<GroundTruth>& gts) {
    Json arr = Json::array();
    for (const auto& g : gts) {
        Json o;
        o["image_id"] = g.image_id;
        o["bbox"] = jsondetail::bbox_json(g.box);
        o["class_id"] = g.class_id;
        o["pixel_area"] = g.pixel_area;
        arr.push_back(std::move(o));
    }
    return arr;
}

inline std::vector<GroundTruth> ground_truth_from_json(const Json& doc, const std::string& where) {
    if (!doc.is_array()) throw SchemaError(where + ": expected an array of ground truths");
    std::vector<GroundTruth> out;
    for (std::size_t i = 0; i < doc.size(); ++i) {
        const std::string at = where + "[" + std::to_string(i) + "]";
        const Json& o = doc[i];
        jsondetail::require_keys(o, {"image_id", "bbox", "class_id", "pixel_area"}, at);
        if (!o.contains("image_id") || !o["image_id"].is_string())
            throw SchemaError(at + ": missing string image_id");
        GroundTruth g;
        g.image_id = o["image_id"].get<std::string>();
        g.box = jsondetail::bbox(o.value("bbox", Json()), at);
        if (!o.contains("class_id") || !o["class_id"].is_number_integer())
            throw SchemaError(at + ": missing integer class_id");
        g.class_id = o["class_id"].get<int>();
        g.pixel_area = jsondetail::number(o.value("pixel_area", Json()), at + ".pixel_area");
        if (!(g.pixel_area > 0.0)) throw SchemaError(at + ": pixel_area must be positive");
        out.push_back(std::move(g));
    }
    return out;
}

// ---- scenes ----------------------------------------------------------------

inline Json scenes_to_json(const std::vector<SyntheticScene>& scenes) {
    Json arr = Json::array();
    for (const auto& s : scenes) {
        Json o;
        o["image_id"] = s.image_id;
        o["height"] = s.image.shape[1];
        o["width"] = s.image.shape[2];
        o["pixels"] = s.image.data;
        Json gts = Json::array();
        for (const auto& g : s.gts) {
            Json go;
            go["bbox"] = jsondetail::bbox_json(g.box);
            go["class_id"] = g.class_id;
            go["pixel_area"] = g.pixel_area;
            gts.push_back(std::move(go));
        }
        o["ground_truth"] = std::move(gts);
        arr.push_back(std::move(o));
    }
    return arr;
}

inline std::vector<SyntheticScene> scenes_from_json(const Json& doc, const std::string& where) {
    if (!doc.is_array()) throw SchemaError(where + ": expected an array of scenes");
    std::vector<SyntheticScene> out;
    for (std::size_t i = 0; i < doc.size(); ++i) {
        const std::string at = where + "[" + std::to_string(i) + "]";
        const Json& o = doc[i];
        jsondetail::require_keys(o, {"image_id", "height", "width", "pixels", "ground_truth"}, at);
        if (!o.contains("image_id") || !o["image_id"].is_string())
            throw SchemaError(at + ": missing string image_id");
        SyntheticScene s;
        s.image_id = o["image_id"].get<std::string>();
        if (!o.contains("height") || !o.contains("width") || !o["height"].is_number_unsigned() ||
            !o["width"].is_number_unsigned())
            throw SchemaError(at + ": missing height/width");
        const std::size_t h = o["height"].get<std::size_t>();
        const std::size_t w = o["width"].get<std::size_t>();
        if (!o.contains("pixels") || !o["pixels"].is_array() || o["pixels"].size() != h * w)
            throw SchemaError(at + ": pixels must hold height*width values");
        std::vector<double> px;
        px.reserve(h * w);
        for (const auto& v : o["pixels"]) px.push_back(jsondetail::number(v, at + ".pixels"));
        s.image = Tensor({1, h, w}, std::move(px));
        if (!o.contains("ground_truth") || !o["ground_truth"].is_array())
            throw SchemaError(at + ": missing ground_truth array");
        for (std::size_t j = 0; j < o["ground_truth"].size(); ++j) {
            const std::string gat = at + ".ground_truth[" + std::to_string(j) + "]";
            const Json& go = o["ground_truth"][j];
            jsondetail::require_keys(go, {"bbox", "class_id", "pixel_area"}, gat);
            GroundTruth g;
            g.image_id = s.image_id;
            g.box = jsondetail::bbox(go.value("bbox", Json()), gat);
            if (!go.contains("class_id") || !go["class_id"].is_number_integer())
                throw SchemaError(gat + ": missing integer class_id");
            g.class_id = go["class_id"].get<int>();
            g.pixel_area = jsondetail::number(go.value("pixel_area", Json()), gat + ".pixel_area");
            s.gts.push_back(std::move(g));
        }
        out.push_back(std::move(s));
    }
    return out;
}

// ---- configuration ---------------------------------------------------------

inline Json config_to_json(const PipelineConfig& c) {
    Json o;
    o["encoder_layers"] = c.encoder_layers;
    o["decoder_layers"] = c.decoder_layers;
    o["d_model"] = c.d_model;
    o["msda"] = Json{{"heads", c.msda.heads}, {"levels", c.msda.levels}, {"points", c.msda.points}};
    o["posenc"] = Json{{"temperature", c.posenc_temperature},
                       {"temperature_mode", c.posenc_mode == TemperatureMode::Scale ? "scale" : "base"}};
    o["loss_weights"] = Json{{"focal", c.loss_weights.focal},
                             {"l1", c.loss_weights.l1},
                             {"giou", c.loss_weights.giou},
                             {"gamma", c.loss_weights.gamma},
                             {"alpha", c.loss_weights.alpha}};
    o["dn_noise"] = Json{{"box_noise_scale", c.dn_noise.box_noise_scale},
                         {"label_flip_prob", c.dn_noise.label_flip_prob}};
    Json pairs = Json::array();
    for (const auto& uv : c.msfca.frequency_pairs) pairs.push_back(Json::array({uv.first, uv.second}));
    o["msfca"] = Json{{"groups", c.msfca.groups}, {"frequency_pairs", std::move(pairs)}};
    o["num_queries"] = c.num_queries;
    o["seed"] = c.seed;
    o["image_size"] = c.image_size;
    o["nodule_count"] = c.nodule_count;
    o["score_floor"] = c.score_floor;
    o["group_norm_groups"] = c.group_norm_groups;
    return o;
}

inline PipelineConfig config_from_json(const Json& doc, const std::string& where) {
    PipelineConfig c;
    jsondetail::require_keys(
        doc,
        {"encoder_layers", "decoder_layers", "d_model", "msda", "posenc", "loss_weights",
         "dn_noise", "msfca", "num_queries", "seed", "image_size", "nodule_count", "score_floor",
         "group_norm_groups"},
        where);
    const auto get_size = [&](const Json& o, const char* key, std::size_t dflt) {
        if (!o.contains(key)) return dflt;
        if (!o[key].is_number_unsigned())
            throw SchemaError(where + "." + key + ": expected a nonnegative integer");
        return o[key].get<std::size_t>();
    };
    const auto get_num = [&](const Json& o, const char* key, double dflt) {
        if (!o.contains(key)) return dflt;
        return jsondetail::number(o[key], where + "." + std::string(key));
    };
    c.encoder_layers = get_size(doc, "encoder_layers", c.encoder_layers);
    c.decoder_layers = get_size(doc, "decoder_layers", c.decoder_layers);
    c.d_model = get_size(doc, "d_model", c.d_model);
    if (doc.contains("msda")) {
        jsondetail::require_keys(doc["msda"], {"heads", "levels", "points"}, where + ".msda");
        c.msda.heads = get_size(doc["msda"], "heads", c.msda.heads);
        c.msda.levels = get_size(doc["msda"], "levels", c.msda.levels);
        c.msda.points = get_size(doc["msda"], "points", c.msda.points);
    }
    if (doc.contains("posenc")) {
        jsondetail::require_keys(doc["posenc"], {"temperature", "temperature_mode"}, where + ".posenc");
        c.posenc_temperature = get_num(doc["posenc"], "temperature", c.posenc_temperature);
        if (doc["posenc"].contains("temperature_mode")) {
            const std::string mode = doc["posenc"]["temperature_mode"].get<std::string>();
            if (mode == "scale") c.posenc_mode = TemperatureMode::Scale;
            else if (mode == "base") c.posenc_mode = TemperatureMode::Base;
            else throw SchemaError(where + ".posenc.temperature_mode: expected 'scale' or 'base'");
        }
    }
    if (doc.contains("loss_weights")) {
        jsondetail::require_keys(doc["loss_weights"], {"focal", "l1", "giou", "gamma", "alpha"},
                                 where + ".loss_weights");
        c.loss_weights.focal = get_num(doc["loss_weights"], "focal", c.loss_weights.focal);
        c.loss_weights.l1 = get_num(doc["loss_weights"], "l1", c.loss_weights.l1);
        c.loss_weights.giou = get_num(doc["loss_weights"], "giou", c.loss_weights.giou);
        c.loss_weights.gamma = get_num(doc["loss_weights"], "gamma", c.loss_weights.gamma);
        c.loss_weights.alpha = get_num(doc["loss_weights"], "alpha", c.loss_weights.alpha);
    }
    if (doc.contains("dn_noise")) {
        jsondetail::require_keys(doc["dn_noise"], {"box_noise_scale", "label_flip_prob"},
                                 where + ".dn_noise");
        c.dn_noise.box_noise_scale =
            get_num(doc["dn_noise"], "box_noise_scale", c.dn_noise.box_noise_scale);
        c.dn_noise.label_flip_prob =
            get_num(doc["dn_noise"], "label_flip_prob", c.dn_noise.label_flip_prob);
    }
    if (doc.contains("msfca")) {
        jsondetail::require_keys(doc["msfca"], {"groups", "frequency_pairs"}, where + ".msfca");
        c.msfca.groups = get_size(doc["msfca"], "groups", c.msfca.groups);
        if (doc["msfca"].contains("frequency_pairs")) {
            const Json& pairs = doc["msfca"]["frequency_pairs"];
            if (!pairs.is_array()) throw SchemaError(where + ".msfca.frequency_pairs: expected array");
            for (const auto& uv : pairs) {
                if (!uv.is_array() || uv.size() != 2 || !uv[0].is_number_unsigned() ||
                    !uv[1].is_number_unsigned())
                    throw SchemaError(where + ".msfca.frequency_pairs: expected [u, v] pairs");
                c.msfca.frequency_pairs.emplace_back(uv[0].get<std::size_t>(),
                                                     uv[1].get<std::size_t>());
            }
        }
    }
    c.num_queries = get_size(doc, "num_queries", c.num_queries);
    if (doc.contains("seed")) {
        if (!doc["seed"].is_number_unsigned())
            throw SchemaError(where + ".seed: expected a nonnegative integer");
        c.seed = doc["seed"].get<std::uint64_t>();
    }
    c.image_size = get_size(doc, "image_size", c.image_size);
    c.nodule_count = get_size(doc, "nodule_count", c.nodule_count);
    c.score_floor = get_num(doc, "score_floor", c.score_floor);
    c.group_norm_groups = get_size(doc, "group_norm_groups", c.group_norm_groups);
    try {
        c.validate();
    } catch (const std::invalid_argument& e) {
        throw SchemaError(where + ": " + e.what());
    }
    return c;
}

// ---- metric report ---------------------------------------------------------

inline Json report_to_json(const EvalReport& r) {
    const auto field = [](double v) { return std::isnan(v) ? Json() : Json(v); };
    Json o;
    o["mAP"] = field(r.map_50_95);
    o["mAP50"] = field(r.map_50);
    o["mAP75"] = field(r.map_75);
    o["AP_s"] = field(r.ap_small);
    o["AP_m"] = field(r.ap_medium);
    o["AP_l"] = field(r.ap_large);
    return o;
}

inline std::string report_table(const EvalReport& r) {
    const auto cell = [](double v) {
        if (std::isnan(v)) return std::string("   n/a");
        char buf[16];
        std::snprintf(buf, sizeof buf, "%6.4f", v);
        return std::string(buf);
    };
    std::ostringstream os;
    os << "   mAP    mAP50   mAP75   AP_s    AP_m    AP_l\n";
    os << cell(r.map_50_95) << "  " << cell(r.map_50) << "  " << cell(r.map_75) << "  "
       << cell(r.ap_small) << "  " << cell(r.ap_medium) << "  " << cell(r.ap_large) << "\n";
    for (const auto& [cls, ap] : r.per_class)
        os << "class " << cls << " AP@0.50:0.95 = " << cell(ap) << "\n";
    return os.str();
}

inline void write_json_file(const std::string& path, const Json& doc) {
    std::ofstream out(path);
    if (!out) throw SchemaError(path + ": cannot open for writing");
    out << doc.dump(2) << "\n";
}

inline Json read_json_file(const std::string& path) { return jsondetail::parse_file(path); }

}  // namespace detrkit
