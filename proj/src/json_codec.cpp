#include "json_codec.hpp"

#include <cmath>
#include <limits>

namespace kpanim::codec {

namespace {

std::string at_path(std::string_view ctx, std::string_view key) {
    std::string s(ctx);
    if (!s.empty())
        s += '.';
    s += key;
    return s;
}

[[noreturn]] void fail(std::string_view ctx, const std::string& what) {
    throw FormatError(std::string(ctx) + ": " + what);
}

} // namespace

void check_object(const json& j, std::string_view ctx) {
    if (!j.is_object())
        fail(ctx, "expected an object");
}

void check_keys(const json& j, std::initializer_list<std::string_view> allowed, std::string_view ctx) {
    check_object(j, ctx);
    for (const auto& [key, _] : j.items()) {
        bool known = false;
        for (auto a : allowed)
            known = known || key == a;
        if (!known)
            fail(ctx, "unknown key '" + key + "'");
    }
}

const json& require(const json& j, std::string_view key, std::string_view ctx) {
    check_object(j, ctx);
    const auto it = j.find(key);
    if (it == j.end())
        fail(ctx, "missing key '" + std::string(key) + "'");
    return *it;
}

double get_number(const json& j, std::string_view ctx) {
    if (!j.is_number())
        fail(ctx, "expected a number");
    const double v = j.get<double>();
    if (!std::isfinite(v))
        fail(ctx, "expected a finite number");
    return v;
}

Index get_index(const json& j, std::string_view ctx) {
    if (!j.is_number_integer())
        fail(ctx, "expected an integer");
    return j.get<Index>();
}

std::uint64_t get_u64(const json& j, std::string_view ctx) {
    if (j.is_number_unsigned())
        return j.get<std::uint64_t>();
    if (j.is_number_integer() && j.get<long long>() >= 0)
        return static_cast<std::uint64_t>(j.get<long long>());
    fail(ctx, "expected a non-negative integer");
}

std::string get_string(const json& j, std::string_view ctx) {
    if (!j.is_string())
        fail(ctx, "expected a string");
    return j.get<std::string>();
}

Eigen::VectorXd get_vector(const json& j, std::string_view ctx, Index expected) {
    if (!j.is_array())
        fail(ctx, "expected an array of numbers");
    if (expected >= 0 && static_cast<Index>(j.size()) != expected)
        fail(ctx, "expected " + std::to_string(expected) + " values, got " + std::to_string(j.size()));
    Eigen::VectorXd v(static_cast<Index>(j.size()));
    for (std::size_t i = 0; i < j.size(); ++i)
        v(static_cast<Index>(i)) = get_number(j[i], std::string(ctx) + "[" + std::to_string(i) + "]");
    return v;
}

json to_json(const Eigen::Ref<const Eigen::MatrixXd>& m) {
    json a = json::array();
    for (Index r = 0; r < m.rows(); ++r)
        for (Index c = 0; c < m.cols(); ++c)
            a.push_back(m(r, c));
    return a;
}

json to_json(const PoseD& p) {
    return json{{"rotation", to_json(p.rotation)}, {"translation", to_json(p.translation)}, {"scale", p.scale}};
}

PoseD pose_from_json(const json& j, std::string_view ctx) {
    check_keys(j, {"rotation", "translation", "scale"}, ctx);
    PoseD p;
    const Eigen::VectorXd r = get_vector(require(j, "rotation", ctx), at_path(ctx, "rotation"), 9);
    for (Index i = 0; i < 9; ++i)
        p.rotation(i / 3, i % 3) = r(i);
    p.translation = get_vector(require(j, "translation", ctx), at_path(ctx, "translation"), 3).transpose();
    p.scale = get_number(require(j, "scale", ctx), at_path(ctx, "scale"));
    try {
        p.validate();
    } catch (const Error& e) {
        fail(ctx, e.what());
    }
    return p;
}

namespace {

json to_json(const EmotionSetting& s) { return json{{"category", s.category}, {"intensity", s.intensity}}; }

EmotionSetting setting_from_json(const json& j, std::string_view ctx, bool allow_mode) {
    if (allow_mode)
        check_keys(j, {"mode", "category", "intensity"}, ctx);
    else
        check_keys(j, {"category", "intensity"}, ctx);
    EmotionSetting s;
    if (j.contains("category"))
        s.category = get_string(j["category"], at_path(ctx, "category"));
    if (j.contains("intensity"))
        s.intensity = get_number(j["intensity"], at_path(ctx, "intensity"));
    return s;
}

} // namespace

json to_json(const EmotionSpec& e) {
    if (e.mode == EmotionSpec::Mode::Global) {
        json j = to_json(e.global.value_or(EmotionSetting{}));
        j["mode"] = "global";
        return j;
    }
    json regions = json::object();
    if (e.regional)
        for (const auto& [name, s] : *e.regional)
            regions[name] = to_json(s);
    return json{{"mode", "regional"}, {"regions", regions}};
}

EmotionSpec emotion_from_json(const json& j, std::string_view ctx) {
    check_object(j, ctx);
    const std::string mode = j.contains("mode") ? get_string(j["mode"], at_path(ctx, "mode")) : "global";
    if (mode == "global") {
        const EmotionSetting s = setting_from_json(j, ctx, true);
        return EmotionSpec::make_global(s.category, s.intensity);
    }
    if (mode != "regional")
        fail(at_path(ctx, "mode"), "expected 'global' or 'regional', got '" + mode + "'");
    check_keys(j, {"mode", "regions"}, ctx);
    const json& regions = require(j, "regions", ctx);
    const std::string rctx = at_path(ctx, "regions");
    check_object(regions, rctx);
    std::map<std::string, EmotionSetting> parts;
    for (const auto& [name, value] : regions.items())
        parts.emplace(name, setting_from_json(value, at_path(rctx, name), false));
    return EmotionSpec::make_regional(std::move(parts));
}

namespace {

json to_json(const ScaleConfig& c) {
    json j{{"f_min", c.f_min}, {"f_max", c.f_max}};
    if (c.rms_ref)
        j["rms_ref"] = *c.rms_ref;
    else
        j["rms_ref"] = "auto";
    return j;
}

LipScaleControl lip_scale_from_json(const json& j, std::string_view ctx, const ScaleConfig& defaults) {
    check_object(j, ctx);
    LipScaleControl c;
    c.amplitude = defaults;
    const std::string mode = get_string(require(j, "mode", ctx), at_path(ctx, "mode"));
    if (mode == "off") {
        check_keys(j, {"mode"}, ctx);
        c.mode = LipScaleMode::Off;
    } else if (mode == "fixed") {
        check_keys(j, {"mode", "factor"}, ctx);
        c.mode = LipScaleMode::Fixed;
        c.factor = get_number(require(j, "factor", ctx), at_path(ctx, "factor"));
    } else if (mode == "amplitude") {
        check_keys(j, {"mode", "f_min", "f_max", "rms_ref"}, ctx);
        c.mode = LipScaleMode::Amplitude;
        if (j.contains("f_min"))
            c.amplitude.f_min = get_number(j["f_min"], at_path(ctx, "f_min"));
        if (j.contains("f_max"))
            c.amplitude.f_max = get_number(j["f_max"], at_path(ctx, "f_max"));
        if (j.contains("rms_ref")) {
            const json& r = j["rms_ref"];
            if (r.is_string()) {
                if (r.get<std::string>() != "auto")
                    fail(at_path(ctx, "rms_ref"), "expected a number or 'auto'");
                c.amplitude.rms_ref.reset();
            } else {
                c.amplitude.rms_ref = get_number(r, at_path(ctx, "rms_ref"));
            }
        }
    } else {
        fail(at_path(ctx, "mode"), "expected 'off', 'fixed' or 'amplitude', got '" + mode + "'");
    }
    return c;
}

} // namespace

json to_json(const ControlSchedule& s) {
    json lip;
    switch (s.lip_scale.mode) {
    case LipScaleMode::Off: lip = json{{"mode", "off"}}; break;
    case LipScaleMode::Fixed: lip = json{{"mode", "fixed"}, {"factor", s.lip_scale.factor}}; break;
    case LipScaleMode::Amplitude:
        lip = to_json(s.lip_scale.amplitude);
        lip["mode"] = "amplitude";
        break;
    }
    json edits = json::array();
    for (const auto& e : s.phoneme_edits)
        edits.push_back(json{{"phoneme", e.phoneme}, {"lambda", e.lambda}, {"begin", e.begin}, {"end", e.end}});
    json j{{"lip_scale", lip}, {"phoneme_edits", edits}, {"emotion", to_json(s.emotion)}};
    if (s.kalman)
        j["kalman"] = json{{"q", s.kalman->q}, {"r", s.kalman->r}};
    else
        j["kalman"] = nullptr;
    return j;
}

ControlSchedule schedule_from_json(const json& j, const ScheduleDefaults& defaults) {
    const std::string ctx = "schedule";
    check_keys(j, {"lip_scale", "phoneme_edits", "emotion", "kalman"}, ctx);
    ControlSchedule s;
    s.lip_scale.amplitude = defaults.scale;
    if (j.contains("lip_scale"))
        s.lip_scale = lip_scale_from_json(j["lip_scale"], ctx + ".lip_scale", defaults.scale);
    if (j.contains("phoneme_edits")) {
        const json& edits = j["phoneme_edits"];
        if (!edits.is_array())
            fail(ctx + ".phoneme_edits", "expected an array");
        for (std::size_t i = 0; i < edits.size(); ++i) {
            const std::string ectx = ctx + ".phoneme_edits[" + std::to_string(i) + "]";
            const json& e = edits[i];
            check_keys(e, {"phoneme", "lambda", "begin", "end"}, ectx);
            PhonemeEdit edit;
            edit.phoneme = get_string(require(e, "phoneme", ectx), ectx + ".phoneme");
            edit.lambda = get_number(require(e, "lambda", ectx), ectx + ".lambda");
            edit.begin = get_index(require(e, "begin", ectx), ectx + ".begin");
            edit.end = get_index(require(e, "end", ectx), ectx + ".end");
            s.phoneme_edits.push_back(std::move(edit));
        }
    }
    if (j.contains("emotion"))
        s.emotion = emotion_from_json(j["emotion"], ctx + ".emotion");
    if (j.contains("kalman") && !j["kalman"].is_null()) {
        const json& k = j["kalman"];
        check_keys(k, {"q", "r"}, ctx + ".kalman");
        KalmanParams p = defaults.kalman;
        if (k.contains("q"))
            p.q = get_number(k["q"], ctx + ".kalman.q");
        if (k.contains("r"))
            p.r = get_number(k["r"], ctx + ".kalman.r");
        s.kalman = p;
    }
    return s;
}

json to_json(const ModelDims& d) {
    return json{{"d_model", d.d_model},       {"d_audio", d.d_audio},         {"n_layers", d.n_layers},
                {"n_heads", d.n_heads},       {"n_kp", d.n_kp},               {"lip_size", d.lip_size},
                {"noise_sigma", d.noise_sigma}, {"n_styles", d.n_styles},     {"max_window", d.max_window},
                {"d_emotion", d.d_emotion},   {"ff_width", d.ff_width},       {"refiner_hidden", d.refiner_hidden}};
}

ModelDims dims_from_json(const json& j, const std::string& ctx, ModelDims d) {
    check_keys(j,
                      {"d_model", "d_audio", "n_layers", "n_heads", "n_kp", "lip_size", "noise_sigma", "n_styles",
                       "max_window", "d_emotion", "ff_width", "refiner_hidden"},
                      ctx);
    const auto idx = [&](const char* key, Index& field) {
        if (j.contains(key))
            field = get_index(j[key], ctx + "." + key);
    };
    idx("d_model", d.d_model);
    idx("d_audio", d.d_audio);
    idx("n_layers", d.n_layers);
    idx("n_heads", d.n_heads);
    idx("n_kp", d.n_kp);
    idx("lip_size", d.lip_size);
    idx("n_styles", d.n_styles);
    idx("max_window", d.max_window);
    idx("d_emotion", d.d_emotion);
    idx("ff_width", d.ff_width);
    idx("refiner_hidden", d.refiner_hidden);
    if (j.contains("noise_sigma"))
        d.noise_sigma = get_number(j["noise_sigma"], ctx + ".noise_sigma");
    return d;
}

json parse(std::string_view text, std::string_view ctx) {
    try {
        return json::parse(text.begin(), text.end());
    } catch (const json::parse_error& e) {
        fail(ctx, std::string("malformed JSON (") + e.what() + ")");
    }
}

} // namespace kpanim::codec
