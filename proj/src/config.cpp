#include "kpanim/config.hpp"

#include <cstdlib>

#include "json_codec.hpp"

namespace kpanim {

using codec::json;

void SessionConfig::validate() const {
    dims.validate();
    if (layout.n_kp() != dims.n_kp)
        throw ValueError("config: layout has " + std::to_string(layout.n_kp()) + " keypoints, dims.n_kp is " +
                         std::to_string(dims.n_kp));
    if (!layout.find("lips"))
        throw ValueError("config: regions must include 'lips'");
    if (layout.lips().size() != dims.lip_size)
        throw ValueError("config: lips region has " + std::to_string(layout.lips().size()) +
                         " keypoints, dims.lip_size is " + std::to_string(dims.lip_size));
    if (window < 1 || window > dims.max_window)
        throw ValueError("config: window must lie in [1, " + std::to_string(dims.max_window) + "]");
    if (overlap < 0 || overlap >= window)
        throw ValueError("config: overlap must lie in [0, window)");
    scale.validate();
    kalman.validate();
    loss.validate();
    if (categories.empty())
        throw ValueError("config: at least one emotion category is required");
}

EngineConfig SessionConfig::engine() const {
    EngineConfig e;
    e.layout = layout;
    e.window = window;
    e.overlap = overlap;
    e.noise_seed = noise_seed;
    return e;
}

SessionConfig parse_config(std::string_view text) {
    const json j = codec::parse(text, "config");
    const std::string ctx = "config";
    codec::check_keys(j,
                      {"n_kp", "regions", "dims", "scale", "kalman", "loss", "categories", "seeds", "window",
                       "overlap"},
                      ctx);
    SessionConfig c;
    Index n_kp = kDefaultKeypointCount;
    if (j.contains("n_kp"))
        n_kp = codec::get_index(j["n_kp"], ctx + ".n_kp");
    if (n_kp <= 0)
        throw FormatError(ctx + ".n_kp: must be positive");
    c.dims.n_kp = n_kp;
    if (j.contains("dims")) {
        c.dims = codec::dims_from_json(j["dims"], ctx + ".dims", c.dims);
        if (j.contains("n_kp") && c.dims.n_kp != n_kp)
            throw FormatError(ctx + ": n_kp and dims.n_kp disagree");
        n_kp = c.dims.n_kp;
    }

    try {
        if (j.contains("regions")) {
            const json& r = j["regions"];
            codec::check_object(r, ctx + ".regions");
            std::vector<RegionMask> masks;
            for (const auto& [name, idx] : r.items()) {
                const std::string rctx = ctx + ".regions." + name;
                if (!idx.is_array())
                    throw FormatError(rctx + ": expected an array of keypoint indices");
                std::vector<Index> rows;
                for (std::size_t i = 0; i < idx.size(); ++i)
                    rows.push_back(codec::get_index(idx[i], rctx + "[" + std::to_string(i) + "]"));
                masks.emplace_back(name, std::move(rows), n_kp);
            }
            c.layout = RegionLayout(n_kp, std::move(masks));
        } else {
            c.layout = generated_layout(n_kp);
        }
    } catch (const FormatError&) {
        throw;
    } catch (const Error& e) {
        throw FormatError(ctx + ".regions: " + e.what());
    }
    if (!j.contains("dims") || !j["dims"].contains("lip_size"))
        if (const auto* lips = c.layout.find("lips"))
            c.dims.lip_size = lips->size();

    if (j.contains("scale")) {
        const json& s = j["scale"];
        codec::check_keys(s, {"f_min", "f_max", "rms_ref"}, ctx + ".scale");
        if (s.contains("f_min"))
            c.scale.f_min = codec::get_number(s["f_min"], ctx + ".scale.f_min");
        if (s.contains("f_max"))
            c.scale.f_max = codec::get_number(s["f_max"], ctx + ".scale.f_max");
        if (s.contains("rms_ref")) {
            if (s["rms_ref"].is_string() && s["rms_ref"].get<std::string>() == "auto")
                c.scale.rms_ref.reset();
            else
                c.scale.rms_ref = codec::get_number(s["rms_ref"], ctx + ".scale.rms_ref");
        }
    }
    if (j.contains("kalman")) {
        const json& k = j["kalman"];
        codec::check_keys(k, {"q", "r"}, ctx + ".kalman");
        if (k.contains("q"))
            c.kalman.q = codec::get_number(k["q"], ctx + ".kalman.q");
        if (k.contains("r"))
            c.kalman.r = codec::get_number(k["r"], ctx + ".kalman.r");
    }
    if (j.contains("loss")) {
        const json& l = j["loss"];
        codec::check_keys(l, {"lambda_rec", "lambda_kp", "lambda_reg", "rec_norm"}, ctx + ".loss");
        if (l.contains("lambda_rec"))
            c.loss.lambda_rec = codec::get_number(l["lambda_rec"], ctx + ".loss.lambda_rec");
        if (l.contains("lambda_kp"))
            c.loss.lambda_kp = codec::get_number(l["lambda_kp"], ctx + ".loss.lambda_kp");
        if (l.contains("lambda_reg"))
            c.loss.lambda_reg = codec::get_number(l["lambda_reg"], ctx + ".loss.lambda_reg");
        if (l.contains("rec_norm")) {
            const std::string n = codec::get_string(l["rec_norm"], ctx + ".loss.rec_norm");
            if (n == "l2")
                c.rec_norm = NormKind::L2;
            else if (n == "l1")
                c.rec_norm = NormKind::L1;
            else
                throw FormatError(ctx + ".loss.rec_norm: expected 'l2' or 'l1'");
        }
    }
    if (j.contains("categories")) {
        const json& cats = j["categories"];
        if (!cats.is_array())
            throw FormatError(ctx + ".categories: expected an array of names");
        c.categories.clear();
        for (std::size_t i = 0; i < cats.size(); ++i)
            c.categories.push_back(codec::get_string(cats[i], ctx + ".categories[" + std::to_string(i) + "]"));
    }
    if (j.contains("seeds")) {
        const json& s = j["seeds"];
        codec::check_keys(s, {"weights", "noise", "train"}, ctx + ".seeds");
        if (s.contains("weights"))
            c.weights_seed = codec::get_u64(s["weights"], ctx + ".seeds.weights");
        if (s.contains("noise"))
            c.noise_seed = codec::get_u64(s["noise"], ctx + ".seeds.noise");
        if (s.contains("train"))
            c.train_seed = codec::get_u64(s["train"], ctx + ".seeds.train");
    }
    if (j.contains("window"))
        c.window = codec::get_index(j["window"], ctx + ".window");
    if (j.contains("overlap"))
        c.overlap = codec::get_index(j["overlap"], ctx + ".overlap");

    try {
        c.validate();
    } catch (const Error& e) {
        throw FormatError(e.what());
    }
    return c;
}

std::string format_config(const SessionConfig& c) {
    json regions = json::object();
    for (const auto& r : c.layout.regions())
        regions[r.name()] = r.indices();
    json scale{{"f_min", c.scale.f_min}, {"f_max", c.scale.f_max}};
    if (c.scale.rms_ref)
        scale["rms_ref"] = *c.scale.rms_ref;
    else
        scale["rms_ref"] = "auto";
    const json j{{"n_kp", c.dims.n_kp},
                 {"regions", regions},
                 {"dims", codec::to_json(c.dims)},
                 {"scale", scale},
                 {"kalman", {{"q", c.kalman.q}, {"r", c.kalman.r}}},
                 {"loss",
                  {{"lambda_rec", c.loss.lambda_rec},
                   {"lambda_kp", c.loss.lambda_kp},
                   {"lambda_reg", c.loss.lambda_reg},
                   {"rec_norm", c.rec_norm == NormKind::L1 ? "l1" : "l2"}}},
                 {"categories", c.categories},
                 {"seeds", {{"weights", c.weights_seed}, {"noise", c.noise_seed}, {"train", c.train_seed}}},
                 {"window", c.window},
                 {"overlap", c.overlap}};
    return j.dump(2) + "\n";
}

SessionConfig load_config(const std::optional<std::filesystem::path>& path) {
    if (path)
        return parse_config(read_file(*path));
    if (const char* env = std::getenv(kConfigEnvVar); env && *env)
        return parse_config(read_file(env));
    return SessionConfig{};
}

} // namespace kpanim
