#include "kpanim/io.hpp"

#include <fstream>
#include <optional>
#include <sstream>

#include "json_codec.hpp"

namespace kpanim {

using codec::json;

namespace {

/// Non-blank lines of a JSON Lines document with their 1-based line numbers.
class LineReader {
public:
    explicit LineReader(std::string_view text) : text_(text) {}

    std::optional<std::pair<std::size_t, json>> next() {
        while (pos_ < text_.size()) {
            const std::size_t end = std::min(text_.find('\n', pos_), text_.size());
            const std::string_view line = text_.substr(pos_, end - pos_);
            pos_ = end + 1;
            ++line_;
            if (line.find_first_not_of(" \t\r") == std::string_view::npos)
                continue;
            return std::make_pair(line_, codec::parse(line, context()));
        }
        return std::nullopt;
    }

    std::string context() const { return "line " + std::to_string(line_); }

private:
    std::string_view text_;
    std::size_t pos_ = 0;
    std::size_t line_ = 0;
};

json read_header(LineReader& reader, std::string_view format) {
    auto first = reader.next();
    if (!first)
        throw FormatError(std::string(format) + ": empty input, expected a header record");
    const json& h = first->second;
    const std::string ctx = reader.context();
    const std::string name = codec::get_string(codec::require(h, "format", ctx), ctx + ".format");
    if (name != format)
        throw FormatError(ctx + ": expected format '" + std::string(format) + "', found '" + name + "'");
    const json& v = codec::require(h, "version", ctx);
    if (!v.is_number_integer() || v.get<long long>() != kFileFormatVersion)
        throw VersionError(ctx + ": unsupported " + std::string(format) + " version " + v.dump() + " (supported: " +
                           std::to_string(kFileFormatVersion) + ")");
    return h;
}

void check_count(std::string_view what, Index declared, Index found) {
    if (declared != found)
        throw FormatError(std::string(what) + ": header declares " + std::to_string(declared) +
                          " records but the file holds " + std::to_string(found));
}

void check_index(const json& rec, Index expected, const std::string& ctx) {
    const Index idx = codec::get_index(codec::require(rec, "index", ctx), ctx + ".index");
    if (idx != expected)
        throw FormatError(ctx + ": record index " + std::to_string(idx) + ", expected " + std::to_string(expected));
}

std::string lines(const json& header, const std::vector<json>& records) {
    std::string out = header.dump();
    out += '\n';
    for (const auto& r : records) {
        out += r.dump();
        out += '\n';
    }
    return out;
}

KeypointsD keypoints_from(const Eigen::VectorXd& flat, Index n_kp) {
    KeypointsD k(n_kp, 3);
    for (Index i = 0; i < flat.size(); ++i)
        k(i / 3, i % 3) = flat(i);
    return k;
}

} // namespace

std::string format_trajectory(const Trajectory& t) {
    t.validate();
    const json header{{"format", "kpanim.trajectory"}, {"version", kFileFormatVersion}, {"fps", t.fps},
                      {"n_kp", t.n_kp()},            {"frame_count", t.size()},       {"has_pose", t.has_pose()}};
    std::vector<json> records;
    records.reserve(t.frames.size());
    for (std::size_t i = 0; i < t.frames.size(); ++i) {
        json r{{"index", i}, {"coords", codec::to_json(t.frames[i])}};
        if (t.has_pose())
            r["pose"] = codec::to_json(t.poses[i]);
        records.push_back(std::move(r));
    }
    return lines(header, records);
}

Trajectory parse_trajectory(std::string_view text) {
    LineReader reader(text);
    const json h = read_header(reader, "kpanim.trajectory");
    const std::string hctx = "line 1";
    codec::check_keys(h, {"format", "version", "fps", "n_kp", "frame_count", "has_pose"}, hctx);
    Trajectory t;
    t.fps = codec::get_number(codec::require(h, "fps", hctx), hctx + ".fps");
    if (!(t.fps > 0.0))
        throw FormatError(hctx + ".fps: must be positive");
    const Index n_kp = codec::get_index(codec::require(h, "n_kp", hctx), hctx + ".n_kp");
    const Index count = codec::get_index(codec::require(h, "frame_count", hctx), hctx + ".frame_count");
    const json& hp = codec::require(h, "has_pose", hctx);
    if (!hp.is_boolean())
        throw FormatError(hctx + ".has_pose: expected a boolean");
    const bool has_pose = hp.get<bool>();
    if (n_kp < 0 || count < 0 || (count > 0 && n_kp == 0))
        throw FormatError(hctx + ": n_kp and frame_count must be non-negative, n_kp positive when frames exist");

    Index found = 0;
    while (auto rec = reader.next()) {
        const std::string ctx = reader.context();
        const json& r = rec->second;
        codec::check_keys(r, has_pose ? std::initializer_list<std::string_view>{"index", "coords", "pose"}
                                      : std::initializer_list<std::string_view>{"index", "coords"},
                          ctx);
        check_index(r, found, ctx);
        t.frames.push_back(keypoints_from(codec::get_vector(codec::require(r, "coords", ctx), ctx + ".coords", 3 * n_kp), n_kp));
        if (has_pose)
            t.poses.push_back(codec::pose_from_json(codec::require(r, "pose", ctx), ctx + ".pose"));
        ++found;
    }
    check_count("trajectory frame_count", count, found);
    return t;
}

std::string format_audio(const AudioFeatureSequence& a) {
    a.validate();
    const json header{{"format", "kpanim.audio"}, {"version", kFileFormatVersion}, {"fps", kFramesPerSecond},
                      {"frame_count", a.frames()}, {"dim", a.dim()}};
    std::vector<json> records;
    for (Index t = 0; t < a.frames(); ++t)
        records.push_back(json{{"index", t}, {"rms", a.rms(t)}, {"embedding", codec::to_json(a.embeddings.row(t))}});
    return lines(header, records);
}

AudioFeatureSequence parse_audio(std::string_view text) {
    LineReader reader(text);
    const json h = read_header(reader, "kpanim.audio");
    const std::string hctx = "line 1";
    codec::check_keys(h, {"format", "version", "fps", "frame_count", "dim"}, hctx);
    const double fps = codec::get_number(codec::require(h, "fps", hctx), hctx + ".fps");
    if (fps != kFramesPerSecond)
        throw FormatError(hctx + ".fps: audio features must be aligned to 25 fps video frames");
    const Index count = codec::get_index(codec::require(h, "frame_count", hctx), hctx + ".frame_count");
    const Index dim = codec::get_index(codec::require(h, "dim", hctx), hctx + ".dim");
    if (count < 0 || dim <= 0)
        throw FormatError(hctx + ": frame_count must be non-negative and dim positive");

    std::vector<Eigen::VectorXd> rows;
    std::vector<double> rms;
    while (auto rec = reader.next()) {
        const std::string ctx = reader.context();
        const json& r = rec->second;
        codec::check_keys(r, {"index", "rms", "embedding"}, ctx);
        check_index(r, static_cast<Index>(rows.size()), ctx);
        rms.push_back(codec::get_number(codec::require(r, "rms", ctx), ctx + ".rms"));
        if (rms.back() < 0.0)
            throw FormatError(ctx + ".rms: must be non-negative");
        rows.push_back(codec::get_vector(codec::require(r, "embedding", ctx), ctx + ".embedding", dim));
    }
    check_count("audio frame_count", count, static_cast<Index>(rows.size()));
    AudioFeatureSequence a;
    a.embeddings.resize(count, dim);
    a.rms.resize(count);
    for (Index t = 0; t < count; ++t) {
        a.embeddings.row(t) = rows[static_cast<std::size_t>(t)].transpose();
        a.rms(t) = rms[static_cast<std::size_t>(t)];
    }
    return a;
}

std::string save_weights(const ModelWeights& w) {
    w.validate();
    const json header{{"format", "kpanim.weights"},
                      {"version", w.version},
                      {"dims", codec::to_json(w.dims)},
                      {"categories", w.categories},
                      {"tensor_count", w.tensors.size()}};
    std::vector<json> records;
    for (const auto& [name, m] : w.tensors)
        records.push_back(json{{"name", name}, {"rows", m.rows()}, {"cols", m.cols()}, {"data", codec::to_json(m)}});
    return lines(header, records);
}

ModelWeights load_weights(std::string_view text) {
    LineReader reader(text);
    const json h = read_header(reader, "kpanim.weights");
    const std::string hctx = "line 1";
    codec::check_keys(h, {"format", "version", "dims", "categories", "tensor_count"}, hctx);
    ModelWeights w;
    w.version = kWeightsFormatVersion;
    w.dims = codec::dims_from_json(codec::require(h, "dims", hctx), hctx + ".dims");
    const json& cats = codec::require(h, "categories", hctx);
    if (!cats.is_array())
        throw FormatError(hctx + ".categories: expected an array");
    for (std::size_t i = 0; i < cats.size(); ++i)
        w.categories.push_back(codec::get_string(cats[i], hctx + ".categories[" + std::to_string(i) + "]"));
    const Index count = codec::get_index(codec::require(h, "tensor_count", hctx), hctx + ".tensor_count");

    Index found = 0;
    while (auto rec = reader.next()) {
        const std::string ctx = reader.context();
        const json& r = rec->second;
        codec::check_keys(r, {"name", "rows", "cols", "data"}, ctx);
        const std::string name = codec::get_string(codec::require(r, "name", ctx), ctx + ".name");
        const Index rows = codec::get_index(codec::require(r, "rows", ctx), ctx + ".rows");
        const Index cols = codec::get_index(codec::require(r, "cols", ctx), ctx + ".cols");
        if (rows < 0 || cols < 0)
            throw FormatError(ctx + ": negative tensor shape");
        const Eigen::VectorXd data = codec::get_vector(codec::require(r, "data", ctx), ctx + ".data", rows * cols);
        Eigen::MatrixXd m(rows, cols);
        for (Index i = 0; i < data.size(); ++i)
            m(i / cols, i % cols) = data(i);
        if (!w.tensors.emplace(name, std::move(m)).second)
            throw FormatError(ctx + ": duplicate tensor '" + name + "'");
        ++found;
    }
    check_count("weights tensor_count", count, found);
    try {
        w.validate();
    } catch (const FormatError&) {
        throw;
    } catch (const Error& e) {
        throw FormatError(std::string("weights: ") + e.what());
    }
    return w;
}

std::string format_phonemes(const PhonemeLibrary& lib) {
    const json header{{"format", "kpanim.phonemes"}, {"version", kFileFormatVersion}, {"count", lib.vectors.size()}};
    std::vector<json> records;
    for (const auto& p : lib.vectors)
        records.push_back(json{{"name", p.name()}, {"direction", codec::to_json(p.direction())}});
    return lines(header, records);
}

PhonemeLibrary parse_phonemes(std::string_view text) {
    LineReader reader(text);
    const json h = read_header(reader, "kpanim.phonemes");
    codec::check_keys(h, {"format", "version", "count"}, "line 1");
    const Index count = codec::get_index(codec::require(h, "count", "line 1"), "line 1.count");
    PhonemeLibrary lib;
    while (auto rec = reader.next()) {
        const std::string ctx = reader.context();
        const json& r = rec->second;
        codec::check_keys(r, {"name", "direction"}, ctx);
        std::string name = codec::get_string(codec::require(r, "name", ctx), ctx + ".name");
        if (lib.find(name))
            throw FormatError(ctx + ": duplicate phoneme '" + name + "'");
        const Eigen::VectorXd dir = codec::get_vector(codec::require(r, "direction", ctx), ctx + ".direction");
        if (!lib.vectors.empty() && dir.size() != lib.vectors.front().size())
            throw FormatError(ctx + ": direction length differs from the first phoneme");
        try {
            lib.vectors.push_back(PhonemeVectorD::from_unit(std::move(name), dir));
        } catch (const ValueError& e) {
            throw FormatError(ctx + ": " + e.what());
        }
    }
    check_count("phoneme count", count, static_cast<Index>(lib.vectors.size()));
    return lib;
}

std::string format_schedule(const ControlSchedule& s) { return codec::to_json(s).dump(2) + "\n"; }

ControlSchedule parse_schedule(std::string_view text, const ScheduleDefaults& defaults) {
    return codec::schedule_from_json(codec::parse(text, "schedule"), defaults);
}

std::string format_emotion_spec(const EmotionSpec& e) { return codec::to_json(e).dump(2) + "\n"; }

EmotionSpec parse_emotion_spec(std::string_view text) {
    return codec::emotion_from_json(codec::parse(text, "emotion"), "emotion");
}

std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw Error("cannot open '" + path.string() + "' for reading");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_file(const std::filesystem::path& path, std::string_view content) {
    std::filesystem::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out)
            throw Error("cannot open '" + tmp.string() + "' for writing");
        out.write(content.data(), static_cast<std::streamsize>(content.size()));
        if (!out)
            throw Error("write to '" + tmp.string() + "' failed");
    }
    std::filesystem::rename(tmp, path);
}

} // namespace kpanim
