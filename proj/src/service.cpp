#include "kpanim/service.hpp"

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <map>
#include <mutex>
#include <thread>
#include <variant>

#include <httplib.h>

#include "json_codec.hpp"

namespace kpanim {

using codec::json;

std::string frame_message(const std::string& json_text) {
    return std::to_string(json_text.size()) + "\n" + json_text + "\n";
}

namespace {

enum class State { Created, Playing, Paused, Finished };

const char* to_string(State s) {
    switch (s) {
    case State::Created: return "created";
    case State::Playing: return "playing";
    case State::Paused: return "paused";
    case State::Finished: return "finished";
    }
    return "created";
}

/// Maps to an HTTP status together with its error kind.
struct HttpError {
    int status;
    std::string kind;
    std::string message;
};

[[noreturn]] void http_fail(int status, std::string kind, std::string message) {
    throw HttpError{status, std::move(kind), std::move(message)};
}

using IdentityAsset = KeypointsD;
using PosesAsset = std::vector<PoseD>;
using Asset = std::variant<AudioFeatureSequence, std::shared_ptr<const ModelWeights>, IdentityAsset, PhonemeLibrary,
                           PosesAsset>;

const char* asset_kind(const Asset& a) {
    switch (a.index()) {
    case 0: return "audio";
    case 1: return "weights";
    case 2: return "identity";
    case 3: return "phonemes";
    default: return "poses";
    }
}

struct Session {
    std::string id;
    std::mutex mutex;
    std::condition_variable cv;
    State state = State::Created;
    std::shared_ptr<const PreparedSession> prepared;
    Animator animator;
    ControlSchedule schedule;
    std::uint64_t controls_version = 0;
    bool streaming = false;
    // A frame computed under the current controls but not yet committed.
    bool in_flight = false;

    Session(std::string id_, std::shared_ptr<const PreparedSession> p, ControlSchedule s)
        : id(std::move(id_)), prepared(p), animator(p), schedule(std::move(s)) {}

    json status_json() const {
        return json{{"id", id},
                    {"state", to_string(state)},
                    {"cursor", animator.cursor()},
                    {"frame_count", prepared->frame_count()},
                    {"controls", codec::to_json(schedule)},
                    {"controls_version", controls_version}};
    }
};

json frame_json(const FrameOutput& f, const RegionLayout& layout, const json& controls, std::uint64_t version) {
    const Points2d<double> p2 = project_2d(f.k_driven);
    json points = json::array();
    for (Index i = 0; i < p2.rows(); ++i)
        points.push_back(json::array({p2(i, 0), p2(i, 1)}));
    return json{{"frame", f.index},
                {"points2d", points},
                {"regions", layout.row_tags()},
                {"controls", controls},
                {"controls_version", version},
                {"coords", codec::to_json(f.k_driven)},
                {"pose", codec::to_json(f.pose)}};
}

} // namespace

struct ControlService::Impl {
    ServiceOptions options;
    httplib::Server server;
    std::mutex registry_mutex;
    std::map<std::string, Asset> assets;
    std::map<std::string, std::shared_ptr<Session>> sessions;
    std::uint64_t next_id = 1;
    std::atomic<bool> stopping{false};

    explicit Impl(ServiceOptions o) : options(std::move(o)) {
        options.config.validate();
        server.set_default_headers({{"Access-Control-Allow-Origin", "*"}});
        routes();
    }

    static void reply(httplib::Response& res, int status, const json& body) {
        res.status = status;
        res.set_content(body.dump(), "application/json");
    }

    template <typename F>
    httplib::Server::Handler guarded(F f) {
        return [f](const httplib::Request& req, httplib::Response& res) {
            try {
                f(req, res);
            } catch (const HttpError& e) {
                reply(res, e.status, json{{"error", {{"kind", e.kind}, {"message", e.message}}}});
            } catch (const Error& e) {
                reply(res, 422, json{{"error", {{"kind", e.kind()}, {"message", e.what()}}}});
            } catch (const std::exception& e) {
                reply(res, 500, json{{"error", {{"kind", "internal"}, {"message", e.what()}}}});
            }
        };
    }

    std::shared_ptr<Session> find_session(const std::string& id) {
        std::lock_guard lock(registry_mutex);
        const auto it = sessions.find(id);
        if (it == sessions.end())
            http_fail(404, "not_found", "unknown session '" + id + "'");
        return it->second;
    }

    template <typename T>
    T asset_as(const json& body, const char* key, bool required) {
        if (!body.contains(key)) {
            if (required)
                http_fail(422, "format", std::string("session: missing key '") + key + "'");
            return T{};
        }
        const std::string id = codec::get_string(body[key], std::string("session.") + key);
        std::lock_guard lock(registry_mutex);
        const auto it = assets.find(id);
        if (it == assets.end())
            http_fail(404, "not_found", "unknown asset '" + id + "'");
        if (!std::holds_alternative<T>(it->second))
            http_fail(422, "value", "asset '" + id + "' is " + asset_kind(it->second) + ", not usable as " + key);
        return std::get<T>(it->second);
    }

    std::string new_id(const char* prefix) { return prefix + std::to_string(next_id++); }

    void post_asset(const httplib::Request& req, httplib::Response& res) {
        if (!req.has_param("kind"))
            http_fail(422, "format", "assets: query parameter 'kind' is required");
        const std::string kind = req.get_param_value("kind");
        Asset asset;
        if (kind == "audio") {
            asset = parse_audio(req.body);
        } else if (kind == "weights") {
            asset = std::make_shared<const ModelWeights>(load_weights(req.body));
        } else if (kind == "identity") {
            const Trajectory t = parse_trajectory(req.body);
            if (t.size() != 1)
                throw FormatError("identity: expected a trajectory with exactly one frame, got " +
                                  std::to_string(t.size()));
            asset = t.frames.front();
        } else if (kind == "phonemes") {
            asset = parse_phonemes(req.body);
        } else if (kind == "poses") {
            Trajectory t = parse_trajectory(req.body);
            if (!t.has_pose())
                throw FormatError("poses: trajectory carries no poses");
            asset = std::move(t.poses);
        } else {
            http_fail(422, "value", "assets: unknown kind '" + kind + "'");
        }
        std::lock_guard lock(registry_mutex);
        const std::string id = new_id("a");
        assets.emplace(id, std::move(asset));
        reply(res, 201, json{{"id", id}, {"kind", kind}});
    }

    void post_session(const httplib::Request& req, httplib::Response& res) {
        const json body = codec::parse(req.body, "session");
        codec::check_keys(body,
                          {"audio", "weights", "identity", "phonemes", "poses", "pose_template", "style", "schedule",
                           "conditions", "noise_seed"},
                          "session");
        InferenceInputs in;
        in.audio = asset_as<AudioFeatureSequence>(body, "audio", true);
        in.weights = asset_as<std::shared_ptr<const ModelWeights>>(body, "weights", true);
        in.identity = asset_as<IdentityAsset>(body, "identity", true);
        in.phonemes = asset_as<PhonemeLibrary>(body, "phonemes", false);
        if (body.contains("poses") && body.contains("pose_template"))
            http_fail(422, "format", "session: give either 'poses' or 'pose_template'");
        if (body.contains("poses"))
            in.poses = asset_as<PosesAsset>(body, "poses", true);
        else if (body.contains("pose_template"))
            in.poses = builtin_pose_template(codec::get_string(body["pose_template"], "session.pose_template"));
        in.style = StyleCode{body.contains("style") ? codec::get_index(body["style"], "session.style") : 0,
                             in.weights->dims.n_styles};
        if (body.contains("conditions")) {
            const json& c = body["conditions"];
            codec::check_object(c, "session.conditions");
            for (const auto& [name, value] : c.items()) {
                const std::string ctx = "session.conditions." + name;
                codec::check_keys(value, {"source", "vector"}, ctx);
                const EmotionSource src =
                    emotion_source_from_string(codec::get_string(codec::require(value, "source", ctx), ctx + ".source"));
                in.extra_conditions[name] = condition_from_embedding(
                    codec::get_vector(codec::require(value, "vector", ctx), ctx + ".vector"), src,
                    in.weights->dims.d_emotion);
            }
        }
        in.config = options.config.engine();
        if (body.contains("noise_seed"))
            in.config.noise_seed = codec::get_u64(body["noise_seed"], "session.noise_seed");
        ControlSchedule schedule;
        schedule.lip_scale.amplitude = options.config.scale;
        if (body.contains("schedule"))
            schedule = codec::schedule_from_json(body["schedule"], options.config.schedule_defaults());

        auto prepared = std::make_shared<const PreparedSession>(std::move(in));
        validate_schedule(schedule, prepared->schedule_context());
        std::lock_guard lock(registry_mutex);
        const std::string id = new_id("s");
        auto session = std::make_shared<Session>(id, prepared, std::move(schedule));
        sessions.emplace(id, session);
        reply(res, 201, session->status_json());
    }

    void put_controls(const std::string& id, const httplib::Request& req, httplib::Response& res) {
        auto s = find_session(id);
        const json patch = codec::parse(req.body, "controls");
        codec::check_object(patch, "controls");
        std::lock_guard lock(s->mutex);
        if (s->state == State::Finished)
            http_fail(409, "state", "session '" + id + "' is finished");
        json merged = codec::to_json(s->schedule);
        merged.merge_patch(patch);
        ControlSchedule next = codec::schedule_from_json(merged, options.config.schedule_defaults());
        validate_schedule(next, s->prepared->schedule_context());
        s->schedule = std::move(next);
        ++s->controls_version;
        json out = s->status_json();
        out["effective_from_frame"] = s->animator.cursor() + (s->in_flight ? 1 : 0);
        reply(res, 200, out);
    }

    void post_transport(const std::string& id, const httplib::Request& req, httplib::Response& res) {
        auto s = find_session(id);
        const json body = codec::parse(req.body, "transport");
        codec::check_keys(body, {"action", "frame"}, "transport");
        const std::string action = codec::get_string(codec::require(body, "action", "transport"), "transport.action");
        std::lock_guard lock(s->mutex);
        const auto bad = [&] {
            http_fail(409, "state", "cannot " + action + " a session that is " + to_string(s->state));
        };
        if (action == "play") {
            if (s->state != State::Created && s->state != State::Paused)
                bad();
            s->state = s->animator.finished() ? State::Finished : State::Playing;
        } else if (action == "pause") {
            if (s->state != State::Playing)
                bad();
            s->state = State::Paused;
        } else if (action == "seek") {
            if (s->state != State::Created && s->state != State::Paused)
                bad();
            const Index frame = codec::get_index(codec::require(body, "frame", "transport"), "transport.frame");
            if (frame < 0 || frame > s->prepared->frame_count())
                http_fail(422, "value", "seek target " + std::to_string(frame) + " outside [0, " +
                                            std::to_string(s->prepared->frame_count()) + "]");
            s->animator.seek(frame);
        } else {
            http_fail(422, "value", "transport: unknown action '" + action + "'");
        }
        s->cv.notify_all();
        reply(res, 200, s->status_json());
    }

    void get_stream(const std::string& id, const httplib::Request& req, httplib::Response& res) {
        auto s = find_session(id);
        const bool paced = !(req.has_param("pace") && req.get_param_value("pace") == "off");
        {
            std::lock_guard lock(s->mutex);
            if (s->streaming)
                http_fail(409, "state", "session '" + id + "' already has a stream consumer");
            s->streaming = true;
        }
        const auto period = std::chrono::duration_cast<std::chrono::steady_clock::duration>(
            std::chrono::duration<double>(1.0 / options.fps));
        auto deadline = std::make_shared<std::chrono::steady_clock::time_point>(std::chrono::steady_clock::now());
        auto was_playing = std::make_shared<bool>(false);
        res.set_chunked_content_provider(
            "application/x-kpanim-stream",
            [this, s, paced, period, deadline, was_playing](std::size_t, httplib::DataSink& sink) {
                std::unique_lock lock(s->mutex);
                if (s->state == State::Finished) {
                    lock.unlock();
                    sink.done();
                    return true;
                }
                if (s->state != State::Playing) {
                    *was_playing = false;
                    s->cv.wait_for(lock, std::chrono::milliseconds(50));
                    return !stopping.load() && sink.is_writable();
                }
                if (stopping.load())
                    return false;
                if (!*was_playing) {
                    *deadline = std::chrono::steady_clock::now();
                    *was_playing = true;
                }
                // Work on a copy so a failed write leaves the session where it was.
                Animator next = s->animator;
                std::string message;
                bool failed = false;
                try {
                    const FrameOutput f = next.step(s->schedule);
                    message = frame_message(
                        frame_json(f, s->prepared->layout(), codec::to_json(s->schedule), s->controls_version).dump());
                } catch (const Error& e) {
                    message = frame_message(json{{"error", {{"kind", e.kind()}, {"message", e.what()}}}}.dump());
                    failed = true;
                }
                s->in_flight = !failed;
                lock.unlock();
                if (paced) {
                    std::this_thread::sleep_until(*deadline);
                    *deadline += period;
                }
                const bool written = sink.write(message.data(), message.size());
                lock.lock();
                s->in_flight = false;
                if (!written)
                    return false;
                if (failed) {
                    s->state = State::Paused;
                    lock.unlock();
                    sink.done();
                    return true;
                }
                if (s->animator.cursor() + 1 == next.cursor()) {
                    s->animator = next;
                    if (s->animator.finished())
                        s->state = State::Finished;
                }
                return true;
            },
            [s](bool) {
                std::lock_guard lock(s->mutex);
                s->streaming = false;
            });
    }

    void get_meta(const std::string& what, const httplib::Request& req, httplib::Response& res) {
        std::shared_ptr<const PreparedSession> prepared;
        if (req.has_param("session")) {
            auto s = find_session(req.get_param_value("session"));
            prepared = s->prepared;
        }
        const RegionLayout& layout = prepared ? prepared->layout() : options.config.layout;
        if (what == "regions") {
            json regions = json::object();
            for (const auto& r : layout.regions())
                regions[r.name()] = r.indices();
            json names = json::array();
            for (const auto& r : layout.regions())
                names.push_back(r.name());
            reply(res, 200, json{{"names", names}, {"regions", regions}, {"lips", layout.lips().name()}});
        } else if (what == "emotions") {
            std::vector<std::string> names = prepared ? prepared->emotion_names() : options.config.categories;
            reply(res, 200, json{{"names", names}, {"neutral", kNeutral}, {"intensity", {{"min", 0.0}}}});
        } else if (what == "phonemes") {
            std::vector<std::string> names;
            if (prepared) {
                names = prepared->inputs().phonemes.names();
            } else {
                std::lock_guard lock(registry_mutex);
                for (const auto& [_, a] : assets)
                    if (const auto* lib = std::get_if<PhonemeLibrary>(&a))
                        for (auto& n : lib->names())
                            if (std::find(names.begin(), names.end(), n) == names.end())
                                names.push_back(n);
            }
            reply(res, 200, json{{"names", names}});
        } else {
            http_fail(404, "not_found", "unknown meta resource '" + what + "'");
        }
    }

    void routes() {
        server.Post("/v1/assets", guarded([this](const auto& req, auto& res) { post_asset(req, res); }));
        server.Post("/v1/sessions", guarded([this](const auto& req, auto& res) { post_session(req, res); }));
        server.Get(R"(/v1/sessions/([^/]+))", guarded([this](const auto& req, auto& res) {
                       auto s = find_session(req.matches[1]);
                       std::lock_guard lock(s->mutex);
                       reply(res, 200, s->status_json());
                   }));
        server.Put(R"(/v1/sessions/([^/]+)/controls)",
                   guarded([this](const auto& req, auto& res) { put_controls(req.matches[1], req, res); }));
        server.Post(R"(/v1/sessions/([^/]+)/transport)",
                    guarded([this](const auto& req, auto& res) { post_transport(req.matches[1], req, res); }));
        server.Get(R"(/v1/sessions/([^/]+)/stream)",
                   guarded([this](const auto& req, auto& res) { get_stream(req.matches[1], req, res); }));
        server.Get(R"(/v1/meta/([^/]+))",
                   guarded([this](const auto& req, auto& res) { get_meta(req.matches[1], req, res); }));
    }
};

ControlService::ControlService(ServiceOptions options) : impl_(std::make_unique<Impl>(std::move(options))) {}

ControlService::~ControlService() { stop(); }

int ControlService::bind(const std::string& host, int port) {
    if (port == 0)
        port = impl_->server.bind_to_any_port(host);
    else if (!impl_->server.bind_to_port(host, port))
        port = -1;
    if (port < 0)
        throw Error("cannot bind " + host + ":" + std::to_string(port));
    return port;
}

void ControlService::run() { impl_->server.listen_after_bind(); }

void ControlService::stop() {
    impl_->stopping = true;
    {
        std::lock_guard lock(impl_->registry_mutex);
        for (auto& [_, s] : impl_->sessions)
            s->cv.notify_all();
    }
    impl_->server.stop();
}

} // namespace kpanim
