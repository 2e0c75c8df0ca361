#include <doctest.h>

#include <cstdlib>
#include <algorithm>
#include <functional>
#include <sstream>

#include <json.hpp>

#include "kpanim/cli.hpp"
#include "kpanim/config.hpp"
#include "support.hpp"

using namespace kpanim;
using namespace kpanim::testing;

namespace {

struct CliResult {
    int code;
    std::string out, err;
};

CliResult run_cli(const std::vector<std::string>& args) {
    std::ostringstream out, err;
    const int code = cli::run(args, out, err);
    return {code, out.str(), err.str()};
}

std::string error_message(const std::function<void()>& f) {
    try {
        f();
    } catch (const Error& e) {
        return e.what();
    }
    return {};
}

Trajectory random_trajectory(Rng& rng, Index frames, Index n_kp, bool poses) {
    Trajectory t;
    for (Index i = 0; i < frames; ++i) {
        t.frames.push_back(random_keypoints(rng, n_kp, 3.0));
        if (poses)
            t.poses.push_back(random_pose(rng));
    }
    return t;
}

// Session files for a small model: config, identity, audio, schedule.
struct CliFixture {
    TempDir dir{"cli"};
    SessionConfig cfg;
    KeypointsD identity;
    AudioFeatureSequence audio;
    std::string config, identity_file, audio_file;

    explicit CliFixture(std::uint64_t seed, Index frames = 24) {
        cfg.dims = small_dims();
        Rng rng(seed);
        identity = random_keypoints(rng, cfg.dims.n_kp, 0.5);
        audio = random_audio(rng, frames, cfg.dims.d_audio);
        config = dir.file("session.json");
        identity_file = dir.file("identity.jsonl");
        audio_file = dir.file("audio.jsonl");
        write_file(config, format_config(cfg));
        write_file(identity_file, format_trajectory(Trajectory{{identity}, {}, kFramesPerSecond}));
        write_file(audio_file, format_audio(audio));
    }

    std::string schedule(const ControlSchedule& s, const std::string& name = "schedule.json") const {
        const std::string p = dir.file(name);
        write_file(p, format_schedule(s));
        return p;
    }

    std::vector<std::string> animate(const std::string& schedule_file, const std::string& out) const {
        return {"--config", config,   "--seed",   "11",          "--out",           out,   "animate",
                "--identity", identity_file, "--audio", audio_file, "--pose-template", "sway", "--schedule",
                schedule_file};
    }
};

} // namespace

TEST_SUITE("cli_io") {

TEST_CASE("trajectory round-trips bit-exactly") {
    Rng rng(50);
    for (bool poses : {false, true}) {
        const Trajectory t = random_trajectory(rng, 7, 21, poses);
        const std::string text = format_trajectory(t);
        const Trajectory back = parse_trajectory(text);
        CHECK(back == t);
        CHECK(format_trajectory(back) == text);
    }
    Trajectory tiny;
    KeypointsD k = KeypointsD::Zero(1, 3);
    k << 0.1, 1e-300, -5e-324;
    tiny.frames.push_back(k);
    CHECK(parse_trajectory(format_trajectory(tiny)).frames[0] == k);
    CHECK(parse_trajectory(format_trajectory(Trajectory{})).size() == 0);
}

TEST_CASE("audio, phonemes, schedule and emotion round-trip") {
    Rng rng(51);
    const auto audio = random_audio(rng, 9, 5);
    CHECK(parse_audio(format_audio(audio)) == audio);

    PhonemeLibrary lib;
    lib.vectors.push_back(PhonemeVectorD::from_direction("duck-u", random_vector(rng, 12)));
    lib.vectors.push_back(PhonemeVectorD::from_direction("bee-ee", random_vector(rng, 12)));
    const std::string ptext = format_phonemes(lib);
    CHECK(parse_phonemes(ptext) == lib);
    CHECK(format_phonemes(parse_phonemes(ptext)) == ptext);

    ControlSchedule s;
    s.lip_scale.mode = LipScaleMode::Amplitude;
    s.lip_scale.amplitude.rms_ref = 0.123456789;
    s.phoneme_edits.push_back({"duck-u", 1.75, 2, 8});
    s.emotion = EmotionSpec::make_regional({{"eyes", {"sad", 0.3}}, {"lips", {"happy", 1.1}}});
    s.kalman = KalmanParams{2e-4, 3e-2};
    CHECK(parse_schedule(format_schedule(s)) == s);
    ControlSchedule fixed;
    fixed.lip_scale.mode = LipScaleMode::Fixed;
    fixed.lip_scale.factor = 0.1 + 0.2;
    CHECK(parse_schedule(format_schedule(fixed)) == fixed);

    const EmotionSpec g = EmotionSpec::make_global("surprised", 0.7);
    CHECK(parse_emotion_spec(format_emotion_spec(g)) == g);
    const EmotionSpec r = EmotionSpec::make_regional({{"brows", {"angry", 2.0}}});
    CHECK(parse_emotion_spec(format_emotion_spec(r)) == r);
}

TEST_CASE("weights files round-trip through disk") {
    TempDir dir("weights");
    const auto w = init_weights(52, small_dims());
    write_file(dir.file("w.jsonl"), save_weights(w));
    CHECK(load_weights(read_file(dir.file("w.jsonl"))) == w);
    CHECK_THROWS_AS(read_file(dir.file("missing")), Error);
}

TEST_CASE("format errors carry their context") {
    Rng rng(53);
    const std::string text = format_trajectory(random_trajectory(rng, 3, 4, false));

    std::string v2 = text;
    v2.replace(v2.find("\"version\":1"), 11, "\"version\":2");
    CHECK_THROWS_AS(parse_trajectory(v2), VersionError);
    CHECK(error_message([&] { parse_trajectory(v2); }).find("version 2") != std::string::npos);

    std::string more = text;
    more.replace(more.find("\"frame_count\":3"), 15, "\"frame_count\":5");
    const std::string count_msg = error_message([&] { parse_trajectory(more); });
    CHECK(count_msg.find('5') != std::string::npos);
    CHECK(count_msg.find('3') != std::string::npos);
    CHECK_THROWS_AS(parse_trajectory(more), FormatError);

    std::string broken = text;
    const auto third = broken.find('\n', broken.find('\n') + 1) + 1;
    broken.insert(third, "{not json\n");
    CHECK(error_message([&] { parse_trajectory(broken); }).find("line 3") != std::string::npos);

    std::string extra = text;
    extra.replace(extra.find("\"has_pose\":false"), 16, "\"has_pose\":false,\"colour\":1");
    CHECK(error_message([&] { parse_trajectory(extra); }).find("colour") != std::string::npos);

    CHECK_THROWS_AS(parse_trajectory(""), FormatError);
    CHECK_THROWS_AS(parse_audio(text), FormatError);
    CHECK_THROWS_AS(parse_schedule("{\"lip_scale\": 3, \"bogus\": true}"), FormatError);
    CHECK_THROWS_AS(parse_emotion_spec("[]"), FormatError);
}

TEST_CASE("config parsing") {
    const SessionConfig d = parse_config("{}");
    CHECK(d == SessionConfig{});
    SessionConfig c;
    c.dims = small_dims();
    c.kalman = KalmanParams{1e-3, 5e-2};
    c.weights_seed = 17;
    c.window = 30;
    c.overlap = 5;
    CHECK(parse_config(format_config(c)) == c);
    CHECK_THROWS_AS(parse_config("{\"windw\": 30}"), FormatError);
    CHECK(error_message([] { parse_config("{\"kalman\": {\"q\": 1, \"s\": 2}}"); }).find("'s'") != std::string::npos);
    CHECK_THROWS_AS(parse_config("{\"window\": 10, \"overlap\": 10}"), FormatError);
    const SessionConfig small = parse_config("{\"n_kp\": 10}");
    CHECK(small.layout == generated_layout(10));
    CHECK(small.dims.lip_size == 4);
    CHECK_THROWS_AS(parse_config("{\"n_kp\": 2}"), FormatError);
    CHECK_THROWS_AS(parse_config("{\"n_kp\": 10, \"dims\": {\"n_kp\": 12}}"), FormatError);
}

TEST_CASE("KPANIM_CONFIG names the default config file") {
    TempDir dir("config");
    SessionConfig c;
    c.noise_seed = 99;
    write_file(dir.file("c.json"), format_config(c));
    const char* old = std::getenv(kConfigEnvVar);
    const std::string saved = old ? old : "";
    ::setenv(kConfigEnvVar, dir.file("c.json").c_str(), 1);
    CHECK(load_config(std::nullopt) == c);
    SessionConfig other;
    other.train_seed = 4;
    write_file(dir.file("o.json"), format_config(other));
    CHECK(load_config(std::filesystem::path(dir.file("o.json"))) == other);
    ::unsetenv(kConfigEnvVar);
    CHECK(load_config(std::nullopt) == SessionConfig{});
    if (old)
        ::setenv(kConfigEnvVar, saved.c_str(), 1);
}

TEST_CASE("write_file replaces atomically") {
    TempDir dir("write");
    write_file(dir.file("a"), "one");
    write_file(dir.file("a"), "two");
    CHECK(read_file(dir.file("a")) == "two");
    CHECK_FALSE(std::filesystem::exists(dir.file("a.tmp")));
}

TEST_CASE("cli usage errors exit 2") {
    CHECK(run_cli({}).code == cli::kExitUsage);
    CHECK(run_cli({"dance"}).code == cli::kExitUsage);
    const auto r = run_cli({"gradcheck", "--frobnicate"});
    CHECK(r.code == cli::kExitUsage);
    CHECK(r.err.find("\"usage\"") != std::string::npos);
    CHECK(run_cli({"animate", "--audio", "x"}).code == cli::kExitUsage);
    CHECK(run_cli({"--help"}).code == cli::kExitOk);
}

TEST_CASE("cli runtime errors exit 1 with a JSON error line") {
    const auto r = run_cli({"retarget", "--in", "/nonexistent/a", "--identity", "b", "--target", "c"});
    CHECK(r.code == cli::kExitRuntime);
    CHECK(r.err.find("\"error\"") != std::string::npos);
}

TEST_CASE("cli gradcheck") {
    const auto r = run_cli({"--seed", "7", "gradcheck"});
    CHECK(r.code == cli::kExitOk);
    const auto j = nlohmann::json::parse(r.out);
    CHECK(j["pass"] == true);
    CHECK(j["max_rel_error"].get<double>() <= 1e-4);
    const auto strict = run_cli({"--seed", "7", "gradcheck", "--threshold", "0"});
    CHECK(strict.code == cli::kExitRuntime);
}

TEST_CASE("cli animate: neutral schedule gives the pose-composed stream, twice identically") {
    CliFixture fx(54);
    ControlSchedule s;
    s.lip_scale.mode = LipScaleMode::Fixed;
    s.lip_scale.factor = 0.0;
    const std::string sched = fx.schedule(s);
    const auto r = run_cli(fx.animate(sched, fx.dir.file("a.jsonl")));
    INFO(r.err);
    REQUIRE(r.code == cli::kExitOk);
    const Trajectory t = parse_trajectory(read_file(fx.dir.file("a.jsonl")));
    REQUIRE(t.size() == 24);
    REQUIRE(t.has_pose());
    const auto& sway = builtin_pose_template("sway");
    for (Index f = 0; f < t.size(); ++f) {
        CHECK(t.poses[static_cast<std::size_t>(f)] == sway.at_frame(f));
        CHECK(t.frames[static_cast<std::size_t>(f)] ==
              compose_keypoints(fx.identity, sway.at_frame(f), DeformationD::zero(fx.identity.rows())));
    }

    ControlSchedule full;
    full.lip_scale.mode = LipScaleMode::Amplitude;
    full.emotion = EmotionSpec::make_regional({{"eyes", {"sad", 0.8}}, {"brows", {"happy", 1.2}}});
    full.kalman = KalmanParams{};
    const std::string fsched = fx.schedule(full, "full.json");
    REQUIRE(run_cli(fx.animate(fsched, fx.dir.file("b1.jsonl"))).code == cli::kExitOk);
    REQUIRE(run_cli(fx.animate(fsched, fx.dir.file("b2.jsonl"))).code == cli::kExitOk);
    CHECK(read_file(fx.dir.file("b1.jsonl")) == read_file(fx.dir.file("b2.jsonl")));

    // Same output through the library.
    InferenceInputs in;
    in.identity = fx.identity;
    in.audio = fx.audio;
    in.weights = std::make_shared<const ModelWeights>(init_weights(11, fx.cfg.dims, fx.cfg.categories));
    in.poses = sway;
    in.style = StyleCode{0, fx.cfg.dims.n_styles};
    in.config = fx.cfg.engine();
    in.config.noise_seed = 11;
    CHECK(read_file(fx.dir.file("b1.jsonl")) == format_trajectory(run_inference(in, full)));
}

TEST_CASE("cli retarget and emotion") {
    CliFixture fx(55, 12);
    ControlSchedule s;
    REQUIRE(run_cli(fx.animate(fx.schedule(s), fx.dir.file("drive.jsonl"))).code == cli::kExitOk);
    Rng rng(56);
    const KeypointsD target = random_keypoints(rng, fx.cfg.dims.n_kp, 0.5);
    write_file(fx.dir.file("target.jsonl"), format_trajectory(Trajectory{{target}, {}, kFramesPerSecond}));
    const auto r = run_cli({"--out", fx.dir.file("re.jsonl"), "retarget", "--in", fx.dir.file("drive.jsonl"),
                        "--identity", fx.identity_file, "--target", fx.dir.file("target.jsonl")});
    REQUIRE(r.code == cli::kExitOk);
    const Trajectory drive = parse_trajectory(read_file(fx.dir.file("drive.jsonl")));
    const Trajectory re = parse_trajectory(read_file(fx.dir.file("re.jsonl")));
    const auto seq = extract_driving(drive, fx.identity);
    CHECK(re == retarget(seq, target));

    // Applying an emotion spec and then replacing it with intensity 0 gets back close to the input.
    write_file(fx.dir.file("happy.json"), format_emotion_spec(EmotionSpec::make_global("happy", 1.0)));
    write_file(fx.dir.file("none.json"), format_emotion_spec(EmotionSpec::make_global("happy", 0.0)));
    const std::vector<std::string> common{"--identity", fx.identity_file, "--audio", fx.audio_file};
    auto apply = std::vector<std::string>{"--config", fx.config, "--out", fx.dir.file("e.jsonl"), "emotion",
                                          "apply",    "--in",    fx.dir.file("drive.jsonl"), "--spec",
                                          fx.dir.file("happy.json")};
    apply.insert(apply.end(), common.begin(), common.end());
    REQUIRE(run_cli(apply).code == cli::kExitOk);
    auto replace = std::vector<std::string>{"--config", fx.config, "--out", fx.dir.file("n.jsonl"), "emotion",
                                            "replace",  "--in",    fx.dir.file("e.jsonl"), "--spec",
                                            fx.dir.file("none.json"), "--old-spec", fx.dir.file("happy.json")};
    replace.insert(replace.end(), common.begin(), common.end());
    REQUIRE(run_cli(replace).code == cli::kExitOk);
    const Trajectory e = parse_trajectory(read_file(fx.dir.file("e.jsonl")));
    const Trajectory n = parse_trajectory(read_file(fx.dir.file("n.jsonl")));
    CHECK_FALSE(e == drive);
    for (Index f = 0; f < drive.size(); ++f)
        CHECK(rel_diff(n.frames[static_cast<std::size_t>(f)], drive.frames[static_cast<std::size_t>(f)]) <= 1e-12);
}

TEST_CASE("cli train-refiner summary and bench csv") {
    TempDir dir("train");
    SessionConfig c;
    c.dims = small_dims();
    write_file(dir.file("c.json"), format_config(c));
    const auto r = run_cli({"--config", dir.file("c.json"), "--seed", "3", "train-refiner", "--steps", "30", "--windows",
                        "32", "--batch", "8", "--lr", "1e-3", "--trace", dir.file("trace.csv")});
    INFO(r.err);
    REQUIRE(r.code == cli::kExitOk);
    const auto j = nlohmann::json::parse(r.out);
    CHECK(j["steps"] == 30);
    CHECK(j["ratio"].get<double>() == doctest::Approx(j["final_loss"].get<double>() / j["initial_loss"].get<double>()));
    const std::string trace = read_file(dir.file("trace.csv"));
    CHECK(trace.rfind("step,value\n", 0) == 0);
    CHECK(std::count(trace.begin(), trace.end(), '\n') == 31);

    const auto b = run_cli({"bench", "--frames", "20", "--warmup", "2"});
    REQUIRE(b.code == cli::kExitOk);
    CHECK(b.out.find("control_total") != std::string::npos);
}

} // TEST_SUITE
