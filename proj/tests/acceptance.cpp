// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fails.

#include <chrono>
#include <cstdio>
#include <functional>
#include <sstream>

#include "kpanim/cli.hpp"
#include "properties.hpp"
#include "service_harness.hpp"

using namespace kpanim;
using namespace kpanim::testing;
using nlohmann::json;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

struct Criterion {
    const char* name;
    double budget_s;
    std::function<Outcome()> run;
};

std::string fmt(const char* f, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, f, v);
    return buf;
}

int run_cli(const std::vector<std::string>& args, std::string* out = nullptr) {
    std::ostringstream o, e;
    const int code = cli::run(args, o, e);
    if (out)
        *out = o.str();
    if (code != 0)
        std::fprintf(stderr, "%s", e.str().c_str());
    return code;
}

Outcome all_ok(const std::vector<PropertyResult>& results) {
    Outcome o{true, std::to_string(results.size()) + " properties"};
    for (const auto& r : results)
        if (!r.ok()) {
            o.pass = false;
            o.detail = r.summary();
            break;
        }
    return o;
}

Outcome algebra() {
    std::vector<PropertyResult> results;
    for (const auto& p : algebra_properties())
        results.push_back(p.run(0xacce55, 1000));
    Outcome o = all_ok(results);
    if (o.pass)
        o.detail += " x 1000 instances";
    return o;
}

Outcome loss_fixed() { return all_ok(loss_fixed_points()); }

Outcome gradcheck() {
    std::string out;
    const int code = run_cli({"--seed", "0", "gradcheck", "--points", "20", "--step", "1e-5", "--threshold", "1e-4"},
                             &out);
    const json j = json::parse(out);
    return {code == 0 && j["pass"] == true && j["max_rel_error"].get<double>() <= 1e-4,
            "max_rel_error " + fmt("%.3g", j["max_rel_error"].get<double>()) + " at 20 points"};
}

Outcome training() {
    std::string out;
    const int code = run_cli({"--seed", "0", "train-refiner", "--steps", "500", "--lr", "1e-4", "--windows", "256"}, &out);
    const json j = json::parse(out);
    const double ratio = j["ratio"].get<double>();
    return {code == 0 && ratio <= 0.5,
            "L_refine " + fmt("%.4g", j["initial_loss"].get<double>()) + " -> " +
                fmt("%.4g", j["final_loss"].get<double>()) + ", ratio " + fmt("%.3f", ratio)};
}

Outcome oracles() {
    const auto results = std::vector<PropertyResult>{kalman_matches_oracle(0x0a, 100), blend_matches_closed_form(0x0b, 100),
                                                     retarget_matches_compose(0x0c, 100)};
    Outcome o = all_ok(results);
    if (o.pass)
        o.detail = "kalman worst " + fmt("%.2g", results[0].worst) + " on 100 sequences, blend worst " +
                   fmt("%.2g", results[1].worst) + ", retarget worst " + fmt("%.2g", results[2].worst);
    return o;
}

Outcome determinism() {
    TempDir dir("accept");
    Rng rng(0xde7);
    const KeypointsD identity = random_keypoints(rng, kDefaultKeypointCount, 0.5);
    write_file(dir.file("id.jsonl"), format_trajectory(Trajectory{{identity}, {}, kFramesPerSecond}));
    write_file(dir.file("audio.jsonl"), format_audio(random_audio(rng, 120, ModelDims{}.d_audio)));
    ControlSchedule s;
    s.lip_scale.mode = LipScaleMode::Amplitude;
    s.emotion = EmotionSpec::make_regional({{"eyes", {"sad", 0.8}}, {"lips", {"happy", 0.5}}});
    s.kalman = KalmanParams{};
    write_file(dir.file("schedule.json"), format_schedule(s));
    auto args = [&](const std::string& out) {
        return std::vector<std::string>{"--seed",     "42",          "--out",      out,
                                        "animate",    "--identity",  dir.file("id.jsonl"),
                                        "--audio",    dir.file("audio.jsonl"), "--schedule",
                                        dir.file("schedule.json"), "--pose-template", "nod"};
    };
    if (run_cli(args(dir.file("a.jsonl"))) != 0 || run_cli(args(dir.file("b.jsonl"))) != 0)
        return {false, "animate failed"};
    const bool files_equal = read_file(dir.file("a.jsonl")) == read_file(dir.file("b.jsonl"));

    ServiceHarness h;
    const InferenceInputs in = make_inputs(0xde8, 80);
    const std::string id = h.create_session(in, &s);
    h.transport(id, "play");
    const auto frames = h.stream(id);
    const Trajectory batch = run_inference(in, s);
    bool stream_equal = frames.size() == batch.frames.size();
    for (std::size_t t = 0; stream_equal && t < frames.size(); ++t)
        stream_equal = coords_of(frames[t]) == batch.frames[t];
    // Byte comparison against the CLI: the stream rebuilt as a trajectory file.
    stream_equal = stream_equal && stream_as_trajectory(frames) == cli_animate_bytes(in, s, h.config());
    return {files_equal && stream_equal,
            std::string("animate files ") + (files_equal ? "identical" : "differ") + ", service stream " +
                (stream_equal ? "byte-equal to" : "differs from") + " batch animate over " +
                std::to_string(frames.size()) + " frames"};
}

Outcome frame_budget() {
    TempDir dir("bench");
    ControlSchedule s;
    s.lip_scale.mode = LipScaleMode::Amplitude;
    s.phoneme_edits.push_back({"bee-ee", 1.5, 0, 100});
    s.emotion = EmotionSpec::make_regional({{"eyes", {"sad", 1.0}}, {"lips", {"happy", 0.6}}});
    s.kalman = KalmanParams{};
    write_file(dir.file("schedule.json"), format_schedule(s));
    std::string csv;
    if (run_cli({"bench", "--schedule", dir.file("schedule.json"), "--n-kp", "21"}, &csv) != 0)
        return {false, "bench failed"};
    double control = -1, full = -1;
    std::istringstream in(csv);
    std::string line;
    while (std::getline(in, line)) {
        std::istringstream row(line);
        std::string stage, median;
        std::getline(row, stage, ',');
        std::getline(row, median, ',');
        if (stage == "control_total")
            control = std::stod(median);
        if (stage == "full_inference")
            full = std::stod(median);
    }
    return {control >= 0 && full >= 0 && control <= 1.0 && full <= 33.0,
            "control median " + fmt("%.4f", control) + " ms (<= 1), full median " + fmt("%.3f", full) +
                " ms (<= 33)"};
}

Outcome causality() {
    const PropertyResult r = causality_probe(0xca05, 50);
    return {r.ok(), r.ok() ? "50 cases, prefixes bitwise unchanged" : r.summary()};
}

} // namespace

int main() {
    const std::vector<Criterion> criteria{
        {"algebra suite", 10.0, algebra},
        {"loss fixed points", 1.0, loss_fixed},
        {"refiner gradient check", 30.0, gradcheck},
        {"training sanity", 120.0, training},
        {"oracle equivalence", 0.0, oracles},
        {"determinism", 0.0, determinism},
        {"frame budget", 0.0, frame_budget},
        {"causality probe", 0.0, causality},
    };
    int failed = 0;
    for (const auto& c : criteria) {
        const auto t0 = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = c.run();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        const bool in_time = c.budget_s <= 0.0 || secs < c.budget_s;
        const bool pass = o.pass && in_time;
        failed += pass ? 0 : 1;
        std::string timing = fmt("%.2f s", secs);
        if (c.budget_s > 0.0)
            timing += fmt(" (< %g s)", c.budget_s);
        std::printf("%s %-24s %s; %s\n", pass ? "PASS" : "FAIL", c.name, o.detail.c_str(), timing.c_str());
        std::fflush(stdout);
    }
    std::printf("%d/%zu criteria passed\n", static_cast<int>(criteria.size()) - failed, criteria.size());
    return failed == 0 ? 0 : 1;
}
