#include "kpanim/cli.hpp"

#include <algorithm>
#include <csignal>
#include <iostream>
#include <optional>
#include <sstream>

#include <CLI11.hpp>

#include "json_codec.hpp"
#include "kpanim/config.hpp"
#include "kpanim/service.hpp"
#include "kpanim/training.hpp"

namespace kpanim::cli {

using codec::json;

namespace {

struct Globals {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::string out;
};

void emit(const Globals& g, std::ostream& out, const std::string& content) {
    if (g.out.empty() || g.out == "-")
        out << content;
    else
        write_file(g.out, content);
}

KeypointsD load_identity(const std::string& path) {
    const Trajectory t = parse_trajectory(read_file(path));
    if (t.size() != 1)
        throw FormatError(path + ": identity must be a trajectory with exactly one frame, got " +
                          std::to_string(t.size()));
    return t.frames.front();
}

std::shared_ptr<const ModelWeights> load_or_init_weights(const std::string& path, const SessionConfig& cfg,
                                                         std::uint64_t seed) {
    if (!path.empty())
        return std::make_shared<const ModelWeights>(load_weights(read_file(path)));
    return std::make_shared<const ModelWeights>(init_weights(seed, cfg.dims, cfg.categories));
}

struct AnimateArgs {
    std::string identity, audio, weights, schedule, phonemes, poses, pose_template = "still";
    Index style = 0;
};

struct StyleEditArgs {
    std::string in, identity, phonemes, phoneme;
    double lambda = 1.0;
    Index begin = 0;
    Index end = -1;
};

struct EmotionArgs {
    std::string mode = "apply", in, identity, audio, weights, spec, old_spec;
};

struct RetargetArgs {
    std::string in, identity, target;
};

struct TrainArgs {
    std::string weights, trace;
    Index steps = 500;
    double lr = 1e-4;
    Index windows = 256;
    Index batch = 32;
};

struct GradcheckArgs {
    Index points = 1;
    Index hidden = 16;
    Index audio_dim = 8;
    double h = 1e-5;
    double threshold = 1e-4;
};

struct BenchArgs {
    std::string schedule;
    Index frames = 250;
    Index n_kp = kDefaultKeypointCount;
    Index warmup = 25;
};

struct ServeArgs {
    std::string host = "127.0.0.1";
    int port = 8080;
};

InferenceInputs animate_inputs(const AnimateArgs& a, const SessionConfig& cfg, const Globals& g) {
    InferenceInputs in;
    in.identity = load_identity(a.identity);
    in.audio = parse_audio(read_file(a.audio));
    in.weights = load_or_init_weights(a.weights, cfg, g.seed.value_or(cfg.weights_seed));
    if (!a.phonemes.empty())
        in.phonemes = parse_phonemes(read_file(a.phonemes));
    if (!a.poses.empty()) {
        Trajectory t = parse_trajectory(read_file(a.poses));
        if (!t.has_pose())
            throw FormatError(a.poses + ": pose file carries no poses");
        in.poses = std::move(t.poses);
    } else {
        in.poses = builtin_pose_template(a.pose_template);
    }
    in.style = StyleCode{a.style, in.weights->dims.n_styles};
    in.config = cfg.engine();
    if (g.seed)
        in.config.noise_seed = *g.seed;
    return in;
}

int do_animate(const AnimateArgs& a, const SessionConfig& cfg, const Globals& g, std::ostream& out) {
    const InferenceInputs in = animate_inputs(a, cfg, g);
    ControlSchedule schedule;
    schedule.lip_scale.amplitude = cfg.scale;
    if (!a.schedule.empty())
        schedule = parse_schedule(read_file(a.schedule), cfg.schedule_defaults());
    emit(g, out, format_trajectory(run_inference(in, schedule)));
    return kExitOk;
}

/// Re-applies a phoneme edit to the lip rows of K - K_ori in every frame of [begin, end).
int do_style_edit(const StyleEditArgs& a, const SessionConfig& cfg, const Globals& g, std::ostream& out) {
    Trajectory t = parse_trajectory(read_file(a.in));
    if (!t.has_pose())
        throw FormatError(a.in + ": style-edit needs a trajectory with poses");
    const KeypointsD identity = load_identity(a.identity);
    const PhonemeLibrary lib = parse_phonemes(read_file(a.phonemes));
    const PhonemeVectorD* p = lib.find(a.phoneme);
    if (!p)
        throw ValueError("unknown phoneme '" + a.phoneme + "'");
    const Index end = a.end < 0 ? t.size() : a.end;
    if (a.begin < 0 || a.begin > end || end > t.size())
        throw ValueError("frame range outside the trajectory");
    const RegionMask& lips = cfg.layout.lips();
    for (Index f = a.begin; f < end; ++f) {
        const auto fs = static_cast<std::size_t>(f);
        try {
            const KeypointsD k_ori = compose_keypoints(identity, t.poses[fs], DeformationD::zero(identity.rows()));
            detail::require_same_shape(t.frames[fs], k_ori, "style-edit");
            const DeformationD total(t.frames[fs] - k_ori, DeformationKind::Raw);
            DeformationD lip = mask_deformation(total, lips);
            lip.kind = DeformationKind::LipSync;
            const DeformationD edited = style_edit(lip, *p, a.lambda, lips);
            t.frames[fs] = t.frames[fs] + (edited.offsets - lip.offsets);
        } catch (const Error& e) {
            throw FrameError(f, e);
        }
    }
    emit(g, out, format_trajectory(t));
    return kExitOk;
}

/// apply: K + D_e(spec). replace: K - D_e(old) + D_e(spec).
int do_emotion(const EmotionArgs& a, const SessionConfig& cfg, const Globals& g, std::ostream& out) {
    if (a.mode != "apply" && a.mode != "replace")
        throw ValueError("emotion mode must be 'apply' or 'replace'");
    if (a.mode == "replace" && a.old_spec.empty())
        throw ValueError("emotion replace needs --old-spec");
    Trajectory t = parse_trajectory(read_file(a.in));
    InferenceInputs in;
    in.identity = load_identity(a.identity);
    in.audio = parse_audio(read_file(a.audio));
    in.weights = load_or_init_weights(a.weights, cfg, g.seed.value_or(cfg.weights_seed));
    in.style = StyleCode{0, in.weights->dims.n_styles};
    in.config = cfg.engine();
    const PreparedSession prepared(std::move(in));
    if (prepared.frame_count() != t.size())
        throw DimensionError("trajectory has " + std::to_string(t.size()) + " frames, audio has " +
                             std::to_string(prepared.frame_count()));
    const EmotionSpec spec = parse_emotion_spec(read_file(a.spec));
    spec.validate(prepared.emotion_names(), &prepared.layout());
    std::optional<EmotionSpec> old;
    if (a.mode == "replace") {
        old = parse_emotion_spec(read_file(a.old_spec));
        old->validate(prepared.emotion_names(), &prepared.layout());
    }
    for (Index f = 0; f < t.size(); ++f) {
        auto& k = t.frames[static_cast<std::size_t>(f)];
        try {
            detail::require_same_shape(k, prepared.inputs().identity, "emotion");
            if (old)
                k -= emotion_deformation_at(prepared, *old, f).offsets;
            k += emotion_deformation_at(prepared, spec, f).offsets;
        } catch (const Error& e) {
            throw FrameError(f, e);
        }
    }
    emit(g, out, format_trajectory(t));
    return kExitOk;
}

int do_retarget(const RetargetArgs& a, const Globals& g, std::ostream& out) {
    const Trajectory driving = parse_trajectory(read_file(a.in));
    const DrivingSequence seq = extract_driving(driving, load_identity(a.identity));
    emit(g, out, format_trajectory(retarget(seq, load_identity(a.target))));
    return kExitOk;
}

int do_train(const TrainArgs& a, const SessionConfig& cfg, const Globals& g, std::ostream& out, std::ostream& err) {
    const std::uint64_t seed = g.seed.value_or(cfg.train_seed);
    const auto w0 = load_or_init_weights(a.weights, cfg, g.seed.value_or(cfg.weights_seed));
    SyntheticDatasetConfig dcfg;
    dcfg.n_windows = a.windows;
    dcfg.seed = mix_seed(seed, 21);
    const RefinerDataset data = make_synthetic_refiner_dataset(w0->dims, cfg.layout.lips(), dcfg);
    const SyncProviders providers = SyncProviders::seeded(w0->dims, mix_seed(seed, 22));
    TrainConfig tcfg;
    tcfg.steps = a.steps;
    tcfg.lr = a.lr;
    tcfg.batch = a.batch;
    tcfg.seed = mix_seed(seed, 23);
    tcfg.loss = cfg.loss;
    TrainResult r = [&] {
        try {
            return train_refiner(data, *w0, tcfg, providers);
        } catch (const TrainingAborted& e) {
            if (!a.trace.empty()) {
                std::ostringstream trace;
                write_loss_trace(trace, e.trace());
                write_file(a.trace, trace.str());
            }
            throw;
        }
    }();
    if (!a.trace.empty()) {
        std::ostringstream trace;
        write_loss_trace(trace, r.trace);
        write_file(a.trace, trace.str());
    }
    const json summary{{"steps", a.steps},
                       {"initial_loss", r.initial_loss},
                       {"final_loss", r.final_loss},
                       {"ratio", r.initial_loss != 0.0 ? r.final_loss / r.initial_loss : 0.0}};
    if (g.out.empty()) {
        out << summary.dump() << "\n";
    } else {
        write_file(g.out, save_weights(r.weights));
        err << summary.dump() << "\n";
    }
    return kExitOk;
}

int do_gradcheck(const GradcheckArgs& a, const SessionConfig& cfg, const Globals& g, std::ostream& out) {
    ModelDims dims = cfg.dims;
    dims.refiner_hidden = a.hidden;
    dims.d_audio = a.audio_dim;
    const std::uint64_t seed = g.seed.value_or(0);
    double worst = 0.0;
    for (Index i = 0; i < a.points; ++i) {
        const GradCheckReport r =
            refiner_gradcheck(mix_seed(seed, static_cast<std::uint64_t>(i)), dims, cfg.layout.lips(), a.h);
        worst = std::max(worst, r.max_rel_error);
    }
    const bool pass = worst <= a.threshold;
    out << json{{"max_rel_error", worst}, {"threshold", a.threshold}, {"points", a.points}, {"pass", pass}}.dump()
        << "\n";
    return pass ? kExitOk : kExitRuntime;
}

int do_bench(const BenchArgs& a, const SessionConfig& cfg, const Globals& g, std::ostream& out) {
    ControlSchedule schedule;
    if (!a.schedule.empty())
        schedule = parse_schedule(read_file(a.schedule), cfg.schedule_defaults());
    BenchSizes sizes;
    sizes.frames = a.frames;
    sizes.n_kp = a.n_kp;
    sizes.warmup = a.warmup;
    sizes.seed = g.seed.value_or(0);
    std::ostringstream report;
    write_bench_report(report, bench_frame(schedule, sizes));
    emit(g, out, report.str());
    return kExitOk;
}

ControlService* g_service = nullptr;

extern "C" void stop_service(int) {
    if (g_service)
        g_service->stop();
}

int do_serve(const ServeArgs& a, const SessionConfig& cfg, std::ostream& err) {
    ServiceOptions opts;
    opts.config = cfg;
    ControlService service(opts);
    const int port = service.bind(a.host, a.port);
    err << json{{"listening", a.host + ":" + std::to_string(port)}}.dump() << std::endl;
    g_service = &service;
    std::signal(SIGINT, stop_service);
    std::signal(SIGTERM, stop_service);
    service.run();
    g_service = nullptr;
    return kExitOk;
}

void error_line(std::ostream& err, const char* kind, const std::string& message) {
    err << json{{"error", {{"kind", kind}, {"message", message}}}}.dump() << "\n";
}

} // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Keypoint-space facial animation control engine", "kpanim"};
    app.require_subcommand(1);
    app.fallthrough();
    Globals g;
    std::uint64_t seed = 0;
    app.add_option("--config", g.config, "Session configuration file (default: $KPANIM_CONFIG)");
    auto* seed_opt = app.add_option("--seed", seed, "Seed for weights, noise and training");
    app.add_option("--out", g.out, "Output file (default: stdout)");

    AnimateArgs an;
    auto* animate = app.add_subcommand("animate", "Identity + audio features + schedule -> trajectory");
    animate->add_option("--identity", an.identity, "One-frame trajectory with canonical keypoints")->required();
    animate->add_option("--audio", an.audio, "Audio feature file")->required();
    animate->add_option("--weights", an.weights, "Weights file (default: init-weights with --seed)");
    animate->add_option("--schedule", an.schedule, "Control schedule JSON");
    animate->add_option("--phonemes", an.phonemes, "Phoneme vector library");
    auto* poses = animate->add_option("--poses", an.poses, "Trajectory whose poses drive the head");
    animate->add_option("--pose-template", an.pose_template, "still, nod, sway or turn")->excludes(poses);
    animate->add_option("--style", an.style, "Style index");

    StyleEditArgs se;
    auto* style = app.add_subcommand("style-edit", "Re-edit the lip deformation of a trajectory along a phoneme");
    style->add_option("--in", se.in, "Trajectory with poses")->required();
    style->add_option("--identity", se.identity, "Identity of the trajectory")->required();
    style->add_option("--phonemes", se.phonemes, "Phoneme vector library")->required();
    style->add_option("--phoneme", se.phoneme, "Phoneme name")->required();
    style->add_option("--lambda", se.lambda, "Scale along the phoneme direction")->required();
    style->add_option("--begin", se.begin, "First frame");
    style->add_option("--end", se.end, "One past the last frame (default: all)");

    EmotionArgs em;
    auto* emotion = app.add_subcommand("emotion", "Apply or replace an emotion spec on a trajectory");
    emotion->add_option("mode", em.mode, "apply or replace")->check(CLI::IsMember({"apply", "replace"}));
    emotion->add_option("--in", em.in, "Trajectory")->required();
    emotion->add_option("--identity", em.identity, "Identity keypoints")->required();
    emotion->add_option("--audio", em.audio, "Audio features the trajectory was driven by")->required();
    emotion->add_option("--weights", em.weights, "Weights file");
    emotion->add_option("--spec", em.spec, "Emotion spec JSON")->required();
    emotion->add_option("--old-spec", em.old_spec, "Emotion spec to remove (replace mode)");

    RetargetArgs rt;
    auto* retarget_cmd = app.add_subcommand("retarget", "Replay a driving trajectory onto another identity");
    retarget_cmd->add_option("--in", rt.in, "Driving trajectory with poses")->required();
    retarget_cmd->add_option("--identity", rt.identity, "Identity of the driving trajectory")->required();
    retarget_cmd->add_option("--target", rt.target, "New identity")->required();

    TrainArgs tr;
    auto* train = app.add_subcommand("train-refiner", "Train the lip refiner on the synthetic dataset");
    train->add_option("--weights", tr.weights, "Initial weights (default: init-weights with --seed)");
    train->add_option("--steps", tr.steps, "Adam steps");
    train->add_option("--lr", tr.lr, "Learning rate");
    train->add_option("--windows", tr.windows, "Synthetic 5-frame windows");
    train->add_option("--batch", tr.batch, "Windows per step");
    train->add_option("--trace", tr.trace, "Write the step,value loss trace here");

    GradcheckArgs gc;
    auto* grad = app.add_subcommand("gradcheck", "Finite-difference check of the refiner gradient");
    grad->add_option("--points", gc.points, "Random parameter points");
    grad->add_option("--hidden", gc.hidden, "Refiner hidden width");
    grad->add_option("--audio-dim", gc.audio_dim, "Audio feature width");
    grad->add_option("--step", gc.h, "Finite-difference step");
    grad->add_option("--threshold", gc.threshold, "Largest accepted relative error");

    BenchArgs bn;
    auto* bench = app.add_subcommand("bench", "Per-frame latency report (CSV)");
    bench->add_option("--schedule", bn.schedule, "Control schedule JSON");
    bench->add_option("--frames", bn.frames, "Frames to time");
    bench->add_option("--n-kp", bn.n_kp, "Keypoint count");
    bench->add_option("--warmup", bn.warmup, "Untimed warm-up frames");

    ServeArgs sv;
    auto* serve = app.add_subcommand("serve", "Run the HTTP control service");
    serve->add_option("--host", sv.host, "Listen address");
    serve->add_option("--port", sv.port, "Listen port (0 picks one)");

    auto* init = app.add_subcommand("init-weights", "Write seeded random weights");

    try {
        std::vector<std::string> reversed(args.rbegin(), args.rend());
        app.parse(reversed);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return kExitOk;
    } catch (const CLI::ParseError& e) {
        err << app.help();
        error_line(err, "usage", e.what());
        return kExitUsage;
    }
    if (seed_opt->count() > 0)
        g.seed = seed;

    try {
        const SessionConfig cfg = load_config(g.config.empty() ? std::nullopt : std::optional<std::filesystem::path>(g.config));
        if (*animate)
            return do_animate(an, cfg, g, out);
        if (*style)
            return do_style_edit(se, cfg, g, out);
        if (*emotion)
            return do_emotion(em, cfg, g, out);
        if (*retarget_cmd)
            return do_retarget(rt, g, out);
        if (*train)
            return do_train(tr, cfg, g, out, err);
        if (*grad)
            return do_gradcheck(gc, cfg, g, out);
        if (*bench)
            return do_bench(bn, cfg, g, out);
        if (*serve)
            return do_serve(sv, cfg, err);
        if (*init) {
            emit(g, out, save_weights(init_weights(g.seed.value_or(cfg.weights_seed), cfg.dims, cfg.categories)));
            return kExitOk;
        }
    } catch (const Error& e) {
        error_line(err, e.kind(), e.what());
        return kExitRuntime;
    } catch (const std::exception& e) {
        error_line(err, "internal", e.what());
        return kExitRuntime;
    }
    return kExitUsage;
}

int run(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    return run(args, std::cout, std::cerr);
}

} // namespace kpanim::cli
