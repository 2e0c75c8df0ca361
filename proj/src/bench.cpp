#include "kpanim/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <ostream>
#include <set>

namespace kpanim {

namespace {

using Clock = std::chrono::steady_clock;

BenchRow summarize(std::string stage, std::vector<double> ms) {
    BenchRow row;
    row.stage = std::move(stage);
    row.samples = static_cast<Index>(ms.size());
    if (ms.empty())
        return row;
    std::sort(ms.begin(), ms.end());
    row.median_ms = median(ms);
    const auto rank = static_cast<std::size_t>(std::ceil(0.95 * static_cast<double>(ms.size())));
    row.p95_ms = ms[std::max<std::size_t>(rank, 1) - 1];
    return row;
}

AudioFeatureSequence bench_audio(Index frames, Index dim, std::uint64_t seed) {
    Rng rng(seed);
    AudioFeatureSequence a;
    a.embeddings = Eigen::MatrixXd::NullaryExpr(frames, dim, [&] { return rng.normal(); });
    a.rms = Eigen::VectorXd::NullaryExpr(frames, [&] { return rng.uniform(0.05, 0.5); });
    return a;
}

PhonemeLibrary bench_phonemes(const ControlSchedule& schedule, Index lip_dim, std::uint64_t seed) {
    Rng rng(seed);
    std::set<std::string> names;
    for (const auto& e : schedule.phoneme_edits)
        names.insert(e.phoneme);
    PhonemeLibrary lib;
    for (const auto& n : names) {
        const Eigen::VectorXd v = Eigen::VectorXd::NullaryExpr(lip_dim, [&] { return rng.normal(); });
        lib.vectors.push_back(PhonemeVectorD::from_direction(n, v));
    }
    return lib;
}

} // namespace

BenchReport bench_frame(const ControlSchedule& schedule, const BenchSizes& sizes) {
    BenchReport report;
    if (sizes.frames <= 0)
        return report;

    EngineConfig cfg;
    cfg.layout = generated_layout(sizes.n_kp);
    cfg.noise_seed = mix_seed(sizes.seed, 3);
    ModelDims dims;
    dims.n_kp = sizes.n_kp;
    dims.lip_size = cfg.layout.lips().size();

    InferenceInputs in;
    Rng rng(mix_seed(sizes.seed, 1));
    in.identity = KeypointsD::NullaryExpr(sizes.n_kp, 3, [&] { return rng.uniform(-0.5, 0.5); });
    in.poses = builtin_pose_template("nod");
    in.style = StyleCode{0, dims.n_styles};
    in.weights = std::make_shared<const ModelWeights>(init_weights(sizes.seed, dims));
    in.phonemes = bench_phonemes(schedule, 3 * dims.lip_size, mix_seed(sizes.seed, 2));
    in.config = cfg;

    // Control path: the neural outputs are prepared once, then every frame runs compose, LAC, EMC and Kalman.
    in.audio = bench_audio(sizes.frames, dims.d_audio, mix_seed(sizes.seed, 4));
    auto prepared = std::make_shared<const PreparedSession>(in);
    validate_schedule(schedule, prepared->schedule_context());
    for (const auto& c : schedule.emotion.categories())
        if (c != kNeutral)
            prepared->pure_emotion(c);
    {
        Animator warm(prepared);
        for (Index i = 0; i < std::min(sizes.warmup, sizes.frames); ++i)
            warm.step(schedule);
    }
    std::vector<double> compose, lac, emc, kalman, total;
    Animator animator(prepared);
    while (!animator.finished()) {
        StageTimes st;
        const auto t0 = Clock::now();
        animator.step(schedule, &st);
        total.push_back(std::chrono::duration<double, std::milli>(Clock::now() - t0).count());
        compose.push_back(st.compose);
        lac.push_back(st.lac);
        emc.push_back(st.emc);
        kalman.push_back(st.kalman);
    }

    // Full toy inference, amortized per frame over clips of one predictor window.
    const Index clip = std::min<Index>(kDefaultWindow, sizes.frames);
    const Index n_clips = std::max<Index>(3, sizes.frames / clip);
    std::vector<double> full;
    for (Index c = -1; c < n_clips; ++c) {
        InferenceInputs clip_in = in;
        clip_in.audio = bench_audio(clip, dims.d_audio, mix_seed(sizes.seed, 100 + static_cast<std::uint64_t>(c + 1)));
        ControlSchedule clip_schedule = schedule;
        for (auto& e : clip_schedule.phoneme_edits) {
            e.begin = std::min(e.begin, clip);
            e.end = std::min(e.end, clip);
        }
        const auto t0 = Clock::now();
        run_inference(clip_in, clip_schedule);
        const double ms = std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
        if (c >= 0)
            full.push_back(ms / static_cast<double>(clip));
    }

    report.rows.push_back(summarize("compose", std::move(compose)));
    report.rows.push_back(summarize("lac", std::move(lac)));
    report.rows.push_back(summarize("emc", std::move(emc)));
    report.rows.push_back(summarize("kalman", std::move(kalman)));
    report.rows.push_back(summarize("control_total", std::move(total)));
    report.rows.push_back(summarize("full_inference", std::move(full)));
    return report;
}

void write_bench_report(std::ostream& out, const BenchReport& report) {
    char buf[128];
    out << "stage,median_ms,p95_ms,samples\n";
    for (const auto& r : report.rows) {
        std::snprintf(buf, sizeof buf, "%s,%.6f,%.6f,%lld\n", r.stage.c_str(), r.median_ms, r.p95_ms,
                      static_cast<long long>(r.samples));
        out << buf;
    }
}

} // namespace kpanim
