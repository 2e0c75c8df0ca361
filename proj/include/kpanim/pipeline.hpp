#pragma once

// Inference driver: per-frame control loop over precomputed neural outputs,
// Kalman smoothing of the summed deformation, pose sources, keypoint-level
// retargeting and frame-budget instrumentation.

#include <functional>
#include <iosfwd>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "kpanim/emc.hpp"
#include "kpanim/lac.hpp"
#include "kpanim/nn.hpp"
#include "kpanim/windowing.hpp"

namespace kpanim {

inline constexpr double kFramesPerSecond = 25.0;
inline constexpr Index kDefaultOverlap = 10;

using PhonemeVectorD = PhonemeVector<double>;

struct Trajectory {
    std::vector<KeypointsD> frames;
    /// Empty, or one pose per frame.
    std::vector<PoseD> poses;
    double fps = kFramesPerSecond;

    Index size() const { return static_cast<Index>(frames.size()); }
    Index n_kp() const { return frames.empty() ? 0 : frames.front().rows(); }
    bool has_pose() const { return !poses.empty(); }
    void validate() const;
    bool operator==(const Trajectory& o) const;
};

struct PoseTemplate {
    std::string name;
    std::vector<PoseD> poses;

    void validate() const;
    const PoseD& at_frame(Index t) const { return poses[static_cast<std::size_t>(t) % poses.size()]; }
};

/// Built-in head motion templates: still, nod, sway, turn.
const std::vector<PoseTemplate>& builtin_pose_templates();
const PoseTemplate& builtin_pose_template(std::string_view name);

/// Per-coordinate constant-position Kalman filter parameters.
struct KalmanParams {
    double q = 1e-4;
    double r = 1e-2;

    void validate() const {
        if (!(r > 0.0) || !std::isfinite(r))
            throw ValueError("kalman: measurement variance r must be positive");
        if (!(q >= 0.0) || !std::isfinite(q))
            throw ValueError("kalman: process variance q must be non-negative");
    }
    bool operator==(const KalmanParams&) const = default;
};

/// Causal filter over keypoint-shaped measurements. The covariance recursion
/// does not depend on the data, so one scalar P serves every coordinate.
class KalmanFilter {
public:
    explicit KalmanFilter(KalmanParams params) : params_(params) { params_.validate(); }

    KeypointsD update(const KeypointsD& z);
    void set_params(KalmanParams params) {
        params.validate();
        params_ = params;
    }
    const KalmanParams& params() const { return params_; }
    bool initialized() const { return initialized_; }

private:
    KalmanParams params_;
    bool initialized_ = false;
    KeypointsD estimate_;
    double covariance_ = 0.0;
};

std::vector<DeformationD> kalman_smooth(const std::vector<DeformationD>& seq, const KalmanParams& params);

enum class LipScaleMode { Off, Amplitude, Fixed };

struct LipScaleControl {
    LipScaleMode mode = LipScaleMode::Off;
    ScaleConfig amplitude;
    double factor = 1.0;
    bool operator==(const LipScaleControl&) const = default;
};

/// Style edit active on frames [begin, end).
struct PhonemeEdit {
    std::string phoneme;
    double lambda = 1.0;
    Index begin = 0;
    Index end = 0;
    bool operator==(const PhonemeEdit&) const = default;
};

struct PhonemeLibrary {
    std::vector<PhonemeVectorD> vectors;

    const PhonemeVectorD* find(std::string_view name) const {
        for (const auto& p : vectors)
            if (p.name() == name)
                return &p;
        return nullptr;
    }
    std::vector<std::string> names() const {
        std::vector<std::string> out;
        for (const auto& p : vectors)
            out.push_back(p.name());
        return out;
    }
    bool operator==(const PhonemeLibrary&) const = default;
};

struct ControlSchedule {
    LipScaleControl lip_scale;
    std::vector<PhonemeEdit> phoneme_edits;
    EmotionSpec emotion;
    std::optional<KalmanParams> kalman;

    bool operator==(const ControlSchedule&) const = default;
};

/// Everything a schedule is checked against.
struct ScheduleContext {
    Index frame_count = 0;
    const PhonemeLibrary* phonemes = nullptr;
    const RegionLayout* layout = nullptr;
    std::vector<std::string> categories;
};

void validate_schedule(const ControlSchedule& schedule, const ScheduleContext& ctx);

struct EngineConfig {
    RegionLayout layout = RegionLayout::default_layout();
    Index window = kDefaultWindow;
    Index overlap = kDefaultOverlap;
    std::uint64_t noise_seed = 0;
};

/// Per-frame poses (from a video) or a template repeated cyclically.
using PoseSource = std::variant<std::vector<PoseD>, PoseTemplate>;

struct InferenceInputs {
    KeypointsD identity;
    PoseSource poses = builtin_pose_template("still");
    AudioFeatureSequence audio;
    StyleCode style;
    std::shared_ptr<const ModelWeights> weights;
    PhonemeLibrary phonemes;
    /// Conditions from precomputed embeddings, addressable by name like categories.
    std::map<std::string, EmotionCondition> extra_conditions;
    EngineConfig config;
};

struct FrameOutput {
    Index index = 0;
    PoseD pose;
    KeypointsD k_ori;
    KeypointsD k_driven;
    DeformationD lip;
    DeformationD emotion;
};

/// Wall time of each control stage of one frame, in milliseconds.
struct StageTimes {
    double compose = 0.0;
    double lac = 0.0;
    double emc = 0.0;
    double kalman = 0.0;
};

/// The schedule-independent part of a session: K_ori stream, predicted and
/// refined lip-sync deformations, and lazily computed pure-emotion streams.
class PreparedSession {
public:
    explicit PreparedSession(InferenceInputs inputs);

    Index frame_count() const { return static_cast<Index>(k_ori_.size()); }
    Index n_kp() const { return inputs_.identity.rows(); }
    const InferenceInputs& inputs() const { return inputs_; }
    const RegionLayout& layout() const { return inputs_.config.layout; }
    const PoseD& pose(Index t) const { return poses_[static_cast<std::size_t>(t)]; }
    const KeypointsD& k_ori(Index t) const { return k_ori_[static_cast<std::size_t>(t)]; }
    const DeformationD& lip_raw(Index t) const { return lip_raw_[static_cast<std::size_t>(t)]; }
    const std::vector<DeformationD>& expressions() const { return delta_pred_; }
    double rms_median() const { return rms_median_; }

    /// Categories and extra condition names a schedule may use.
    std::vector<std::string> emotion_names() const;
    ScheduleContext schedule_context() const;

    /// CPred(condition) - CPred(neutral) for every frame; computed once per name.
    std::shared_ptr<const std::vector<DeformationD>> pure_emotion(const std::string& name) const;

private:
    InferenceInputs inputs_;
    std::vector<PoseD> poses_;
    std::vector<KeypointsD> k_ori_;
    std::vector<DeformationD> delta_pred_;
    std::vector<DeformationD> lip_raw_;
    double rms_median_ = 0.0;

    mutable std::mutex cache_mutex_;
    mutable std::shared_ptr<const std::vector<DeformationD>> neutral_;
    mutable std::map<std::string, std::shared_ptr<const std::vector<DeformationD>>> emotion_cache_;
};

/// D_e of frame t under `spec`: pure-emotion streams scaled by intensity and composed by region.
DeformationD emotion_deformation_at(const PreparedSession& prepared, const EmotionSpec& spec, Index t);

/// Frame producer of one session. Copyable: a copy snapshots cursor and filter state.
class Animator {
public:
    explicit Animator(std::shared_ptr<const PreparedSession> prepared);

    Index cursor() const { return cursor_; }
    bool finished() const { return cursor_ >= prepared_->frame_count(); }
    const PreparedSession& prepared() const { return *prepared_; }

    /// Produces frame `cursor()` under `schedule` and advances.
    FrameOutput step(const ControlSchedule& schedule, StageTimes* times = nullptr);
    /// Moves the cursor; filter state restarts at the new position.
    void seek(Index frame);

private:
    std::shared_ptr<const PreparedSession> prepared_;
    Index cursor_ = 0;
    std::optional<KalmanFilter> filter_;
};

using FrameCallback = std::function<void(const FrameOutput&)>;

Trajectory run_inference(const InferenceInputs& inputs, const ControlSchedule& schedule,
                         const FrameCallback& on_frame = {});

/// Pose and expression deformation of each driving frame.
using DrivingSequence = std::vector<std::pair<PoseD, DeformationD>>;

/// Frame t = compose_keypoints(new_identity, pose_t, delta_t).
Trajectory retarget(const DrivingSequence& driving, const KeypointsD& new_identity);

/// Recovers (pose, delta) per frame of a posed trajectory of `identity`.
DrivingSequence extract_driving(const Trajectory& trajectory, const KeypointsD& identity);

struct BenchSizes {
    Index n_kp = kDefaultKeypointCount;
    Index frames = 250;
    Index warmup = 25;
    std::uint64_t seed = 0;
};

struct BenchRow {
    std::string stage;
    double median_ms = 0.0;
    double p95_ms = 0.0;
    Index samples = 0;
};

struct BenchReport {
    std::vector<BenchRow> rows;
    const BenchRow* find(std::string_view stage) const {
        for (const auto& r : rows)
            if (r.stage == stage)
                return &r;
        return nullptr;
    }
};

/// Per-frame latency of the control path (per stage) and of full toy inference.
BenchReport bench_frame(const ControlSchedule& schedule, const BenchSizes& sizes);

/// "stage,median_ms,p95_ms,samples" rows.
void write_bench_report(std::ostream& out, const BenchReport& report);

/// Layout used for a non-default keypoint count: lips are the last four rows, the rest "other".
RegionLayout generated_layout(Index n_kp);

} // namespace kpanim
