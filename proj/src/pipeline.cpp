#include "kpanim/pipeline.hpp"

#include <chrono>
#include <cmath>
#include <numbers>

namespace kpanim {

void Trajectory::validate() const {
    if (!poses.empty() && poses.size() != frames.size())
        throw DimensionError("trajectory has " + std::to_string(frames.size()) + " frames but " +
                             std::to_string(poses.size()) + " poses");
    for (std::size_t t = 0; t < frames.size(); ++t) {
        if (frames[t].rows() != frames.front().rows())
            throw DimensionError("trajectory frame " + std::to_string(t) + " has a different keypoint count");
        if (!frames[t].allFinite())
            throw ValueError("trajectory frame " + std::to_string(t) + " has non-finite coordinates");
    }
    for (const auto& p : poses)
        p.validate();
}

bool Trajectory::operator==(const Trajectory& o) const {
    if (fps != o.fps || frames.size() != o.frames.size() || poses != o.poses)
        return false;
    for (std::size_t t = 0; t < frames.size(); ++t)
        if (frames[t].rows() != o.frames[t].rows() || frames[t] != o.frames[t])
            return false;
    return true;
}

void PoseTemplate::validate() const {
    if (poses.empty())
        throw ValueError("pose template '" + name + "' is empty");
    for (const auto& p : poses)
        p.validate();
}

const std::vector<PoseTemplate>& builtin_pose_templates() {
    static const std::vector<PoseTemplate> templates = [] {
        constexpr double two_pi = 2.0 * std::numbers::pi;
        const Eigen::Vector3d x = Eigen::Vector3d::UnitX();
        const Eigen::Vector3d y = Eigen::Vector3d::UnitY();
        const Eigen::Vector3d z = Eigen::Vector3d::UnitZ();
        std::vector<PoseTemplate> out;
        out.push_back({"still", {PoseD::identity()}});
        PoseTemplate nod{"nod", {}};
        PoseTemplate sway{"sway", {}};
        for (int t = 0; t < 50; ++t) {
            const double phase = two_pi * t / 50.0;
            PoseD p;
            p.rotation = axis_angle<double>(x, 0.1 * std::sin(phase));
            nod.poses.push_back(p);
            p.rotation = axis_angle<double>(z, 0.08 * std::sin(phase));
            p.translation = Row3<double>(0.02 * std::sin(phase), 0.0, 0.0);
            sway.poses.push_back(p);
        }
        PoseTemplate turn{"turn", {}};
        for (int t = 0; t < 100; ++t) {
            PoseD p;
            p.rotation = axis_angle<double>(y, 0.15 * std::sin(two_pi * t / 100.0));
            turn.poses.push_back(p);
        }
        out.push_back(std::move(nod));
        out.push_back(std::move(sway));
        out.push_back(std::move(turn));
        return out;
    }();
    return templates;
}

const PoseTemplate& builtin_pose_template(std::string_view name) {
    for (const auto& t : builtin_pose_templates())
        if (t.name == name)
            return t;
    throw ValueError("unknown pose template '" + std::string(name) + "'");
}

KeypointsD KalmanFilter::update(const KeypointsD& z) {
    if (!initialized_) {
        estimate_ = z;
        covariance_ = params_.r;
        initialized_ = true;
        return estimate_;
    }
    detail::require_same_shape(z, estimate_, "kalman update");
    const double p = covariance_ + params_.q;
    const double gain = p / (p + params_.r);
    estimate_ += gain * (z - estimate_);
    covariance_ = (1.0 - gain) * p;
    return estimate_;
}

std::vector<DeformationD> kalman_smooth(const std::vector<DeformationD>& seq, const KalmanParams& params) {
    if (seq.empty())
        throw ValueError("kalman_smooth needs a nonempty sequence");
    KalmanFilter filter(params);
    std::vector<DeformationD> out;
    out.reserve(seq.size());
    for (const auto& d : seq)
        out.emplace_back(filter.update(d.offsets), d.kind);
    return out;
}

void validate_schedule(const ControlSchedule& s, const ScheduleContext& ctx) {
    switch (s.lip_scale.mode) {
    case LipScaleMode::Off: break;
    case LipScaleMode::Fixed:
        if (!(s.lip_scale.factor >= 0.0) || !std::isfinite(s.lip_scale.factor))
            throw ValueError("fixed lip scale must be a non-negative finite number");
        break;
    case LipScaleMode::Amplitude: s.lip_scale.amplitude.validate(); break;
    }
    for (const auto& e : s.phoneme_edits) {
        if (!std::isfinite(e.lambda))
            throw ValueError("phoneme edit '" + e.phoneme + "': lambda must be finite");
        if (e.begin < 0 || e.begin > e.end || e.end > ctx.frame_count)
            throw ValueError("phoneme edit '" + e.phoneme + "': frame range [" + std::to_string(e.begin) + ", " +
                             std::to_string(e.end) + ") outside [0, " + std::to_string(ctx.frame_count) + "]");
        if (ctx.phonemes) {
            const auto* p = ctx.phonemes->find(e.phoneme);
            if (!p)
                throw ValueError("unknown phoneme '" + e.phoneme + "'");
            if (ctx.layout && p->size() != 3 * ctx.layout->lips().size())
                throw DimensionError("phoneme '" + e.phoneme + "' does not match the lip mask size");
        }
    }
    s.emotion.validate(ctx.categories, ctx.layout);
    if (s.kalman)
        s.kalman->validate();
}

PreparedSession::PreparedSession(InferenceInputs inputs) : inputs_(std::move(inputs)) {
    if (!inputs_.weights)
        throw ValueError("inference needs model weights");
    const ModelWeights& w = *inputs_.weights;
    const RegionLayout& layout = inputs_.config.layout;
    inputs_.audio.validate();
    const Index frames = inputs_.audio.frames();
    if (frames < 1)
        throw ValueError("inference needs at least one audio frame");
    if (inputs_.identity.rows() != w.dims.n_kp || layout.n_kp() != w.dims.n_kp)
        throw DimensionError("identity has " + std::to_string(inputs_.identity.rows()) + " keypoints, layout " +
                             std::to_string(layout.n_kp()) + ", weights " + std::to_string(w.dims.n_kp));
    if (!inputs_.identity.allFinite())
        throw ValueError("identity keypoints must be finite");
    const RegionMask& lips = layout.lips();
    if (lips.size() != w.dims.lip_size)
        throw DimensionError("lip mask has " + std::to_string(lips.size()) + " rows, weights refine " +
                             std::to_string(w.dims.lip_size));

    poses_.reserve(static_cast<std::size_t>(frames));
    if (const auto* seq = std::get_if<std::vector<PoseD>>(&inputs_.poses)) {
        if (static_cast<Index>(seq->size()) < frames)
            throw ValueError("pose source has " + std::to_string(seq->size()) + " poses for " +
                             std::to_string(frames) + " audio frames");
        poses_.assign(seq->begin(), seq->begin() + frames);
    } else {
        const auto& tmpl = std::get<PoseTemplate>(inputs_.poses);
        tmpl.validate();
        for (Index t = 0; t < frames; ++t)
            poses_.push_back(tmpl.at_frame(t));
    }

    const auto& rms = inputs_.audio.rms;
    rms_median_ = median(std::vector<double>(rms.data(), rms.data() + rms.size()));

    delta_pred_ = predict_expressions(inputs_.audio, inputs_.style, w, inputs_.config.window, inputs_.config.overlap);
    const RefinerNet net = RefinerNet::from_weights(w);
    const DeformationD zero = DeformationD::zero(n_kp());
    k_ori_.reserve(static_cast<std::size_t>(frames));
    lip_raw_.reserve(static_cast<std::size_t>(frames));
    for (Index t = 0; t < frames; ++t) {
        try {
            const auto ts = static_cast<std::size_t>(t);
            k_ori_.push_back(compose_keypoints(inputs_.identity, poses_[ts], zero));
            const KeypointsD k_rec = compose_keypoints(inputs_.identity, poses_[ts], delta_pred_[ts]);
            const NoiseSpec noise{w.dims.noise_sigma, mix_seed(inputs_.config.noise_seed, static_cast<std::uint64_t>(t))};
            const KeypointsD k_refine = refine_from_rec(inputs_.audio.embeddings.row(t), k_rec, noise, net, lips);
            lip_raw_.push_back(lip_sync_deformation(k_refine, k_ori_[ts], lips));
        } catch (const Error& e) {
            throw FrameError(t, e);
        }
    }
}

std::vector<std::string> PreparedSession::emotion_names() const {
    std::vector<std::string> names = inputs_.weights->categories;
    if (std::find(names.begin(), names.end(), kNeutral) == names.end())
        names.insert(names.begin(), kNeutral);
    for (const auto& [name, _] : inputs_.extra_conditions)
        if (std::find(names.begin(), names.end(), name) == names.end())
            names.push_back(name);
    return names;
}

ScheduleContext PreparedSession::schedule_context() const {
    return ScheduleContext{frame_count(), &inputs_.phonemes, &inputs_.config.layout, emotion_names()};
}

std::shared_ptr<const std::vector<DeformationD>> PreparedSession::pure_emotion(const std::string& name) const {
    std::lock_guard lock(cache_mutex_);
    if (const auto it = emotion_cache_.find(name); it != emotion_cache_.end())
        return it->second;
    const ModelWeights& w = *inputs_.weights;
    const auto& cfg = inputs_.config;
    EmotionCondition condition;
    if (const auto it = inputs_.extra_conditions.find(name); it != inputs_.extra_conditions.end())
        condition = condition_from_embedding(it->second.vector, it->second.source, w.dims.d_emotion);
    else
        condition = condition_from_label(name, w.label_table());
    if (!neutral_) {
        const EmotionCondition neutral = condition_from_label(kNeutral, w.label_table());
        neutral_ = std::make_shared<const std::vector<DeformationD>>(
            combined_predict(neutral, inputs_.audio, w, cfg.window, cfg.overlap));
    }
    auto emo = combined_predict(condition, inputs_.audio, w, cfg.window, cfg.overlap);
    auto pure = std::make_shared<const std::vector<DeformationD>>(pure_emotion_deformation(emo, *neutral_));
    emotion_cache_.emplace(name, pure);
    return pure;
}

DeformationD emotion_deformation_at(const PreparedSession& prep, const EmotionSpec& spec, Index t) {
    const auto ts = static_cast<std::size_t>(t);
    if (spec.mode == EmotionSpec::Mode::Global && spec.global) {
        const auto& g = *spec.global;
        if (g.category == kNeutral || g.intensity == 0.0)
            return DeformationD::zero(prep.n_kp(), DeformationKind::Emotion);
        return scale_emotion((*prep.pure_emotion(g.category))[ts], g.intensity);
    }
    std::map<std::string, DeformationD> parts;
    if (spec.regional)
        for (const auto& [region, setting] : *spec.regional)
            if (setting.category != kNeutral && setting.intensity != 0.0)
                parts.emplace(region, scale_emotion((*prep.pure_emotion(setting.category))[ts], setting.intensity));
    if (parts.empty())
        return DeformationD::zero(prep.n_kp(), DeformationKind::Emotion);
    return compose_regions(parts, region_map(prep.layout()), prep.n_kp());
}

Animator::Animator(std::shared_ptr<const PreparedSession> prepared) : prepared_(std::move(prepared)) {
    if (!prepared_)
        throw ValueError("animator needs a prepared session");
}

void Animator::seek(Index frame) {
    if (frame < 0 || frame > prepared_->frame_count())
        throw ValueError("seek target " + std::to_string(frame) + " outside [0, " +
                         std::to_string(prepared_->frame_count()) + "]");
    cursor_ = frame;
    filter_.reset();
}

namespace {

using Clock = std::chrono::steady_clock;

double elapsed_ms(Clock::time_point since) {
    return std::chrono::duration<double, std::milli>(Clock::now() - since).count();
}

} // namespace

FrameOutput Animator::step(const ControlSchedule& schedule, StageTimes* times) {
    if (finished())
        throw ValueError("session already produced every frame");
    const Index t = cursor_;
    const PreparedSession& prep = *prepared_;
    const auto& inputs = prep.inputs();
    const RegionLayout& layout = prep.layout();
    FrameOutput out;
    out.index = t;
    try {
        auto tick = Clock::now();
        out.pose = prep.pose(t);
        out.k_ori = compose_keypoints(inputs.identity, out.pose, DeformationD::zero(prep.n_kp()));
        if (times) {
            times->compose = elapsed_ms(tick);
            tick = Clock::now();
        }

        out.lip = prep.lip_raw(t);
        switch (schedule.lip_scale.mode) {
        case LipScaleMode::Off: break;
        case LipScaleMode::Fixed: out.lip = scale_deformation(out.lip, schedule.lip_scale.factor); break;
        case LipScaleMode::Amplitude: {
            ScaleConfig cfg = schedule.lip_scale.amplitude;
            if (!cfg.rms_ref) {
                if (!(prep.rms_median() > 0.0))
                    throw ValueError("auto rms_ref resolved to 0 (silent utterance)");
                cfg.rms_ref = prep.rms_median();
            }
            out.lip = scale_deformation(out.lip, scale_factor(inputs.audio.rms(t), cfg));
            break;
        }
        }
        for (const auto& edit : schedule.phoneme_edits) {
            if (t < edit.begin || t >= edit.end)
                continue;
            const auto* phoneme = inputs.phonemes.find(edit.phoneme);
            if (!phoneme)
                throw ValueError("unknown phoneme '" + edit.phoneme + "'");
            out.lip = style_edit(out.lip, *phoneme, edit.lambda, layout.lips());
        }
        if (times) {
            times->lac = elapsed_ms(tick);
            tick = Clock::now();
        }

        out.emotion = emotion_deformation_at(prep, schedule.emotion, t);
        if (times) {
            times->emc = elapsed_ms(tick);
            tick = Clock::now();
        }

        if (schedule.kalman) {
            if (!filter_)
                filter_.emplace(*schedule.kalman);
            else if (!(filter_->params() == *schedule.kalman))
                filter_->set_params(*schedule.kalman);
            out.k_driven = out.k_ori + filter_->update(out.lip.offsets + out.emotion.offsets);
        } else {
            filter_.reset();
            out.k_driven = apply_deformations(out.k_ori, out.lip, out.emotion);
        }
        if (times)
            times->kalman = elapsed_ms(tick);
    } catch (const FrameError&) {
        throw;
    } catch (const Error& e) {
        throw FrameError(t, e);
    }
    ++cursor_;
    return out;
}

Trajectory run_inference(const InferenceInputs& inputs, const ControlSchedule& schedule,
                         const FrameCallback& on_frame) {
    auto prepared = std::make_shared<const PreparedSession>(inputs);
    validate_schedule(schedule, prepared->schedule_context());
    Animator animator(prepared);
    Trajectory out;
    out.frames.reserve(static_cast<std::size_t>(prepared->frame_count()));
    out.poses.reserve(static_cast<std::size_t>(prepared->frame_count()));
    while (!animator.finished()) {
        FrameOutput frame = animator.step(schedule);
        if (on_frame)
            on_frame(frame);
        out.poses.push_back(frame.pose);
        out.frames.push_back(std::move(frame.k_driven));
    }
    return out;
}

Trajectory retarget(const DrivingSequence& driving, const KeypointsD& new_identity) {
    if (driving.empty())
        throw ValueError("retarget needs a nonempty driving sequence");
    Trajectory out;
    for (std::size_t t = 0; t < driving.size(); ++t) {
        try {
            out.frames.push_back(compose_keypoints(new_identity, driving[t].first, driving[t].second));
        } catch (const Error& e) {
            throw FrameError(static_cast<long long>(t), e);
        }
        out.poses.push_back(driving[t].first);
    }
    return out;
}

DrivingSequence extract_driving(const Trajectory& trajectory, const KeypointsD& identity) {
    if (!trajectory.has_pose())
        throw ValueError("driving trajectory carries no poses");
    trajectory.validate();
    DrivingSequence out;
    for (std::size_t t = 0; t < trajectory.frames.size(); ++t)
        out.emplace_back(trajectory.poses[t], extract_expression(trajectory.frames[t], identity, trajectory.poses[t]));
    return out;
}

RegionLayout generated_layout(Index n_kp) {
    if (n_kp == kDefaultKeypointCount)
        return RegionLayout::default_layout();
    if (n_kp < 5)
        throw ValueError("a generated layout needs at least 5 keypoints");
    std::vector<Index> lips, other;
    for (Index i = 0; i < n_kp; ++i)
        (i >= n_kp - 4 ? lips : other).push_back(i);
    return RegionLayout(n_kp, {RegionMask("lips", lips, n_kp), RegionMask("other", other, n_kp)});
}

} // namespace kpanim
