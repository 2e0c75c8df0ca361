#pragma once

// Emotion controls: condition adapters, neutral-subtracted emotion
// deformations, intensity scaling and per-region composition.

#include <Eigen/Dense>

#include <cmath>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "kpanim/keypoints.hpp"

namespace kpanim {

inline constexpr const char* kNeutral = "neutral";

inline std::vector<std::string> default_emotion_categories() {
    return {"neutral", "happy", "sad", "angry", "surprised", "fear", "disgust", "contempt"};
}

enum class EmotionSource { Label, PrecomputedAudio, PrecomputedText, Image, Video };

std::string_view to_string(EmotionSource source);
EmotionSource emotion_source_from_string(std::string_view name);

struct EmotionCondition {
    Eigen::VectorXd vector;
    EmotionSource source = EmotionSource::Label;
};

/// One condition row per category; the "neutral" row is always zero.
struct LabelTable {
    std::vector<std::string> categories;
    Eigen::MatrixXd rows; // categories.size() x d_emotion

    Index dim() const { return rows.cols(); }
    std::optional<Index> index_of(std::string_view category) const {
        for (std::size_t i = 0; i < categories.size(); ++i)
            if (categories[i] == category)
                return static_cast<Index>(i);
        return std::nullopt;
    }
};

inline EmotionCondition condition_from_label(std::string_view category, const LabelTable& table) {
    if (category == kNeutral)
        return {Eigen::VectorXd::Zero(table.dim()), EmotionSource::Label};
    const auto idx = table.index_of(category);
    if (!idx)
        throw ValueError("unknown emotion category '" + std::string(category) + "'");
    return {table.rows.row(*idx).transpose(), EmotionSource::Label};
}

inline EmotionCondition condition_from_embedding(const Eigen::VectorXd& vec, EmotionSource source, Index d_emotion) {
    if (vec.size() != d_emotion)
        throw DimensionError("emotion embedding has length " + std::to_string(vec.size()) + ", expected " +
                             std::to_string(d_emotion));
    if (!vec.allFinite())
        throw ValueError("emotion embedding has a non-finite entry");
    return {vec, source};
}

struct EmotionSetting {
    std::string category = kNeutral;
    double intensity = 1.0;
    bool operator==(const EmotionSetting&) const = default;
};

struct EmotionSpec {
    enum class Mode { Global, Regional };
    Mode mode = Mode::Global;
    std::optional<EmotionSetting> global = EmotionSetting{};
    std::optional<std::map<std::string, EmotionSetting>> regional;

    static EmotionSpec neutral() { return {}; }
    static EmotionSpec make_global(std::string category, double intensity) {
        EmotionSpec s;
        s.global = EmotionSetting{std::move(category), intensity};
        return s;
    }
    static EmotionSpec make_regional(std::map<std::string, EmotionSetting> parts) {
        EmotionSpec s;
        s.mode = Mode::Regional;
        s.global.reset();
        s.regional = std::move(parts);
        return s;
    }

    /// Every category named by the spec.
    std::vector<std::string> categories() const {
        std::vector<std::string> out;
        if (global)
            out.push_back(global->category);
        if (regional)
            for (const auto& [_, s] : *regional)
                out.push_back(s.category);
        return out;
    }

    void validate(const std::vector<std::string>& allowed_categories, const RegionLayout* layout = nullptr) const;
    bool operator==(const EmotionSpec&) const = default;
};

/// D_e[t] = emo[t] - neutral[t]; both sequences must come from the same audio and weights.
template <typename Scalar>
std::vector<Deformation<Scalar>> pure_emotion_deformation(const std::vector<Deformation<Scalar>>& emo_seq,
                                                          const std::vector<Deformation<Scalar>>& neutral_seq) {
    if (emo_seq.size() != neutral_seq.size())
        throw DimensionError("pure_emotion_deformation: sequence lengths " + std::to_string(emo_seq.size()) + " vs " +
                             std::to_string(neutral_seq.size()));
    std::vector<Deformation<Scalar>> out;
    out.reserve(emo_seq.size());
    for (std::size_t t = 0; t < emo_seq.size(); ++t) {
        detail::require_same_shape(emo_seq[t].offsets, neutral_seq[t].offsets, "pure_emotion_deformation");
        out.emplace_back(emo_seq[t].offsets - neutral_seq[t].offsets, DeformationKind::Emotion);
    }
    return out;
}

template <typename Scalar>
Deformation<Scalar> scale_emotion(const Deformation<Scalar>& d, Scalar intensity) {
    if (d.kind != DeformationKind::Emotion)
        throw ValueError("scale_emotion expects an emotion deformation, got " + std::string(to_string(d.kind)));
    if (!(intensity >= Scalar(0)) || !std::isfinite(intensity))
        throw ValueError("emotion intensity must be a non-negative finite number");
    return Deformation<Scalar>(d.offsets * intensity, DeformationKind::Emotion);
}

/// Row i of the result comes from the part whose region contains i; uncovered rows are zero.
template <typename Scalar>
Deformation<Scalar> compose_regions(const std::map<std::string, Deformation<Scalar>>& parts,
                                    const std::map<std::string, RegionMask>& regions, Index n_kp) {
    std::vector<const RegionMask*> used;
    for (const auto& [name, part] : parts) {
        const auto it = regions.find(name);
        if (it == regions.end())
            throw ValueError("compose_regions: unknown region '" + name + "'");
        if (part.rows() != n_kp)
            throw DimensionError("compose_regions: part '" + name + "' has " + std::to_string(part.rows()) +
                                 " rows, expected " + std::to_string(n_kp));
        it->second.check_range(n_kp);
        for (const RegionMask* other : used)
            if (!disjoint(*other, it->second))
                throw ValueError("compose_regions: regions '" + other->name() + "' and '" + name + "' overlap");
        used.push_back(&it->second);
    }
    Deformation<Scalar> out = Deformation<Scalar>::zero(n_kp, DeformationKind::Emotion);
    for (const auto& [name, part] : parts)
        for (Index i : regions.at(name).indices())
            out.offsets.row(i) = part.offsets.row(i);
    return out;
}

inline std::map<std::string, RegionMask> region_map(const RegionLayout& layout) {
    std::map<std::string, RegionMask> out;
    for (const auto& r : layout.regions())
        out.emplace(r.name(), r);
    return out;
}

} // namespace kpanim
