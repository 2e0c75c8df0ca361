#include "kpanim/emc.hpp"

#include <algorithm>

namespace kpanim {

std::string_view to_string(EmotionSource source) {
    switch (source) {
    case EmotionSource::Label: return "label";
    case EmotionSource::PrecomputedAudio: return "audio";
    case EmotionSource::PrecomputedText: return "text";
    case EmotionSource::Image: return "image";
    case EmotionSource::Video: return "video";
    }
    return "label";
}

EmotionSource emotion_source_from_string(std::string_view name) {
    for (auto s : {EmotionSource::Label, EmotionSource::PrecomputedAudio, EmotionSource::PrecomputedText,
                   EmotionSource::Image, EmotionSource::Video})
        if (to_string(s) == name)
            return s;
    throw ValueError("unknown emotion source '" + std::string(name) + "'");
}

namespace {

void check_setting(const EmotionSetting& s, const std::vector<std::string>& allowed) {
    if (s.category != kNeutral && std::find(allowed.begin(), allowed.end(), s.category) == allowed.end())
        throw ValueError("unknown emotion category '" + s.category + "'");
    if (!(s.intensity >= 0.0) || !std::isfinite(s.intensity))
        throw ValueError("emotion intensity for '" + s.category + "' must be a non-negative finite number");
}

} // namespace

void EmotionSpec::validate(const std::vector<std::string>& allowed_categories, const RegionLayout* layout) const {
    if (mode == Mode::Global) {
        if (!global || regional)
            throw ValueError("global emotion spec must set exactly the global setting");
        check_setting(*global, allowed_categories);
        return;
    }
    if (!regional || global)
        throw ValueError("regional emotion spec must set exactly the regional map");
    for (const auto& [region, setting] : *regional) {
        if (layout && !layout->find(region))
            throw ValueError("unknown region '" + region + "' in emotion spec");
        check_setting(setting, allowed_categories);
    }
}

} // namespace kpanim
