#pragma once

// Text container formats. Every file is JSON Lines: a header record naming
// the format and version, then one record per frame, tensor or phoneme.
// Numbers use shortest round-trip decimal form, so reading what was written
// reproduces every double bit for bit.

#include <filesystem>
#include <string>
#include <string_view>

#include "kpanim/pipeline.hpp"

namespace kpanim {

inline constexpr int kFileFormatVersion = 1;

std::string format_trajectory(const Trajectory& t);
Trajectory parse_trajectory(std::string_view text);

std::string format_audio(const AudioFeatureSequence& a);
AudioFeatureSequence parse_audio(std::string_view text);

std::string save_weights(const ModelWeights& w);
/// Throws before returning anything unless the whole payload is consistent.
ModelWeights load_weights(std::string_view text);

std::string format_phonemes(const PhonemeLibrary& lib);
PhonemeLibrary parse_phonemes(std::string_view text);

/// Values used when a schedule omits amplitude scaling or Kalman parameters.
struct ScheduleDefaults {
    ScaleConfig scale;
    KalmanParams kalman;
};

/// Control schedule as a single JSON document.
std::string format_schedule(const ControlSchedule& s);
ControlSchedule parse_schedule(std::string_view text, const ScheduleDefaults& defaults = {});

std::string format_emotion_spec(const EmotionSpec& e);
EmotionSpec parse_emotion_spec(std::string_view text);

std::string read_file(const std::filesystem::path& path);
/// Writes through a temporary sibling and renames it into place.
void write_file(const std::filesystem::path& path, std::string_view content);

} // namespace kpanim
