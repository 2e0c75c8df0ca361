#pragma once

// Session configuration document. Every key is optional; unknown keys are
// rejected. KPANIM_CONFIG names the file used when no path is given.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "kpanim/io.hpp"
#include "kpanim/losses.hpp"

namespace kpanim {

inline constexpr const char* kConfigEnvVar = "KPANIM_CONFIG";

struct SessionConfig {
    RegionLayout layout = RegionLayout::default_layout();
    ModelDims dims;
    ScaleConfig scale;
    KalmanParams kalman;
    LossWeights loss;
    NormKind rec_norm = NormKind::L2;
    std::vector<std::string> categories = default_emotion_categories();
    std::uint64_t weights_seed = 0;
    std::uint64_t noise_seed = 0;
    std::uint64_t train_seed = 0;
    Index window = kDefaultWindow;
    Index overlap = kDefaultOverlap;

    /// Cross-field checks: layout and dims agree on n_kp and lip size, overlap < window.
    void validate() const;
    EngineConfig engine() const;
    ScheduleDefaults schedule_defaults() const { return {scale, kalman}; }
    bool operator==(const SessionConfig&) const = default;
};

SessionConfig parse_config(std::string_view text);
std::string format_config(const SessionConfig& c);

/// Reads `path`, else the file named by KPANIM_CONFIG, else returns defaults.
SessionConfig load_config(const std::optional<std::filesystem::path>& path);

} // namespace kpanim
