#pragma once

#include <vector>

#include "kpanim/keypoints.hpp"

namespace kpanim {

/// Number of frames covered by n windows of length W sharing `overlap` frames.
inline Index blended_length(Index n_windows, Index window, Index overlap) {
    return n_windows == 0 ? 0 : n_windows * window - (n_windows - 1) * overlap;
}

/// Joins equal-length windows; the j-th shared frame is crossfaded as
/// (1 - a_j) old + a_j new with a_j = (j + 1) / (overlap + 1).
template <typename Scalar>
std::vector<Deformation<Scalar>> blend_windows(const std::vector<std::vector<Deformation<Scalar>>>& windows,
                                               Index overlap) {
    std::vector<Deformation<Scalar>> out;
    if (windows.empty())
        return out;
    const Index w = static_cast<Index>(windows.front().size());
    if (w < 1)
        throw ValueError("blend_windows: windows must be nonempty");
    if (overlap < 0 || overlap >= w)
        throw ValueError("blend_windows: overlap " + std::to_string(overlap) + " must lie in [0, " +
                         std::to_string(w) + ")");
    out.reserve(static_cast<std::size_t>(blended_length(static_cast<Index>(windows.size()), w, overlap)));
    for (std::size_t k = 0; k < windows.size(); ++k) {
        const auto& win = windows[k];
        if (static_cast<Index>(win.size()) != w)
            throw DimensionError("blend_windows: window " + std::to_string(k) + " has length " +
                                 std::to_string(win.size()) + ", expected " + std::to_string(w));
        Index j = 0;
        if (k > 0) {
            const std::size_t start = out.size() - static_cast<std::size_t>(overlap);
            for (; j < overlap; ++j) {
                auto& old = out[start + static_cast<std::size_t>(j)];
                const auto& fresh = win[static_cast<std::size_t>(j)];
                detail::require_same_shape(old.offsets, fresh.offsets, "blend_windows");
                const Scalar alpha = Scalar(j + 1) / Scalar(overlap + 1);
                old.offsets = (Scalar(1) - alpha) * old.offsets + alpha * fresh.offsets;
            }
        }
        for (; j < w; ++j)
            out.push_back(win[static_cast<std::size_t>(j)]);
    }
    return out;
}

} // namespace kpanim
