#pragma once

// Lip-audio alignment controls: lip-sync deformation extraction, amplitude
// driven scaling and phoneme-direction style editing.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "kpanim/keypoints.hpp"

namespace kpanim {

/// D_l = K_refine - K_ori on the lip rows, exactly zero elsewhere.
template <typename Scalar>
Deformation<Scalar> lip_sync_deformation(const KeypointSet<Scalar>& k_refine, const KeypointSet<Scalar>& k_ori,
                                         const RegionMask& lip_mask) {
    detail::require_same_shape(k_refine, k_ori, "lip_sync_deformation");
    lip_mask.check_range(k_ori.rows());
    Deformation<Scalar> out = Deformation<Scalar>::zero(k_ori.rows(), DeformationKind::LipSync);
    for (Index i : lip_mask.indices())
        out.offsets.row(i) = k_refine.row(i) - k_ori.row(i);
    return out;
}

/// Amplitude to lip-scale mapping: f = clamp(rms / rms_ref, f_min, f_max).
struct ScaleConfig {
    double f_min = 0.25;
    double f_max = 2.0;
    /// Empty means "auto": the median RMS of the utterance.
    std::optional<double> rms_ref;

    void validate() const {
        if (!(f_min >= 0.0) || !(f_min <= f_max) || !std::isfinite(f_max))
            throw ValueError("scale config requires 0 <= f_min <= f_max");
        if (rms_ref && !(*rms_ref > 0.0 && std::isfinite(*rms_ref)))
            throw ValueError("rms_ref must be positive");
    }
    bool operator==(const ScaleConfig&) const = default;
};

inline double median(std::vector<double> values) {
    if (values.empty())
        throw ValueError("median of an empty sequence");
    const auto mid = values.begin() + static_cast<std::ptrdiff_t>(values.size() / 2);
    std::nth_element(values.begin(), mid, values.end());
    if (values.size() % 2 == 1)
        return *mid;
    const double upper = *mid;
    const double lower = *std::max_element(values.begin(), mid);
    return 0.5 * (lower + upper);
}

/// Fills in an "auto" reference from the utterance's per-frame RMS.
inline ScaleConfig resolve_scale_config(ScaleConfig cfg, const Eigen::VectorXd& rms) {
    if (!cfg.rms_ref) {
        const double ref = median(std::vector<double>(rms.data(), rms.data() + rms.size()));
        if (!(ref > 0.0))
            throw ValueError("auto rms_ref resolved to 0 (silent utterance)");
        cfg.rms_ref = ref;
    }
    cfg.validate();
    return cfg;
}

inline double scale_factor(double rms_frame, const ScaleConfig& cfg) {
    if (!cfg.rms_ref)
        throw ValueError("scale_factor: rms_ref is unresolved (auto mode needs utterance statistics)");
    if (*cfg.rms_ref == 0.0)
        throw ValueError("scale_factor: rms_ref is 0");
    if (!(rms_frame >= 0.0))
        throw ValueError("scale_factor: rms must be non-negative");
    return std::clamp(rms_frame / *cfg.rms_ref, cfg.f_min, cfg.f_max);
}

template <typename Scalar>
Deformation<Scalar> scale_deformation(const Deformation<Scalar>& d, Scalar f) {
    return Deformation<Scalar>(d.offsets * f, d.kind);
}

/// Unit direction in flattened lip-deformation space for one pronunciation.
template <typename Scalar>
class PhonemeVector {
public:
    using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

    PhonemeVector() = default;

    /// Normalizes `direction`; throws on a zero or non-finite vector.
    static PhonemeVector from_direction(std::string name, const Vector& direction) {
        const Scalar n = direction.norm();
        if (!direction.allFinite() || !(n > Scalar(0)))
            throw ValueError("phoneme '" + name + "' direction must be finite and nonzero");
        PhonemeVector p;
        p.name_ = std::move(name);
        p.direction_ = direction / n;
        return p;
    }

    /// Keeps an already unit `direction` verbatim (norm within 1e-12 of 1).
    static PhonemeVector from_unit(std::string name, const Vector& direction) {
        if (!direction.allFinite() || !(std::abs(direction.norm() - Scalar(1)) <= Scalar(1e-12)))
            throw ValueError("phoneme '" + name + "' direction is not unit norm");
        PhonemeVector p;
        p.name_ = std::move(name);
        p.direction_ = direction;
        return p;
    }

    const std::string& name() const { return name_; }
    const Vector& direction() const { return direction_; }
    Index size() const { return direction_.size(); }

    bool operator==(const PhonemeVector& other) const {
        return name_ == other.name_ && direction_.size() == other.direction_.size() && direction_ == other.direction_;
    }

private:
    std::string name_;
    Vector direction_;
};

namespace detail {

template <typename Scalar>
Eigen::Matrix<Scalar, Eigen::Dynamic, 1> flatten_rows(const KeypointSet<Scalar>& m, const RegionMask& mask) {
    Eigen::Matrix<Scalar, Eigen::Dynamic, 1> x(mask.size() * 3);
    Index k = 0;
    for (Index i : mask.indices()) {
        x.template segment<3>(3 * k) = m.row(i).transpose();
        ++k;
    }
    return x;
}

template <typename Scalar>
void scatter_rows(const Eigen::Matrix<Scalar, Eigen::Dynamic, 1>& x, const RegionMask& mask, KeypointSet<Scalar>& m) {
    Index k = 0;
    for (Index i : mask.indices()) {
        m.row(i) = x.template segment<3>(3 * k).transpose();
        ++k;
    }
}

} // namespace detail

/// Rescales the component of the lip deformation along the phoneme direction:
/// x' = x + (lambda - 1) (x . u) u. Off-lip rows are left as they are.
template <typename Scalar>
Deformation<Scalar> style_edit(const Deformation<Scalar>& d, const PhonemeVector<Scalar>& p, Scalar lambda,
                               const RegionMask& lip_mask) {
    if (d.kind != DeformationKind::LipSync)
        throw ValueError("style_edit expects a lip_sync deformation, got " + std::string(to_string(d.kind)));
    if (lip_mask.size() * 3 != p.size())
        throw DimensionError("style_edit: phoneme '" + p.name() + "' has length " + std::to_string(p.size()) +
                             ", lip mask needs " + std::to_string(lip_mask.size() * 3));
    if (!std::isfinite(lambda))
        throw ValueError("style_edit: lambda must be finite");
    lip_mask.check_range(d.rows());
    const auto& u = p.direction();
    auto x = detail::flatten_rows(d.offsets, lip_mask);
    x += ((lambda - Scalar(1)) * x.dot(u)) * u;
    Deformation<Scalar> out = d;
    detail::scatter_rows(x, lip_mask, out.offsets);
    return out;
}

/// Direction = normalized mean of the flattened lip rows over the captured frames.
template <typename Scalar>
PhonemeVector<Scalar> build_phoneme_vector(const std::vector<Deformation<Scalar>>& frames, const RegionMask& lip_mask,
                                           std::string name) {
    if (frames.empty())
        throw ValueError("build_phoneme_vector needs at least one frame");
    Eigen::Matrix<Scalar, Eigen::Dynamic, 1> mean = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>::Zero(lip_mask.size() * 3);
    for (const auto& f : frames) {
        lip_mask.check_range(f.rows());
        mean += detail::flatten_rows(f.offsets, lip_mask);
    }
    mean /= static_cast<Scalar>(frames.size());
    if (!(mean.norm() > Scalar(0)))
        throw ValueError("phoneme '" + name + "': mean lip deformation has zero norm");
    return PhonemeVector<Scalar>::from_direction(std::move(name), mean);
}

} // namespace kpanim
