#pragma once

// Keypoint and deformation algebra. Keypoint sets are n_kp x 3 row-major
// matrices; every keypoint is a row vector, so a rigid rotation acts as
// K * R from the right.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <string>
#include <string_view>
#include <vector>

#include "kpanim/errors.hpp"

namespace kpanim {

using Index = Eigen::Index;

inline constexpr Index kDefaultKeypointCount = 21;

template <typename Scalar>
using KeypointSet = Eigen::Matrix<Scalar, Eigen::Dynamic, 3, Eigen::RowMajor>;

template <typename Scalar>
using Points2d = Eigen::Matrix<Scalar, Eigen::Dynamic, 2, Eigen::RowMajor>;

template <typename Scalar>
using Row3 = Eigen::Matrix<Scalar, 1, 3>;

template <typename Scalar>
using Rotation3 = Eigen::Matrix<Scalar, 3, 3>;

enum class DeformationKind { LipSync, Emotion, Raw };

inline std::string_view to_string(DeformationKind kind) {
    switch (kind) {
    case DeformationKind::LipSync: return "lip_sync";
    case DeformationKind::Emotion: return "emotion";
    case DeformationKind::Raw: return "raw";
    }
    return "raw";
}

/// Per-keypoint offset field with a tag saying which control produced it.
template <typename Scalar>
struct Deformation {
    KeypointSet<Scalar> offsets;
    DeformationKind kind = DeformationKind::Raw;

    Deformation() = default;
    Deformation(KeypointSet<Scalar> off, DeformationKind k) : offsets(std::move(off)), kind(k) {}

    static Deformation zero(Index n_kp, DeformationKind k = DeformationKind::Raw) {
        return Deformation(KeypointSet<Scalar>::Zero(n_kp, 3), k);
    }

    Index rows() const { return offsets.rows(); }
    bool operator==(const Deformation& other) const {
        return kind == other.kind && offsets.rows() == other.offsets.rows() && offsets == other.offsets;
    }
};

template <typename Scalar>
struct RigidPose {
    Rotation3<Scalar> rotation = Rotation3<Scalar>::Identity();
    Row3<Scalar> translation = Row3<Scalar>::Zero();
    Scalar scale = Scalar(1);

    static RigidPose identity() { return RigidPose{}; }

    bool is_valid(Scalar tol = Scalar(1e-9)) const {
        if (!rotation.allFinite() || !translation.allFinite() || !std::isfinite(scale))
            return false;
        if (!(scale > Scalar(0)))
            return false;
        const Scalar ortho = (rotation.transpose() * rotation - Rotation3<Scalar>::Identity()).cwiseAbs().maxCoeff();
        return ortho <= tol && std::abs(rotation.determinant() - Scalar(1)) <= tol;
    }

    void validate(Scalar tol = Scalar(1e-9)) const {
        if (!(scale > Scalar(0)) || !std::isfinite(scale))
            throw ValueError("pose scale must be positive and finite");
        if (!is_valid(tol))
            throw ValueError("pose rotation is not orthonormal with determinant +1");
    }

    bool operator==(const RigidPose& other) const {
        return rotation == other.rotation && translation == other.translation && scale == other.scale;
    }
};

/// Named subset of keypoint rows. Indices are kept sorted and unique.
class RegionMask {
public:
    RegionMask() = default;

    RegionMask(std::string name, std::vector<Index> indices, Index n_kp) : name_(std::move(name)) {
        std::sort(indices.begin(), indices.end());
        if (std::adjacent_find(indices.begin(), indices.end()) != indices.end())
            throw ValueError("region '" + name_ + "' has duplicate keypoint indices");
        for (Index i : indices) {
            if (i < 0 || i >= n_kp)
                throw ValueError("region '" + name_ + "' index " + std::to_string(i) + " out of range for n_kp=" +
                                 std::to_string(n_kp));
        }
        indices_ = std::move(indices);
    }

    static RegionMask all(std::string name, Index n_kp) {
        std::vector<Index> idx(static_cast<std::size_t>(n_kp));
        for (Index i = 0; i < n_kp; ++i)
            idx[static_cast<std::size_t>(i)] = i;
        return RegionMask(std::move(name), std::move(idx), n_kp);
    }

    const std::string& name() const { return name_; }
    const std::vector<Index>& indices() const { return indices_; }
    Index size() const { return static_cast<Index>(indices_.size()); }
    bool empty() const { return indices_.empty(); }
    bool contains(Index row) const { return std::binary_search(indices_.begin(), indices_.end(), row); }

    void check_range(Index n_kp) const {
        if (!indices_.empty() && indices_.back() >= n_kp)
            throw ValueError("region '" + name_ + "' index " + std::to_string(indices_.back()) +
                             " out of range for n_kp=" + std::to_string(n_kp));
    }

    bool operator==(const RegionMask& other) const { return name_ == other.name_ && indices_ == other.indices_; }

private:
    std::string name_;
    std::vector<Index> indices_;
};

inline bool disjoint(const RegionMask& a, const RegionMask& b) {
    auto ia = a.indices().begin();
    auto ib = b.indices().begin();
    while (ia != a.indices().end() && ib != b.indices().end()) {
        if (*ia == *ib)
            return false;
        if (*ia < *ib)
            ++ia;
        else
            ++ib;
    }
    return true;
}

inline RegionMask mask_union(const RegionMask& a, const RegionMask& b, Index n_kp, std::string name = {}) {
    std::vector<Index> merged;
    std::set_union(a.indices().begin(), a.indices().end(), b.indices().begin(), b.indices().end(),
                   std::back_inserter(merged));
    return RegionMask(name.empty() ? a.name() + "+" + b.name() : std::move(name), std::move(merged), n_kp);
}

/// The named facial regions of a session; pairwise disjoint, one of them is "lips".
class RegionLayout {
public:
    RegionLayout() = default;

    RegionLayout(Index n_kp, std::vector<RegionMask> regions) : n_kp_(n_kp), regions_(std::move(regions)) {
        if (n_kp_ <= 0)
            throw ValueError("n_kp must be positive");
        for (std::size_t i = 0; i < regions_.size(); ++i) {
            regions_[i].check_range(n_kp_);
            for (std::size_t j = 0; j < i; ++j) {
                if (regions_[i].name() == regions_[j].name())
                    throw ValueError("duplicate region name '" + regions_[i].name() + "'");
                if (!disjoint(regions_[i], regions_[j]))
                    throw ValueError("regions '" + regions_[j].name() + "' and '" + regions_[i].name() + "' overlap");
            }
        }
    }

    /// 21 keypoints: brows 0-5, eyes 6-11, other 12-16, lips 17-20.
    static RegionLayout default_layout() {
        const Index n = kDefaultKeypointCount;
        return RegionLayout(n, {RegionMask("lips", {17, 18, 19, 20}, n), RegionMask("eyes", {6, 7, 8, 9, 10, 11}, n),
                                RegionMask("brows", {0, 1, 2, 3, 4, 5}, n),
                                RegionMask("other", {12, 13, 14, 15, 16}, n)});
    }

    Index n_kp() const { return n_kp_; }
    const std::vector<RegionMask>& regions() const { return regions_; }

    const RegionMask* find(std::string_view name) const {
        for (const auto& r : regions_)
            if (r.name() == name)
                return &r;
        return nullptr;
    }

    const RegionMask& at(std::string_view name) const {
        if (const auto* r = find(name))
            return *r;
        throw ValueError("unknown region '" + std::string(name) + "'");
    }

    const RegionMask& lips() const { return at("lips"); }

    /// Region name of every keypoint row ("" for rows outside every region).
    std::vector<std::string> row_tags() const {
        std::vector<std::string> tags(static_cast<std::size_t>(n_kp_));
        for (const auto& r : regions_)
            for (Index i : r.indices())
                tags[static_cast<std::size_t>(i)] = r.name();
        return tags;
    }

    /// Same keypoint count and the same named masks, in any order.
    bool operator==(const RegionLayout& other) const {
        if (n_kp_ != other.n_kp_ || regions_.size() != other.regions_.size())
            return false;
        for (const auto& r : regions_) {
            const auto* o = other.find(r.name());
            if (!o || !(*o == r))
                return false;
        }
        return true;
    }

private:
    Index n_kp_ = kDefaultKeypointCount;
    std::vector<RegionMask> regions_;
};

namespace detail {

template <typename A, typename B>
void require_same_shape(const A& a, const B& b, const char* what) {
    if (a.rows() != b.rows() || a.cols() != b.cols())
        throw DimensionError(std::string(what) + ": shape " + std::to_string(a.rows()) + "x" +
                             std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" +
                             std::to_string(b.cols()));
}

} // namespace detail

/// K = s * (K_c * R + delta) + t, applied row by row.
template <typename Scalar>
KeypointSet<Scalar> compose_keypoints(const KeypointSet<Scalar>& canonical, const RigidPose<Scalar>& pose,
                                      const Deformation<Scalar>& delta) {
    detail::require_same_shape(canonical, delta.offsets, "compose_keypoints");
    pose.validate();
    KeypointSet<Scalar> out = pose.scale * (canonical * pose.rotation + delta.offsets);
    out.rowwise() += pose.translation;
    return out;
}

/// Inverse of compose_keypoints in delta: recovers the expression deformation of k.
template <typename Scalar>
Deformation<Scalar> extract_expression(const KeypointSet<Scalar>& k, const KeypointSet<Scalar>& canonical,
                                       const RigidPose<Scalar>& pose) {
    detail::require_same_shape(k, canonical, "extract_expression");
    pose.validate();
    KeypointSet<Scalar> centered = k;
    centered.rowwise() -= pose.translation;
    return Deformation<Scalar>(centered / pose.scale - canonical * pose.rotation, DeformationKind::Raw);
}

/// K_d = K_ori + D_l + D_e. Raw-tagged inputs are accepted and reported via `raw_input`.
template <typename Scalar>
KeypointSet<Scalar> apply_deformations(const KeypointSet<Scalar>& base, const Deformation<Scalar>& lip,
                                       const Deformation<Scalar>& emo, bool* raw_input = nullptr) {
    detail::require_same_shape(base, lip.offsets, "apply_deformations (lip)");
    detail::require_same_shape(base, emo.offsets, "apply_deformations (emotion)");
    const bool lip_ok = lip.kind == DeformationKind::LipSync || lip.kind == DeformationKind::Raw;
    const bool emo_ok = emo.kind == DeformationKind::Emotion || emo.kind == DeformationKind::Raw;
    if (!lip_ok || !emo_ok)
        throw ValueError("apply_deformations: expected (lip_sync, emotion) deformations, got (" +
                         std::string(to_string(lip.kind)) + ", " + std::string(to_string(emo.kind)) + ")");
    if (raw_input)
        *raw_input = lip.kind == DeformationKind::Raw || emo.kind == DeformationKind::Raw;
    return base + (lip.offsets + emo.offsets);
}

/// Copies the masked rows, zeroes the rest.
template <typename Scalar>
Deformation<Scalar> mask_deformation(const Deformation<Scalar>& d, const RegionMask& mask) {
    mask.check_range(d.rows());
    Deformation<Scalar> out = Deformation<Scalar>::zero(d.rows(), d.kind);
    for (Index i : mask.indices())
        out.offsets.row(i) = d.offsets.row(i);
    return out;
}

template <typename Scalar>
Points2d<Scalar> project_2d(const KeypointSet<Scalar>& k) {
    return k.template leftCols<2>();
}

/// Rotation by `angle` (right-handed) about `axis`, in row-vector form: row * R
/// rotates the row. This is the transpose of the usual column-vector matrix.
template <typename Scalar>
Rotation3<Scalar> axis_angle(const Eigen::Matrix<Scalar, 3, 1>& axis, Scalar angle) {
    return Eigen::AngleAxis<Scalar>(angle, axis.normalized()).toRotationMatrix().transpose();
}

} // namespace kpanim
