#pragma once

// Training losses over expression and keypoint sequences, the keypoint-space
// sync loss with pluggable embedding providers, and a central-difference
// gradient checker.

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <functional>
#include <type_traits>
#include <vector>

#include "kpanim/keypoints.hpp"

namespace kpanim {

/// Per-frame norm used by the sequence losses. L2 is the default.
enum class NormKind { L2, L1 };

struct LossWeights {
    double lambda_rec = 1.0;
    double lambda_kp = 1.0;
    double lambda_reg = 1.0;

    void validate() const {
        for (double v : {lambda_rec, lambda_kp, lambda_reg})
            if (!(v >= 0.0) || !std::isfinite(v))
                throw ValueError("loss weights must be finite and non-negative");
    }
    bool operator==(const LossWeights&) const = default;
};

namespace detail {

template <typename T>
struct is_deformation : std::false_type {};
template <typename S>
struct is_deformation<Deformation<S>> : std::true_type {};

template <typename Frame>
const auto& frame_values(const Frame& f) {
    if constexpr (is_deformation<Frame>::value)
        return f.offsets;
    else
        return f;
}

template <typename Derived>
double frame_norm(const Eigen::MatrixBase<Derived>& m, NormKind norm) {
    return norm == NormKind::L2 ? static_cast<double>(m.norm()) : static_cast<double>(m.cwiseAbs().sum());
}

// d/dm of frame_norm(m); the zero subgradient is used at m = 0.
template <typename Derived>
Eigen::MatrixXd frame_norm_gradient(const Eigen::MatrixBase<Derived>& m, NormKind norm) {
    Eigen::MatrixXd g = m.template cast<double>();
    if (norm == NormKind::L1)
        return g.unaryExpr([](double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); });
    const double n = g.norm();
    return n > 0.0 ? Eigen::MatrixXd(g / n) : Eigen::MatrixXd(Eigen::MatrixXd::Zero(g.rows(), g.cols()));
}

template <typename Frame>
void require_same_length(const std::vector<Frame>& a, const std::vector<Frame>& b, const char* what) {
    if (a.size() != b.size())
        throw DimensionError(std::string(what) + ": sequence lengths " + std::to_string(a.size()) + " vs " +
                             std::to_string(b.size()));
    for (std::size_t t = 0; t < a.size(); ++t)
        require_same_shape(frame_values(a[t]), frame_values(b[t]), what);
}

} // namespace detail

/// sum_t || pred_t - gt_t ||
template <typename Frame>
double loss_rec(const std::vector<Frame>& pred, const std::vector<Frame>& gt, NormKind norm = NormKind::L2) {
    detail::require_same_length(pred, gt, "loss_rec");
    double sum = 0.0;
    for (std::size_t t = 0; t < pred.size(); ++t)
        sum += detail::frame_norm(detail::frame_values(pred[t]) - detail::frame_values(gt[t]), norm);
    return sum;
}

/// sum_{t>=1} || (pred_t - pred_{t-1}) - (gt_t - gt_{t-1}) ||
template <typename Frame>
double loss_vel(const std::vector<Frame>& pred, const std::vector<Frame>& gt, NormKind norm = NormKind::L2) {
    detail::require_same_length(pred, gt, "loss_vel");
    if (pred.size() < 2)
        throw ValueError("loss_vel needs at least two frames");
    double sum = 0.0;
    for (std::size_t t = 1; t < pred.size(); ++t) {
        const auto& p1 = detail::frame_values(pred[t]);
        const auto& p0 = detail::frame_values(pred[t - 1]);
        const auto& g1 = detail::frame_values(gt[t]);
        const auto& g0 = detail::frame_values(gt[t - 1]);
        sum += detail::frame_norm((p1 - p0) - (g1 - g0), norm);
    }
    return sum;
}

template <typename Frame>
double loss_exp(const std::vector<Frame>& pred, const std::vector<Frame>& gt, const LossWeights& w,
                NormKind norm = NormKind::L2) {
    return loss_vel(pred, gt, norm) + w.lambda_rec * loss_rec(pred, gt, norm);
}

/// Gradient of loss_exp with respect to each predicted frame.
template <typename Frame>
std::vector<Eigen::MatrixXd> loss_exp_gradient(const std::vector<Frame>& pred, const std::vector<Frame>& gt,
                                               const LossWeights& w, NormKind norm = NormKind::L2) {
    detail::require_same_length(pred, gt, "loss_exp_gradient");
    if (pred.size() < 2)
        throw ValueError("loss_exp needs at least two frames");
    std::vector<Eigen::MatrixXd> grad;
    grad.reserve(pred.size());
    for (std::size_t t = 0; t < pred.size(); ++t)
        grad.push_back(w.lambda_rec *
                       detail::frame_norm_gradient(detail::frame_values(pred[t]) - detail::frame_values(gt[t]), norm));
    for (std::size_t t = 1; t < pred.size(); ++t) {
        const auto& p1 = detail::frame_values(pred[t]);
        const auto& p0 = detail::frame_values(pred[t - 1]);
        const auto& g1 = detail::frame_values(gt[t]);
        const auto& g0 = detail::frame_values(gt[t - 1]);
        const Eigen::MatrixXd u = detail::frame_norm_gradient((p1 - p0) - (g1 - g0), norm);
        grad[t] += u;
        grad[t - 1] -= u;
    }
    return grad;
}

/// Maps a flattened window to an embedding; differentiable for training.
class EmbeddingProvider {
public:
    virtual ~EmbeddingProvider() = default;
    virtual Index input_dim() const = 0;
    virtual Index output_dim() const = 0;
    virtual Eigen::VectorXd embed(const Eigen::VectorXd& input) const = 0;
    /// Vector-Jacobian product: d<grad_embedding, embed(x)>/dx at x = input.
    virtual Eigen::VectorXd pullback(const Eigen::VectorXd& input, const Eigen::VectorXd& grad_embedding) const = 0;
};

/// Fixed linear map, entries uniform in +-1/sqrt(input_dim) from a seeded generator.
class LinearEmbedding final : public EmbeddingProvider {
public:
    explicit LinearEmbedding(Eigen::MatrixXd map) : map_(std::move(map)) {}
    static LinearEmbedding seeded(Index input_dim, Index output_dim, std::uint64_t seed);

    Index input_dim() const override { return map_.cols(); }
    Index output_dim() const override { return map_.rows(); }
    Eigen::VectorXd embed(const Eigen::VectorXd& input) const override;
    Eigen::VectorXd pullback(const Eigen::VectorXd& input, const Eigen::VectorXd& grad_embedding) const override;
    const Eigen::MatrixXd& map() const { return map_; }

private:
    Eigen::MatrixXd map_;
};

inline constexpr Index kSyncWindowFrames = 5;

/// Five consecutive motion frames paired with the matching five audio rows.
struct SyncWindow {
    std::vector<KeypointSet<double>> motion;
    Eigen::MatrixXd audio;

    void validate() const;
    Eigen::VectorXd flat_motion() const;
    Eigen::VectorXd flat_audio() const;
};

/// -cos(a, b), together with its gradient in a when requested.
double negative_cosine(const Eigen::VectorXd& a, const Eigen::VectorXd& b, Eigen::VectorXd* grad_a = nullptr);

/// -cos(S_v(motion), S_a(audio)), in [-1, 1].
double loss_sync(const SyncWindow& win, const EmbeddingProvider& sv, const EmbeddingProvider& sa);

/// sum_t || refine_t - target_t ||_2 (target is K_gt for the keypoint loss, K_rec for the regularizer).
double loss_kp(const std::vector<KeypointSet<double>>& refine, const std::vector<KeypointSet<double>>& gt);
double loss_reg(const std::vector<KeypointSet<double>>& refine, const std::vector<KeypointSet<double>>& rec);

inline double loss_refine(double sync, double kp, double reg, const LossWeights& w) {
    return sync + w.lambda_kp * kp + w.lambda_reg * reg;
}

/// -log p[label]; +infinity when p[label] == 0.
double loss_cls(const Eigen::VectorXd& probs, Index label);

/// Scalar objective with its analytic gradient.
struct Objective {
    std::function<double(const Eigen::VectorXd&)> value;
    std::function<Eigen::VectorXd(const Eigen::VectorXd&)> gradient;
};

struct GradCheckReport {
    double max_rel_error = 0.0;
    Index worst_index = -1;
    double analytic = 0.0;
    double numeric = 0.0;
};

/// Central differences against the analytic gradient; the relative error divides
/// by max(|finite difference|, 1e-8).
GradCheckReport grad_check(const Objective& f, const Eigen::VectorXd& params, double h = 1e-5);

} // namespace kpanim
