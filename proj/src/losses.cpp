#include "kpanim/losses.hpp"

#include <cmath>
#include <limits>

#include "kpanim/nn.hpp"

namespace kpanim {

LinearEmbedding LinearEmbedding::seeded(Index input_dim, Index output_dim, std::uint64_t seed) {
    if (input_dim <= 0 || output_dim <= 0)
        throw ValueError("embedding dimensions must be positive");
    Rng rng(seed);
    const double bound = 1.0 / std::sqrt(static_cast<double>(input_dim));
    Eigen::MatrixXd m(output_dim, input_dim);
    for (Index r = 0; r < output_dim; ++r)
        for (Index c = 0; c < input_dim; ++c)
            m(r, c) = rng.uniform(-bound, bound);
    return LinearEmbedding(std::move(m));
}

Eigen::VectorXd LinearEmbedding::embed(const Eigen::VectorXd& input) const {
    if (input.size() != map_.cols())
        throw DimensionError("embedding input has length " + std::to_string(input.size()) + ", expected " +
                             std::to_string(map_.cols()));
    return map_ * input;
}

Eigen::VectorXd LinearEmbedding::pullback(const Eigen::VectorXd&, const Eigen::VectorXd& grad_embedding) const {
    return map_.transpose() * grad_embedding;
}

void SyncWindow::validate() const {
    if (static_cast<Index>(motion.size()) != kSyncWindowFrames || audio.rows() != kSyncWindowFrames)
        throw DimensionError("sync window needs exactly 5 motion frames and 5 audio rows, got " +
                             std::to_string(motion.size()) + " and " + std::to_string(audio.rows()));
    for (const auto& m : motion)
        detail::require_same_shape(m, motion.front(), "sync window motion");
}

Eigen::VectorXd SyncWindow::flat_motion() const {
    const Index per = motion.front().size();
    Eigen::VectorXd out(per * static_cast<Index>(motion.size()));
    for (std::size_t t = 0; t < motion.size(); ++t)
        out.segment(static_cast<Index>(t) * per, per) = Eigen::Map<const Eigen::VectorXd>(motion[t].data(), per);
    return out;
}

Eigen::VectorXd SyncWindow::flat_audio() const {
    // Row-major flattening: frame after frame.
    const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rm = audio;
    return Eigen::Map<const Eigen::VectorXd>(rm.data(), rm.size());
}

double negative_cosine(const Eigen::VectorXd& a, const Eigen::VectorXd& b, Eigen::VectorXd* grad_a) {
    if (a.size() != b.size())
        throw DimensionError("cosine: embedding lengths " + std::to_string(a.size()) + " vs " +
                             std::to_string(b.size()));
    const double na = a.norm();
    const double nb = b.norm();
    if (!(na > 0.0) || !(nb > 0.0))
        throw ValueError("sync loss: zero-norm embedding");
    const double cos = a.dot(b) / (na * nb);
    if (grad_a)
        *grad_a = -(b / (na * nb) - cos * a / (na * na));
    return -cos;
}

double loss_sync(const SyncWindow& win, const EmbeddingProvider& sv, const EmbeddingProvider& sa) {
    win.validate();
    return negative_cosine(sv.embed(win.flat_motion()), sa.embed(win.flat_audio()));
}

namespace {

double keypoint_window_loss(const std::vector<KeypointSet<double>>& refine,
                            const std::vector<KeypointSet<double>>& target, const char* what) {
    detail::require_same_length(refine, target, what);
    double sum = 0.0;
    for (std::size_t t = 0; t < refine.size(); ++t)
        sum += (refine[t] - target[t]).norm();
    return sum;
}

} // namespace

double loss_kp(const std::vector<KeypointSet<double>>& refine, const std::vector<KeypointSet<double>>& gt) {
    return keypoint_window_loss(refine, gt, "loss_kp");
}

double loss_reg(const std::vector<KeypointSet<double>>& refine, const std::vector<KeypointSet<double>>& rec) {
    return keypoint_window_loss(refine, rec, "loss_reg");
}

double loss_cls(const Eigen::VectorXd& probs, Index label) {
    if (probs.size() < 2)
        throw ValueError("loss_cls needs at least two classes");
    if (label < 0 || label >= probs.size())
        throw ValueError("loss_cls: label " + std::to_string(label) + " out of range");
    if (!probs.allFinite() || probs.minCoeff() < 0.0 || std::abs(probs.sum() - 1.0) > 1e-9)
        throw ValueError("loss_cls: probabilities must be non-negative and sum to 1");
    const double p = probs(label);
    if (p == 0.0)
        return std::numeric_limits<double>::infinity();
    return -std::log(p);
}

GradCheckReport grad_check(const Objective& f, const Eigen::VectorXd& params, double h) {
    if (!(h > 0.0))
        throw ValueError("grad_check step must be positive");
    const Eigen::VectorXd analytic = f.gradient(params);
    if (analytic.size() != params.size())
        throw DimensionError("grad_check: gradient length does not match parameter count");
    GradCheckReport report;
    Eigen::VectorXd p = params;
    for (Index i = 0; i < params.size(); ++i) {
        const double orig = p(i);
        p(i) = orig + h;
        const double fp = f.value(p);
        p(i) = orig - h;
        const double fm = f.value(p);
        p(i) = orig;
        if (!std::isfinite(fp) || !std::isfinite(fm))
            throw NumericError("grad_check: non-finite loss at parameter " + std::to_string(i));
        const double numeric = (fp - fm) / (2.0 * h);
        const double rel = std::abs(numeric - analytic(i)) / std::max(std::abs(numeric), 1e-8);
        if (rel > report.max_rel_error || report.worst_index < 0) {
            report.max_rel_error = rel;
            report.worst_index = i;
            report.analytic = analytic(i);
            report.numeric = numeric;
        }
    }
    return report;
}

} // namespace kpanim
