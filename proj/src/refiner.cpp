#include "kpanim/nn.hpp"

namespace kpanim {

RefinerNet RefinerNet::from_weights(const ModelWeights& w) {
    return RefinerNet{w.at("refiner.w1"), w.at("refiner.b1"), w.at("refiner.w2"),
                      w.at("refiner.b2"), w.at("refiner.w3"), w.at("refiner.b3")};
}

void RefinerNet::store(ModelWeights& w) const {
    w.at("refiner.w1") = w1;
    w.at("refiner.b1") = b1;
    w.at("refiner.w2") = w2;
    w.at("refiner.b2") = b2;
    w.at("refiner.w3") = w3;
    w.at("refiner.b3") = b3;
}

Index RefinerNet::num_params() const {
    return w1.size() + b1.size() + w2.size() + b2.size() + w3.size() + b3.size();
}

Eigen::VectorXd RefinerNet::flatten() const {
    Eigen::VectorXd p(num_params());
    Index off = 0;
    for (const Eigen::MatrixXd* m : {&w1, &b1, &w2, &b2, &w3, &b3}) {
        p.segment(off, m->size()) = m->reshaped();
        off += m->size();
    }
    return p;
}

void RefinerNet::unflatten(const Eigen::VectorXd& p) {
    if (p.size() != num_params())
        throw DimensionError("refiner parameter vector has length " + std::to_string(p.size()) + ", expected " +
                             std::to_string(num_params()));
    Index off = 0;
    for (Eigen::MatrixXd* m : {&w1, &b1, &w2, &b2, &w3, &b3}) {
        m->reshaped() = p.segment(off, m->size());
        off += m->size();
    }
}

Eigen::MatrixXd RefinerNet::forward(const Eigen::MatrixXd& input, Cache* cache) const {
    if (input.cols() != w1.rows())
        throw DimensionError("refiner input width " + std::to_string(input.cols()) + ", expected " +
                             std::to_string(w1.rows()));
    Eigen::MatrixXd h1 = input * w1;
    h1.rowwise() += b1.row(0);
    h1 = h1.array().tanh();
    Eigen::MatrixXd h2 = h1 * w2;
    h2.rowwise() += b2.row(0);
    h2 = h2.array().tanh();
    Eigen::MatrixXd y = h2 * w3;
    y.rowwise() += b3.row(0);
    if (cache) {
        cache->input = input;
        cache->h1 = std::move(h1);
        cache->h2 = std::move(h2);
    }
    return y;
}

RefinerNet RefinerNet::backward(const Cache& cache, const Eigen::MatrixXd& grad_out) const {
    RefinerNet g;
    g.w3 = cache.h2.transpose() * grad_out;
    g.b3 = grad_out.colwise().sum();
    const Eigen::MatrixXd g2 = ((grad_out * w3.transpose()).array() * (1.0 - cache.h2.array().square())).matrix();
    g.w2 = cache.h1.transpose() * g2;
    g.b2 = g2.colwise().sum();
    const Eigen::MatrixXd g1 = ((g2 * w2.transpose()).array() * (1.0 - cache.h1.array().square())).matrix();
    g.w1 = cache.input.transpose() * g1;
    g.b1 = g1.colwise().sum();
    return g;
}

Eigen::RowVectorXd refiner_input(const Eigen::RowVectorXd& audio_row, const KeypointsD& k_rec_noisy) {
    Eigen::RowVectorXd in(audio_row.size() + k_rec_noisy.size());
    in.head(audio_row.size()) = audio_row;
    in.tail(k_rec_noisy.size()) = Eigen::Map<const Eigen::RowVectorXd>(k_rec_noisy.data(), k_rec_noisy.size());
    return in;
}

KeypointsD add_keypoint_noise(const KeypointsD& k, const NoiseSpec& noise) {
    if (!(noise.sigma >= 0.0))
        throw ValueError("noise sigma must be non-negative");
    if (noise.sigma == 0.0)
        return k;
    Rng rng(noise.seed);
    KeypointsD out = k;
    for (Index i = 0; i < out.rows(); ++i)
        for (Index c = 0; c < 3; ++c)
            out(i, c) += rng.normal(0.0, noise.sigma);
    return out;
}

KeypointsD refine_from_rec(const Eigen::RowVectorXd& audio_row, const KeypointsD& k_rec, const NoiseSpec& noise,
                           const RefinerNet& net, const RegionMask& lip_mask) {
    if (lip_mask.empty())
        return k_rec;
    lip_mask.check_range(k_rec.rows());
    if (3 * lip_mask.size() != net.w3.cols())
        throw DimensionError("lip mask has " + std::to_string(lip_mask.size()) + " rows, refiner writes " +
                             std::to_string(net.w3.cols() / 3));
    const Eigen::RowVectorXd in = refiner_input(audio_row, add_keypoint_noise(k_rec, noise));
    const Eigen::MatrixXd y = net.forward(in);
    KeypointsD out = k_rec;
    Index k = 0;
    for (Index i : lip_mask.indices()) {
        out.row(i) += y.block<1, 3>(0, 3 * k);
        ++k;
    }
    return out;
}

KeypointsD refine_from_rec(const Eigen::RowVectorXd& audio_row, const KeypointsD& k_rec, const NoiseSpec& noise,
                           const ModelWeights& w, const RegionMask& lip_mask) {
    if (audio_row.size() != w.dims.d_audio)
        throw DimensionError("audio row width " + std::to_string(audio_row.size()) + ", weights expect " +
                             std::to_string(w.dims.d_audio));
    if (k_rec.rows() != w.dims.n_kp)
        throw DimensionError("keypoint count " + std::to_string(k_rec.rows()) + ", weights expect " +
                             std::to_string(w.dims.n_kp));
    return refine_from_rec(audio_row, k_rec, noise, RefinerNet::from_weights(w), lip_mask);
}

KeypointsD refine_lips(const Eigen::RowVectorXd& audio_row, const KeypointsD& canonical, const PoseD& pose,
                       const DeformationD& delta_pred, const NoiseSpec& noise, const ModelWeights& w,
                       const RegionMask& lip_mask) {
    return refine_from_rec(audio_row, compose_keypoints(canonical, pose, delta_pred), noise, w, lip_mask);
}

} // namespace kpanim
