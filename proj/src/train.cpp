#include "kpanim/training.hpp"

#include <cmath>
#include <cstdio>
#include <numeric>
#include <ostream>

namespace kpanim {

RefinerDataset make_synthetic_refiner_dataset(const ModelDims& dims, const RegionMask& lip_mask,
                                              const SyntheticDatasetConfig& cfg) {
    dims.validate();
    if (cfg.n_windows <= 0 || cfg.n_identities <= 0)
        throw ValueError("synthetic dataset needs a positive window and identity count");
    lip_mask.check_range(dims.n_kp);
    Rng rng(cfg.seed);
    const Index lip_dim = 3 * lip_mask.size();
    const Eigen::MatrixXd hidden = Eigen::MatrixXd::NullaryExpr(dims.d_audio, lip_dim, [&] {
        return rng.normal(0.0, cfg.lip_gain / std::sqrt(static_cast<double>(dims.d_audio)));
    });

    std::vector<KeypointsD> identities;
    for (Index i = 0; i < cfg.n_identities; ++i)
        identities.push_back(KeypointsD::NullaryExpr(dims.n_kp, 3, [&] { return rng.uniform(-0.5, 0.5); }));

    RefinerDataset data;
    data.lip_mask = lip_mask;
    data.windows.reserve(static_cast<std::size_t>(cfg.n_windows));
    for (Index w = 0; w < cfg.n_windows; ++w) {
        PoseD pose;
        const Eigen::Vector3d axis(rng.normal(), rng.normal(), rng.normal());
        pose.rotation = axis_angle<double>(axis, rng.uniform(-0.2, 0.2));
        pose.translation = Row3<double>(rng.uniform(-0.05, 0.05), rng.uniform(-0.05, 0.05), rng.uniform(-0.05, 0.05));
        pose.scale = rng.uniform(0.9, 1.1);
        const KeypointsD& canonical = identities[static_cast<std::size_t>(w % cfg.n_identities)];

        RefinerSample s;
        s.audio.resize(kSyncWindowFrames, dims.d_audio);
        for (Index t = 0; t < kSyncWindowFrames; ++t) {
            for (Index c = 0; c < dims.d_audio; ++c)
                s.audio(t, c) = rng.normal();
            const DeformationD delta(KeypointsD::NullaryExpr(dims.n_kp, 3, [&] { return rng.normal(0.0, 0.02); }),
                                     DeformationKind::Raw);
            KeypointsD rec = compose_keypoints(canonical, pose, delta);
            KeypointsD gt = rec;
            const Eigen::RowVectorXd target = s.audio.row(t) * hidden;
            Index k = 0;
            for (Index i : lip_mask.indices()) {
                for (Index c = 0; c < 3; ++c)
                    gt(i, c) += target(3 * k + c) + rng.normal(0.0, cfg.label_noise);
                ++k;
            }
            s.k_rec.push_back(std::move(rec));
            s.k_gt.push_back(std::move(gt));
        }
        data.windows.push_back(std::move(s));
    }
    return data;
}

SyncProviders SyncProviders::seeded(const ModelDims& dims, std::uint64_t seed, Index embed_dim) {
    return SyncProviders{LinearEmbedding::seeded(kSyncWindowFrames * dims.expr_dim(), embed_dim, mix_seed(seed, 1)),
                         LinearEmbedding::seeded(kSyncWindowFrames * dims.d_audio, embed_dim, mix_seed(seed, 2))};
}

RefinerObjective::RefinerObjective(const RefinerDataset& data, const SyncProviders& providers, LossWeights weights,
                                   NoiseSpec noise)
    : data_(data), providers_(providers), weights_(weights), noise_(noise) {
    weights_.validate();
    if (data_.windows.empty())
        throw ValueError("refiner dataset is empty");
    audio_embeddings_.reserve(data_.windows.size());
    for (const auto& s : data_.windows) {
        SyncWindow win{s.k_rec, s.audio};
        audio_embeddings_.push_back(providers_.audio.embed(win.flat_audio()));
    }
}

double RefinerObjective::evaluate(const RefinerNet& net, std::span<const std::size_t> windows,
                                  std::uint64_t noise_stream, RefinerNet* grad) const {
    if (windows.empty())
        throw ValueError("refiner objective needs at least one window");
    const RegionMask& lips = data_.lip_mask;
    const Index frames = kSyncWindowFrames;
    const Index n_rows = static_cast<Index>(windows.size()) * frames;
    const Index n_kp = data_.windows.front().k_rec.front().rows();

    Eigen::MatrixXd inputs(n_rows, net.w1.rows());
    for (std::size_t b = 0; b < windows.size(); ++b) {
        const auto& s = data_.windows.at(windows[b]);
        for (Index t = 0; t < frames; ++t) {
            const NoiseSpec frame_noise{noise_.sigma,
                                        mix_seed(mix_seed(noise_.seed, noise_stream), windows[b] * frames + t)};
            inputs.row(static_cast<Index>(b) * frames + t) =
                refiner_input(s.audio.row(t), add_keypoint_noise(s.k_rec[static_cast<std::size_t>(t)], frame_noise));
        }
    }
    RefinerNet::Cache cache;
    const Eigen::MatrixXd y = net.forward(inputs, grad ? &cache : nullptr);
    Eigen::MatrixXd grad_y = Eigen::MatrixXd::Zero(y.rows(), y.cols());

    const double inv_batch = 1.0 / static_cast<double>(windows.size());
    double total = 0.0;
    std::vector<KeypointsD> refined(static_cast<std::size_t>(frames));
    for (std::size_t b = 0; b < windows.size(); ++b) {
        const auto& s = data_.windows[windows[b]];
        for (Index t = 0; t < frames; ++t) {
            KeypointsD k = s.k_rec[static_cast<std::size_t>(t)];
            Index j = 0;
            for (Index i : lips.indices()) {
                k.row(i) += y.block<1, 3>(static_cast<Index>(b) * frames + t, 3 * j);
                ++j;
            }
            refined[static_cast<std::size_t>(t)] = std::move(k);
        }
        const SyncWindow win{refined, s.audio};
        Eigen::VectorXd grad_ev;
        const Eigen::VectorXd flat = win.flat_motion();
        const double sync = negative_cosine(providers_.motion.embed(flat), audio_embeddings_[windows[b]],
                                            grad ? &grad_ev : nullptr);
        const double kp = loss_kp(refined, s.k_gt);
        const double reg = loss_reg(refined, s.k_rec);
        total += loss_refine(sync, kp, reg, weights_);
        if (!grad)
            continue;

        const Eigen::VectorXd grad_motion = providers_.motion.pullback(flat, grad_ev);
        for (Index t = 0; t < frames; ++t) {
            const auto ts = static_cast<std::size_t>(t);
            const KeypointsD d_kp = refined[ts] - s.k_gt[ts];
            const KeypointsD d_reg = refined[ts] - s.k_rec[ts];
            const double n_kp_norm = d_kp.norm();
            const double n_reg_norm = d_reg.norm();
            Index j = 0;
            for (Index i : lips.indices()) {
                Row3<double> g = grad_motion.segment<3>(t * 3 * n_kp + 3 * i).transpose();
                if (n_kp_norm > 0.0)
                    g += weights_.lambda_kp * d_kp.row(i) / n_kp_norm;
                if (n_reg_norm > 0.0)
                    g += weights_.lambda_reg * d_reg.row(i) / n_reg_norm;
                grad_y.block<1, 3>(static_cast<Index>(b) * frames + t, 3 * j) = g * inv_batch;
                ++j;
            }
        }
    }
    if (grad)
        *grad = net.backward(cache, grad_y);
    return total * inv_batch;
}

double RefinerObjective::evaluate_all(const RefinerNet& net, std::uint64_t noise_stream) const {
    std::vector<std::size_t> all(data_.windows.size());
    std::iota(all.begin(), all.end(), std::size_t{0});
    return evaluate(net, all, noise_stream);
}

namespace {

constexpr std::uint64_t kEvalNoiseStream = 0xe7a1ULL;

} // namespace

TrainResult train_refiner(const RefinerDataset& data, const ModelWeights& w0, const TrainConfig& cfg,
                          const SyncProviders& providers) {
    if (data.windows.empty())
        throw ValueError("train_refiner: dataset is empty");
    if (cfg.steps < 0 || cfg.batch <= 0 || !(cfg.lr >= 0.0))
        throw ValueError("train_refiner: steps >= 0, batch > 0 and lr >= 0 required");
    const RefinerObjective objective(data, providers, cfg.loss, NoiseSpec{w0.dims.noise_sigma, cfg.seed});

    RefinerNet net = RefinerNet::from_weights(w0);
    Eigen::VectorXd params = net.flatten();
    Eigen::VectorXd m = Eigen::VectorXd::Zero(params.size());
    Eigen::VectorXd v = Eigen::VectorXd::Zero(params.size());

    TrainResult result;
    result.initial_loss = objective.evaluate_all(net, kEvalNoiseStream);
    result.trace.reserve(static_cast<std::size_t>(cfg.steps));

    std::vector<std::size_t> batch(static_cast<std::size_t>(cfg.batch));
    for (Index step = 0; step < cfg.steps; ++step) {
        Rng pick(mix_seed(cfg.seed, static_cast<std::uint64_t>(step) + 1));
        for (auto& idx : batch)
            idx = static_cast<std::size_t>(pick.next() % data.windows.size());
        RefinerNet grad;
        const double loss = objective.evaluate(net, batch, static_cast<std::uint64_t>(step), &grad);
        result.trace.push_back(loss);
        if (!std::isfinite(loss))
            throw TrainingAborted("train_refiner: non-finite loss at step " + std::to_string(step), result.trace);

        const Eigen::VectorXd g = grad.flatten();
        m = cfg.beta1 * m + (1.0 - cfg.beta1) * g;
        v = cfg.beta2 * v + (1.0 - cfg.beta2) * g.cwiseProduct(g);
        const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step + 1));
        const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step + 1));
        params.array() -= cfg.lr * (m.array() / bc1) / ((v.array() / bc2).sqrt() + cfg.eps);
        net.unflatten(params);
    }
    result.final_loss = objective.evaluate_all(net, kEvalNoiseStream);
    result.weights = w0;
    net.store(result.weights);
    return result;
}

GradCheckReport refiner_gradcheck(std::uint64_t seed, const ModelDims& dims, const RegionMask& lip_mask, double h,
                                  Index n_windows) {
    const ModelWeights w = init_weights(seed, dims);
    SyntheticDatasetConfig dcfg;
    dcfg.n_windows = n_windows;
    dcfg.seed = mix_seed(seed, 11);
    const RefinerDataset data = make_synthetic_refiner_dataset(dims, lip_mask, dcfg);
    const SyncProviders providers = SyncProviders::seeded(dims, mix_seed(seed, 12));
    const RefinerObjective objective(data, providers, LossWeights{}, NoiseSpec{dims.noise_sigma, mix_seed(seed, 13)});
    std::vector<std::size_t> all(data.windows.size());
    std::iota(all.begin(), all.end(), std::size_t{0});

    RefinerNet net = RefinerNet::from_weights(w);
    const Objective f{[&](const Eigen::VectorXd& p) {
                          RefinerNet n = net;
                          n.unflatten(p);
                          return objective.evaluate(n, all, 0);
                      },
                      [&](const Eigen::VectorXd& p) {
                          RefinerNet n = net;
                          n.unflatten(p);
                          RefinerNet g;
                          objective.evaluate(n, all, 0, &g);
                          return Eigen::VectorXd(g.flatten());
                      }};
    return grad_check(f, net.flatten(), h);
}

void write_loss_trace(std::ostream& out, const std::vector<double>& trace) {
    char buf[64];
    out << "step,value\n";
    for (std::size_t i = 0; i < trace.size(); ++i) {
        std::snprintf(buf, sizeof buf, "%.17g", trace[i]);
        out << i << ',' << buf << '\n';
    }
}

} // namespace kpanim
