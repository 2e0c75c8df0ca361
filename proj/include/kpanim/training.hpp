#pragma once

// Desk-scale lip refiner training: a synthetic dataset whose lip targets are
// a hidden linear function of the audio, the windowed refine objective with
// its analytic gradient, and an Adam loop.

#include <cstdint>
#include <iosfwd>
#include <span>
#include <vector>

#include "kpanim/losses.hpp"
#include "kpanim/nn.hpp"

namespace kpanim {

/// One 5-frame training window.
struct RefinerSample {
    Eigen::MatrixXd audio; // 5 x d_audio
    std::vector<KeypointsD> k_rec;
    std::vector<KeypointsD> k_gt;
};

struct RefinerDataset {
    std::vector<RefinerSample> windows;
    RegionMask lip_mask;
};

struct SyntheticDatasetConfig {
    Index n_windows = 256;
    /// Standard deviation of the Gaussian noise added to the lip targets.
    double label_noise = 0.01;
    /// Typical magnitude of a lip target offset produced by the hidden map.
    double lip_gain = 0.05;
    Index n_identities = 8;
    std::uint64_t seed = 0;
};

RefinerDataset make_synthetic_refiner_dataset(const ModelDims& dims, const RegionMask& lip_mask,
                                              const SyntheticDatasetConfig& cfg);

inline constexpr Index kSyncEmbeddingDim = 32;

/// Toy S_v / S_a: seeded linear maps of the flattened 5-frame windows.
struct SyncProviders {
    LinearEmbedding motion;
    LinearEmbedding audio;

    static SyncProviders seeded(const ModelDims& dims, std::uint64_t seed, Index embed_dim = kSyncEmbeddingDim);
};

/// Mean L_refine over a set of windows as a function of the refiner parameters.
class RefinerObjective {
public:
    RefinerObjective(const RefinerDataset& data, const SyncProviders& providers, LossWeights weights,
                     NoiseSpec noise);

    /// Noise for window w, frame t is seeded from (noise.seed, noise_stream, w, t).
    double evaluate(const RefinerNet& net, std::span<const std::size_t> windows, std::uint64_t noise_stream,
                    RefinerNet* grad = nullptr) const;
    double evaluate_all(const RefinerNet& net, std::uint64_t noise_stream) const;

    const RefinerDataset& data() const { return data_; }

private:
    const RefinerDataset& data_;
    const SyncProviders& providers_;
    LossWeights weights_;
    NoiseSpec noise_;
    std::vector<Eigen::VectorXd> audio_embeddings_;
};

struct TrainConfig {
    Index steps = 500;
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    Index batch = 32;
    std::uint64_t seed = 0;
    LossWeights loss;
};

struct TrainResult {
    ModelWeights weights;
    /// Minibatch L_refine before each update.
    std::vector<double> trace;
    /// Full-dataset L_refine before the first and after the last update.
    double initial_loss = 0.0;
    double final_loss = 0.0;
};

class TrainingAborted : public NumericError {
public:
    TrainingAborted(const std::string& what, std::vector<double> trace)
        : NumericError(what), trace_(std::move(trace)) {}
    const std::vector<double>& trace() const { return trace_; }

private:
    std::vector<double> trace_;
};

TrainResult train_refiner(const RefinerDataset& data, const ModelWeights& w0, const TrainConfig& cfg,
                          const SyncProviders& providers);

/// Gradient check of the refiner objective at the weights init_weights(seed, dims) produces.
GradCheckReport refiner_gradcheck(std::uint64_t seed, const ModelDims& dims, const RegionMask& lip_mask,
                                  double h = 1e-5, Index n_windows = 2);

/// "step,value" rows, one per trace entry.
void write_loss_trace(std::ostream& out, const std::vector<double>& trace);

} // namespace kpanim
