#pragma once

// Toy-scale neural predictors: a style-conditioned autoregressive attention
// decoder predicting expression deformations from audio features, the same
// decoder with an emotion condition (combined predictor), and the lip
// refiner MLP. All parameters live in ModelWeights as named dense tensors.

#include <Eigen/Dense>

#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "kpanim/emc.hpp"
#include "kpanim/keypoints.hpp"

namespace kpanim {

using KeypointsD = KeypointSet<double>;
using DeformationD = Deformation<double>;
using PoseD = RigidPose<double>;

inline constexpr int kWeightsFormatVersion = 1;
inline constexpr Index kDefaultWindow = 50;

struct ModelDims {
    Index d_model = 64;
    Index d_audio = 64;
    Index n_layers = 2;
    Index n_heads = 4;
    Index n_kp = kDefaultKeypointCount;
    Index lip_size = 4;
    double noise_sigma = 1e-3;
    Index n_styles = 8;
    Index max_window = kDefaultWindow;
    Index d_emotion = 16;
    Index ff_width = 256;
    Index refiner_hidden = 128;

    void validate() const;
    Index expr_dim() const { return 3 * n_kp; }
    bool operator==(const ModelDims&) const = default;
};

/// Per-frame audio embeddings (T x d_audio) and RMS amplitudes, 25 fps.
struct AudioFeatureSequence {
    Eigen::MatrixXd embeddings;
    Eigen::VectorXd rms;

    Index frames() const { return embeddings.rows(); }
    Index dim() const { return embeddings.cols(); }
    void validate() const;
    bool operator==(const AudioFeatureSequence& o) const {
        return embeddings.rows() == o.embeddings.rows() && embeddings.cols() == o.embeddings.cols() &&
               embeddings == o.embeddings && rms.size() == o.rms.size() && rms == o.rms;
    }
};

struct StyleCode {
    Index index = 0;
    Index n_styles = 1;
    void validate() const {
        if (n_styles <= 0 || index < 0 || index >= n_styles)
            throw ValueError("style index " + std::to_string(index) + " out of range [0, " + std::to_string(n_styles) +
                             ")");
    }
};

struct NoiseSpec {
    double sigma = 1e-3;
    std::uint64_t seed = 0;
};

struct ModelWeights {
    int version = kWeightsFormatVersion;
    ModelDims dims;
    std::vector<std::string> categories;
    std::map<std::string, Eigen::MatrixXd> tensors;

    const Eigen::MatrixXd& at(const std::string& name) const;
    Eigen::MatrixXd& at(const std::string& name);
    LabelTable label_table() const;
    /// Checks names, shapes and finiteness against dims.
    void validate() const;
    bool operator==(const ModelWeights& o) const;
};

struct TensorShape {
    Index rows = 0;
    Index cols = 0;
    Index fan_in = 1;
};

/// Name -> shape of every tensor a weight set with these dims must hold.
std::map<std::string, TensorShape> expected_tensor_shapes(const ModelDims& dims, Index n_categories);

ModelWeights init_weights(std::uint64_t seed, const ModelDims& dims,
                          std::vector<std::string> categories = default_emotion_categories());

/// Expression deformations for every audio frame. Windows of length `window`
/// advance by window - overlap frames and are crossfaded over the shared part.
std::vector<DeformationD> predict_expressions(const AudioFeatureSequence& audio, const StyleCode& style,
                                              const ModelWeights& w, Index window = kDefaultWindow,
                                              Index overlap = 0);

/// Emotion-conditioned predictor; a zero condition vector encodes 'neutral'.
std::vector<DeformationD> combined_predict(const EmotionCondition& condition, const AudioFeatureSequence& audio,
                                           const ModelWeights& w, Index window = kDefaultWindow, Index overlap = 0);

/// Lip refiner MLP parameters: in -> hidden (tanh) -> hidden (tanh) -> 3 * lip_size.
struct RefinerNet {
    Eigen::MatrixXd w1, b1, w2, b2, w3, b3;

    static RefinerNet from_weights(const ModelWeights& w);
    void store(ModelWeights& w) const;

    Index num_params() const;
    Eigen::VectorXd flatten() const;
    void unflatten(const Eigen::VectorXd& p);

    struct Cache {
        Eigen::MatrixXd input, h1, h2;
    };
    /// Batched forward: rows of `input` are samples.
    Eigen::MatrixXd forward(const Eigen::MatrixXd& input, Cache* cache = nullptr) const;
    /// Gradient of sum(grad_out .* forward(input)) w.r.t. every parameter.
    RefinerNet backward(const Cache& cache, const Eigen::MatrixXd& grad_out) const;
};

/// Refiner input row for one frame: [audio row, flattened (K_rec + z)].
Eigen::RowVectorXd refiner_input(const Eigen::RowVectorXd& audio_row, const KeypointsD& k_rec_noisy);

/// Gaussian perturbation of all keypoints, drawn from the seeded generator.
KeypointsD add_keypoint_noise(const KeypointsD& k, const NoiseSpec& noise);

/// K_refine from an already recomposed K_rec. Rows outside the mask are K_rec bit for bit.
KeypointsD refine_from_rec(const Eigen::RowVectorXd& audio_row, const KeypointsD& k_rec, const NoiseSpec& noise,
                           const ModelWeights& w, const RegionMask& lip_mask);
KeypointsD refine_from_rec(const Eigen::RowVectorXd& audio_row, const KeypointsD& k_rec, const NoiseSpec& noise,
                           const RefinerNet& net, const RegionMask& lip_mask);

/// K_rec = compose(canonical, pose, delta_pred), then refine its lip rows.
KeypointsD refine_lips(const Eigen::RowVectorXd& audio_row, const KeypointsD& canonical, const PoseD& pose,
                       const DeformationD& delta_pred, const NoiseSpec& noise, const ModelWeights& w,
                       const RegionMask& lip_mask);

/// splitmix64 finalizer; derives independent per-frame seeds.
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream);

/// Generator with a portable uniform and libstdc++'s normal distribution.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
    double normal(double mean = 0.0, double stddev = 1.0) { return mean + stddev * normal_(engine_); }
    std::uint64_t next() { return engine_(); }

private:
    std::mt19937_64 engine_;
    std::normal_distribution<double> normal_{0.0, 1.0};
};

} // namespace kpanim
