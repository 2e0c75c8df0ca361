#pragma once

// Seeded random fixtures and conversions shared by the unit tests and the
// acceptance runner.

#include <cstdint>
#include <filesystem>
#include <unistd.h>
#include <memory>
#include <string>
#include <vector>

#include "kpanim/io.hpp"
#include "kpanim/pipeline.hpp"
#include "oracles.hpp"

namespace kpanim::testing {

inline KeypointsD random_keypoints(Rng& rng, Index n_kp, double scale = 1.0) {
    KeypointsD k(n_kp, 3);
    for (Index i = 0; i < n_kp; ++i)
        for (Index j = 0; j < 3; ++j)
            k(i, j) = rng.uniform(-scale, scale);
    return k;
}

inline DeformationD random_deformation(Rng& rng, Index n_kp, DeformationKind kind, double scale = 0.2) {
    return DeformationD(random_keypoints(rng, n_kp, scale), kind);
}

/// Lip-sync deformation that is zero off the lip rows.
inline DeformationD random_lip_deformation(Rng& rng, const RegionMask& lips, Index n_kp, double scale = 0.2) {
    DeformationD d = DeformationD::zero(n_kp, DeformationKind::LipSync);
    for (Index i : lips.indices())
        for (Index j = 0; j < 3; ++j)
            d.offsets(i, j) = rng.uniform(-scale, scale);
    return d;
}

inline Eigen::Vector3d random_unit3(Rng& rng) {
    Eigen::Vector3d v;
    do {
        v = Eigen::Vector3d(rng.normal(), rng.normal(), rng.normal());
    } while (v.norm() < 1e-6);
    return v.normalized();
}

inline PoseD random_pose(Rng& rng) {
    PoseD p;
    p.rotation = axis_angle<double>(random_unit3(rng), rng.uniform(-3.0, 3.0));
    p.translation = Row3<double>(rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1));
    p.scale = rng.uniform(0.5, 2.0);
    return p;
}

inline Eigen::VectorXd random_vector(Rng& rng, Index n) {
    Eigen::VectorXd v(n);
    for (Index i = 0; i < n; ++i)
        v(i) = rng.normal();
    return v;
}

inline RegionMask random_mask(Rng& rng, Index n_kp, const std::string& name = "m") {
    std::vector<Index> idx;
    for (Index i = 0; i < n_kp; ++i)
        if (rng.uniform() < 0.5)
            idx.push_back(i);
    return RegionMask(name, idx, n_kp);
}

inline AudioFeatureSequence random_audio(Rng& rng, Index frames, Index dim) {
    AudioFeatureSequence a;
    a.embeddings.resize(frames, dim);
    a.rms.resize(frames);
    for (Index t = 0; t < frames; ++t) {
        for (Index j = 0; j < dim; ++j)
            a.embeddings(t, j) = rng.normal();
        a.rms(t) = rng.uniform(0.05, 0.5);
    }
    return a;
}

inline oracle::Grid to_grid(const KeypointsD& k) {
    oracle::Grid g(static_cast<std::size_t>(k.rows()));
    for (Index i = 0; i < k.rows(); ++i)
        for (int j = 0; j < 3; ++j)
            g[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] = k(i, j);
    return g;
}

inline oracle::Mat3 to_mat3(const Rotation3<double>& r) {
    oracle::Mat3 m{};
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j)
            m[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] = r(i, j);
    return m;
}

inline std::vector<double> flat(const KeypointsD& k) {
    return std::vector<double>(k.data(), k.data() + k.size());
}

/// max |a - b| / max(1, max |b|)
inline double rel_diff(const KeypointsD& a, const KeypointsD& b) {
    const double scale = std::max(1.0, b.cwiseAbs().maxCoeff());
    return (a - b).cwiseAbs().maxCoeff() / scale;
}

inline double rel_diff(const oracle::Grid& a, const KeypointsD& b) {
    double worst = 0.0;
    for (Index i = 0; i < b.rows(); ++i)
        for (int j = 0; j < 3; ++j)
            worst = std::max(worst, std::abs(a[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] - b(i, j)));
    return worst / std::max(1.0, b.cwiseAbs().maxCoeff());
}

/// Small weights so the predictor tests stay fast.
inline ModelDims small_dims() {
    ModelDims d;
    d.d_model = 16;
    d.d_audio = 8;
    d.n_heads = 2;
    d.n_layers = 2;
    d.ff_width = 32;
    d.refiner_hidden = 16;
    d.max_window = kDefaultWindow;
    d.d_emotion = 4;
    return d;
}

/// A complete inference setup with deterministic random assets.
inline InferenceInputs make_inputs(std::uint64_t seed, Index frames, const ModelDims& dims = small_dims()) {
    Rng rng(seed);
    InferenceInputs in;
    in.identity = random_keypoints(rng, dims.n_kp, 0.5);
    in.poses = builtin_pose_template("nod");
    in.audio = random_audio(rng, frames, dims.d_audio);
    in.style = StyleCode{1, dims.n_styles};
    in.weights = std::make_shared<const ModelWeights>(init_weights(mix_seed(seed, 9), dims));
    for (const char* name : {"duck-u", "bee-ee"})
        in.phonemes.vectors.push_back(PhonemeVectorD::from_direction(name, random_vector(rng, 3 * dims.lip_size)));
    in.config.noise_seed = mix_seed(seed, 5);
    return in;
}

/// Per-test scratch directory, removed on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& tag) {
        path_ = std::filesystem::temp_directory_path() /
                ("kpanim-" + tag + "-" + std::to_string(::getpid()) + "-" +
                 std::to_string(reinterpret_cast<std::uintptr_t>(this)));
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;
    const std::filesystem::path& path() const { return path_; }
    std::string file(const std::string& name) const { return (path_ / name).string(); }

private:
    std::filesystem::path path_;
};

} // namespace kpanim::testing
