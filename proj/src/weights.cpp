#include "kpanim/nn.hpp"

#include <cmath>

namespace kpanim {

void ModelDims::validate() const {
    const auto positive = [](Index v, const char* name) {
        if (v <= 0)
            throw ValueError(std::string("model dimension '") + name + "' must be positive");
    };
    positive(d_model, "d_model");
    positive(d_audio, "d_audio");
    positive(n_layers, "n_layers");
    positive(n_heads, "n_heads");
    positive(n_kp, "n_kp");
    positive(lip_size, "lip_size");
    positive(n_styles, "n_styles");
    positive(max_window, "max_window");
    positive(d_emotion, "d_emotion");
    positive(ff_width, "ff_width");
    positive(refiner_hidden, "refiner_hidden");
    if (d_model % n_heads != 0)
        throw ValueError("n_heads (" + std::to_string(n_heads) + ") must divide d_model (" + std::to_string(d_model) +
                         ")");
    if (lip_size > n_kp)
        throw ValueError("lip_size exceeds n_kp");
    if (!(noise_sigma >= 0.0) || !std::isfinite(noise_sigma))
        throw ValueError("noise_sigma must be non-negative");
}

void AudioFeatureSequence::validate() const {
    if (embeddings.rows() != rms.size())
        throw DimensionError("audio features: " + std::to_string(embeddings.rows()) + " embedding rows vs " +
                             std::to_string(rms.size()) + " rms values");
    if (!embeddings.allFinite())
        throw ValueError("audio features: non-finite embedding entry");
    if (!rms.allFinite() || (rms.size() > 0 && rms.minCoeff() < 0.0))
        throw ValueError("audio features: rms must be finite and non-negative");
}

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
    std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

namespace {

void add_decoder_shapes(std::map<std::string, TensorShape>& out, const std::string& p, const ModelDims& d,
                        Index cond_dim, bool with_style) {
    const Index dm = d.d_model;
    if (with_style)
        out[p + ".style"] = {d.n_styles, dm, dm};
    out[p + ".audio_w"] = {d.d_audio, dm, d.d_audio};
    out[p + ".audio_b"] = {1, dm, d.d_audio};
    out[p + ".token_w"] = {d.expr_dim() + cond_dim, dm, d.expr_dim() + cond_dim};
    out[p + ".token_b"] = {1, dm, d.expr_dim() + cond_dim};
    out[p + ".pos"] = {d.max_window, dm, dm};
    for (Index l = 0; l < d.n_layers; ++l) {
        const std::string lp = p + ".l" + std::to_string(l) + ".";
        for (const char* m : {"self_q", "self_k", "self_v", "self_o", "cross_q", "cross_k", "cross_v", "cross_o"})
            out[lp + m] = {dm, dm, dm};
        out[lp + "ff1"] = {dm, d.ff_width, dm};
        out[lp + "ff1_b"] = {1, d.ff_width, dm};
        out[lp + "ff2"] = {d.ff_width, dm, d.ff_width};
        out[lp + "ff2_b"] = {1, dm, d.ff_width};
    }
    out[p + ".out_w"] = {dm, d.expr_dim(), dm};
    out[p + ".out_b"] = {1, d.expr_dim(), dm};
}

} // namespace

std::map<std::string, TensorShape> expected_tensor_shapes(const ModelDims& d, Index n_categories) {
    std::map<std::string, TensorShape> out;
    add_decoder_shapes(out, "pred", d, 0, true);
    add_decoder_shapes(out, "cpred", d, d.d_emotion, false);
    const Index in = d.d_audio + d.expr_dim();
    const Index h = d.refiner_hidden;
    out["refiner.w1"] = {in, h, in};
    out["refiner.b1"] = {1, h, in};
    out["refiner.w2"] = {h, h, h};
    out["refiner.b2"] = {1, h, h};
    out["refiner.w3"] = {h, 3 * d.lip_size, h};
    out["refiner.b3"] = {1, 3 * d.lip_size, h};
    out["emotion.table"] = {n_categories, d.d_emotion, d.d_emotion};
    return out;
}

ModelWeights init_weights(std::uint64_t seed, const ModelDims& dims, std::vector<std::string> categories) {
    dims.validate();
    if (categories.empty())
        throw ValueError("at least one emotion category is required");
    ModelWeights w;
    w.dims = dims;
    w.categories = std::move(categories);
    Rng rng(seed);
    for (const auto& [name, shape] : expected_tensor_shapes(dims, static_cast<Index>(w.categories.size()))) {
        Eigen::MatrixXd m(shape.rows, shape.cols);
        if (name == "emotion.table") {
            for (Index r = 0; r < m.rows(); ++r) {
                if (w.categories[static_cast<std::size_t>(r)] == kNeutral) {
                    m.row(r).setZero();
                    continue;
                }
                Eigen::RowVectorXd v(m.cols());
                do {
                    for (Index c = 0; c < v.size(); ++c)
                        v(c) = rng.uniform(-1.0, 1.0);
                } while (v.norm() < 1e-3);
                m.row(r) = v / v.norm();
            }
        } else {
            const double bound = 1.0 / std::sqrt(static_cast<double>(shape.fan_in));
            for (Index r = 0; r < m.rows(); ++r)
                for (Index c = 0; c < m.cols(); ++c)
                    m(r, c) = rng.uniform(-bound, bound);
        }
        w.tensors.emplace(name, std::move(m));
    }
    return w;
}

const Eigen::MatrixXd& ModelWeights::at(const std::string& name) const {
    const auto it = tensors.find(name);
    if (it == tensors.end())
        throw ValueError("weights: missing tensor '" + name + "'");
    return it->second;
}

Eigen::MatrixXd& ModelWeights::at(const std::string& name) {
    const auto it = tensors.find(name);
    if (it == tensors.end())
        throw ValueError("weights: missing tensor '" + name + "'");
    return it->second;
}

LabelTable ModelWeights::label_table() const { return LabelTable{categories, at("emotion.table")}; }

void ModelWeights::validate() const {
    if (version != kWeightsFormatVersion)
        throw VersionError("unsupported weights version " + std::to_string(version));
    dims.validate();
    if (categories.empty())
        throw ValueError("weights: empty category list");
    const auto shapes = expected_tensor_shapes(dims, static_cast<Index>(categories.size()));
    if (shapes.size() != tensors.size()) {
        for (const auto& [name, _] : tensors)
            if (!shapes.count(name))
                throw FormatError("weights: unexpected tensor '" + name + "'");
    }
    for (const auto& [name, shape] : shapes) {
        const auto it = tensors.find(name);
        if (it == tensors.end())
            throw FormatError("weights: missing tensor '" + name + "'");
        if (it->second.rows() != shape.rows || it->second.cols() != shape.cols)
            throw FormatError("weights: tensor '" + name + "' is " + std::to_string(it->second.rows()) + "x" +
                              std::to_string(it->second.cols()) + ", dims require " + std::to_string(shape.rows) +
                              "x" + std::to_string(shape.cols));
        if (!it->second.allFinite())
            throw ValueError("weights: tensor '" + name + "' has non-finite entries");
    }
}

bool ModelWeights::operator==(const ModelWeights& o) const {
    if (version != o.version || !(dims == o.dims) || categories != o.categories || tensors.size() != o.tensors.size())
        return false;
    for (const auto& [name, m] : tensors) {
        const auto it = o.tensors.find(name);
        if (it == o.tensors.end() || it->second.rows() != m.rows() || it->second.cols() != m.cols() ||
            it->second != m)
            return false;
    }
    return true;
}

} // namespace kpanim
