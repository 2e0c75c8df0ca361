#include "kpanim/nn.hpp"

#include <cmath>

#include "kpanim/windowing.hpp"

namespace kpanim {

namespace {

struct LayerView {
    const Eigen::MatrixXd *self_q, *self_k, *self_v, *self_o;
    const Eigen::MatrixXd *cross_q, *cross_k, *cross_v, *cross_o;
    const Eigen::MatrixXd *ff1, *ff1_b, *ff2, *ff2_b;
};

struct DecoderView {
    Index n_heads = 1;
    Index expr_dim = 0;
    const Eigen::MatrixXd *audio_w, *audio_b, *token_w, *token_b, *pos, *out_w, *out_b;
    std::vector<LayerView> layers;

    DecoderView(const ModelWeights& w, const std::string& p) : n_heads(w.dims.n_heads), expr_dim(w.dims.expr_dim()) {
        audio_w = &w.at(p + ".audio_w");
        audio_b = &w.at(p + ".audio_b");
        token_w = &w.at(p + ".token_w");
        token_b = &w.at(p + ".token_b");
        pos = &w.at(p + ".pos");
        out_w = &w.at(p + ".out_w");
        out_b = &w.at(p + ".out_b");
        for (Index l = 0; l < w.dims.n_layers; ++l) {
            const std::string lp = p + ".l" + std::to_string(l) + ".";
            layers.push_back({&w.at(lp + "self_q"), &w.at(lp + "self_k"), &w.at(lp + "self_v"), &w.at(lp + "self_o"),
                              &w.at(lp + "cross_q"), &w.at(lp + "cross_k"), &w.at(lp + "cross_v"),
                              &w.at(lp + "cross_o"), &w.at(lp + "ff1"), &w.at(lp + "ff1_b"), &w.at(lp + "ff2"),
                              &w.at(lp + "ff2_b")});
        }
    }
};

// Multi-head scaled dot-product attention of one query against the first n rows of keys/values.
Eigen::RowVectorXd attend(const Eigen::RowVectorXd& q, const Eigen::MatrixXd& keys, const Eigen::MatrixXd& values,
                          Index n, Index n_heads) {
    const Index dh = q.size() / n_heads;
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
    Eigen::RowVectorXd out(q.size());
    for (Index h = 0; h < n_heads; ++h) {
        const auto k = keys.topRows(n).middleCols(h * dh, dh);
        Eigen::VectorXd scores = (k * q.segment(h * dh, dh).transpose()) * inv_sqrt;
        scores.array() -= scores.maxCoeff();
        scores = scores.array().exp();
        scores /= scores.sum();
        out.segment(h * dh, dh) = scores.transpose() * values.topRows(n).middleCols(h * dh, dh);
    }
    return out;
}

// One autoregressive window. Frame j sees audio rows [0, j] and its own previous outputs.
std::vector<DeformationD> run_window(const DecoderView& dec, const Eigen::MatrixXd& audio_rows,
                                     const Eigen::RowVectorXd& style_row, const Eigen::RowVectorXd& condition,
                                     Index n_kp) {
    const Index len = audio_rows.rows();
    const Index dm = dec.audio_w->cols();
    Eigen::MatrixXd memory = audio_rows * *dec.audio_w;
    memory.rowwise() += dec.audio_b->row(0);

    std::vector<Eigen::MatrixXd> cross_k, cross_v, self_k, self_v;
    for (const auto& layer : dec.layers) {
        cross_k.push_back(memory * *layer.cross_k);
        cross_v.push_back(memory * *layer.cross_v);
        self_k.emplace_back(len, dm);
        self_v.emplace_back(len, dm);
    }

    std::vector<DeformationD> out;
    out.reserve(static_cast<std::size_t>(len));
    Eigen::RowVectorXd token(dec.expr_dim + condition.size());
    token.setZero();
    token.tail(condition.size()) = condition;
    for (Index j = 0; j < len; ++j) {
        Eigen::RowVectorXd x = token * *dec.token_w + dec.token_b->row(0) + dec.pos->row(j);
        if (style_row.size() > 0)
            x += style_row;
        for (std::size_t l = 0; l < dec.layers.size(); ++l) {
            const auto& layer = dec.layers[l];
            const Eigen::RowVectorXd q = x * *layer.self_q;
            self_k[l].row(j) = x * *layer.self_k;
            self_v[l].row(j) = x * *layer.self_v;
            x += attend(q, self_k[l], self_v[l], j + 1, dec.n_heads) * *layer.self_o;
            const Eigen::RowVectorXd cq = x * *layer.cross_q;
            x += attend(cq, cross_k[l], cross_v[l], j + 1, dec.n_heads) * *layer.cross_o;
            const Eigen::RowVectorXd hidden = (x * *layer.ff1 + layer.ff1_b->row(0)).cwiseMax(0.0);
            x += hidden * *layer.ff2 + layer.ff2_b->row(0);
        }
        const Eigen::RowVectorXd y = x * *dec.out_w + dec.out_b->row(0);
        out.emplace_back(Eigen::Map<const KeypointsD>(y.data(), n_kp, 3), DeformationKind::Raw);
        token.head(dec.expr_dim) = y;
    }
    return out;
}

std::vector<DeformationD> predict_windowed(const DecoderView& dec, const AudioFeatureSequence& audio,
                                           const ModelWeights& w, const Eigen::RowVectorXd& style_row,
                                           const Eigen::RowVectorXd& condition, Index window, Index overlap) {
    audio.validate();
    const Index t_total = audio.frames();
    if (t_total < 1)
        throw ValueError("predictor needs at least one audio frame");
    if (audio.dim() != w.dims.d_audio)
        throw DimensionError("audio feature width " + std::to_string(audio.dim()) + " does not match weights d_audio " +
                             std::to_string(w.dims.d_audio));
    if (window < 1 || window > w.dims.max_window)
        throw ValueError("window " + std::to_string(window) + " must lie in [1, " + std::to_string(w.dims.max_window) +
                         "]");
    if (overlap < 0 || overlap >= window)
        throw ValueError("overlap must lie in [0, window)");

    const Index n_kp = w.dims.n_kp;
    if (t_total <= window)
        return run_window(dec, audio.embeddings, style_row, condition, n_kp);

    // Pad with the final audio row so every window is full; padded frames only
    // influence outputs past the end, which are discarded.
    const Index stride = window - overlap;
    const Index n_windows = 1 + (t_total - window + stride - 1) / stride;
    const Index padded = blended_length(n_windows, window, overlap);
    Eigen::MatrixXd rows(padded, audio.dim());
    rows.topRows(t_total) = audio.embeddings;
    for (Index r = t_total; r < padded; ++r)
        rows.row(r) = audio.embeddings.row(t_total - 1);

    std::vector<std::vector<DeformationD>> windows;
    windows.reserve(static_cast<std::size_t>(n_windows));
    for (Index k = 0; k < n_windows; ++k)
        windows.push_back(run_window(dec, rows.middleRows(k * stride, window), style_row, condition, n_kp));
    auto out = blend_windows(windows, overlap);
    out.resize(static_cast<std::size_t>(t_total));
    for (auto& d : out)
        d.kind = DeformationKind::Raw;
    return out;
}

} // namespace

std::vector<DeformationD> predict_expressions(const AudioFeatureSequence& audio, const StyleCode& style,
                                              const ModelWeights& w, Index window, Index overlap) {
    if (style.index < 0 || style.index >= w.dims.n_styles)
        throw ValueError("style index " + std::to_string(style.index) + " out of range [0, " +
                         std::to_string(w.dims.n_styles) + ")");
    const DecoderView dec(w, "pred");
    const Eigen::RowVectorXd style_row = w.at("pred.style").row(style.index);
    return predict_windowed(dec, audio, w, style_row, Eigen::RowVectorXd(), window, overlap);
}

std::vector<DeformationD> combined_predict(const EmotionCondition& condition, const AudioFeatureSequence& audio,
                                           const ModelWeights& w, Index window, Index overlap) {
    if (condition.vector.size() != w.dims.d_emotion)
        throw DimensionError("emotion condition has length " + std::to_string(condition.vector.size()) +
                             ", weights expect " + std::to_string(w.dims.d_emotion));
    if (!condition.vector.allFinite())
        throw ValueError("emotion condition has non-finite entries");
    const DecoderView dec(w, "cpred");
    return predict_windowed(dec, audio, w, Eigen::RowVectorXd(), condition.vector.transpose(), window, overlap);
}

} // namespace kpanim
