#include <doctest.h>

#include "properties.hpp"
#include "support.hpp"

using namespace kpanim;
using namespace kpanim::testing;

TEST_SUITE("neural_predictors") {

TEST_CASE("init_weights is deterministic and seed dependent") {
    const ModelDims dims = small_dims();
    const auto a = init_weights(3, dims);
    const auto b = init_weights(3, dims);
    CHECK(a == b);
    CHECK(save_weights(a) == save_weights(b));
    const auto c = init_weights(4, dims);
    bool differs = false;
    for (const auto& [name, t] : a.tensors)
        differs = differs || !(t == c.at(name));
    CHECK(differs);
}

TEST_CASE("init_weights draws within the fan-in bound") {
    const ModelDims dims = small_dims();
    const auto w = init_weights(8, dims);
    const auto shapes = expected_tensor_shapes(dims, static_cast<Index>(w.categories.size()));
    CHECK(shapes.size() == w.tensors.size());
    for (const auto& [name, shape] : shapes) {
        const auto& t = w.at(name);
        INFO(name);
        CHECK(t.rows() == shape.rows);
        CHECK(t.cols() == shape.cols);
        if (name == "emotion.table")
            continue;
        const double bound = 1.0 / std::sqrt(static_cast<double>(shape.fan_in));
        CHECK(t.cwiseAbs().maxCoeff() <= bound);
    }
    const LabelTable table = w.label_table();
    for (Index r = 0; r < table.rows.rows(); ++r) {
        if (table.categories[static_cast<std::size_t>(r)] == kNeutral)
            CHECK(table.rows.row(r).isZero(0.0));
        else
            CHECK(std::abs(table.rows.row(r).norm() - 1.0) <= 1e-12);
    }
}

TEST_CASE("invalid dims are rejected") {
    ModelDims d = small_dims();
    d.n_heads = 3;
    CHECK_THROWS_AS(init_weights(0, d), ValueError);
    d = small_dims();
    d.d_audio = 0;
    CHECK_THROWS_AS(init_weights(0, d), ValueError);
    d = small_dims();
    d.lip_size = d.n_kp + 1;
    CHECK_THROWS_AS(init_weights(0, d), ValueError);
}

TEST_CASE("predict_expressions shape, determinism and errors") {
    const ModelDims dims = small_dims();
    const auto w = init_weights(1, dims);
    Rng rng(2);
    const auto audio = random_audio(rng, 10, dims.d_audio);
    const StyleCode style{2, dims.n_styles};
    const auto a = predict_expressions(audio, style, w);
    REQUIRE(a.size() == 10);
    for (const auto& d : a) {
        CHECK(d.rows() == dims.n_kp);
        CHECK(d.kind == DeformationKind::Raw);
        CHECK(d.offsets.allFinite());
    }
    const auto b = predict_expressions(audio, style, w);
    for (std::size_t t = 0; t < a.size(); ++t)
        CHECK(a[t] == b[t]);
    CHECK_THROWS_AS(predict_expressions(audio, StyleCode{dims.n_styles, dims.n_styles}, w), ValueError);
    CHECK_THROWS_AS(predict_expressions(random_audio(rng, 4, dims.d_audio + 1), style, w), DimensionError);
    CHECK_THROWS_AS(predict_expressions(random_audio(rng, 4, dims.d_audio), style, w, 0), ValueError);
}

TEST_CASE("long audio is predicted in overlapping windows") {
    const ModelDims dims = small_dims();
    const auto w = init_weights(5, dims);
    Rng rng(6);
    const auto audio = random_audio(rng, 137, dims.d_audio);
    const auto out = predict_expressions(audio, StyleCode{0, dims.n_styles}, w, 50, 10);
    CHECK(out.size() == 137);
    // The first window is untouched by later audio.
    const auto head = predict_expressions(AudioFeatureSequence{audio.embeddings.topRows(40), audio.rms.head(40)},
                                          StyleCode{0, dims.n_styles}, w, 50, 10);
    for (std::size_t t = 0; t < 40; ++t)
        CHECK(out[t].offsets == head[t].offsets);
}

TEST_CASE("causality probe") {
    const PropertyResult r = causality_probe(77, 10);
    INFO(r.summary());
    CHECK(r.ok());
}

TEST_CASE("style changes the output for most seeds") {
    const ModelDims dims = small_dims();
    int differing = 0;
    for (std::uint64_t seed = 0; seed < 8; ++seed) {
        const auto w = init_weights(seed, dims);
        Rng rng(seed + 100);
        const auto audio = random_audio(rng, 12, dims.d_audio);
        const auto a = predict_expressions(audio, StyleCode{0, dims.n_styles}, w);
        const auto b = predict_expressions(audio, StyleCode{1, dims.n_styles}, w);
        bool diff = false;
        for (std::size_t t = 0; t < a.size(); ++t)
            diff = diff || !(a[t].offsets == b[t].offsets);
        differing += diff ? 1 : 0;
    }
    CHECK(differing >= 7);
}

TEST_CASE("combined predictor: neutral is the zero condition") {
    const ModelDims dims = small_dims();
    const auto w = init_weights(9, dims);
    Rng rng(10);
    const auto audio = random_audio(rng, 9, dims.d_audio);
    const auto neutral = combined_predict(condition_from_label(kNeutral, w.label_table()), audio, w);
    const auto zero = combined_predict(EmotionCondition{Eigen::VectorXd::Zero(dims.d_emotion)}, audio, w);
    REQUIRE(neutral.size() == 9);
    for (std::size_t t = 0; t < neutral.size(); ++t) {
        CHECK(neutral[t] == zero[t]);
        CHECK(neutral[t].rows() == dims.n_kp);
    }
    const auto happy = combined_predict(condition_from_label("happy", w.label_table()), audio, w);
    const auto again = combined_predict(condition_from_label("happy", w.label_table()), audio, w);
    bool differs = false;
    for (std::size_t t = 0; t < happy.size(); ++t) {
        CHECK(happy[t] == again[t]);
        differs = differs || !(happy[t] == neutral[t]);
    }
    CHECK(differs);
    CHECK_THROWS_AS(combined_predict(EmotionCondition{Eigen::VectorXd::Zero(dims.d_emotion + 1)}, audio, w),
                    DimensionError);
}

TEST_CASE("refine_lips writes only the lip rows") {
    const ModelDims dims = small_dims();
    const RegionMask lips = RegionLayout::default_layout().lips();
    for (int i = 0; i < 100; ++i) {
        Rng rng(mix_seed(200, static_cast<std::uint64_t>(i)));
        const auto w = init_weights(rng.next(), dims);
        const KeypointsD kc = random_keypoints(rng, dims.n_kp, 0.5);
        const PoseD pose = random_pose(rng);
        const DeformationD delta = random_deformation(rng, dims.n_kp, DeformationKind::Raw, 0.05);
        const Eigen::RowVectorXd audio = random_vector(rng, dims.d_audio).transpose();
        const NoiseSpec noise{1e-3, rng.next()};
        const KeypointsD rec = compose_keypoints(kc, pose, delta);
        const KeypointsD out = refine_lips(audio, kc, pose, delta, noise, w, lips);
        for (Index r = 0; r < dims.n_kp; ++r)
            if (!lips.contains(r))
                CHECK(out.row(r) == rec.row(r));
        CHECK(refine_lips(audio, kc, pose, delta, noise, w, lips) == out);
    }
}

TEST_CASE("refine_lips edge cases") {
    const ModelDims dims = small_dims();
    const auto w = init_weights(1, dims);
    Rng rng(3);
    const KeypointsD kc = random_keypoints(rng, dims.n_kp, 0.5);
    const PoseD pose = random_pose(rng);
    const DeformationD delta = random_deformation(rng, dims.n_kp, DeformationKind::Raw, 0.05);
    const Eigen::RowVectorXd audio = random_vector(rng, dims.d_audio).transpose();
    const KeypointsD rec = compose_keypoints(kc, pose, delta);
    const RegionMask none("lips", {}, dims.n_kp);
    CHECK(refine_lips(audio, kc, pose, delta, NoiseSpec{1e-3, 4}, w, none) == rec);

    const RegionMask lips = RegionLayout::default_layout().lips();
    const auto a = refine_lips(audio, kc, pose, delta, NoiseSpec{0.0, 1}, w, lips);
    const auto b = refine_lips(audio, kc, pose, delta, NoiseSpec{0.0, 2}, w, lips);
    CHECK(a == b);
    const auto c = refine_lips(audio, kc, pose, delta, NoiseSpec{1e-2, 1}, w, lips);
    CHECK_FALSE(a == c);
    CHECK_THROWS_AS(refine_lips(audio, kc, pose, DeformationD::zero(dims.n_kp + 1), NoiseSpec{}, w, lips),
                    DimensionError);
}

TEST_CASE("weights round-trip bit-exactly") {
    const auto w = init_weights(12, small_dims());
    const std::string text = save_weights(w);
    const ModelWeights back = load_weights(text);
    CHECK(back == w);
    CHECK(save_weights(back) == text);
}

TEST_CASE("corrupted weights files are rejected") {
    const std::string text = save_weights(init_weights(13, small_dims()));
    std::string bumped = text;
    const auto pos = bumped.find("\"version\":1");
    REQUIRE(pos != std::string::npos);
    bumped.replace(pos, 11, "\"version\":7");
    CHECK_THROWS_AS(load_weights(bumped), VersionError);

    const std::string truncated = text.substr(0, text.size() / 2);
    CHECK_THROWS_AS(load_weights(truncated), FormatError);
    // Dropping whole records keeps every line parseable but loses tensors.
    const std::string short_file = text.substr(0, text.rfind('\n', text.size() - 2) + 1);
    CHECK_THROWS_AS(load_weights(short_file), FormatError);
}

} // TEST_SUITE
