#include <doctest.h>

#include <cmath>
#include <numeric>
#include <sstream>

#include "kpanim/training.hpp"
#include "properties.hpp"
#include "support.hpp"

using namespace kpanim;
using namespace kpanim::testing;

namespace {

// Scalar-toy sequences: one 1x3 frame per value, the value in column 0.
std::vector<KeypointsD> scalars(std::initializer_list<double> values) {
    std::vector<KeypointsD> out;
    for (double v : values) {
        KeypointsD k = KeypointsD::Zero(1, 3);
        k(0, 0) = v;
        out.push_back(k);
    }
    return out;
}

std::vector<std::vector<double>> flat_seq(const std::vector<KeypointsD>& s) {
    std::vector<std::vector<double>> out;
    for (const auto& k : s)
        out.push_back(flat(k));
    return out;
}

} // namespace

TEST_SUITE("losses") {

TEST_CASE("fixed points") {
    for (const auto& r : loss_fixed_points()) {
        INFO(r.summary());
        CHECK(r.ok());
    }
}

TEST_CASE("loss_rec examples") {
    CHECK(loss_rec(scalars({3}), scalars({1})) == 2.0);
    KeypointsD a = KeypointsD::Zero(1, 3), b = KeypointsD::Zero(1, 3);
    a(0, 0) = 1.0;
    CHECK(loss_rec(std::vector{a}, std::vector{b}) == 1.0);
    KeypointsD c = KeypointsD::Zero(1, 3);
    c << 1, -2, 2;
    CHECK(loss_rec(std::vector{c}, std::vector{b}) == doctest::Approx(3.0).epsilon(1e-15));
    CHECK(loss_rec(std::vector{c}, std::vector{b}, NormKind::L1) == 5.0);
    CHECK_THROWS_AS(loss_rec(scalars({1, 2}), scalars({1})), DimensionError);
}

TEST_CASE("loss_vel examples") {
    CHECK(loss_vel(scalars({0, 1, 3}), scalars({0, 1, 2})) == 1.0);
    CHECK(loss_vel(scalars({5, 5, 5}), scalars({2, 2, 2})) == 0.0);
    CHECK_THROWS_AS(loss_vel(scalars({1}), scalars({1})), ValueError);
}

TEST_CASE("loss_exp is the weighted component sum") {
    const auto p = scalars({0, 1, 3});
    const auto g = scalars({0, 1, 2});
    const double rec = oracle::sum_dist(flat_seq(p), flat_seq(g));
    const double vel = oracle::velocity_loss(flat_seq(p), flat_seq(g));
    CHECK(loss_exp(p, g, LossWeights{}) == doctest::Approx(vel + rec).epsilon(1e-15));
    LossWeights none;
    none.lambda_rec = 0.0;
    CHECK(loss_exp(p, g, none) == loss_vel(p, g));
    CHECK(loss_exp(g, g, LossWeights{}) == 0.0);
}

TEST_CASE("loss properties on random sequences") {
    Rng rng(21);
    for (int i = 0; i < 200; ++i) {
        std::vector<KeypointsD> p, g;
        const int len = 2 + static_cast<int>(rng.uniform() * 8);
        for (int t = 0; t < len; ++t) {
            p.push_back(random_keypoints(rng, 5));
            g.push_back(random_keypoints(rng, 5));
        }
        CHECK(loss_rec(p, g) >= 0.0);
        CHECK(loss_vel(p, g) >= 0.0);
        CHECK(std::abs(loss_rec(p, g) - oracle::sum_dist(flat_seq(p), flat_seq(g))) <= 1e-12);
        CHECK(std::abs(loss_vel(p, g) - oracle::velocity_loss(flat_seq(p), flat_seq(g))) <= 1e-12);
        // A shared constant offset leaves velocities alone.
        const KeypointsD c = random_keypoints(rng, 5);
        auto ps = p, gs = g;
        for (auto& k : ps)
            k += c;
        for (auto& k : gs)
            k += c;
        CHECK(std::abs(loss_vel(ps, gs) - loss_vel(p, g)) <= 1e-12);
    }
}

TEST_CASE("loss_exp gradient matches finite differences") {
    Rng rng(22);
    std::vector<KeypointsD> p, g;
    for (int t = 0; t < 4; ++t) {
        p.push_back(random_keypoints(rng, 3));
        g.push_back(random_keypoints(rng, 3));
    }
    const Index per = p[0].size();
    auto unpack = [&](const Eigen::VectorXd& v) {
        std::vector<KeypointsD> out = p;
        for (std::size_t t = 0; t < out.size(); ++t)
            out[t] = Eigen::Map<const KeypointsD>(v.data() + static_cast<Index>(t) * per, 3, 3);
        return out;
    };
    Eigen::VectorXd x(per * 4);
    for (std::size_t t = 0; t < p.size(); ++t)
        x.segment(static_cast<Index>(t) * per, per) = Eigen::Map<const Eigen::VectorXd>(p[t].data(), per);
    const Objective f{[&](const Eigen::VectorXd& v) { return loss_exp(unpack(v), g, LossWeights{}); },
                      [&](const Eigen::VectorXd& v) {
                          const auto grads = loss_exp_gradient(unpack(v), g, LossWeights{});
                          Eigen::VectorXd out(per * 4);
                          for (std::size_t t = 0; t < grads.size(); ++t) {
                              const KeypointsD gt = grads[t];
                              out.segment(static_cast<Index>(t) * per, per) =
                                  Eigen::Map<const Eigen::VectorXd>(gt.data(), per);
                          }
                          return out;
                      }};
    CHECK(grad_check(f, x).max_rel_error <= 1e-6);
}

TEST_CASE("loss_sync range and examples") {
    const Eigen::VectorXd a = Eigen::VectorXd::Unit(4, 0);
    const Eigen::VectorXd b = Eigen::VectorXd::Unit(4, 1);
    CHECK(negative_cosine(a, a) == -1.0);
    CHECK(negative_cosine(a, b) == 0.0);
    CHECK(negative_cosine(a, Eigen::VectorXd(-a)) == 1.0);
    CHECK_THROWS_AS(negative_cosine(a, Eigen::VectorXd::Zero(4)), ValueError);

    Rng rng(23);
    const Index n_kp = 4, d_audio = 6;
    const auto sv = LinearEmbedding::seeded(kSyncWindowFrames * 3 * n_kp, 8, 1);
    const auto sa = LinearEmbedding::seeded(kSyncWindowFrames * d_audio, 8, 2);
    for (int i = 0; i < 100; ++i) {
        SyncWindow w;
        for (Index t = 0; t < kSyncWindowFrames; ++t)
            w.motion.push_back(random_keypoints(rng, n_kp));
        w.audio = random_audio(rng, kSyncWindowFrames, d_audio).embeddings;
        const double l = loss_sync(w, sv, sa);
        CHECK(l >= -1.0);
        CHECK(l <= 1.0);
    }
    SyncWindow bad;
    bad.motion.assign(4, KeypointsD::Zero(n_kp, 3));
    bad.audio = Eigen::MatrixXd::Zero(4, d_audio);
    CHECK_THROWS_AS(loss_sync(bad, sv, sa), DimensionError);
}

TEST_CASE("loss_kp and loss_reg") {
    std::vector<KeypointsD> a(5, KeypointsD::Zero(3, 3));
    auto b = a;
    b[2](1, 1) = 1.0;
    CHECK(loss_kp(b, a) == 1.0);
    CHECK(loss_reg(b, a) == 1.0);
    Rng rng(24);
    std::vector<KeypointsD> r, gt;
    for (int t = 0; t < 5; ++t) {
        r.push_back(random_keypoints(rng, 21));
        gt.push_back(random_keypoints(rng, 21));
    }
    CHECK(std::abs(loss_kp(r, gt) - oracle::sum_dist(flat_seq(r), flat_seq(gt))) <= 1e-12);
    CHECK_THROWS_AS(loss_kp(r, std::vector<KeypointsD>(4, r[0])), DimensionError);
}

TEST_CASE("loss_refine sums its components") {
    LossWeights w;
    CHECK(loss_refine(-0.5, 2.0, 3.0, w) == 4.5);
    w.lambda_kp = 0.0;
    w.lambda_reg = 0.0;
    CHECK(loss_refine(-0.5, 2.0, 3.0, w) == -0.5);
    w.lambda_kp = 0.25;
    w.lambda_reg = 2.0;
    const double sync = 0.1, kp = 1.5, reg = 0.7;
    CHECK(loss_refine(sync, kp, reg, w) == doctest::Approx(sync + 0.25 * kp + 2.0 * reg).epsilon(1e-15));
}

TEST_CASE("loss_cls") {
    Eigen::VectorXd p = Eigen::VectorXd::Zero(8);
    p(2) = 1.0;
    CHECK(loss_cls(p, 2) == 0.0);
    CHECK(std::isinf(loss_cls(p, 3)));
    CHECK(std::abs(loss_cls(Eigen::VectorXd::Constant(8, 0.125), 0) - 2.0794415416798357) <= 1e-12);
    CHECK_THROWS_AS(loss_cls(Eigen::VectorXd::Constant(8, 0.2), 0), ValueError);
    CHECK_THROWS_AS(loss_cls(p, 8), ValueError);
    CHECK_THROWS_AS(loss_cls(Eigen::VectorXd::Ones(1), 0), ValueError);
}

TEST_CASE("grad_check on constructed objectives") {
    Rng rng(25);
    const Eigen::VectorXd x = random_vector(rng, 12);
    const Objective quad{[](const Eigen::VectorXd& p) { return p.squaredNorm(); },
                         [](const Eigen::VectorXd& p) { return Eigen::VectorXd(2.0 * p); }};
    CHECK(grad_check(quad, x).max_rel_error <= 1e-9);
    const Objective wrong{[](const Eigen::VectorXd& p) { return p.squaredNorm(); },
                          [](const Eigen::VectorXd& p) { return Eigen::VectorXd(4.0 * p); }};
    CHECK(grad_check(wrong, x).max_rel_error == doctest::Approx(1.0).epsilon(1e-6));
    const Objective nan{[](const Eigen::VectorXd&) { return std::nan(""); },
                        [](const Eigen::VectorXd& p) { return p; }};
    CHECK_THROWS_AS(grad_check(nan, x), NumericError);
}

TEST_CASE("refiner gradient check at reduced width") {
    ModelDims dims;
    dims.refiner_hidden = 16;
    dims.d_audio = 8;
    const RegionMask lips = RegionLayout::default_layout().lips();
    for (std::uint64_t s = 0; s < 3; ++s)
        CHECK(refiner_gradcheck(mix_seed(1, s), dims, lips).max_rel_error <= 1e-4);
}

TEST_CASE("training: lr 0 keeps weights and seeds fix the trace") {
    ModelDims dims = small_dims();
    const RegionMask lips = RegionLayout::default_layout().lips();
    SyntheticDatasetConfig dc;
    dc.n_windows = 32;
    dc.seed = 3;
    const auto data = make_synthetic_refiner_dataset(dims, lips, dc);
    const auto providers = SyncProviders::seeded(dims, 4);
    const auto w0 = init_weights(5, dims);
    TrainConfig tc;
    tc.steps = 20;
    tc.batch = 8;
    tc.lr = 0.0;
    const auto frozen = train_refiner(data, w0, tc, providers);
    CHECK(frozen.weights == w0);
    CHECK(frozen.trace.size() == 20);

    tc.lr = 1e-3;
    tc.seed = 9;
    const auto a = train_refiner(data, w0, tc, providers);
    const auto b = train_refiner(data, w0, tc, providers);
    CHECK(a.trace == b.trace);
    CHECK(a.weights == b.weights);
    CHECK_FALSE(a.weights == w0);

    std::ostringstream csv;
    write_loss_trace(csv, {1.5, 0.25});
    CHECK(csv.str() == "step,value\n0,1.5\n1,0.25\n");
    CHECK_THROWS_AS(train_refiner(RefinerDataset{{}, lips}, w0, tc, providers), ValueError);
}

} // TEST_SUITE
