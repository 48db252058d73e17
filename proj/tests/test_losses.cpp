#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "san/losses.hpp"
#include "san/rng.hpp"

using namespace san;

namespace {

MatD random_mat(Eigen::Index r, Eigen::Index c, Rng& rng, double scale = 1.0) {
    std::normal_distribution<double> n01;
    MatD m(r, c);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = scale * n01(rng);
    return m;
}

VecD vec(std::initializer_list<double> v) {
    VecD out(static_cast<Eigen::Index>(v.size()));
    Eigen::Index i = 0;
    for (double x : v) out(i++) = x;
    return out;
}

// Squared distance at which the nu-kernel equals `target`.
double dist_for_kernel(double target, const KernelParams& p) {
    const double ratio = target / p.normalizer();
    return p.nu * (std::pow(ratio, -2.0 / (p.nu + 1.0)) - 1.0);
}

}  // namespace

TEST(InfoNce, Examples) {
    EXPECT_NEAR(infonce_loss(1.0, {0.0}), -1.0, 1e-15);
    EXPECT_NEAR(infonce_loss(0.0, {0.0}), 0.0, 1e-15);
    EXPECT_NEAR(infonce_loss(1.0, {1.0, 1.0}), std::numbers::ln2, 1e-15);
}

TEST(InfoNce, EmptyNegatives) { EXPECT_THROW(infonce_loss(1.0, {}), InvalidArgument); }

TEST(InfoNce, IncludePositiveAddsToDenominator) {
    EXPECT_NEAR(infonce_loss(0.0, {0.0}, true), std::numbers::ln2, 1e-15);
    EXPECT_NEAR(infonce_loss(2.0, {0.5, -0.5}, true),
                -2.0 + std::log(std::exp(2.0) + std::exp(0.5) + std::exp(-0.5)), 1e-14);
}

TEST(InfoNce, BatchMatchesScalarForm) {
    Rng rng = make_stream(2, {1});
    const MatD z = random_mat(4, 3, rng);
    const auto rel = AugmentationRelation::consecutive_pairs(4);
    double expect = 0.0;
    for (int i = 0; i < 4; ++i) {
        const int pos = i ^ 1;
        std::vector<double> neg;
        for (int k = 0; k < 4; ++k)
            if (k != i && k != pos) neg.push_back(cosine_sim(z.row(i).transpose(), z.row(k).transpose()));
        expect += infonce_loss(cosine_sim(z.row(i).transpose(), z.row(pos).transpose()), neg);
    }
    EXPECT_NEAR(infonce_batch_loss(z, rel).value, expect / 4.0, 1e-13);
}

TEST(ClBinary, ExpDensityOnePair) {
    MatD z(2, 2);
    z << 1, 0, 2, 0;  // cosine 1
    PairBatch<double> b(z, z, AugmentationRelation::consecutive_pairs(2));
    EXPECT_NEAR(cl_binary_loss(b, DensityMode::ExpDensity, SCLConfig{}), -1.0, 1e-15);
}

TEST(ClBinary, KernelBceHalfContribution) {
    EXPECT_NEAR(scl_pair_loss(1.0, 0.5), std::numbers::ln2, 1e-15);
    EXPECT_NEAR(scl_pair_loss(0.0, 0.5), std::numbers::ln2, 1e-15);
}

TEST(ClBinary, KernelBceOnePairMatchesPairTerm) {
    SCLConfig cfg;
    MatD z(2, 2);
    z << 0.0, 0.0, 0.6, 0.8;
    for (double h : {0.0, 1.0}) {
        MatD hm = MatD::Zero(2, 2);
        hm(0, 1) = hm(1, 0) = h;
        PairBatch<double> b(z, z, AugmentationRelation(hm));
        const double q = t_kernel(1.0, cfg.nu_z);
        // Two ordered pairs over m = 2 rows.
        EXPECT_NEAR(cl_binary_loss(b, DensityMode::KernelBce, cfg), scl_pair_loss(h, q), 1e-14);
    }
}

TEST(ClBinary, CoincidentRowsStayFinite) {
    SCLConfig cfg;
    MatD z = MatD::Zero(2, 3);
    PairBatch<double> b(z, z, AugmentationRelation::consecutive_pairs(2));
    EXPECT_TRUE(std::isfinite(cl_binary_loss(b, DensityMode::KernelBce, cfg)));
}

TEST(PairAffinity, Examples) {
    EXPECT_NEAR(pair_affinity_value(1.0, 0.0, 0.3, 1e-8), 0.3, 1e-15);
    EXPECT_NEAR(pair_affinity_value(1.0, 1.0, 0.3, 1e-8), 0.815484548537714, 1e-12);
    EXPECT_EQ(pair_affinity_value(1.0, 1.0, 0.5, 1e-8), 1.0 - 1e-8);
    EXPECT_NEAR(pair_affinity_value(0.0, 1.0, 0.3, 1e-8), 0.3, 1e-15);
}

TEST(PairAffinity, BatchBoostsLinkedPairsOnly) {
    Rng rng = make_stream(4, {1});
    const MatD y = random_mat(4, 3, rng, 0.3);
    SCLConfig cfg;
    cfg.alpha = 0.5;
    PairBatch<double> b(y, y, AugmentationRelation::consecutive_pairs(4));
    const MatD p = pair_affinity(b, cfg);
    for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 4; ++j) {
            if (i == j) continue;
            const double k = t_kernel((y.row(i) - y.row(j)).squaredNorm(), cfg.nu_y);
            EXPECT_NEAR(p(i, j), (j == (i ^ 1) ? std::exp(0.5) : 1.0) * k, 1e-15);
        }
}

TEST(Scl, StationaryAtAgreement) {
    // Both ordered pairs (i, j) and (j, i) together give ln 4.
    EXPECT_NEAR(scl_pair_loss(0.5, 0.5), std::numbers::ln2, 1e-15);
    EXPECT_NEAR(2.0 * scl_pair_loss(0.5, 0.5), std::log(4.0), 1e-15);
    EXPECT_EQ(scl_pair_grad_q(0.5, 0.5), 0.0);
}

TEST(Scl, PairLossExamples) {
    EXPECT_NEAR(scl_pair_loss(0.9, 0.5), std::numbers::ln2, 1e-15);
    const double eps = 1e-8;
    EXPECT_NEAR(scl_pair_loss(1 - eps, 1 - eps), 0.0, 1e-6);
}

TEST(Scl, BatchEqualsPairwiseFormula) {
    Rng rng = make_stream(5, {1});
    const MatD z = random_mat(6, 3, rng, 0.5), y = random_mat(6, 4, rng, 0.2);
    SCLConfig cfg;
    PairBatch<double> b(z, y, AugmentationRelation::consecutive_pairs(6));
    const MatD p = pair_affinity(b, cfg), q = head_density(z, cfg);
    double expect = 0.0;
    for (int i = 0; i < 6; ++i)
        for (int j = 0; j < 6; ++j)
            if (i != j) expect += scl_pair_loss(p(i, j), q(i, j));
    EXPECT_NEAR(scl_loss(b, cfg), expect / 6.0, 1e-13);
}

TEST(Scl, NonFiniteEmbeddingsRejected) {
    MatD z = MatD::Zero(2, 2);
    z(0, 0) = std::nan("");
    EXPECT_THROW(PairBatch<double>(z, MatD::Zero(2, 2), AugmentationRelation::consecutive_pairs(2)), InvalidArgument);
}

TEST(Scl, ConfigValidation) {
    SCLConfig cfg;
    cfg.alpha = 1.5;
    EXPECT_THROW(cfg.validate(), InvalidArgument);
    cfg.alpha = 0.5;
    cfg.clamp_eps = 0.01;
    EXPECT_THROW(cfg.validate(), InvalidArgument);
}

TEST(Gap, IdentityOnRandomBatch) {
    Rng rng = make_stream(6, {1});
    const MatD z = random_mat(4, 2, rng, 0.4);
    SCLConfig cfg;
    PairBatch<double> b(z, z, AugmentationRelation::consecutive_pairs(4));
    const double lhs = cl_binary_loss(b, DensityMode::KernelBce, cfg) - scl_loss(b, cfg);
    EXPECT_NEAR(lhs, scl_cl_gap(b, cfg), 1e-12);
}

TEST(SclGradient, MatchesCentralDifferences) {
    Rng rng = make_stream(7, {1});
    const MatD z = random_mat(4, 3, rng, 0.6), y = random_mat(4, 2, rng, 0.4);
    SCLConfig cfg;
    const auto rel = AugmentationRelation::consecutive_pairs(4);
    const auto g = scl_loss_grad(PairBatch<double>(z, y, rel), cfg);
    const double h = 1e-6;
    for (Eigen::Index i = 0; i < z.size(); ++i) {
        MatD zp = z, zm = z;
        zp.data()[i] += h;
        zm.data()[i] -= h;
        const double fd = (scl_loss(PairBatch<double>(zp, y, rel), cfg) - scl_loss(PairBatch<double>(zm, y, rel), cfg)) / (2 * h);
        EXPECT_NEAR(g.grad_z.data()[i], fd, 1e-7);
    }
    for (Eigen::Index i = 0; i < y.size(); ++i) {
        MatD yp = y, ym = y;
        yp.data()[i] += h;
        ym.data()[i] -= h;
        const double fd = (scl_loss(PairBatch<double>(z, yp, rel), cfg) - scl_loss(PairBatch<double>(z, ym, rel), cfg)) / (2 * h);
        EXPECT_NEAR(g.grad_y.data()[i], fd, 1e-7);
    }
}

TEST(SclGradient, FixedAffinityHasNoBackboneGradient) {
    Rng rng = make_stream(8, {1});
    const MatD z = random_mat(4, 3, rng), y = random_mat(4, 2, rng);
    SCLConfig cfg;
    PairBatch<double> b(z, y, AugmentationRelation::consecutive_pairs(4));
    const MatD p = pair_affinity(b, cfg);
    const auto g = scl_loss_grad(b, cfg, &p);
    EXPECT_EQ(g.grad_y.size(), 0);
    EXPECT_NEAR(g.value, scl_loss(b, cfg), 1e-14);
}

TEST(Gap, PairTermExamples) {
    EXPECT_NEAR(gap_pair_term(1.0, 0.0, 0.5, 0.5), 0.0, 1e-15);
    EXPECT_NEAR(gap_pair_term(0.0, 0.5, 0.5, 0.5), 0.0, 1e-15);
    EXPECT_NEAR(gap_pair_term(0.0, 0.5, 0.3, 1.0 / (1.0 + std::numbers::e)), -0.3, 1e-14);
}

TEST(Gap, SingularLogRejected) {
    EXPECT_THROW(gap_pair_term(0.0, 0.5, 0.3, 1.0), DegenerateInput);
}

TEST(Gap, IdentityOnBatchWithKnownKernels) {
    // One unlinked pair whose kernels are placed at chosen values.
    SCLConfig cfg;
    cfg.alpha = 0.5;
    const double ky = 0.3, kz = 0.25;
    MatD y = MatD::Zero(2, 1), z = MatD::Zero(2, 1);
    y(1, 0) = std::sqrt(dist_for_kernel(ky, cfg.nu_y));
    z(1, 0) = std::sqrt(dist_for_kernel(kz, cfg.nu_z));
    PairBatch<double> b(z, y, AugmentationRelation::none(2));
    const double expect = 2.0 * gap_pair_term(0.0, cfg.alpha, ky, kz) / 2.0;
    EXPECT_NEAR(scl_cl_gap(b, cfg), expect, 1e-12);
    EXPECT_NEAR(cl_binary_loss(b, DensityMode::KernelBce, cfg) - scl_loss(b, cfg), expect, 1e-12);
}

TEST(Aio, HandExample) {
    AIOProbabilities<double> p(vec({0.5, 0.05}), vec({0.05, 0.4}));
    EXPECT_NEAR(aio_loss(p, 0), -(std::log(0.5) + std::log(0.4) + std::log(0.1)), 1e-12);
    EXPECT_NEAR(aio_loss(p, 0), 3.912023005428146, 1e-12);
}

TEST(Aio, ViolatedOrderingHitsClamp) {
    const double eps = 1e-8;
    AIOProbabilities<double> p(vec({0.3, 0.1}), vec({0.2, 0.4}));
    const double third = aio_loss(p, 0, eps) + std::log(0.3) + std::log(0.4);
    EXPECT_NEAR(third, -std::log(eps), 1e-9);
    const auto g = aio_loss_grad(p, 0, eps);
    EXPECT_NEAR(g.grad_probs(0), -1.0 / 0.3, 1e-12);  // no margin contribution
    EXPECT_EQ(g.grad_probs(2), 0.0);
}

TEST(Aio, SingleClassRejected) {
    AIOProbabilities<double> p(vec({0.5}), vec({0.5}));
    EXPECT_THROW(aio_loss(p, 0), InvalidArgument);
}

TEST(Aio, JointLayout) {
    const auto p = AIOProbabilities<double>::from_joint(vec({0.1, 0.2, 0.3, 0.4}));
    EXPECT_EQ(p.c(1), 0.2);
    EXPECT_EQ(p.c_tilde(0), 0.3);
    EXPECT_TRUE(p.joint().isApprox(vec({0.1, 0.2, 0.3, 0.4})));
    EXPECT_THROW(AIOProbabilities<double>::from_joint(vec({0.1, 0.2, 0.3})), InvalidArgument);
}

TEST(Aio, GradientMatchesDifferences) {
    AIOProbabilities<double> p(vec({0.4, 0.05, 0.1}), vec({0.15, 0.2, 0.1}));
    const auto g = aio_loss_grad(p, 0);
    for (int i = 0; i < 6; ++i) {
        VecD jp = p.joint(), jm = p.joint();
        jp(i) += 1e-7;
        jm(i) -= 1e-7;
        const double fd = (aio_loss(AIOProbabilities<double>::from_joint(jp), 0) -
                           aio_loss(AIOProbabilities<double>::from_joint(jm), 0)) / 2e-7;
        EXPECT_NEAR(g.grad_probs(i), fd, 1e-5);
    }
}

TEST(Ce, Examples) {
    EXPECT_EQ(ce_loss<double>(vec({0.0, 1.0, 0.0}), 1), 0.0);
    EXPECT_NEAR(ce_loss<double>(VecD::Constant(4, 0.25), 2), std::log(4.0), 1e-15);
    EXPECT_NEAR(ce_loss<double>(vec({0.7, 0.2, 0.1}), 0), 0.35667494393873245, 1e-14);
}

TEST(Ce, ZeroProbabilityIsClamped) {
    EXPECT_NEAR(ce_loss<double>(vec({1.0, 0.0}), 1, 1e-8), -std::log(1e-8), 1e-9);
}

TEST(Ova, LossAndGradient) {
    const VecD l = vec({0.5, -0.2, 0.3, 0.1, 0.4, -0.6});  // K = 3
    const auto [loss, g] = ova_loss_grad<double>(l, 1);
    auto ls = [](double u) { return -std::log1p(std::exp(-u)); };
    // hardest negative: u0 = 0.4, u2 = 0.9 -> class 2
    EXPECT_NEAR(loss, -ls(-0.2 - 0.4) - ls(-(0.3 + 0.6)), 1e-14);
    for (int i = 0; i < 6; ++i) {
        VecD lp = l, lm = l;
        lp(i) += 1e-6;
        lm(i) -= 1e-6;
        EXPECT_NEAR(g(i), (ova_loss_grad<double>(lp, 1).first - ova_loss_grad<double>(lm, 1).first) / 2e-6, 1e-8);
    }
}

TEST(Total, Examples) {
    EXPECT_EQ(total_loss(1.7, 5.0, 9.0, 0.0, 0.0), 1.7);
    EXPECT_NEAR(total_loss(1.0, 2.0, 3.0, 0.1, 0.5), 2.3, 1e-15);
    EXPECT_EQ(total_loss(0.0, 0.0, 0.0, 0.3, 0.7), 0.0);
    EXPECT_THROW(total_loss(1, 1, 1, -0.1, 1), InvalidArgument);
}

TEST(Relation, Validation) {
    MatD h = MatD::Zero(2, 2);
    h(0, 1) = 1.0;
    EXPECT_THROW(AugmentationRelation{h}, InvalidArgument);  // asymmetric
    h(1, 0) = 1.0;
    h(0, 0) = 1.0;
    EXPECT_THROW(AugmentationRelation{h}, InvalidArgument);  // diagonal
    EXPECT_THROW(AugmentationRelation::consecutive_pairs(3), InvalidArgument);
}
