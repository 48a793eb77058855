#include "doctest.h"

#include <random>

#include <Eigen/Dense>

#include "ctxkmp/errors.hpp"
#include "ctxkmp/fusion.hpp"
#include "support.hpp"

using namespace ctxkmp;

namespace {

KmpModel one_ref_1d(double l, double jitter = 0.0) {
    ReferenceSet r;
    r.inputs = MatrixXd::Zero(1, 1);
    r.means = MatrixXd::Constant(1, 1, 1.0);
    r.covariances = {MatrixXd::Constant(1, 1, 0.1)};
    return KmpModel(r, KmpHyperparams{0.5, VectorXd::Constant(1, l), jitter});
}

// Exact first and second moments of a Gaussian mixture from symmetric sigma
// points, one discrete set per component.
MatrixXd sigma_point_covariance(const std::vector<double> &w, const std::vector<VectorXd> &mu,
                                const std::vector<MatrixXd> &cov) {
    const Index o = mu.front().size();
    std::vector<std::pair<double, VectorXd>> atoms;
    for (std::size_t i = 0; i < w.size(); ++i) {
        const Eigen::SelfAdjointEigenSolver<MatrixXd> es(cov[i]);
        const MatrixXd root = es.eigenvectors() * es.eigenvalues().cwiseMax(0.0).cwiseSqrt().asDiagonal();
        for (Index d = 0; d < o; ++d) {
            const VectorXd step = std::sqrt(static_cast<double>(o)) * root.col(d);
            atoms.emplace_back(w[i] / (2.0 * o), mu[i] + step);
            atoms.emplace_back(w[i] / (2.0 * o), mu[i] - step);
        }
    }
    VectorXd m = VectorXd::Zero(o);
    for (const auto &[p, x] : atoms) m += p * x;
    MatrixXd c = MatrixXd::Zero(o, o);
    for (const auto &[p, x] : atoms) c += p * (x - m) * (x - m).transpose();
    return c;
}

}  // namespace

TEST_CASE("normalized branch: stabilizer speed is K_s / dt") {
    const double l = 0.04;
    const KmpModel m = one_ref_1d(l, 1e-8);
    const FusionParams p;
    const VectorXd s = VectorXd::Constant(1, 1.5 * l);
    REQUIRE(m.epistemic(s) > p.gamma_sigma);
    const VectorXd v = stabilizing_velocity(m, s, p);
    CHECK(v.norm() == doctest::Approx(4.0 / 0.05).epsilon(1e-12));
    CHECK(v(0) < 0);  // towards the data
}

TEST_CASE("raw branch: stabilizer scales the gradient") {
    // 1-D single reference: Sigma_ep = 1 - exp(-d^2/l^2), gradient 2d/l^2 exp(-d^2/l^2).
    // Solve for Sigma_ep = 0.4 and gradient 0.5.
    const double a = -std::log(0.6);
    const double d = a / (0.5 / 1.2 / 1.0);
    const double l = std::sqrt(d / (0.5 / 1.2));
    const KmpModel m = one_ref_1d(l);
    const VectorXd s = VectorXd::Constant(1, d);
    const EpistemicState st = m.epistemic_state(s);
    REQUIRE(st.value == doctest::Approx(0.4).epsilon(1e-12));
    REQUIRE(st.gradient.norm() == doctest::Approx(0.5).epsilon(1e-12));
    const VectorXd v = stabilizing_velocity(m, s, FusionParams{});
    CHECK(v.norm() == doctest::Approx(40.0).epsilon(1e-10));
    CHECK((v + 4.0 * st.gradient / 0.05).norm() < 1e-12);
}

TEST_CASE("stabilizer vanishes on the data") {
    const TrainedModel &tm = testing::planar_model();
    const FusionParams p;
    for (Index j = 0; j < tm.kmp.size(); j += 7) {
        const VectorXd v = stabilizing_velocity(tm.kmp, tm.kmp.refs().inputs.col(j), p);
        CHECK(v.norm() <= 4.0 / 0.05 * 1e-3);
    }
}

TEST_CASE("per-second reading drops the 1/dt factor") {
    FusionParams p;
    p.rate_scaled = false;
    const KmpModel m = one_ref_1d(0.04, 1e-8);
    CHECK(stabilizing_velocity(m, VectorXd::Constant(1, 0.06), p).norm() == doctest::Approx(4.0));
    CHECK(goal_velocity(Eigen::Vector2d(0, 0), Eigen::Vector2d(0.01, 0), 0, p).isApprox(Eigen::Vector2d(0.2, 0)));
}

TEST_CASE("goal attractor") {
    const FusionParams p;
    const MatrixXd goals = Eigen::Vector2d(0.01, 0.0);
    CHECK(goal_velocity(Eigen::Vector2d(0, 0), goals, 0, p).isApprox(Eigen::Vector2d(4.0, 0.0)));
    CHECK(goal_velocity(Eigen::Vector2d(0.01, 0), goals, 0, p).isZero(0.0));
    CHECK_THROWS_AS(goal_velocity(Eigen::Vector2d(0, 0), goals, 1, p), std::out_of_range);
}

TEST_CASE("mixing coefficients at and away from goals") {
    const Eigen::Vector2d l(0.04, 0.04);
    MatrixXd goals(2, 2);
    goals << 0, 1, 0, 1;
    const MixingCoefficients at = mixing_coefficients(Eigen::Vector2d(1, 1), goals, l, 0.6);
    CHECK(at.k_max == 1.0);
    CHECK(at.goal_index == 1);
    CHECK(at.pi_g == doctest::Approx(0.4).epsilon(1e-15));
    CHECK(at.pi_kmp == 0.0);

    const MixingCoefficients far = mixing_coefficients(Eigen::Vector2d(5, -5), goals, l, 0.6);
    CHECK(far.pi_g < 1e-12);
    CHECK(far.pi_kmp == doctest::Approx(0.4));

    const MixingCoefficients tie = mixing_coefficients(Eigen::Vector2d(0.5, 0.5), goals, l, 0.6);
    CHECK(tie.goal_index == 0);
    CHECK_THROWS_AS(mixing_coefficients(Eigen::Vector2d(0, 0), MatrixXd(2, 0), l, 0.6), ConfigError);
}

TEST_CASE("coefficients form a simplex for every strategy") {
    const TrainedModel &tm = testing::context_model();
    const VectorXd l = tm.kmp.hyper().lengths;
    std::mt19937_64 rng(3);
    for (int i = 0; i < 1000; ++i) {
        VectorXd s(4);
        s << testing::uniform_vector(rng, 2, -0.5, 2.5), testing::uniform_vector(rng, 2, -0.6, 0.6);
        if (i % 10 == 0) s = tm.goals.inputs.col(i % tm.goals.size()) + 0.01 * testing::uniform_vector(rng, 4, -1, 1);
        for (Strategy st : kAllStrategies) {
            const MixingCoefficients c = strategy_coefficients(st, s, tm.goals.inputs, l, 0.6);
            CHECK(std::abs(c.pi_kmp + c.pi_sp + c.pi_g - 1.0) <= 1e-12);
            CHECK(c.pi_kmp >= 0.0);
            CHECK(c.pi_sp >= 0.0);
            CHECK(c.pi_g >= 0.0);
        }
    }
    const MixingCoefficients ks = strategy_coefficients(Strategy::KmpStab, tm.goals.inputs.col(0), tm.goals.inputs, l, 0.6);
    CHECK(ks.pi_kmp == doctest::Approx(0.4));
    CHECK(ks.pi_g == 0.0);
    const MixingCoefficients kg = strategy_coefficients(Strategy::KmpGoal, tm.goals.inputs.col(0), tm.goals.inputs, l, 0.6);
    CHECK(kg.pi_sp == 0.0);
    CHECK(kg.pi_g == 1.0);
    const MixingCoefficients k = strategy_coefficients(Strategy::Kmp, tm.goals.inputs.col(0), tm.goals.inputs, l, 0.6);
    CHECK(k.pi_kmp == 1.0);
    CHECK(parse_strategy("kmp+stab") == Strategy::KmpStab);
    CHECK_THROWS_AS(parse_strategy("kmp+everything"), UsageError);
}

TEST_CASE("one-hot mixtures reduce to a single expert") {
    const TrainedModel &tm = testing::planar_model();
    FusionParams p;
    p.pi_sp = 0.0;
    const VectorXd g = tm.goals.inputs.col(0);
    const FusedAction a = fused_action(tm.kmp, g, tm.goals, p);
    CHECK(a.coefficients.pi_g == 1.0);
    CHECK(a.mean == a.mu_g);
    CHECK(a.covariance.isApprox(p.var_g * MatrixXd::Identity(2, 2)));

    p.pi_sp = 1.0 - 1e-12;
    const FusedAction b = fused_action(tm.kmp, Eigen::Vector2d(0.3, 0.4), tm.goals, p);
    CHECK((b.mean - b.mu_sp).norm() <= 1e-9 * (1 + b.mu_sp.norm() + b.mu_kmp.norm() + b.mu_g.norm()));
}

TEST_CASE("mixture covariance against sigma points") {
    std::mt19937_64 rng(6);
    for (int t = 0; t < 20; ++t) {
        std::vector<double> w{0.2, 0.5, 0.3};
        std::vector<VectorXd> mu;
        std::vector<MatrixXd> cov;
        for (int i = 0; i < 3; ++i) {
            mu.push_back(testing::uniform_vector(rng, 2, -3, 3));
            const MatrixXd a = testing::uniform_vector(rng, 4, -1, 1).reshaped(2, 2);
            cov.push_back(a * a.transpose() + 0.01 * MatrixXd::Identity(2, 2));
        }
        const MatrixXd c = moe_covariance(w, mu, cov);
        CHECK((c - sigma_point_covariance(w, mu, cov)).norm() <= 1e-10 * (1 + c.norm()));
        CHECK(Eigen::SelfAdjointEigenSolver<MatrixXd>(c).eigenvalues().minCoeff() >= -1e-12);
    }
    std::vector<double> w{0.0, 1.0, 0.0};
    std::vector<VectorXd> mu{Eigen::Vector2d(1, 2), Eigen::Vector2d(-3, 4), Eigen::Vector2d(5, 5)};
    std::vector<MatrixXd> cov{MatrixXd::Identity(2, 2), 0.3 * MatrixXd::Identity(2, 2), MatrixXd::Identity(2, 2)};
    CHECK(moe_covariance(w, mu, cov).isApprox(cov[1], 1e-14));
}

TEST_CASE("stabilizer speed bound and descent off the data") {
    const TrainedModel &tm = testing::planar_model();
    const FusionParams p;
    const Box box = bounding_box(tm.demo_positions, 0.2);
    std::mt19937_64 rng(9);
    int tried = 0, descended = 0;
    while (tried < 200) {
        const VectorXd s = box.lower + (box.upper - box.lower).cwiseProduct(testing::uniform_vector(rng, 2, 0, 1));
        const EpistemicState st = tm.kmp.epistemic_state(s);
        const VectorXd v = stabilizing_velocity(st, 2, p);
        CHECK(v.norm() <= p.k_sp / p.dt + 1e-9);
        if (!(st.value > 1e-6 && st.value < 1 - 1e-9) || st.gradient.norm() < p.grad_eps) continue;
        ++tried;
        const VectorXd next = s + 1e-7 * v / v.norm();
        if (tm.kmp.epistemic(next) < st.value) ++descended;
    }
    CHECK(descended >= 198);
}

TEST_CASE("fused action checks dimensions") {
    const TrainedModel &tm = testing::planar_model();
    CHECK_THROWS_AS(fused_action(tm.kmp, Eigen::Vector3d(0, 0, 0), tm.goals, FusionParams{}), DimensionError);
    FusionParams bad;
    bad.pi_sp = 1.0;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
}
