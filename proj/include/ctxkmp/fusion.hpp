#pragma once

#include <span>
#include <string>

#include <Eigen/Core>

#include "ctxkmp/demonstrations.hpp"
#include "ctxkmp/kmp.hpp"

namespace ctxkmp {

/// Gains and thresholds of the three-expert mixture.
struct FusionParams {
    double pi_sp = 0.6;        ///< constant stabilizing coefficient, in [0, 1)
    double k_sp = 4.0;         ///< stabilizing gain
    double k_g = 20.0;         ///< goal gain
    double gamma_sigma = 0.5;  ///< uncertainty threshold
    double gamma_grad = 1.0;   ///< gradient-norm threshold
    double dt = 0.05;          ///< control period [s]
    double grad_eps = 1e-12;   ///< below this gradient norm the stabilizer is off
    double var_sp = 1e-4;      ///< isotropic covariance of the stabilizing expert
    double var_g = 1e-4;       ///< isotropic covariance of the goal expert
    /// Divide the stabilizing and goal commands by dt (gains per control
    /// period). When false the gains are read as rates in 1/s.
    bool rate_scaled = true;

    /// Throws ConfigError when an invariant is violated.
    void validate() const;
};

/// Demonstrated end points: full inputs for the activation, positions for
/// the attractor.
struct GoalSet {
    MatrixXd inputs;     ///< I x H
    MatrixXd positions;  ///< P x H

    static GoalSet from(const TrainingSet &set) { return {set.goal_inputs, set.goal_positions}; }
    Index size() const { return inputs.cols(); }
};

struct MixingCoefficients {
    double pi_kmp = 0;
    double pi_sp = 0;
    double pi_g = 0;
    double k_max = 0;
    Index goal_index = 0;
};

enum class Strategy { Kmp, KmpStab, KmpGoal, Full };

const char *to_string(Strategy s) noexcept;
/// Accepts "kmp", "kmp+stab", "kmp+goal", "full"; throws UsageError otherwise.
Strategy parse_strategy(const std::string &name);
inline constexpr Strategy kAllStrategies[] = {Strategy::Kmp, Strategy::KmpStab, Strategy::KmpGoal, Strategy::Full};

struct FusedAction {
    VectorXd mean;        ///< blended velocity
    MatrixXd covariance;  ///< mixture covariance, diagnostic only (empty unless requested)
    MixingCoefficients coefficients;
    VectorXd mu_kmp;
    VectorXd mu_sp;
    VectorXd mu_g;
    double epistemic = 0;
};

/// pi_g = (1 - pi_sp) k_max, pi_kmp = (1 - pi_sp)(1 - k_max), k_max over the
/// full inputs of all goals. Ties pick the lowest goal index.
MixingCoefficients mixing_coefficients(const Eigen::Ref<const VectorXd> &s, const MatrixXd &goal_inputs,
                                       const Eigen::Ref<const VectorXd> &lengths, double pi_sp);

/// Coefficients of an ablated mixture: kmp uses the LfD expert alone,
/// kmp+stab folds the goal share into the LfD expert, kmp+goal sets pi_sp = 0.
MixingCoefficients strategy_coefficients(Strategy strategy, const Eigen::Ref<const VectorXd> &s,
                                         const MatrixXd &goal_inputs, const Eigen::Ref<const VectorXd> &lengths,
                                         double pi_sp);

/// Thresholded normalization of the position part of the epistemic gradient.
VectorXd shaped_gradient(const EpistemicState &state, Index position_dim, const FusionParams &params);

/// mu_sp = -K_sp * shaped gradient / dt (no division when !rate_scaled).
VectorXd stabilizing_velocity(const EpistemicState &state, Index position_dim, const FusionParams &params);
VectorXd stabilizing_velocity(const KmpModel &model, const Eigen::Ref<const VectorXd> &s, const FusionParams &params);

/// mu_g = K_g (x_g - x) / dt (no division when !rate_scaled).
VectorXd goal_velocity(const Eigen::Ref<const VectorXd> &x, const MatrixXd &goal_positions, Index goal_index,
                       const FusionParams &params);

/// sum_i pi_i (Sigma_i + mu_i mu_i^T) - mu mu^T.
MatrixXd moe_covariance(std::span<const double> weights, std::span<const VectorXd> means,
                        std::span<const MatrixXd> covariances);

enum class CovarianceMode { Skip, Compute };

FusedAction fused_action(const KmpModel &model, const Eigen::Ref<const VectorXd> &s, const GoalSet &goals,
                         const FusionParams &params, Strategy strategy = Strategy::Full,
                         CovarianceMode covariance = CovarianceMode::Compute);

}  // namespace ctxkmp
