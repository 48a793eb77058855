#include "ctxkmp/fusion.hpp"

#include <array>
#include <cmath>

#include "ctxkmp/errors.hpp"

namespace ctxkmp {

void FusionParams::validate() const {
    if (!(pi_sp >= 0.0 && pi_sp < 1.0)) throw ConfigError("pi_sp must lie in [0, 1)");
    if (!(k_sp > 0.0)) throw ConfigError("K_s must be positive");
    if (!(k_g > 0.0)) throw ConfigError("K_g must be positive");
    if (!(gamma_sigma > 0.0)) throw ConfigError("gamma_sigma must be positive");
    if (!(gamma_grad > 0.0)) throw ConfigError("gamma_grad must be positive");
    if (!(dt > 0.0)) throw ConfigError("dt must be positive");
    if (!(grad_eps > 0.0)) throw ConfigError("grad_eps must be positive");
    if (!(var_sp >= 0.0) || !(var_g >= 0.0)) throw ConfigError("expert variances must be non-negative");
}

const char *to_string(Strategy s) noexcept {
    switch (s) {
        case Strategy::Kmp: return "kmp";
        case Strategy::KmpStab: return "kmp+stab";
        case Strategy::KmpGoal: return "kmp+goal";
        case Strategy::Full: return "full";
    }
    return "full";
}

Strategy parse_strategy(const std::string &name) {
    for (Strategy s : kAllStrategies) {
        if (name == to_string(s)) return s;
    }
    throw UsageError("unknown strategy '" + name + "' (expected kmp, kmp+stab, kmp+goal or full)");
}

MixingCoefficients mixing_coefficients(const Eigen::Ref<const VectorXd> &s, const MatrixXd &goal_inputs,
                                       const Eigen::Ref<const VectorXd> &lengths, double pi_sp) {
    if (goal_inputs.cols() == 0) throw ConfigError("mixing coefficients need at least one goal");
    if (goal_inputs.rows() != s.size() || lengths.size() != s.size()) {
        throw DimensionError("goal inputs, kernel lengths and query disagree in dimension");
    }
    const VectorXd act = rbf_kernel_vector(s, goal_inputs, lengths);
    MixingCoefficients c;
    c.goal_index = 0;
    c.k_max = act(0);
    for (Index h = 1; h < act.size(); ++h) {
        if (act(h) > c.k_max) {
            c.k_max = act(h);
            c.goal_index = h;
        }
    }
    c.pi_sp = pi_sp;
    c.pi_g = (1.0 - pi_sp) * c.k_max;
    c.pi_kmp = (1.0 - pi_sp) * (1.0 - c.k_max);
    return c;
}

MixingCoefficients strategy_coefficients(Strategy strategy, const Eigen::Ref<const VectorXd> &s,
                                         const MatrixXd &goal_inputs, const Eigen::Ref<const VectorXd> &lengths,
                                         double pi_sp) {
    switch (strategy) {
        case Strategy::Full:
            return mixing_coefficients(s, goal_inputs, lengths, pi_sp);
        case Strategy::KmpGoal:
            return mixing_coefficients(s, goal_inputs, lengths, 0.0);
        case Strategy::KmpStab: {
            MixingCoefficients c = mixing_coefficients(s, goal_inputs, lengths, pi_sp);
            c.pi_kmp = 1.0 - pi_sp;
            c.pi_g = 0.0;
            return c;
        }
        case Strategy::Kmp: {
            MixingCoefficients c = mixing_coefficients(s, goal_inputs, lengths, 0.0);
            c.pi_kmp = 1.0;
            c.pi_sp = 0.0;
            c.pi_g = 0.0;
            return c;
        }
    }
    throw UsageError("unknown strategy");
}

VectorXd shaped_gradient(const EpistemicState &state, Index position_dim, const FusionParams &params) {
    if (position_dim > state.gradient.size()) {
        throw DimensionError("position block exceeds the input dimension");
    }
    const VectorXd grad_x = state.gradient.tail(position_dim);
    const double norm = grad_x.norm();
    if (state.value < params.gamma_sigma && norm < params.gamma_grad) return grad_x;
    if (norm < params.grad_eps) return VectorXd::Zero(position_dim);
    return grad_x / norm;
}

VectorXd stabilizing_velocity(const EpistemicState &state, Index position_dim, const FusionParams &params) {
    const double rate = params.rate_scaled ? 1.0 / params.dt : 1.0;
    return -params.k_sp * rate * shaped_gradient(state, position_dim, params);
}

VectorXd stabilizing_velocity(const KmpModel &model, const Eigen::Ref<const VectorXd> &s, const FusionParams &params) {
    return stabilizing_velocity(model.epistemic_state(s), model.output_dim(), params);
}

VectorXd goal_velocity(const Eigen::Ref<const VectorXd> &x, const MatrixXd &goal_positions, Index goal_index,
                       const FusionParams &params) {
    if (goal_index < 0 || goal_index >= goal_positions.cols()) {
        throw std::out_of_range("goal index " + std::to_string(goal_index) + " out of range");
    }
    if (goal_positions.rows() != x.size()) throw DimensionError("goal and state positions disagree in dimension");
    const double rate = params.rate_scaled ? 1.0 / params.dt : 1.0;
    return params.k_g * rate * (goal_positions.col(goal_index) - x);
}

MatrixXd moe_covariance(std::span<const double> weights, std::span<const VectorXd> means,
                        std::span<const MatrixXd> covariances) {
    if (weights.empty() || weights.size() != means.size() || weights.size() != covariances.size()) {
        throw DimensionError("mixture weights, means and covariances differ in count");
    }
    const Index o = means.front().size();
    VectorXd mean = VectorXd::Zero(o);
    MatrixXd second = MatrixXd::Zero(o, o);
    for (std::size_t i = 0; i < weights.size(); ++i) {
        if (weights[i] == 0.0) continue;
        mean += weights[i] * means[i];
        second += weights[i] * (covariances[i] + means[i] * means[i].transpose());
    }
    MatrixXd cov = second - mean * mean.transpose();
    return 0.5 * (cov + cov.transpose());
}

FusedAction fused_action(const KmpModel &model, const Eigen::Ref<const VectorXd> &s, const GoalSet &goals,
                         const FusionParams &params, Strategy strategy, CovarianceMode covariance) {
    const Index o = model.output_dim();
    const Index i = model.input_dim();
    if (s.size() != i) {
        throw DimensionError("query has dimension " + std::to_string(s.size()) + ", model expects " +
                             std::to_string(i));
    }
    if (goals.positions.rows() != o) throw DimensionError("goal positions must match the output dimension");

    FusedAction a;
    a.coefficients = strategy_coefficients(strategy, s, goals.inputs, model.hyper().lengths, params.pi_sp);
    const EpistemicState ep = model.epistemic_state(s);
    a.epistemic = ep.value;
    const auto x = s.tail(o);

    MatrixXd kmp_cov;
    if (covariance == CovarianceMode::Compute) {
        Prediction p = model.predict(s);
        a.mu_kmp = std::move(p.mean);
        kmp_cov = std::move(p.covariance);
    } else {
        a.mu_kmp = model.mean(s);
    }
    a.mu_sp = stabilizing_velocity(ep, o, params);
    a.mu_g = goal_velocity(x, goals.positions, a.coefficients.goal_index, params);

    const MixingCoefficients &c = a.coefficients;
    a.mean = c.pi_kmp * a.mu_kmp + c.pi_sp * a.mu_sp + c.pi_g * a.mu_g;

    if (covariance == CovarianceMode::Compute) {
        const std::array<double, 3> w{c.pi_kmp, c.pi_sp, c.pi_g};
        const std::array<VectorXd, 3> mu{a.mu_kmp, a.mu_sp, a.mu_g};
        const std::array<MatrixXd, 3> cov{kmp_cov, params.var_sp * MatrixXd::Identity(o, o),
                                          params.var_g * MatrixXd::Identity(o, o)};
        a.covariance = moe_covariance(w, mu, cov);
    }
    return a;
}

}  // namespace ctxkmp
