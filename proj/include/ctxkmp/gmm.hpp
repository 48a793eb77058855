#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Core>

#include "ctxkmp/demonstrations.hpp"
#include "json.hpp"

namespace ctxkmp {

/// Gaussian mixture over the joint vector [s; xi].
struct GmmModel {
    Index input_dim = 0;
    Index output_dim = 0;
    VectorXd weights;                   ///< K
    std::vector<VectorXd> means;        ///< K x (I+O)
    std::vector<MatrixXd> covariances;  ///< K x (I+O)x(I+O)
    std::uint64_t seed = 0;

    Index components() const { return weights.size(); }
    Index joint_dim() const { return input_dim + output_dim; }
};

/// Diagnostics of one EM run.
struct EmReport {
    std::vector<double> log_likelihood;  ///< total log-likelihood before every M-step
    std::vector<Index> reseeded_at;      ///< iterations where a component was reseeded
    Index iterations = 0;
    bool converged = false;
};

struct EmOptions {
    Index max_iterations = 200;
    double tolerance = 1e-6;  ///< on the relative log-likelihood improvement
};

/// Per-dimension regularizer: 1e-6 times the variance of each joint dimension.
VectorXd default_regularization(const MatrixXd &joint, double scale = 1e-6);

/// Stacks inputs over outputs into the (I+O) x M joint data matrix.
MatrixXd joint_data(const TrainingSet &set);

/// EM with k-means++ seeding. `joint` holds one sample per column; the first
/// `input_dim` rows are inputs. `reg` is added to every covariance diagonal.
GmmModel em_fit(const MatrixXd &joint, Index input_dim, Index components, std::uint64_t seed,
                const VectorXd &reg, const EmOptions &options = {}, EmReport *report = nullptr);
GmmModel em_fit(const MatrixXd &joint, Index input_dim, Index components, std::uint64_t seed, double reg,
                const EmOptions &options = {}, EmReport *report = nullptr);

/// Log-density of the full joint mixture at every column of `points`.
VectorXd log_density(const GmmModel &model, const MatrixXd &points);

/// Log-density of the input marginal at every column of `inputs`.
VectorXd marginal_log_density(const GmmModel &model, const MatrixXd &inputs);

/// Precomputed Gaussian mixture regression from inputs to outputs.
class GmrConditioner {
public:
    explicit GmrConditioner(const GmmModel &model);

    /// Conditional mean and moment-matched covariance of the outputs at `s`.
    /// When every responsibility underflows the components are weighted
    /// uniformly.
    std::pair<VectorXd, MatrixXd> condition(const Eigen::Ref<const VectorXd> &s) const;

    VectorXd responsibilities(const Eigen::Ref<const VectorXd> &s) const;

private:
    struct Component {
        double log_weight;
        VectorXd mean_in;
        VectorXd mean_out;
        Eigen::LLT<MatrixXd> in_factor;
        double log_norm;   // -0.5 * (I log 2pi + log det)
        MatrixXd gain;     // Sigma_os Sigma_ss^-1
        MatrixXd cond_cov; // Sigma_oo - gain Sigma_so
    };
    std::vector<Component> components_;
    Index input_dim_;
    Index output_dim_;
};

std::pair<VectorXd, MatrixXd> gmr_condition(const GmmModel &model, const Eigen::Ref<const VectorXd> &s);

/// N conditional reference distributions {s_n, mu_n, Sigma_n}.
struct ReferenceSet {
    MatrixXd inputs;                    ///< I x N
    MatrixXd means;                     ///< O x N
    std::vector<MatrixXd> covariances;  ///< N of O x O

    Index size() const { return inputs.cols(); }
    Index input_dim() const { return inputs.rows(); }
    Index output_dim() const { return means.rows(); }
};

/// Draws N inputs from the input marginal and conditions each through GMR.
ReferenceSet build_reference_set(const GmmModel &model, Index n_refs, std::uint64_t seed);

nlohmann::json to_json(const GmmModel &model);
GmmModel gmm_from_json(const nlohmann::json &doc);

nlohmann::json to_json(const ReferenceSet &refs);
ReferenceSet reference_set_from_json(const nlohmann::json &doc);

}  // namespace ctxkmp
