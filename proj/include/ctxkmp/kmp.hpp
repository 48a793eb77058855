#pragma once

#include <cmath>

#include <Eigen/Cholesky>
#include <Eigen/Core>

#include "ctxkmp/gmm.hpp"
#include "json.hpp"

namespace ctxkmp {

/// exp(-1/2 (a-b)^T diag(lengths)^-2 (a-b)).
template <typename DerivedA, typename DerivedB, typename DerivedL>
typename DerivedA::Scalar rbf_kernel(const Eigen::MatrixBase<DerivedA> &a, const Eigen::MatrixBase<DerivedB> &b,
                                     const Eigen::MatrixBase<DerivedL> &lengths) {
    using std::exp;
    return exp(typename DerivedA::Scalar(-0.5) * (a - b).cwiseQuotient(lengths).squaredNorm());
}

/// Scalar kernel values k(s, x_j) for every column x_j of `points`.
template <typename DerivedS, typename DerivedX, typename DerivedL>
Eigen::Matrix<typename DerivedS::Scalar, Eigen::Dynamic, 1> rbf_kernel_vector(
    const Eigen::MatrixBase<DerivedS> &s, const Eigen::MatrixBase<DerivedX> &points,
    const Eigen::MatrixBase<DerivedL> &lengths) {
    using Scalar = typename DerivedS::Scalar;
    const auto inv = lengths.cwiseInverse().eval();
    const auto scaled = (points.colwise() - s).eval();
    return (Scalar(-0.5) * (inv.asDiagonal() * scaled).colwise().squaredNorm().array()).exp().matrix().transpose();
}

/// Gram matrix K_ij = k(x_i, x_j) over the columns of `points`. Entries are
/// evaluated exactly as rbf_kernel_vector does, so K.col(j) equals the kernel
/// vector at x_j bit for bit.
template <typename DerivedX, typename DerivedL>
Eigen::Matrix<typename DerivedX::Scalar, Eigen::Dynamic, Eigen::Dynamic> rbf_gram(
    const Eigen::MatrixBase<DerivedX> &points, const Eigen::MatrixBase<DerivedL> &lengths) {
    using Scalar = typename DerivedX::Scalar;
    const Eigen::Index n = points.cols();
    Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> gram(n, n);
    for (Eigen::Index j = 0; j < n; ++j) {
        gram.col(j) = rbf_kernel_vector(points.col(j), points, lengths);
    }
    return gram;
}

struct KmpHyperparams {
    double lambda = 0.5;
    VectorXd lengths;      ///< one positive length per input dimension
    double jitter = 5e-11; ///< added to K before inversion for the epistemic term
};

/// Expands the grouped (l_c, l_p) lengths to one entry per input dimension.
VectorXd expand_lengths(Index context_dim, double l_context, Index position_dim, double l_position);

/// Full KMP prediction at one input.
struct Prediction {
    VectorXd mean;        ///< mu_kmp
    MatrixXd covariance;  ///< Sigma_kmp, includes the N / lambda factor
    double epistemic = 0; ///< Sigma_ep (scalar, unscaled)
    MatrixXd aleatoric;   ///< Sigma_al (unscaled)
};

/// Epistemic uncertainty together with its input gradient.
struct EpistemicState {
    double value = 0;
    VectorXd gradient;  ///< I-dim, scalar form
};

/// Kernelized movement primitive over a reference set. Immutable after
/// construction and safe for concurrent queries.
class KmpModel {
public:
    /// Factorizes K + lambda Sigma (NO x NO) and K + jitter I (N x N, shared by
    /// every output dimension). Jitter escalates x10 up to 1e-4 when a
    /// factorization fails; throws NumericalError beyond that.
    KmpModel(ReferenceSet refs, KmpHyperparams hyper);

    /// Same, but escalation starts from previously recorded jitters.
    KmpModel(ReferenceSet refs, KmpHyperparams hyper, double plain_jitter, double regularized_jitter);

    const ReferenceSet &refs() const { return refs_; }
    const KmpHyperparams &hyper() const { return hyper_; }
    Index size() const { return refs_.size(); }
    Index input_dim() const { return refs_.input_dim(); }
    Index output_dim() const { return refs_.output_dim(); }

    /// Jitter actually used on K for the epistemic term.
    double plain_jitter() const { return plain_jitter_; }
    /// Diagonal shift that was needed on K + lambda Sigma (0 when none).
    double regularized_jitter() const { return reg_jitter_; }

    /// [mu_1; ...; mu_N] in reference order.
    const VectorXd &stacked_mean() const { return stacked_mu_; }

    VectorXd kernel_vector(const Eigen::Ref<const VectorXd> &s) const;

    Prediction predict(const Eigen::Ref<const VectorXd> &s) const;
    VectorXd mean(const Eigen::Ref<const VectorXd> &s) const;
    double epistemic(const Eigen::Ref<const VectorXd> &s) const;
    EpistemicState epistemic_state(const Eigen::Ref<const VectorXd> &s) const;

    /// Solves (K + lambda Sigma) X = B for an NO x m right-hand side.
    MatrixXd solve_regularized(const MatrixXd &rhs) const;
    /// Solves (K + jitter I) X = B for an N x m right-hand side.
    MatrixXd solve_plain(const MatrixXd &rhs) const;

private:
    void check_query(const Eigen::Ref<const VectorXd> &s) const;

    ReferenceSet refs_;
    KmpHyperparams hyper_;
    VectorXd inv_sq_lengths_;
    Eigen::LLT<MatrixXd> reg_factor_;
    Eigen::LLT<MatrixXd> plain_factor_;
    VectorXd stacked_mu_;
    MatrixXd weights_;  // O x N view of (K + lambda Sigma)^-1 mu
    double plain_jitter_ = 0;
    double reg_jitter_ = 0;
};

KmpModel kmp_fit(ReferenceSet refs, const KmpHyperparams &hyper);
Prediction kmp_predict(const KmpModel &model, const Eigen::Ref<const VectorXd> &s);
VectorXd epistemic_gradient(const KmpModel &model, const Eigen::Ref<const VectorXd> &s);

/// Builds the block matrix K (x) I_O + lambda blockdiag(Sigma_n).
MatrixXd regularized_kernel_matrix(const ReferenceSet &refs, const KmpHyperparams &hyper);

nlohmann::json to_json(const KmpModel &model);
/// Rebuilds the factorizations starting from the recorded jitters.
KmpModel kmp_from_json(const nlohmann::json &doc);

}  // namespace ctxkmp
