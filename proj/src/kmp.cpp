#include "ctxkmp/kmp.hpp"

#include <algorithm>

#include "ctxkmp/errors.hpp"
#include "json_eigen.hpp"

namespace ctxkmp {

using nlohmann::json;

namespace {

constexpr int kKmpVersion = 1;
constexpr double kMaxJitter = 1e-4;
constexpr double kFirstJitter = 1e-10;
// Smallest accepted squared Cholesky pivot relative to the largest diagonal
// entry; below this the solve is dominated by rounding.
constexpr double kPivotFloor = 1e-12;

bool well_conditioned(const Eigen::LLT<MatrixXd> &llt, double max_diag) {
    if (llt.info() != Eigen::Success) return false;
    const VectorXd pivots = llt.matrixLLT().diagonal();
    if (!pivots.allFinite()) return false;
    return pivots.minCoeff() > 0.0 && pivots.array().square().minCoeff() > kPivotFloor * max_diag;
}

// Factorizes `base + jitter I`, escalating jitter x10 until success or the cap.
double factorize_with_jitter(const MatrixXd &base, double jitter, Eigen::LLT<MatrixXd> &out, const char *name) {
    const double max_diag = base.diagonal().maxCoeff();
    for (;;) {
        MatrixXd shifted = base;
        shifted.diagonal().array() += jitter;
        out.compute(shifted);
        if (well_conditioned(out, max_diag + jitter)) return jitter;
        const double next = jitter > 0.0 ? jitter * 10.0 : kFirstJitter;
        if (next > kMaxJitter * (1.0 + 1e-12)) {
            throw NumericalError(std::string("cannot factorize ") + name + " even with jitter " +
                                 std::to_string(jitter));
        }
        jitter = next;
    }
}

}  // namespace

VectorXd expand_lengths(Index context_dim, double l_context, Index position_dim, double l_position) {
    VectorXd lengths(context_dim + position_dim);
    lengths.head(context_dim).setConstant(l_context);
    lengths.tail(position_dim).setConstant(l_position);
    return lengths;
}

MatrixXd regularized_kernel_matrix(const ReferenceSet &refs, const KmpHyperparams &hyper) {
    const Index n = refs.size();
    const Index o = refs.output_dim();
    const MatrixXd gram = rbf_gram(refs.inputs, hyper.lengths);
    MatrixXd big = MatrixXd::Zero(n * o, n * o);
    for (Index j = 0; j < n; ++j) {
        for (Index i = 0; i < n; ++i) {
            big.block(i * o, j * o, o, o).diagonal().setConstant(gram(i, j));
        }
        big.block(j * o, j * o, o, o) += hyper.lambda * refs.covariances[static_cast<std::size_t>(j)];
    }
    return big;
}

KmpModel::KmpModel(ReferenceSet refs, KmpHyperparams hyper)
    : KmpModel(std::move(refs), hyper, hyper.jitter, 0.0) {}

KmpModel::KmpModel(ReferenceSet refs, KmpHyperparams hyper, double plain_jitter, double regularized_jitter)
    : refs_(std::move(refs)), hyper_(std::move(hyper)) {
    const Index n = refs_.size();
    const Index o = refs_.output_dim();
    if (n < 1) throw ConfigError("KMP needs at least one reference point");
    if (!(hyper_.lambda > 0.0)) throw ConfigError("KMP lambda must be positive");
    if (hyper_.lengths.size() != refs_.input_dim()) {
        throw DimensionError("KMP has " + std::to_string(hyper_.lengths.size()) + " kernel lengths for " +
                             std::to_string(refs_.input_dim()) + " input dimensions");
    }
    if ((hyper_.lengths.array() <= 0.0).any()) throw ConfigError("KMP kernel lengths must be positive");
    if (hyper_.jitter < 0.0 || plain_jitter < 0.0 || regularized_jitter < 0.0) {
        throw ConfigError("KMP jitter must be non-negative");
    }
    if (static_cast<Index>(refs_.covariances.size()) != n || refs_.means.cols() != n) {
        throw DimensionError("reference set arrays differ in length");
    }

    inv_sq_lengths_ = hyper_.lengths.array().square().inverse();
    stacked_mu_ = Eigen::Map<const VectorXd>(refs_.means.data(), n * o);

    plain_jitter_ = factorize_with_jitter(rbf_gram(refs_.inputs, hyper_.lengths), plain_jitter, plain_factor_,
                                          "K (epistemic kernel matrix)");
    reg_jitter_ = factorize_with_jitter(regularized_kernel_matrix(refs_, hyper_), regularized_jitter, reg_factor_,
                                        "K + lambda Sigma");

    const VectorXd alpha = reg_factor_.solve(stacked_mu_);
    weights_ = Eigen::Map<const MatrixXd>(alpha.data(), o, n);
}

void KmpModel::check_query(const Eigen::Ref<const VectorXd> &s) const {
    if (s.size() != input_dim()) {
        throw DimensionError("KMP query has dimension " + std::to_string(s.size()) + ", expected " +
                             std::to_string(input_dim()));
    }
    if (!s.allFinite()) throw InputError("KMP query is not finite");
}

VectorXd KmpModel::kernel_vector(const Eigen::Ref<const VectorXd> &s) const {
    check_query(s);
    return rbf_kernel_vector(s, refs_.inputs, hyper_.lengths);
}

VectorXd KmpModel::mean(const Eigen::Ref<const VectorXd> &s) const {
    return weights_ * kernel_vector(s);
}

double KmpModel::epistemic(const Eigen::Ref<const VectorXd> &s) const {
    const VectorXd k = kernel_vector(s);
    return 1.0 - k.dot(plain_factor_.solve(k));
}

EpistemicState KmpModel::epistemic_state(const Eigen::Ref<const VectorXd> &s) const {
    const VectorXd k = kernel_vector(s);
    const VectorXd beta = plain_factor_.solve(k);
    const VectorXd w = k.cwiseProduct(beta);
    EpistemicState out;
    out.value = 1.0 - k.dot(beta);
    // grad = -2 sum_n grad k(s, s_n) beta_n,  grad k(s, s_n) = -k_n L (s - s_n)
    out.gradient = 2.0 * inv_sq_lengths_.cwiseProduct(s * w.sum() - refs_.inputs * w);
    return out;
}

Prediction KmpModel::predict(const Eigen::Ref<const VectorXd> &s) const {
    const VectorXd k = kernel_vector(s);
    const Index n = size();
    const Index o = output_dim();

    MatrixXd kstar = MatrixXd::Zero(n * o, o);
    for (Index i = 0; i < n; ++i) kstar.block(i * o, 0, o, o).diagonal().setConstant(k(i));
    const MatrixXd solved = reg_factor_.solve(kstar);
    MatrixXd core = MatrixXd::Identity(o, o) - kstar.transpose() * solved;
    core = 0.5 * (core + core.transpose()).eval();

    Prediction p;
    p.mean = weights_ * k;
    p.covariance = (static_cast<double>(n) / hyper_.lambda) * core;
    p.epistemic = 1.0 - k.dot(plain_factor_.solve(k));
    p.aleatoric = core - p.epistemic * MatrixXd::Identity(o, o);
    return p;
}

MatrixXd KmpModel::solve_regularized(const MatrixXd &rhs) const { return reg_factor_.solve(rhs); }

MatrixXd KmpModel::solve_plain(const MatrixXd &rhs) const { return plain_factor_.solve(rhs); }

KmpModel kmp_fit(ReferenceSet refs, const KmpHyperparams &hyper) { return KmpModel(std::move(refs), hyper); }

Prediction kmp_predict(const KmpModel &model, const Eigen::Ref<const VectorXd> &s) { return model.predict(s); }

VectorXd epistemic_gradient(const KmpModel &model, const Eigen::Ref<const VectorXd> &s) {
    return model.epistemic_state(s).gradient;
}

json to_json(const KmpModel &model) {
    json doc;
    doc["version"] = kKmpVersion;
    doc["lambda"] = model.hyper().lambda;
    doc["lengths"] = detail::vector_to_json(model.hyper().lengths);
    doc["jitter"] = model.hyper().jitter;
    doc["plain_jitter"] = model.plain_jitter();
    doc["regularized_jitter"] = model.regularized_jitter();
    doc["references"] = to_json(model.refs());
    return doc;
}

KmpModel kmp_from_json(const json &doc) {
    if (detail::field(doc, "version") != kKmpVersion) throw SchemaError("unsupported KMP version");
    KmpHyperparams hyper;
    hyper.lambda = detail::field(doc, "lambda").get<double>();
    hyper.lengths = detail::vector_from_json(detail::field(doc, "lengths"), "lengths");
    hyper.jitter = detail::field(doc, "jitter").get<double>();
    return KmpModel(reference_set_from_json(detail::field(doc, "references")), hyper,
                    detail::field(doc, "plain_jitter").get<double>(),
                    detail::field(doc, "regularized_jitter").get<double>());
}

}  // namespace ctxkmp
