#include "ctxkmp/gmm.hpp"

#include <cmath>
#include <iostream>
#include <limits>
#include <numbers>
#include <random>

#include "ctxkmp/errors.hpp"
#include "json_eigen.hpp"

namespace ctxkmp {

using nlohmann::json;

namespace {

constexpr int kGmmVersion = 1;
const double kLog2Pi = std::log(2.0 * std::numbers::pi);

struct GaussianFactor {
    Eigen::LLT<MatrixXd> llt;
    double log_norm = 0.0;
};

bool factorize(const MatrixXd &cov, GaussianFactor &out) {
    out.llt.compute(cov);
    if (out.llt.info() != Eigen::Success) return false;
    const VectorXd diag = out.llt.matrixLLT().diagonal();
    if ((diag.array() <= 0.0).any() || !diag.allFinite()) return false;
    out.log_norm = -0.5 * (static_cast<double>(cov.rows()) * kLog2Pi) - diag.array().log().sum();
    return true;
}

// log N(x_j | mean, cov) for every column x_j.
VectorXd gaussian_log_pdf(const MatrixXd &points, const VectorXd &mean, const GaussianFactor &f) {
    MatrixXd centered = points.colwise() - mean;
    f.llt.matrixL().solveInPlace(centered);
    return (f.log_norm - 0.5 * centered.colwise().squaredNorm().array()).matrix().transpose();
}

double log_sum_exp(const Eigen::Ref<const Eigen::RowVectorXd> &row) {
    const double hi = row.maxCoeff();
    if (!std::isfinite(hi)) return hi;
    return hi + std::log((row.array() - hi).exp().sum());
}

// Responsibility matrix (M x K) and per-sample log-likelihood from log joint terms.
void normalize_rows(MatrixXd &log_terms, VectorXd &log_sums) {
    log_sums.resize(log_terms.rows());
    for (Index i = 0; i < log_terms.rows(); ++i) {
        const double ls = log_sum_exp(log_terms.row(i));
        log_sums(i) = ls;
        if (std::isfinite(ls)) {
            log_terms.row(i) = (log_terms.row(i).array() - ls).exp();
        } else {
            log_terms.row(i).setConstant(1.0 / static_cast<double>(log_terms.cols()));
        }
    }
}

VectorXd data_variance(const MatrixXd &joint) {
    const VectorXd mean = joint.rowwise().mean();
    return (joint.colwise() - mean).array().square().rowwise().mean();
}

// k-means++ seeding followed by hard assignment; returns one-hot responsibilities.
MatrixXd kmeanspp_assignment(const MatrixXd &joint, Index k, std::mt19937_64 &rng) {
    const Index m = joint.cols();
    std::vector<Index> centers;
    std::uniform_int_distribution<Index> pick(0, m - 1);
    centers.push_back(pick(rng));
    VectorXd d2 = (joint.colwise() - joint.col(centers.back())).colwise().squaredNorm().transpose();
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    while (static_cast<Index>(centers.size()) < k) {
        const double total = d2.sum();
        Index chosen = 0;
        if (total > 0.0) {
            const double target = unit(rng) * total;
            double acc = 0.0;
            chosen = m - 1;
            for (Index i = 0; i < m; ++i) {
                acc += d2(i);
                if (acc >= target && d2(i) > 0.0) {
                    chosen = i;
                    break;
                }
            }
        } else {
            chosen = pick(rng);
        }
        centers.push_back(chosen);
        d2 = d2.cwiseMin((joint.colwise() - joint.col(chosen)).colwise().squaredNorm().transpose());
    }

    MatrixXd resp = MatrixXd::Zero(m, k);
    for (Index i = 0; i < m; ++i) {
        Index best = 0;
        double best_d = std::numeric_limits<double>::infinity();
        for (Index c = 0; c < k; ++c) {
            const double d = (joint.col(i) - joint.col(centers[static_cast<std::size_t>(c)])).squaredNorm();
            if (d < best_d) {
                best_d = d;
                best = c;
            }
        }
        resp(i, best) = 1.0;
    }
    return resp;
}

}  // namespace

VectorXd default_regularization(const MatrixXd &joint, double scale) {
    VectorXd var = data_variance(joint);
    for (Index i = 0; i < var.size(); ++i) {
        if (!(var(i) > 0.0)) var(i) = 1.0;
    }
    return scale * var;
}

MatrixXd joint_data(const TrainingSet &set) {
    MatrixXd joint(set.inputs.rows() + set.outputs.rows(), set.num_samples());
    joint << set.inputs, set.outputs;
    return joint;
}

GmmModel em_fit(const MatrixXd &joint, Index input_dim, Index components, std::uint64_t seed, double reg,
                const EmOptions &options, EmReport *report) {
    return em_fit(joint, input_dim, components, seed, VectorXd::Constant(joint.rows(), reg), options, report);
}

GmmModel em_fit(const MatrixXd &joint, Index input_dim, Index components, std::uint64_t seed,
                const VectorXd &reg, const EmOptions &options, EmReport *report) {
    const Index d = joint.rows();
    const Index m = joint.cols();
    if (m == 0) throw DataError("EM needs at least one sample");
    if (components < 1) throw ConfigError("EM needs at least one component");
    if (m < components) {
        throw DataError("EM needs at least as many samples (" + std::to_string(m) + ") as components (" +
                        std::to_string(components) + ")");
    }
    if (input_dim < 1 || input_dim >= d) throw DimensionError("input dimension must lie in [1, joint dim)");
    if (reg.size() != d || (reg.array() < 0.0).any()) throw ConfigError("regularization must be non-negative per dimension");
    if (!joint.allFinite()) throw DataError("EM samples contain non-finite values");

    std::mt19937_64 rng(seed);
    const VectorXd variance = data_variance(joint);
    MatrixXd resp = kmeanspp_assignment(joint, components, rng);

    GmmModel model;
    model.input_dim = input_dim;
    model.output_dim = d - input_dim;
    model.seed = seed;
    model.weights.resize(components);
    model.means.assign(static_cast<std::size_t>(components), VectorXd::Zero(d));
    model.covariances.assign(static_cast<std::size_t>(components), MatrixXd::Identity(d, d));

    EmReport local;
    EmReport &rep = report ? *report : local;
    rep = EmReport{};

    VectorXd log_sums = VectorXd::Zero(m);
    std::vector<GaussianFactor> factors(static_cast<std::size_t>(components));

    auto m_step = [&](Index iteration) {
        std::vector<bool> used(static_cast<std::size_t>(m), false);
        bool reseeded = false;
        for (Index k = 0; k < components; ++k) {
            const auto uk = static_cast<std::size_t>(k);
            const double nk = resp.col(k).sum();
            bool collapsed = !(nk >= 1.0);
            if (!collapsed) {
                VectorXd mean = joint * resp.col(k) / nk;
                const MatrixXd centered = joint.colwise() - mean;
                MatrixXd cov = centered * resp.col(k).asDiagonal() * centered.transpose() / nk;
                cov = 0.5 * (cov + cov.transpose()).eval();
                cov.diagonal() += reg;
                GaussianFactor probe;
                if (factorize(cov, probe)) {
                    model.weights(k) = nk / static_cast<double>(m);
                    model.means[uk] = std::move(mean);
                    model.covariances[uk] = std::move(cov);
                } else {
                    collapsed = true;
                }
            }
            if (collapsed) {
                // Reseed from the worst-explained sample not used yet.
                Index worst = 0;
                double lowest = std::numeric_limits<double>::infinity();
                for (Index i = 0; i < m; ++i) {
                    if (!used[static_cast<std::size_t>(i)] && log_sums(i) < lowest) {
                        lowest = log_sums(i);
                        worst = i;
                    }
                }
                used[static_cast<std::size_t>(worst)] = true;
                std::cerr << "[gmm] warning: component " << k << " collapsed at iteration " << iteration
                          << ", reseeding from sample " << worst << '\n';
                model.means[uk] = joint.col(worst);
                MatrixXd cov = (variance / static_cast<double>(components)).asDiagonal();
                cov.diagonal() += reg;
                model.covariances[uk] = std::move(cov);
                model.weights(k) = 1.0 / static_cast<double>(m);
                reseeded = true;
            }
        }
        model.weights /= model.weights.sum();
        if (reseeded) rep.reseeded_at.push_back(iteration);
    };

    m_step(0);
    double previous = -std::numeric_limits<double>::infinity();
    for (Index it = 0; it < options.max_iterations; ++it) {
        MatrixXd log_terms(m, components);
        for (Index k = 0; k < components; ++k) {
            const auto uk = static_cast<std::size_t>(k);
            if (!factorize(model.covariances[uk], factors[uk])) {
                throw NumericalError("EM covariance of component " + std::to_string(k) + " is not positive definite");
            }
            log_terms.col(k) = gaussian_log_pdf(joint, model.means[uk], factors[uk]).array() + std::log(model.weights(k));
        }
        normalize_rows(log_terms, log_sums);
        resp = std::move(log_terms);
        const double ll = log_sums.sum();
        rep.log_likelihood.push_back(ll);
        rep.iterations = it + 1;
        if (it > 0 && ll - previous < options.tolerance * std::abs(previous)) {
            rep.converged = true;
            break;
        }
        previous = ll;
        m_step(it + 1);
    }
    return model;
}

VectorXd log_density(const GmmModel &model, const MatrixXd &points) {
    MatrixXd terms(points.cols(), model.components());
    for (Index k = 0; k < model.components(); ++k) {
        GaussianFactor f;
        if (!factorize(model.covariances[static_cast<std::size_t>(k)], f)) {
            throw NumericalError("GMM covariance " + std::to_string(k) + " is not positive definite");
        }
        terms.col(k) = gaussian_log_pdf(points, model.means[static_cast<std::size_t>(k)], f).array() +
                       std::log(model.weights(k));
    }
    VectorXd out(points.cols());
    for (Index i = 0; i < points.cols(); ++i) out(i) = log_sum_exp(terms.row(i));
    return out;
}

VectorXd marginal_log_density(const GmmModel &model, const MatrixXd &inputs) {
    GmmModel marginal;
    marginal.input_dim = model.input_dim;
    marginal.weights = model.weights;
    for (Index k = 0; k < model.components(); ++k) {
        const auto uk = static_cast<std::size_t>(k);
        marginal.means.push_back(model.means[uk].head(model.input_dim));
        marginal.covariances.push_back(model.covariances[uk].topLeftCorner(model.input_dim, model.input_dim));
    }
    return log_density(marginal, inputs);
}

GmrConditioner::GmrConditioner(const GmmModel &model) : input_dim_(model.input_dim), output_dim_(model.output_dim) {
    const Index in = input_dim_;
    const Index out = output_dim_;
    for (Index k = 0; k < model.components(); ++k) {
        const auto uk = static_cast<std::size_t>(k);
        const MatrixXd &cov = model.covariances[uk];
        Component c;
        c.log_weight = std::log(model.weights(k));
        c.mean_in = model.means[uk].head(in);
        c.mean_out = model.means[uk].tail(out);
        GaussianFactor f;
        if (!factorize(cov.topLeftCorner(in, in), f)) {
            throw NumericalError("GMR input covariance of component " + std::to_string(k) + " is not positive definite");
        }
        c.in_factor = f.llt;
        c.log_norm = f.log_norm;
        // gain = Sigma_os Sigma_ss^-1, via the symmetric solve Sigma_ss X = Sigma_so.
        c.gain = c.in_factor.solve(cov.bottomLeftCorner(out, in).transpose()).transpose();
        c.cond_cov = cov.bottomRightCorner(out, out) - c.gain * cov.bottomLeftCorner(out, in).transpose();
        c.cond_cov = 0.5 * (c.cond_cov + c.cond_cov.transpose()).eval();
        components_.push_back(std::move(c));
    }
}

VectorXd GmrConditioner::responsibilities(const Eigen::Ref<const VectorXd> &s) const {
    if (s.size() != input_dim_) {
        throw DimensionError("GMR query has dimension " + std::to_string(s.size()) + ", expected " +
                             std::to_string(input_dim_));
    }
    if (!s.allFinite()) throw InputError("GMR query is not finite");
    const auto k = static_cast<Index>(components_.size());
    Eigen::RowVectorXd logs(k);
    for (Index i = 0; i < k; ++i) {
        const Component &c = components_[static_cast<std::size_t>(i)];
        VectorXd z = s - c.mean_in;
        c.in_factor.matrixL().solveInPlace(z);
        logs(i) = c.log_weight + c.log_norm - 0.5 * z.squaredNorm();
    }
    const double ls = log_sum_exp(logs);
    if (!std::isfinite(ls)) return VectorXd::Constant(k, 1.0 / static_cast<double>(k));
    VectorXd h = (logs.array() - ls).exp().matrix().transpose();
    const double total = h.sum();
    if (!(total > 0.0) || !std::isfinite(total)) return VectorXd::Constant(k, 1.0 / static_cast<double>(k));
    return h / total;
}

std::pair<VectorXd, MatrixXd> GmrConditioner::condition(const Eigen::Ref<const VectorXd> &s) const {
    const VectorXd h = responsibilities(s);
    VectorXd mean = VectorXd::Zero(output_dim_);
    MatrixXd second = MatrixXd::Zero(output_dim_, output_dim_);
    for (std::size_t i = 0; i < components_.size(); ++i) {
        const Component &c = components_[i];
        const double w = h(static_cast<Index>(i));
        if (w == 0.0) continue;
        const VectorXd m = c.mean_out + c.gain * (s - c.mean_in);
        mean += w * m;
        second += w * (c.cond_cov + m * m.transpose());
    }
    MatrixXd cov = second - mean * mean.transpose();
    cov = 0.5 * (cov + cov.transpose()).eval();
    return {std::move(mean), std::move(cov)};
}

std::pair<VectorXd, MatrixXd> gmr_condition(const GmmModel &model, const Eigen::Ref<const VectorXd> &s) {
    return GmrConditioner(model).condition(s);
}

ReferenceSet build_reference_set(const GmmModel &model, Index n_refs, std::uint64_t seed) {
    if (n_refs < 1) throw ConfigError("reference set needs at least one point");
    const Index in = model.input_dim;
    std::vector<Eigen::LLT<MatrixXd>> samplers;
    for (const auto &cov : model.covariances) {
        samplers.emplace_back(cov.topLeftCorner(in, in));
        if (samplers.back().info() != Eigen::Success) {
            throw NumericalError("GMM input covariance is not positive definite");
        }
    }

    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::normal_distribution<double> gauss(0.0, 1.0);
    const GmrConditioner gmr(model);

    ReferenceSet refs;
    refs.inputs.resize(in, n_refs);
    refs.means.resize(model.output_dim, n_refs);
    refs.covariances.reserve(static_cast<std::size_t>(n_refs));
    for (Index n = 0; n < n_refs; ++n) {
        const double u = unit(rng);
        Index k = 0;
        double acc = model.weights(0);
        while (u > acc && k + 1 < model.components()) acc += model.weights(++k);
        VectorXd z(in);
        for (Index i = 0; i < in; ++i) z(i) = gauss(rng);
        const auto uk = static_cast<std::size_t>(k);
        refs.inputs.col(n) = model.means[uk].head(in) + samplers[uk].matrixL() * z;
        auto [mean, cov] = gmr.condition(refs.inputs.col(n));
        refs.means.col(n) = mean;
        refs.covariances.push_back(std::move(cov));
    }
    return refs;
}

json to_json(const GmmModel &model) {
    json doc;
    doc["version"] = kGmmVersion;
    doc["input_dim"] = model.input_dim;
    doc["output_dim"] = model.output_dim;
    doc["seed"] = model.seed;
    doc["weights"] = detail::vector_to_json(model.weights);
    json means = json::array();
    json covs = json::array();
    for (Index k = 0; k < model.components(); ++k) {
        means.push_back(detail::vector_to_json(model.means[static_cast<std::size_t>(k)]));
        covs.push_back(detail::matrix_to_json(model.covariances[static_cast<std::size_t>(k)]));
    }
    doc["means"] = std::move(means);
    doc["covariances"] = std::move(covs);
    return doc;
}

GmmModel gmm_from_json(const json &doc) {
    if (detail::field(doc, "version") != kGmmVersion) throw SchemaError("unsupported GMM version");
    GmmModel model;
    model.input_dim = detail::field(doc, "input_dim").get<Index>();
    model.output_dim = detail::field(doc, "output_dim").get<Index>();
    model.seed = detail::field(doc, "seed").get<std::uint64_t>();
    model.weights = detail::vector_from_json(detail::field(doc, "weights"), "weights");
    const json &means = detail::field(doc, "means");
    const json &covs = detail::field(doc, "covariances");
    if (!means.is_array() || !covs.is_array() || static_cast<Index>(means.size()) != model.components() ||
        static_cast<Index>(covs.size()) != model.components()) {
        throw DimensionError("GMM means/covariances do not match the number of weights");
    }
    for (std::size_t k = 0; k < means.size(); ++k) {
        model.means.push_back(detail::vector_from_json(means[k], "means"));
        model.covariances.push_back(detail::matrix_from_json(covs[k], "covariances"));
        if (model.means.back().size() != model.joint_dim() || model.covariances.back().rows() != model.joint_dim() ||
            model.covariances.back().cols() != model.joint_dim()) {
            throw DimensionError("GMM component " + std::to_string(k) + " has wrong dimension");
        }
    }
    return model;
}

json to_json(const ReferenceSet &refs) {
    json doc;
    doc["inputs"] = detail::matrix_to_json(refs.inputs.transpose());
    doc["means"] = detail::matrix_to_json(refs.means.transpose());
    json covs = json::array();
    for (const auto &c : refs.covariances) covs.push_back(detail::matrix_to_json(c));
    doc["covariances"] = std::move(covs);
    return doc;
}

ReferenceSet reference_set_from_json(const json &doc) {
    ReferenceSet refs;
    refs.inputs = detail::matrix_from_json(detail::field(doc, "inputs"), "inputs").transpose();
    refs.means = detail::matrix_from_json(detail::field(doc, "means"), "means").transpose();
    const json &covs = detail::field(doc, "covariances");
    if (!covs.is_array() || static_cast<Index>(covs.size()) != refs.size() || refs.means.cols() != refs.size()) {
        throw DimensionError("reference set arrays differ in length");
    }
    for (const auto &c : covs) {
        refs.covariances.push_back(detail::matrix_from_json(c, "covariances"));
        if (refs.covariances.back().rows() != refs.output_dim() || refs.covariances.back().cols() != refs.output_dim()) {
            throw DimensionError("reference covariance has wrong shape");
        }
    }
    return refs;
}

}  // namespace ctxkmp
