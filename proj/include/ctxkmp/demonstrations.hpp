#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "json.hpp"

namespace ctxkmp {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

/// Input/output dimensions of a data set. Inputs are s = [c; x], outputs are
/// Cartesian velocities, so O == P.
struct Dims {
    Index context = 0;
    Index position = 0;

    Index input() const { return context + position; }
    Index output() const { return position; }

    bool operator==(const Dims &) const = default;
};

/// One demonstrated trajectory. Samples are stored column-wise.
struct Demonstration {
    std::string id;
    double dt = 0.0;
    MatrixXd positions;                ///< P x M
    std::optional<MatrixXd> contexts;  ///< C x M, absent when C == 0

    Index length() const { return positions.cols(); }
    Index position_dim() const { return positions.rows(); }
    Index context_dim() const { return contexts ? contexts->rows() : 0; }
};

/// Single regression sample (s, xi).
struct TrainingSample {
    VectorXd input;
    VectorXd output;
};

/// Immutable training data: demonstrations plus the flattened regression
/// samples and per-demonstration goals.
struct TrainingSet {
    std::vector<Demonstration> demonstrations;
    Dims dims;
    MatrixXd inputs;          ///< I x total samples
    MatrixXd outputs;         ///< O x total samples
    MatrixXd goal_inputs;     ///< I x H, final input of every demonstration
    MatrixXd goal_positions;  ///< P x H

    Index num_samples() const { return inputs.cols(); }
    Index num_demonstrations() const { return static_cast<Index>(demonstrations.size()); }
    TrainingSample sample(Index i) const { return {inputs.col(i), outputs.col(i)}; }

    /// All demonstrated positions stacked column-wise (P x total samples).
    MatrixXd all_positions() const { return inputs.bottomRows(dims.position); }
};

/// Checks the Demonstration invariants, throwing DataError / DimensionError.
void validate(const Demonstration &demo);

/// Central differences in the interior, one-sided at both ends.
MatrixXd compute_velocities(const Demonstration &demo);

/// Assemble a TrainingSet: validates, derives velocities and extracts goals.
/// All demonstrations must agree on (C, P).
TrainingSet make_training_set(std::vector<Demonstration> demos);

TrainingSet training_set_from_json(const nlohmann::json &doc);
nlohmann::json to_json(const TrainingSet &set);

TrainingSet load_training_set(const std::filesystem::path &path);
void save_training_set(const TrainingSet &set, const std::filesystem::path &path);

}  // namespace ctxkmp
