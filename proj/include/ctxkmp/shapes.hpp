#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "ctxkmp/demonstrations.hpp"

namespace ctxkmp {

/// Planar handwriting-like motion: a smooth curve through waypoints that ends
/// at the last waypoint, traversed with a minimum-jerk timing law.
struct ShapeTemplate {
    std::string name;
    Eigen::Matrix2Xd waypoints;  ///< 2 x K, K >= 2
    double duration = 3.0;       ///< seconds
};

/// How individual demonstrations of one template differ from each other.
struct DemoVariation {
    double start_spread = 0.05;   ///< std of the start offset, fades out towards the goal
    double lateral_spread = 0.03; ///< std of a smooth mid-course bump
    double duration_spread = 0.1; ///< relative std of the duration
    double dt = 0.02;
};

/// Samples the template curve at `n` points, uniformly in arc length.
Eigen::Matrix2Xd trace_curve(const ShapeTemplate &shape, Index n);

/// One demonstration drawn around the template. Every draw ends exactly at the
/// template's final waypoint.
Demonstration sample_demonstration(const ShapeTemplate &shape, const DemoVariation &variation,
                                   std::mt19937_64 &rng, std::string id);

/// Built-in catalogue of planar shapes resembling the LASA handwriting set
/// (all end at the origin, span roughly 0.5 units).
const std::vector<ShapeTemplate> &handwriting_shapes();

/// Finds a built-in shape by name; throws ConfigError when unknown.
const ShapeTemplate &handwriting_shape(const std::string &name);

/// H demonstrations of one shape, C = 0.
TrainingSet generate_shape_set(const ShapeTemplate &shape, Index demos, std::uint64_t seed,
                               const DemoVariation &variation = {});

/// Three (or more) letters, each tied to a context cluster. The context of a
/// demonstration is drawn once from N(center, std^2 I) and held constant along it.
TrainingSet generate_context_letter_set(std::span<const ShapeTemplate> letters,
                                        std::span<const Eigen::VectorXd> cluster_centers, double cluster_std,
                                        Index demos_per_letter, std::uint64_t seed,
                                        const DemoVariation &variation = {});

}  // namespace ctxkmp
