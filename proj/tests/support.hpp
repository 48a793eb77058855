#pragma once

// Shared fixtures: small, fast models trained once per test binary.

#include <filesystem>
#include <random>
#include <string>

#include "ctxkmp/pipeline.hpp"
#include "ctxkmp/shapes.hpp"

namespace testing {

using namespace ctxkmp;

inline RunConfig small_config() {
    RunConfig c;
    c.components = 6;
    c.n_refs = 80;
    return c;
}

// One planar shape, C = 0. Trained lazily and shared.
inline const TrainedModel &planar_model() {
    static const TrainedModel m = [] {
        const TrainingSet data = generate_shape_set(handwriting_shape("Angle"), 4, 11);
        return train(data, small_config());
    }();
    return m;
}

inline TrainingSet letter_set(Index demos = 3, std::uint64_t seed = 5) {
    std::vector<ShapeTemplate> letters{handwriting_shape("Zshape"), handwriting_shape("Sshape"),
                                       handwriting_shape("JShape")};
    std::vector<VectorXd> centers{Eigen::Vector2d(0, 0), Eigen::Vector2d(1, 1), Eigen::Vector2d(2, 2)};
    return generate_context_letter_set(letters, centers, 0.02, demos, seed);
}

// Three letters with C = 2 contexts.
inline const TrainedModel &context_model() {
    static const TrainedModel m = [] {
        RunConfig c = RunConfig::context_defaults();
        c.components = 9;
        c.n_refs = 150;
        return train(letter_set(), c);
    }();
    return m;
}

inline VectorXd uniform_vector(std::mt19937_64 &rng, Index n, double lo, double hi) {
    std::uniform_real_distribution<double> u(lo, hi);
    VectorXd v(n);
    for (Index i = 0; i < n; ++i) v(i) = u(rng);
    return v;
}

struct TempDir {
    std::filesystem::path path;
    explicit TempDir(const std::string &tag) {
        path = std::filesystem::temp_directory_path() /
               ("ctxkmp_" + tag + "_" + std::to_string(std::random_device{}()));
        std::filesystem::create_directories(path);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path, ec);
    }
};

}  // namespace testing
