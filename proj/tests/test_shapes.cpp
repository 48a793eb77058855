#include "doctest.h"

#include "ctxkmp/errors.hpp"
#include "ctxkmp/shapes.hpp"
#include "support.hpp"

using namespace ctxkmp;

TEST_CASE("every built-in shape ends at the origin") {
    REQUIRE(handwriting_shapes().size() >= 5);
    for (const ShapeTemplate &shape : handwriting_shapes()) {
        const TrainingSet s = generate_shape_set(shape, 3, 1);
        CHECK(s.dims == Dims{0, 2});
        for (Index h = 0; h < 3; ++h) CHECK(s.goal_positions.col(h).norm() < 1e-12);
    }
    CHECK_THROWS_AS(handwriting_shape("NoSuchShape"), ConfigError);
}

TEST_CASE("shape sets are deterministic in the seed") {
    const ShapeTemplate &z = handwriting_shape("Zshape");
    CHECK(generate_shape_set(z, 3, 4).inputs == generate_shape_set(z, 3, 4).inputs);
    CHECK(generate_shape_set(z, 3, 4).inputs != generate_shape_set(z, 3, 5).inputs);
}

TEST_CASE("zero cluster spread puts every demo exactly on its center") {
    std::vector<ShapeTemplate> letters{handwriting_shape("Zshape"), handwriting_shape("Sshape"),
                                       handwriting_shape("JShape")};
    std::vector<VectorXd> centers{Eigen::Vector2d(0, 0), Eigen::Vector2d(1, 1), Eigen::Vector2d(2, 2)};
    const TrainingSet s = generate_context_letter_set(letters, centers, 0.0, 2, 3);
    REQUIRE(s.num_demonstrations() == 6);
    for (Index h = 0; h < 6; ++h) {
        const MatrixXd &c = *s.demonstrations[static_cast<std::size_t>(h)].contexts;
        for (Index t = 0; t < c.cols(); ++t) CHECK(c.col(t) == centers[static_cast<std::size_t>(h / 2)]);
    }
}

TEST_CASE("three letters with three demos each") {
    const TrainingSet s = testing::letter_set(3, 9);
    CHECK(s.num_demonstrations() == 9);
    CHECK(s.dims.context == 2);
    CHECK(s.dims.input() == 4);
    CHECK(s.inputs == testing::letter_set(3, 9).inputs);
}

TEST_CASE("letter set argument checks") {
    std::vector<ShapeTemplate> two{handwriting_shape("Zshape"), handwriting_shape("Sshape")};
    std::vector<VectorXd> centers{Eigen::Vector2d(0, 0), Eigen::Vector2d(1, 1)};
    CHECK_THROWS_AS(generate_context_letter_set(two, centers, 0.1, 2, 1), ConfigError);
}
