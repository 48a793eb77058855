#include "ctxkmp/shapes.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "ctxkmp/errors.hpp"

namespace ctxkmp {

namespace {

// Uniform Catmull-Rom through the waypoints, end tangents mirrored.
Eigen::Vector2d catmull_rom(const Eigen::Matrix2Xd &w, double u) {
    const Index segments = w.cols() - 1;
    const double scaled = std::clamp(u, 0.0, 1.0) * static_cast<double>(segments);
    const Index seg = std::min<Index>(static_cast<Index>(scaled), segments - 1);
    const double t = scaled - static_cast<double>(seg);
    const Eigen::Vector2d p1 = w.col(seg);
    const Eigen::Vector2d p2 = w.col(seg + 1);
    const Eigen::Vector2d p0 = seg > 0 ? Eigen::Vector2d(w.col(seg - 1)) : Eigen::Vector2d(2.0 * p1 - p2);
    const Eigen::Vector2d p3 = seg + 2 <= segments ? Eigen::Vector2d(w.col(seg + 2)) : Eigen::Vector2d(2.0 * p2 - p1);
    const double t2 = t * t;
    const double t3 = t2 * t;
    return 0.5 * ((2.0 * p1) + (-p0 + p2) * t + (2.0 * p0 - 5.0 * p1 + 4.0 * p2 - p3) * t2 +
                  (-p0 + 3.0 * p1 - 3.0 * p2 + p3) * t3);
}

double min_jerk(double tau) {
    tau = std::clamp(tau, 0.0, 1.0);
    return tau * tau * tau * (10.0 - 15.0 * tau + 6.0 * tau * tau);
}

// Dense polyline with cumulative arc length, used to invert arc length.
struct ArcTable {
    Eigen::Matrix2Xd points;
    VectorXd length;

    explicit ArcTable(const ShapeTemplate &shape, Index samples = 4000) : points(2, samples), length(samples) {
        for (Index i = 0; i < samples; ++i) {
            points.col(i) = catmull_rom(shape.waypoints, static_cast<double>(i) / static_cast<double>(samples - 1));
        }
        length(0) = 0.0;
        for (Index i = 1; i < samples; ++i) {
            length(i) = length(i - 1) + (points.col(i) - points.col(i - 1)).norm();
        }
    }

    Eigen::Vector2d at_fraction(double f) const {
        const double target = std::clamp(f, 0.0, 1.0) * length(length.size() - 1);
        const double *begin = length.data();
        const double *end = begin + length.size();
        const auto it = std::lower_bound(begin, end, target);
        const Index hi = std::clamp<Index>(it - begin, 1, length.size() - 1);
        const Index lo = hi - 1;
        const double span = length(hi) - length(lo);
        const double a = span > 0.0 ? (target - length(lo)) / span : 0.0;
        return (1.0 - a) * points.col(lo) + a * points.col(hi);
    }
};

ShapeTemplate make_shape(std::string name, std::initializer_list<std::pair<double, double>> pts, double duration) {
    ShapeTemplate s;
    s.name = std::move(name);
    s.duration = duration;
    s.waypoints.resize(2, static_cast<Index>(pts.size()));
    Index i = 0;
    for (const auto &[x, y] : pts) {
        s.waypoints.col(i++) << x, y;
    }
    return s;
}

}  // namespace

Eigen::Matrix2Xd trace_curve(const ShapeTemplate &shape, Index n) {
    if (shape.waypoints.cols() < 2 || n < 2) {
        throw ConfigError("shape '" + shape.name + "' needs at least two waypoints and two samples");
    }
    const ArcTable table(shape);
    Eigen::Matrix2Xd out(2, n);
    for (Index i = 0; i < n; ++i) {
        out.col(i) = table.at_fraction(static_cast<double>(i) / static_cast<double>(n - 1));
    }
    return out;
}

Demonstration sample_demonstration(const ShapeTemplate &shape, const DemoVariation &variation,
                                   std::mt19937_64 &rng, std::string id) {
    if (shape.waypoints.cols() < 2) {
        throw ConfigError("shape '" + shape.name + "' needs at least two waypoints");
    }
    if (!(variation.dt > 0.0)) {
        throw ConfigError("demonstration dt must be positive");
    }
    std::normal_distribution<double> gauss(0.0, 1.0);
    const Eigen::Vector2d start_offset(variation.start_spread * gauss(rng), variation.start_spread * gauss(rng));
    const Eigen::Vector2d bump(variation.lateral_spread * gauss(rng), variation.lateral_spread * gauss(rng));
    const double duration =
        shape.duration * std::clamp(1.0 + variation.duration_spread * gauss(rng), 0.5, 1.5);

    const ArcTable table(shape);
    const Index m = std::max<Index>(2, static_cast<Index>(std::lround(duration / variation.dt)) + 1);
    Demonstration d;
    d.id = std::move(id);
    d.dt = variation.dt;
    d.positions.resize(2, m);
    for (Index t = 0; t < m; ++t) {
        const double u = min_jerk(static_cast<double>(t) / static_cast<double>(m - 1));
        const double fade = (1.0 - u) * (1.0 - u);
        d.positions.col(t) = table.at_fraction(u) + fade * start_offset + std::sin(std::numbers::pi * u) * bump;
    }
    return d;
}

const std::vector<ShapeTemplate> &handwriting_shapes() {
    static const std::vector<ShapeTemplate> shapes = {
        make_shape("Angle", {{-0.45, 0.30}, {-0.30, 0.05}, {-0.15, -0.05}, {-0.05, 0.10}, {0.0, 0.0}}, 3.0),
        make_shape("CShape", {{0.05, 0.40}, {-0.20, 0.38}, {-0.35, 0.20}, {-0.30, 0.02}, {-0.12, -0.03}, {0.0, 0.0}}, 3.2),
        make_shape("JShape", {{-0.10, 0.45}, {0.05, 0.40}, {0.08, 0.20}, {0.05, 0.0}, {-0.15, -0.08}, {-0.25, 0.02}, {0.0, 0.0}}, 3.4),
        make_shape("LShape", {{-0.40, 0.45}, {-0.38, 0.25}, {-0.35, 0.05}, {-0.25, 0.0}, {-0.12, 0.0}, {0.0, 0.0}}, 3.0),
        make_shape("NShape", {{-0.45, 0.0}, {-0.40, 0.35}, {-0.25, 0.25}, {-0.12, 0.05}, {-0.05, 0.30}, {0.0, 0.0}}, 3.4),
        make_shape("Sshape", {{0.0, 0.45}, {-0.25, 0.40}, {-0.28, 0.25}, {-0.05, 0.20}, {0.0, 0.08}, {-0.15, 0.0}, {0.0, 0.0}}, 3.4),
        make_shape("Sine", {{-0.50, 0.0}, {-0.40, 0.12}, {-0.30, 0.0}, {-0.20, -0.12}, {-0.10, 0.0}, {0.0, 0.0}}, 3.0),
        make_shape("WShape", {{-0.45, 0.30}, {-0.35, 0.0}, {-0.25, 0.20}, {-0.15, 0.0}, {-0.05, 0.30}, {0.0, 0.0}}, 3.4),
        make_shape("Zshape", {{-0.40, 0.40}, {-0.10, 0.42}, {-0.30, 0.20}, {-0.40, 0.02}, {-0.15, 0.0}, {0.0, 0.0}}, 3.4),
        make_shape("Worm", {{-0.45, 0.20}, {-0.35, 0.05}, {-0.22, 0.15}, {-0.12, 0.0}, {-0.05, 0.12}, {0.0, 0.0}}, 3.2),
    };
    return shapes;
}

const ShapeTemplate &handwriting_shape(const std::string &name) {
    for (const auto &s : handwriting_shapes()) {
        if (s.name == name) return s;
    }
    throw ConfigError("unknown shape '" + name + "'");
}

TrainingSet generate_shape_set(const ShapeTemplate &shape, Index demos, std::uint64_t seed,
                               const DemoVariation &variation) {
    if (demos < 1) throw ConfigError("at least one demonstration is required");
    std::mt19937_64 rng(seed);
    std::vector<Demonstration> list;
    for (Index h = 0; h < demos; ++h) {
        list.push_back(sample_demonstration(shape, variation, rng, shape.name + "_" + std::to_string(h)));
    }
    return make_training_set(std::move(list));
}

TrainingSet generate_context_letter_set(std::span<const ShapeTemplate> letters,
                                        std::span<const Eigen::VectorXd> cluster_centers, double cluster_std,
                                        Index demos_per_letter, std::uint64_t seed,
                                        const DemoVariation &variation) {
    if (letters.size() < 3) {
        throw ConfigError("context letter set needs 3 letter templates, got " + std::to_string(letters.size()));
    }
    if (cluster_centers.size() != letters.size()) {
        throw ConfigError("one context cluster center per letter is required");
    }
    if (demos_per_letter < 1) throw ConfigError("demos_per_letter must be at least 1");
    if (cluster_std < 0.0) throw ConfigError("cluster_std must be non-negative");
    const Index c = cluster_centers.front().size();
    for (std::size_t i = 0; i < cluster_centers.size(); ++i) {
        if (cluster_centers[i].size() != c) throw ConfigError("cluster centers differ in dimension");
        for (std::size_t j = 0; j < i; ++j) {
            if (cluster_centers[i] == cluster_centers[j]) throw ConfigError("cluster centers must be distinct");
        }
    }

    std::mt19937_64 rng(seed);
    std::normal_distribution<double> gauss(0.0, 1.0);
    std::vector<Demonstration> list;
    for (std::size_t i = 0; i < letters.size(); ++i) {
        for (Index h = 0; h < demos_per_letter; ++h) {
            Demonstration d = sample_demonstration(letters[i], variation, rng,
                                                   letters[i].name + "_ctx" + std::to_string(i) + "_" + std::to_string(h));
            VectorXd ctx = cluster_centers[i];
            for (Index k = 0; k < c; ++k) ctx(k) += cluster_std * gauss(rng);
            d.contexts = ctx.replicate(1, d.length());
            list.push_back(std::move(d));
        }
    }
    return make_training_set(std::move(list));
}

}  // namespace ctxkmp
