#pragma once

#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <ostream>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "ctxkmp/errors.hpp"
#include "ctxkmp/fusion.hpp"

namespace ctxkmp {

/// Where the context part of the input comes from during a rollout.
class ContextSchedule {
public:
    enum class Kind { None, Constant, Piecewise, External };

    static ContextSchedule none();
    static ContextSchedule constant(VectorXd context);
    /// Entries sorted by start iteration, the first starting at 0.
    static ContextSchedule piecewise(std::vector<std::pair<Index, VectorXd>> segments);
    /// Context supplied step by step by the caller (live steering).
    static ContextSchedule external(Index dims);

    Kind kind() const { return kind_; }
    Index dims() const { return dims_; }
    const std::vector<std::pair<Index, VectorXd>> &segments() const { return segments_; }

    /// Context in effect at `iteration`. Not available for External.
    VectorXd at(Index iteration) const;

private:
    Kind kind_ = Kind::None;
    Index dims_ = 0;
    std::vector<std::pair<Index, VectorXd>> segments_;
};

struct RolloutConfig {
    VectorXd x0;
    ContextSchedule schedule = ContextSchedule::none();
    Index max_iters = 500;
    double success_radius = 0.01;
    double dt = 0.05;
    std::uint64_t seed = 0;
    /// Per-step displacement above which the rollout is declared diverged.
    double max_step = std::numeric_limits<double>::infinity();

    void validate() const;
};

struct TraceStep {
    Index iteration = 0;
    VectorXd s;
    VectorXd velocity;
    MixingCoefficients coefficients;
    double epistemic = 0;
};

struct RolloutResult {
    std::vector<TraceStep> trace;
    bool success = false;
    Index iterations = 0;
    double terminal_distance = 0;
};

/// Raised when the state stops being finite or jumps further than
/// RolloutConfig::max_step in one step. Carries the trace up to that point.
class DivergedError : public Error {
public:
    DivergedError(const std::string &what, RolloutResult partial)
        : Error(ErrorKind::Diverged, what), partial_(std::move(partial)) {}
    const RolloutResult &partial() const { return partial_; }

private:
    RolloutResult partial_;
};

/// Closed-loop Euler integration, one control step at a time. Shared by the
/// offline rollout and the live service sessions so both produce the same
/// trace for the same context sequence.
class RolloutStepper {
public:
    enum class Status { Running, Succeeded, Failed };

    RolloutStepper(const KmpModel &model, const GoalSet &goals, const FusionParams &params, Strategy strategy,
                   const RolloutConfig &config);

    Status status() const { return status_; }
    Index iteration() const { return iteration_; }
    const VectorXd &position() const { return x_; }
    double terminal_distance() const { return terminal_distance_; }

    /// Evaluates the policy at the current state with `context`, records the
    /// step and, unless the state is terminal, integrates one period. Throws
    /// DivergedError on a non-finite or runaway state.
    const TraceStep &step(const Eigen::Ref<const VectorXd> &context);

    const std::vector<TraceStep> &trace() const { return trace_; }
    RolloutResult result() const;

private:
    const KmpModel &model_;
    const GoalSet &goals_;
    FusionParams params_;
    Strategy strategy_;
    RolloutConfig config_;
    VectorXd x_;
    Index iteration_ = 0;
    Status status_ = Status::Running;
    double terminal_distance_ = std::numeric_limits<double>::infinity();
    std::vector<TraceStep> trace_;
};

RolloutResult rollout(const KmpModel &model, const GoalSet &goals, const FusionParams &params,
                      const RolloutConfig &config, Strategy strategy);

struct EvalReport {
    Strategy strategy = Strategy::Full;
    double success_pct = 0;
    double avg_iterations = 0;
    double rms = 0;
    Index trials = 0;
    Index successes = 0;
    Index diverged = 0;
    Index states = 0;                ///< visited states behind the RMS
    double squared_distance = 0;     ///< their summed squared distance
};

/// Pools reports of the same strategy over several models (shapes): success
/// over all trials, iterations averaged per trial, RMS over all visited states.
EvalReport pool_reports(std::span<const EvalReport> reports);

/// Sum over trace positions of the squared distance to the nearest
/// demonstrated position, with the number of positions visited.
std::pair<double, Index> squared_distance_sum(const std::vector<TraceStep> &trace, Index position_dim,
                                              const MatrixXd &demo_positions);

/// sqrt(mean over visited positions of the min squared distance to any
/// demonstrated position).
double rms_to_demos(const std::vector<TraceStep> &trace, Index position_dim, const MatrixXd &demo_positions);

/// One rollout per start column; RMS pooled over every visited state.
/// `base` supplies everything except x0. Trials may run in parallel; the
/// reduction runs in trial order.
EvalReport evaluate(const KmpModel &model, const GoalSet &goals, const FusionParams &params, const MatrixXd &starts,
                    const RolloutConfig &base, Strategy strategy, const MatrixXd &demo_positions,
                    unsigned threads = 0);

/// Same, with one context schedule per trial (overrides base.schedule).
EvalReport evaluate(const KmpModel &model, const GoalSet &goals, const FusionParams &params, const MatrixXd &starts,
                    const std::vector<ContextSchedule> &schedules, const RolloutConfig &base, Strategy strategy,
                    const MatrixXd &demo_positions, unsigned threads = 0);

struct Box {
    VectorXd lower;
    VectorXd upper;
};

/// Bounding box of the columns of `positions`, grown by `inflation` of the
/// extent on every side.
Box bounding_box(const MatrixXd &positions, double inflation = 0.2);

/// n uniform samples in the box, one per column.
MatrixXd random_starts(const Box &box, Index n, std::uint64_t seed);

struct GridSpec {
    double x_min = 0, x_max = 1;
    double y_min = 0, y_max = 1;
    Index nx = 2, ny = 2;
};

struct FieldRecord {
    double x = 0, y = 0;
    double ux = 0, uy = 0;
    double sigma_ep = 0;
};

/// Action and epistemic uncertainty on a planar lattice, row-major
/// (rows along y, columns along x).
std::vector<FieldRecord> vector_field_grid(const KmpModel &model, const GoalSet &goals, const FusionParams &params,
                                           const GridSpec &grid, const Eigen::Ref<const VectorXd> &context,
                                           Strategy strategy);

void write_report_csv(std::ostream &out, const std::vector<EvalReport> &reports);
void write_field_csv(std::ostream &out, const std::vector<FieldRecord> &field);
nlohmann::json field_to_json(const GridSpec &grid, const std::vector<FieldRecord> &field);
nlohmann::json to_json(const TraceStep &step);

}  // namespace ctxkmp
