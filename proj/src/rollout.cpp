#include "ctxkmp/rollout.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <random>
#include <thread>

#include "json_eigen.hpp"

namespace ctxkmp {

using nlohmann::json;

ContextSchedule ContextSchedule::none() { return ContextSchedule{}; }

ContextSchedule ContextSchedule::constant(VectorXd context) {
    ContextSchedule s;
    s.kind_ = Kind::Constant;
    s.dims_ = context.size();
    s.segments_.emplace_back(0, std::move(context));
    return s;
}

ContextSchedule ContextSchedule::piecewise(std::vector<std::pair<Index, VectorXd>> segments) {
    if (segments.empty() || segments.front().first != 0) {
        throw ConfigError("piecewise context schedule must start at iteration 0");
    }
    for (std::size_t i = 1; i < segments.size(); ++i) {
        if (segments[i].first <= segments[i - 1].first) {
            throw ConfigError("piecewise context schedule must be strictly sorted by start iteration");
        }
        if (segments[i].second.size() != segments.front().second.size()) {
            throw DimensionError("piecewise context schedule mixes context dimensions");
        }
    }
    ContextSchedule s;
    s.kind_ = Kind::Piecewise;
    s.dims_ = segments.front().second.size();
    s.segments_ = std::move(segments);
    return s;
}

ContextSchedule ContextSchedule::external(Index dims) {
    ContextSchedule s;
    s.kind_ = Kind::External;
    s.dims_ = dims;
    return s;
}

VectorXd ContextSchedule::at(Index iteration) const {
    switch (kind_) {
        case Kind::None:
            return VectorXd(0);
        case Kind::External:
            throw UsageError("an external context schedule is driven by its caller");
        case Kind::Constant:
        case Kind::Piecewise: {
            const auto it = std::upper_bound(segments_.begin(), segments_.end(), iteration,
                                             [](Index t, const auto &seg) { return t < seg.first; });
            return std::prev(it)->second;
        }
    }
    return VectorXd(0);
}

void RolloutConfig::validate() const {
    if (max_iters < 1) throw ConfigError("max_iters must be at least 1");
    if (!(success_radius > 0.0)) throw ConfigError("success_radius must be positive");
    if (!(dt > 0.0)) throw ConfigError("dt must be positive");
    if (!(max_step > 0.0)) throw ConfigError("max_step must be positive");
    if (!x0.allFinite()) throw InputError("start position is not finite");
}

RolloutStepper::RolloutStepper(const KmpModel &model, const GoalSet &goals, const FusionParams &params,
                               Strategy strategy, const RolloutConfig &config)
    : model_(model), goals_(goals), params_(params), strategy_(strategy), config_(config), x_(config.x0) {
    config_.validate();
    params_.validate();
    if (x_.size() != model_.output_dim()) {
        throw DimensionError("start position has dimension " + std::to_string(x_.size()) + ", expected " +
                             std::to_string(model_.output_dim()));
    }
    if (goals_.size() == 0) throw ConfigError("rollout needs at least one goal");
}

const TraceStep &RolloutStepper::step(const Eigen::Ref<const VectorXd> &context) {
    if (status_ != Status::Running) throw UsageError("rollout already terminated");
    const Index c = model_.input_dim() - model_.output_dim();
    if (context.size() != c) {
        throw DimensionError("context has dimension " + std::to_string(context.size()) + ", model expects " +
                             std::to_string(c));
    }
    VectorXd s(model_.input_dim());
    s << context, x_;
    FusedAction action = fused_action(model_, s, goals_, params_, strategy_, CovarianceMode::Skip);

    const double distance = (x_ - goals_.positions.col(action.coefficients.goal_index)).norm();
    trace_.push_back(TraceStep{iteration_, std::move(s), action.mean, action.coefficients, action.epistemic});

    if (distance < config_.success_radius) {
        status_ = Status::Succeeded;
        terminal_distance_ = distance;
        return trace_.back();
    }
    if (iteration_ >= config_.max_iters) {
        status_ = Status::Failed;
        terminal_distance_ = distance;
        return trace_.back();
    }
    const VectorXd dx = config_.dt * action.mean;
    const double step_norm = dx.norm();
    if (!dx.allFinite() || !(step_norm <= config_.max_step)) {
        status_ = Status::Failed;
        terminal_distance_ = distance;
        throw DivergedError("rollout diverged at iteration " + std::to_string(iteration_) + " (step norm " +
                                std::to_string(step_norm) + ")",
                            result());
    }
    x_ += dx;
    ++iteration_;
    return trace_.back();
}

RolloutResult RolloutStepper::result() const {
    RolloutResult r;
    r.trace = trace_;
    r.success = status_ == Status::Succeeded;
    r.iterations = r.success ? iteration_ : config_.max_iters;
    r.terminal_distance = terminal_distance_;
    return r;
}

RolloutResult rollout(const KmpModel &model, const GoalSet &goals, const FusionParams &params,
                      const RolloutConfig &config, Strategy strategy) {
    if (config.schedule.kind() == ContextSchedule::Kind::External) {
        throw UsageError("offline rollouts need a none, constant or piecewise context schedule");
    }
    RolloutStepper stepper(model, goals, params, strategy, config);
    while (stepper.status() == RolloutStepper::Status::Running) {
        stepper.step(config.schedule.at(stepper.iteration()));
    }
    return stepper.result();
}

std::pair<double, Index> squared_distance_sum(const std::vector<TraceStep> &trace, Index position_dim,
                                              const MatrixXd &demo_positions) {
    if (demo_positions.cols() == 0) throw DataError("no demonstrated positions to compare against");
    double total = 0.0;
    for (const TraceStep &t : trace) {
        const auto x = t.s.tail(position_dim);
        total += (demo_positions.colwise() - x).colwise().squaredNorm().minCoeff();
    }
    return {total, static_cast<Index>(trace.size())};
}

double rms_to_demos(const std::vector<TraceStep> &trace, Index position_dim, const MatrixXd &demo_positions) {
    if (trace.empty()) throw DataError("RMS of an empty trace");
    const auto [sum, count] = squared_distance_sum(trace, position_dim, demo_positions);
    return std::sqrt(sum / static_cast<double>(count));
}

EvalReport evaluate(const KmpModel &model, const GoalSet &goals, const FusionParams &params, const MatrixXd &starts,
                    const RolloutConfig &base, Strategy strategy, const MatrixXd &demo_positions, unsigned threads) {
    return evaluate(model, goals, params, starts, std::vector<ContextSchedule>(static_cast<std::size_t>(starts.cols()), base.schedule),
                    base, strategy, demo_positions, threads);
}

EvalReport evaluate(const KmpModel &model, const GoalSet &goals, const FusionParams &params, const MatrixXd &starts,
                    const std::vector<ContextSchedule> &schedules, const RolloutConfig &base, Strategy strategy,
                    const MatrixXd &demo_positions, unsigned threads) {
    const Index trials = starts.cols();
    if (trials < 1) throw ConfigError("evaluation needs at least one start");
    if (static_cast<Index>(schedules.size()) != trials) throw ConfigError("one context schedule per start is required");

    struct Outcome {
        bool success = false;
        bool diverged = false;
        Index iterations = 0;
        double sq_sum = 0;
        Index visited = 0;
    };
    std::vector<Outcome> outcomes(static_cast<std::size_t>(trials));
    const Index p = model.output_dim();

    auto run = [&](Index t) {
        RolloutConfig cfg = base;
        cfg.x0 = starts.col(t);
        cfg.schedule = schedules[static_cast<std::size_t>(t)];
        Outcome &o = outcomes[static_cast<std::size_t>(t)];
        RolloutResult r;
        try {
            r = rollout(model, goals, params, cfg, strategy);
        } catch (const DivergedError &e) {
            r = e.partial();
            r.success = false;
            r.iterations = cfg.max_iters;
            o.diverged = true;
        }
        o.success = r.success;
        o.iterations = r.iterations;
        if (!r.trace.empty()) std::tie(o.sq_sum, o.visited) = squared_distance_sum(r.trace, p, demo_positions);
    };

    if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
    threads = static_cast<unsigned>(std::min<Index>(threads, trials));
    if (threads <= 1) {
        for (Index t = 0; t < trials; ++t) run(t);
    } else {
        std::vector<std::exception_ptr> errors(threads);
        std::vector<std::thread> pool;
        for (unsigned w = 0; w < threads; ++w) {
            pool.emplace_back([&, w] {
                try {
                    for (Index t = w; t < trials; t += threads) run(t);
                } catch (...) {
                    errors[w] = std::current_exception();
                }
            });
        }
        for (auto &th : pool) th.join();
        for (auto &e : errors) {
            if (e) std::rethrow_exception(e);
        }
    }

    EvalReport report;
    report.strategy = strategy;
    report.trials = trials;
    double iter_sum = 0.0;
    double sq_sum = 0.0;
    Index visited = 0;
    for (const Outcome &o : outcomes) {
        report.successes += o.success ? 1 : 0;
        report.diverged += o.diverged ? 1 : 0;
        iter_sum += static_cast<double>(o.iterations);
        sq_sum += o.sq_sum;
        visited += o.visited;
    }
    report.success_pct = 100.0 * static_cast<double>(report.successes) / static_cast<double>(trials);
    report.avg_iterations = iter_sum / static_cast<double>(trials);
    report.rms = visited > 0 ? std::sqrt(sq_sum / static_cast<double>(visited)) : 0.0;
    report.states = visited;
    report.squared_distance = sq_sum;
    return report;
}

EvalReport pool_reports(std::span<const EvalReport> reports) {
    if (reports.empty()) throw ConfigError("nothing to pool");
    EvalReport out;
    out.strategy = reports.front().strategy;
    double iter_sum = 0.0;
    for (const EvalReport &r : reports) {
        if (r.strategy != out.strategy) throw ConfigError("pooled reports mix strategies");
        out.trials += r.trials;
        out.successes += r.successes;
        out.diverged += r.diverged;
        out.states += r.states;
        out.squared_distance += r.squared_distance;
        iter_sum += r.avg_iterations * static_cast<double>(r.trials);
    }
    out.success_pct = 100.0 * static_cast<double>(out.successes) / static_cast<double>(out.trials);
    out.avg_iterations = iter_sum / static_cast<double>(out.trials);
    out.rms = out.states > 0 ? std::sqrt(out.squared_distance / static_cast<double>(out.states)) : 0.0;
    return out;
}

Box bounding_box(const MatrixXd &positions, double inflation) {
    if (positions.cols() == 0) throw DataError("bounding box of no positions");
    Box box{positions.rowwise().minCoeff(), positions.rowwise().maxCoeff()};
    const VectorXd pad = inflation * (box.upper - box.lower);
    box.lower -= pad;
    box.upper += pad;
    return box;
}

MatrixXd random_starts(const Box &box, Index n, std::uint64_t seed) {
    if (n < 1) throw ConfigError("at least one start is required");
    if (box.lower.size() != box.upper.size() || box.lower.size() == 0) throw ConfigError("malformed start box");
    for (Index i = 0; i < box.lower.size(); ++i) {
        if (!(box.upper(i) > box.lower(i))) {
            throw ConfigError("start box has zero width along dimension " + std::to_string(i));
        }
    }
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    MatrixXd out(box.lower.size(), n);
    for (Index j = 0; j < n; ++j) {
        for (Index i = 0; i < box.lower.size(); ++i) {
            out(i, j) = box.lower(i) + unit(rng) * (box.upper(i) - box.lower(i));
        }
    }
    return out;
}

std::vector<FieldRecord> vector_field_grid(const KmpModel &model, const GoalSet &goals, const FusionParams &params,
                                           const GridSpec &grid, const Eigen::Ref<const VectorXd> &context,
                                           Strategy strategy) {
    if (model.output_dim() != 2) {
        throw DimensionError("vector fields are only exported for planar positions (P = 2), got P = " +
                             std::to_string(model.output_dim()));
    }
    if (grid.nx < 2 || grid.ny < 2) throw ConfigError("field lattice must be at least 2 x 2");
    if (!(grid.x_max > grid.x_min) || !(grid.y_max > grid.y_min)) throw ConfigError("field lattice has an empty range");
    const Index c = model.input_dim() - 2;
    if (context.size() != c) {
        throw DimensionError("field context has dimension " + std::to_string(context.size()) + ", model expects " +
                             std::to_string(c));
    }
    std::vector<FieldRecord> out;
    out.reserve(static_cast<std::size_t>(grid.nx * grid.ny));
    VectorXd s(model.input_dim());
    s.head(c) = context;
    for (Index r = 0; r < grid.ny; ++r) {
        const double y = grid.y_min + (grid.y_max - grid.y_min) * static_cast<double>(r) / static_cast<double>(grid.ny - 1);
        for (Index col = 0; col < grid.nx; ++col) {
            const double x =
                grid.x_min + (grid.x_max - grid.x_min) * static_cast<double>(col) / static_cast<double>(grid.nx - 1);
            s(c) = x;
            s(c + 1) = y;
            const FusedAction a = fused_action(model, s, goals, params, strategy, CovarianceMode::Skip);
            out.push_back(FieldRecord{x, y, a.mean(0), a.mean(1), a.epistemic});
        }
    }
    return out;
}

namespace {
std::string num(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.10g", v);
    return buf;
}
}  // namespace

void write_report_csv(std::ostream &out, const std::vector<EvalReport> &reports) {
    out << "strategy,success_pct,avg_iterations,rms\n";
    for (const EvalReport &r : reports) {
        out << to_string(r.strategy) << ',' << num(r.success_pct) << ',' << num(r.avg_iterations) << ','
            << num(r.rms) << '\n';
    }
}

void write_field_csv(std::ostream &out, const std::vector<FieldRecord> &field) {
    out << "x,y,ux,uy,sigma_ep\n";
    for (const FieldRecord &f : field) {
        out << num(f.x) << ',' << num(f.y) << ',' << num(f.ux) << ',' << num(f.uy) << ',' << num(f.sigma_ep) << '\n';
    }
}

json field_to_json(const GridSpec &grid, const std::vector<FieldRecord> &field) {
    json doc;
    doc["grid"] = {{"x_min", grid.x_min}, {"x_max", grid.x_max}, {"y_min", grid.y_min},
                   {"y_max", grid.y_max}, {"nx", grid.nx},       {"ny", grid.ny}};
    json rows = json::array();
    for (const FieldRecord &f : field) {
        rows.push_back({{"x", f.x}, {"y", f.y}, {"ux", f.ux}, {"uy", f.uy}, {"sigma_ep", f.sigma_ep}});
    }
    doc["points"] = std::move(rows);
    return doc;
}

json to_json(const TraceStep &step) {
    return json{{"iteration", step.iteration},
                {"s", detail::vector_to_json(step.s)},
                {"velocity", detail::vector_to_json(step.velocity)},
                {"coefficients",
                 {{"pi_kmp", step.coefficients.pi_kmp},
                  {"pi_sp", step.coefficients.pi_sp},
                  {"pi_g", step.coefficients.pi_g},
                  {"k_max", step.coefficients.k_max},
                  {"goal_index", step.coefficients.goal_index}}},
                {"sigma_ep", step.epistemic}};
}

}  // namespace ctxkmp
