#include "ctxkmp/pipeline.hpp"

#include <chrono>
#include <cstdio>
#include <fstream>
#include <set>

#include "json_eigen.hpp"

namespace ctxkmp {

using nlohmann::json;

namespace {

constexpr int kModelVersion = 1;

template <typename F>
auto run_stage(const char *stage, double *seconds, F &&f) {
    const auto t0 = std::chrono::steady_clock::now();
    try {
        auto out = f();
        if (seconds) *seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        return out;
    } catch (const StageError &) {
        throw;
    } catch (const Error &e) {
        throw StageError(stage, e);
    }
}

}  // namespace

RunConfig RunConfig::context_defaults() {
    RunConfig c;
    c.n_refs = 1000;
    c.components = 35;
    c.l_c = 0.06;
    c.l_p = 0.04;
    return c;
}

void RunConfig::validate() const {
    if (components < 1) throw ConfigError("C (GMM components) must be at least 1");
    if (n_refs < 1) throw ConfigError("N (reference points) must be at least 1");
    if (!(lambda > 0.0)) throw ConfigError("lambda must be positive");
    if (!(l_c > 0.0) || !(l_p > 0.0)) throw ConfigError("kernel lengths must be positive");
    if (jitter < 0.0) throw ConfigError("jitter must be non-negative");
    if (reg_scale < 0.0) throw ConfigError("reg_scale must be non-negative");
    if (max_iters < 1) throw ConfigError("max_iters must be at least 1");
    if (!(success_radius > 0.0)) throw ConfigError("success_radius must be positive");
    if (random_starts < 1) throw ConfigError("random_starts must be at least 1");
    fusion.validate();
}

json to_json(const RunConfig &c) {
    return json{{"dataset", c.dataset},
                {"C", c.components},
                {"N", c.n_refs},
                {"lambda", c.lambda},
                {"l_c", c.l_c},
                {"l_p", c.l_p},
                {"jitter", c.jitter},
                {"reg_scale", c.reg_scale},
                {"K_s", c.fusion.k_sp},
                {"K_g", c.fusion.k_g},
                {"pi_sp", c.fusion.pi_sp},
                {"gamma_sigma", c.fusion.gamma_sigma},
                {"gamma_grad", c.fusion.gamma_grad},
                {"dt", c.fusion.dt},
                {"grad_eps", c.fusion.grad_eps},
                {"rate_scaled", c.fusion.rate_scaled},
                {"em_seed", c.em_seed},
                {"sample_seed", c.sample_seed},
                {"start_seed", c.start_seed},
                {"max_iters", c.max_iters},
                {"success_radius", c.success_radius},
                {"random_starts", c.random_starts},
                {"output_dir", c.output_dir}};
}

RunConfig run_config_from_json(const json &doc, RunConfig c) {
    if (!doc.is_object()) throw SchemaError("run config must be a JSON object");
    static const std::set<std::string> known = {
        "dataset", "C",     "N",          "lambda",  "l_c",        "l_p",          "jitter",
        "reg_scale", "K_s", "K_g",        "pi_sp",   "gamma_sigma", "gamma_grad",  "dt",
        "grad_eps", "rate_scaled", "em_seed", "sample_seed", "start_seed", "max_iters", "success_radius", "random_starts",
        "output_dir"};
    for (const auto &[key, value] : doc.items()) {
        if (!known.count(key)) throw SchemaError("unknown run config field '" + key + "'");
    }
    try {
        auto get = [&](const char *key, auto &dst) {
            if (doc.contains(key)) dst = doc.at(key).get<std::decay_t<decltype(dst)>>();
        };
        get("dataset", c.dataset);
        get("C", c.components);
        get("N", c.n_refs);
        get("lambda", c.lambda);
        get("l_c", c.l_c);
        get("l_p", c.l_p);
        get("jitter", c.jitter);
        get("reg_scale", c.reg_scale);
        get("K_s", c.fusion.k_sp);
        get("K_g", c.fusion.k_g);
        get("pi_sp", c.fusion.pi_sp);
        get("gamma_sigma", c.fusion.gamma_sigma);
        get("gamma_grad", c.fusion.gamma_grad);
        get("dt", c.fusion.dt);
        get("grad_eps", c.fusion.grad_eps);
        get("rate_scaled", c.fusion.rate_scaled);
        get("em_seed", c.em_seed);
        get("sample_seed", c.sample_seed);
        get("start_seed", c.start_seed);
        get("max_iters", c.max_iters);
        get("success_radius", c.success_radius);
        get("random_starts", c.random_starts);
        get("output_dir", c.output_dir);
    } catch (const json::exception &e) {
        throw SchemaError(std::string("run config field has the wrong type: ") + e.what());
    }
    return c;
}

RunConfig load_run_config(const std::filesystem::path &path, RunConfig base) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open config '" + path.string() + "'");
    json doc;
    try {
        doc = json::parse(in);
    } catch (const json::parse_error &e) {
        throw SchemaError("'" + path.string() + "' is not valid JSON: " + e.what());
    }
    return run_config_from_json(doc, std::move(base));
}

std::string config_hash(const RunConfig &config) {
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char ch : to_json(config).dump()) {
        h ^= ch;
        h *= 1099511628211ull;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

VectorXd model_lengths(const RunConfig &config, const Dims &dims) {
    return expand_lengths(dims.context, config.l_c, dims.position, config.l_p);
}

TrainedModel train(const TrainingSet &data, const RunConfig &config, StageTimings *timings) {
    config.validate();
    StageTimings local;
    StageTimings &t = timings ? *timings : local;

    const MatrixXd joint = joint_data(data);
    GmmModel gmm = run_stage("em", &t.em_seconds, [&] {
        return em_fit(joint, data.dims.input(), config.components, config.em_seed,
                      default_regularization(joint, config.reg_scale));
    });
    ReferenceSet refs = run_stage("references", &t.references_seconds,
                                  [&] { return build_reference_set(gmm, config.n_refs, config.sample_seed); });
    KmpHyperparams hyper{config.lambda, model_lengths(config, data.dims), config.jitter};
    KmpModel kmp = run_stage("kmp", &t.kmp_seconds, [&] { return KmpModel(std::move(refs), hyper); });

    MatrixXd starts(data.dims.input(), data.num_demonstrations());
    Index offset = 0;
    for (Index h = 0; h < data.num_demonstrations(); ++h) {
        starts.col(h) = data.inputs.col(offset);
        offset += data.demonstrations[static_cast<std::size_t>(h)].length();
    }
    return TrainedModel{config, data.dims, std::move(gmm), std::move(kmp), GoalSet::from(data), data.all_positions(),
                        std::move(starts)};
}

RolloutConfig rollout_config(const TrainedModel &model, VectorXd x0, ContextSchedule schedule) {
    RolloutConfig rc;
    rc.x0 = std::move(x0);
    rc.schedule = std::move(schedule);
    rc.max_iters = model.config.max_iters;
    rc.success_radius = model.config.success_radius;
    rc.dt = model.config.fusion.dt;
    rc.seed = model.config.start_seed;
    const Box box = bounding_box(model.demo_positions, 0.0);
    rc.max_step = 10.0 * (box.upper - box.lower).norm();
    return rc;
}

json to_json(const TrainedModel &m) {
    json doc;
    doc["version"] = kModelVersion;
    doc["config"] = to_json(m.config);
    doc["dims"] = {{"context", m.dims.context}, {"position", m.dims.position}};
    doc["gmm"] = to_json(m.gmm);
    doc["kmp"] = to_json(m.kmp);
    doc["goal_inputs"] = detail::matrix_to_json(m.goals.inputs.transpose());
    doc["goal_positions"] = detail::matrix_to_json(m.goals.positions.transpose());
    doc["start_inputs"] = detail::matrix_to_json(m.start_inputs.transpose());
    doc["demo_positions"] = detail::matrix_to_json(m.demo_positions.transpose());
    return doc;
}

TrainedModel trained_model_from_json(const json &doc) {
    if (detail::field(doc, "version") != kModelVersion) throw SchemaError("unsupported model version");
    const json &dims = detail::field(doc, "dims");
    Dims d{detail::field(dims, "context").get<Index>(), detail::field(dims, "position").get<Index>()};
    TrainedModel m{run_config_from_json(detail::field(doc, "config")),
                   d,
                   gmm_from_json(detail::field(doc, "gmm")),
                   kmp_from_json(detail::field(doc, "kmp")),
                   GoalSet{detail::matrix_from_json(detail::field(doc, "goal_inputs"), "goal_inputs").transpose(),
                           detail::matrix_from_json(detail::field(doc, "goal_positions"), "goal_positions").transpose()},
                   detail::matrix_from_json(detail::field(doc, "demo_positions"), "demo_positions").transpose(),
                   detail::matrix_from_json(detail::field(doc, "start_inputs"), "start_inputs").transpose()};
    if (m.kmp.input_dim() != d.input() || m.kmp.output_dim() != d.output() || m.goals.inputs.rows() != d.input() ||
        m.goals.positions.rows() != d.position || m.demo_positions.rows() != d.position) {
        throw DimensionError("model file parts disagree in dimension");
    }
    return m;
}

void save_model(const TrainedModel &model, const std::filesystem::path &path) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write model '" + path.string() + "'");
    out << to_json(model).dump() << '\n';
}

TrainedModel load_model(const std::filesystem::path &path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open model '" + path.string() + "'");
    json doc;
    try {
        doc = json::parse(in);
    } catch (const json::parse_error &e) {
        throw SchemaError("'" + path.string() + "' is not valid JSON: " + e.what());
    }
    return trained_model_from_json(doc);
}

StartSet demo_starts(const TrainedModel &model) {
    StartSet out;
    const Index c = model.dims.context;
    out.positions = model.start_inputs.bottomRows(model.dims.position);
    for (Index h = 0; h < model.start_inputs.cols(); ++h) out.contexts.push_back(model.start_inputs.col(h).head(c));
    return out;
}

StartSet random_start_set(const TrainedModel &model, Index n, std::uint64_t seed,
                          const std::vector<VectorXd> &contexts) {
    const Box box = bounding_box(model.demo_positions, 0.2);
    std::vector<VectorXd> ctx = contexts;
    if (ctx.empty()) ctx.push_back(VectorXd(0));
    StartSet out;
    out.positions.resize(model.dims.position, n * static_cast<Index>(ctx.size()));
    Index col = 0;
    for (std::size_t k = 0; k < ctx.size(); ++k) {
        if (ctx[k].size() != model.dims.context) {
            throw DimensionError("start context has dimension " + std::to_string(ctx[k].size()) + ", model expects " +
                                 std::to_string(model.dims.context));
        }
        const MatrixXd pts = random_starts(box, n, seed + k);
        for (Index j = 0; j < n; ++j) {
            out.positions.col(col++) = pts.col(j);
            out.contexts.push_back(ctx[k]);
        }
    }
    return out;
}

EvalReport evaluate_starts(const TrainedModel &model, const StartSet &starts, Strategy strategy) {
    std::vector<ContextSchedule> schedules;
    for (const VectorXd &c : starts.contexts) {
        schedules.push_back(c.size() == 0 ? ContextSchedule::none() : ContextSchedule::constant(c));
    }
    const RolloutConfig base = rollout_config(model, VectorXd::Zero(model.dims.position), ContextSchedule::none());
    return evaluate(model.kmp, model.goals, model.config.fusion, starts.positions, schedules, base, strategy,
                    model.demo_positions);
}

}  // namespace ctxkmp
