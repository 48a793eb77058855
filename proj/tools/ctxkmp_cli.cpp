// ctxkmp command-line entry point.
//
//   ctxkmp generate shapes|letters ...   synthetic corpora (JSON corpus schema)
//   ctxkmp train    --dataset D          model + manifest
//   ctxkmp eval     --model M | --dataset D...   strategy report CSV
//   ctxkmp field    --model M            vector field CSV + JSON
//   ctxkmp rollout  --model M --x0 x,y   single trace
//   ctxkmp serve                         HTTP service
//
// Exit codes: 0 ok, 1 usage/config, 2 data, 3 numerical.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "ctxkmp/pipeline.hpp"
#include "ctxkmp/service.hpp"
#include "ctxkmp/shapes.hpp"

namespace fs = std::filesystem;
using namespace ctxkmp;
using nlohmann::json;

namespace {

constexpr const char *kOutputEnv = "CTXKMP_OUTPUT_DIR";

std::string fmt(double v) {
    std::ostringstream os;
    os << v;
    return os.str();
}

// Every RunConfig field as an optional flag. Precedence: built-in defaults,
// then --config file, then flags.
struct ConfigFlags {
    std::string config_file;
    std::optional<Index> C, N, max_iters, random_starts;
    std::optional<double> lambda, l_c, l_p, jitter, reg_scale, K_s, K_g, pi_sp, gamma_sigma, gamma_grad, dt, grad_eps,
        success_radius;
    std::optional<std::uint64_t> em_seed, sample_seed, start_seed;
    std::optional<bool> rate_scaled;

    void add_to(CLI::App *app) {
        const RunConfig d;
        const RunConfig c = RunConfig::context_defaults();
        app->add_option("--config", config_file, "flat JSON run config, same keys as the config block of a saved model");
        app->add_option("-C,--components", C, "GMM components C")->default_str(std::to_string(d.components) + " (context data: " + std::to_string(c.components) + ")");
        app->add_option("-N,--refs", N, "KMP reference points N")->default_str(std::to_string(d.n_refs) + " (context data: " + std::to_string(c.n_refs) + ")");
        app->add_option("--lambda", lambda, "KMP regularization lambda")->default_str(fmt(d.lambda));
        app->add_option("--l_c", l_c, "kernel length of context dimensions")->default_str(fmt(d.l_c));
        app->add_option("--l_p", l_p, "kernel length of position dimensions")->default_str(fmt(d.l_p));
        app->add_option("--jitter", jitter, "initial diagonal jitter of the plain kernel solve")->default_str(fmt(d.jitter));
        app->add_option("--reg_scale", reg_scale, "EM covariance floor, times the per-dimension variance")->default_str(fmt(d.reg_scale));
        app->add_option("--K_s", K_s, "stabilizing gain K_s")->default_str(fmt(d.fusion.k_sp));
        app->add_option("--K_g", K_g, "goal gain K_g")->default_str(fmt(d.fusion.k_g));
        app->add_option("--pi_sp", pi_sp, "stabilizing coefficient pi_sp")->default_str(fmt(d.fusion.pi_sp));
        app->add_option("--gamma_sigma", gamma_sigma, "uncertainty threshold gamma_Sigma")->default_str(fmt(d.fusion.gamma_sigma));
        app->add_option("--gamma_grad", gamma_grad, "gradient-norm threshold gamma_grad")->default_str(fmt(d.fusion.gamma_grad));
        app->add_option("--dt", dt, "control period [s] (20 Hz)")->default_str(fmt(d.fusion.dt));
        app->add_option("--grad_eps", grad_eps, "zero-gradient guard")->default_str(fmt(d.fusion.grad_eps));
        app->add_option("--rate_scaled", rate_scaled,
                        "divide stabilizing and goal commands by dt; false reads K_s, K_g as rates in 1/s")
            ->default_str(d.fusion.rate_scaled ? "true" : "false");
        app->add_option("--em_seed", em_seed, "EM seed")->default_str(std::to_string(d.em_seed));
        app->add_option("--sample_seed", sample_seed, "reference sampling seed")->default_str(std::to_string(d.sample_seed));
        app->add_option("--start_seed", start_seed, "random start seed")->default_str(std::to_string(d.start_seed));
        app->add_option("--max_iters", max_iters, "rollout iteration cap")->default_str(std::to_string(d.max_iters));
        app->add_option("--success_radius", success_radius, "goal distance counted as success")->default_str(fmt(d.success_radius));
        app->add_option("--random_starts", random_starts, "random starts per context")->default_str(std::to_string(d.random_starts));
    }

    // Training-time fields, applied only when a model is trained here.
    void apply_training(RunConfig &cfg) const {
        if (C) cfg.components = *C;
        if (N) cfg.n_refs = *N;
        if (lambda) cfg.lambda = *lambda;
        if (l_c) cfg.l_c = *l_c;
        if (l_p) cfg.l_p = *l_p;
        if (jitter) cfg.jitter = *jitter;
        if (reg_scale) cfg.reg_scale = *reg_scale;
        if (em_seed) cfg.em_seed = *em_seed;
        if (sample_seed) cfg.sample_seed = *sample_seed;
    }

    // Policy and evaluation fields, also applied on top of a loaded model.
    void apply_policy(RunConfig &cfg) const {
        if (K_s) cfg.fusion.k_sp = *K_s;
        if (K_g) cfg.fusion.k_g = *K_g;
        if (pi_sp) cfg.fusion.pi_sp = *pi_sp;
        if (gamma_sigma) cfg.fusion.gamma_sigma = *gamma_sigma;
        if (gamma_grad) cfg.fusion.gamma_grad = *gamma_grad;
        if (dt) cfg.fusion.dt = *dt;
        if (grad_eps) cfg.fusion.grad_eps = *grad_eps;
        if (rate_scaled) cfg.fusion.rate_scaled = *rate_scaled;
        if (start_seed) cfg.start_seed = *start_seed;
        if (max_iters) cfg.max_iters = *max_iters;
        if (success_radius) cfg.success_radius = *success_radius;
        if (random_starts) cfg.random_starts = *random_starts;
    }

    RunConfig resolve(const Dims &dims) const {
        RunConfig cfg = dims.context > 0 ? RunConfig::context_defaults() : RunConfig{};
        if (!config_file.empty()) cfg = load_run_config(config_file, cfg);
        apply_training(cfg);
        apply_policy(cfg);
        cfg.validate();
        return cfg;
    }
};

fs::path output_dir(const std::string &flag) {
    if (!flag.empty()) return flag;
    if (const char *env = std::getenv(kOutputEnv); env && *env) return env;
    return ".";
}

fs::path prepare_dir(const fs::path &dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw DataError("cannot create output directory '" + dir.string() + "': " + ec.message());
    return dir;
}

std::ofstream open_out(const fs::path &path) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write '" + path.string() + "'");
    return out;
}

std::vector<Strategy> parse_strategies(const std::vector<std::string> &names) {
    std::vector<Strategy> out;
    for (const auto &n : names) out.push_back(parse_strategy(n));
    if (out.empty()) throw UsageError("no strategy selected");
    return out;
}

VectorXd to_vector(const std::vector<double> &v) { return Eigen::Map<const VectorXd>(v.data(), static_cast<Index>(v.size())); }

TrainedModel train_from(const std::string &dataset, const ConfigFlags &flags, StageTimings *timings) {
    const TrainingSet data = load_training_set(dataset);
    RunConfig cfg = flags.resolve(data.dims);
    cfg.dataset = dataset;
    return train(data, cfg, timings);
}

TrainedModel load_or_train(const std::string &model_path, const std::string &dataset, const ConfigFlags &flags) {
    if (!model_path.empty()) {
        TrainedModel m = load_model(model_path);
        flags.apply_policy(m.config);
        m.config.validate();
        return m;
    }
    if (dataset.empty()) throw UsageError("either --model or --dataset is required");
    return train_from(dataset, flags, nullptr);
}

VectorXd require_context(const TrainedModel &m, const std::vector<double> &context) {
    if (m.dims.context > 0 && context.empty()) {
        throw UsageError("model has " + std::to_string(m.dims.context) + " context dimensions; pass --context");
    }
    VectorXd c = to_vector(context);
    if (c.size() != m.dims.context) {
        throw UsageError("--context has " + std::to_string(c.size()) + " values, model expects " +
                         std::to_string(m.dims.context));
    }
    return c;
}

// --------------------------------------------------------------- generate

struct GenerateArgs {
    std::string shape = "all";
    Index demos = 7;
    std::uint64_t seed = 1;
    std::string out;
    std::vector<std::string> letters{"Zshape", "Sshape", "JShape"};
    double cluster_std = 0.02;
    DemoVariation variation;
};

void cmd_generate_shapes(const GenerateArgs &a) {
    const fs::path dir = output_dir(a.out);
    std::vector<const ShapeTemplate *> shapes;
    if (a.shape == "all") {
        for (const auto &s : handwriting_shapes()) shapes.push_back(&s);
    } else {
        shapes.push_back(&handwriting_shape(a.shape));
    }
    const bool single_file = shapes.size() == 1 && fs::path(a.out).extension() == ".json";
    if (!single_file) prepare_dir(dir);
    for (std::size_t i = 0; i < shapes.size(); ++i) {
        const TrainingSet set = generate_shape_set(*shapes[i], a.demos, a.seed + i, a.variation);
        const fs::path path = single_file ? fs::path(a.out) : dir / (shapes[i]->name + ".json");
        save_training_set(set, path);
        std::cout << path.string() << '\n';
    }
}

void cmd_generate_letters(const GenerateArgs &a) {
    std::vector<ShapeTemplate> letters;
    for (const auto &n : a.letters) letters.push_back(handwriting_shape(n));
    std::vector<VectorXd> centers;
    for (std::size_t i = 0; i < letters.size(); ++i) {
        centers.push_back(Eigen::Vector2d(static_cast<double>(i), static_cast<double>(i)));
    }
    const TrainingSet set = generate_context_letter_set(letters, centers, a.cluster_std, a.demos, a.seed, a.variation);
    fs::path path = a.out.empty() ? output_dir("") / "letters.json" : fs::path(a.out);
    if (path.has_parent_path()) prepare_dir(path.parent_path());
    save_training_set(set, path);
    std::cout << path.string() << '\n';
}

// ------------------------------------------------------------------ train

void cmd_train(const std::string &dataset, const std::string &out, const std::string &name, const ConfigFlags &flags) {
    StageTimings t;
    const TrainedModel m = train_from(dataset, flags, &t);
    const fs::path dir = prepare_dir(output_dir(out.empty() ? m.config.output_dir : out));
    const std::string stem = name.empty() ? fs::path(dataset).stem().string() : name;
    const fs::path model_path = dir / (stem + ".model.json");
    save_model(m, model_path);
    json manifest{{"dataset", dataset},
                  {"model", model_path.filename().string()},
                  {"config", to_json(m.config)},
                  {"config_hash", config_hash(m.config)},
                  {"content_hash", content_hash(m)},
                  {"seeds", {{"em", m.config.em_seed}, {"sample", m.config.sample_seed}, {"start", m.config.start_seed}}},
                  {"jitter", {{"plain", m.kmp.plain_jitter()}, {"regularized", m.kmp.regularized_jitter()}}},
                  {"timings", {{"em", t.em_seconds}, {"references", t.references_seconds}, {"kmp", t.kmp_seconds}}}};
    open_out(dir / (stem + ".manifest.json")) << manifest.dump(2) << '\n';
    std::cout << model_path.string() << '\n';
}

// ------------------------------------------------------------------- eval

struct EvalArgs {
    std::vector<std::string> models;
    std::vector<std::string> datasets;
    std::vector<std::string> strategies{"kmp", "kmp+stab", "kmp+goal", "full"};
    std::string starts = "demos";
    std::vector<std::vector<double>> contexts;
    std::string out;
};

void cmd_eval(const EvalArgs &a, const ConfigFlags &flags) {
    const std::vector<Strategy> strategies = parse_strategies(a.strategies);
    if (a.starts != "demos" && a.starts != "random") throw UsageError("--starts must be 'demos' or 'random'");
    std::vector<TrainedModel> models;
    for (const auto &p : a.models) models.push_back(load_or_train(p, "", flags));
    for (const auto &d : a.datasets) models.push_back(load_or_train("", d, flags));
    if (models.empty()) throw UsageError("either --model or --dataset is required");

    std::vector<std::vector<EvalReport>> per_strategy(strategies.size());
    for (const TrainedModel &m : models) {
        StartSet starts;
        if (a.starts == "demos") {
            starts = demo_starts(m);
        } else {
            std::vector<VectorXd> ctx;
            for (const auto &c : a.contexts) ctx.push_back(require_context(m, c));
            if (ctx.empty() && m.dims.context > 0) {
                throw UsageError("random starts on a context model need at least one --context");
            }
            starts = random_start_set(m, m.config.random_starts, m.config.start_seed, ctx);
        }
        for (std::size_t i = 0; i < strategies.size(); ++i) {
            per_strategy[i].push_back(evaluate_starts(m, starts, strategies[i]));
        }
    }
    std::vector<EvalReport> rows;
    for (const auto &reports : per_strategy) rows.push_back(pool_reports(reports));

    write_report_csv(std::cout, rows);
    if (!a.out.empty() || std::getenv(kOutputEnv)) {
        fs::path path = a.out.empty() ? output_dir("") / "report.csv" : fs::path(a.out);
        if (path.has_parent_path()) prepare_dir(path.parent_path());
        auto f = open_out(path);
        write_report_csv(f, rows);
    }
}

// ------------------------------------------------------------------ field

struct FieldArgs {
    std::string model, dataset, out = "field";
    std::vector<double> grid;  // x_min,x_max,y_min,y_max,nx,ny
    std::vector<double> context;
    std::string strategy = "full";
};

void cmd_field(const FieldArgs &a, const ConfigFlags &flags) {
    const TrainedModel m = load_or_train(a.model, a.dataset, flags);
    const VectorXd ctx = require_context(m, a.context);
    GridSpec g;
    if (a.grid.empty()) {
        const Box box = bounding_box(m.demo_positions, 0.2);
        if (box.lower.size() != 2) throw UsageError("field needs a planar model");
        g = GridSpec{box.lower(0), box.upper(0), box.lower(1), box.upper(1), 50, 50};
    } else if (a.grid.size() == 6) {
        g = GridSpec{a.grid[0], a.grid[1], a.grid[2], a.grid[3], static_cast<Index>(a.grid[4]),
                     static_cast<Index>(a.grid[5])};
    } else {
        throw UsageError("--grid takes x_min,x_max,y_min,y_max,nx,ny");
    }
    const auto field = vector_field_grid(m.kmp, m.goals, m.config.fusion, g, ctx, parse_strategy(a.strategy));
    fs::path base = a.out;
    if (!base.has_parent_path()) base = output_dir("") / base;
    prepare_dir(base.parent_path());
    {
        auto f = open_out(base.string() + ".csv");
        write_field_csv(f, field);
    }
    open_out(base.string() + ".json") << field_to_json(g, field).dump() << '\n';
    std::cout << base.string() << ".csv\n" << base.string() << ".json\n";
}

// ---------------------------------------------------------------- rollout

struct RolloutArgs {
    std::string model, dataset, out;
    std::vector<double> x0, context;
    std::string strategy = "full";
};

void cmd_rollout(const RolloutArgs &a, const ConfigFlags &flags) {
    const TrainedModel m = load_or_train(a.model, a.dataset, flags);
    const VectorXd ctx = require_context(m, a.context);
    VectorXd x0 = a.x0.empty() ? VectorXd(m.start_inputs.col(0).tail(m.dims.position)) : to_vector(a.x0);
    const ContextSchedule schedule = m.dims.context > 0 ? ContextSchedule::constant(ctx) : ContextSchedule::none();
    RolloutResult r;
    try {
        r = rollout(m.kmp, m.goals, m.config.fusion, rollout_config(m, x0, schedule), parse_strategy(a.strategy));
    } catch (const DivergedError &e) {
        std::cerr << "warning: " << e.what() << '\n';
        r = e.partial();
    }
    std::ostream *os = &std::cout;
    std::ofstream file;
    if (!a.out.empty()) {
        file = open_out(a.out);
        os = &file;
    }
    *os << "iteration";
    for (Index i = 0; i < m.dims.input(); ++i) *os << ",s" << i;
    for (Index i = 0; i < m.dims.position; ++i) *os << ",v" << i;
    *os << ",pi_kmp,pi_sp,pi_g,sigma_ep\n";
    for (const TraceStep &t : r.trace) {
        *os << t.iteration;
        for (Index i = 0; i < t.s.size(); ++i) *os << ',' << t.s(i);
        for (Index i = 0; i < t.velocity.size(); ++i) *os << ',' << t.velocity(i);
        *os << ',' << t.coefficients.pi_kmp << ',' << t.coefficients.pi_sp << ',' << t.coefficients.pi_g << ','
            << t.epistemic << '\n';
    }
    std::cerr << (r.success ? "success" : "failure") << " after " << r.iterations << " iterations, terminal distance "
              << r.terminal_distance << '\n';
}

// ------------------------------------------------------------------ serve

struct ServeArgs {
    std::string host = "127.0.0.1";
    int port = 8080;
    std::size_t capacity = 16;
    double rate = 20.0;
    std::size_t frame_buffer = 256;
    std::string persist;
    std::vector<std::string> preload;
};

void cmd_serve(const ServeArgs &a, const ConfigFlags &flags) {
    ServiceOptions opt;
    opt.host = a.host;
    opt.port = a.port;
    opt.capacity = a.capacity;
    opt.rate_hz = a.rate;
    opt.frame_buffer = a.frame_buffer;
    opt.defaults = flags.resolve(Dims{0, 2});
    if (!a.persist.empty()) opt.persist_dir = a.persist;
    Service service(opt);
    for (const auto &p : a.preload) std::cout << "loaded " << p << " as " << service.store().put(load_model(p)) << '\n';
    const int port = service.bind();
    std::cout << "listening on http://" << a.host << ':' << port << std::endl;
    service.run();
}

}  // namespace

int main(int argc, char **argv) {
    CLI::App app{"Context- and state-dependent movement primitives: train, evaluate, serve"};
    app.require_subcommand(1);

    GenerateArgs gen;
    auto *generate = app.add_subcommand("generate", "Write synthetic corpora");
    generate->require_subcommand(1);
    auto add_variation = [&](CLI::App *c) {
        c->add_option("--seed", gen.seed, "random seed")->capture_default_str();
        c->add_option("--start-spread", gen.variation.start_spread, "std of demo start offsets")->capture_default_str();
        c->add_option("--lateral-spread", gen.variation.lateral_spread, "std of mid-course deviation")->capture_default_str();
        c->add_option("--sample-dt", gen.variation.dt, "demo sampling period [s]")->capture_default_str();
        c->add_option("-o,--out", gen.out, "output file or directory (default $" + std::string(kOutputEnv) + " or .)");
    };
    auto *gen_shapes = generate->add_subcommand("shapes", "LASA-like planar shapes, one corpus per shape");
    gen_shapes->add_option("--shape", gen.shape, "shape name or 'all'")->capture_default_str();
    gen_shapes->add_option("--demos", gen.demos, "demonstrations per shape")->capture_default_str();
    add_variation(gen_shapes);
    auto *gen_letters = generate->add_subcommand("letters", "three letters tied to context clusters [i, i]");
    gen_letters->add_option("--letters", gen.letters, "letter templates")->delimiter(',')->capture_default_str();
    gen_letters->add_option("--demos", gen.demos, "demonstrations per letter")->capture_default_str();
    gen_letters->add_option("--cluster-std", gen.cluster_std, "context std within a cluster")->capture_default_str();
    add_variation(gen_letters);

    std::string dataset, model, out, name;
    ConfigFlags train_flags;
    auto *train_cmd = app.add_subcommand("train", "GMM/EM, GMR references and KMP; writes model + manifest");
    train_cmd->add_option("-d,--dataset", dataset, "corpus JSON")->required();
    train_cmd->add_option("-o,--out", out, "output directory (default output_dir, $" + std::string(kOutputEnv) + " or .)");
    train_cmd->add_option("--name", name, "file stem (default: dataset stem)");
    train_flags.add_to(train_cmd);

    EvalArgs ev;
    ConfigFlags eval_flags;
    auto *eval_cmd = app.add_subcommand("eval", "Success rate, iterations and RMS per strategy (CSV)");
    eval_cmd->add_option("-m,--model", ev.models, "trained model(s); reports are pooled");
    eval_cmd->add_option("-d,--dataset", ev.datasets, "corpus(es) to train in-line; reports are pooled");
    eval_cmd->add_option("-s,--strategies", ev.strategies, "kmp, kmp+stab, kmp+goal, full")->delimiter(',')->capture_default_str();
    eval_cmd->add_option("--starts", ev.starts, "demos or random")->capture_default_str();
    eval_cmd->add_option("--context", ev.contexts, "context for random starts (repeatable, comma separated)")->delimiter(',')->allow_extra_args(false);
    eval_cmd->add_option("-o,--out", ev.out, "CSV path (always printed to stdout)");
    eval_flags.add_to(eval_cmd);

    FieldArgs fa;
    ConfigFlags field_flags;
    auto *field_cmd = app.add_subcommand("field", "Fused velocity and epistemic uncertainty on a grid");
    field_cmd->add_option("-m,--model", fa.model, "trained model");
    field_cmd->add_option("-d,--dataset", fa.dataset, "corpus to train in-line");
    field_cmd->add_option("--grid", fa.grid, "x_min,x_max,y_min,y_max,nx,ny (default: demo box, 50x50)")->delimiter(',');
    field_cmd->add_option("--context", fa.context, "context values (required when the model has context)")->delimiter(',');
    field_cmd->add_option("--strategy", fa.strategy, "kmp, kmp+stab, kmp+goal, full")->capture_default_str();
    field_cmd->add_option("-o,--out", fa.out, "output stem; writes <stem>.csv and <stem>.json")->capture_default_str();
    field_flags.add_to(field_cmd);

    RolloutArgs ra;
    ConfigFlags rollout_flags;
    auto *rollout_cmd = app.add_subcommand("rollout", "One closed-loop rollout, trace as CSV");
    rollout_cmd->add_option("-m,--model", ra.model, "trained model");
    rollout_cmd->add_option("-d,--dataset", ra.dataset, "corpus to train in-line");
    rollout_cmd->add_option("--x0", ra.x0, "start position (default: first demo start)")->delimiter(',');
    rollout_cmd->add_option("--context", ra.context, "constant context")->delimiter(',');
    rollout_cmd->add_option("--strategy", ra.strategy, "kmp, kmp+stab, kmp+goal, full")->capture_default_str();
    rollout_cmd->add_option("-o,--out", ra.out, "CSV path (default stdout)");
    rollout_flags.add_to(rollout_cmd);

    ServeArgs sa;
    ConfigFlags serve_flags;
    auto *serve_cmd = app.add_subcommand("serve", "HTTP service for training, fields and live rollouts");
    serve_cmd->add_option("--host", sa.host, "bind address")->capture_default_str();
    serve_cmd->add_option("--port", sa.port, "port (0 picks one)")->capture_default_str();
    serve_cmd->add_option("--capacity", sa.capacity, "models kept in memory (LRU)")->capture_default_str();
    serve_cmd->add_option("--rate", sa.rate, "live rollout pacing [Hz], 0 = unpaced")->capture_default_str();
    serve_cmd->add_option("--frame-buffer", sa.frame_buffer, "step frames buffered per stream before dropping")->capture_default_str();
    serve_cmd->add_option("--persist-dir", sa.persist, "also write trained models here");
    serve_cmd->add_option("--preload", sa.preload, "model files to load at startup");
    serve_flags.add_to(serve_cmd);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp &e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp &e) {
        return app.exit(e);
    } catch (const CLI::ParseError &e) {
        app.exit(e);
        return 1;
    }

    try {
        if (*gen_shapes) cmd_generate_shapes(gen);
        else if (*gen_letters) cmd_generate_letters(gen);
        else if (*train_cmd) cmd_train(dataset, out, name, train_flags);
        else if (*eval_cmd) cmd_eval(ev, eval_flags);
        else if (*field_cmd) cmd_field(fa, field_flags);
        else if (*rollout_cmd) cmd_rollout(ra, rollout_flags);
        else if (*serve_cmd) cmd_serve(sa, serve_flags);
    } catch (const StageError &e) {
        std::cerr << "error [" << e.stage() << "]: " << e.what() << '\n';
        return exit_code(e.kind());
    } catch (const Error &e) {
        std::cerr << "error: " << e.what() << '\n';
        return exit_code(e.kind());
    } catch (const std::exception &e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    }
    return 0;
}
