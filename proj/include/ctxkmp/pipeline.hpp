#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

#include "ctxkmp/demonstrations.hpp"
#include "ctxkmp/fusion.hpp"
#include "ctxkmp/gmm.hpp"
#include "ctxkmp/kmp.hpp"
#include "ctxkmp/rollout.hpp"
#include "json.hpp"

namespace ctxkmp {

/// Everything needed to train and evaluate one model. Defaults are the settings
/// for the handwriting benchmark; keys in the flat JSON form use
/// the same names (N, C, lambda, l_c, l_p, K_s, K_g, pi_sp, gamma_sigma,
/// gamma_grad, dt).
struct RunConfig {
    std::string dataset;
    Index components = 20;  // C
    Index n_refs = 500;     // N
    double lambda = 0.5;
    double l_c = 0.06;      // only used when the data carries context
    double l_p = 0.04;
    double jitter = 5e-11;  // trades gradient residue at the references against round-off
    double reg_scale = 1e-6;
    FusionParams fusion;
    std::uint64_t em_seed = 1;
    std::uint64_t sample_seed = 2;
    std::uint64_t start_seed = 3;
    Index max_iters = 500;
    double success_radius = 0.01;
    Index random_starts = 10;
    std::string output_dir;

    /// The context experiment row: N = 1000, C = 35, l_c = 0.06.
    static RunConfig context_defaults();

    void validate() const;
};

nlohmann::json to_json(const RunConfig &config);
/// Reads a flat config; keys not present keep their defaults. Unknown keys
/// are rejected.
RunConfig run_config_from_json(const nlohmann::json &doc, RunConfig base = {});
RunConfig load_run_config(const std::filesystem::path &path, RunConfig base = {});

/// FNV-1a over the canonical JSON dump of the config.
std::string config_hash(const RunConfig &config);

struct StageTimings {
    double em_seconds = 0;
    double references_seconds = 0;
    double kmp_seconds = 0;
};

/// A trained policy: the KMP plus what rollouts and evaluations need from the
/// training data (goals, demonstrated positions and starts).
struct TrainedModel {
    RunConfig config;
    Dims dims;
    GmmModel gmm;
    KmpModel kmp;
    GoalSet goals;
    MatrixXd demo_positions;  ///< P x samples
    MatrixXd start_inputs;    ///< I x H, first input of every demonstration
};

/// Error carrying the pipeline stage that failed.
class StageError : public Error {
public:
    StageError(std::string stage, const Error &cause)
        : Error(cause.kind(), stage + ": " + cause.what()), stage_(std::move(stage)) {}
    const std::string &stage() const { return stage_; }

private:
    std::string stage_;
};

/// em_fit -> build_reference_set -> kmp_fit.
TrainedModel train(const TrainingSet &data, const RunConfig &config, StageTimings *timings = nullptr);

RolloutConfig rollout_config(const TrainedModel &model, VectorXd x0, ContextSchedule schedule);

/// Kernel lengths for the data dimensions of `model`.
VectorXd model_lengths(const RunConfig &config, const Dims &dims);

nlohmann::json to_json(const TrainedModel &model);
TrainedModel trained_model_from_json(const nlohmann::json &doc);

void save_model(const TrainedModel &model, const std::filesystem::path &path);
TrainedModel load_model(const std::filesystem::path &path);

/// Evaluation starts: either each demonstration's first position with its
/// context, or n uniform points in the inflated demo bounding box.
struct StartSet {
    MatrixXd positions;                 ///< P x trials
    std::vector<VectorXd> contexts;     ///< per trial
};
StartSet demo_starts(const TrainedModel &model);
StartSet random_start_set(const TrainedModel &model, Index n, std::uint64_t seed,
                          const std::vector<VectorXd> &contexts);

/// Evaluates one strategy over a start set (one constant schedule per trial
/// context).
EvalReport evaluate_starts(const TrainedModel &model, const StartSet &starts, Strategy strategy);

}  // namespace ctxkmp
