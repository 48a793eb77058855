#pragma once

#include <condition_variable>
#include <cstddef>
#include <deque>
#include <filesystem>
#include <list>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "ctxkmp/pipeline.hpp"
#include "json.hpp"

namespace httplib {
class Server;
}

namespace ctxkmp {

/// FNV-1a of the canonical model JSON. Equal for models trained from the same
/// payload and seeds.
std::string content_hash(const TrainedModel &model);

/// In-memory model store with least-recently-used eviction. Models are
/// immutable once stored and shared with running sessions, so eviction never
/// pulls a model from under a session.
class ModelStore {
public:
    explicit ModelStore(std::size_t capacity, std::optional<std::filesystem::path> persist_dir = std::nullopt);

    std::string put(TrainedModel model);
    /// nullptr when unknown or evicted. Counts as a use.
    std::shared_ptr<const TrainedModel> get(const std::string &id);
    std::size_t size() const;
    std::size_t capacity() const { return capacity_; }

    /// Field payload cache keyed by (model, request). Dropped with the model.
    std::optional<std::string> cached_field(const std::string &id, const std::string &key) const;
    void cache_field(const std::string &id, const std::string &key, std::string payload);

private:
    struct Entry {
        std::shared_ptr<const TrainedModel> model;
        std::map<std::string, std::string> fields;
        std::list<std::string>::iterator lru;
    };
    mutable std::mutex mu_;
    std::size_t capacity_;
    std::optional<std::filesystem::path> persist_dir_;
    std::uint64_t next_ = 1;
    std::list<std::string> order_;  // front = most recent
    std::unordered_map<std::string, Entry> entries_;
};

enum class SessionStatus { Running, Succeeded, Failed, Cancelled };
const char *to_string(SessionStatus s) noexcept;

/// A client message scheduled by iteration: delivered right after step `at`
/// has been emitted, so it takes effect at step at + 1.
struct ScriptedMessage {
    Index at = 0;
    nlohmann::json message;
};

struct SessionRequest {
    VectorXd x0;
    VectorXd context;  ///< initial context, size C
    Strategy strategy = Strategy::Full;
    std::optional<Index> max_iters;
    std::vector<ScriptedMessage> script;
};

/// Parses the rollout request body: {x0, context?, strategy?, max_iters?,
/// script?: [{at, type, ...}]}. Throws SchemaError / DimensionError.
SessionRequest session_request_from_json(const nlohmann::json &body, const Dims &dims);

/// One live rollout. Single writer: step() is driven by one thread while
/// post() may be called from any thread. Messages posted before a step are
/// applied at that step, never in the middle of one.
class Session {
public:
    Session(std::string id, std::shared_ptr<const TrainedModel> model, SessionRequest request);

    const std::string &id() const { return id_; }
    SessionStatus status() const;
    bool finished() const { return status() != SessionStatus::Running; }

    /// Thread-safe. `{type: "set_context", context: [...]}` or `{type: "cancel"}`.
    void post(nlohmann::json message);

    /// Applies pending messages, runs one control step and returns the frames
    /// it produced: in-band errors, the step record, and "done" when the
    /// session ended. Returns only "done" frames once finished.
    std::vector<nlohmann::json> step();

    /// Context segments actually used, as (first iteration, context). Replaying
    /// them through ContextSchedule::piecewise reproduces the trace.
    const std::vector<std::pair<Index, VectorXd>> &context_log() const { return log_; }
    const std::vector<TraceStep> &trace() const { return stepper_.trace(); }
    const RolloutConfig &config() const { return config_; }
    Strategy strategy() const { return strategy_; }

private:
    nlohmann::json done_frame() const;

    std::string id_;
    std::shared_ptr<const TrainedModel> model_;
    Strategy strategy_;
    RolloutConfig config_;
    RolloutStepper stepper_;
    VectorXd context_;
    std::vector<std::pair<Index, VectorXd>> log_;
    std::vector<ScriptedMessage> script_;
    std::size_t script_pos_ = 0;

    mutable std::mutex mu_;
    std::deque<nlohmann::json> inbox_;
    SessionStatus status_ = SessionStatus::Running;
    bool done_sent_ = false;
    std::string failure_;
};

/// Bounded frame queue between a paced session and a slow reader. Step
/// frames are dropped oldest-first when full; control frames (done, error,
/// session) are always kept.
class FrameQueue {
public:
    explicit FrameQueue(std::size_t capacity) : capacity_(capacity) {}

    void push(nlohmann::json frame);
    /// Waits up to `timeout_ms`; nullopt on timeout.
    std::optional<std::string> pop(int timeout_ms);
    void close();
    bool closed_and_empty() const;
    std::size_t dropped() const;

private:
    mutable std::mutex mu_;
    std::condition_variable cv_;
    std::deque<std::pair<bool, std::string>> frames_;  // (droppable, line)
    std::size_t capacity_;
    std::size_t dropped_ = 0;
    bool closed_ = false;
};

struct ServiceOptions {
    std::string host = "127.0.0.1";
    int port = 8080;  ///< 0 picks a free port
    std::size_t capacity = 16;
    double rate_hz = 20.0;  ///< live pacing; 0 runs unpaced
    std::size_t frame_buffer = 256;
    RunConfig defaults;
    std::optional<std::filesystem::path> persist_dir;
};

/// HTTP interface: GET /health, POST /train, GET /models/{id},
/// POST /models/{id}/field, POST /models/{id}/rollout (NDJSON stream),
/// POST /sessions/{sid}/messages.
class Service {
public:
    explicit Service(ServiceOptions options);
    ~Service();
    Service(const Service &) = delete;
    Service &operator=(const Service &) = delete;

    /// Binds and returns the port. Throws ConfigError when binding fails.
    int bind();
    /// Blocks until stop().
    void run();
    void stop();

    ModelStore &store() { return store_; }
    httplib::Server &server() { return *server_; }

private:
    void routes();

    ServiceOptions options_;
    ModelStore store_;
    std::unique_ptr<httplib::Server> server_;
    std::mutex sessions_mu_;
    std::map<std::string, std::weak_ptr<Session>> sessions_;
    std::uint64_t next_session_ = 1;
};

}  // namespace ctxkmp
