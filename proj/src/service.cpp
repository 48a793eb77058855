#include "ctxkmp/service.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <thread>

#include "httplib.h"
#include "json_eigen.hpp"

namespace ctxkmp {

using nlohmann::json;

namespace {

std::uint64_t fnv1a(const std::string &bytes) {
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char ch : bytes) {
        h ^= ch;
        h *= 1099511628211ull;
    }
    return h;
}

std::string hex16(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

int http_status(const Error &e) {
    switch (e.kind()) {
        case ErrorKind::Usage:
        case ErrorKind::Config:
        case ErrorKind::Schema:
        case ErrorKind::Input:
            return 400;
        case ErrorKind::Dimension:
        case ErrorKind::Data:
            return 422;
        case ErrorKind::Numerical:
        case ErrorKind::Diverged:
            return 500;
    }
    return 500;
}

void reply(httplib::Response &res, int status, const json &body) {
    res.status = status;
    res.set_content(body.dump(), "application/json");
}

void reply_error(httplib::Response &res, int status, const std::string &message, const std::string &stage = {}) {
    json body{{"error", message}};
    if (!stage.empty()) body["stage"] = stage;
    reply(res, status, body);
}

json parse_body(const httplib::Request &req) {
    try {
        return json::parse(req.body);
    } catch (const json::parse_error &e) {
        throw SchemaError(std::string("request body is not valid JSON: ") + e.what());
    }
}

VectorXd context_from(const json &value, Index dims, const char *name) {
    VectorXd c = detail::vector_from_json(value, name);
    if (c.size() != dims) {
        throw DimensionError(std::string(name) + " has dimension " + std::to_string(c.size()) + ", model expects " +
                             std::to_string(dims));
    }
    if (!c.allFinite()) throw InputError(std::string(name) + " is not finite");
    return c;
}

GridSpec grid_from_json(const json &g) {
    GridSpec spec;
    try {
        spec.x_min = detail::field(g, "x_min").get<double>();
        spec.x_max = detail::field(g, "x_max").get<double>();
        spec.y_min = detail::field(g, "y_min").get<double>();
        spec.y_max = detail::field(g, "y_max").get<double>();
        spec.nx = detail::field(g, "nx").get<Index>();
        spec.ny = detail::field(g, "ny").get<Index>();
    } catch (const json::exception &e) {
        throw SchemaError(std::string("grid field has the wrong type: ") + e.what());
    }
    return spec;
}

json model_summary(const std::string &id, const TrainedModel &m) {
    return json{{"id", id},
                {"content_hash", content_hash(m)},
                {"dims", {{"context", m.dims.context}, {"position", m.dims.position}}},
                {"config", to_json(m.config)},
                {"references", m.kmp.size()},
                {"demonstrations", m.start_inputs.cols()},
                {"goal_positions", detail::matrix_to_json(m.goals.positions.transpose())},
                {"bounding_box",
                 {{"lower", detail::vector_to_json(bounding_box(m.demo_positions, 0.2).lower)},
                  {"upper", detail::vector_to_json(bounding_box(m.demo_positions, 0.2).upper)}}},
                {"jitter", {{"plain", m.kmp.plain_jitter()}, {"regularized", m.kmp.regularized_jitter()}}}};
}

}  // namespace

std::string content_hash(const TrainedModel &model) { return hex16(fnv1a(to_json(model).dump())); }

// ---------------------------------------------------------------- ModelStore

ModelStore::ModelStore(std::size_t capacity, std::optional<std::filesystem::path> persist_dir)
    : capacity_(capacity), persist_dir_(std::move(persist_dir)) {
    if (capacity_ == 0) throw ConfigError("model store capacity must be at least 1");
    if (persist_dir_) std::filesystem::create_directories(*persist_dir_);
}

std::string ModelStore::put(TrainedModel model) {
    auto shared = std::make_shared<const TrainedModel>(std::move(model));
    std::lock_guard lock(mu_);
    const std::string id = "m" + std::to_string(next_++);
    if (persist_dir_) save_model(*shared, *persist_dir_ / (id + ".json"));
    order_.push_front(id);
    entries_[id] = Entry{std::move(shared), {}, order_.begin()};
    while (entries_.size() > capacity_) {
        entries_.erase(order_.back());
        order_.pop_back();
    }
    return id;
}

std::shared_ptr<const TrainedModel> ModelStore::get(const std::string &id) {
    std::lock_guard lock(mu_);
    auto it = entries_.find(id);
    if (it == entries_.end()) return nullptr;
    order_.splice(order_.begin(), order_, it->second.lru);
    return it->second.model;
}

std::size_t ModelStore::size() const {
    std::lock_guard lock(mu_);
    return entries_.size();
}

std::optional<std::string> ModelStore::cached_field(const std::string &id, const std::string &key) const {
    std::lock_guard lock(mu_);
    auto it = entries_.find(id);
    if (it == entries_.end()) return std::nullopt;
    auto f = it->second.fields.find(key);
    if (f == it->second.fields.end()) return std::nullopt;
    return f->second;
}

void ModelStore::cache_field(const std::string &id, const std::string &key, std::string payload) {
    std::lock_guard lock(mu_);
    auto it = entries_.find(id);
    if (it == entries_.end()) return;
    auto &fields = it->second.fields;
    if (fields.size() >= 32) fields.erase(fields.begin());
    fields[key] = std::move(payload);
}

// ------------------------------------------------------------------- Session

const char *to_string(SessionStatus s) noexcept {
    switch (s) {
        case SessionStatus::Running: return "running";
        case SessionStatus::Succeeded: return "succeeded";
        case SessionStatus::Failed: return "failed";
        case SessionStatus::Cancelled: return "cancelled";
    }
    return "running";
}

SessionRequest session_request_from_json(const json &body, const Dims &dims) {
    if (!body.is_object()) throw SchemaError("rollout request must be a JSON object");
    SessionRequest r;
    r.x0 = detail::vector_from_json(detail::field(body, "x0"), "x0");
    if (r.x0.size() != dims.position) {
        throw DimensionError("x0 has dimension " + std::to_string(r.x0.size()) + ", model expects " +
                             std::to_string(dims.position));
    }
    if (body.contains("context")) {
        r.context = context_from(body.at("context"), dims.context, "context");
    } else if (dims.context > 0) {
        throw SchemaError("missing field 'context' (model has " + std::to_string(dims.context) + " context dims)");
    } else {
        r.context = VectorXd(0);
    }
    if (body.contains("strategy")) {
        if (!body.at("strategy").is_string()) throw SchemaError("field 'strategy' must be a string");
        r.strategy = parse_strategy(body.at("strategy").get<std::string>());
    }
    if (body.contains("max_iters")) {
        if (!body.at("max_iters").is_number_integer()) throw SchemaError("field 'max_iters' must be an integer");
        r.max_iters = body.at("max_iters").get<Index>();
    }
    if (body.contains("script")) {
        const json &script = body.at("script");
        if (!script.is_array()) throw SchemaError("field 'script' must be an array");
        for (const json &m : script) {
            const json &at = detail::field(m, "at");
            if (!at.is_number_integer() || at.get<Index>() < 0) {
                throw SchemaError("script entry 'at' must be a non-negative integer");
            }
            json msg = m;
            msg.erase("at");
            r.script.push_back({at.get<Index>(), std::move(msg)});
        }
        std::stable_sort(r.script.begin(), r.script.end(),
                         [](const ScriptedMessage &a, const ScriptedMessage &b) { return a.at < b.at; });
    }
    return r;
}

namespace {

RolloutConfig session_config(const TrainedModel &model, const SessionRequest &r) {
    RolloutConfig rc = rollout_config(model, r.x0, ContextSchedule::external(model.dims.context));
    if (r.max_iters) rc.max_iters = *r.max_iters;
    return rc;
}

}  // namespace

Session::Session(std::string id, std::shared_ptr<const TrainedModel> model, SessionRequest request)
    : id_(std::move(id)),
      model_(std::move(model)),
      strategy_(request.strategy),
      config_(session_config(*model_, request)),
      stepper_(model_->kmp, model_->goals, model_->config.fusion, strategy_, config_),
      context_(std::move(request.context)),
      script_(std::move(request.script)) {
    if (context_.size() != model_->dims.context) throw DimensionError("initial context has the wrong dimension");
    log_.emplace_back(0, context_);
}

SessionStatus Session::status() const {
    std::lock_guard lock(mu_);
    return status_;
}

void Session::post(json message) {
    std::lock_guard lock(mu_);
    inbox_.push_back(std::move(message));
}

json Session::done_frame() const {
    json d{{"type", "done"},
           {"session", id_},
           {"status", to_string(status_)},
           {"iterations", stepper_.iteration()},
           {"steps", stepper_.trace().size()}};
    if (std::isfinite(stepper_.terminal_distance())) d["terminal_distance"] = stepper_.terminal_distance();
    if (!failure_.empty()) d["reason"] = failure_;
    return d;
}

std::vector<json> Session::step() {
    std::vector<json> frames;
    std::deque<json> pending;
    {
        std::lock_guard lock(mu_);
        if (status_ != SessionStatus::Running) {
            if (!done_sent_) {
                done_sent_ = true;
                frames.push_back(done_frame());
            }
            return frames;
        }
        pending.swap(inbox_);
    }

    const Index k = stepper_.iteration();
    bool cancel = false;
    for (const json &msg : pending) {
        const std::string type = msg.is_object() && msg.contains("type") && msg.at("type").is_string()
                                     ? msg.at("type").get<std::string>()
                                     : std::string();
        if (type == "cancel") {
            cancel = true;
        } else if (type == "set_context") {
            try {
                context_ = context_from(detail::field(msg, "context"), model_->dims.context, "context");
            } catch (const Error &e) {
                frames.push_back({{"type", "error"}, {"iteration", k}, {"message", e.what()}});
            }
        } else {
            frames.push_back({{"type", "error"}, {"iteration", k}, {"message", "unknown message type '" + type + "'"}});
        }
    }

    if (cancel) {
        std::lock_guard lock(mu_);
        status_ = SessionStatus::Cancelled;
        done_sent_ = true;
        frames.push_back(done_frame());
        return frames;
    }

    if (log_.back().second != context_) {
        if (log_.back().first == k) {
            log_.back().second = context_;
        } else {
            log_.emplace_back(k, context_);
        }
    }

    SessionStatus next = SessionStatus::Running;
    try {
        const TraceStep &t = stepper_.step(context_);
        json rec = to_json(t);
        rec["type"] = "step";
        rec["context"] = detail::vector_to_json(context_);
        switch (stepper_.status()) {
            case RolloutStepper::Status::Running: break;
            case RolloutStepper::Status::Succeeded: next = SessionStatus::Succeeded; break;
            case RolloutStepper::Status::Failed: next = SessionStatus::Failed; break;
        }
        rec["status"] = to_string(next);
        frames.push_back(std::move(rec));
    } catch (const DivergedError &e) {
        next = SessionStatus::Failed;
        failure_ = e.what();
        frames.push_back({{"type", "error"}, {"iteration", k}, {"message", e.what()}});
    }

    // Scripted messages for step k are delivered now and act at k + 1.
    while (script_pos_ < script_.size() && script_[script_pos_].at <= k) {
        post(script_[script_pos_++].message);
    }

    std::lock_guard lock(mu_);
    status_ = next;
    if (status_ != SessionStatus::Running) {
        done_sent_ = true;
        frames.push_back(done_frame());
    }
    return frames;
}

// ---------------------------------------------------------------- FrameQueue

void FrameQueue::push(json frame) {
    const bool droppable = frame.value("type", "") == "step";
    std::string line = frame.dump() + "\n";
    {
        std::lock_guard lock(mu_);
        if (droppable && frames_.size() >= capacity_) {
            auto victim = std::find_if(frames_.begin(), frames_.end(), [](const auto &f) { return f.first; });
            if (victim == frames_.end()) {
                ++dropped_;
                return;
            }
            frames_.erase(victim);
            ++dropped_;
        }
        frames_.emplace_back(droppable, std::move(line));
    }
    cv_.notify_one();
}

std::optional<std::string> FrameQueue::pop(int timeout_ms) {
    std::unique_lock lock(mu_);
    cv_.wait_for(lock, std::chrono::milliseconds(timeout_ms), [&] { return !frames_.empty() || closed_; });
    if (frames_.empty()) return std::nullopt;
    std::string line = std::move(frames_.front().second);
    frames_.pop_front();
    return line;
}

void FrameQueue::close() {
    {
        std::lock_guard lock(mu_);
        closed_ = true;
    }
    cv_.notify_all();
}

bool FrameQueue::closed_and_empty() const {
    std::lock_guard lock(mu_);
    return closed_ && frames_.empty();
}

std::size_t FrameQueue::dropped() const {
    std::lock_guard lock(mu_);
    return dropped_;
}

// ------------------------------------------------------------------- Service

namespace {

// Owns the pacing thread of one streamed session.
struct LiveRun {
    std::shared_ptr<Session> session;
    FrameQueue frames;
    std::thread worker;
    std::atomic<bool> stop{false};

    LiveRun(std::shared_ptr<Session> s, std::size_t buffer) : session(std::move(s)), frames(buffer) {}

    void start(double rate_hz) {
        worker = std::thread([this, rate_hz] {
            using clock = std::chrono::steady_clock;
            const auto period = rate_hz > 0.0 ? std::chrono::duration_cast<clock::duration>(
                                                    std::chrono::duration<double>(1.0 / rate_hz))
                                              : clock::duration::zero();
            auto next = clock::now();
            while (!stop.load()) {
                const bool was_finished = session->finished();
                for (json &f : session->step()) {
                    if (f.value("type", "") == "done") f["dropped_frames"] = frames.dropped();
                    frames.push(std::move(f));
                }
                if (was_finished || session->finished()) break;
                if (period > clock::duration::zero()) {
                    next += period;
                    std::this_thread::sleep_until(next);
                }
            }
            frames.close();
        });
    }

    ~LiveRun() {
        stop = true;
        session->post(json{{"type", "cancel"}});
        if (worker.joinable()) worker.join();
    }
};

}  // namespace

Service::Service(ServiceOptions options)
    : options_(std::move(options)),
      store_(options_.capacity, options_.persist_dir),
      server_(std::make_unique<httplib::Server>()) {
    options_.defaults.validate();
    if (options_.rate_hz < 0.0) throw ConfigError("rate must be non-negative");
    if (options_.frame_buffer == 0) throw ConfigError("frame buffer must hold at least one frame");
    // The library default also sets SO_REUSEPORT, which lets a second server share a busy port.
    server_->set_socket_options([](socket_t sock) {
        int yes = 1;
        setsockopt(sock, SOL_SOCKET, SO_REUSEADDR, reinterpret_cast<const void *>(&yes), sizeof(yes));
    });
    routes();
}

Service::~Service() { stop(); }

int Service::bind() {
    int port = options_.port;
    if (port == 0) {
        port = server_->bind_to_any_port(options_.host);
        if (port < 0) throw ConfigError("cannot bind " + options_.host);
    } else if (!server_->bind_to_port(options_.host, port)) {
        throw ConfigError("cannot bind " + options_.host + ":" + std::to_string(port) + " (port in use?)");
    }
    return port;
}

void Service::run() { server_->listen_after_bind(); }

void Service::stop() {
    if (server_) server_->stop();
}

void Service::routes() {
    httplib::Server &srv = *server_;

    srv.set_exception_handler([](const httplib::Request &, httplib::Response &res, std::exception_ptr ep) {
        try {
            std::rethrow_exception(ep);
        } catch (const StageError &e) {
            reply_error(res, http_status(e), e.what(), e.stage());
        } catch (const Error &e) {
            reply_error(res, http_status(e), e.what());
        } catch (const std::exception &e) {
            reply_error(res, 500, e.what());
        }
    });

    srv.Get("/health", [this](const httplib::Request &, httplib::Response &res) {
        reply(res, 200, {{"status", "ok"}, {"models", store_.size()}, {"capacity", store_.capacity()}});
    });

    // Body: a corpus document, or {corpus, config} with flat config overrides.
    srv.Post("/train", [this](const httplib::Request &req, httplib::Response &res) {
        const json body = parse_body(req);
        const bool wrapped = body.is_object() && body.contains("corpus");
        const TrainingSet data = training_set_from_json(wrapped ? body.at("corpus") : body);
        RunConfig cfg = data.dims.context > 0 ? RunConfig::context_defaults() : options_.defaults;
        if (wrapped && body.contains("config")) cfg = run_config_from_json(body.at("config"), cfg);
        StageTimings timings;
        TrainedModel model = train(data, cfg, &timings);
        const std::string hash = content_hash(model);
        const std::string id = store_.put(std::move(model));
        reply(res, 200,
              {{"id", id},
               {"content_hash", hash},
               {"timings", {{"em", timings.em_seconds}, {"references", timings.references_seconds},
                            {"kmp", timings.kmp_seconds}}}});
    });

    srv.Get(R"(/models/([A-Za-z0-9_-]+))", [this](const httplib::Request &req, httplib::Response &res) {
        const std::string id = req.matches[1];
        auto model = store_.get(id);
        if (!model) return reply_error(res, 404, "unknown model '" + id + "'");
        json body = model_summary(id, *model);
        if (req.get_param_value("include") == "model") body["model"] = to_json(*model);
        reply(res, 200, body);
    });

    // Body: {grid: {x_min, x_max, y_min, y_max, nx, ny}, context?, strategy?}
    srv.Post(R"(/models/([A-Za-z0-9_-]+)/field)", [this](const httplib::Request &req, httplib::Response &res) {
        const std::string id = req.matches[1];
        auto model = store_.get(id);
        if (!model) return reply_error(res, 404, "unknown model '" + id + "'");
        const json body = parse_body(req);
        try {
            const GridSpec grid = grid_from_json(detail::field(body, "grid"));
            VectorXd ctx(0);
            if (body.contains("context")) {
                ctx = context_from(body.at("context"), model->dims.context, "context");
            } else if (model->dims.context > 0) {
                throw SchemaError("missing field 'context' (model has " + std::to_string(model->dims.context) +
                                  " context dims)");
            }
            const Strategy strategy = parse_strategy(body.value("strategy", std::string("full")));
            const std::string key = json{{"grid", body.at("grid")},
                                         {"context", detail::vector_to_json(ctx)},
                                         {"strategy", to_string(strategy)}}
                                        .dump();
            if (auto hit = store_.cached_field(id, key)) {
                res.set_content(*hit, "application/json");
                return;
            }
            std::string payload = field_to_json(
                                      grid, vector_field_grid(model->kmp, model->goals, model->config.fusion, grid,
                                                              ctx, strategy))
                                      .dump();
            store_.cache_field(id, key, payload);
            res.set_content(payload, "application/json");
        } catch (const Error &e) {
            // A bad grid or query is the client's fault here, whatever its kind.
            reply_error(res, 400, e.what());
        }
    });

    // Streams NDJSON frames: {type: session}, then step / error frames, then done.
    srv.Post(R"(/models/([A-Za-z0-9_-]+)/rollout)", [this](const httplib::Request &req, httplib::Response &res) {
        const std::string id = req.matches[1];
        auto model = store_.get(id);
        if (!model) return reply_error(res, 404, "unknown model '" + id + "'");
        const json body = parse_body(req);
        SessionRequest request = session_request_from_json(body, model->dims);
        const double rate = body.contains("rate_hz") ? body.at("rate_hz").get<double>() : options_.rate_hz;
        if (rate < 0.0) throw ConfigError("rate_hz must be non-negative");

        std::string sid;
        {
            std::lock_guard lock(sessions_mu_);
            sid = "s" + std::to_string(next_session_++);
        }
        auto session = std::make_shared<Session>(sid, model, std::move(request));
        {
            std::lock_guard lock(sessions_mu_);
            for (auto it = sessions_.begin(); it != sessions_.end();) {
                it = it->second.expired() ? sessions_.erase(it) : std::next(it);
            }
            sessions_[sid] = session;
        }
        auto run = std::make_shared<LiveRun>(session, options_.frame_buffer);
        run->frames.push({{"type", "session"}, {"id", sid}, {"model", id}, {"rate_hz", rate}});
        run->start(rate);

        res.set_header("X-Session-Id", sid);
        res.set_chunked_content_provider(
            "application/x-ndjson",
            [run](std::size_t, httplib::DataSink &sink) {
                if (!sink.is_writable()) return false;
                if (auto line = run->frames.pop(50)) {
                    return sink.write(line->data(), line->size());
                }
                if (run->frames.closed_and_empty()) sink.done();
                return true;
            },
            [run](bool) { run->stop = true; });
    });

    // Body: one message, e.g. {type: "set_context", context: [...]} or {type: "cancel"}.
    srv.Post(R"(/sessions/([A-Za-z0-9_-]+)/messages)", [this](const httplib::Request &req, httplib::Response &res) {
        const std::string sid = req.matches[1];
        std::shared_ptr<Session> session;
        {
            std::lock_guard lock(sessions_mu_);
            auto it = sessions_.find(sid);
            if (it != sessions_.end()) session = it->second.lock();
        }
        if (!session) return reply_error(res, 404, "unknown session '" + sid + "'");
        const json msg = parse_body(req);
        if (!msg.is_object() || !msg.contains("type")) throw SchemaError("message needs a 'type'");
        if (session->finished()) return reply_error(res, 409, "session already finished");
        session->post(msg);
        reply(res, 202, {{"accepted", true}});
    });
}

}  // namespace ctxkmp
