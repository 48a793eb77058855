#include "doctest.h"

#include <chrono>
#include <future>
#include <sstream>
#include <thread>

#include "ctxkmp/errors.hpp"
#include "ctxkmp/service.hpp"
#include "httplib.h"
#include "support.hpp"

using namespace ctxkmp;
using nlohmann::json;

namespace {

std::shared_ptr<const TrainedModel> shared_context_model() {
    static auto m = std::make_shared<const TrainedModel>(testing::context_model());
    return m;
}

std::vector<json> run_session(Session &s) {
    std::vector<json> frames;
    for (int guard = 0; guard < 10000; ++guard) {
        for (json &f : s.step()) frames.push_back(std::move(f));
        if (!frames.empty() && frames.back().value("type", "") == "done") break;
    }
    return frames;
}

std::vector<json> parse_ndjson(const std::string &body) {
    std::vector<json> out;
    std::istringstream in(body);
    for (std::string line; std::getline(in, line);) {
        if (!line.empty()) out.push_back(json::parse(line));
    }
    return out;
}

json corpus_json(const TrainingSet &s) { return to_json(s); }

}  // namespace

TEST_CASE("a session without messages equals the offline rollout") {
    auto m = shared_context_model();
    SessionRequest req;
    req.x0 = Eigen::Vector2d(0.2, 0.25);
    req.context = Eigen::Vector2d(1, 1);
    req.max_iters = 60;
    Session s("s", m, req);
    run_session(s);

    RolloutConfig cfg = rollout_config(*m, req.x0, ContextSchedule::constant(req.context));
    cfg.max_iters = 60;
    const RolloutResult off = rollout(m->kmp, m->goals, m->config.fusion, cfg, Strategy::Full);
    REQUIRE(off.trace.size() == s.trace().size());
    for (std::size_t i = 0; i < off.trace.size(); ++i) {
        CHECK(off.trace[i].s == s.trace()[i].s);
        CHECK(off.trace[i].velocity == s.trace()[i].velocity);
    }
}

TEST_CASE("set_context after step k acts at step k + 1 and replays offline") {
    auto m = shared_context_model();
    const json body{{"x0", {0.2, 0.25}},
                    {"context", {0, 0}},
                    {"max_iters", 80},
                    {"script", {{{"at", 10}, {"type", "set_context"}, {"context", {2, 2}}},
                                {{"at", 30}, {"type", "set_context"}, {"context", {1, 1}}}}}};
    Session s("s", m, session_request_from_json(body, m->dims));
    run_session(s);
    REQUIRE(s.trace().size() > 32);
    for (const TraceStep &t : s.trace()) {
        const Eigen::Vector2d expect = t.iteration <= 10 ? Eigen::Vector2d(0, 0)
                                       : t.iteration <= 30 ? Eigen::Vector2d(2, 2)
                                                           : Eigen::Vector2d(1, 1);
        CHECK(t.s.head(2) == expect);
    }
    REQUIRE(s.context_log().size() == 3);
    CHECK(s.context_log()[1].first == 11);

    RolloutConfig cfg = rollout_config(*m, Eigen::Vector2d(0.2, 0.25), ContextSchedule::piecewise(s.context_log()));
    cfg.max_iters = 80;
    const RolloutResult off = rollout(m->kmp, m->goals, m->config.fusion, cfg, Strategy::Full);
    REQUIRE(off.trace.size() == s.trace().size());
    for (std::size_t i = 0; i < off.trace.size(); ++i) {
        CHECK(off.trace[i].s == s.trace()[i].s);
        CHECK(off.trace[i].velocity == s.trace()[i].velocity);
    }
}

TEST_CASE("bad context messages are reported in band and ignored") {
    auto m = shared_context_model();
    SessionRequest req;
    req.x0 = Eigen::Vector2d(0.2, 0.25);
    req.context = Eigen::Vector2d(1, 1);
    req.max_iters = 10;
    Session s("s", m, req);
    s.step();
    s.post(json{{"type", "set_context"}, {"context", {1, 2, 3}}});
    const auto frames = s.step();
    REQUIRE(frames.size() >= 2);
    CHECK(frames[0]["type"] == "error");
    CHECK(frames[1]["type"] == "step");
    CHECK(s.trace().back().s.head(2) == Eigen::Vector2d(1, 1));
    s.post(json{{"type", "dance"}});
    CHECK(s.step()[0]["type"] == "error");
    CHECK(s.status() == SessionStatus::Running);
}

TEST_CASE("cancel ends a session") {
    auto m = shared_context_model();
    SessionRequest req;
    req.x0 = Eigen::Vector2d(0.2, 0.25);
    req.context = Eigen::Vector2d(1, 1);
    Session s("s", m, req);
    s.step();
    s.post(json{{"type", "cancel"}});
    const auto frames = s.step();
    REQUIRE(frames.size() == 1);
    CHECK(frames[0]["type"] == "done");
    CHECK(frames[0]["status"] == "cancelled");
    CHECK(s.status() == SessionStatus::Cancelled);
    CHECK(s.step().empty());
}

TEST_CASE("session requests are validated") {
    auto m = shared_context_model();
    CHECK_THROWS_AS(session_request_from_json(json{{"x0", {0, 0, 0}}, {"context", {0, 0}}}, m->dims), DimensionError);
    CHECK_THROWS_AS(session_request_from_json(json{{"x0", {0, 0}}}, m->dims), SchemaError);
    CHECK_THROWS_AS(session_request_from_json(json{{"x0", {0, 0}}, {"context", {0, 0}}, {"strategy", "x"}}, m->dims),
                    UsageError);
}

TEST_CASE("frame queue drops step frames only") {
    FrameQueue q(3);
    q.push(json{{"type", "session"}});
    for (int i = 0; i < 10; ++i) q.push(json{{"type", "step"}, {"i", i}});
    q.push(json{{"type", "error"}});
    q.push(json{{"type", "done"}});
    q.close();
    std::vector<json> got;
    while (auto line = q.pop(10)) got.push_back(json::parse(*line));
    CHECK(q.closed_and_empty());
    REQUIRE(got.size() >= 3);
    CHECK(got.front()["type"] == "session");
    CHECK(got[got.size() - 2]["type"] == "error");
    CHECK(got.back()["type"] == "done");
    CHECK(q.dropped() > 0);
    CHECK(got.size() + q.dropped() == 13);
    int last = -1;
    for (const json &f : got) {
        if (f["type"] == "step") {
            CHECK(f["i"].get<int>() > last);
            last = f["i"].get<int>();
        }
    }
    CHECK(last == 9);
}

TEST_CASE("model store evicts the least recently used model") {
    ModelStore store(2);
    const std::string a = store.put(testing::planar_model());
    const std::string b = store.put(testing::planar_model());
    store.get(a);
    const std::string c = store.put(testing::planar_model());
    CHECK(store.size() == 2);
    CHECK(store.get(a) != nullptr);
    CHECK(store.get(b) == nullptr);
    CHECK(store.get(c) != nullptr);
    CHECK_THROWS_AS(ModelStore(0), ConfigError);
}

TEST_CASE("HTTP service") {
    ServiceOptions opt;
    opt.port = 0;
    opt.rate_hz = 0;
    Service service(opt);
    const int port = service.bind();
    std::thread server([&] { service.run(); });
    httplib::Client cli("127.0.0.1", port);
    cli.set_read_timeout(120, 0);

    auto res = cli.Get("/health");
    REQUIRE(res);
    CHECK(res->status == 200);

    // Two drawn demos, no context.
    const TrainingSet planar = generate_shape_set(handwriting_shape("Angle"), 2, 3);
    const json small{{"N", 60}, {"C", 4}};
    const json planar_body{{"corpus", corpus_json(planar)}, {"config", small}};
    auto t1 = cli.Post("/train", planar_body.dump(), "application/json");
    auto t2 = cli.Post("/train", planar_body.dump(), "application/json");
    REQUIRE(t1);
    REQUIRE(t2);
    CHECK(t1->status == 200);
    const json j1 = json::parse(t1->body), j2 = json::parse(t2->body);
    CHECK(j1["id"] != j2["id"]);
    CHECK(j1["content_hash"] == j2["content_hash"]);
    const std::string pid = j1["id"];

    CHECK(cli.Post("/train", "{nope", "application/json")->status == 400);
    json mismatched = corpus_json(testing::letter_set(1, 2));
    mismatched["demonstrations"][1]["contexts"][0] = json::array({1.0});
    CHECK(cli.Post("/train", mismatched.dump(), "application/json")->status == 422);
    CHECK(cli.Post("/train", json{{"corpus", corpus_json(planar)}, {"config", {{"bogus", 1}}}}.dump(),
                   "application/json")->status == 400);

    auto info = cli.Get("/models/" + pid);
    REQUIRE(info);
    CHECK(info->status == 200);
    CHECK(json::parse(info->body)["dims"]["context"] == 0);
    CHECK(cli.Get("/models/m999")->status == 404);

    const json grid{{"x_min", -0.5}, {"x_max", 0.5}, {"y_min", -0.5}, {"y_max", 0.5}, {"nx", 20}, {"ny", 20}};
    auto field = cli.Post("/models/" + pid + "/field", json{{"grid", grid}}.dump(), "application/json");
    REQUIRE(field);
    CHECK(field->status == 200);
    CHECK(json::parse(field->body)["points"].size() == 400);
    CHECK(cli.Post("/models/m999/field", json{{"grid", grid}}.dump(), "application/json")->status == 404);
    json flat = grid;
    flat["nx"] = 1;
    CHECK(cli.Post("/models/" + pid + "/field", json{{"grid", flat}}.dump(), "application/json")->status == 400);

    // Context model: two contexts give different fields.
    auto tc = cli.Post("/train", json{{"corpus", corpus_json(testing::letter_set(2, 4))}, {"config", {{"N", 120}, {"C", 6}}}}.dump(),
                       "application/json");
    REQUIRE(tc);
    REQUIRE(tc->status == 200);
    const std::string cid = json::parse(tc->body)["id"];
    auto f0 = cli.Post("/models/" + cid + "/field", json{{"grid", grid}, {"context", {0, 0}}}.dump(), "application/json");
    auto f2 = cli.Post("/models/" + cid + "/field", json{{"grid", grid}, {"context", {2, 2}}}.dump(), "application/json");
    CHECK(f0->status == 200);
    CHECK(f0->body != f2->body);
    CHECK(cli.Post("/models/" + cid + "/field", json{{"grid", grid}}.dump(), "application/json")->status == 400);

    // Scripted stream equals the offline piecewise rollout.
    const json roll{{"x0", {0.2, 0.25}},
                    {"context", {0, 0}},
                    {"max_iters", 40},
                    {"script", {{{"at", 5}, {"type", "set_context"}, {"context", {2, 2}}}}}};
    auto stream = cli.Post("/models/" + cid + "/rollout", roll.dump(), "application/json");
    REQUIRE(stream);
    CHECK(stream->status == 200);
    const auto frames = parse_ndjson(stream->body);
    REQUIRE(frames.size() > 2);
    CHECK(frames.front()["type"] == "session");
    CHECK(frames.back()["type"] == "done");
    auto model = service.store().get(cid);
    RolloutConfig cfg = rollout_config(*model, Eigen::Vector2d(0.2, 0.25),
                                       ContextSchedule::piecewise({{0, Eigen::Vector2d(0, 0)}, {6, Eigen::Vector2d(2, 2)}}));
    cfg.max_iters = 40;
    const RolloutResult off = rollout(model->kmp, model->goals, model->config.fusion, cfg, Strategy::Full);
    std::vector<json> steps;
    for (const json &f : frames) {
        if (f["type"] == "step") steps.push_back(f);
    }
    REQUIRE(steps.size() == off.trace.size());
    for (std::size_t i = 0; i < steps.size(); ++i) CHECK(steps[i]["s"] == to_json(off.trace[i])["s"]);

    CHECK(cli.Post("/models/" + cid + "/rollout", json{{"x0", {0, 0, 0}}, {"context", {0, 0}}}.dump(),
                   "application/json")->status == 422);

    // Live steering through the message endpoint on a paced session.
    const json live{{"x0", {0.2, 0.25}}, {"context", {0, 0}}, {"max_iters", 400}, {"rate_hz", 100}};
    auto pending = std::async(std::launch::async, [&] {
        httplib::Client c2("127.0.0.1", port);
        c2.set_read_timeout(60, 0);
        auto r = c2.Post("/models/" + cid + "/rollout", live.dump(), "application/json");
        return r ? r->body : std::string();
    });
    const std::string sid = "s" + std::to_string(2);
    int status = 404;
    for (int i = 0; i < 200 && status == 404; ++i) {
        std::this_thread::sleep_for(std::chrono::milliseconds(10));
        status = cli.Post("/sessions/" + sid + "/messages", json{{"type", "set_context"}, {"context", {1, 1}}}.dump(),
                          "application/json")->status;
    }
    CHECK(status == 202);
    std::this_thread::sleep_for(std::chrono::milliseconds(100));
    cli.Post("/sessions/" + sid + "/messages", json{{"type", "cancel"}}.dump(), "application/json");
    const auto live_frames = parse_ndjson(pending.get());
    REQUIRE(!live_frames.empty());
    CHECK(live_frames.back()["type"] == "done");
    CHECK(live_frames.back()["status"] == "cancelled");
    bool switched = false;
    for (const json &f : live_frames) {
        if (f["type"] == "step" && f["context"] == json::array({1, 1})) switched = true;
    }
    CHECK(switched);
    CHECK(cli.Post("/sessions/s999/messages", json{{"type", "cancel"}}.dump(), "application/json")->status == 404);

    service.stop();
    server.join();
}

TEST_CASE("binding a used port fails") {
    ServiceOptions opt;
    opt.port = 0;
    Service first(opt);
    const int port = first.bind();
    ServiceOptions again;
    again.port = port;
    Service second(again);
    CHECK_THROWS_AS(second.bind(), ConfigError);
}
