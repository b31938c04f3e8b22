#include "cges/error.hpp"
#include "cges/llmclient.hpp"

#include "doctest.h"
#include "httplib.h"
#include "json.hpp"
#include "support.hpp"

#include <atomic>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <thread>

using namespace cges;
using json = nlohmann::json;

namespace {

/// Local chat-completions stand-in. `handler` builds the response body.
class MockEndpoint {
public:
    using Handler = std::function<void(const json& request, const httplib::Request&, httplib::Response&)>;

    explicit MockEndpoint(Handler handler) : handler_(std::move(handler)) {
        server_.Post("/v1/chat/completions", [this](const httplib::Request& req, httplib::Response& res) {
            ++hits;
            handler_(json::parse(req.body), req, res);
        });
        port_ = server_.bind_to_any_port("127.0.0.1");
        thread_ = std::thread([this] { server_.listen_after_bind(); });
        server_.wait_until_ready();
    }
    ~MockEndpoint() {
        server_.stop();
        thread_.join();
    }

    EndpointConfig config() const {
        EndpointConfig c;
        c.base_url = "http://127.0.0.1:" + std::to_string(port_);
        c.request_timeout_s = 5;
        c.max_retries = 2;
        c.api_key_env = "CGES_TEST_KEY";
        return c;
    }

    std::atomic<int> hits{0};

private:
    Handler handler_;
    httplib::Server server_;
    int port_ = 0;
    std::thread thread_;
};

json completion(const std::string& text, const std::vector<std::pair<std::string, double>>& tokens) {
    json lp = json::array();
    for (const auto& [tok, p] : tokens) lp.push_back({{"token", tok}, {"logprob", std::log(p)}});
    return {{"choices", json::array({{{"message", {{"role", "assistant"}, {"content", text}}},
                                      {"logprobs", {{"content", lp}}}}})}};
}

std::filesystem::path temp_path(const std::string& name) {
    auto dir = std::filesystem::temp_directory_path() / "cges_tests";
    std::filesystem::create_directories(dir);
    auto p = dir / name;
    std::filesystem::remove(p);
    return p;
}

} // namespace

TEST_CASE("answer extraction") {
    CHECK(extract_answer("so \\boxed{3/4}", AnswerFormat::BoxedMath) == "3/4");
    CHECK(extract_answer("\\boxed{1} then \\boxed{\\frac{1}{2}}", AnswerFormat::BoxedMath) == "\\frac{1}{2}");
    CHECK(extract_answer("\\boxed{  x +   1 }", AnswerFormat::BoxedMath) == "x + 1");
    CHECK(extract_answer("truncated \\boxed{12", AnswerFormat::BoxedMath) == "INVALID");
    CHECK(extract_answer("", AnswerFormat::BoxedMath) == "INVALID");
    CHECK(extract_answer("Answer: B. Because...", AnswerFormat::LetterChoice) == "B");
    CHECK(extract_answer("I think answer is (C)\nAnswer: D", AnswerFormat::LetterChoice) == "D");
    CHECK(extract_answer("**Answer:** A", AnswerFormat::LetterChoice) == "A");
    CHECK(extract_answer("Answer: The second one", AnswerFormat::LetterChoice) == "INVALID");
    CHECK(extract_answer("final: \\boxed{C}", AnswerFormat::LetterChoice) == "C");
    CHECK(extract_answer("", AnswerFormat::LetterChoice) == "INVALID");
}

TEST_CASE("extraction is idempotent through the canonical answer line") {
    for (const char* text : {"so \\boxed{3/4}", "\\boxed{ a  b }", "x \\boxed{\\sqrt{2}}"}) {
        auto label = extract_answer(text, AnswerFormat::BoxedMath);
        CHECK(extract_answer(render_answer_line(label, AnswerFormat::BoxedMath), AnswerFormat::BoxedMath) == label);
    }
    for (const char* text : {"Answer: B", "answer is (E)."}) {
        auto label = extract_answer(text, AnswerFormat::LetterChoice);
        CHECK(extract_answer(render_answer_line(label, AnswerFormat::LetterChoice), AnswerFormat::LetterChoice) ==
              label);
    }
}

TEST_CASE("prompts carry the format instruction") {
    Question math{"m", "What is 1+1?", AnswerFormat::BoxedMath, "2"};
    Question mc{"c", "Pick one.", AnswerFormat::LetterChoice, "A"};
    CHECK(render_prompt(math).find("\\boxed{}") != std::string::npos);
    CHECK(render_prompt(mc).find("Answer: X") != std::string::npos);
}

TEST_CASE("request seeds are stable and distinct") {
    CHECK(stable_hash("") == 0xcbf29ce484222325ULL);
    CHECK(stable_hash("a") == 0xaf63dc4c8601ec8cULL);
    CHECK(request_seed(0, "q1", 1) == request_seed(0, "q1", 1));
    CHECK(request_seed(0, "q1", 1) != request_seed(0, "q1", 2));
    CHECK(request_seed(0, "q1", 1) != request_seed(1, "q1", 1));
    CHECK(request_seed(5, "q", 3) <= 0x7FFFFFFFULL);
}

TEST_CASE("newline step splitting") {
    auto steps = newline_steps({"a", "b\n", "c", "\n", "d"});
    REQUIRE(steps.size() == 3);
    CHECK(steps[0].begin == 0);
    CHECK(steps[0].end == 2);
    CHECK(steps[2].begin == 4);
    CHECK(steps[2].end == 5);
}

TEST_CASE("sample record JSON round-trip") {
    SampleRecord r;
    r.question_id = "q,1";
    r.round = 3;
    r.seed = 42;
    r.raw_text = "line\n\\boxed{7}";
    r.extracted_label = "7";
    r.token_probs = std::vector<double>{0.9, 0.4};
    r.step_boundaries = std::vector<TokenRange>{{0, 1}, {1, 2}};
    r.step_importance = std::vector<double>{1, 0};
    r.reward_score = 0.8;
    compute_confidences(r);
    auto line = r.to_json_line();
    CHECK(line.rfind("{\"question_id\":\"q,1\",\"round\":3,", 0) == 0);
    auto back = SampleRecord::from_json_line(line);
    CHECK(back.to_json_line() == line);
    CHECK(back.confidence_by_estimator.at("lns-geo") == doctest::Approx(0.6));
    CHECK(back.confidence_by_estimator.at("mars") == doctest::Approx(0.734846922835).epsilon(1e-10));
    CHECK(back.confidence_by_estimator.at("rm") == 0.8);
    CHECK_THROWS_AS(SampleRecord::from_json_line("{not json"), Error);
}

TEST_CASE("record confidence prefers recomputation and refuses degraded records") {
    SampleRecord r;
    r.question_id = "q";
    r.token_probs = std::vector<double>{0.9, 0.4};
    r.confidence_by_estimator["lns-arith"] = 0.1;
    ConfidenceConfig cfg;
    CHECK(record_confidence(r, cfg) == doctest::Approx(0.65));

    SampleRecord stored;
    stored.confidence_by_estimator["lns-arith"] = 0.3;
    CHECK(record_confidence(stored, cfg) == 0.3);

    SampleRecord degraded;
    degraded.degraded = true;
    try {
        record_confidence(degraded, cfg);
        FAIL("expected refusal");
    } catch (const Error& ex) {
        CHECK(ex.code() == ErrorCode::Configuration);
        CHECK(std::string(ex.what()).find("log-probabilities") != std::string::npos);
    }
}

TEST_CASE("record store is append-only and replays by key") {
    auto path = temp_path("store.jsonl");
    {
        auto store = RecordStore::open_record(path);
        SampleRecord r;
        r.question_id = "q";
        r.round = 1;
        r.extracted_label = "A";
        r.confidence_by_estimator["lns-arith"] = 0.7;
        store->append(r);
        CHECK_THROWS_AS(store->append(r), Error);
        r.round = 2;
        store->append(r);
    }
    {
        auto reopened = RecordStore::open_record(path);
        CHECK(reopened->size() == 2);
        SampleRecord dup;
        dup.question_id = "q";
        dup.round = 2;
        CHECK_THROWS_AS(reopened->append(dup), Error);
    }
    auto replay = RecordStore::open_replay(path);
    CHECK(replay->get("q", 2).extracted_label == "A");
    try {
        replay->get("q", 3);
        FAIL("expected replay miss");
    } catch (const Error& ex) {
        CHECK(ex.code() == ErrorCode::ReplayMiss);
        CHECK(std::string(ex.what()).find("round=3") != std::string::npos);
    }
    CHECK_THROWS_AS(replay->append(SampleRecord{}), Error);
    CHECK_THROWS_AS(RecordStore::open_replay(temp_path("missing.jsonl")), Error);

    std::ofstream(path, std::ios::app) << replay->get("q", 1).to_json_line() << '\n';
    CHECK_THROWS_AS(RecordStore::open_replay(path), Error);
}

TEST_CASE("endpoint config loading") {
    auto path = temp_path("endpoint.json");
    std::ofstream(path) << R"({"base_url": "http://localhost:9000", "model_name": "m", "temperature": 0.6})";
    auto c = EndpointConfig::load(path);
    CHECK(c.base_url == "http://localhost:9000");
    CHECK(c.temperature == 0.6);
    CHECK(c.max_tokens == 32768);

    std::ofstream(path) << R"({"base_url": "http://localhost:9000", "api_key": "sk-secret"})";
    CHECK_THROWS_AS(EndpointConfig::load(path), Error);
    std::ofstream(path) << R"({"base_url": "https://example.com"})";
    CHECK_THROWS_AS(EndpointConfig::load(path), Error);
}

TEST_CASE("sample_once against a mock endpoint") {
    json seen;
    std::string auth;
    MockEndpoint mock([&](const json& req, const httplib::Request& raw, httplib::Response& res) {
        seen = req;
        auth = raw.get_header_value("Authorization");
        res.set_content(completion("step one\nso \\boxed{42}", {{"step", 0.9}, {" one\n", 0.9}, {"42", 0.4}})
                            .dump(),
                        "application/json");
    });
    ::setenv("CGES_TEST_KEY", "secret-token", 1);
    Question q{"q1", "What is 6*7?", AnswerFormat::BoxedMath, "42"};
    auto rec = sample_once(q, 2, mock.config(), 1234);
    ::unsetenv("CGES_TEST_KEY");

    CHECK(rec.extracted_label == "42");
    CHECK(rec.round == 2);
    CHECK_FALSE(rec.degraded);
    REQUIRE(rec.token_probs);
    CHECK(rec.token_probs->size() == 3);
    REQUIRE(rec.step_boundaries);
    CHECK(rec.step_boundaries->size() == 2);
    CHECK(rec.confidence_by_estimator.at("lns-arith") == doctest::Approx((0.9 + 0.9 + 0.4) / 3));
    CHECK(seen.at("logprobs") == true);
    CHECK(seen.at("seed") == 1234);
    CHECK(seen.at("messages").at(0).at("content").get<std::string>().find("6*7") != std::string::npos);
    CHECK(auth == "Bearer secret-token");
    CHECK(rec.to_json_line().find("secret-token") == std::string::npos);
}

TEST_CASE("missing log-probabilities give a degraded record") {
    MockEndpoint mock([](const json&, const httplib::Request&, httplib::Response& res) {
        res.set_content(R"({"choices":[{"message":{"content":"Answer: C"}}]})", "application/json");
    });
    Question q{"q", "?", AnswerFormat::LetterChoice, "C"};
    auto rec = sample_once(q, 1, mock.config(), 1);
    CHECK(rec.degraded);
    CHECK(rec.extracted_label == "C");
    CHECK(rec.confidence_by_estimator.empty());
}

TEST_CASE("HTTP errors are retried, then reported as sampler failures") {
    std::atomic<int> calls{0};
    MockEndpoint flaky([&](const json&, const httplib::Request&, httplib::Response& res) {
        if (++calls < 3) {
            res.status = 503;
            return;
        }
        res.set_content(completion("Answer: A", {{"A", 0.8}}).dump(), "application/json");
    });
    Question q{"q", "?", AnswerFormat::LetterChoice, "A"};
    CHECK(sample_once(q, 1, flaky.config(), 1).extracted_label == "A");
    CHECK(calls == 3);

    MockEndpoint down([](const json&, const httplib::Request&, httplib::Response& res) { res.status = 500; });
    try {
        sample_once(q, 1, down.config(), 1);
        FAIL("expected failure");
    } catch (const Error& ex) {
        CHECK(ex.code() == ErrorCode::SamplerFailure);
    }
    CHECK(down.hits == 3);
}

TEST_CASE("live run recorded then replayed gives identical results") {
    std::atomic<int> counter{0};
    MockEndpoint mock([&](const json& req, const httplib::Request&, httplib::Response& res) {
        // Deterministic in the request seed so parallel scheduling cannot matter.
        auto seed = req.at("seed").get<std::uint64_t>();
        const char* letters[] = {"A", "A", "B", "C"};
        double p = 0.3 + 0.6 * static_cast<double>(seed % 97) / 97.0;
        ++counter;
        res.set_content(completion(std::string("Answer: ") + letters[seed % 4], {{"x", p}, {"y", 0.9}}).dump(),
                        "application/json");
    });

    auto qs = testing_support::questions(12);
    auto path = temp_path("live.jsonl");
    ControllerConfig cfg;
    cfg.gamma = 0.9;
    cfg.max_parallel = 4;
    RunResult live;
    {
        auto store = RecordStore::open_record(path);
        live = cges_run(qs, live_sampler(mock.config(), ConfidenceConfig{}, 7, store.get()), cfg);
        CHECK(static_cast<long>(store->size()) == live.total_calls);
    }
    auto store = RecordStore::open_replay(path);
    int before = counter;
    for (int parallel : {1, 3}) {
        cfg.max_parallel = parallel;
        auto replayed = cges_run(qs, replay_sampler(*store, ConfidenceConfig{}), cfg);
        for (std::size_t i = 0; i < qs.size(); ++i) {
            CHECK(replayed.outcomes[i].prediction == live.outcomes[i].prediction);
            CHECK(replayed.outcomes[i].calls == live.outcomes[i].calls);
            CHECK(replayed.outcomes[i].posterior.candidates.size() == live.outcomes[i].posterior.candidates.size());
        }
    }
    CHECK(counter == before);

    cfg.gamma = 1.0;
    CHECK_THROWS_AS(cges_run(qs, replay_sampler(*store, ConfidenceConfig{}), cfg), Error);
}
