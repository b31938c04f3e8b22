#include "cges/llmclient.hpp"

#include "cges/error.hpp"

#include "httplib.h"
#include "json.hpp"

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <ctime>
#include <regex>

namespace cges {

using json = nlohmann::json;
using ordered_json = nlohmann::ordered_json;

namespace {

std::string utc_timestamp() {
    auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    char buf[32];
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

template <typename T>
void read_if_present(const json& j, const char* key, T& out) {
    if (auto it = j.find(key); it != j.end() && !it->is_null()) {
        out = it->get<T>();
    }
}

std::string key_text(std::string_view question_id, int round) {
    return "(question_id='" + std::string(question_id) + "', round=" + std::to_string(round) + ")";
}

std::optional<std::string> last_boxed(std::string_view text) {
    constexpr std::string_view marker = "\\boxed";
    auto pos = text.rfind(marker);
    while (pos != std::string_view::npos) {
        auto open = pos + marker.size();
        while (open < text.size() && text[open] == ' ') {
            ++open;
        }
        if (open < text.size() && text[open] == '{') {
            int depth = 0;
            for (auto i = open; i < text.size(); ++i) {
                if (text[i] == '{') {
                    ++depth;
                } else if (text[i] == '}' && --depth == 0) {
                    return std::string(text.substr(open + 1, i - open - 1));
                }
            }
            return std::nullopt;   // unbalanced: truncated output
        }
        if (pos == 0) {
            break;
        }
        pos = text.rfind(marker, pos - 1);
    }
    return std::nullopt;
}

const std::regex& letter_marker() {
    static const std::regex re(
        R"((?:answer|Answer|ANSWER)(?:\s+is)?\s*\**\s*:?\s*\**\s*\(?([A-Z])\)?(?![A-Za-z0-9]))");
    return re;
}

} // namespace

void EndpointConfig::validate() const {
    if (!(temperature >= 0.0)) {
        throw Error(ErrorCode::Configuration, "temperature must be non-negative");
    }
    if (!(top_p > 0.0 && top_p <= 1.0)) {
        throw Error(ErrorCode::Configuration, "top_p must lie in (0, 1]");
    }
    if (max_tokens < 1) {
        throw Error(ErrorCode::Configuration, "max_tokens must be positive");
    }
    if (max_parallel < 1) {
        throw Error(ErrorCode::Configuration, "max_parallel must be positive");
    }
    if (max_retries < 0) {
        throw Error(ErrorCode::Configuration, "max_retries must be non-negative");
    }
    if (!(request_timeout_s > 0.0)) {
        throw Error(ErrorCode::Configuration, "request timeout must be positive");
    }
    if (!base_url.starts_with("http://")) {
        throw Error(ErrorCode::Configuration, "base_url must be an http:// URL, got '" + base_url + "'");
    }
}

EndpointConfig EndpointConfig::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw Error(ErrorCode::Io, "cannot open endpoint config " + path.string());
    }
    json j;
    try {
        j = json::parse(in);
    } catch (const json::exception& ex) {
        throw Error(ErrorCode::Parse, path.string() + ": " + ex.what());
    }
    if (j.contains("api_key")) {
        throw Error(ErrorCode::Configuration,
                    "endpoint config must not contain an api_key; set it in the environment variable named by api_key_env");
    }
    EndpointConfig c;
    try {
        read_if_present(j, "base_url", c.base_url);
        read_if_present(j, "completions_path", c.completions_path);
        read_if_present(j, "model_name", c.model_name);
        read_if_present(j, "temperature", c.temperature);
        read_if_present(j, "top_p", c.top_p);
        read_if_present(j, "max_tokens", c.max_tokens);
        read_if_present(j, "request_timeout_s", c.request_timeout_s);
        read_if_present(j, "max_parallel", c.max_parallel);
        read_if_present(j, "max_retries", c.max_retries);
        read_if_present(j, "api_key_env", c.api_key_env);
        read_if_present(j, "content_pointer", c.content_pointer);
        read_if_present(j, "logprobs_pointer", c.logprobs_pointer);
        read_if_present(j, "logprob_field", c.logprob_field);
        read_if_present(j, "token_field", c.token_field);
    } catch (const json::exception& ex) {
        throw Error(ErrorCode::Parse, path.string() + ": " + ex.what());
    }
    c.validate();
    return c;
}

std::string SampleRecord::to_json_line() const {
    ordered_json j;
    j["question_id"] = question_id;
    j["round"] = round;
    j["seed"] = seed;
    j["timestamp"] = timestamp;
    j["prompt"] = prompt;
    j["raw_text"] = raw_text;
    j["extracted_label"] = extracted_label;
    j["degraded"] = degraded;
    j["token_probs"] = token_probs ? ordered_json(*token_probs) : ordered_json(nullptr);
    if (step_boundaries) {
        ordered_json steps = ordered_json::array();
        for (const auto& s : *step_boundaries) {
            steps.push_back({s.begin, s.end});
        }
        j["step_boundaries"] = steps;
    } else {
        j["step_boundaries"] = nullptr;
    }
    j["step_importance"] = step_importance ? ordered_json(*step_importance) : ordered_json(nullptr);
    j["reward_score"] = reward_score ? ordered_json(*reward_score) : ordered_json(nullptr);
    ordered_json conf = ordered_json::object();
    for (const auto& [name, value] : confidence_by_estimator) {
        conf[name] = value;
    }
    j["confidence_by_estimator"] = conf;
    return j.dump(-1, ' ', false, json::error_handler_t::replace);
}

SampleRecord SampleRecord::from_json_line(std::string_view line) {
    SampleRecord r;
    try {
        auto j = json::parse(line);
        r.question_id = j.at("question_id").get<std::string>();
        r.round = j.at("round").get<int>();
        read_if_present(j, "seed", r.seed);
        read_if_present(j, "timestamp", r.timestamp);
        read_if_present(j, "prompt", r.prompt);
        read_if_present(j, "raw_text", r.raw_text);
        read_if_present(j, "extracted_label", r.extracted_label);
        read_if_present(j, "degraded", r.degraded);
        if (auto it = j.find("token_probs"); it != j.end() && !it->is_null()) {
            r.token_probs = it->get<std::vector<double>>();
        }
        if (auto it = j.find("step_boundaries"); it != j.end() && !it->is_null()) {
            std::vector<TokenRange> steps;
            for (const auto& s : *it) {
                steps.push_back({s.at(0).get<std::size_t>(), s.at(1).get<std::size_t>()});
            }
            r.step_boundaries = std::move(steps);
        }
        if (auto it = j.find("step_importance"); it != j.end() && !it->is_null()) {
            r.step_importance = it->get<std::vector<double>>();
        }
        if (auto it = j.find("reward_score"); it != j.end() && !it->is_null()) {
            r.reward_score = it->get<double>();
        }
        if (auto it = j.find("confidence_by_estimator"); it != j.end() && !it->is_null()) {
            r.confidence_by_estimator = it->get<std::map<std::string, double>>();
        }
    } catch (const json::exception& ex) {
        throw Error(ErrorCode::Parse, std::string("bad sample record: ") + ex.what());
    }
    if (r.extracted_label.empty()) {
        r.extracted_label = kInvalidLabel;
    }
    return r;
}

TokenizedResponse SampleRecord::tokenized() const {
    TokenizedResponse tr;
    if (token_probs) {
        tr.token_probs = *token_probs;
    }
    if (step_boundaries) {
        tr.step_boundaries = *step_boundaries;
    }
    if (step_importance) {
        tr.step_importance = *step_importance;
    }
    return tr;
}

void compute_confidences(SampleRecord& record, double clamp_epsilon) {
    record.confidence_by_estimator.clear();
    if (record.token_probs && !record.token_probs->empty() && !record.degraded) {
        auto tr = record.tokenized();
        record.confidence_by_estimator[std::string(to_string(Estimator::LnsArithmetic))] =
            lns_arithmetic(tr, clamp_epsilon);
        record.confidence_by_estimator[std::string(to_string(Estimator::LnsGeometric))] =
            lns_geometric(tr, clamp_epsilon);
        if (!tr.step_importance.empty()) {
            record.confidence_by_estimator[std::string(to_string(Estimator::MarsStepwise))] =
                mars_stepwise(tr, clamp_epsilon);
        }
    }
    if (record.reward_score) {
        record.confidence_by_estimator[std::string(to_string(Estimator::RewardPassthrough))] =
            reward_passthrough(*record.reward_score, clamp_epsilon);
    }
}

double record_confidence(const SampleRecord& record, const ConfidenceConfig& config) {
    bool has_tokens = record.token_probs && !record.token_probs->empty() && !record.degraded;
    bool computable = config.estimator == Estimator::RewardPassthrough
                          ? record.reward_score.has_value()
                          : has_tokens && (config.estimator != Estimator::MarsStepwise ||
                                           (record.step_importance && !record.step_importance->empty()));
    if (computable) {
        return estimate_confidence(record.tokenized(), config, record.reward_score);
    }
    auto name = std::string(to_string(config.estimator));
    if (auto it = record.confidence_by_estimator.find(name); it != record.confidence_by_estimator.end()) {
        return clamp_confidence(it->second, config.clamp_epsilon);
    }
    throw Error(ErrorCode::Configuration,
                "record " + key_text(record.question_id, record.round) + " has no data for estimator '" +
                    name + (record.degraded ? "' (endpoint returned no log-probabilities)" : "'"));
}

RecordStore::RecordStore(Mode mode, std::optional<std::filesystem::path> path)
    : mode_(mode), path_(std::move(path)) {}

std::unique_ptr<RecordStore> RecordStore::open_record(const std::filesystem::path& path) {
    std::unique_ptr<RecordStore> store(new RecordStore(Mode::Record, path));
    if (std::filesystem::exists(path)) {
        store->load_existing();
    }
    store->out_.open(path, std::ios::app | std::ios::binary);
    if (!store->out_) {
        throw Error(ErrorCode::Io, "cannot open record store " + path.string() + " for appending");
    }
    return store;
}

std::unique_ptr<RecordStore> RecordStore::open_replay(const std::filesystem::path& path) {
    std::unique_ptr<RecordStore> store(new RecordStore(Mode::Replay, path));
    if (!std::filesystem::exists(path)) {
        throw Error(ErrorCode::Io, "replay store " + path.string() + " does not exist");
    }
    store->load_existing();
    return store;
}

std::unique_ptr<RecordStore> RecordStore::in_memory(Mode mode) {
    return std::unique_ptr<RecordStore>(new RecordStore(mode, std::nullopt));
}

void RecordStore::load_existing() {
    std::ifstream in(*path_, std::ios::binary);
    if (!in) {
        throw Error(ErrorCode::Io, "cannot read record store " + path_->string());
    }
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) {
            continue;
        }
        SampleRecord r;
        try {
            r = SampleRecord::from_json_line(line);
        } catch (const Error& ex) {
            throw Error(ErrorCode::Parse, path_->string() + ":" + std::to_string(line_no) + ": " + ex.what());
        }
        auto key = std::pair{r.question_id, r.round};
        if (index_.contains(key)) {
            throw Error(ErrorCode::DuplicateRecord,
                        path_->string() + ":" + std::to_string(line_no) + ": duplicate " +
                            key_text(r.question_id, r.round));
        }
        index_.emplace(std::move(key), std::move(r));
    }
}

void RecordStore::append(const SampleRecord& record) {
    std::lock_guard lock(mutex_);
    if (mode_ != Mode::Record) {
        throw Error(ErrorCode::Configuration, "cannot append to a replay store");
    }
    auto key = std::pair{record.question_id, record.round};
    if (index_.contains(key)) {
        throw Error(ErrorCode::DuplicateRecord, "record " + key_text(record.question_id, record.round) +
                                                    " already exists");
    }
    if (out_.is_open()) {
        out_ << record.to_json_line() << '\n';
        out_.flush();
        if (!out_) {
            throw Error(ErrorCode::Io, "write to record store failed");
        }
    }
    index_.emplace(std::move(key), record);
}

SampleRecord RecordStore::get(std::string_view question_id, int round) const {
    std::lock_guard lock(mutex_);
    auto it = index_.find(std::pair{std::string(question_id), round});
    if (it == index_.end()) {
        throw Error(ErrorCode::ReplayMiss, "no record for " + key_text(question_id, round));
    }
    return it->second;
}

bool RecordStore::contains(std::string_view question_id, int round) const {
    std::lock_guard lock(mutex_);
    return index_.contains(std::pair{std::string(question_id), round});
}

std::size_t RecordStore::size() const {
    std::lock_guard lock(mutex_);
    return index_.size();
}

std::string extract_answer(std::string_view text, AnswerFormat format) {
    if (format == AnswerFormat::BoxedMath) {
        auto boxed = last_boxed(text);
        if (!boxed) {
            return std::string(kInvalidLabel);
        }
        auto label = collapse_whitespace(*boxed);
        return label.empty() ? std::string(kInvalidLabel) : label;
    }

    std::string owned(text);
    std::string last;
    for (auto it = std::sregex_iterator(owned.begin(), owned.end(), letter_marker());
         it != std::sregex_iterator(); ++it) {
        last = (*it)[1].str();
    }
    if (!last.empty()) {
        return last;
    }
    // Models sometimes box the option letter instead of writing the marker line.
    if (auto boxed = last_boxed(text)) {
        auto label = collapse_whitespace(*boxed);
        if (label.size() == 1 && label[0] >= 'A' && label[0] <= 'Z') {
            return label;
        }
    }
    return std::string(kInvalidLabel);
}

std::string render_answer_line(std::string_view label, AnswerFormat format) {
    if (format == AnswerFormat::BoxedMath) {
        return "The final answer is \\boxed{" + std::string(label) + "}";
    }
    return "Answer: " + std::string(label);
}

std::string render_prompt(const Question& question) {
    if (question.format == AnswerFormat::BoxedMath) {
        return question.prompt +
               "\n\nPlease reason step by step, and put your final answer within \\boxed{}.";
    }
    return question.prompt +
           "\n\nThink step by step. End your response with a final line of the form "
           "\"Answer: X\", where X is the letter of the correct option.";
}

std::uint64_t stable_hash(std::string_view text) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : text) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::uint64_t request_seed(std::uint64_t run_seed, std::string_view question_id, int round) {
    std::uint64_t z = run_seed ^ stable_hash(question_id);
    z += 0x9E3779B97F4A7C15ULL * static_cast<std::uint64_t>(round);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    // Many servers take the seed as a signed 32/64-bit integer.
    return (z ^ (z >> 31)) & 0x7FFFFFFFULL;
}

std::vector<TokenRange> newline_steps(const std::vector<std::string>& tokens) {
    std::vector<TokenRange> steps;
    std::size_t begin = 0;
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        if (tokens[i].find('\n') != std::string::npos) {
            steps.push_back({begin, i + 1});
            begin = i + 1;
        }
    }
    if (begin < tokens.size()) {
        steps.push_back({begin, tokens.size()});
    }
    return steps;
}

SampleRecord sample_once(const Question& question, int round, const EndpointConfig& endpoint,
                         std::uint64_t seed, const ImportanceProvider& importance) {
    endpoint.validate();
    SampleRecord record;
    record.question_id = question.id;
    record.round = round;
    record.seed = seed;
    record.prompt = render_prompt(question);

    ordered_json request;
    request["model"] = endpoint.model_name;
    request["messages"] = ordered_json::array({{{"role", "user"}, {"content", record.prompt}}});
    request["temperature"] = endpoint.temperature;
    request["top_p"] = endpoint.top_p;
    request["max_tokens"] = endpoint.max_tokens;
    request["logprobs"] = true;
    request["seed"] = seed;
    auto body = request.dump();

    httplib::Client client(endpoint.base_url);
    auto timeout = std::chrono::duration_cast<std::chrono::microseconds>(
        std::chrono::duration<double>(endpoint.request_timeout_s));
    client.set_connection_timeout(std::chrono::duration_cast<std::chrono::seconds>(timeout).count(),
                                  static_cast<time_t>(timeout.count() % 1000000));
    client.set_read_timeout(std::chrono::duration_cast<std::chrono::seconds>(timeout).count(),
                            static_cast<time_t>(timeout.count() % 1000000));
    httplib::Headers headers;
    if (const char* key = std::getenv(endpoint.api_key_env.c_str()); key && *key) {
        headers.emplace("Authorization", std::string("Bearer ") + key);
    }

    std::string last_error;
    json response;
    bool ok = false;
    for (int attempt = 0; attempt <= endpoint.max_retries && !ok; ++attempt) {
        auto res = client.Post(endpoint.completions_path, headers, body, "application/json");
        if (!res) {
            last_error = "transport error: " + httplib::to_string(res.error());
            continue;
        }
        if (res->status != 200) {
            last_error = "HTTP " + std::to_string(res->status);
            continue;
        }
        try {
            response = json::parse(res->body);
            ok = true;
        } catch (const json::exception& ex) {
            last_error = std::string("malformed response body: ") + ex.what();
        }
    }
    if (!ok) {
        throw Error(ErrorCode::SamplerFailure, "endpoint request for " + key_text(question.id, round) +
                                                   " failed after " + std::to_string(endpoint.max_retries + 1) +
                                                   " attempts: " + last_error);
    }

    try {
        const auto& content = response.at(json::json_pointer(endpoint.content_pointer));
        record.raw_text = content.is_string() ? content.get<std::string>() : std::string();
    } catch (const json::exception&) {
        record.raw_text.clear();
    }
    record.extracted_label = extract_answer(record.raw_text, question.format);

    std::vector<double> probs;
    std::vector<std::string> tokens;
    try {
        const auto& items = response.at(json::json_pointer(endpoint.logprobs_pointer));
        for (const auto& item : items) {
            double lp = item.at(endpoint.logprob_field).get<double>();
            probs.push_back(std::min(1.0, std::exp(lp)));
            if (auto tok = item.find(endpoint.token_field); tok != item.end() && tok->is_string()) {
                tokens.push_back(tok->get<std::string>());
            }
        }
    } catch (const json::exception&) {
        probs.clear();
    }
    if (probs.empty()) {
        record.degraded = true;
    } else {
        record.token_probs = std::move(probs);
        if (tokens.size() == record.token_probs->size()) {
            record.step_boundaries = newline_steps(tokens);
        }
        if (importance) {
            if (auto u = importance(record)) {
                record.step_importance = std::move(*u);
            }
        }
    }
    compute_confidences(record);
    record.timestamp = utc_timestamp();
    return record;
}

Sampler live_sampler(const EndpointConfig& endpoint, const ConfidenceConfig& confidence,
                     std::uint64_t run_seed, RecordStore* store, ImportanceProvider importance) {
    endpoint.validate();
    if (store && store->mode() != RecordStore::Mode::Record) {
        throw Error(ErrorCode::Configuration, "live sampling needs a store in record mode");
    }
    return [=](const Question& q, int round) {
        auto record = sample_once(q, round, endpoint, request_seed(run_seed, q.id, round), importance);
        if (store) {
            store->append(record);
        }
        return Sample{record.extracted_label, record_confidence(record, confidence), round};
    };
}

Sampler replay_sampler(const RecordStore& store, const ConfidenceConfig& confidence) {
    if (store.mode() != RecordStore::Mode::Replay) {
        throw Error(ErrorCode::Configuration, "replay sampler needs a store in replay mode");
    }
    return [&store, confidence](const Question& q, int round) {
        auto record = store.get(q.id, round);
        return Sample{record.extracted_label, record_confidence(record, confidence), round};
    };
}

} // namespace cges
