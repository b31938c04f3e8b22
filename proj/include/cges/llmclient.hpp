#pragma once

// Sampling from a chat-completions HTTP endpoint with token log-probabilities,
// answer extraction, and an append-only JSONL store for record/replay.

#include "cges/confidence.hpp"
#include "cges/controller.hpp"
#include "cges/question.hpp"

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace cges {

inline constexpr std::string_view kInvalidLabel = "INVALID";

struct EndpointConfig {
    std::string base_url = "http://127.0.0.1:8000";
    std::string completions_path = "/v1/chat/completions";
    std::string model_name = "default";
    double temperature = 0.7;
    double top_p = 1.0;
    int max_tokens = 32768;
    double request_timeout_s = 600.0;
    int max_parallel = 4;
    int max_retries = 3;
    /// Name of the environment variable holding the API key. The key itself is
    /// never stored in configs or records.
    std::string api_key_env = "CGES_API_KEY";
    /// JSON pointers into the response body.
    std::string content_pointer = "/choices/0/message/content";
    std::string logprobs_pointer = "/choices/0/logprobs/content";
    std::string logprob_field = "logprob";
    std::string token_field = "token";

    void validate() const;
    /// Reads a JSON object; absent keys keep their defaults.
    static EndpointConfig load(const std::filesystem::path& path);
};

struct SampleRecord {
    std::string question_id;
    int round = 1;
    std::uint64_t seed = 0;
    std::string timestamp;
    std::string prompt;
    std::string raw_text;
    std::string extracted_label{kInvalidLabel};
    /// Set when the endpoint returned no log-probabilities.
    bool degraded = false;
    std::optional<std::vector<double>> token_probs;
    std::optional<std::vector<TokenRange>> step_boundaries;
    std::optional<std::vector<double>> step_importance;
    std::optional<double> reward_score;
    /// Estimator name (lns-arith, lns-geo, mars, rm) -> confidence.
    std::map<std::string, double> confidence_by_estimator;

    /// One JSONL line, fixed field order, no trailing newline.
    std::string to_json_line() const;
    static SampleRecord from_json_line(std::string_view line);

    TokenizedResponse tokenized() const;
};

/// Confidence of a record under `config`: recomputed from token data or the
/// reward score when present, else the stored estimator value.
double record_confidence(const SampleRecord& record, const ConfidenceConfig& config);

/// Fills confidence_by_estimator with every estimator the record supports.
void compute_confidences(SampleRecord& record, double clamp_epsilon = kDefaultClampEpsilon);

/// Append-only record store keyed by (question_id, round).
class RecordStore {
public:
    enum class Mode { Record, Replay };

    /// Record mode: loads existing records (duplicates stay forbidden) and
    /// appends new ones to `path`.
    static std::unique_ptr<RecordStore> open_record(const std::filesystem::path& path);
    /// Replay mode: loads every record from `path`.
    static std::unique_ptr<RecordStore> open_replay(const std::filesystem::path& path);
    /// Store without a backing file.
    static std::unique_ptr<RecordStore> in_memory(Mode mode);

    Mode mode() const noexcept { return mode_; }
    const std::optional<std::filesystem::path>& path() const noexcept { return path_; }

    /// Throws DuplicateRecord if the key exists. Safe to call concurrently.
    void append(const SampleRecord& record);
    /// Throws ReplayMiss naming the key when absent.
    SampleRecord get(std::string_view question_id, int round) const;
    bool contains(std::string_view question_id, int round) const;
    std::size_t size() const;

    /// Switches an in-memory store to replay (used by tests and fixtures).
    void seal() { mode_ = Mode::Replay; }

private:
    RecordStore(Mode mode, std::optional<std::filesystem::path> path);
    void load_existing();

    Mode mode_;
    std::optional<std::filesystem::path> path_;
    std::ofstream out_;
    std::map<std::pair<std::string, int>, SampleRecord, std::less<>> index_;
    mutable std::mutex mutex_;
};

/// Last boxed expression (BoxedMath) or the last option letter after an answer
/// marker (LetterChoice), whitespace-normalized; "INVALID" when nothing matches.
std::string extract_answer(std::string_view text, AnswerFormat format);

/// Canonical final-answer line for `label`; extract_answer recovers it.
std::string render_answer_line(std::string_view label, AnswerFormat format);

/// Prompt sent to the model: the question plus the format instruction.
std::string render_prompt(const Question& question);

/// Stable 64-bit FNV-1a hash, used to derive per-request seeds.
std::uint64_t stable_hash(std::string_view text);

/// Per-request seed from (run seed, question id, round).
std::uint64_t request_seed(std::uint64_t run_seed, std::string_view question_id, int round);

/// Supplies MARS step importance for a freshly sampled record; optional.
using ImportanceProvider = std::function<std::optional<std::vector<double>>(const SampleRecord&)>;

/// Splits tokens into steps, ending a step after every token that contains a
/// newline.
std::vector<TokenRange> newline_steps(const std::vector<std::string>& tokens);

/// Issues one generation request (with retries) and builds the record.
SampleRecord sample_once(const Question& question, int round, const EndpointConfig& endpoint,
                         std::uint64_t seed, const ImportanceProvider& importance = {});

/// Live sampler. When `store` is non-null every record is appended to it.
Sampler live_sampler(const EndpointConfig& endpoint, const ConfidenceConfig& confidence,
                     std::uint64_t run_seed, RecordStore* store = nullptr,
                     ImportanceProvider importance = {});

/// Serves records from a Replay-mode store; never touches the network.
Sampler replay_sampler(const RecordStore& store, const ConfidenceConfig& confidence);

} // namespace cges
