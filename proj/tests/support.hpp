#pragma once

// Shared test fixtures: scripted samplers and randomized replay stores.

#include "cges/controller.hpp"
#include "cges/llmclient.hpp"
#include "cges/question.hpp"

#include <map>
#include <memory>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace testing_support {

using Script = std::map<std::string, std::vector<cges::Sample>>;

/// Serves script[question][round - 1]; throws std::out_of_range past the end.
inline cges::Sampler scripted(const Script& script) {
    return [&script](const cges::Question& q, int round) {
        return script.at(q.id).at(static_cast<std::size_t>(round - 1));
    };
}

inline std::vector<cges::Question> questions(int n, const std::string& gold = "A",
                                             cges::AnswerFormat format = cges::AnswerFormat::LetterChoice) {
    std::vector<cges::Question> out;
    for (int i = 0; i < n; ++i) {
        out.push_back({"q" + std::to_string(i), "question " + std::to_string(i), format, gold});
    }
    return out;
}

/// Replay store with `rounds` records per question. Labels come from a small
/// pool biased toward "A"; confidences are stored under every estimator name.
inline std::unique_ptr<cges::RecordStore> random_store(const std::vector<cges::Question>& qs, int rounds,
                                                       std::uint64_t seed) {
    auto store = cges::RecordStore::in_memory(cges::RecordStore::Mode::Record);
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> conf(0.05, 0.95);
    std::discrete_distribution<int> pick({5, 3, 2, 1});
    const char* labels[] = {"A", "B", "C", "D"};
    for (const auto& q : qs) {
        for (int r = 1; r <= rounds; ++r) {
            cges::SampleRecord rec;
            rec.question_id = q.id;
            rec.round = r;
            rec.seed = seed;
            rec.extracted_label = labels[pick(rng)];
            rec.raw_text = "Answer: " + rec.extracted_label;
            double c = conf(rng);
            for (const char* name : {"lns-arith", "lns-geo", "mars", "rm"}) {
                rec.confidence_by_estimator[name] = c;
            }
            store->append(rec);
        }
    }
    store->seal();
    return store;
}

} // namespace testing_support
