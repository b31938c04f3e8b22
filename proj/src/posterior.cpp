#include "cges/posterior.hpp"

#include "cges/error.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <limits>

namespace cges {

namespace {

void check_confidence(const Sample& sample) {
    if (!std::isfinite(sample.confidence) || sample.confidence <= 0.0 || sample.confidence >= 1.0) {
        throw Error(ErrorCode::InvalidConfidence,
                    "confidence for label '" + sample.label + "' must lie in (0,1), got " +
                        std::to_string(sample.confidence));
    }
}

void check_k(int effective_k) {
    if (effective_k < 2) {
        throw Error(ErrorCode::InvalidCandidateCount,
                    "effective K must be at least 2, got " + std::to_string(effective_k));
    }
}

} // namespace

KPolicy KPolicy::parse(std::string_view text) {
    if (text == "observed+virtual") {
        return observed_plus_virtual();
    }
    constexpr std::string_view prefix = "fixed:";
    if (text.starts_with(prefix)) {
        auto digits = text.substr(prefix.size());
        int k = 0;
        auto [end, ec] = std::from_chars(digits.data(), digits.data() + digits.size(), k);
        if (ec == std::errc() && end == digits.data() + digits.size()) {
            check_k(k);
            return fixed(k);
        }
    }
    throw Error(ErrorCode::Configuration,
                "k-policy must be 'fixed:K' or 'observed+virtual', got '" + std::string(text) + "'");
}

std::string KPolicy::to_string() const {
    return kind == KPolicyKind::FixedK ? "fixed:" + std::to_string(k) : "observed+virtual";
}

CandidateSet::CandidateSet(KPolicy policy) : policy_(policy) {
    if (policy_.kind == KPolicyKind::FixedK) {
        check_k(policy_.k);
    }
}

CandidateSet::CandidateSet(KPolicy policy, std::vector<std::string> labels) : CandidateSet(policy) {
    for (auto& label : labels) {
        if (find(label)) {
            throw Error(ErrorCode::Configuration, "duplicate candidate label '" + label + "'");
        }
        add(label);
    }
}

std::size_t CandidateSet::add(const std::string& label) {
    if (auto pos = find(label)) {
        return *pos;
    }
    if (policy_.kind == KPolicyKind::FixedK && static_cast<int>(labels_.size()) >= policy_.k) {
        throw Error(ErrorCode::InvalidCandidateCount,
                    "label '" + label + "' would exceed fixed K=" + std::to_string(policy_.k));
    }
    labels_.push_back(label);
    return labels_.size() - 1;
}

std::optional<std::size_t> CandidateSet::find(std::string_view label) const {
    auto it = std::find(labels_.begin(), labels_.end(), label);
    if (it == labels_.end()) {
        return std::nullopt;
    }
    return static_cast<std::size_t>(it - labels_.begin());
}

int CandidateSet::effective_k() const noexcept {
    if (policy_.kind == KPolicyKind::FixedK) {
        return policy_.k;
    }
    return static_cast<int>(labels_.size()) + 1;
}

int CandidateSet::unlabeled_count() const noexcept {
    return effective_k() - static_cast<int>(labels_.size());
}

std::optional<double> PosteriorVector::mass(std::string_view label) const {
    for (const auto& c : candidates) {
        if (c.label == label) {
            return c.mass;
        }
    }
    return std::nullopt;
}

double log_likelihood(const Sample& sample, bool hypothesis_matches, int effective_k) {
    check_k(effective_k);
    check_confidence(sample);
    if (hypothesis_matches) {
        return std::log(sample.confidence);
    }
    return std::log1p(-sample.confidence) - std::log(static_cast<double>(effective_k - 1));
}

ScoreAccumulator::ScoreAccumulator(CandidateSet candidates)
    : candidates_(std::move(candidates)), stats_(candidates_.size()) {}

void ScoreAccumulator::add(const Sample& sample) {
    check_confidence(sample);
    std::size_t index = candidates_.add(sample.label);
    if (index >= stats_.size()) {
        stats_.resize(index + 1);
    }
    double log_c = std::log(sample.confidence);
    double log_1mc = std::log1p(-sample.confidence);
    stats_[index].sum_log_c += log_c;
    stats_[index].sum_log_1mc += log_1mc;
    stats_[index].count += 1;
    sum_log_1mc_ += log_1mc;
    count_ += 1;
}

// log s_a = sum_{t: R_t = a} log C_t + sum_{t: R_t != a} [log(1 - C_t) - log(K - 1)]
double ScoreAccumulator::log_score(std::size_t index) const {
    return log_score(index, std::log(static_cast<double>(candidates_.effective_k() - 1)));
}

double ScoreAccumulator::log_score(std::size_t index, double log_km1) const {
    const auto& s = stats_.at(index);
    double mismatched = static_cast<double>(count_ - s.count);
    return s.sum_log_c + (sum_log_1mc_ - s.sum_log_1mc) - mismatched * log_km1;
}

double ScoreAccumulator::unlabeled_log_score() const {
    double log_km1 = std::log(static_cast<double>(candidates_.effective_k() - 1));
    return sum_log_1mc_ - static_cast<double>(count_) * log_km1;
}

PosteriorVector ScoreAccumulator::posterior() const {
    if (count_ == 0) {
        throw Error(ErrorCode::EmptyInput, "posterior requires at least one sample");
    }
    check_k(candidates_.effective_k());

    PosteriorVector out;
    out.effective_k = candidates_.effective_k();
    out.virtual_count = candidates_.unlabeled_count();
    out.candidates.reserve(candidates_.size());

    const double log_km1 = std::log(static_cast<double>(out.effective_k - 1));
    double max_log = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < candidates_.size(); ++i) {
        double ls = log_score(i, log_km1);
        out.candidates.push_back({candidates_.labels()[i], ls, 0.0});
        max_log = std::max(max_log, ls);
    }
    if (out.virtual_count > 0) {
        out.virtual_log_unnormalized = sum_log_1mc_ - static_cast<double>(count_) * log_km1;
        max_log = std::max(max_log, out.virtual_log_unnormalized);
    }

    double z = 0.0;
    for (auto& c : out.candidates) {
        c.mass = std::exp(c.log_unnormalized - max_log);
        z += c.mass;
    }
    double virtual_weight = 0.0;
    if (out.virtual_count > 0) {
        virtual_weight = out.virtual_count * std::exp(out.virtual_log_unnormalized - max_log);
        z += virtual_weight;
    }
    for (auto& c : out.candidates) {
        c.mass /= z;
    }
    out.virtual_mass = virtual_weight / z;
    return out;
}

PosteriorVector score(std::span<const Sample> samples, CandidateSet candidates) {
    if (samples.empty()) {
        throw Error(ErrorCode::EmptyInput, "score requires at least one sample");
    }
    ScoreAccumulator acc(std::move(candidates));
    for (const auto& s : samples) {
        acc.add(s);
    }
    return acc.posterior();
}

TopCandidate top(const PosteriorVector& posterior) {
    if (posterior.candidates.empty()) {
        throw Error(ErrorCode::EmptyInput, "top requires at least one labeled candidate");
    }
    const CandidateMass* best = &posterior.candidates.front();
    for (const auto& c : posterior.candidates) {
        if (c.mass > best->mass) {
            best = &c;
        }
    }
    return {best->label, best->mass};
}

double llr_increment(const Sample& sample, bool i_matches, bool k_matches, int effective_k) {
    if (i_matches && k_matches) {
        throw Error(ErrorCode::ContradictoryHypotheses,
                    "a sample cannot match two distinct hypotheses");
    }
    return log_likelihood(sample, i_matches, effective_k) -
           log_likelihood(sample, k_matches, effective_k);
}

} // namespace cges
