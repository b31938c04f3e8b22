#include "cges/error.hpp"
#include "cges/posterior.hpp"

#include "doctest.h"
#include "oracles.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

using namespace cges;

namespace {

std::vector<Sample> samples_of(std::initializer_list<std::pair<const char*, double>> items) {
    std::vector<Sample> out;
    int round = 1;
    for (const auto& [label, c] : items) {
        out.push_back({label, c, round++});
    }
    return out;
}

double total_mass(const PosteriorVector& p) {
    double sum = p.virtual_mass;
    for (const auto& c : p.candidates) sum += c.mass;
    return sum;
}

ErrorCode code_of(auto&& fn) {
    try {
        fn();
    } catch (const Error& ex) {
        return ex.code();
    }
    FAIL("expected cges::Error");
    return ErrorCode::Io;
}

} // namespace

TEST_CASE("log_likelihood matches the one-versus-rest kernel") {
    CHECK(log_likelihood({"a", 0.5}, true, 2) == doctest::Approx(std::log(0.5)).epsilon(1e-15));
    CHECK(log_likelihood({"a", 0.5}, false, 2) == doctest::Approx(std::log(0.5)).epsilon(1e-15));
    CHECK(log_likelihood({"a", 0.9}, false, 3) == doctest::Approx(std::log(0.05)).epsilon(1e-13));
    CHECK(log_likelihood({"a", 0.9}, true, 3) == doctest::Approx(std::log(0.9)).epsilon(1e-15));
    CHECK(code_of([] { log_likelihood({"a", 0.5}, true, 1); }) == ErrorCode::InvalidCandidateCount);
    CHECK(code_of([] { log_likelihood({"a", 0.0}, true, 2); }) == ErrorCode::InvalidConfidence);
    CHECK(code_of([] { log_likelihood({"a", 1.0}, true, 2); }) == ErrorCode::InvalidConfidence);
}

TEST_CASE("score reproduces the worked product examples") {
    SUBCASE("K=2, two agreeing samples") {
        auto p = score(samples_of({{"a1", 0.9}, {"a1", 0.9}}), CandidateSet(KPolicy::fixed(2), {"a1", "a2"}));
        CHECK(*p.mass("a1") == doctest::Approx(0.81 / 0.82).epsilon(1e-12));
        CHECK(*p.mass("a2") == doctest::Approx(0.01 / 0.82).epsilon(1e-12));
        CHECK(p.virtual_mass == 0.0);
    }
    SUBCASE("K=3 minority-but-confident") {
        auto p = score(samples_of({{"a1", 0.9}, {"a2", 0.2}, {"a2", 0.2}}),
                       CandidateSet(KPolicy::fixed(3), {"a1", "a2", "a3"}));
        CHECK(*p.mass("a1") == doctest::Approx(0.144 / 0.154).epsilon(1e-12));
        CHECK(*p.mass("a2") == doctest::Approx(0.002 / 0.154).epsilon(1e-12));
        CHECK(*p.mass("a3") == doctest::Approx(0.008 / 0.154).epsilon(1e-12));
        CHECK(top(p).label == "a1");
    }
    SUBCASE("K=3 with an unnamed slot reports it as unlabeled mass") {
        auto p = score(samples_of({{"a1", 0.9}, {"a2", 0.2}, {"a2", 0.2}}), CandidateSet(KPolicy::fixed(3)));
        CHECK(p.candidates.size() == 2);
        CHECK(p.virtual_count == 1);
        CHECK(p.virtual_mass == doctest::Approx(0.008 / 0.154).epsilon(1e-12));
    }
    SUBCASE("C = 1/K everywhere gives a uniform posterior") {
        auto p = score(samples_of({{"a", 0.25}, {"b", 0.25}, {"a", 0.25}, {"c", 0.25}}),
                       CandidateSet(KPolicy::fixed(4)));
        for (const auto& c : p.candidates) CHECK(c.mass == doctest::Approx(0.25).epsilon(1e-12));
        CHECK(p.virtual_mass == doctest::Approx(0.25).epsilon(1e-12));
    }
    SUBCASE("one sample under observed+virtual: mass equals confidence") {
        auto p = score(samples_of({{"a1", 0.8}}), CandidateSet());
        CHECK(p.effective_k == 2);
        CHECK(*p.mass("a1") == doctest::Approx(0.8).epsilon(1e-14));
        CHECK(p.virtual_mass == doctest::Approx(0.2).epsilon(1e-13));
    }
}

TEST_CASE("score rejects bad input") {
    CHECK(code_of([] { score({}, CandidateSet()); }) == ErrorCode::EmptyInput);
    CHECK(code_of([] { score(samples_of({{"a", 0.5}, {"b", 0.5}, {"c", 0.5}}), CandidateSet(KPolicy::fixed(2))); }) ==
          ErrorCode::InvalidCandidateCount);
    CHECK_THROWS_AS(KPolicy::parse("fixed:1"), Error);
    CHECK(code_of([] { KPolicy::parse("nonsense"); }) == ErrorCode::Configuration);
}

TEST_CASE("KPolicy parse and print round-trip") {
    CHECK(KPolicy::parse("fixed:4").kind == KPolicyKind::FixedK);
    CHECK(KPolicy::parse("fixed:4").k == 4);
    CHECK(KPolicy::parse("observed+virtual").kind == KPolicyKind::ObservedPlusVirtual);
    CHECK(KPolicy::parse(KPolicy::fixed(7).to_string()).k == 7);
}

TEST_CASE("top never returns the virtual candidate and breaks ties by insertion") {
    PosteriorVector p;
    p.candidates = {{"a1", 0.0, 0.4}};
    p.virtual_mass = 0.6;
    p.virtual_count = 1;
    CHECK(top(p).label == "a1");
    CHECK(top(p).mass == 0.4);

    auto tie = score(samples_of({{"x", 0.7}, {"y", 0.7}}), CandidateSet());
    CHECK(top(tie).label == "x");
    auto tie2 = score(samples_of({{"y", 0.7}, {"x", 0.7}}), CandidateSet());
    CHECK(top(tie2).label == "y");
}

TEST_CASE("llr_increment") {
    CHECK(llr_increment({"a", 0.7}, true, false, 2) == doctest::Approx(std::log(0.7 / 0.3)).epsilon(1e-13));
    CHECK(llr_increment({"a", 0.7}, false, true, 2) == doctest::Approx(-std::log(0.7 / 0.3)).epsilon(1e-13));
    CHECK(llr_increment({"a", 0.7}, false, false, 5) == 0.0);
    CHECK(code_of([] { llr_increment({"a", 0.7}, true, true, 2); }) == ErrorCode::ContradictoryHypotheses);
}

TEST_CASE("score agrees with the direct product on random instances") {
    std::mt19937_64 rng(11);
    std::uniform_real_distribution<double> conf(0.02, 0.98);
    for (int trial = 0; trial < 2000; ++trial) {
        int k = 2 + static_cast<int>(rng() % 5);
        int m = 1 + static_cast<int>(rng() % 12);
        std::vector<oracle::Obs> obs;
        std::vector<Sample> samples;
        auto labels = std::vector<std::string>();
        for (int i = 0; i < k; ++i) labels.push_back("L" + std::to_string(i));
        for (int t = 0; t < m; ++t) {
            int label = static_cast<int>(rng() % k);
            double c = conf(rng);
            obs.push_back({label, c});
            samples.push_back({labels[label], c, t + 1});
        }
        auto expected = oracle::product_posterior(obs, k);
        auto p = score(samples, CandidateSet(KPolicy::fixed(k), labels));
        for (int i = 0; i < k; ++i) {
            CHECK(std::abs(*p.mass(labels[i]) - expected[i]) <= 1e-10 * expected[i]);
        }
    }
}

TEST_CASE("posterior properties") {
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> conf(0.01, 0.99);
    const std::vector<std::string> pool = {"p", "q", "r", "s"};

    for (int trial = 0; trial < 500; ++trial) {
        int m = 1 + static_cast<int>(rng() % 10);
        std::vector<Sample> samples;
        for (int t = 0; t < m; ++t) samples.push_back({pool[rng() % pool.size()], conf(rng), t + 1});

        for (auto policy : {KPolicy::observed_plus_virtual(), KPolicy::fixed(4), KPolicy::fixed(6)}) {
            auto p = score(samples, CandidateSet(policy));
            CHECK(std::abs(total_mass(p) - 1.0) <= 1e-9);
            for (const auto& c : p.candidates) CHECK(c.mass >= 0.0);

            // Order invariance (candidate order fixed so only samples move).
            auto shuffled = samples;
            std::shuffle(shuffled.begin(), shuffled.end(), rng);
            std::vector<std::string> order;
            for (const auto& c : p.candidates) order.push_back(c.label);
            auto q = score(shuffled, CandidateSet(policy, order));
            for (const auto& c : p.candidates) CHECK(*q.mass(c.label) == doctest::Approx(c.mass).epsilon(1e-12));

            // Permutation equivariance: renaming labels moves masses with them.
            auto renamed = samples;
            for (auto& s : renamed) s.label = "renamed_" + s.label;
            auto r = score(renamed, CandidateSet(policy));
            for (const auto& c : p.candidates)
                CHECK(*r.mass("renamed_" + c.label) == doctest::Approx(c.mass).epsilon(1e-12));
        }
    }
}

TEST_CASE("appending a sample moves its label's mass in the direction of C - 1/K") {
    std::mt19937_64 rng(9);
    std::uniform_real_distribution<double> conf(0.05, 0.95);
    const int k = 4;
    const std::vector<std::string> labels = {"a", "b", "c", "d"};
    for (int trial = 0; trial < 300; ++trial) {
        std::vector<Sample> samples;
        int m = 1 + static_cast<int>(rng() % 6);
        for (int t = 0; t < m; ++t) samples.push_back({labels[rng() % k], conf(rng), t + 1});
        CandidateSet set(KPolicy::fixed(k), labels);
        auto before = score(samples, set);
        const auto& target = labels[rng() % k];
        for (double c : {0.1, 0.25, 0.6}) {
            auto extended = samples;
            extended.push_back({target, c, m + 1});
            auto after = score(extended, set);
            double b = *before.mass(target);
            double a = *after.mass(target);
            if (c > 0.25) CHECK(a > b);
            if (c < 0.25) CHECK(a < b);
            if (c == 0.25) {
                for (const auto& l : labels) CHECK(*after.mass(l) == doctest::Approx(*before.mass(l)).epsilon(1e-12));
            }
        }
    }
}

TEST_CASE("log space survives products that underflow") {
    std::vector<Sample> samples;
    for (int t = 0; t < 2000; ++t) samples.push_back({t % 3 == 0 ? "x" : "y", 0.05, t + 1});
    auto p = score(samples, CandidateSet(KPolicy::fixed(3)));
    CHECK(std::isfinite(p.candidates[0].log_unnormalized));
    CHECK(std::abs(total_mass(p) - 1.0) <= 1e-9);
    CHECK(top(p).label != "y");
}

TEST_CASE("accumulator matches batch score at every prefix, including growing K") {
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> conf(0.05, 0.95);
    const std::vector<std::string> pool = {"u", "v", "w"};
    ScoreAccumulator acc{CandidateSet()};
    std::vector<Sample> seen;
    for (int t = 1; t <= 40; ++t) {
        Sample s{pool[rng() % pool.size()], conf(rng), t};
        acc.add(s);
        seen.push_back(s);
        auto a = acc.posterior();
        auto b = score(seen, CandidateSet());
        REQUIRE(a.candidates.size() == b.candidates.size());
        for (std::size_t i = 0; i < a.candidates.size(); ++i)
            CHECK(a.candidates[i].mass == doctest::Approx(b.candidates[i].mass).epsilon(1e-12));
        CHECK(a.virtual_mass == doctest::Approx(b.virtual_mass).epsilon(1e-12));
    }
}
