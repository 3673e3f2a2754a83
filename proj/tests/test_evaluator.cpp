#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <set>

#include "crisisgen/evaluator.hpp"
#include "crisisgen/text.hpp"
#include "support/oracles.hpp"
#include "support/test_support.hpp"

using namespace crisisgen;
using namespace crisisgen::testing;

namespace {

const std::vector<std::pair<std::vector<float>, int>> kFiveEntries = {
    {{1.0f, 0.0f}, 1}, {{0.95f, 0.31f}, 1}, {{0.9f, 0.44f}, 1}, {{0.0f, 1.0f}, 3}, {{0.1f, 0.99f}, 3}};

std::vector<std::string> refs(std::initializer_list<const char*> xs) { return {xs.begin(), xs.end()}; }

} // namespace

TEST_CASE("location check is a case-insensitive substring test") {
    CHECK(check_location("Major damage in Napa tonight", "Napa"));
    CHECK(check_location("quake near NAPA valley", "napa"));
    CHECK_FALSE(check_location("Just saw a tremor downtown. Looks like someone dropped something HUGE. #SanFrancisco",
                               "San Francisco"));
    CHECK_THROWS_AS(check_location("anything", ""), PreconditionError);
    for (const std::string t : {"Napa, CA shaking", "nothing here"})
        CHECK(check_location(t, "napa") == check_location(text::to_upper(t), "napa"));
}

TEST_CASE("kNN: majority vote") {
    const auto store = make_store(kFiveEntries);
    CHECK(knn_damage(EmbeddingVector({1.0f, 0.0f}), store, 5) == 1);

    const auto unanimous = make_store({{{1, 0}, 2}, {{0, 1}, 2}, {{1, 1}, 2}, {{-1, 0}, 2}, {{0, -1}, 2}});
    CHECK(knn_damage(EmbeddingVector({0.3f, -0.7f}), unanimous, 5) == 2);
}

TEST_CASE("kNN: vote tie goes to the label of the nearest entry, small store votes whole") {
    const auto store = make_store({{{1.0f, 0.0f}, 2}, {{0.9f, 0.44f}, 2}, {{0.0f, 1.0f}, 0}, {{0.31f, 0.95f}, 0}});
    CHECK(knn_damage(EmbeddingVector({1.0f, 0.0f}), store, 5) == 2);
    // Nearest entry now labeled 0.
    CHECK(knn_damage(EmbeddingVector({0.0f, 1.0f}), store, 5) == 0);
}

TEST_CASE("kNN: errors") {
    CHECK_THROWS_AS(knn_damage(EmbeddingVector({1.0f, 0.0f}), ReferenceStore{}, 5), PreconditionError);
    CHECK_THROWS_AS(knn_damage(EmbeddingVector({1.0f, 0.0f, 0.0f}), make_store(kFiveEntries), 5), PreconditionError);
}

TEST_CASE("kNN agrees with the brute-force oracle on random stores") {
    std::mt19937_64 rng(2024);
    std::uniform_int_distribution<int> label(0, 3);
    std::uniform_int_distribution<int> coord(-3, 3);  // coarse grid to provoke ties
    for (int trial = 0; trial < 300; ++trial) {
        const std::size_t dim = 1 + rng() % 8;
        const std::size_t n = 1 + rng() % 20;
        auto rand_vec = [&] {
            std::vector<float> v(dim);
            do {
                for (auto& x : v) x = float(coord(rng)) * 0.5f;
            } while (std::all_of(v.begin(), v.end(), [](float x) { return x == 0.0f; }));
            return v;
        };
        std::vector<std::pair<std::vector<float>, int>> entries;
        std::vector<oracle::LabeledPoint> points;
        for (std::size_t i = 0; i < n; ++i) {
            auto v = rand_vec();
            const int l = label(rng);
            entries.emplace_back(v, l);
            points.push_back({v, l});
        }
        const auto q = rand_vec();
        const int k = 1 + int(rng() % 7);
        REQUIRE(knn_damage(EmbeddingVector(q), make_store(entries), k) == oracle::knn(q, points, k));
    }
}

TEST_CASE("check_damage embeds and classifies") {
    const auto store = make_store(kFiveEntries);
    ReplayBackend backend(ReplayFixture{}, embedding_fixture({{"tweet", {1.0f, 0.0f}}}));
    EvaluatorConfig cfg;

    auto v = check_damage("tweet", 1, store, backend, cfg);
    CHECK(v.passed);
    CHECK(v.predicted == 1);
    v = check_damage("tweet", 0, store, backend, cfg);
    CHECK_FALSE(v.passed);
    CHECK(v.predicted == 1);
    CHECK_THROWS(check_damage("tweet", 0, ReferenceStore{}, backend, cfg));
}

TEST_CASE("self-BLEU: fixed cases") {
    CHECK(self_bleu("the cat sat on the mat", refs({"x y", "the cat sat on the mat"})) == doctest::Approx(100.0));
    CHECK(self_bleu("red blue green yellow", refs({"alpha beta gamma delta"})) == 0.0);
    CHECK(std::abs(self_bleu("a b c d e", refs({"a b c d x"})) - 66.8740304976422) < 1e-9);
    CHECK(self_bleu("A  B\tC d e", refs({"a b c d x"})) == doctest::Approx(66.8740304976422));
    CHECK_THROWS_AS(self_bleu("", refs({"a"})), PreconditionError);
    CHECK_THROWS_AS(self_bleu("a", std::vector<std::string>{}), PreconditionError);
}

TEST_CASE("self-BLEU: brevity penalty uses the closest reference, ties to the shorter") {
    // candidate length 2; references of length 1 and 3 are equally close -> shorter (1) wins, BP = 1
    CHECK(self_bleu("a b", refs({"a", "a b c"})) == doctest::Approx(oracle::bleu("a b", refs({"a", "a b c"}))));
    CHECK(self_bleu("a b", refs({"a b c d"})) == doctest::Approx(100.0 * std::exp(1.0 - 4.0 / 2.0)));
}

TEST_CASE("self-BLEU agrees with the oracle, is permutation-invariant and bounded") {
    std::mt19937_64 rng(99);
    const std::vector<std::string> vocab = {"a", "b", "c", "d", "e", "f", "g", "h", "i", "j"};
    auto sentence = [&] {
        const std::size_t len = 1 + rng() % 15;
        std::string s;
        for (std::size_t i = 0; i < len; ++i) s += (i ? " " : "") + vocab[rng() % vocab.size()];
        return s;
    };
    for (int trial = 0; trial < 500; ++trial) {
        const auto cand = sentence();
        std::vector<std::string> rs(1 + rng() % 10);
        for (auto& r : rs) r = sentence();
        const double got = self_bleu(cand, rs);
        REQUIRE(std::abs(got - oracle::bleu(cand, rs)) < 1e-6);
        CHECK(got >= 0.0);
        CHECK(got <= 100.0);
        std::shuffle(rs.begin(), rs.end(), rng);
        CHECK(self_bleu(cand, rs) == doctest::Approx(got).epsilon(1e-12));
    }
}

TEST_CASE("diversity: empty corpus, exact copy, threshold is strict") {
    EvaluatorConfig cfg;
    std::mt19937_64 rng(1);
    auto v = check_diversity("anything", std::vector<std::string>{}, cfg, rng);
    CHECK(v.passed);
    CHECK(v.score == 0.0);
    CHECK(v.sample_size == 0);

    v = check_diversity("same text here", refs({"same text here"}), cfg, rng);
    CHECK_FALSE(v.passed);
    CHECK(v.score == doctest::Approx(100.0));

    cfg.bleu_threshold = 100.0;
    CHECK_FALSE(check_diversity("same text here", refs({"same text here"}), cfg, rng).passed);
}

TEST_CASE("diversity: samples min(sample size, corpus) references deterministically") {
    std::vector<std::string> corpus;
    for (int i = 0; i < 150; ++i) corpus.push_back("tweet number " + std::to_string(i));
    EvaluatorConfig cfg;
    std::mt19937_64 a(42), b(42);
    const auto va = check_diversity("tweet number 7", corpus, cfg, a);
    const auto vb = check_diversity("tweet number 7", corpus, cfg, b);
    CHECK(va.sample_size == 100);
    CHECK(va.score == vb.score);

    std::mt19937_64 c(3);
    CHECK(check_diversity("x", std::vector<std::string>(corpus.begin(), corpus.begin() + 30), cfg, c).sample_size ==
          30);
}

TEST_CASE("evaluate composes all three checks without short-circuiting") {
    const auto store = make_store(kFiveEntries);
    ReplayBackend backend(ReplayFixture{}, embedding_fixture({
                                               {"Napa cracks everywhere", {1.0f, 0.0f}},
                                               {"quiet evening", {1.0f, 0.0f}},
                                               {"Downtown San Francisco is cracking with damage", {1.0f, 0.0f}},
                                           }));
    EvaluatorConfig cfg;
    std::mt19937_64 rng(5);

    SyntheticTweet t{"Napa cracks everywhere", {"Napa", 1, {}}, 0, 1.0};
    auto d = evaluate(t, t.target, store, std::vector<std::string>{}, cfg, backend, rng);
    CHECK(d.vector == ComplianceVector{true, true, true});
    CHECK(d.vector.accepted());
    CHECK(d.predicted_damage == 1);
    CHECK(d.self_bleu == 0.0);

    t = {"quiet evening", {"Napa", 1, {}}, 0, 1.0};
    d = evaluate(t, t.target, store, refs({"something else entirely"}), cfg, backend, rng);
    CHECK(d.vector == ComplianceVector{false, true, true});

    // location present, kNN says 1 against a target of 0, and the text repeats the corpus
    const TargetLabelVector sf{"San Francisco", 0, {}};
    t = {"Downtown San Francisco is cracking with damage", sf, 3, 1.0};
    d = evaluate(t, sf, store, refs({"Downtown San Francisco is cracking with damage today"}), cfg, backend, rng);
    CHECK(d.vector == ComplianceVector{true, false, false});
    CHECK(d.predicted_damage == 1);
    REQUIRE(d.self_bleu);
    CHECK(*d.self_bleu > 40.0);
    CHECK(d.threshold == 40.0);
    CHECK(d.reference_sample_size == 1);
    CHECK(d.vector.passed_count() == 1);
}

TEST_CASE("evaluator config validation") {
    EvaluatorConfig cfg;
    CHECK_NOTHROW(cfg.validate());
    cfg.k = 0;
    CHECK_THROWS_AS(cfg.validate(), PreconditionError);
    cfg = {};
    cfg.bleu_threshold = 101;
    CHECK_THROWS_AS(cfg.validate(), PreconditionError);
    cfg = {};
    cfg.bleu_sample_size = 0;
    CHECK_THROWS_AS(cfg.validate(), PreconditionError);
}
