#include "oracle.hpp"

#include "reanno/jsonl.hpp"
#include "reanno/metrics.hpp"

#include <doctest.h>

using namespace reanno;

namespace {

LabelMap from_list(const std::vector<LabelIndex>& labels) {
    LabelMap m;
    for (std::size_t i = 0; i < labels.size(); ++i) m["i" + std::to_string(100 + i)] = labels[i];
    return m;
}

// Textbook kappa from a full contingency table.
double oracle_kappa(const std::vector<LabelIndex>& a, const std::vector<LabelIndex>& b, std::size_t k) {
    std::vector<std::vector<double>> t(k, std::vector<double>(k, 0.0));
    for (std::size_t i = 0; i < a.size(); ++i) t[a[i]][b[i]] += 1.0;
    const double n = static_cast<double>(a.size());
    double po = 0.0, pe = 0.0;
    for (std::size_t i = 0; i < k; ++i) {
        po += t[i][i] / n;
        double row = 0.0, col = 0.0;
        for (std::size_t j = 0; j < k; ++j) {
            row += t[i][j];
            col += t[j][i];
        }
        pe += (row / n) * (col / n);
    }
    return (po - pe) / (1.0 - pe);
}

}  // namespace

TEST_SUITE("metrics") {
    TEST_CASE("binary F1 with TP=2, FP=1, FN=1 is 2/3") {
        // Positive class 1: two hits, one false alarm, one miss, one true negative.
        const auto gold = from_list({1, 1, 0, 1, 0});
        const auto pred = from_list({1, 1, 1, 0, 0});
        const auto r = classification_metrics(pred, gold, 2, LabelIndex{1});
        CHECK(std::abs(*r.binary_f1 - 2.0 / 3.0) <= 1e-12);
        CHECK(std::abs(*r.binary_precision - 2.0 / 3.0) <= 1e-12);
        CHECK(std::abs(*r.binary_recall - 2.0 / 3.0) <= 1e-12);
        CHECK(r.table.per_class[1].tn == 1);
    }

    TEST_CASE("macro F1 averages per-class F1 over gold classes") {
        // Class 0 perfect, class 1 never predicted correctly.
        const auto gold = from_list({0, 0, 1});
        const auto pred = from_list({0, 0, 2});
        const auto r = classification_metrics(pred, gold, 3);
        CHECK(std::abs(r.table.per_class[0].f1() - 1.0) <= 1e-12);
        CHECK(std::abs(r.table.per_class[1].f1() - 0.0) <= 1e-12);
        CHECK(std::abs(r.macro_f1 - 0.5) <= 1e-12);
        CHECK(std::abs(r.accuracy - 2.0 / 3.0) <= 1e-12);
    }

    TEST_CASE("micro F1 equals accuracy for single-label data") {
        std::mt19937_64 gen(3);
        for (int t = 0; t < 20; ++t) {
            std::vector<LabelIndex> g, p;
            for (int i = 0; i < 50; ++i) {
                g.push_back(static_cast<LabelIndex>(gen() % 4));
                p.push_back(static_cast<LabelIndex>(gen() % 4));
            }
            const auto r = classification_metrics(from_list(p), from_list(g), 4);
            CHECK(std::abs(r.micro_f1 - r.accuracy) <= 1e-12);
        }
    }

    TEST_CASE("kappa with p_o = 0.6 and p_e = 0.5 is 0.2") {
        const auto a = from_list({0, 0, 0, 0, 0, 1, 1, 1, 1, 1});
        const auto b = from_list({0, 0, 0, 1, 1, 0, 0, 1, 1, 1});
        CHECK(std::abs(cohen_kappa(a, b) - 0.2) <= 1e-12);
    }

    TEST_CASE("kappa of identical raters is 1, and matches the contingency-table oracle") {
        std::mt19937_64 gen(9);
        for (int t = 0; t < 30; ++t) {
            std::vector<LabelIndex> a, b;
            for (int i = 0; i < 40; ++i) {
                a.push_back(static_cast<LabelIndex>(gen() % 3));
                b.push_back(gen() % 3 == 0 ? static_cast<LabelIndex>(gen() % 3) : a.back());
            }
            CHECK(cohen_kappa(from_list(a), from_list(a)) == 1.0);
            CHECK(std::abs(cohen_kappa(from_list(a), from_list(b)) - oracle_kappa(a, b, 3)) <= 1e-12);
        }
        CHECK(cohen_kappa(from_list({2, 2, 2}), from_list({2, 2, 2})) == 1.0);
    }

    TEST_CASE("kappa errors") {
        CHECK_THROWS_AS(cohen_kappa(from_list({0}), from_list({0})), ValidationError);
        CHECK_THROWS_AS(cohen_kappa(from_list({0, 1}), from_list({0, 1, 1})), ValidationError);
        LabelMap a{{"x", 0}, {"y", 1}}, b{{"x", 0}, {"z", 1}};
        CHECK_THROWS_AS(cohen_kappa(a, b), ValidationError);
    }

    TEST_CASE("MRR of ranks [1, 2, none] is 0.5") {
        const auto r = rank_metrics({1, 2, std::nullopt}, {1, 5});
        CHECK(std::abs(r.mrr - 0.5) <= 1e-12);
        CHECK(std::abs(r.hit_at.at(1) - 1.0 / 3.0) <= 1e-12);
        CHECK(std::abs(r.hit_at.at(5) - 2.0 / 3.0) <= 1e-12);
        CHECK_THROWS_AS(rank_metrics({}), ValidationError);
        CHECK_THROWS_AS(rank_metrics({0}), ValidationError);
    }

    TEST_CASE("hit@k is monotone in k") {
        std::mt19937_64 gen(4);
        std::vector<std::optional<std::size_t>> ranks;
        for (int i = 0; i < 100; ++i)
            ranks.push_back(gen() % 5 == 0 ? std::nullopt : std::optional<std::size_t>(1 + gen() % 20));
        const auto r = rank_metrics(ranks, {1, 2, 5, 10, 20});
        double prev = 0.0;
        for (const auto& [k, h] : r.hit_at) {
            CHECK(h >= prev);
            prev = h;
        }
    }

    TEST_CASE("metric inputs must cover the same ids") {
        CHECK_THROWS_AS(classification_metrics(from_list({0}), from_list({0, 1}), 2), ValidationError);
        CHECK_THROWS_AS(classification_metrics({}, {}, 2), ValidationError);
        CHECK_THROWS_AS(classification_metrics(from_list({5}), from_list({0}), 2), ValidationError);
    }

    TEST_CASE("metric report round-trips doubles exactly") {
        oracle::TempDir dir("met");
        write_metric_report({{"f1", 2.0 / 3.0}, {"n", 3}}, dir / "m.txt");
        const auto kv = read_key_values(dir / "m.txt");
        REQUIRE(kv.size() == 2);
        CHECK(kv[0].first == "f1");
        CHECK(std::stod(kv[0].second) == 2.0 / 3.0);
        CHECK(kv[1].second == "3");
    }
}
