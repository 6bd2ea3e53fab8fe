#include "oracle.hpp"

#include "reanno/detector.hpp"

#include <doctest.h>

#include <numeric>

using namespace reanno;

namespace {

std::vector<std::size_t> all_rows(const Datastore& s) {
    std::vector<std::size_t> rows(s.size());
    std::iota(rows.begin(), rows.end(), std::size_t{0});
    return rows;
}

std::vector<double> as_std(const Datastore::ConstRow& v) { return {v.data(), v.data() + v.size()}; }

// log s computed from the oracles only.
std::vector<double> oracle_log_scores(const Datastore& s, std::size_t k, double h) {
    std::vector<std::vector<double>> keys;
    for (std::size_t r = 0; r < s.size(); ++r) keys.push_back(as_std(s.vector(r)));
    std::vector<std::vector<std::vector<double>>> members(s.labels().size());
    for (std::size_t r = 0; r < s.size(); ++r) members[s.label(r)].push_back(keys[r]);
    std::vector<double> out;
    for (std::size_t r = 0; r < s.size(); ++r) {
        const auto nn = oracle::knn(s.ids(), keys, keys[r], k, &s.ids()[r]);
        const double max_d = nn.back().second;
        double acc = 0.0;
        for (const auto& [id, d] : nn) {
            const auto n = s.row_of(id);
            if (s.label(n) != s.label(r)) continue;
            acc += oracle::kde(members[s.label(n)], keys[n], h) * std::exp(-d / max_d);
        }
        out.push_back(std::log(acc));
    }
    return out;
}

}  // namespace

TEST_SUITE("detector") {
    TEST_CASE("plurality: ties go to the label seen first") {
        CHECK(plurality_label(std::vector<LabelIndex>{2, 1, 1, 2}) == 2);
        CHECK(plurality_label(std::vector<LabelIndex>{1, 2, 2}) == 2);
        CHECK(plurality_label(std::vector<LabelIndex>{3}) == 3);
        CHECK_THROWS_AS(plurality_label(std::vector<LabelIndex>{}), ValidationError);
    }

    TEST_CASE("vote: a point among the other label is inconsistent") {
        Datastore s(1, LabelSpace({"a", "b"}));
        s.add("p0", std::vector<float>{0.0f}, 0);
        s.add("p1", std::vector<float>{0.1f}, 0);
        s.add("p2", std::vector<float>{0.2f}, 0);
        s.add("odd", std::vector<float>{0.15f}, 1);
        s.add("far", std::vector<float>{9.0f}, 1);
        const auto idx = NeighborIndex::build(s);
        const auto v = vote_detect(idx, s, all_rows(s), 3);
        CHECK(v[0] == Verdict::consistent);
        CHECK(v[3] == Verdict::inconsistent);
        CHECK(v[4] == Verdict::inconsistent);
        CHECK_THROWS_AS(vote_detect(idx, s, all_rows(s), 0), ValidationError);
    }

    TEST_CASE("psi: min-max of exp(log s - max)") {
        const std::vector<double> ls{std::log(0.1), std::log(0.9), std::log(0.3)};
        const auto psi = psi_from_log_scores(ls);
        CHECK(psi[0] == doctest::Approx(0.0));
        CHECK(psi[1] == doctest::Approx(1.0));
        CHECK(psi[2] == doctest::Approx(0.25));
        CHECK(psi_from_log_scores(std::vector<double>{2.0, 2.0}) == std::vector<double>{1.0, 1.0});
        CHECK(psi_from_log_scores(std::vector<double>{kNegInf, kNegInf}) == std::vector<double>{1.0, 1.0});
    }

    TEST_CASE("psi is unchanged when every log density shifts by a constant") {
        const auto s = oracle::random_store(150, 3, 3, 21);
        const auto idx = NeighborIndex::build(s);
        auto m = DensityModel::fit(s, 0.5);
        const auto base = credibility_scores(idx, m, s, all_rows(s), 40);
        for (double c : {-50.0, 0.0, 50.0}) {
            m.set_log_offset(c);
            const auto shifted = credibility_scores(idx, m, s, all_rows(s), 40);
            for (std::size_t i = 0; i < s.size(); ++i) CHECK(std::abs(shifted.entries[i].psi - base.entries[i].psi) <= 1e-12);
        }
    }

    TEST_CASE("credibility matches the oracle computation") {
        const auto s = oracle::random_store(60, 2, 2, 5);
        const auto idx = NeighborIndex::build(s);
        const auto m = DensityModel::fit(s, 0.7);
        const auto rep = credibility_scores(idx, m, s, all_rows(s), 12);
        const auto want = oracle_log_scores(s, 12, 0.7);
        std::vector<double> exps;
        for (double w : want) exps.push_back(std::exp(w));
        const double lo = *std::min_element(exps.begin(), exps.end());
        const double hi = *std::max_element(exps.begin(), exps.end());
        for (std::size_t r = 0; r < s.size(); ++r) {
            CHECK(rep.entries[r].id == s.id(r));
            CHECK(rep.entries[r].log_s == doctest::Approx(want[r]).epsilon(1e-10));
            CHECK(rep.entries[r].psi == doctest::Approx((exps[r] - lo) / (hi - lo)).epsilon(1e-9));
            CHECK(rep.entries[r].psi >= 0.0);
            CHECK(rep.entries[r].psi <= 1.0);
        }
    }

    TEST_CASE("no same-label neighbour gives psi 0 in a mixed cohort") {
        Datastore s(1, LabelSpace({"a", "b"}));
        s.add("a0", std::vector<float>{0.0f}, 0);
        s.add("a1", std::vector<float>{0.1f}, 0);
        s.add("b0", std::vector<float>{5.0f}, 1);
        const auto idx = NeighborIndex::build(s);
        const auto rep = credibility_scores(idx, DensityModel::fit(s, 1.0), s, all_rows(s), 1);
        CHECK(rep.entries[2].log_s == kNegInf);
        CHECK(rep.entries[2].psi == 0.0);
    }

    TEST_CASE("threshold and report round trip") {
        CredibilityReport r;
        r.entries = {{"x", 0.0, 0.5, {}}, {"y", 0.0, 0.49, {}}};
        const auto c = classify_threshold(r, 0.5);
        CHECK(*c.entries[0].verdict == Verdict::consistent);
        CHECK(*c.entries[1].verdict == Verdict::inconsistent);
        CHECK_THROWS_AS(classify_threshold(r, 1.5), ValidationError);
        CHECK_THROWS_AS(detection_pred(r), ValidationError);
        oracle::TempDir dir("det");
        write_credibility_report(c, dir / "r.jsonl");
        const auto back = read_credibility_report(dir / "r.jsonl");
        REQUIRE(back.entries.size() == 2);
        CHECK(back.entries[1].psi == 0.49);
        CHECK(*back.entries[1].verdict == Verdict::inconsistent);
        CHECK(detection_pred(back) == detection_pred(c));
    }

    TEST_CASE("rank eval and detection gold on a hand fixture") {
        Datastore s(1, LabelSpace({"a", "b"}));
        s.add("q", std::vector<float>{0.0f}, 0);
        s.add("n1", std::vector<float>{1.0f}, 0);
        s.add("n2", std::vector<float>{2.0f}, 1);
        s.add("n3", std::vector<float>{3.0f}, 1);
        RevisionFile rev;
        rev.entries = {{"q", 1}, {"n3", 1}};
        const auto idx = NeighborIndex::build(s);
        const auto rep = rank_eval(idx, s, rev, {1, 2});
        // q finds label b at rank 2; n3 at rank 1.
        CHECK(rep.hit_at.at(1) == doctest::Approx(0.5));
        CHECK(rep.hit_at.at(2) == doctest::Approx(1.0));
        CHECK(rep.mrr == doctest::Approx(0.75));
        const auto gold = detection_gold(s, rev);
        CHECK(gold.at("q") == static_cast<LabelIndex>(Verdict::inconsistent));
        CHECK(gold.at("n3") == static_cast<LabelIndex>(Verdict::consistent));
    }

    TEST_CASE("errors") {
        const auto s = oracle::random_store(10, 2, 2, 1);
        const auto idx = NeighborIndex::build(s);
        const auto m = DensityModel::fit(s, 1.0);
        CHECK_THROWS_AS(credibility_scores(idx, m, s, {}, 3), ValidationError);
        CHECK_THROWS_AS(credibility_scores(idx, m, s, all_rows(s), 11), ValidationError);
        CHECK_THROWS_AS(verdict_from_string("maybe"), ValidationError);
    }
}
