#include "oracle.hpp"

#include "reanno/jsonl.hpp"
#include "reanno/label_softening.hpp"

#include <doctest.h>

using namespace reanno;

TEST_SUITE("label_softening") {
    TEST_CASE("replacement rate is within 3 sigma of phi") {
        SynthConfig sc;
        const auto d = synth_generate(sc);
        const auto idx = NeighborIndex::build(d.store);
        for (double phi : {0.15, 0.3}) {
            SofteningConfig cfg;
            cfg.phi = phi;
            cfg.seed = 5;
            const auto out = knn_replace(d.store, idx, cfg);
            std::size_t replaced = 0;
            for (const auto& t : out.targets) replaced += t.provenance == Provenance::knn_replaced;
            const double n = static_cast<double>(d.store.size());
            const double sigma = std::sqrt(phi * (1 - phi) / n);
            CHECK(std::abs(static_cast<double>(replaced) / n - phi) <= 3 * sigma);
        }
    }

    TEST_CASE("phi 0 keeps every label, phi 1 replaces every label") {
        const auto s = oracle::random_store(40, 2, 3, 8);
        const auto idx = NeighborIndex::build(s);
        SofteningConfig cfg;
        cfg.phi = 0.0;
        auto out = knn_replace(s, idx, cfg);
        for (std::size_t r = 0; r < s.size(); ++r) {
            CHECK(out.targets[r].hard == s.label(r));
            CHECK(out.targets[r].provenance == Provenance::original);
        }
        CHECK(out.changes.empty());
        cfg.phi = 1.0;
        cfg.k_replace = 1;
        out = knn_replace(s, idx, cfg);
        for (std::size_t r = 0; r < s.size(); ++r) {
            const auto nl = idx.query(s.vector(r), 1, s.id(r));
            CHECK(out.targets[r].hard == s.label(s.row_of(nl.entries[0].id)));
            CHECK(out.targets[r].provenance == Provenance::knn_replaced);
        }
        for (const auto& c : out.changes) CHECK(c.old_label != c.new_label);
    }

    TEST_CASE("replacement decisions do not depend on row order") {
        const auto s = oracle::random_store(60, 3, 2, 13);
        Datastore reversed(3, s.labels());
        for (std::size_t r = s.size(); r-- > 0;) reversed.add(s.record(r));
        SofteningConfig cfg;
        cfg.phi = 0.5;
        cfg.seed = 99;
        const auto a = knn_replace(s, NeighborIndex::build(s), cfg);
        const auto b = knn_replace(reversed, NeighborIndex::build(reversed), cfg);
        for (std::size_t r = 0; r < s.size(); ++r) {
            const auto rb = reversed.row_of(s.id(r));
            CHECK(a.targets[r].hard == b.targets[rb].hard);
            CHECK(a.targets[r].provenance == b.targets[rb].provenance);
        }
    }

    TEST_CASE("kde soft targets are distributions and keep the observed label as hard") {
        const auto s = oracle::random_store(50, 2, 3, 14);
        const auto out = kde_soften(s, DensityModel::fit(s, 0.5));
        out.validate(s);
        for (std::size_t r = 0; r < s.size(); ++r) {
            CHECK(out.targets[r].is_soft());
            CHECK(out.targets[r].hard == s.label(r));
            CHECK(out.targets[r].soft.sum() == doctest::Approx(1.0).epsilon(1e-12));
            CHECK(out.targets[r].provenance == Provenance::kde_soft);
        }
        CHECK(out.changes.empty());
    }

    TEST_CASE("targets and change log round-trip") {
        oracle::TempDir dir("soft");
        const auto s = oracle::random_store(30, 2, 3, 15);
        const auto soft = kde_soften(s, DensityModel::fit(s, 0.5));
        write_targets(soft, dir / "t.jsonl");
        const auto back = read_targets(dir / "t.jsonl", 3);
        back.validate(s);
        CHECK(back.ids == soft.ids);
        for (std::size_t i = 0; i < soft.targets.size(); ++i) {
            CHECK(back.targets[i].hard == soft.targets[i].hard);
            CHECK(back.targets[i].soft == soft.targets[i].soft);
        }

        SofteningConfig cfg;
        cfg.phi = 1.0;
        const auto rep = knn_replace(s, NeighborIndex::build(s), cfg);
        write_targets(rep, dir / "h.jsonl");
        const auto hb = read_targets(dir / "h.jsonl", 3);
        for (std::size_t i = 0; i < rep.targets.size(); ++i) {
            CHECK_FALSE(hb.targets[i].is_soft());
            CHECK(hb.targets[i].provenance == Provenance::knn_replaced);
        }
        write_change_log(rep.changes, dir / "c.jsonl");
        CHECK(read_jsonl(dir / "c.jsonl").size() == rep.changes.size());
    }

    TEST_CASE("distribution and validation") {
        TrainingTarget t{2, {}, Provenance::original};
        CHECK(t.distribution(3) == Eigen::Vector3d(0, 0, 1));
        const auto s = oracle::random_store(5, 2, 3, 16);
        auto d = SoftenedDataset::from_observed(s);
        d.validate(s);
        d.targets[0].soft = Eigen::Vector3d(0.5, 0.6, 0.0);
        CHECK_THROWS_AS(d.validate(s), ValidationError);
        d.targets[0].soft.resize(0);
        d.targets[1].hard = 3;
        CHECK_THROWS_AS(d.validate(s), ValidationError);
        d.targets[1].hard = 0;
        d.ids[2] = "other";
        CHECK_THROWS_AS(d.validate(s), ValidationError);

        SofteningConfig cfg;
        cfg.phi = 1.5;
        CHECK_THROWS_AS(knn_replace(s, NeighborIndex::build(s), cfg), ValidationError);
        cfg.phi = 0.5;
        cfg.k_replace = 0;
        CHECK_THROWS_AS(knn_replace(s, NeighborIndex::build(s), cfg), ValidationError);
        CHECK_THROWS_AS(provenance_from_string("x"), ValidationError);
    }
}
