#include "oracle.hpp"

#include "reanno/density.hpp"

#include <doctest.h>

using namespace reanno;

namespace {

std::vector<std::vector<double>> members_of(const Datastore& s, LabelIndex c) {
    std::vector<std::vector<double>> out;
    for (std::size_t r = 0; r < s.size(); ++r) {
        if (s.label(r) != c) continue;
        const auto v = s.vector(r);
        out.emplace_back(v.data(), v.data() + v.size());
    }
    return out;
}

}  // namespace

TEST_SUITE("density") {
    TEST_CASE("one member at the origin, D=1, h=1") {
        Datastore s(1, LabelSpace({"a"}));
        s.add("x", std::vector<float>{0.0f}, 0);
        const auto m = DensityModel::fit(s, 1.0);
        CHECK(m.log_density(0, Eigen::VectorXd::Zero(1)) == doctest::Approx(-0.9189385332046727).epsilon(1e-14));
        CHECK(std::exp(m.log_density(0, Eigen::VectorXd::Ones(1))) == doctest::Approx(0.24197072451914337).epsilon(1e-14));
        CHECK(std::exp(m.log_density(0, Eigen::VectorXd::Ones(1))) == doctest::Approx(oracle::standard_normal_pdf(1.0)));
    }

    TEST_CASE("matches a direct-space oracle within 1e-9 relative") {
        for (std::size_t dim : {1, 3, 6}) {
            const auto s = oracle::random_store(120, dim, 3, dim * 11);
            for (double h : {0.5, 1.0, 2.0}) {
                const auto m = DensityModel::fit(s, h);
                std::mt19937_64 gen(dim);
                std::normal_distribution<double> nd;
                for (int t = 0; t < 10; ++t) {
                    std::vector<double> x(dim);
                    for (auto& v : x) v = nd(gen);
                    const Eigen::Map<const VectorXd> xv(x.data(), static_cast<Eigen::Index>(dim));
                    for (LabelIndex c = 0; c < 3; ++c) {
                        const double want = oracle::kde(members_of(s, c), x, h);
                        const double got = std::exp(m.log_density(c, xv));
                        CHECK(std::abs(got - want) <= 1e-9 * want);
                    }
                }
            }
        }
    }

    TEST_CASE("far-away queries stay finite in log space") {
        Datastore s(2, LabelSpace({"a", "b"}));
        s.add("x", std::vector<float>{0, 0}, 0);
        s.add("y", std::vector<float>{1, 0}, 1);
        const auto m = DensityModel::fit(s, 0.01);
        const auto lp = m.log_densities(Eigen::Vector2d(50, 50));
        CHECK(std::isfinite(lp(0)));
        CHECK(std::isfinite(lp(1)));
        const auto soft = m.soft_label(Eigen::Vector2d(50, 50)).probs;
        CHECK(soft.sum() == doctest::Approx(1.0));
        CHECK(soft(1) > soft(0));
    }

    TEST_CASE("empty classes get -inf and zero probability") {
        Datastore s(2, LabelSpace({"a", "b", "c"}));
        s.add("x", std::vector<float>{0, 0}, 0);
        s.add("y", std::vector<float>{1, 1}, 2);
        const auto m = DensityModel::fit(s, 0.5);
        CHECK(m.class_count(1) == 0);
        CHECK(m.log_density(1, Eigen::Vector2d(0, 0)) == kNegInf);
        const auto soft = m.soft_label(Eigen::Vector2d(0.2, 0.1)).probs;
        CHECK(soft(1) == 0.0);
        CHECK(soft.sum() == doctest::Approx(1.0).epsilon(1e-15));
    }

    TEST_CASE("soft labels match normalised oracle densities and ignore the log offset") {
        const auto s = oracle::random_store(90, 4, 4, 77);
        auto m = DensityModel::fit(s, 0.8);
        std::vector<double> x{0.1, -0.3, 0.7, 0.0};
        const Eigen::Map<const VectorXd> xv(x.data(), 4);
        std::vector<double> dens;
        double total = 0.0;
        for (LabelIndex c = 0; c < 4; ++c) {
            dens.push_back(oracle::kde(members_of(s, c), x, 0.8));
            total += dens.back();
        }
        const auto base = m.soft_label(xv).probs;
        for (LabelIndex c = 0; c < 4; ++c) CHECK(base(c) == doctest::Approx(dens[c] / total).epsilon(1e-12));
        for (double off : {-50.0, 50.0}) {
            m.set_log_offset(off);
            const auto shifted = m.soft_label(xv).probs;
            for (LabelIndex c = 0; c < 4; ++c) CHECK(std::abs(shifted(c) - base(c)) <= 1e-12);
        }
    }

    TEST_CASE("fit on a row subset ignores the other rows") {
        const auto s = oracle::random_store(40, 2, 2, 3);
        std::vector<std::size_t> rows{0, 2, 4, 6, 8, 10};
        const auto m = DensityModel::fit(s, rows, 1.0);
        std::size_t count = 0;
        for (LabelIndex c = 0; c < 2; ++c) count += m.class_count(c);
        CHECK(count == rows.size());
    }

    TEST_CASE("errors") {
        const auto s = oracle::random_store(10, 2, 2, 3);
        CHECK_THROWS_AS(DensityModel::fit(s, 0.0), ValidationError);
        CHECK_THROWS_AS(DensityModel::fit(s, -1.0), ValidationError);
        CHECK_THROWS_AS(DensityModel::fit(s, std::nan("")), ValidationError);
        const auto m = DensityModel::fit(s, 1.0);
        CHECK_THROWS_AS(m.log_density(5, Eigen::Vector2d(0, 0)), ValidationError);
        CHECK_THROWS_AS(m.log_density(0, Eigen::Vector3d(0, 0, 0)), ValidationError);
        CHECK_THROWS_AS(soft_label_from_log(VectorXd::Constant(3, kNegInf)), ValidationError);
    }
}
