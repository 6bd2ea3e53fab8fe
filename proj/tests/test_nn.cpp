#include "grad_cases.hpp"
#include "oracle.hpp"

#include "reanno/nn/checkpoint.hpp"
#include "reanno/nn/optim.hpp"

#include <doctest.h>

using namespace reanno;
using namespace reanno::nn;

TEST_SUITE("nn") {
    TEST_CASE("sum of relu at [1, -1]") {
        ParamSet p;
        Tensor x(1, 2);
        x << 1, -1;
        p.add("x", x);
        Graph g;
        const Var loss = sum(relu(g.param(p, "x")));
        g.backward(loss);
        CHECK(loss.value()(0, 0) == 1.0);
        CHECK(p.grad("x")(0, 0) == 1.0);
        CHECK(p.grad("x")(0, 1) == 0.0);
    }

    TEST_CASE("every primitive and composed graph passes finite differences on a few seeds") {
        for (const auto& c : gradcases::all_cases()) {
            for (std::uint64_t seed = 1; seed <= 5; ++seed) {
                const auto rep = gradcases::run(c, seed);
                INFO(c.name << " seed " << seed << " max rel " << rep.max_rel_error());
                CHECK(rep.passed);
                std::size_t checked = 0;
                for (const auto& pc : rep.params) checked += pc.checked;
                CHECK(checked > 0);
            }
        }
    }

    TEST_CASE("grad check flags a gradient scaled by 2") {
        ParamSet p;
        p.add("x", Tensor::Constant(2, 2, 0.7));
        auto build = [](Graph& g, ParamSet& ps) {
            const Var y = custom_unary(
                g.param(ps, "x"), [](const Tensor& x) -> Tensor { return x.array().square().matrix(); },
                [](const Tensor& x, const Tensor&, const Tensor& dy) -> Tensor {
                    return (4.0 * x.array() * dy.array()).matrix();
                });
            return sum(y);
        };
        const auto rep = grad_check(build, p);
        CHECK_FALSE(rep.passed);
        REQUIRE(rep.params.size() == 1);
        CHECK(rep.params[0].name == "x");
        CHECK(rep.params[0].max_rel_error == doctest::Approx(0.5).epsilon(1e-6));
    }

    TEST_CASE("grad check excludes entries at a ReLU kink with a warning") {
        ParamSet p;
        Tensor x(1, 2);
        x << 0.0, 1.0;
        p.add("x", x);
        const auto rep = grad_check([](Graph& g, ParamSet& ps) { return sum(relu(g.param(ps, "x"))); }, p);
        CHECK(rep.passed);
        CHECK(rep.params[0].excluded == 1);
        CHECK(rep.params[0].checked == 1);
        CHECK_FALSE(rep.warnings.empty());
    }

    TEST_CASE("dropout: rate 0 is identity, eval mode is identity, training is seeded") {
        ParamSet p;
        p.add("x", Tensor::Constant(50, 40, 1.0));
        {
            Graph g(3, true);
            const Var y = dropout(g.param(p, "x"), 0.0);
            CHECK(y.value() == p.value("x"));
            g.backward(sum(y));
            CHECK(p.grad("x") == Tensor::Ones(50, 40));
        }
        {
            Graph g(3, false);
            CHECK(dropout(g.param(p, "x"), 0.5).value() == p.value("x"));
        }
        Graph a(9, true), b(9, true), c(10, true);
        const Tensor ya = dropout(a.param(p, "x"), 0.25).value();
        CHECK(ya == dropout(b.param(p, "x"), 0.25).value());
        CHECK_FALSE(ya == dropout(c.param(p, "x"), 0.25).value());
        const double zeros = static_cast<double>((ya.array() == 0.0).count()) / static_cast<double>(ya.size());
        CHECK(std::abs(zeros - 0.25) < 3 * std::sqrt(0.25 * 0.75 / 2000.0));
        CHECK(ya.maxCoeff() == doctest::Approx(1.0 / 0.75));
        CHECK_THROWS_AS(dropout(a.param(p, "x"), 1.0), ValidationError);
    }

    TEST_CASE("softmax xent examples") {
        Graph g;
        const Var eq = g.input(Tensor::Constant(2, 5, 0.3));
        const std::vector<std::uint32_t> labels{1, 4};
        CHECK(softmax_xent(eq, labels).value()(0, 0) == doctest::Approx(std::log(5.0)).epsilon(1e-14));

        Tensor sharp(1, 3);
        sharp << 40, 0, 0;
        CHECK(softmax_xent(g.input(sharp), std::vector<std::uint32_t>{0}).value()(0, 0) < 1e-15);

        // Soft target equal to softmax(logits): loss is the target entropy.
        Tensor z(1, 3);
        z << 0.5, -1.0, 2.0;
        const auto p = oracle::softmax({0.5, -1.0, 2.0});
        Tensor t(1, 3);
        t << p[0], p[1], p[2];
        double entropy = 0.0;
        for (double v : p) entropy -= v * std::log(v);
        CHECK(softmax_xent(g.input(z), t).value()(0, 0) == doctest::Approx(entropy).epsilon(1e-14));

        Tensor bad(1, 3);
        bad << 0.5, 0.5, 0.5;
        CHECK_THROWS_AS(softmax_xent(g.input(z), bad), ValidationError);
        CHECK_THROWS_AS(softmax_xent(g.input(z), std::vector<std::uint32_t>{3}), ValidationError);
    }

    TEST_CASE("softmax rows sum to 1 even for large logits") {
        Rng rng(4);
        Graph g;
        const Tensor x = gradcases::randn(rng, 10, 7, 300.0);
        const Tensor s = softmax_rows(g.input(x)).value();
        for (Eigen::Index r = 0; r < s.rows(); ++r) CHECK(std::abs(s.row(r).sum() - 1.0) <= 1e-9);
        CHECK(s.allFinite());
    }

    TEST_CASE("shape errors and non-scalar losses are rejected") {
        Graph g;
        const Var a = g.input(Tensor::Zero(2, 3));
        const Var b = g.input(Tensor::Zero(2, 3));
        CHECK_THROWS_AS(matmul(a, b), ValidationError);
        CHECK_THROWS_AS(add(a, g.input(Tensor::Zero(3, 3))), ValidationError);
        CHECK_THROWS_AS(mul(a, g.input(Tensor::Zero(3, 2))), ValidationError);
        CHECK_THROWS_AS(slice_rows(a, 1, 2), ValidationError);
        const Var parts[] = {a, g.input(Tensor::Zero(2, 4))};
        CHECK_THROWS_AS(concat_rows(parts), ValidationError);
        CHECK_THROWS_AS(g.backward(a), ValidationError);
    }

    TEST_CASE("sincos positions") {
        const Tensor p = sincos_positions(3, 6);
        CHECK(p(1, 0) == doctest::Approx(0.8414709848).epsilon(1e-9));
        CHECK(p(1, 1) == doctest::Approx(0.5403023059).epsilon(1e-9));
        for (Eigen::Index j = 0; j < 6; ++j) CHECK(p(0, j) == (j % 2 == 0 ? 0.0 : 1.0));
        // Frequencies decrease with k: the angle at pos 1 shrinks.
        CHECK(std::asin(p(1, 2)) < 1.0);
        CHECK(std::asin(p(1, 4)) < std::asin(p(1, 2)));
        CHECK_THROWS_AS(sincos_positions(3, 5), ValidationError);
    }

    TEST_CASE("attention: singleton weights, row sums, shape and permutation equivariance") {
        Rng rng(17);
        EncoderBlockConfig cfg;
        cfg.dim = 8;
        cfg.heads = 4;
        ParamSet p;
        init_encoder_block(p, "b", cfg, rng);

        {
            Graph g;
            AttentionTrace trace;
            const Var y = attention_encoder_block(g, p, "b", g.input(gradcases::randn(rng, 1, 8)), cfg, &trace);
            CHECK(y.rows() == 1);
            REQUIRE(trace.weights.size() == 4);
            for (const auto& w : trace.weights) CHECK(w(0, 0) == 1.0);
        }

        const Tensor x = gradcases::randn(rng, 5, 8);
        Graph g;
        AttentionTrace trace;
        const Tensor y = attention_encoder_block(g, p, "b", g.input(x), cfg, &trace).value();
        CHECK(y.rows() == 5);
        CHECK(y.cols() == 8);
        for (const auto& w : trace.weights)
            for (Eigen::Index r = 0; r < w.rows(); ++r) CHECK(std::abs(w.row(r).sum() - 1.0) <= 1e-9);

        const std::vector<Eigen::Index> perm{3, 0, 4, 1, 2};
        Tensor xp(5, 8);
        for (Eigen::Index i = 0; i < 5; ++i) xp.row(i) = x.row(perm[static_cast<std::size_t>(i)]);
        Graph g2;
        const Tensor yp = attention_encoder_block(g2, p, "b", g2.input(xp), cfg).value();
        for (Eigen::Index i = 0; i < 5; ++i)
            CHECK((yp.row(i) - y.row(perm[static_cast<std::size_t>(i)])).cwiseAbs().maxCoeff() <= 1e-12);

        EncoderBlockConfig bad = cfg;
        bad.heads = 3;
        CHECK_THROWS_AS(init_encoder_block(p, "c", bad, rng), ValidationError);
    }

    TEST_CASE("adamw") {
        ParamSet p;
        p.add("w", Tensor::Constant(1, 1, 2.0));
        AdamWConfig cfg;
        cfg.lr = 0.1;
        cfg.weight_decay = 0.0;
        auto st = OptimizerState::init(p, cfg);
        adamw_step(p, st);
        CHECK(p.value("w")(0, 0) == 2.0);
        CHECK(st.step == 1);

        cfg.weight_decay = 0.5;
        st = OptimizerState::init(p, cfg);
        adamw_step(p, st);
        CHECK(p.value("w")(0, 0) == doctest::Approx(2.0 * (1 - 0.1 * 0.5)).epsilon(1e-15));

        // First step with g != 0 moves by about lr against the gradient sign.
        cfg.weight_decay = 0.0;
        for (double grad : {3.0, -0.01}) {
            ParamSet q;
            q.add("w", Tensor::Constant(1, 1, 1.0));
            q.grad("w")(0, 0) = grad;
            auto s = OptimizerState::init(q, cfg);
            adamw_step(q, s);
            const double want = 1.0 - 0.1 * grad / (std::abs(grad) + 1e-8);
            CHECK(q.value("w")(0, 0) == doctest::Approx(want).epsilon(1e-12));
        }

        OptimizerState empty;
        CHECK_THROWS_AS(adamw_step(p, empty), ValidationError);
    }

    TEST_CASE("warmup schedule") {
        CHECK(warmup_lr(1.0, 0, 4) == 0.25);
        CHECK(warmup_lr(1.0, 3, 4) == 1.0);
        CHECK(warmup_lr(1.0, 10, 4) == 1.0);
        CHECK(warmup_lr(0.5, 0, 0) == 0.5);
    }

    TEST_CASE("checkpoint round trip is exact and byte stable") {
        Rng rng(8);
        ParamSet p;
        init_linear(p, "a", 3, 4, rng);
        p.add("z", gradcases::randn(rng, 2, 5));
        const auto bytes = encode_checkpoint(p);
        CHECK(bytes.substr(0, 4) == "RPCK");
        CHECK(decode_checkpoint(bytes) == p);
        CHECK(encode_checkpoint(decode_checkpoint(bytes)) == bytes);
        oracle::TempDir dir("ck");
        write_checkpoint(p, dir / "p.rpck");
        CHECK(read_checkpoint(dir / "p.rpck") == p);
        CHECK_THROWS_AS(decode_checkpoint(bytes.substr(0, bytes.size() - 1)), IoError);
        CHECK_THROWS_AS(decode_checkpoint("XPCK" + bytes.substr(4)), IoError);
        CHECK_THROWS_AS(decode_checkpoint(bytes + "!"), IoError);
    }

    TEST_CASE("fixed seeds give bit-identical training trajectories") {
        auto train = []() {
            Rng rng(5);
            ParamSet p;
            init_linear(p, "l", 4, 3, rng);
            auto st = OptimizerState::init(p, AdamWConfig{});
            const Tensor x = gradcases::randn(rng, 8, 4);
            const std::vector<std::uint32_t> y{0, 1, 2, 0, 1, 2, 0, 1};
            for (std::uint64_t step = 0; step < 20; ++step) {
                p.zero_grad();
                Graph g(step, true);
                g.backward(softmax_xent(dropout(linear(g, p, "l", g.input(x)), 0.2), y));
                adamw_step(p, st);
            }
            return p;
        };
        CHECK(train() == train());
    }
}
