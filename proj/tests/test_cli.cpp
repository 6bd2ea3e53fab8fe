#include "oracle.hpp"

#include "reanno/cli.hpp"
#include "reanno/jsonl.hpp"

#include <doctest.h>

#include <fstream>
#include <sstream>

using namespace reanno;

namespace {

struct Run {
    int code;
    std::string out;
    std::string err;
};

Run run(std::vector<std::string> args) {
    std::ostringstream out, err;
    const int code = cli::dispatch(args, out, err);
    return {code, out.str(), err.str()};
}

std::string p(const oracle::TempDir& d, const std::string& name) { return (d / name).string(); }

void write_file(const std::string& path, const std::string& text) { std::ofstream(path) << text; }

Run synth(const oracle::TempDir& d) {
    return run({"synth", "--clusters", "3", "--dim", "6", "--per-cluster", "30", "--seed", "5", "--store",
                p(d, "s.rann"), "--revisions", p(d, "rev.jsonl")});
}

}  // namespace

TEST_SUITE("cli") {
    TEST_CASE("help lists subcommands and defaults") {
        auto r = run({"--help"});
        CHECK(r.code == 0);
        for (const char* sub : {"synth", "detect", "rank-eval", "soften", "correct", "apply", "eval", "kappa", "serve"})
            CHECK(r.out.find(sub) != std::string::npos);
        r = run({"detect", "--help"});
        CHECK(r.code == 0);
        CHECK(r.out.find("[default: 250]") != std::string::npos);
        CHECK(r.out.find("[default: 0.5]") != std::string::npos);
        r = run({"soften", "--help"});
        CHECK(r.out.find("[tacred-like: 0.3, docred-like: 0.15]") != std::string::npos);
    }

    TEST_CASE("exit codes: 1 for usage and validation, 2 for I/O") {
        oracle::TempDir d("cli");
        CHECK(run({}).code == 1);
        CHECK(run({"frobnicate"}).code == 1);
        CHECK(run({"detect"}).code == 1);  // --store is required
        CHECK(run({"detect", "--store", p(d, "missing.rann")}).code == 2);
        REQUIRE(synth(d).code == 0);
        CHECK(run({"detect", "--store", p(d, "s.rann"), "--k-cred", "abc"}).code == 1);
        CHECK(run({"detect", "--store", p(d, "s.rann"), "--k-cred", "-3"}).code == 1);
        CHECK(run({"detect", "--store", p(d, "s.rann"), "--mode", "magic"}).code == 1);
        CHECK(run({"detect", "--store", p(d, "s.rann"), "--bogus", "1"}).code == 1);
        CHECK(run({"--profile", "imaginary", "detect", "--store", p(d, "s.rann")}).code == 1);
        CHECK(run({"--threads", "0", "detect", "--store", p(d, "s.rann")}).code == 1);
        write_file(p(d, "bad.cfg"), "not-a-key=1\n");
        CHECK(run({"--config", p(d, "bad.cfg"), "detect", "--store", p(d, "s.rann")}).code == 1);
        CHECK(run({"--config", p(d, "nope.cfg"), "detect", "--store", p(d, "s.rann")}).code == 2);
        write_file(p(d, "corrupt.rann"), "garbage");
        CHECK(run({"detect", "--store", p(d, "corrupt.rann")}).code != 0);
        CHECK(run({"serve", "--store", p(d, "s.rann"), "--report", p(d, "none.jsonl")}).code == 2);
    }

    TEST_CASE("end-to-end pipeline with byte-identical reruns") {
        oracle::TempDir d("cli");
        auto pipeline = [&](const std::string& tag) {
            REQUIRE(synth(d).code == 0);
            REQUIRE(run({"detect", "--store", p(d, "s.rann"), "--k-cred", "20", "--out", p(d, tag + "report.jsonl"),
                         "--revisions", p(d, "rev.jsonl"), "--metrics", p(d, tag + "det.txt")})
                        .code == 0);
            REQUIRE(run({"detect", "--store", p(d, "s.rann"), "--mode", "vote", "--out", p(d, tag + "vote.jsonl")})
                        .code == 0);
            REQUIRE(run({"rank-eval", "--store", p(d, "s.rann"), "--revisions", p(d, "rev.jsonl"), "--out",
                         p(d, tag + "rank.txt")})
                        .code == 0);
            REQUIRE(run({"soften", "--store", p(d, "s.rann"), "--mode", "knn-replaced", "--out",
                         p(d, tag + "t.jsonl"), "--change-log", p(d, tag + "c.jsonl")})
                        .code == 0);
            REQUIRE(run({"--threads", "2", "correct", "--store", p(d, "s.rann"), "--epochs", "2", "--lr", "5e-3",
                         "--contrastive", "--n-retrieved", "15", "--n-peers", "2", "--projection-dim", "8", "--out",
                         p(d, tag + "corr.jsonl"), "--checkpoint-dir", d.path.string()})
                        .code == 0);
            REQUIRE(run({"apply", "--store", p(d, "s.rann"), "--corrections", p(d, tag + "corr.jsonl"), "--out",
                         p(d, tag + "fixed.rann"), "--changes", p(d, tag + "applied.jsonl")})
                        .code == 0);
            const auto ev = run({"eval", "--pred", p(d, tag + "corr.jsonl"), "--gold", p(d, "rev.jsonl"), "--out",
                                 p(d, tag + "eval.txt")});
            REQUIRE(ev.code == 0);
            CHECK(Json::parse(ev.out)["metrics"]["n"] == 90);
            REQUIRE(run({"eval", "--report", p(d, tag + "report.jsonl"), "--store", p(d, "s.rann"), "--gold",
                         p(d, "rev.jsonl"), "--out", p(d, tag + "deteval.txt")})
                        .code == 0);
            const auto k = run({"kappa", "--a", p(d, "rev.jsonl"), "--b", p(d, "rev.jsonl"), "--out",
                                p(d, tag + "k.txt")});
            REQUIRE(k.code == 0);
            CHECK(Json::parse(k.out)["metrics"]["kappa"] == 1.0);
        };
        pipeline("a_");
        const auto first_store = read_text(d / "s.rann");
        pipeline("b_");
        CHECK(read_text(d / "s.rann") == first_store);
        for (const char* f : {"report.jsonl", "det.txt", "vote.jsonl", "rank.txt", "t.jsonl", "c.jsonl", "corr.jsonl",
                              "fixed.rann", "applied.jsonl", "eval.txt", "deteval.txt"}) {
            CAPTURE(f);
            CHECK(read_text(d / (std::string("a_") + f)) == read_text(d / (std::string("b_") + f)));
        }
        CHECK(std::filesystem::exists(d / "fold0.rpck"));
        CHECK(std::filesystem::exists(d / "fold3.rpck"));
    }

    TEST_CASE("flag beats config beats profile") {
        oracle::TempDir d("cli");
        REQUIRE(synth(d).code == 0);
        auto soften = [&](std::vector<std::string> pre, std::vector<std::string> post, const std::string& out) {
            std::vector<std::string> args = std::move(pre);
            for (const auto& a : std::vector<std::string>{"soften", "--store", p(d, "s.rann"), "--mode", "knn-replaced",
                                                          "--out", p(d, out), "--change-log", p(d, out + ".log")})
                args.push_back(a);
            for (auto& a : post) args.push_back(a);
            REQUIRE(run(args).code == 0);
            return read_text(d / out);
        };
        const auto tacred = soften({}, {}, "tacred");
        const auto docred = soften({"--profile", "docred-like"}, {}, "docred");
        REQUIRE(tacred != docred);  // phi 0.3 vs 0.15 must matter on this fixture
        CHECK(soften({}, {"--phi", "0.15"}, "flag") == docred);

        write_file(p(d, "phi.cfg"), "phi=0.3\n");
        CHECK(soften({"--profile", "docred-like", "--config", p(d, "phi.cfg")}, {}, "cfg") == tacred);
        CHECK(soften({"--profile", "docred-like", "--config", p(d, "phi.cfg")}, {"--phi", "0.15"}, "both") == docred);

        write_file(p(d, "prof.cfg"), "profile=docred-like\n");
        CHECK(soften({"--config", p(d, "prof.cfg")}, {}, "cfgprof") == docred);
        CHECK(soften({"--config", p(d, "prof.cfg"), "--profile", "tacred-like"}, {}, "flagprof") == tacred);
    }

    TEST_CASE("encoder forces static keys unless dynamic is requested") {
        oracle::TempDir d("cli");
        REQUIRE(synth(d).code == 0);
        const std::vector<std::string> base{"correct",    "--store",         p(d, "s.rann"), "--epochs", "1",
                                            "--encoder",  "--encoder-heads", "2",            "--encoder-layers",
                                            "1",          "--k-context",     "3",            "--out",
                                            p(d, "e.jsonl")};
        auto args = base;
        args.insert(args.end(), {"--contrastive", "--n-retrieved", "10", "--n-peers", "2", "--projection-dim", "4"});
        CHECK(run(args).code == 0);
        args.insert(args.end(), {"--embedding-mode", "dynamic"});
        CHECK(run(args).code == 1);
        args = base;
        args.insert(args.end(), {"--embedding-mode", "dynamic"});
        CHECK(run(args).code == 1);
    }
}
