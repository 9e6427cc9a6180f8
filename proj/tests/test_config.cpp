#include <doctest.h>

#include "textdiff/config.hpp"

#include <filesystem>
#include <fstream>

using namespace textdiff;

TEST_CASE("every key has a default") {
    RunConfig c;
    for (const auto& k : RunConfig::keys()) {
        CHECK_NOTHROW(c.get(k.name));
        CHECK_FALSE(k.doc.empty());
    }
    CHECK(c.get_int("T") == 200);
    CHECK(c.get_double("gamma") == 0.5);
    CHECK(c.get_bool("inject_mask"));
    CHECK(c.seq_len() == 25);
}

TEST_CASE("unknown keys and bad values are rejected") {
    RunConfig c;
    CHECK_THROWS(c.set("no_such_key", "1"));
    CHECK_THROWS(c.get("no_such_key"));
    CHECK_THROWS(c.set("T", "12abc"));
    CHECK_THROWS(c.set("gamma", "half"));
    CHECK_THROWS(c.set("clamp", "maybe"));
    CHECK_THROWS(c.set_assignment("T"));
    c.set_assignment(" T = 50 ");
    CHECK(c.get_int("T") == 50);
    c.set("clamp", "yes");
    CHECK(c.get_bool("clamp"));
}

TEST_CASE("config files with comments and line numbers") {
    const auto p = std::filesystem::temp_directory_path() / "textdiff_config_ok.cfg";
    std::ofstream(p) << "# schedule\nT = 2000\n\nsteps = 7  # short run\nmode = ancestral\n";
    RunConfig c;
    c.load_file(p);
    CHECK(c.get_int("T") == 2000);
    CHECK(c.get_int("steps") == 7);
    CHECK(c.sampler().mode == SamplerMode::ancestral);

    const auto bad = std::filesystem::temp_directory_path() / "textdiff_config_bad.cfg";
    std::ofstream(bad) << "T = 10\nbogus = 3\n";
    try {
        RunConfig d;
        d.load_file(bad);
        FAIL("expected an error");
    } catch (const std::invalid_argument& e) {
        CHECK(std::string(e.what()).find("textdiff_config_bad.cfg:2") != std::string::npos);
    }
    CHECK_THROWS(RunConfig().load_file("/nonexistent/run.cfg"));
}

TEST_CASE("typed views") {
    RunConfig c;
    c.set("d_model", "32");
    c.set("n_heads", "5");
    CHECK_THROWS(c.denoiser());
    c.set("n_heads", "4");
    CHECK(c.denoiser().d_model == 32);

    c.set("gamma", "0.25");
    c.set("mask_rate", "cumulative");
    CHECK(c.train().gamma == 0.25);
    CHECK(c.train().mask_rate == MaskRate::cumulative);
    c.set("mask_rate", "sometimes");
    CHECK_THROWS(c.train());

    c.set("sample_steps", "2");
    c.set("spacing", "lambda");
    c.set("solver", "midpoint");
    c.set("mbr", "4");
    const auto s = c.sampler();
    CHECK(s.steps == 2);
    CHECK(s.spacing == Spacing::lambda);
    CHECK(s.solver == SolverVariant::midpoint);
    CHECK(s.mbr_candidates == 4);
    CHECK(s.gamma == 0.25);
    c.set("rounding", "cosine");
    CHECK_THROWS(c.sampler());

    CHECK(c.schedule().T == 200);
}

TEST_CASE("dump lists every key sorted") {
    RunConfig c;
    const auto d = c.dump();
    std::size_t lines = 0;
    for (char ch : d) lines += ch == '\n';
    CHECK(lines == RunConfig::keys().size());
    CHECK(d.find("T = 200\n") != std::string::npos);
    CHECK(d.find("beta_clip_max = 0.999\n") < d.find("gamma = 0.5\n"));
}
