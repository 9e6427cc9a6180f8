#include <doctest.h>

#include <json.hpp>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

const fs::path& work_dir() {
    static const fs::path dir = [] {
        auto d = fs::temp_directory_path() / "textdiff_cli_test";
        fs::remove_all(d);
        fs::create_directories(d);
        return d;
    }();
    return dir;
}

// Runs the CLI from the work directory; returns its exit code.
int run(const std::string& args, std::string* out = nullptr) {
    const fs::path log = work_dir() / "last_output.txt";
    const std::string cmd =
        "cd '" + work_dir().string() + "' && '" + std::string(TEXTDIFF_CLI) + "' " + args + " > '" + log.string() + "' 2>&1";
    const int status = std::system(cmd.c_str());
    if (out) {
        std::ifstream in(log);
        std::stringstream ss;
        ss << in.rdbuf();
        *out = ss.str();
    }
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::vector<json> read_jsonl(const fs::path& p) {
    std::vector<json> rows;
    std::ifstream in(p);
    std::string line;
    while (std::getline(in, line))
        if (!line.empty()) rows.push_back(json::parse(line));
    return rows;
}

const char* kTinyModel =
    "--set latent_dim=4 --set d_model=8 --set n_layers=1 --set n_heads=2 --set d_ff=16 --set time_embed_dim=4 "
    "--set max_len=16 --set max_src_len=5 --set max_trg_len=5 --set T=20 --set batch_size=4 ";

// Toy data plus a briefly trained checkpoint shared by the sampling tests.
void ensure_model() {
    static bool done = false;
    if (done) return;
    REQUIRE(run("make-toy-data --task copy --vocab-size 6 --min-len 2 --max-len 4 --n 60 --seed 3 --out data") == 0);
    const std::string train = std::string("train ") + kTinyModel +
                              "--set steps=30 --set train_path=data/train.jsonl --set valid_path=data/valid.jsonl "
                              "--set eval_every=10 --set eval_examples=3 --set sample_steps=2 --set gamma=0.25 "
                              "--set checkpoint_path=ckpt/model.ckpt --set log_path=train_log.jsonl "
                              "--dump-schedule schedule.csv";
    std::string out;
    REQUIRE_MESSAGE(run(train, &out) == 0, out);
    done = true;
}

}  // namespace

TEST_CASE("make-toy-data is deterministic and splits sum to n") {
    REQUIRE(run("make-toy-data --task bijection --n 50 --seed 9 --out a") == 0);
    REQUIRE(run("make-toy-data --task bijection --n 50 --seed 9 --out b") == 0);
    REQUIRE(run("make-toy-data --task bijection --n 50 --seed 10 --out c") == 0);
    const auto& d = work_dir();
    for (const char* f : {"train.jsonl", "valid.jsonl", "test.jsonl", "manifest.json"})
        CHECK(slurp(d / "a" / f) == slurp(d / "b" / f));
    CHECK(slurp(d / "a" / "train.jsonl") != slurp(d / "c" / "train.jsonl"));

    const auto manifest = json::parse(slurp(d / "a" / "manifest.json"));
    const auto& sp = manifest["splits"];
    CHECK(sp["train"].get<int>() + sp["valid"].get<int>() + sp["test"].get<int>() == 50);
    CHECK(read_jsonl(d / "a" / "train.jsonl").size() == sp["train"].get<std::size_t>());
    CHECK(manifest["task"] == "bijection");
    // the stored permutation reproduces every target
    const auto perm = manifest["permutation"].get<std::vector<int>>();
    for (const auto& rec : read_jsonl(d / "a" / "test.jsonl")) {
        std::istringstream src(rec["src"].get<std::string>()), trg(rec["trg"].get<std::string>());
        std::string s, t;
        while (src >> s && trg >> t) CHECK(t == "t" + std::to_string(perm[std::stoi(s.substr(1))]));
    }
}

TEST_CASE("train writes checkpoint, log and config echo") {
    ensure_model();
    const auto& d = work_dir();
    CHECK(fs::exists(d / "ckpt" / "model.ckpt"));
    const auto echo = slurp(d / "ckpt" / "model.ckpt.config");
    CHECK(echo.find("gamma = 0.25") != std::string::npos);
    CHECK(slurp(d / "schedule.csv").rfind("t,beta,alpha_bar,sigma,lambda", 0) == 0);

    const auto log = read_jsonl(d / "train_log.jsonl");
    REQUIRE(log.size() == 31);
    CHECK(log[0]["event"] == "start");
    CHECK(log[0]["gamma"].get<double>() == 0.25);
    int evals = 0;
    for (std::size_t i = 1; i < log.size(); ++i) {
        CHECK(log[i]["step"].get<int>() == static_cast<int>(i - 1));
        CHECK(log[i].contains("wall_seconds"));
        if (log[i].contains("eval_bleu")) {
            ++evals;
            CHECK((log[i]["step"].get<int>() + 1) % 10 == 0);
        }
    }
    CHECK(evals == 3);
}

TEST_CASE("sample output schema and flags") {
    ensure_model();
    const auto& d = work_dir();
    std::string out;
    REQUIRE_MESSAGE(run("sample --checkpoint ckpt/model.ckpt --input data/test.jsonl --output gen.jsonl --mode dpm2m "
                        "--steps 2 --trace trace.csv --mbr 3 --seed 4",
                        &out) == 0,
                    out);
    const auto rows = read_jsonl(d / "gen.jsonl");
    REQUIRE(rows.size() == read_jsonl(d / "data" / "test.jsonl").size());
    for (const auto& r : rows) {
        CHECK(r.contains("source"));
        CHECK(r.contains("reference"));
        CHECK(r["candidates"].size() == 3);
        CHECK(r["selected"].is_string());
    }
    // initial state plus one row per step
    std::istringstream trace(slurp(d / "trace.csv"));
    std::string line;
    int n = 0;
    while (std::getline(trace, line)) ++n;
    CHECK(n == 1 + 3);
    CHECK(slurp(d / "gen.jsonl.config").find("mode = dpm2m") != std::string::npos);

    REQUIRE(run("sample --checkpoint ckpt/model.ckpt --input data/test.jsonl --output a.jsonl --mode ancestral "
                "--no-inject-mask --seed 1 --limit 2") == 0);
    REQUIRE(run("sample --checkpoint ckpt/model.ckpt --input data/test.jsonl --output b.jsonl --mode ancestral "
                "--no-inject-mask --seed 1 --limit 2") == 0);
    CHECK(read_jsonl(d / "a.jsonl").size() == 2);
    CHECK(slurp(d / "a.jsonl") == slurp(d / "b.jsonl"));
    CHECK(slurp(d / "a.jsonl.config").find("inject_mask = false") != std::string::npos);
}

TEST_CASE("eval and bench") {
    ensure_model();
    const auto& d = work_dir();
    REQUIRE(run("sample --checkpoint ckpt/model.ckpt --input data/test.jsonl --output g.jsonl --limit 3") == 0);
    std::string out;
    REQUIRE(run("eval g.jsonl --report report.json --external-scorer 'echo 0.5 #'", &out) == 0);
    CHECK(out.find("BLEU") != std::string::npos);
    CHECK(out.find("external") != std::string::npos);
    const auto report = json::parse(slurp(d / "report.json"));
    CHECK(report["n_examples"] == 3);
    CHECK(report["bleu"].get<double>() >= 0.0);

    REQUIRE(run("bench --checkpoint ckpt/model.ckpt --batch-size 2 --mode dpm2m --steps 2 --repeats 1", &out) == 0);
    auto bench = json::parse(out);
    CHECK(bench["nfe_per_sequence"].get<double>() == 2.0);
    CHECK(bench["sequences_per_second"].get<double>() > 0.0);
    REQUIRE(run("bench --checkpoint ckpt/model.ckpt --batch-size 1 --mode ancestral --repeats 1", &out) == 0);
    bench = json::parse(out);
    CHECK(bench["nfe_per_sequence"].get<double>() == 20.0);
}

TEST_CASE("exit codes") {
    ensure_model();
    CHECK(run("") == 1);
    CHECK(run("frobnicate") == 1);
    CHECK(run("train --set no_such_key=1") == 1);
    CHECK(run("sample --checkpoint ckpt/model.ckpt --input data/test.jsonl --clamp --no-clamp") == 1);
    CHECK(run("sample --checkpoint missing.ckpt --input data/test.jsonl") == 2);
    CHECK(run("eval missing.jsonl") == 2);

    std::ofstream(work_dir() / "oov.jsonl") << "{\"src\":\"zz9 t1\",\"trg\":\"t1\"}\n";
    std::string out;
    CHECK(run("sample --checkpoint ckpt/model.ckpt --input oov.jsonl --output oov_out.jsonl", &out) == 2);
    CHECK(out.find("zz9") != std::string::npos);
}
