// textdiff: data synthesis, training, sampling, evaluation and benchmarking.
//
// Exit codes: 0 success, 1 usage error, 2 runtime failure.

#include "textdiff/commands.hpp"

#include <CLI11.hpp>

#include <cstdlib>
#include <fstream>
#include <iostream>

using namespace textdiff;

namespace {

struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

RunConfig resolve_config(const std::string& file, const std::vector<std::string>& overrides) {
    RunConfig cfg;
    try {
        if (!file.empty()) cfg.load_file(file);
        for (const auto& o : overrides) cfg.set_assignment(o);
    } catch (const std::invalid_argument& e) {
        throw UsageError(e.what());
    }
    return cfg;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Sequence-to-sequence text diffusion with a learned soft absorbing state"};
    app.require_subcommand(1);

    // make-toy-data
    auto* toy = app.add_subcommand("make-toy-data", "write a synthetic copy/reverse/bijection dataset");
    ToyDataSpec toy_spec;
    std::string toy_task = "bijection", toy_out = "data";
    toy->add_option("--task", toy_task, "copy | reverse | bijection")->capture_default_str();
    toy->add_option("--vocab-size", toy_spec.vocab_size)->capture_default_str();
    toy->add_option("--min-len", toy_spec.min_len)->capture_default_str();
    toy->add_option("--max-len", toy_spec.max_len)->capture_default_str();
    toy->add_option("--n", toy_spec.n, "total pairs across all splits")->capture_default_str();
    toy->add_option("--seed", toy_spec.seed)->capture_default_str();
    toy->add_option("--out", toy_out, "output directory")->capture_default_str();

    // train
    auto* train_cmd = app.add_subcommand("train", "train a model from a config file");
    std::string config_file, dump_schedule;
    std::vector<std::string> overrides;
    train_cmd->add_option("--config", config_file, "key = value config file");
    train_cmd->add_option("--set", overrides, "override a config key (key=value), repeatable");
    train_cmd->add_option("--dump-schedule", dump_schedule, "write the noise schedule as CSV and continue");

    // sample
    auto* sample_cmd = app.add_subcommand("sample", "generate targets for a JSONL file of sources");
    std::string ckpt, input, output = "generations.jsonl", trace;
    std::string mode, spacing, solver;
    int steps = 0, mbr = 0, limit = 0;
    double gamma = -1.0;
    std::int64_t seed = -1;
    bool clamp = false, no_clamp = false, inject = false, no_inject = false;
    sample_cmd->add_option("--checkpoint", ckpt)->required();
    sample_cmd->add_option("--input", input, "JSONL with src/trg fields")->required();
    sample_cmd->add_option("--output", output)->capture_default_str();
    sample_cmd->add_option("--config", config_file, "config file supplying sampler keys");
    sample_cmd->add_option("--set", overrides, "override a config key (key=value)");
    sample_cmd->add_option("--mode", mode, "ancestral | respaced | dpm2m");
    sample_cmd->add_option("--steps", steps, "sampler steps (respaced / dpm2m)");
    sample_cmd->add_flag("--clamp", clamp);
    sample_cmd->add_flag("--no-clamp", no_clamp);
    sample_cmd->add_flag("--inject-mask", inject);
    sample_cmd->add_flag("--no-inject-mask", no_inject);
    sample_cmd->add_option("--gamma", gamma);
    sample_cmd->add_option("--mbr", mbr, "candidates per source");
    sample_cmd->add_option("--seed", seed);
    sample_cmd->add_option("--spacing", spacing, "even | lambda");
    sample_cmd->add_option("--solver", solver, "phi | midpoint");
    sample_cmd->add_option("--trace", trace, "write the first example's sampling trace as CSV");
    sample_cmd->add_option("--limit", limit, "only the first N records");

    // eval
    auto* eval_cmd = app.add_subcommand("eval", "score a generations file");
    std::string generations, report_path, external;
    eval_cmd->add_option("generations", generations)->required();
    eval_cmd->add_option("--report", report_path, "write the JSON report here");
    eval_cmd->add_option("--external-scorer", external, "command printing an extra score");

    // bench
    auto* bench_cmd = app.add_subcommand("bench", "measure sampling throughput");
    int batch_size = 16, repeats = 3;
    bench_cmd->add_option("--checkpoint", ckpt)->required();
    bench_cmd->add_option("--batch-size", batch_size)->capture_default_str();
    bench_cmd->add_option("--mode", mode, "ancestral | respaced | dpm2m");
    bench_cmd->add_option("--steps", steps);
    bench_cmd->add_option("--repeats", repeats)->capture_default_str();
    bench_cmd->add_option("--seed", seed);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 1;
    }

    if (const char* det = std::getenv("TEXTDIFF_DETERMINISTIC"); det && std::string(det) != "0") {
        // all kernels are single-threaded with fixed reduction order already
        std::cerr << "deterministic mode\n";
    }

    auto sampler_from_flags = [&](const RunConfig& cfg) {
        RunConfig c = cfg;
        if (!mode.empty()) c.set("mode", mode);
        if (steps > 0) c.set("sample_steps", std::to_string(steps));
        if (clamp && no_clamp) throw UsageError("--clamp and --no-clamp are exclusive");
        if (inject && no_inject) throw UsageError("--inject-mask and --no-inject-mask are exclusive");
        if (clamp) c.set("clamp", "true");
        if (no_clamp) c.set("clamp", "false");
        if (inject) c.set("inject_mask", "true");
        if (no_inject) c.set("inject_mask", "false");
        if (gamma >= 0.0) c.set("gamma", std::to_string(gamma));
        if (mbr > 0) c.set("mbr", std::to_string(mbr));
        if (seed >= 0) c.set("seed", std::to_string(seed));
        if (!spacing.empty()) c.set("spacing", spacing);
        if (!solver.empty()) c.set("solver", solver);
        return c;
    };

    try {
        if (*toy) {
            toy_spec.task = parse_toy_task(toy_task);
            const auto sizes = cmd_make_toy_data(toy_spec, toy_out);
            std::cout << "wrote " << sizes.train << " train, " << sizes.valid << " valid, " << sizes.test
                      << " test pairs to " << toy_out << '\n';
        } else if (*train_cmd) {
            const RunConfig cfg = resolve_config(config_file, overrides);
            if (!dump_schedule.empty()) {
                std::ofstream csv(dump_schedule);
                cfg.schedule().build().write_csv(csv);
            }
            const auto state = cmd_train(cfg, std::cout);
            std::cout << "checkpoint written to " << state.config.checkpoint_path << " after " << state.step
                      << " steps\n";
        } else if (*sample_cmd) {
            RunConfig cfg;
            try {
                cfg = sampler_from_flags(resolve_config(config_file, overrides));
            } catch (const std::invalid_argument& e) {
                throw UsageError(e.what());
            }
            const TrainingState state = load_checkpoint(ckpt);
            SampleOptions opts;
            opts.sampler = cfg.sampler();
            opts.limit = limit;
            if (!trace.empty()) opts.trace_path = trace;
            std::ofstream echo(output + ".config");
            echo << cfg.dump();
            const int n = cmd_sample(state.model, input, output, opts);
            std::cout << "wrote " << n << " generations to " << output << '\n';
        } else if (*eval_cmd) {
            const auto report = cmd_eval(generations);
            report.print_table(std::cout);
            if (const auto extra = external_score(external, generations)) std::cout << "external    " << *extra << '\n';
            if (!report_path.empty()) {
                std::ofstream out(report_path);
                out << report.to_json() << '\n';
            }
        } else if (*bench_cmd) {
            RunConfig cfg;
            try {
                cfg = sampler_from_flags(cfg);
            } catch (const std::invalid_argument& e) {
                throw UsageError(e.what());
            }
            const TrainingState state = load_checkpoint(ckpt);
            const auto res = cmd_bench(state.model, batch_size, cfg.sampler(), repeats);
            std::cout << res.to_json() << '\n';
        }
    } catch (const UsageError& e) {
        std::cerr << "usage error: " << e.what() << '\n';
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    }
    return 0;
}
