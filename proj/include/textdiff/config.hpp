#pragma once

#include "textdiff/denoiser.hpp"
#include "textdiff/sampler.hpp"
#include "textdiff/trainer.hpp"

#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace textdiff {

// Flat key = value configuration merged from defaults, an optional file and
// command-line overrides. Unknown keys are rejected.
class RunConfig {
public:
    enum class Kind { integer, real, boolean, text };
    struct Key {
        std::string name;
        Kind kind;
        std::string default_value;
        std::string doc;
    };
    static const std::vector<Key>& keys();

    RunConfig();

    void set(const std::string& key, const std::string& value);
    // "key=value"
    void set_assignment(const std::string& assignment);
    void load_file(const std::filesystem::path& path);

    const std::string& get(const std::string& key) const;
    int get_int(const std::string& key) const;
    double get_double(const std::string& key) const;
    bool get_bool(const std::string& key) const;

    // Fully resolved config, one "key = value" per line, sorted by key.
    std::string dump() const;

    ScheduleParams schedule() const;
    DenoiserConfig denoiser() const;
    TrainConfig train() const;
    SamplerConfig sampler() const;
    int max_src_len() const { return get_int("max_src_len"); }
    int max_trg_len() const { return get_int("max_trg_len"); }
    int seq_len() const { return max_src_len() + 1 + max_trg_len(); }

private:
    const Key& key(const std::string& name) const;
    std::map<std::string, std::string> values_;
};

}  // namespace textdiff
