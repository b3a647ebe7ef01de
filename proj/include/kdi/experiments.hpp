#pragma once

#include <cstdint>
#include <json.hpp>
#include <string>
#include <vector>

#include "kdi/diffroar.hpp"
#include "kdi/dissect.hpp"
#include "kdi/synth.hpp"
#include "kdi/train.hpp"

namespace kdi {

constexpr const char* kToolVersion = "1.0.0";

struct ArchChoices {
    int student_channels = 8;
    int teacher_channels = 16;
};

struct DiffRoarRunConfig {
    bool enabled = false;
    std::vector<double> fractions = {0.1, 0.3, 0.5, 0.7, 0.9};
    int n_seeds = 1;  // retrain seeds per experiment seed
};

// Experiment pipeline configuration; JSON parsing rejects unknown keys at
// every nesting level so typos fail loudly instead of silently defaulting.
struct RunConfig {
    std::vector<std::uint64_t> seeds = {1, 2, 3, 4, 5};
    SynthConfig dataset;
    ArchChoices arch;
    TrainConfig train;      // shared optimizer settings; KD alpha/temperature
    float ls_alpha = 0.5f;  // mixing weight for label-smoothing students
    DissectionConfig dissect;
    int entropy_samples = 1000;
    DiffRoarRunConfig diffroar;
    std::string output_dir = ".";

    void validate(std::size_t min_seeds = 1) const;
    static RunConfig from_json(const nlohmann::json& j);
    nlohmann::json to_json() const;
};

// Section parsers shared with the CLI subcommands.
SynthConfig synth_config_from_json(const nlohmann::json& j);
TrainConfig train_config_from_json(const nlohmann::json& j);
DissectionConfig dissect_config_from_json(const nlohmann::json& j);
nlohmann::json synth_config_to_json(const SynthConfig& c);
nlohmann::json train_config_to_json(const TrainConfig& c);
nlohmann::json dissect_config_to_json(const DissectionConfig& c);

const char* optimizer_name(Optimizer o);
Optimizer optimizer_from_name(const std::string& name);

ArchSpec make_student(const ArchChoices& arch);
ArchSpec make_teacher(const ArchChoices& arch);

// Reports are JSON documents: tool_version, experiment, config echo,
// per_seed rows, seed-averaged rows, directional pass/fail flags, and a
// single "timings" subsection (the only part allowed to differ between
// re-runs of the same config).
nlohmann::json exp_trend(const RunConfig& config);

// LS teacher (alpha 0.1), KD students at alpha 0.5 for T in {1, 2, 4}.
nlohmann::json exp_ls_teacher(const RunConfig& config);

// AT-only (alpha 0) vs AT plus logit distillation (T=4, alpha=0.5).
nlohmann::json exp_logit_plus_at(const RunConfig& config);

nlohmann::json strip_timings(nlohmann::json report);

}  // namespace kdi
