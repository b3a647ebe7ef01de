#include "kdi/experiments.hpp"

#include <chrono>
#include <initializer_list>
#include <string>

#include "kdi/attribution.hpp"
#include "kdi/errors.hpp"
#include "kdi/metrics.hpp"
#include "parallel.hpp"

namespace kdi {

using nlohmann::json;

namespace {

void expect_object(const json& j, const char* where) {
    if (!j.is_object())
        throw ParamError(std::string("config: '") + where + "' must be a JSON object");
}

void expect_keys(const json& j, const char* where, std::initializer_list<const char*> allowed) {
    expect_object(j, where);
    for (const auto& kv : j.items()) {
        bool ok = false;
        for (const char* k : allowed)
            if (kv.key() == k) ok = true;
        if (!ok)
            throw ParamError("config: unknown key '" + kv.key() + "' in " + where);
    }
}

template <typename T>
void read_field(const json& j, const char* key, T& out) {
    if (!j.contains(key)) return;
    try {
        out = j.at(key).get<T>();
    } catch (const json::exception&) {
        throw ParamError(std::string("config: field '") + key + "' has the wrong type");
    }
}

struct StageTimer {
    using clock = std::chrono::steady_clock;
    clock::time_point mark = clock::now();
    json seconds = json::object();

    void lap(const std::string& stage) {
        const clock::time_point now = clock::now();
        const double s = std::chrono::duration<double>(now - mark).count();
        mark = now;
        seconds[stage] = seconds.value(stage, 0.0) + s;
    }
    void absorb(const StageTimer& other) {
        for (const auto& kv : other.seconds.items())
            seconds[kv.key()] = seconds.value(kv.key(), 0.0) + kv.value().get<double>();
    }
    json to_json() const {
        double total = 0.0;
        for (const auto& kv : seconds.items()) total += kv.value().get<double>();
        return {{"seconds", seconds}, {"total_seconds", total}};
    }
};

// Element-wise sum of numeric fields across objects; arrays are skipped so
// per-seed detail rows stay out of the averages.
void accumulate(json& acc, const json& x) {
    if (x.is_object()) {
        if (!acc.is_object()) acc = json::object();
        for (const auto& kv : x.items()) accumulate(acc[kv.key()], kv.value());
    } else if (x.is_number()) {
        acc = (acc.is_number() ? acc.get<double>() : 0.0) + x.get<double>();
    }
}

void divide_by(json& acc, double n) {
    if (acc.is_object()) {
        for (auto& kv : acc.items()) divide_by(kv.value(), n);
    } else if (acc.is_number()) {
        acc = acc.get<double>() / n;
    }
}

json average_rows(const std::vector<json>& rows) {
    json acc;
    for (const json& r : rows) accumulate(acc, r);
    divide_by(acc, double(rows.size()));
    return acc;
}

json detectors_json(const DissectionReport& r) {
    return {{"feature", r.feature_detectors},
            {"object", r.object_detectors},
            {"total", r.total_detectors},
            {"unique", r.unique_detectors}};
}

json five_band_json(const FiveBandScore& s) {
    return {{"fpr", s.fpr},
            {"pixel_acc", s.pixel_acc},
            {"precision", s.precision},
            {"recall", s.recall}};
}

json diffroar_json(const DiffRoarResult& r) {
    json rows = json::array();
    for (const DiffRoarRow& row : r.rows)
        rows.push_back({{"acc_bottom_removed", row.acc_bottom_removed},
                        {"acc_top_removed", row.acc_top_removed},
                        {"fraction", row.fraction},
                        {"score", row.score},
                        {"seed", row.seed}});
    return {{"aggregate", r.aggregate}, {"rows", rows}};
}

// Pooled ternary confusion of normalized saliency maps over the whole split.
FiveBandScore pooled_five_band(const ArchSpec& arch, const ModelWeights& weights,
                               const Dataset& data) {
    TernaryConfusion conf;
    for (const Sample& s : data.samples) {
        const AttributionMap map = saliency(arch, weights, s.image);
        conf.add(normalize01(map.values), s.mask);
    }
    return conf.scores();
}

json notes_json() {
    return {{"diffroar_fill", "per-pixel train-split mean"},
            {"entropy_log", "natural"},
            {"five_band",
             "five equal-width bands on the min-max normalized absolute attribution; "
             "bands {0,1} background, {2,3} localization, {4} feature"},
            {"weight_decay", "decoupled"}};
}

json finish_report(const char* experiment, const RunConfig& config, json per_seed,
                   json averages, json flags, const StageTimer& timer) {
    json report;
    report["averages"] = std::move(averages);
    report["config"] = config.to_json();
    report["experiment"] = experiment;
    report["flags"] = std::move(flags);
    report["notes"] = notes_json();
    report["per_seed"] = std::move(per_seed);
    report["timings"] = timer.to_json();
    report["tool_version"] = kToolVersion;
    return report;
}

}  // namespace

const char* optimizer_name(Optimizer o) { return o == Optimizer::SGD ? "sgd" : "adam"; }

Optimizer optimizer_from_name(const std::string& name) {
    if (name == "adam") return Optimizer::ADAM;
    if (name == "sgd") return Optimizer::SGD;
    throw ParamError("unknown optimizer '" + name + "'");
}

SynthConfig synth_config_from_json(const json& j) {
    expect_keys(j, "dataset", {"n_train", "n_test", "image_size", "seed"});
    SynthConfig c;
    read_field(j, "n_train", c.n_train);
    read_field(j, "n_test", c.n_test);
    read_field(j, "image_size", c.image_size);
    read_field(j, "seed", c.seed);
    return c;
}

json synth_config_to_json(const SynthConfig& c) {
    return {{"image_size", c.image_size},
            {"n_test", c.n_test},
            {"n_train", c.n_train},
            {"seed", c.seed}};
}

TrainConfig train_config_from_json(const json& j) {
    expect_keys(j, "train",
                {"epochs", "batch_size", "learning_rate", "weight_decay", "optimizer", "alpha",
                 "temperature", "mode", "at_weight", "seed"});
    TrainConfig c;
    read_field(j, "epochs", c.epochs);
    read_field(j, "batch_size", c.batch_size);
    read_field(j, "learning_rate", c.learning_rate);
    read_field(j, "weight_decay", c.weight_decay);
    if (j.contains("optimizer")) c.optimizer = optimizer_from_name(j.at("optimizer").get<std::string>());
    read_field(j, "alpha", c.alpha);
    read_field(j, "temperature", c.temperature);
    if (j.contains("mode")) c.mode = mode_from_name(j.at("mode").get<std::string>());
    read_field(j, "at_weight", c.at_weight);
    read_field(j, "seed", c.seed);
    return c;
}

json train_config_to_json(const TrainConfig& c) {
    return {{"alpha", c.alpha},
            {"at_weight", c.at_weight},
            {"batch_size", c.batch_size},
            {"epochs", c.epochs},
            {"learning_rate", c.learning_rate},
            {"mode", mode_name(c.mode)},
            {"optimizer", optimizer_name(c.optimizer)},
            {"seed", c.seed},
            {"temperature", c.temperature},
            {"weight_decay", c.weight_decay}};
}

DissectionConfig dissect_config_from_json(const json& j) {
    expect_keys(j, "dissect", {"tap", "quantile", "iou_threshold"});
    DissectionConfig c;
    read_field(j, "tap", c.tap);
    read_field(j, "quantile", c.quantile);
    read_field(j, "iou_threshold", c.iou_threshold);
    return c;
}

json dissect_config_to_json(const DissectionConfig& c) {
    return {{"iou_threshold", c.iou_threshold}, {"quantile", c.quantile}, {"tap", c.tap}};
}

void RunConfig::validate(std::size_t min_seeds) const {
    if (seeds.size() < min_seeds)
        throw ParamError("config: at least " + std::to_string(min_seeds) + " seeds required, got " +
                         std::to_string(seeds.size()));
    if (dataset.n_train < 1 || dataset.n_test < 1)
        throw ParamError("config: dataset sizes must be >= 1");
    if (dataset.image_size < 32 || dataset.image_size % 2 != 0)
        throw ParamError("config: image_size must be even and >= 32");
    if (arch.student_channels < 1 || arch.teacher_channels < 1)
        throw ParamError("config: channel widths must be >= 1");
    train.validate();
    if (ls_alpha < 0.0f || ls_alpha > 1.0f) throw ParamError("config: ls_alpha outside [0,1]");
    if (!(dissect.quantile > 0.0 && dissect.quantile < 1.0))
        throw ParamError("config: dissect quantile must lie in (0,1)");
    if (!(dissect.iou_threshold > 0.0))
        throw ParamError("config: dissect iou_threshold must be > 0");
    if (entropy_samples < 1) throw ParamError("config: entropy_samples must be >= 1");
    if (diffroar.enabled) {
        DiffRoarConfig probe;
        probe.fractions = diffroar.fractions;
        probe.n_seeds = diffroar.n_seeds;
        probe.retrain = train;
        probe.retrain.mode = TrainMode::SCRATCH;
        probe.validate();
    }
}

RunConfig RunConfig::from_json(const json& j) {
    expect_keys(j, "run config",
                {"seeds", "dataset", "arch", "train", "ls_alpha", "dissect", "entropy_samples",
                 "diffroar", "output_dir"});
    RunConfig c;
    read_field(j, "seeds", c.seeds);
    if (j.contains("dataset")) c.dataset = synth_config_from_json(j.at("dataset"));
    if (j.contains("arch")) {
        expect_keys(j.at("arch"), "arch", {"student_channels", "teacher_channels"});
        read_field(j.at("arch"), "student_channels", c.arch.student_channels);
        read_field(j.at("arch"), "teacher_channels", c.arch.teacher_channels);
    }
    if (j.contains("train")) c.train = train_config_from_json(j.at("train"));
    read_field(j, "ls_alpha", c.ls_alpha);
    if (j.contains("dissect")) c.dissect = dissect_config_from_json(j.at("dissect"));
    read_field(j, "entropy_samples", c.entropy_samples);
    if (j.contains("diffroar")) {
        const json& d = j.at("diffroar");
        expect_keys(d, "diffroar", {"enabled", "fractions", "n_seeds"});
        read_field(d, "enabled", c.diffroar.enabled);
        read_field(d, "fractions", c.diffroar.fractions);
        read_field(d, "n_seeds", c.diffroar.n_seeds);
    }
    read_field(j, "output_dir", c.output_dir);
    return c;
}

json RunConfig::to_json() const {
    json d = {{"enabled", diffroar.enabled},
              {"fractions", diffroar.fractions},
              {"n_seeds", diffroar.n_seeds}};
    return {{"arch",
             {{"student_channels", arch.student_channels},
              {"teacher_channels", arch.teacher_channels}}},
            {"dataset", synth_config_to_json(dataset)},
            {"diffroar", d},
            {"dissect", dissect_config_to_json(dissect)},
            {"entropy_samples", entropy_samples},
            {"ls_alpha", ls_alpha},
            {"output_dir", output_dir},
            {"seeds", seeds},
            {"train", train_config_to_json(train)}};
}

ArchSpec make_student(const ArchChoices& arch) {
    return ArchSpec::three_block(arch.student_channels);
}
ArchSpec make_teacher(const ArchChoices& arch) {
    return ArchSpec::three_block(arch.teacher_channels);
}

json exp_trend(const RunConfig& config) {
    config.validate(3);
    StageTimer timer;
    const Dataset train_ds = generate_split(config.dataset, Split::TRAIN);
    const Dataset test_ds = generate_split(config.dataset, Split::TEST);
    const ClassCatalog catalog = ClassCatalog::standard();
    const ConceptMaskSet concepts = ConceptMaskSet::build(test_ds, catalog);
    timer.lap("dataset");

    const ArchSpec student = make_student(config.arch);
    const ArchSpec teacher = make_teacher(config.arch);
    const char* kModelKeys[3] = {"scratch", "kd", "ls"};

    struct SeedOut {
        double teacher_acc = 0.0;
        json models;
        StageTimer stages;
    };
    std::vector<SeedOut> outs(config.seeds.size());

    // Seeds are independent; fan out and assemble in seed order below.
    parallel_tasks(config.seeds.size(), [&](std::size_t si) {
        const std::uint64_t seed = config.seeds[si];
        SeedOut& out = outs[si];
        out.stages.mark = StageTimer::clock::now();
        TrainConfig base = config.train;
        base.seed = seed;

        TrainConfig tc = base;
        tc.mode = TrainMode::SCRATCH;
        const ModelWeights teacher_w = train(teacher, train_ds, tc);
        const ModelWeights scratch_w = train(student, train_ds, tc);
        TrainConfig kc = base;
        kc.mode = TrainMode::KD;
        const ModelWeights kd_w = train(student, train_ds, kc, &teacher, &teacher_w);
        TrainConfig lc = base;
        lc.mode = TrainMode::LS;
        lc.alpha = config.ls_alpha;
        const ModelWeights ls_w = train(student, train_ds, lc);
        out.stages.lap("train");

        const ModelWeights* weights[3] = {&scratch_w, &kd_w, &ls_w};
        out.teacher_acc = evaluate(teacher, teacher_w, test_ds);

        const EntropyProtocolResult ent = entropy_protocol(
            {{&student, &scratch_w}, {&student, &kd_w}, {&student, &ls_w}}, test_ds, catalog,
            config.entropy_samples);
        out.stages.lap("entropy");

        out.models = json::object();
        for (int m = 0; m < 3; ++m) {
            json row;
            row["accuracy"] = evaluate(student, *weights[m], test_ds);
            out.stages.lap("evaluate");
            row["detectors"] =
                detectors_json(dissect(student, *weights[m], test_ds, concepts, config.dissect));
            out.stages.lap("dissect");
            row["five_band"] = five_band_json(pooled_five_band(student, *weights[m], test_ds));
            out.stages.lap("five_band");
            row["entropy"] = {{"category", ent.ok ? ent.models[std::size_t(m)].category : 0.0},
                              {"entire", ent.ok ? ent.models[std::size_t(m)].entire : 0.0}};
            row["entropy_samples_used"] = ent.n_used;
            if (config.diffroar.enabled && m != 2) {
                DiffRoarConfig dc;
                dc.fractions = config.diffroar.fractions;
                dc.n_seeds = config.diffroar.n_seeds;
                dc.retrain = base;
                dc.retrain.mode = TrainMode::SCRATCH;
                row["diffroar"] = diffroar_json(diffroar(student, *weights[m], train_ds, test_ds,
                                                         Attributor::SALIENCY, dc));
                out.stages.lap("diffroar");
            }
            out.models[kModelKeys[m]] = row;
        }
    });

    json per_seed = json::array();
    std::vector<json> model_rows[3];
    std::vector<double> teacher_accs;
    for (std::size_t si = 0; si < outs.size(); ++si) {
        SeedOut& out = outs[si];
        teacher_accs.push_back(out.teacher_acc);
        for (int m = 0; m < 3; ++m) model_rows[m].push_back(out.models[kModelKeys[m]]);
        per_seed.push_back({{"models", out.models},
                            {"seed", config.seeds[si]},
                            {"teacher_accuracy", out.teacher_acc}});
        timer.absorb(out.stages);
    }

    json averages = json::object();
    for (int m = 0; m < 3; ++m) averages[kModelKeys[m]] = average_rows(model_rows[m]);
    const json &avg_scratch = averages["scratch"], &avg_kd = averages["kd"],
               &avg_ls = averages["ls"];

    json flags;
    flags["accuracy"] = avg_kd["accuracy"].get<double>() >=
                        avg_scratch["accuracy"].get<double>() - 0.005;
    flags["detectors"] = avg_kd["detectors"]["total"].get<double>() >=
                             avg_scratch["detectors"]["total"].get<double>() &&
                         avg_ls["detectors"]["total"].get<double>() <=
                             avg_scratch["detectors"]["total"].get<double>();
    flags["five_band"] =
        avg_kd["five_band"]["pixel_acc"].get<double>() >=
            avg_scratch["five_band"]["pixel_acc"].get<double>() &&
        avg_kd["five_band"]["recall"].get<double>() >=
            avg_scratch["five_band"]["recall"].get<double>() &&
        avg_kd["five_band"]["precision"].get<double>() >=
            avg_scratch["five_band"]["precision"].get<double>() &&
        avg_kd["five_band"]["fpr"].get<double>() <=
            avg_scratch["five_band"]["fpr"].get<double>() + 0.01;
    flags["entropy"] = avg_kd["entropy"]["category"].get<double>() >
                           avg_ls["entropy"]["category"].get<double>() &&
                       avg_ls["entropy"]["entire"].get<double>() >
                           avg_kd["entropy"]["entire"].get<double>() &&
                       avg_ls["entropy"]["entire"].get<double>() >
                           avg_scratch["entropy"]["entire"].get<double>();
    if (config.diffroar.enabled)
        flags["diffroar"] = avg_kd["diffroar"]["aggregate"].get<double>() >=
                            avg_scratch["diffroar"]["aggregate"].get<double>() - 1.0;
    else
        flags["diffroar"] = nullptr;

    double tacc = 0.0;
    for (double a : teacher_accs) tacc += a;
    json report = finish_report("trend", config, std::move(per_seed), std::move(averages),
                                std::move(flags), timer);
    report["teacher_accuracy_mean"] = tacc / double(teacher_accs.size());
    return report;
}

json exp_ls_teacher(const RunConfig& config) {
    config.validate(3);
    StageTimer timer;
    const Dataset train_ds = generate_split(config.dataset, Split::TRAIN);
    const Dataset test_ds = generate_split(config.dataset, Split::TEST);
    const ConceptMaskSet concepts = ConceptMaskSet::build(test_ds, ClassCatalog::standard());
    timer.lap("dataset");

    const ArchSpec student = make_student(config.arch);
    const ArchSpec teacher = make_teacher(config.arch);
    const float temperatures[3] = {1.0f, 2.0f, 4.0f};
    const char* kTKeys[3] = {"1", "2", "4"};

    struct SeedOut {
        double teacher_acc = 0.0;
        json by_t;
        StageTimer stages;
    };
    std::vector<SeedOut> outs(config.seeds.size());

    parallel_tasks(config.seeds.size(), [&](std::size_t si) {
        const std::uint64_t seed = config.seeds[si];
        SeedOut& out = outs[si];
        out.stages.mark = StageTimer::clock::now();
        TrainConfig tc = config.train;
        tc.seed = seed;
        tc.mode = TrainMode::LS;
        tc.alpha = 0.1f;
        const ModelWeights teacher_w = train(teacher, train_ds, tc);
        out.teacher_acc = evaluate(teacher, teacher_w, test_ds);
        out.stages.lap("train_teacher");

        out.by_t = json::object();
        for (int i = 0; i < 3; ++i) {
            TrainConfig kc = config.train;
            kc.seed = seed;
            kc.mode = TrainMode::KD;
            kc.alpha = 0.5f;
            kc.temperature = temperatures[i];
            const ModelWeights w = train(student, train_ds, kc, &teacher, &teacher_w);
            out.stages.lap("train_student");
            json row;
            row["accuracy"] = evaluate(student, w, test_ds);
            row["detectors"] =
                detectors_json(dissect(student, w, test_ds, concepts, config.dissect));
            out.stages.lap("dissect");
            out.by_t[kTKeys[i]] = row;
        }
    });

    json per_seed = json::array();
    std::vector<json> t_rows[3];
    for (std::size_t si = 0; si < outs.size(); ++si) {
        SeedOut& out = outs[si];
        for (int i = 0; i < 3; ++i) t_rows[i].push_back(out.by_t[kTKeys[i]]);
        per_seed.push_back({{"by_temperature", out.by_t},
                            {"seed", config.seeds[si]},
                            {"teacher_accuracy", out.teacher_acc}});
        timer.absorb(out.stages);
    }

    json averages = json::object();
    for (int i = 0; i < 3; ++i) averages[kTKeys[i]] = average_rows(t_rows[i]);
    json flags;
    flags["detectors_t4_ge_t1"] = averages["4"]["detectors"]["total"].get<double>() >=
                                  averages["1"]["detectors"]["total"].get<double>();
    return finish_report("ls_teacher", config, std::move(per_seed), std::move(averages),
                         std::move(flags), timer);
}

json exp_logit_plus_at(const RunConfig& config) {
    config.validate(3);
    StageTimer timer;
    const Dataset train_ds = generate_split(config.dataset, Split::TRAIN);
    const Dataset test_ds = generate_split(config.dataset, Split::TEST);
    const ConceptMaskSet concepts = ConceptMaskSet::build(test_ds, ClassCatalog::standard());
    timer.lap("dataset");

    const ArchSpec student = make_student(config.arch);
    const ArchSpec teacher = make_teacher(config.arch);
    const char* kVariantKeys[2] = {"at_only", "at_plus_logit"};

    struct SeedOut {
        json variants;
        StageTimer stages;
    };
    std::vector<SeedOut> outs(config.seeds.size());

    parallel_tasks(config.seeds.size(), [&](std::size_t si) {
        const std::uint64_t seed = config.seeds[si];
        SeedOut& out = outs[si];
        out.stages.mark = StageTimer::clock::now();
        TrainConfig tc = config.train;
        tc.seed = seed;
        tc.mode = TrainMode::SCRATCH;
        const ModelWeights teacher_w = train(teacher, train_ds, tc);
        out.stages.lap("train_teacher");

        out.variants = json::object();
        for (int v = 0; v < 2; ++v) {
            TrainConfig kc = config.train;
            kc.seed = seed;
            kc.mode = TrainMode::KD_PLUS_AT;
            kc.alpha = v == 0 ? 0.0f : 0.5f;
            kc.temperature = 4.0f;
            const ModelWeights w = train(student, train_ds, kc, &teacher, &teacher_w);
            out.stages.lap("train_student");
            json row;
            row["accuracy"] = evaluate(student, w, test_ds);
            row["detectors"] =
                detectors_json(dissect(student, w, test_ds, concepts, config.dissect));
            out.stages.lap("dissect");
            out.variants[kVariantKeys[v]] = row;
        }
    });

    json per_seed = json::array();
    std::vector<json> variant_rows[2];
    for (std::size_t si = 0; si < outs.size(); ++si) {
        SeedOut& out = outs[si];
        for (int v = 0; v < 2; ++v) variant_rows[v].push_back(out.variants[kVariantKeys[v]]);
        per_seed.push_back({{"seed", config.seeds[si]}, {"variants", out.variants}});
        timer.absorb(out.stages);
    }

    json averages = json::object();
    for (int v = 0; v < 2; ++v) averages[kVariantKeys[v]] = average_rows(variant_rows[v]);
    json flags;
    flags["detectors_at_plus_logit_ge_at_only"] =
        averages["at_plus_logit"]["detectors"]["total"].get<double>() >=
        averages["at_only"]["detectors"]["total"].get<double>();
    return finish_report("logit_plus_at", config, std::move(per_seed), std::move(averages),
                         std::move(flags), timer);
}

json strip_timings(json report) {
    report.erase("timings");
    return report;
}

}  // namespace kdi
