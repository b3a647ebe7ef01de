#include <CLI11.hpp>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <json.hpp>
#include <string>
#include <vector>

#include "kdi/attribution.hpp"
#include "kdi/dataset_io.hpp"
#include "kdi/diffroar.hpp"
#include "kdi/dissect.hpp"
#include "kdi/errors.hpp"
#include "kdi/experiments.hpp"
#include "kdi/metrics.hpp"
#include "kdi/report.hpp"
#include "kdi/synth.hpp"
#include "kdi/train.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

kdi::RunConfig load_run_config(const std::string& path) {
    if (path.empty()) return kdi::RunConfig{};
    return kdi::RunConfig::from_json(json::parse(kdi::read_text_file(path)));
}

void write_json(const std::string& path, const json& j) {
    kdi::write_text_file(path, j.dump(2) + "\n");
}

std::string join_path(const std::string& dir, const std::string& name) {
    return (fs::path(dir) / name).string();
}

void ensure_dir(const std::string& dir) {
    if (!dir.empty() && dir != ".") fs::create_directories(dir);
}

json dissection_report_json(const kdi::DissectionReport& r,
                            const std::vector<std::string>& concept_names) {
    json units = json::array();
    for (const kdi::UnitRecord& u : r.units)
        units.push_back({{"best_concept", u.best_concept},
                         {"best_iou", u.best_iou},
                         {"detected", u.detected},
                         {"ious", u.ious},
                         {"threshold", u.threshold},
                         {"unit", u.unit}});
    return {{"concepts", concept_names},
            {"config", kdi::dissect_config_to_json(r.config)},
            {"counts",
             {{"feature", r.feature_detectors},
              {"object", r.object_detectors},
              {"total", r.total_detectors},
              {"unique", r.unique_detectors}}},
            {"units", units}};
}

json binary_series_json(const kdi::BinaryScoreSeries& s) {
    auto pooled = [](const kdi::BinaryMetrics& m) {
        return json{{"auprc", m.auprc},   {"auroc", m.auroc},
                    {"best_f1", m.best_f1}, {"best_precision", m.best_precision},
                    {"best_recall", m.best_recall}, {"defined", m.defined}};
    };
    return {{"avg", {{"auprc", s.avg_auprc}, {"auroc", s.avg_auroc}, {"best_f1", s.avg_best_f1}}},
            {"max", {{"auprc", s.max_auprc}, {"auroc", s.max_auroc}, {"best_f1", s.max_best_f1}}},
            {"per_sample_defined", s.per_sample_defined},
            {"pooled", pooled(s.pooled)},
            {"samples_defined", s.samples_defined},
            {"samples_used", s.samples_used}};
}

const char* flag_text(const json& f) {
    if (f.is_null()) return "n/a";
    return f.get<bool>() ? "pass" : "fail";
}

int run(int argc, char** argv) {
    CLI::App app{"distillation-interpretability toolkit"};
    app.require_subcommand(1);
    app.set_version_flag("--version", kdi::kToolVersion);

    std::string config_path, out = ".", data_path, model_path, teacher_path;
    std::string train_data, test_data, method = "saliency", what = "image", attributor = "saliency";
    std::vector<std::string> model_paths;
    std::string mode;
    int index = 0, steps = 64, target = -1, n_samples = 1000, n_seeds = -1, channels = 0;
    std::uint64_t seed = 0;
    std::vector<double> fractions, q_list, thr_list;
    int epochs = 0, batch_size = 0;
    double lr = 0.0, wd = -1.0, alpha = -1.0, temperature = 0.0, at_weight = -1.0;
    double quantile = 0.0, iou_threshold = 0.0;
    std::string tap;

    auto add_config = [&](CLI::App* sub) {
        sub->add_option("--config", config_path, "run-config JSON file")
            ->check(CLI::ExistingFile);
    };

    CLI::App* gen = app.add_subcommand("gen", "generate the synthetic dataset");
    add_config(gen);
    gen->add_option("--out", out, "output directory");
    auto* g_ntrain = gen->add_option("--n-train", "train sample count");
    auto* g_ntest = gen->add_option("--n-test", "test sample count");
    auto* g_size = gen->add_option("--image-size", "square image size");
    auto* g_seed = gen->add_option("--seed", "dataset seed");

    CLI::App* tr = app.add_subcommand("train", "train a model");
    add_config(tr);
    tr->add_option("--data", data_path, "training dataset (.kds)")
        ->required()
        ->check(CLI::ExistingFile);
    tr->add_option("--out", out, "output model file (.kdm)");
    tr->add_option("--mode", mode, "scratch|kd|ls|self_kd|kd_at")
        ->check(CLI::IsMember({"scratch", "kd", "ls", "self_kd", "kd_at"}));
    tr->add_option("--teacher", teacher_path, "teacher model (.kdm)")->check(CLI::ExistingFile);
    auto* t_seed = tr->add_option("--seed", seed, "training seed");
    auto* t_epochs = tr->add_option("--epochs", epochs, "epoch count");
    auto* t_batch = tr->add_option("--batch-size", batch_size, "batch size");
    auto* t_lr = tr->add_option("--learning-rate", lr, "learning rate");
    auto* t_wd = tr->add_option("--weight-decay", wd, "decoupled weight decay");
    auto* t_alpha = tr->add_option("--alpha", alpha, "loss mixture weight");
    auto* t_temp = tr->add_option("--temperature", temperature, "distillation temperature");
    auto* t_atw = tr->add_option("--at-weight", at_weight, "attention-transfer weight");
    auto* t_ch = tr->add_option("--channels", channels, "student base channel width");

    CLI::App* dis = app.add_subcommand("dissect", "network dissection of a model");
    add_config(dis);
    dis->add_option("--model", model_path, "model file (.kdm)")->required()->check(CLI::ExistingFile);
    dis->add_option("--data", data_path, "dataset (.kds)")->required()->check(CLI::ExistingFile);
    dis->add_option("--out", out, "output report JSON");
    auto* d_tap = dis->add_option("--tap", tap, "activation tap name");
    auto* d_q = dis->add_option("--quantile", quantile, "per-unit threshold quantile");
    auto* d_thr = dis->add_option("--iou-threshold", iou_threshold, "detector IoU cutoff");

    CLI::App* att = app.add_subcommand("attribute", "attribution map for one sample");
    add_config(att);
    att->add_option("--model", model_path)->required()->check(CLI::ExistingFile);
    att->add_option("--data", data_path)->required()->check(CLI::ExistingFile);
    att->add_option("--index", index, "sample index")->required();
    att->add_option("--method", method, "saliency|loss_grad|ig")
        ->check(CLI::IsMember({"saliency", "loss_grad", "ig"}));
    att->add_option("--target", target, "target class (-1: predicted)");
    att->add_option("--steps", steps, "integrated-gradients steps");
    att->add_option("--out", out, "output PGM path");
    std::string out_json;
    att->add_option("--out-json", out_json, "also dump raw map values as JSON");

    CLI::App* fb = app.add_subcommand("fiveband", "five-band and binary metrics on saliency");
    add_config(fb);
    fb->add_option("--model", model_path)->required()->check(CLI::ExistingFile);
    fb->add_option("--data", data_path)->required()->check(CLI::ExistingFile);
    fb->add_option("--out", out, "output report JSON");

    CLI::App* ent = app.add_subcommand("entropy", "entropy protocol over several models");
    add_config(ent);
    ent->add_option("--models", model_paths, "model files (.kdm)")
        ->required()
        ->expected(2, 16)
        ->check(CLI::ExistingFile);
    ent->add_option("--data", data_path)->required()->check(CLI::ExistingFile);
    ent->add_option("--n-samples", n_samples, "qualifying-sample budget");
    ent->add_option("--out", out, "output report JSON");

    CLI::App* dr = app.add_subcommand("diffroar", "remove-and-retrain attribution benchmark");
    add_config(dr);
    dr->add_option("--model", model_path, "base model (.kdm)")->required()->check(CLI::ExistingFile);
    dr->add_option("--train-data", train_data)->required()->check(CLI::ExistingFile);
    dr->add_option("--test-data", test_data)->required()->check(CLI::ExistingFile);
    dr->add_option("--fractions", fractions, "masking fractions")->delimiter(',');
    dr->add_option("--n-seeds", n_seeds, "retrain seeds per fraction");
    dr->add_option("--attributor", attributor, "saliency|random")
        ->check(CLI::IsMember({"saliency", "random"}));
    auto* dr_epochs = dr->add_option("--epochs", epochs, "retrain epoch count");
    auto* dr_seed = dr->add_option("--seed", seed, "base retrain seed");
    dr->add_option("--out", out, "output report JSON");

    CLI::App* sw = app.add_subcommand("sweep", "detector counts over a (quantile, IoU) grid");
    add_config(sw);
    sw->add_option("--model", model_path)->required()->check(CLI::ExistingFile);
    sw->add_option("--data", data_path)->required()->check(CLI::ExistingFile);
    sw->add_option("--q-list", q_list, "quantile grid")->delimiter(',');
    sw->add_option("--thr-list", thr_list, "IoU threshold grid")->delimiter(',');
    sw->add_option("--tap", tap, "activation tap name");
    sw->add_option("--out", out, "output report JSON");

    CLI::App* x1 = app.add_subcommand("exp-trend", "scratch/KD/LS comparison pipeline");
    add_config(x1);
    auto* x1_out = x1->add_option("--out", out, "output directory");

    CLI::App* x2 = app.add_subcommand("exp-ls-teacher", "LS-teacher temperature pipeline");
    add_config(x2);
    auto* x2_out = x2->add_option("--out", out, "output directory");

    CLI::App* x3 = app.add_subcommand("exp-logit-plus-at", "AT vs AT+logit pipeline");
    add_config(x3);
    auto* x3_out = x3->add_option("--out", out, "output directory");

    CLI::App* rnd = app.add_subcommand("render", "render a dataset sample to PGM");
    rnd->add_option("--data", data_path)->required()->check(CLI::ExistingFile);
    rnd->add_option("--index", index, "sample index")->required();
    rnd->add_option("--what", what, "image|mask")->check(CLI::IsMember({"image", "mask"}));
    rnd->add_option("--out", out, "output PGM path")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);  // prints help text or the usage error
        return code == 0 ? 0 : 1;
    }

    if (gen->parsed()) {
        kdi::RunConfig rc = load_run_config(config_path);
        if (g_ntrain->count()) rc.dataset.n_train = g_ntrain->as<int>();
        if (g_ntest->count()) rc.dataset.n_test = g_ntest->as<int>();
        if (g_size->count()) rc.dataset.image_size = g_size->as<int>();
        if (g_seed->count()) rc.dataset.seed = g_seed->as<std::uint64_t>();
        ensure_dir(out);
        const kdi::Dataset train_split = kdi::generate_split(rc.dataset, kdi::Split::TRAIN);
        const kdi::Dataset test_split = kdi::generate_split(rc.dataset, kdi::Split::TEST);
        kdi::write_dataset(join_path(out, "train.kds"), train_split);
        kdi::write_dataset(join_path(out, "test.kds"), test_split);
        kdi::write_catalog(join_path(out, "catalog.json"), kdi::ClassCatalog::standard());
        std::cout << "gen: " << rc.dataset.n_train << " train + " << rc.dataset.n_test
                  << " test samples (" << rc.dataset.image_size << "x" << rc.dataset.image_size
                  << ", seed " << rc.dataset.seed << ") -> " << out << "\n";
        return 0;
    }

    if (tr->parsed()) {
        kdi::RunConfig rc = load_run_config(config_path);
        kdi::TrainConfig tc = rc.train;
        if (!mode.empty()) tc.mode = kdi::mode_from_name(mode);
        if (t_seed->count()) tc.seed = seed;
        if (t_epochs->count()) tc.epochs = epochs;
        if (t_batch->count()) tc.batch_size = batch_size;
        if (t_lr->count()) tc.learning_rate = static_cast<float>(lr);
        if (t_wd->count()) tc.weight_decay = static_cast<float>(wd);
        if (t_alpha->count()) tc.alpha = static_cast<float>(alpha);
        if (t_temp->count()) tc.temperature = static_cast<float>(temperature);
        if (t_atw->count()) tc.at_weight = static_cast<float>(at_weight);
        const int width = t_ch->count() ? channels : rc.arch.student_channels;
        const kdi::ArchSpec arch = kdi::ArchSpec::three_block(width);
        const kdi::Dataset data = kdi::read_dataset(data_path);

        kdi::ModelFile teacher;
        const bool has_teacher = !teacher_path.empty();
        if (has_teacher) teacher = kdi::load_model(teacher_path);
        const kdi::ModelWeights w =
            kdi::train(arch, data, tc, has_teacher ? &teacher.arch : nullptr,
                       has_teacher ? &teacher.weights : nullptr);
        if (out == ".") out = "model.kdm";
        json meta = {{"train", kdi::train_config_to_json(tc)}};
        kdi::save_model(out, arch, w, meta);
        std::printf("train: mode=%s seed=%llu epochs=%d final_loss=%.4f train_acc=%.4f -> %s\n",
                    kdi::mode_name(tc.mode), static_cast<unsigned long long>(tc.seed), tc.epochs,
                    double(w.history.back().loss), double(w.history.back().accuracy),
                    out.c_str());
        return 0;
    }

    if (dis->parsed()) {
        kdi::RunConfig rc = load_run_config(config_path);
        kdi::DissectionConfig dc = rc.dissect;
        if (d_tap->count()) dc.tap = tap;
        if (d_q->count()) dc.quantile = quantile;
        if (d_thr->count()) dc.iou_threshold = iou_threshold;
        const kdi::ModelFile m = kdi::load_model(model_path);
        const kdi::Dataset data = kdi::read_dataset(data_path);
        const kdi::ConceptMaskSet concepts =
            kdi::ConceptMaskSet::build(data, kdi::ClassCatalog::standard());
        const kdi::DissectionReport r = kdi::dissect(m.arch, m.weights, data, concepts, dc);
        if (out == ".") out = "dissect.json";
        write_json(out, dissection_report_json(r, concepts.names));
        std::printf("dissect: %d detectors (%d object, %d feature, %d unique) over %zu units -> %s\n",
                    r.total_detectors, r.object_detectors, r.feature_detectors,
                    r.unique_detectors, r.units.size(), out.c_str());
        return 0;
    }

    if (att->parsed()) {
        const kdi::ModelFile m = kdi::load_model(model_path);
        const kdi::Dataset data = kdi::read_dataset(data_path);
        if (index < 0 || index >= static_cast<int>(data.samples.size()))
            throw kdi::ParamError("attribute: sample index out of range");
        const kdi::Sample& s = data.samples[static_cast<std::size_t>(index)];
        kdi::AttributionMap map;
        if (method == "saliency") {
            map = kdi::saliency(m.arch, m.weights, s.image, target);
        } else if (method == "loss_grad") {
            map = kdi::loss_gradient(m.arch, m.weights, s.image, s.label);
        } else {
            const kdi::Tensor baseline = kdi::Tensor::zeros(s.image.shape);
            map = kdi::integrated_gradients(m.arch, m.weights, s.image, baseline, steps, target);
        }
        if (out == ".") out = "attribution.pgm";
        kdi::write_pgm(out, kdi::normalize01(map.values));
        if (!out_json.empty())
            write_json(out_json, json{{"kind", method},
                                      {"target_class", map.target_class},
                                      {"values", map.values.data},
                                      {"shape", map.values.shape}});
        std::printf("attribute: %s sample %d target %d -> %s\n", method.c_str(), index,
                    map.target_class, out.c_str());
        return 0;
    }

    if (fb->parsed()) {
        const kdi::ModelFile m = kdi::load_model(model_path);
        const kdi::Dataset data = kdi::read_dataset(data_path);
        kdi::TernaryConfusion conf;
        std::vector<kdi::Tensor> maps;
        std::vector<const std::vector<std::uint8_t>*> masks;
        std::vector<int> labels;
        maps.reserve(data.samples.size());
        for (const kdi::Sample& s : data.samples) {
            const kdi::AttributionMap map = kdi::saliency(m.arch, m.weights, s.image);
            maps.push_back(kdi::normalize01(map.values));
            conf.add(maps.back(), s.mask);
            masks.push_back(&s.mask);
            labels.push_back(s.label);
        }
        const kdi::FiveBandScore score = conf.scores();
        json report = {
            {"binary",
             {{"bg_vs_object", binary_series_json(kdi::binary_metrics(
                                   maps, masks, labels, kdi::Grouping::BG_VS_OBJECT))},
              {"nonfeature_vs_feature",
               binary_series_json(kdi::binary_metrics(maps, masks, labels,
                                                      kdi::Grouping::NONFEATURE_VS_FEATURE))}}},
            {"five_band",
             {{"fpr", score.fpr},
              {"pixel_acc", score.pixel_acc},
              {"precision", score.precision},
              {"recall", score.recall}}}};
        if (out == ".") out = "fiveband.json";
        write_json(out, report);
        std::printf("fiveband: pixel_acc=%.4f recall=%.4f precision=%.4f fpr=%.4f -> %s\n",
                    score.pixel_acc, score.recall, score.precision, score.fpr, out.c_str());
        return 0;
    }

    if (ent->parsed()) {
        std::vector<kdi::ModelFile> files;
        files.reserve(model_paths.size());
        for (const std::string& p : model_paths) files.push_back(kdi::load_model(p));
        std::vector<std::pair<const kdi::ArchSpec*, const kdi::ModelWeights*>> models;
        for (const kdi::ModelFile& f : files) models.push_back({&f.arch, &f.weights});
        const kdi::Dataset data = kdi::read_dataset(data_path);
        const kdi::EntropyProtocolResult r =
            kdi::entropy_protocol(models, data, kdi::ClassCatalog::standard(), n_samples);
        json rows = json::array();
        for (std::size_t i = 0; i < r.models.size(); ++i)
            rows.push_back({{"category", r.models[i].category},
                            {"entire", r.models[i].entire},
                            {"model", model_paths[i]}});
        if (out == ".") out = "entropy.json";
        write_json(out, json{{"models", rows}, {"n_used", r.n_used}, {"ok", r.ok}});
        std::printf("entropy: n_used=%d over %zu models -> %s\n", r.n_used, r.models.size(),
                    out.c_str());
        return 0;
    }

    if (dr->parsed()) {
        kdi::RunConfig rc = load_run_config(config_path);
        kdi::DiffRoarConfig dc;
        dc.retrain = rc.train;
        dc.retrain.mode = kdi::TrainMode::SCRATCH;
        if (dr_epochs->count()) dc.retrain.epochs = epochs;
        if (dr_seed->count()) dc.retrain.seed = seed;
        if (!fractions.empty()) dc.fractions = fractions;
        else dc.fractions = rc.diffroar.fractions;
        dc.n_seeds = n_seeds > 0 ? n_seeds : rc.diffroar.n_seeds;
        const kdi::ModelFile m = kdi::load_model(model_path);
        const kdi::Dataset train_split = kdi::read_dataset(train_data);
        const kdi::Dataset test_split = kdi::read_dataset(test_data);
        const kdi::Attributor a = attributor == "random" ? kdi::Attributor::RANDOM_RANKING
                                                         : kdi::Attributor::SALIENCY;
        const kdi::DiffRoarResult r =
            kdi::diffroar(m.arch, m.weights, train_split, test_split, a, dc);
        json rows = json::array();
        for (const kdi::DiffRoarRow& row : r.rows)
            rows.push_back({{"acc_bottom_removed", row.acc_bottom_removed},
                            {"acc_top_removed", row.acc_top_removed},
                            {"fraction", row.fraction},
                            {"score", row.score},
                            {"seed", row.seed}});
        if (out == ".") out = "diffroar.json";
        write_json(out, json{{"aggregate", r.aggregate},
                             {"attributor", attributor},
                             {"fill", "per-pixel train-split mean"},
                             {"n_seeds", dc.n_seeds},
                             {"rows", rows}});
        std::printf("diffroar: aggregate=%.3f over %zu rows -> %s\n", r.aggregate, r.rows.size(),
                    out.c_str());
        return 0;
    }

    if (sw->parsed()) {
        kdi::RunConfig rc = load_run_config(config_path);
        if (q_list.empty())
            for (int i = 1; i <= 10; ++i) q_list.push_back(i / 1000.0);
        if (thr_list.empty())
            for (int i = 1; i <= 5; ++i) thr_list.push_back(i / 100.0);
        const std::string tap_name = tap.empty() ? rc.dissect.tap : tap;
        const kdi::ModelFile m = kdi::load_model(model_path);
        const kdi::Dataset data = kdi::read_dataset(data_path);
        const kdi::ConceptMaskSet concepts =
            kdi::ConceptMaskSet::build(data, kdi::ClassCatalog::standard());
        const std::vector<kdi::SweepPoint> points =
            kdi::sweep(m.arch, m.weights, data, concepts, tap_name, q_list, thr_list);
        json rows = json::array();
        for (const kdi::SweepPoint& p : points)
            rows.push_back({{"iou_threshold", p.iou_threshold},
                            {"quantile", p.quantile},
                            {"total_detectors", p.total_detectors},
                            {"unique_detectors", p.unique_detectors}});
        if (out == ".") out = "sweep.json";
        write_json(out, json{{"points", rows}, {"tap", tap_name}});
        std::printf("sweep: %zu grid points -> %s\n", points.size(), out.c_str());
        return 0;
    }

    if (x1->parsed() || x2->parsed() || x3->parsed()) {
        kdi::RunConfig rc = load_run_config(config_path);
        CLI::Option* out_opt = x1->parsed() ? x1_out : x2->parsed() ? x2_out : x3_out;
        if (out_opt->count()) rc.output_dir = out;
        ensure_dir(rc.output_dir);
        const char* name = x1->parsed() ? "trend" : x2->parsed() ? "ls_teacher" : "logit_plus_at";
        const json report = x1->parsed()   ? kdi::exp_trend(rc)
                            : x2->parsed() ? kdi::exp_ls_teacher(rc)
                                           : kdi::exp_logit_plus_at(rc);
        const std::string path = join_path(rc.output_dir, std::string("report_") + name + ".json");
        write_json(path, report);
        std::string flags;
        for (const auto& kv : report.at("flags").items())
            flags += " " + kv.key() + "=" + flag_text(kv.value());
        std::cout << "exp-" << (x1->parsed() ? "trend" : x2->parsed() ? "ls-teacher" : "logit-plus-at")
                  << ": seeds=" << rc.seeds.size() << " flags[" << flags.substr(1) << "] -> "
                  << path << "\n";
        return 0;
    }

    if (rnd->parsed()) {
        const kdi::Dataset data = kdi::read_dataset(data_path);
        if (index < 0 || index >= static_cast<int>(data.samples.size()))
            throw kdi::ParamError("render: sample index out of range");
        const kdi::Sample& s = data.samples[static_cast<std::size_t>(index)];
        kdi::Tensor img;
        if (what == "image") {
            img = s.image;
        } else {
            img = kdi::Tensor::zeros({data.height, data.width});
            for (std::int64_t i = 0; i < img.numel(); ++i)
                img[i] = static_cast<float>(s.mask[static_cast<std::size_t>(i)]);
        }
        kdi::write_pgm(out, img);
        std::printf("render: sample %d %s (label %d) -> %s\n", index, what.c_str(), s.label,
                    out.c_str());
        return 0;
    }

    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    try {
        return run(argc, argv);
    } catch (const kdi::ParamError& e) {
        std::cerr << "validation error: " << e.what() << "\n";
        return 1;
    } catch (const kdi::ShapeError& e) {
        std::cerr << "validation error: " << e.what() << "\n";
        return 1;
    } catch (const kdi::FormatError& e) {
        std::cerr << "format error: " << e.what() << "\n";
        return 1;
    } catch (const kdi::ContractError& e) {
        std::cerr << "validation error: " << e.what() << "\n";
        return 1;
    } catch (const nlohmann::json::exception& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "runtime error: " << e.what() << "\n";
        return 2;
    }
}
