#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <cstring>
#include <optional>

#include "kdi/attribution.hpp"
#include "kdi/dataset_io.hpp"
#include "kdi/dissect.hpp"
#include "kdi/errors.hpp"
#include "kdi/experiments.hpp"
#include "kdi/metrics.hpp"
#include "kdi/synth.hpp"
#include "kdi/train.hpp"

namespace py = pybind11;

namespace {

using FloatArray = py::array_t<float, py::array::c_style | py::array::forcecast>;
using IntArray = py::array_t<int, py::array::c_style | py::array::forcecast>;
using ByteArray = py::array_t<std::uint8_t, py::array::c_style | py::array::forcecast>;

struct Model {
    kdi::ArchSpec arch;
    kdi::ModelWeights weights;
};

kdi::Tensor tensor_from_2d(const FloatArray& a) {
    if (a.ndim() == 2)
        return kdi::Tensor({1, int(a.shape(0)), int(a.shape(1))},
                           {a.data(), a.data() + a.size()});
    if (a.ndim() == 3 && a.shape(0) == 1)
        return kdi::Tensor({1, int(a.shape(1)), int(a.shape(2))},
                           {a.data(), a.data() + a.size()});
    throw kdi::ShapeError("expected an [H,W] or [1,H,W] array");
}

py::array map_to_numpy(const kdi::Tensor& t) {
    if (t.rank() == 2)
        return py::array_t<float>({t.dim(0), t.dim(1)}, t.data.data());
    if (t.rank() == 3 && t.dim(0) == 1)
        return py::array_t<float>({t.dim(1), t.dim(2)}, t.data.data());
    throw kdi::ShapeError("map is not [H,W]-shaped");
}

kdi::Dataset dataset_from_numpy(const FloatArray& images, const IntArray& labels,
                                const std::optional<ByteArray>& masks) {
    if (images.ndim() != 3) throw kdi::ShapeError("images must be [N,H,W]");
    if (labels.ndim() != 1 || labels.shape(0) != images.shape(0))
        throw kdi::ShapeError("labels must be [N]");
    const int n = int(images.shape(0)), h = int(images.shape(1)), w = int(images.shape(2));
    if (masks && (masks->ndim() != 3 || masks->shape(0) != n || masks->shape(1) != h ||
                  masks->shape(2) != w))
        throw kdi::ShapeError("masks must match images [N,H,W]");
    kdi::Dataset d;
    d.height = h;
    d.width = w;
    d.samples.resize(std::size_t(n));
    const std::size_t hw = std::size_t(h) * w;
    for (int i = 0; i < n; ++i) {
        kdi::Sample& s = d.samples[std::size_t(i)];
        s.image = kdi::Tensor({1, h, w}, {images.data() + std::size_t(i) * hw,
                                          images.data() + std::size_t(i + 1) * hw});
        s.label = labels.data()[i];
        if (masks)
            s.mask.assign(masks->data() + std::size_t(i) * hw,
                          masks->data() + std::size_t(i + 1) * hw);
        else
            s.mask.assign(hw, 0);
    }
    return d;
}

py::dict split_to_numpy(const kdi::Dataset& d) {
    const int n = int(d.samples.size()), h = d.height, w = d.width;
    py::array_t<float> images({n, h, w});
    py::array_t<int> labels(n);
    py::array_t<std::uint8_t> masks({n, h, w});
    const std::size_t hw = std::size_t(h) * w;
    for (int i = 0; i < n; ++i) {
        const kdi::Sample& s = d.samples[std::size_t(i)];
        std::memcpy(images.mutable_data() + std::size_t(i) * hw, s.image.data.data(),
                    hw * sizeof(float));
        labels.mutable_data()[i] = s.label;
        std::memcpy(masks.mutable_data() + std::size_t(i) * hw, s.mask.data(), hw);
    }
    py::dict out;
    out["images"] = images;
    out["labels"] = labels;
    out["masks"] = masks;
    return out;
}

std::vector<int> labels_vector(const IntArray& labels) {
    return std::vector<int>(labels.data(), labels.data() + labels.shape(0));
}

kdi::Tensor logits_from_numpy(const FloatArray& z) {
    if (z.ndim() != 2) throw kdi::ShapeError("logits must be [N,K]");
    return kdi::Tensor({int(z.shape(0)), int(z.shape(1))}, {z.data(), z.data() + z.size()});
}

}  // namespace

PYBIND11_MODULE(_kdi, m) {
    m.doc() = "distillation-interpretability core bindings";
    m.attr("__version__") = kdi::kToolVersion;

    py::register_exception<kdi::ParamError>(m, "ParamError", PyExc_ValueError);
    py::register_exception<kdi::ShapeError>(m, "ShapeError", PyExc_ValueError);
    py::register_exception<kdi::ContractError>(m, "ContractError", PyExc_RuntimeError);
    py::register_exception<kdi::FormatError>(m, "FormatError", PyExc_ValueError);

    py::class_<Model>(m, "Model")
        .def_property_readonly("history",
                               [](const Model& mo) {
                                   py::list rows;
                                   for (const auto& e : mo.weights.history)
                                       rows.append(py::make_tuple(e.loss, e.accuracy));
                                   return rows;
                               })
        .def_property_readonly("n_params",
                               [](const Model& mo) {
                                   std::int64_t n = 0;
                                   for (const auto& p : mo.weights.params) n += p.numel();
                                   return n;
                               })
        .def("logits",
             [](const Model& mo, const FloatArray& images, const IntArray& labels) {
                 const kdi::Dataset d = dataset_from_numpy(images, labels, std::nullopt);
                 std::vector<kdi::Tensor> imgs;
                 for (const auto& s : d.samples) imgs.push_back(s.image);
                 const kdi::Tensor z = kdi::dataset_logits(mo.arch, mo.weights, imgs);
                 return py::array_t<float>({z.dim(0), z.dim(1)}, z.data.data());
             })
        .def("evaluate",
             [](const Model& mo, const FloatArray& images, const IntArray& labels) {
                 return kdi::evaluate(mo.arch, mo.weights,
                                      dataset_from_numpy(images, labels, std::nullopt));
             })
        .def("save", [](const Model& mo, const std::string& path) {
            kdi::save_model(path, mo.arch, mo.weights);
        });

    m.def("load_model", [](const std::string& path) {
        const kdi::ModelFile f = kdi::load_model(path);
        return Model{f.arch, f.weights};
    });

    m.def(
        "make_dataset",
        [](int n_train, int n_test, int image_size, std::uint64_t seed) {
            kdi::SynthConfig c;
            c.n_train = n_train;
            c.n_test = n_test;
            c.image_size = image_size;
            c.seed = seed;
            py::dict out;
            out["train"] = split_to_numpy(kdi::generate_split(c, kdi::Split::TRAIN));
            out["test"] = split_to_numpy(kdi::generate_split(c, kdi::Split::TEST));
            return out;
        },
        py::arg("n_train") = 6400, py::arg("n_test") = 1600, py::arg("image_size") = 64,
        py::arg("seed") = 7);

    m.def(
        "train_model",
        [](const FloatArray& images, const IntArray& labels, const std::string& mode,
           const Model* teacher, int channels, int epochs, int batch_size, float learning_rate,
           float weight_decay, float alpha, float temperature, float at_weight,
           std::uint64_t seed, const std::string& optimizer) {
            kdi::TrainConfig c;
            c.mode = kdi::mode_from_name(mode);
            c.epochs = epochs;
            c.batch_size = batch_size;
            c.learning_rate = learning_rate;
            c.weight_decay = weight_decay;
            c.alpha = alpha;
            c.temperature = temperature;
            c.at_weight = at_weight;
            c.seed = seed;
            c.optimizer = kdi::optimizer_from_name(optimizer);
            const kdi::Dataset d = dataset_from_numpy(images, labels, std::nullopt);
            const kdi::ArchSpec arch = kdi::ArchSpec::three_block(channels);
            kdi::ModelWeights w =
                kdi::train(arch, d, c, teacher ? &teacher->arch : nullptr,
                           teacher ? &teacher->weights : nullptr);
            return Model{arch, std::move(w)};
        },
        py::arg("images"), py::arg("labels"), py::arg("mode") = "scratch",
        py::arg("teacher") = nullptr, py::arg("channels") = 8, py::arg("epochs") = 4,
        py::arg("batch_size") = 4, py::arg("learning_rate") = 1e-3f,
        py::arg("weight_decay") = 5e-5f, py::arg("alpha") = 0.5f, py::arg("temperature") = 4.0f,
        py::arg("at_weight") = 100.0f, py::arg("seed") = 1, py::arg("optimizer") = "adam");

    m.def(
        "dissect",
        [](const Model& mo, const FloatArray& images, const IntArray& labels,
           const ByteArray& masks, const std::string& tap, double quantile,
           double iou_threshold) {
            const kdi::Dataset d = dataset_from_numpy(images, labels, masks);
            const kdi::ConceptMaskSet concepts =
                kdi::ConceptMaskSet::build(d, kdi::ClassCatalog::standard());
            kdi::DissectionConfig c;
            c.tap = tap;
            c.quantile = quantile;
            c.iou_threshold = iou_threshold;
            const kdi::DissectionReport r = kdi::dissect(mo.arch, mo.weights, d, concepts, c);
            py::list units;
            for (const kdi::UnitRecord& u : r.units) {
                py::dict row;
                row["unit"] = u.unit;
                row["threshold"] = u.threshold;
                row["best_concept"] = u.best_concept;
                row["best_iou"] = u.best_iou;
                row["detected"] = u.detected;
                units.append(row);
            }
            py::dict out;
            out["total"] = r.total_detectors;
            out["object"] = r.object_detectors;
            out["feature"] = r.feature_detectors;
            out["unique"] = r.unique_detectors;
            out["units"] = units;
            return out;
        },
        py::arg("model"), py::arg("images"), py::arg("labels"), py::arg("masks"),
        py::arg("tap") = "layer3", py::arg("quantile") = 0.005,
        py::arg("iou_threshold") = 0.05);

    m.def(
        "saliency",
        [](const Model& mo, const FloatArray& image, int target) {
            return map_to_numpy(
                kdi::saliency(mo.arch, mo.weights, tensor_from_2d(image), target).values);
        },
        py::arg("model"), py::arg("image"), py::arg("target") = -1);

    m.def(
        "loss_gradient",
        [](const Model& mo, const FloatArray& image, int label) {
            return map_to_numpy(
                kdi::loss_gradient(mo.arch, mo.weights, tensor_from_2d(image), label).values);
        },
        py::arg("model"), py::arg("image"), py::arg("label"));

    m.def(
        "integrated_gradients",
        [](const Model& mo, const FloatArray& image, int steps, int target) {
            const kdi::Tensor x = tensor_from_2d(image);
            const kdi::Tensor baseline = kdi::Tensor::zeros(x.shape);
            return map_to_numpy(
                kdi::integrated_gradients(mo.arch, mo.weights, x, baseline, steps, target)
                    .values);
        },
        py::arg("model"), py::arg("image"), py::arg("steps") = 64, py::arg("target") = -1);

    m.def("normalize01", [](const FloatArray& map) {
        return map_to_numpy(kdi::normalize01(tensor_from_2d(map)));
    });

    m.def("five_band", [](const FloatArray& attr01, const ByteArray& mask) {
        if (mask.ndim() != 2) throw kdi::ShapeError("mask must be [H,W]");
        const kdi::Tensor a = tensor_from_2d(attr01);
        const std::vector<std::uint8_t> mv(mask.data(), mask.data() + mask.size());
        const kdi::FiveBandScore s = kdi::five_band_score(a, mv);
        py::dict out;
        out["pixel_acc"] = s.pixel_acc;
        out["recall"] = s.recall;
        out["precision"] = s.precision;
        out["fpr"] = s.fpr;
        return out;
    });

    m.def(
        "loss_kd",
        [](const FloatArray& z_s, const FloatArray& z_t, const IntArray& labels, float alpha,
           float temperature) {
            return kdi::loss_kd(logits_from_numpy(z_s), logits_from_numpy(z_t),
                                labels_vector(labels), alpha, temperature);
        },
        py::arg("student_logits"), py::arg("teacher_logits"), py::arg("labels"),
        py::arg("alpha") = 0.5f, py::arg("temperature") = 4.0f);

    m.def(
        "loss_ls",
        [](const FloatArray& z, const IntArray& labels, float alpha) {
            return kdi::loss_ls(logits_from_numpy(z), labels_vector(labels), alpha);
        },
        py::arg("logits"), py::arg("labels"), py::arg("alpha") = 0.1f);

    m.def("unit_threshold", [](std::vector<float> values, double q) {
        return kdi::unit_threshold(std::move(values), q);
    });

    m.def("write_dataset", [](const std::string& path, const FloatArray& images,
                              const IntArray& labels, const ByteArray& masks) {
        kdi::write_dataset(path, dataset_from_numpy(images, labels, masks));
    });

    m.def("read_dataset", [](const std::string& path) {
        return split_to_numpy(kdi::read_dataset(path));
    });
}
