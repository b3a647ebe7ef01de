#pragma once

#include <cstdint>
#include <json.hpp>
#include <string>
#include <vector>

#include "kdi/arch.hpp"
#include "kdi/synth.hpp"

namespace kdi {

enum class TrainMode : std::uint8_t { SCRATCH, KD, LS, SELF_KD, KD_PLUS_AT };
enum class Optimizer : std::uint8_t { ADAM, SGD };

const char* mode_name(TrainMode m);
TrainMode mode_from_name(const std::string& name);

struct TrainConfig {
    int epochs = 4;
    int batch_size = 4;
    float learning_rate = 0.001f;
    float weight_decay = 5e-5f;
    Optimizer optimizer = Optimizer::ADAM;
    float alpha = 0.5f;
    float temperature = 4.0f;
    TrainMode mode = TrainMode::SCRATCH;
    float at_weight = 100.0f;
    std::uint64_t seed = 1;

    void validate() const;
};

Tensor onehot(const std::vector<int>& labels, int classes);

// Eq-style losses as pure value functions. loss_kd combines
//   (1-alpha) * CE(softmax(z_s), onehot(y))
//   + alpha * T^2 * (-mean_n sum_k softmax(z_s/T)_nk * log softmax(z_t/T)_nk)
// (the soft term's log falls on the teacher distribution; that is the reading
// under which the two-class worked value 0.7651 and the alpha=0 / alpha=1
// reductions all hold).
float loss_kd(const Tensor& z_s, const Tensor& z_t, const std::vector<int>& labels, float alpha,
              float temperature);
// (1-alpha) * CE(softmax(z), onehot(y)) + alpha * CE(softmax(z), uniform).
float loss_ls(const Tensor& z, const std::vector<int>& labels, float alpha);
// weight * mean over pairs and samples of || Q_s - Q_t ||_2^2 with
// Q = l2-normalized flattened sum of squared channels.
float loss_at(const std::vector<Tensor>& student_acts, const std::vector<Tensor>& teacher_acts,
              float weight);

// Deterministic training: per-epoch shuffle from Rng64{seed ^ epoch} (epoch
// 0-based, Fisher-Yates), Adam (b1 0.9, b2 0.999, eps 1e-8) or SGD, decoupled
// weight decay (w -= lr*wd*w alongside the step). Teacher logits/taps are
// computed once per batch without gradients. History records the
// sample-weighted mean batch loss and the running train accuracy per epoch.
ModelWeights train(const ArchSpec& arch, const Dataset& data, const TrainConfig& config,
                   const ArchSpec* teacher_arch = nullptr,
                   const ModelWeights* teacher_weights = nullptr);

// Fraction of samples whose argmax logit equals the label; argmax ties break
// toward the lower class id.
double evaluate(const ArchSpec& arch, const ModelWeights& weights, const Dataset& data);

// KDM1 little-endian layout: magic "KDM1" | version u32=1 | header_len u32 |
// header JSON (arch, taps, classes, param/history counts, free-form meta) |
// f32 params in declaration order | f32 (loss, accuracy) per epoch.
void save_model(const std::string& path, const ArchSpec& arch, const ModelWeights& weights,
                const nlohmann::json& meta = nlohmann::json::object());

struct ModelFile {
    ArchSpec arch;
    ModelWeights weights;
    nlohmann::json meta;
};
ModelFile load_model(const std::string& path);

}  // namespace kdi
