#include "kdi/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include "kdi/errors.hpp"
#include "kdi/ops.hpp"
#include "kdi/rng.hpp"

namespace kdi {

const char* mode_name(TrainMode m) {
    switch (m) {
        case TrainMode::SCRATCH: return "scratch";
        case TrainMode::KD: return "kd";
        case TrainMode::LS: return "ls";
        case TrainMode::SELF_KD: return "self_kd";
        case TrainMode::KD_PLUS_AT: return "kd_at";
    }
    return "?";
}

TrainMode mode_from_name(const std::string& name) {
    if (name == "scratch") return TrainMode::SCRATCH;
    if (name == "kd") return TrainMode::KD;
    if (name == "ls") return TrainMode::LS;
    if (name == "self_kd") return TrainMode::SELF_KD;
    if (name == "kd_at") return TrainMode::KD_PLUS_AT;
    throw ParamError("unknown training mode '" + name + "'");
}

void TrainConfig::validate() const {
    if (epochs < 1) throw ParamError("train: epochs must be >= 1");
    if (batch_size < 1) throw ParamError("train: batch_size must be >= 1");
    if (!(learning_rate > 0.0f)) throw ParamError("train: learning_rate must be > 0");
    if (weight_decay < 0.0f) throw ParamError("train: weight_decay must be >= 0");
    if (alpha < 0.0f || alpha > 1.0f)
        throw ParamError("train: alpha must lie in [0,1], got " + std::to_string(alpha));
    if (!(temperature > 0.0f))
        throw ParamError("train: temperature must be > 0, got " + std::to_string(temperature));
    if (at_weight < 0.0f) throw ParamError("train: at_weight must be >= 0");
}

Tensor onehot(const std::vector<int>& labels, int classes) {
    Tensor t = Tensor::zeros({int(labels.size()), classes});
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] < 0 || labels[i] >= classes)
            throw ParamError("onehot: label " + std::to_string(labels[i]) + " outside 0.." +
                             std::to_string(classes - 1));
        t.data[i * std::size_t(classes) + std::size_t(labels[i])] = 1.0f;
    }
    return t;
}

float loss_kd(const Tensor& z_s, const Tensor& z_t, const std::vector<int>& labels, float alpha,
              float temperature) {
    if (alpha < 0.0f || alpha > 1.0f) throw ParamError("loss_kd: alpha outside [0,1]");
    expect_same_shape(z_s, z_t, "loss_kd logits");
    const Tensor hard = cross_entropy_soft(softmax_t(z_s, 1.0f), onehot(labels, z_s.dim(1)));
    const Tensor soft = cross_entropy_soft(softmax_t(z_t, temperature),
                                           softmax_t(z_s, temperature));
    return (1.0f - alpha) * hard.data[0] + alpha * temperature * temperature * soft.data[0];
}

float loss_ls(const Tensor& z, const std::vector<int>& labels, float alpha) {
    if (alpha < 0.0f || alpha > 1.0f) throw ParamError("loss_ls: alpha outside [0,1]");
    const int K = z.dim(1);
    const Tensor probs = softmax_t(z, 1.0f);
    const Tensor hard = cross_entropy_soft(probs, onehot(labels, K));
    const Tensor uniform = Tensor::full({z.dim(0), K}, 1.0f / float(K));
    const Tensor smooth = cross_entropy_soft(probs, uniform);
    return (1.0f - alpha) * hard.data[0] + alpha * smooth.data[0];
}

float loss_at(const std::vector<Tensor>& student_acts, const std::vector<Tensor>& teacher_acts,
              float weight) {
    if (student_acts.size() != teacher_acts.size() || student_acts.empty())
        throw ParamError("loss_at: activation lists must be non-empty and paired");
    if (weight < 0.0f) throw ParamError("loss_at: weight must be >= 0");
    double total = 0.0;
    for (std::size_t p = 0; p < student_acts.size(); ++p) {
        const Tensor& s = student_acts[p];
        const Tensor& t = teacher_acts[p];
        if (s.dim(0) != t.dim(0) || s.dim(2) != t.dim(2) || s.dim(3) != t.dim(3))
            throw ShapeError("loss_at: pair " + std::to_string(p) + " spatial shapes " +
                             shape_str(s.shape) + " vs " + shape_str(t.shape));
        const Tensor qs = l2_normalize_rows(channel_sumsq(s));
        const Tensor qt = l2_normalize_rows(channel_sumsq(t));
        const Tensor d = sub(qs, qt);
        total += double(sum_all(mul(d, d)).data[0]) / s.dim(0);
    }
    return weight * float(total / double(student_acts.size()));
}

namespace {

struct AdamState {
    std::vector<Tensor> m, v;
    std::int64_t t = 0;
};

void optimizer_step(const TrainConfig& cfg, std::vector<Tensor>& params,
                    const std::vector<Tensor>& grads, AdamState& state) {
    const double lr = cfg.learning_rate, wd = cfg.weight_decay;
    if (cfg.optimizer == Optimizer::SGD) {
        for (std::size_t p = 0; p < params.size(); ++p)
            for (std::size_t i = 0; i < params[p].data.size(); ++i) {
                const double w = params[p].data[i];
                params[p].data[i] = float(w - lr * double(grads[p].data[i]) - lr * wd * w);
            }
        return;
    }
    constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
    state.t += 1;
    const double c1 = 1.0 - std::pow(b1, double(state.t));
    const double c2 = 1.0 - std::pow(b2, double(state.t));
    for (std::size_t p = 0; p < params.size(); ++p) {
        Tensor& w = params[p];
        Tensor& m = state.m[p];
        Tensor& v = state.v[p];
        for (std::size_t i = 0; i < w.data.size(); ++i) {
            const double g = grads[p].data[i];
            const double mi = b1 * m.data[i] + (1.0 - b1) * g;
            const double vi = b2 * v.data[i] + (1.0 - b2) * g * g;
            m.data[i] = float(mi);
            v.data[i] = float(vi);
            const double step = lr * (mi / c1) / (std::sqrt(vi / c2) + eps);
            w.data[i] = float(double(w.data[i]) - step - lr * wd * double(w.data[i]));
        }
    }
}

std::vector<int> epoch_permutation(std::uint64_t seed, int epoch, int n) {
    std::vector<int> perm(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) perm[std::size_t(i)] = i;
    Rng64 rng{seed ^ std::uint64_t(epoch)};
    for (int i = n - 1; i > 0; --i) {
        const int j = int(uniform_below(rng, std::uint64_t(i) + 1));
        std::swap(perm[std::size_t(i)], perm[std::size_t(j)]);
    }
    return perm;
}

int argmax_row(const float* z, int k) {
    int best = 0;
    for (int j = 1; j < k; ++j)
        if (z[j] > z[best]) best = j;
    return best;
}

}  // namespace

ModelWeights train(const ArchSpec& arch, const Dataset& data, const TrainConfig& config,
                   const ArchSpec* teacher_arch, const ModelWeights* teacher_weights) {
    config.validate();
    arch.validate();
    if (data.samples.empty()) throw ParamError("train: empty dataset");
    const bool needs_teacher = config.mode == TrainMode::KD || config.mode == TrainMode::SELF_KD ||
                               config.mode == TrainMode::KD_PLUS_AT;
    if (needs_teacher && (!teacher_arch || !teacher_weights))
        throw ContractError(std::string("train: mode ") + mode_name(config.mode) +
                            " requires a teacher");
    if (config.mode == TrainMode::SELF_KD && !teacher_arch->same_as(arch))
        throw ContractError("train: self-KD requires teacher arch equal to student arch");
    if (config.mode == TrainMode::KD_PLUS_AT &&
        (!arch.has_tap("layer3") || !teacher_arch->has_tap("layer3")))
        throw ContractError("train: AT pairing needs the 'layer3' tap on both networks");
    if (needs_teacher) teacher_arch->validate();

    const int S = int(data.samples.size());
    const int K = arch.num_classes();
    const int C = data.samples[0].image.dim(0);
    const int H = data.height, W = data.width;

    ModelWeights model = init_weights(arch, config.seed);
    AdamState adam;
    if (config.optimizer == Optimizer::ADAM) {
        for (const Tensor& p : model.params) {
            adam.m.push_back(Tensor::zeros(p.shape));
            adam.v.push_back(Tensor::zeros(p.shape));
        }
    }

    const Tensor uniform = Tensor::full({config.batch_size, K}, 1.0f / float(K));
    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        const std::vector<int> perm = epoch_permutation(config.seed, epoch, S);
        double loss_sum = 0.0;
        std::int64_t correct = 0;
        for (int start = 0; start < S; start += config.batch_size) {
            const int n = std::min(config.batch_size, S - start);
            Tensor xb = Tensor::zeros({n, C, H, W});
            std::vector<int> labels(static_cast<std::size_t>(n));
            for (int i = 0; i < n; ++i) {
                const Sample& s = data.samples[std::size_t(perm[std::size_t(start + i)])];
                std::copy(s.image.data.begin(), s.image.data.end(),
                          xb.data.begin() + std::size_t(i) * s.image.numel());
                labels[std::size_t(i)] = s.label;
            }

            Tensor teacher_logits;
            std::map<std::string, Tensor> teacher_taps;
            if (needs_teacher)
                teacher_logits =
                    forward_eval(*teacher_arch, *teacher_weights, xb,
                                 config.mode == TrainMode::KD_PLUS_AT ? &teacher_taps : nullptr);

            Tape tape;
            const std::vector<NodeId> params = params_on_tape(tape, model);
            const NodeId x = tape.leaf(xb, false);
            const TapeForward fwd = forward_on_tape(tape, arch, params, x);

            const NodeId hard = tape.cross_entropy_soft(tape.softmax_t(fwd.logits, 1.0f),
                                                        tape.leaf(onehot(labels, K), false));
            NodeId loss = hard;
            if (config.mode == TrainMode::LS) {
                const Tensor u = n == config.batch_size ? uniform
                                                        : Tensor::full({n, K}, 1.0f / float(K));
                const NodeId smooth =
                    tape.cross_entropy_soft(tape.softmax_t(fwd.logits, 1.0f), tape.leaf(u, false));
                loss = tape.add(tape.scale(hard, 1.0f - config.alpha),
                                tape.scale(smooth, config.alpha));
            } else if (needs_teacher) {
                const float T = config.temperature;
                const NodeId soft = tape.cross_entropy_soft(
                    tape.leaf(softmax_t(teacher_logits, T), false),
                    tape.softmax_t(fwd.logits, T));
                loss = tape.add(tape.scale(hard, 1.0f - config.alpha),
                                tape.scale(soft, config.alpha * T * T));
                if (config.mode == TrainMode::KD_PLUS_AT) {
                    const NodeId qs =
                        tape.l2_normalize_rows(tape.channel_sumsq(fwd.taps.at("layer3")));
                    const Tensor qt = l2_normalize_rows(channel_sumsq(teacher_taps.at("layer3")));
                    const NodeId d = tape.sub(qs, tape.leaf(qt, false));
                    const NodeId at = tape.scale(tape.sum_all(tape.mul(d, d)),
                                                 config.at_weight / float(n));
                    loss = tape.add(loss, at);
                }
            }

            tape.backward(loss);
            std::vector<Tensor> grads;
            grads.reserve(params.size());
            for (const NodeId p : params) grads.push_back(tape.grad(p));
            optimizer_step(config, model.params, grads, adam);

            loss_sum += double(tape.value(loss).data[0]) * n;
            const Tensor& z = tape.value(fwd.logits);
            for (int i = 0; i < n; ++i)
                if (argmax_row(z.data.data() + std::size_t(i) * K, K) == labels[std::size_t(i)])
                    ++correct;
        }
        model.history.push_back(
            {float(loss_sum / S), float(double(correct) / S)});
    }
    return model;
}

double evaluate(const ArchSpec& arch, const ModelWeights& weights, const Dataset& data) {
    if (data.samples.empty()) throw ParamError("evaluate: empty dataset");
    std::vector<Tensor> images;
    images.reserve(data.samples.size());
    for (const Sample& s : data.samples) images.push_back(s.image);
    const Tensor z = dataset_logits(arch, weights, images);
    const int K = arch.num_classes();
    std::int64_t correct = 0;
    for (std::size_t i = 0; i < data.samples.size(); ++i)
        if (argmax_row(z.data.data() + i * std::size_t(K), K) == data.samples[i].label) ++correct;
    return double(correct) / double(data.samples.size());
}

namespace {

const char* kind_name(LayerKind k) {
    switch (k) {
        case LayerKind::Conv: return "conv";
        case LayerKind::Relu: return "relu";
        case LayerKind::MaxPool: return "maxpool";
        case LayerKind::GlobalAvgPool: return "gap";
        case LayerKind::Linear: return "linear";
    }
    return "?";
}

LayerKind kind_from_name(const std::string& s) {
    if (s == "conv") return LayerKind::Conv;
    if (s == "relu") return LayerKind::Relu;
    if (s == "maxpool") return LayerKind::MaxPool;
    if (s == "gap") return LayerKind::GlobalAvgPool;
    if (s == "linear") return LayerKind::Linear;
    throw FormatError("model: unknown layer kind '" + s + "'", 0);
}

nlohmann::json arch_to_json(const ArchSpec& arch) {
    nlohmann::json layers = nlohmann::json::array();
    for (const LayerSpec& l : arch.layers) {
        nlohmann::json j{{"kind", kind_name(l.kind)}};
        if (l.kind == LayerKind::Conv) {
            j["in_ch"] = l.in_ch;
            j["out_ch"] = l.out_ch;
            j["ksize"] = l.ksize;
            j["stride"] = l.stride;
            j["padding"] = l.padding;
        } else if (l.kind == LayerKind::Linear) {
            j["in_features"] = l.in_features;
            j["out_features"] = l.out_features;
        }
        if (!l.tap.empty()) j["tap"] = l.tap;
        layers.push_back(j);
    }
    return {{"input_channels", arch.input_channels}, {"layers", layers}};
}

ArchSpec arch_from_json(const nlohmann::json& j) {
    ArchSpec arch;
    arch.input_channels = j.at("input_channels").get<int>();
    for (const auto& lj : j.at("layers")) {
        LayerSpec l{};
        l.kind = kind_from_name(lj.at("kind").get<std::string>());
        l.stride = 1;
        if (l.kind == LayerKind::Conv) {
            l.in_ch = lj.at("in_ch").get<int>();
            l.out_ch = lj.at("out_ch").get<int>();
            l.ksize = lj.at("ksize").get<int>();
            l.stride = lj.at("stride").get<int>();
            l.padding = lj.at("padding").get<int>();
        } else if (l.kind == LayerKind::Linear) {
            l.in_features = lj.at("in_features").get<int>();
            l.out_features = lj.at("out_features").get<int>();
        }
        if (lj.contains("tap")) l.tap = lj.at("tap").get<std::string>();
        arch.layers.push_back(l);
    }
    return arch;
}

void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(char((v >> (8 * i)) & 0xFF));
}

void put_f32(std::string& out, float v) {
    std::uint32_t bits;
    std::memcpy(&bits, &v, 4);
    put_u32(out, bits);
}

}  // namespace

void save_model(const std::string& path, const ArchSpec& arch, const ModelWeights& weights,
                const nlohmann::json& meta) {
    arch.validate();
    std::size_t param_count = 0;
    for (const Tensor& p : weights.params) param_count += p.data.size();

    nlohmann::json header;
    header["arch"] = arch_to_json(arch);
    nlohmann::json taps = nlohmann::json::array();
    for (const LayerSpec& l : arch.layers)
        if (!l.tap.empty()) taps.push_back(l.tap);
    header["taps"] = taps;
    header["classes"] = arch.num_classes();
    header["param_count"] = param_count;
    header["history_epochs"] = weights.history.size();
    header["meta"] = meta;
    const std::string hs = header.dump();

    std::string out = "KDM1";
    put_u32(out, 1);
    put_u32(out, std::uint32_t(hs.size()));
    out += hs;
    for (const Tensor& p : weights.params)
        for (float v : p.data) put_f32(out, v);
    for (const ModelWeights::EpochStat& e : weights.history) {
        put_f32(out, e.loss);
        put_f32(out, e.accuracy);
    }
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("save_model: cannot open " + path);
    f.write(out.data(), std::streamsize(out.size()));
    if (!f) throw std::runtime_error("save_model: short write to " + path);
}

ModelFile load_model(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("load_model: cannot open " + path);
    std::string buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    if (buf.size() < 12) throw FormatError("model: header truncated", buf.size());
    if (buf.compare(0, 4, "KDM1") != 0)
        throw FormatError("model: bad magic '" + buf.substr(0, 4) + "'", 0);
    auto u32_at = [&](std::size_t off) {
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= std::uint32_t(std::uint8_t(buf[off + i])) << (8 * i);
        return v;
    };
    const std::uint32_t version = u32_at(4);
    if (version != 1) throw FormatError("model: unsupported version " + std::to_string(version), 4);
    const std::uint32_t header_len = u32_at(8);
    if (12 + std::size_t(header_len) > buf.size())
        throw FormatError("model: header length " + std::to_string(header_len) +
                              " exceeds file size",
                          8);
    nlohmann::json header;
    try {
        header = nlohmann::json::parse(buf.substr(12, header_len));
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("model: header JSON: ") + e.what(), 12);
    }

    ModelFile m;
    m.arch = arch_from_json(header.at("arch"));
    m.arch.validate();
    m.meta = header.value("meta", nlohmann::json::object());
    const std::size_t declared_params = header.at("param_count").get<std::size_t>();
    const std::size_t epochs = header.at("history_epochs").get<std::size_t>();

    std::size_t expected_params = 0;
    std::vector<std::vector<int>> shapes;
    for (const LayerSpec& l : m.arch.layers) {
        if (l.kind == LayerKind::Conv) {
            shapes.push_back({l.out_ch, l.in_ch, l.ksize, l.ksize});
            shapes.push_back({l.out_ch});
        } else if (l.kind == LayerKind::Linear) {
            shapes.push_back({l.out_features, l.in_features});
            shapes.push_back({l.out_features});
        }
    }
    for (const auto& s : shapes) expected_params += std::size_t(shape_numel(s));
    if (declared_params != expected_params)
        throw FormatError("model: header declares " + std::to_string(declared_params) +
                              " parameters but the architecture requires " +
                              std::to_string(expected_params),
                          12);

    const std::size_t payload = 12 + header_len;
    const std::size_t expected_bytes = payload + 4 * (expected_params + 2 * epochs);
    if (buf.size() != expected_bytes)
        throw FormatError("model: file size " + std::to_string(buf.size()) + " differs from " +
                              std::to_string(expected_bytes) + " implied by the header",
                          payload);

    std::size_t pos = payload;
    auto f32_at = [&]() {
        const std::uint32_t bits = u32_at(pos);
        pos += 4;
        float v;
        std::memcpy(&v, &bits, 4);
        return v;
    };
    for (const auto& s : shapes) {
        Tensor t = Tensor::zeros(s);
        for (auto& v : t.data) v = f32_at();
        m.weights.params.push_back(std::move(t));
    }
    for (std::size_t e = 0; e < epochs; ++e) {
        ModelWeights::EpochStat st;
        st.loss = f32_at();
        st.accuracy = f32_at();
        m.weights.history.push_back(st);
    }
    return m;
}

}  // namespace kdi
