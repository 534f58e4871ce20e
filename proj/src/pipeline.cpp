#include "bconv/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>
#include <unordered_map>

#include "bconv/costmodel.hpp"
#include "bconv/rng.hpp"

namespace bconv {

Model build_model(const ModelSpec& spec, std::uint64_t seed, const BasisApplication* basis) {
    if (spec.arch == "tiny_cnn") {
        return build_tiny_cnn(spec.num_classes, spec.image_size, seed, basis);
    }
    if (spec.arch == "micro_resnet18") {
        return build_micro_resnet18(spec.width_divisor, spec.num_classes, spec.image_size, seed,
                                    basis);
    }
    throw ConfigError("unknown architecture: " + spec.arch);
}

std::int64_t SkipConfig::skip_epochs(std::int64_t total_epochs) const {
    if (skip < 0.0) throw ConfigError("skip must be non-negative");
    if (skip < 1.0) {
        return static_cast<std::int64_t>(std::floor(skip * static_cast<double>(total_epochs)));
    }
    const std::int64_t n = static_cast<std::int64_t>(skip);
    if (n >= total_epochs) {
        throw ConfigError("absolute skip (" + std::to_string(n) +
                          ") must stay below the epoch count");
    }
    return n;
}

TimerKind timer_kind_from_string(const std::string& name) {
    if (name == "modeled") return TimerKind::Modeled;
    if (name == "wall") return TimerKind::Wall;
    throw ConfigError("unknown timer kind: " + name);
}

ExtractionKind extraction_from_string(const std::string& name) {
    if (name == "svd") return ExtractionKind::SVD;
    if (name == "qr") return ExtractionKind::QR;
    throw ConfigError("unknown extraction kind: " + name);
}

std::string MetricsLog::to_csv() const {
    std::ostringstream os;
    os.precision(17);
    os << "epoch,lr,train_loss,valid_acc,epoch_seconds,trainable_params\n";
    for (const MetricsRow& r : rows) {
        os << r.epoch << ',' << r.lr << ',' << r.train_loss << ',' << r.valid_acc << ','
           << r.epoch_seconds << ',' << r.trainable_params << '\n';
    }
    return os.str();
}

double MetricsLog::total_seconds() const {
    double total = 0.0;
    for (const MetricsRow& r : rows) total += r.epoch_seconds;
    return total;
}

std::int64_t model_epoch_ops(const Model& model, std::int64_t n_train, std::int64_t n_valid) {
    std::int64_t fwd = 0, bwd = 0;
    for (int idx : model.conv_nodes) {
        const BasisConvLayer& conv = model.nodes[idx].conv;
        fwd += count_forward(conv.spec, conv.mode, conv.r, conv.alpha, conv.beta);
        bwd += count_backward(conv.spec, conv.mode, conv.r, conv.alpha, conv.beta);
    }
    return (fwd + bwd) * n_train + fwd * n_valid;
}

namespace {

constexpr double kModeledOpsPerSecond = 1e9;

Tensor gather_batch(const Tensor& images, const std::vector<std::size_t>& order,
                    std::size_t start, std::size_t count) {
    const std::size_t chw = images.extent(1) * images.extent(2) * images.extent(3);
    Tensor batch({count, images.extent(1), images.extent(2), images.extent(3)});
    for (std::size_t i = 0; i < count; ++i) {
        std::copy(images.data() + order[start + i] * chw,
                  images.data() + (order[start + i] + 1) * chw, batch.data() + i * chw);
    }
    return batch;
}

}  // namespace

RunResult run_training(const TrainOptions& options, const Dataset& train_data,
                       const Dataset& valid_data) {
    const TrainConfig& cfg = options.train;
    RunResult result;
    if (options.initial_model) {
        result.model = std::move(*options.initial_model);
    } else if (options.basis && options.transition_epoch != 0) {
        result.model = build_model(options.model_spec, cfg.seed, options.basis);
    } else {
        // No basis phase (or a zero-length one): plain model from the start.
        result.model = build_model(options.model_spec, cfg.seed, nullptr);
    }
    Model& model = result.model;

    // Validation inputs are preprocessed once (deterministic path).
    Tensor valid_images = augment_valid(valid_data.images, options.augment);

    std::unordered_map<std::string, Tensor> velocity;
    auto lazy_velocity = [&](const std::string& key, const Tensor& like) -> Tensor& {
        auto it = velocity.find(key);
        if (it == velocity.end()) {
            it = velocity.emplace(key, Tensor::zeros(like.shape())).first;
        }
        return it->second;
    };

    auto log_row = [&](std::int64_t epoch, double train_loss, double seconds) {
        MetricsRow row;
        row.epoch = epoch;
        row.lr = cosine_lr(epoch, cfg);
        row.train_loss = train_loss;
        row.valid_acc = evaluate_accuracy(model, valid_images, valid_data.labels, cfg.batch_size);
        row.epoch_seconds = seconds;
        row.trainable_params = model.trainable_param_count();
        result.log.rows.push_back(row);
    };

    log_row(options.start_epoch, std::nan(""), 0.0);

    const std::size_t n_train = train_data.size();
    std::vector<std::size_t> order(n_train);

    for (std::int64_t epoch = options.start_epoch; epoch < cfg.epochs; ++epoch) {
        const double lr = cosine_lr(epoch, cfg);
        const auto wall_start = std::chrono::steady_clock::now();

        for (std::size_t i = 0; i < n_train; ++i) order[i] = i;
        Rng shuffle_rng(derive_seed(cfg.seed, "shuffle/epoch" + std::to_string(epoch)));
        for (std::size_t i = n_train; i > 1; --i) {
            std::swap(order[i - 1], order[shuffle_rng.bounded(i)]);
        }

        double loss_sum = 0.0;
        bool diverged = false;
        auto slots = param_slots(model);
        for (std::size_t start = 0; start < n_train && !diverged;
             start += static_cast<std::size_t>(cfg.batch_size)) {
            const std::size_t count =
                std::min(static_cast<std::size_t>(cfg.batch_size), n_train - start);
            Tensor batch = gather_batch(train_data.images, order, start, count);
            if (options.augment.policy != AugmentPolicy::None) {
                batch = augment(batch, options.augment,
                                derive_seed(cfg.seed, "augment/epoch" + std::to_string(epoch) +
                                                          "/batch" + std::to_string(start)));
            }
            std::vector<int> labels(count);
            for (std::size_t i = 0; i < count; ++i) labels[i] = train_data.labels[order[start + i]];

            ForwardTrace trace;
            Tensor logits = model_forward(model, batch, true, &trace);
            CrossEntropyResult ce = cross_entropy(logits, labels);
            if (!std::isfinite(ce.loss)) {
                diverged = true;
                break;
            }
            loss_sum += ce.loss * static_cast<double>(count);
            std::vector<Tensor> grads = model_backward(model, batch, trace, ce.grad_logits);
            for (std::size_t s = 0; s < slots.size(); ++s) {
                sgd_step(*slots[s].value, grads[s], lazy_velocity(slots[s].key, *slots[s].value),
                         lr, cfg.momentum, cfg.weight_decay);
            }
        }

        if (diverged) {
            result.diverged = true;
            break;
        }

        // Architecture transition at the end of the skip phase: compose full
        // weights, keep everything else, reset momentum for rebuilt layers.
        if (options.transition_epoch > 0 && epoch + 1 == options.transition_epoch) {
            result.transition_pre_acc =
                evaluate_accuracy(model, valid_images, valid_data.labels, cfg.batch_size);
            const std::vector<std::string> rebuilt = compose_basis_layers_in_place(model);
            for (const std::string& name : rebuilt) {
                for (auto it = velocity.begin(); it != velocity.end();) {
                    if (it->first.rfind(name + "/", 0) == 0) {
                        it = velocity.erase(it);
                    } else {
                        ++it;
                    }
                }
            }
            result.transition_post_acc =
                evaluate_accuracy(model, valid_images, valid_data.labels, cfg.batch_size);
            result.transition_epoch = epoch + 1;
        }

        double seconds;
        if (options.timer == TimerKind::Wall) {
            seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - wall_start)
                          .count();
        } else {
            seconds = static_cast<double>(model_epoch_ops(model,
                                                          static_cast<std::int64_t>(n_train),
                                                          static_cast<std::int64_t>(
                                                              valid_data.size()))) /
                      kModeledOpsPerSecond;
        }
        log_row(epoch + 1, loss_sum / static_cast<double>(n_train), seconds);
    }
    return result;
}

RunResult train_baseline(const ModelSpec& spec, const TrainConfig& cfg, const Dataset& train_data,
                         const Dataset& valid_data, TimerKind timer, const AugmentConfig& augment) {
    TrainOptions options;
    options.model_spec = spec;
    options.train = cfg;
    options.timer = timer;
    options.augment = augment;
    return run_training(options, train_data, valid_data);
}

RunResult skip_train(const ModelSpec& spec, const TrainConfig& cfg, const SkipConfig& skip,
                     const Dataset& train_data, const Dataset& valid_data, TimerKind timer,
                     const AugmentConfig& augment) {
    const std::int64_t skip_epochs = skip.skip_epochs(cfg.epochs);
    BasisApplication app;
    app.ordinals = skip.basis_layers;
    app.mode = skip.mode;
    app.r_or_alpha = skip.r_or_alpha;
    app.beta = skip.beta;

    TrainOptions options;
    options.model_spec = spec;
    options.train = cfg;
    options.timer = timer;
    options.augment = augment;
    if (skip_epochs > 0 && !skip.basis_layers.empty()) {
        options.basis = &app;
        options.transition_epoch = skip_epochs;
    }
    return run_training(options, train_data, valid_data);
}

SensitivityRecord profile_baseline(const ModelSpec& spec, const TrainConfig& cfg,
                                   const Dataset& train_data, const Dataset& valid_data,
                                   TimerKind timer, const AugmentConfig& augment) {
    RunResult run = train_baseline(spec, cfg, train_data, valid_data, timer, augment);
    SensitivityRecord rec;
    rec.layer_ordinal = 0;
    rec.final_accuracy = run.log.final_valid_acc();
    rec.acc_drop = 0.0;
    rec.train_time = run.log.total_seconds();
    rec.model_size = run.model.trainable_param_count();
    rec.diverged = run.diverged;
    return rec;
}

SensitivityRecord profile_layer(const ModelSpec& spec, int layer_ordinal, const TrainConfig& cfg,
                                const BasisApplication& basis_template,
                                const SensitivityRecord& baseline, const Dataset& train_data,
                                const Dataset& valid_data, TimerKind timer,
                                const AugmentConfig& augment) {
    BasisApplication app = basis_template;
    app.ordinals = {layer_ordinal};

    TrainOptions options;
    options.model_spec = spec;
    options.train = cfg;
    options.timer = timer;
    options.augment = augment;
    options.basis = &app;
    options.transition_epoch = -1;  // basis convolutions stay for the whole run

    RunResult run = run_training(options, train_data, valid_data);
    SensitivityRecord rec;
    rec.layer_ordinal = layer_ordinal;
    rec.model_size = run.model.trainable_param_count();
    rec.train_time = run.log.total_seconds();
    if (run.diverged) {
        rec.diverged = true;
        rec.final_accuracy = 0.0;
        rec.acc_drop = 1.0;
        if (rec.train_time <= 0.0) rec.train_time = baseline.train_time;
    } else {
        rec.final_accuracy = run.log.final_valid_acc();
        rec.acc_drop = baseline.final_accuracy - rec.final_accuracy;
    }
    return rec;
}

namespace {

// Fresh full-width skeleton whose conv weights are the rank-r reconstruction
// C*B of the trained model's weights; every other parameter (and batchnorm
// statistics) carries over unchanged.
Model rebuild_from_extraction(const Model& trained, const ModelSpec& spec, ExtractionKind kind,
                              double r_fraction, std::int64_t* extracted_params) {
    Model fresh = build_model(spec, trained.build_seed, nullptr);
    std::int64_t params = 0;
    for (std::size_t i = 0; i < fresh.nodes.size(); ++i) {
        const Node& src = trained.nodes[i];
        Node& dst = fresh.nodes[i];
        switch (src.kind) {
            case OpKind::Conv: {
                const Tensor full = compose_full_weight(src.conv);
                const std::int64_t c_out = src.conv.spec.c_out;
                std::int64_t r = round_half_up(r_fraction * static_cast<double>(c_out));
                r = std::clamp<std::int64_t>(r, 1, c_out);
                ExtractResult ex = kind == ExtractionKind::SVD ? extract_basis_svd(full, r)
                                                               : extract_basis_qr(full, r);
                // The resumed model is full-width; its weight is the rank-r
                // reconstruction.
                const std::size_t patch = full.size() / static_cast<std::size_t>(c_out);
                const Tensor bmat = ex.basis_weight.reshaped({static_cast<std::size_t>(r), patch});
                dst.conv.basis_weight =
                    matmul(ex.coeffs, bmat).reshaped(full.shape());
                dst.conv.bias = src.conv.bias;
                params += params_decomposed(src.conv.spec, r) +
                          static_cast<std::int64_t>(src.conv.bias.size());
                break;
            }
            case OpKind::BatchNorm:
                dst.bn = src.bn;
                params += static_cast<std::int64_t>(src.bn.gamma.size() + src.bn.beta.size());
                break;
            case OpKind::Dense:
                dst.dense_w = src.dense_w;
                dst.dense_b = src.dense_b;
                params += static_cast<std::int64_t>(src.dense_w.size() + src.dense_b.size());
                break;
            default: break;
        }
    }
    if (extracted_params) *extracted_params = params;
    return fresh;
}

}  // namespace

SanityReport sanity_check(const ModelSpec& spec, const TrainConfig& cfg, ExtractionKind kind,
                          const std::vector<double>& r_fractions, const Dataset& train_data,
                          const Dataset& valid_data, double resume_fraction, TimerKind timer,
                          const AugmentConfig& augment, const Model* pretrained) {
    if (!(resume_fraction >= 0.0 && resume_fraction < 1.0)) {
        throw ConfigError("resume fraction must lie in [0, 1)");
    }
    SanityReport report;

    Model trained;
    if (pretrained) {
        trained = *pretrained;
        Tensor valid_images = augment_valid(valid_data.images, augment);
        report.baseline_final_acc =
            evaluate_accuracy(trained, valid_images, valid_data.labels, cfg.batch_size);
    } else {
        RunResult base = train_baseline(spec, cfg, train_data, valid_data, timer, augment);
        if (base.diverged) throw DivergedError("baseline training diverged during sanity check");
        report.baseline_final_acc = base.log.final_valid_acc();
        trained = std::move(base.model);
    }

    const std::int64_t resume_epoch =
        static_cast<std::int64_t>(std::floor(resume_fraction * static_cast<double>(cfg.epochs)));

    auto resume_with = [&](Model&& model) {
        TrainOptions options;
        options.model_spec = spec;
        options.train = cfg;
        options.timer = timer;
        options.augment = augment;
        options.start_epoch = resume_epoch;
        options.initial_model = &model;
        return run_training(options, train_data, valid_data);
    };

    for (double frac : r_fractions) {
        if (!(frac > 0.0 && frac <= 1.0)) {
            throw ConfigError("extraction fraction must lie in (0, 1]");
        }
        SanityOutcome outcome;
        outcome.r_fraction = frac;
        Model rebuilt = rebuild_from_extraction(trained, spec, kind, frac,
                                                &outcome.extracted_params);
        RunResult run = resume_with(std::move(rebuilt));
        outcome.pre_resume_acc = run.log.rows.front().valid_acc;
        outcome.final_acc = run.log.final_valid_acc();
        outcome.log = std::move(run.log);
        report.outcomes.push_back(std::move(outcome));
    }

    {
        Model random_model =
            build_model(spec, derive_seed(cfg.seed, "sanity/random-control"), nullptr);
        report.random_final_acc = resume_with(std::move(random_model)).log.final_valid_acc();
    }
    {
        Model copy = trained;
        report.copy_paste_final_acc = resume_with(std::move(copy)).log.final_valid_acc();
    }
    return report;
}

LightHeavyResult run_light_heavy(const ModelSpec& spec, const TrainConfig& cfg,
                                 const SkipConfig& skip_template, const Dataset& train_data,
                                 const Dataset& valid_data, TimerKind timer,
                                 const AugmentConfig& augment) {
    SkipConfig light_cfg = skip_template;
    light_cfg.basis_layers = light_group();
    SkipConfig heavy_cfg = skip_template;
    heavy_cfg.basis_layers = heavy_group();
    LightHeavyResult result;
    result.light = skip_train(spec, cfg, light_cfg, train_data, valid_data, timer, augment);
    result.heavy = skip_train(spec, cfg, heavy_cfg, train_data, valid_data, timer, augment);
    return result;
}

std::vector<RunResult> run_selected_combinations(const ModelSpec& spec, const TrainConfig& cfg,
                                                 const std::vector<std::set<int>>& combos,
                                                 const SkipConfig& skip_template,
                                                 const Dataset& train_data,
                                                 const Dataset& valid_data, TimerKind timer,
                                                 const AugmentConfig& augment) {
    std::vector<RunResult> runs;
    runs.reserve(combos.size());
    for (const std::set<int>& combo : combos) {
        SkipConfig sc = skip_template;
        sc.basis_layers = combo;
        runs.push_back(skip_train(spec, cfg, sc, train_data, valid_data, timer, augment));
    }
    return runs;
}

std::string combinations_summary_csv(const std::vector<std::set<int>>& combos,
                                     const std::vector<RunResult>& runs,
                                     const RunResult& baseline) {
    std::ostringstream os;
    os.precision(17);
    os << "combo,final_acc,baseline_acc,total_seconds,baseline_seconds,transition_epoch,"
          "skip_phase_params,baseline_params\n";
    const std::int64_t base_params = baseline.log.rows.front().trainable_params;
    for (std::size_t i = 0; i < runs.size(); ++i) {
        os << '"' << subset_to_string(subset_to_mask(combos[i])) << '"' << ','
           << runs[i].log.final_valid_acc() << ',' << baseline.log.final_valid_acc() << ','
           << runs[i].log.total_seconds() << ',' << baseline.log.total_seconds() << ','
           << runs[i].transition_epoch << ',' << runs[i].log.rows.front().trainable_params << ','
           << base_params << '\n';
    }
    return os.str();
}

// ---- checkpoint ---------------------------------------------------------------

namespace {

constexpr char kMagic[8] = {'B', 'C', 'O', 'N', 'V', 'C', 'K', 'P'};
constexpr std::uint32_t kVersion = 1;

class Writer {
public:
    explicit Writer(std::vector<unsigned char>& out) : out_(out) {}
    void bytes(const void* p, std::size_t n) {
        const unsigned char* c = static_cast<const unsigned char*>(p);
        out_.insert(out_.end(), c, c + n);
    }
    void u8(std::uint8_t v) { bytes(&v, 1); }
    void u32(std::uint32_t v) { bytes(&v, 4); }
    void u64(std::uint64_t v) { bytes(&v, 8); }
    void i64(std::int64_t v) { bytes(&v, 8); }
    void f64(double v) { bytes(&v, 8); }
    void str(const std::string& s) {
        u32(static_cast<std::uint32_t>(s.size()));
        bytes(s.data(), s.size());
    }

private:
    std::vector<unsigned char>& out_;
};

class Reader {
public:
    Reader(const unsigned char* data, std::size_t size) : data_(data), size_(size) {}
    std::size_t offset() const { return pos_; }
    void bytes(void* p, std::size_t n) {
        if (pos_ + n > size_) {
            throw FormatError("checkpoint truncated", pos_);
        }
        std::memcpy(p, data_ + pos_, n);
        pos_ += n;
    }
    std::uint8_t u8() { std::uint8_t v; bytes(&v, 1); return v; }
    std::uint32_t u32() { std::uint32_t v; bytes(&v, 4); return v; }
    std::uint64_t u64() { std::uint64_t v; bytes(&v, 8); return v; }
    std::int64_t i64() { std::int64_t v; bytes(&v, 8); return v; }
    double f64() { double v; bytes(&v, 8); return v; }
    std::string str() {
        const std::uint32_t n = u32();
        if (n > size_ - pos_) throw FormatError("checkpoint string overruns file", pos_);
        std::string s(reinterpret_cast<const char*>(data_ + pos_), n);
        pos_ += n;
        return s;
    }

private:
    const unsigned char* data_;
    std::size_t size_;
    std::size_t pos_ = 0;
};

void write_shape(Writer& w, const Tensor& t) {
    w.u32(static_cast<std::uint32_t>(t.rank()));
    for (std::size_t e : t.shape()) w.u64(e);
}

std::vector<std::size_t> read_shape(Reader& r) {
    const std::uint32_t rank = r.u32();
    if (rank > 8) throw FormatError("implausible tensor rank", r.offset());
    std::vector<std::size_t> shape(rank);
    for (std::uint32_t i = 0; i < rank; ++i) shape[i] = static_cast<std::size_t>(r.u64());
    return shape;
}

// Parameter-carrying nodes in graph order, with their tensor slots.
std::vector<std::pair<const Node*, std::vector<const Tensor*>>> manifest_of(const Model& model) {
    std::vector<std::pair<const Node*, std::vector<const Tensor*>>> entries;
    for (const Node& n : model.nodes) {
        switch (n.kind) {
            case OpKind::Conv:
                entries.push_back({&n,
                                   {&n.conv.basis_weight, &n.conv.coeffs.dense,
                                    &n.conv.coeffs.pair_weights, &n.conv.bias}});
                break;
            case OpKind::BatchNorm:
                entries.push_back(
                    {&n, {&n.bn.gamma, &n.bn.beta, &n.bn.running_mean, &n.bn.running_var}});
                break;
            case OpKind::Dense:
                entries.push_back({&n, {&n.dense_w, &n.dense_b}});
                break;
            default: break;
        }
    }
    return entries;
}

}  // namespace

void save_checkpoint(const Model& model, const std::string& path) {
    std::vector<unsigned char> buf;
    Writer w(buf);
    w.bytes(kMagic, 8);
    w.u32(kVersion);
    w.str(model.arch);
    w.i64(model.width_divisor);
    w.i64(model.num_classes);
    w.i64(model.image_size);
    w.u64(model.build_seed);

    auto entries = manifest_of(model);
    w.u32(static_cast<std::uint32_t>(entries.size()));
    // Manifest: names, kinds, modes and shapes first; raw data follows.
    for (const auto& [node, tensors] : entries) {
        w.str(node->name);
        switch (node->kind) {
            case OpKind::Conv: {
                w.u8('C');
                w.u8(static_cast<std::uint8_t>(node->conv.mode));
                w.i64(node->conv.r);
                w.f64(node->conv.alpha);
                w.f64(node->conv.beta);
                w.u32(static_cast<std::uint32_t>(node->conv.coeffs.entries.size()));
                for (const CoeffEntry& e : node->conv.coeffs.entries) {
                    w.u8(e.is_pair ? 1 : 0);
                    w.u32(static_cast<std::uint32_t>(e.i1));
                    w.u32(static_cast<std::uint32_t>(e.i2));
                    w.u32(static_cast<std::uint32_t>(e.pair_slot));
                }
                break;
            }
            case OpKind::BatchNorm:
                w.u8('B');
                w.f64(node->bn.eps);
                w.f64(node->bn.momentum);
                break;
            case OpKind::Dense:
                w.u8('D');
                break;
            default: break;
        }
        w.u32(static_cast<std::uint32_t>(tensors.size()));
        for (const Tensor* t : tensors) write_shape(w, *t);
    }
    for (const auto& [node, tensors] : entries) {
        for (const Tensor* t : tensors) {
            w.bytes(t->data(), t->size() * sizeof(double));
        }
    }

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw ConfigError("cannot write checkpoint: " + path);
    out.write(reinterpret_cast<const char*>(buf.data()),
              static_cast<std::streamsize>(buf.size()));
}

Model load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot open checkpoint: " + path);
    std::vector<unsigned char> buf((std::istreambuf_iterator<char>(in)),
                                   std::istreambuf_iterator<char>());
    Reader r(buf.data(), buf.size());

    char magic[8];
    r.bytes(magic, 8);
    if (std::memcmp(magic, kMagic, 8) != 0) throw FormatError("bad checkpoint magic", 0);
    const std::uint32_t version = r.u32();
    if (version != kVersion) {
        throw FormatError("unsupported checkpoint version " + std::to_string(version), 8);
    }

    ModelSpec spec;
    spec.arch = r.str();
    spec.width_divisor = r.i64();
    spec.num_classes = static_cast<int>(r.i64());
    spec.image_size = r.i64();
    const std::uint64_t build_seed = r.u64();

    Model model = build_model(spec, build_seed, nullptr);

    struct PendingEntry {
        Node* node;
        std::vector<std::vector<std::size_t>> shapes;
    };
    std::unordered_map<std::string, Node*> by_name;
    for (Node& n : model.nodes) by_name[n.name] = &n;

    const std::uint32_t entry_count = r.u32();
    std::vector<PendingEntry> pending;
    pending.reserve(entry_count);
    for (std::uint32_t i = 0; i < entry_count; ++i) {
        const std::size_t entry_off = r.offset();
        const std::string name = r.str();
        auto it = by_name.find(name);
        if (it == by_name.end()) {
            throw FormatError("checkpoint names unknown layer '" + name + "'", entry_off);
        }
        Node* node = it->second;
        const std::uint8_t kind = r.u8();
        switch (kind) {
            case 'C': {
                if (node->kind != OpKind::Conv) {
                    throw FormatError("layer kind mismatch for '" + name + "'", entry_off);
                }
                node->conv.mode = static_cast<BasisMode>(r.u8());
                node->conv.r = r.i64();
                node->conv.alpha = r.f64();
                node->conv.beta = r.f64();
                const std::uint32_t n_entries = r.u32();
                node->conv.coeffs.entries.assign(n_entries, CoeffEntry{});
                for (std::uint32_t e = 0; e < n_entries; ++e) {
                    CoeffEntry& ce = node->conv.coeffs.entries[e];
                    ce.is_pair = r.u8() != 0;
                    ce.i1 = static_cast<std::int32_t>(r.u32());
                    ce.i2 = static_cast<std::int32_t>(r.u32());
                    ce.pair_slot = static_cast<std::int32_t>(r.u32());
                }
                break;
            }
            case 'B':
                if (node->kind != OpKind::BatchNorm) {
                    throw FormatError("layer kind mismatch for '" + name + "'", entry_off);
                }
                node->bn.eps = r.f64();
                node->bn.momentum = r.f64();
                break;
            case 'D':
                if (node->kind != OpKind::Dense) {
                    throw FormatError("layer kind mismatch for '" + name + "'", entry_off);
                }
                break;
            default:
                throw FormatError("unknown layer kind tag", entry_off);
        }
        PendingEntry pe;
        pe.node = node;
        const std::uint32_t tensor_count = r.u32();
        for (std::uint32_t t = 0; t < tensor_count; ++t) pe.shapes.push_back(read_shape(r));
        pending.push_back(std::move(pe));
    }

    for (PendingEntry& pe : pending) {
        std::vector<Tensor*> targets;
        switch (pe.node->kind) {
            case OpKind::Conv:
                targets = {&pe.node->conv.basis_weight, &pe.node->conv.coeffs.dense,
                           &pe.node->conv.coeffs.pair_weights, &pe.node->conv.bias};
                break;
            case OpKind::BatchNorm:
                targets = {&pe.node->bn.gamma, &pe.node->bn.beta, &pe.node->bn.running_mean,
                           &pe.node->bn.running_var};
                break;
            case OpKind::Dense:
                targets = {&pe.node->dense_w, &pe.node->dense_b};
                break;
            default: break;
        }
        if (targets.size() != pe.shapes.size()) {
            throw FormatError("tensor slot count mismatch for '" + pe.node->name + "'",
                              r.offset());
        }
        for (std::size_t t = 0; t < targets.size(); ++t) {
            if (pe.shapes[t].empty()) {
                *targets[t] = Tensor();  // absent slot (e.g. no pair weights)
                continue;
            }
            Tensor fresh(pe.shapes[t]);
            r.bytes(fresh.data(), fresh.size() * sizeof(double));
            *targets[t] = std::move(fresh);
        }
    }
    if (r.offset() != buf.size()) {
        throw FormatError("trailing bytes after checkpoint payload", r.offset());
    }
    return model;
}

}  // namespace bconv
