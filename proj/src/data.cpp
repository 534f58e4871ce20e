#include "bconv/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "bconv/errors.hpp"
#include "bconv/rng.hpp"

namespace bconv {

namespace {

double clamp01(double v) { return v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v); }

constexpr double kPi = 3.14159265358979323846;

void fill_template(double* img, int cls, int num_classes, std::int64_t s) {
    // Classes share an orientation in pairs and differ in stripe frequency,
    // so separating them takes fine spatial features, not just a coarse
    // gradient direction. Channels are phase-shifted copies.
    const int groups = (num_classes + 1) / 2;
    const double theta = kPi * static_cast<double>(cls % groups) / static_cast<double>(groups);
    const double freq = cls < groups ? 2.0 : 3.5;
    const double ct = std::cos(theta), st = std::sin(theta);
    for (int ch = 0; ch < 3; ++ch) {
        const double phase = 2.0 * kPi * static_cast<double>(ch) / 3.0;
        for (std::int64_t y = 0; y < s; ++y) {
            for (std::int64_t x = 0; x < s; ++x) {
                const double nx = static_cast<double>(x) / static_cast<double>(s - 1);
                const double ny = static_cast<double>(y) / static_cast<double>(s - 1);
                const double d = ct * nx + st * ny;
                const double v = 0.45 + 0.1 * (d - 0.5) +
                                 0.16 * std::sin(2.0 * kPi * freq * d + phase);
                img[(ch * s + y) * s + x] = clamp01(v);
            }
        }
    }
}

}  // namespace

Tensor synth_class_template(int cls, int num_classes, std::int64_t image_size) {
    Tensor t({3, static_cast<std::size_t>(image_size), static_cast<std::size_t>(image_size)});
    fill_template(t.data(), cls, num_classes, image_size);
    return t;
}

std::pair<Dataset, Dataset> synth_dataset(int n_per_class, int num_classes,
                                          std::int64_t image_size, std::uint64_t seed,
                                          double noise_sigma) {
    if (n_per_class < 1 || num_classes < 1 || image_size < 2) {
        throw ConfigError("synth_dataset sizes must be positive (image_size >= 2)");
    }
    const std::size_t s = static_cast<std::size_t>(image_size);
    const std::size_t chw = 3 * s * s;
    const int n_train_pc = (n_per_class * 4) / 5;
    const int n_valid_pc = n_per_class - n_train_pc;

    Dataset train, valid;
    train.split = "train";
    valid.split = "valid";
    train.images = Tensor({static_cast<std::size_t>(n_train_pc * num_classes), 3, s, s});
    valid.images = Tensor({static_cast<std::size_t>(n_valid_pc * num_classes), 3, s, s});

    std::vector<double> tmpl(chw);
    Rng noise_rng(derive_seed(seed, "synth/noise"));
    std::vector<std::pair<int, std::vector<double>>> train_items, valid_items;
    for (int cls = 0; cls < num_classes; ++cls) {
        fill_template(tmpl.data(), cls, num_classes, image_size);
        for (int i = 0; i < n_per_class; ++i) {
            std::vector<double> img(chw);
            for (std::size_t p = 0; p < chw; ++p) {
                img[p] = clamp01(tmpl[p] + noise_sigma * noise_rng.normal());
            }
            if (i < n_train_pc) {
                train_items.emplace_back(cls, std::move(img));
            } else {
                valid_items.emplace_back(cls, std::move(img));
            }
        }
    }

    auto shuffle_into = [&](std::vector<std::pair<int, std::vector<double>>>& items,
                            Dataset& out, const char* label) {
        Rng rng(derive_seed(seed, std::string("synth/shuffle/") + label));
        for (std::size_t i = items.size(); i > 1; --i) {
            std::swap(items[i - 1], items[rng.bounded(i)]);
        }
        out.labels.resize(items.size());
        for (std::size_t i = 0; i < items.size(); ++i) {
            out.labels[i] = items[i].first;
            std::copy(items[i].second.begin(), items[i].second.end(),
                      out.images.data() + i * chw);
        }
    };
    shuffle_into(train_items, train, "train");
    shuffle_into(valid_items, valid, "valid");
    return {std::move(train), std::move(valid)};
}

// ---- CIFAR-10 ----------------------------------------------------------------

namespace {

constexpr std::size_t kCifarRecord = 3073;
constexpr std::size_t kCifarPixels = 3072;

std::vector<unsigned char> read_binary_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot open file: " + path);
    return std::vector<unsigned char>(std::istreambuf_iterator<char>(in),
                                      std::istreambuf_iterator<char>());
}

}  // namespace

Dataset parse_cifar_records(const std::vector<unsigned char>& bytes, const std::string& split) {
    if (bytes.size() % kCifarRecord != 0) {
        throw FormatError("file length " + std::to_string(bytes.size()) +
                              " is not a multiple of 3073",
                          bytes.size() - bytes.size() % kCifarRecord);
    }
    const std::size_t n = bytes.size() / kCifarRecord;
    Dataset ds;
    ds.split = split;
    ds.images = Tensor({n, 3, 32, 32});
    ds.labels.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t base = i * kCifarRecord;
        const unsigned char label = bytes[base];
        if (label > 9) {
            throw FormatError("label byte " + std::to_string(label) + " out of range in record " +
                                  std::to_string(i),
                              base);
        }
        ds.labels[i] = label;
        double* img = ds.images.data() + i * kCifarPixels;
        for (std::size_t p = 0; p < kCifarPixels; ++p) {
            img[p] = static_cast<double>(bytes[base + 1 + p]) / 255.0;
        }
    }
    return ds;
}

std::vector<unsigned char> cifar_serialize(const Dataset& ds) {
    const std::size_t n = ds.size();
    std::vector<unsigned char> bytes(n * kCifarRecord);
    for (std::size_t i = 0; i < n; ++i) {
        bytes[i * kCifarRecord] = static_cast<unsigned char>(ds.labels[i]);
        const double* img = ds.images.data() + i * kCifarPixels;
        for (std::size_t p = 0; p < kCifarPixels; ++p) {
            bytes[i * kCifarRecord + 1 + p] =
                static_cast<unsigned char>(std::lround(img[p] * 255.0));
        }
    }
    return bytes;
}

std::pair<Dataset, Dataset> load_cifar10(const std::string& dir, int max_per_class) {
    auto load_split = [&](const std::vector<std::string>& files, const std::string& split) {
        std::vector<double> pixels;
        std::vector<int> labels;
        std::vector<int> per_class(10, 0);
        for (const std::string& f : files) {
            Dataset part = parse_cifar_records(read_binary_file(dir + "/" + f), split);
            for (std::size_t i = 0; i < part.size(); ++i) {
                const int cls = part.labels[i];
                if (max_per_class > 0 && per_class[cls] >= max_per_class) continue;
                ++per_class[cls];
                labels.push_back(cls);
                const double* img = part.images.data() + i * kCifarPixels;
                pixels.insert(pixels.end(), img, img + kCifarPixels);
            }
        }
        Dataset ds;
        ds.split = split;
        ds.labels = std::move(labels);
        ds.images = Tensor::from_vector(std::move(pixels))
                        .reshaped({ds.labels.size(), 3, 32, 32});
        return ds;
    };
    Dataset train = load_split({"data_batch_1.bin", "data_batch_2.bin", "data_batch_3.bin",
                                "data_batch_4.bin", "data_batch_5.bin"},
                               "train");
    Dataset valid = load_split({"test_batch.bin"}, "valid");
    return {std::move(train), std::move(valid)};
}

// ---- augmentation -------------------------------------------------------------

AugmentPolicy augment_policy_from_string(const std::string& name) {
    if (name == "none") return AugmentPolicy::None;
    if (name == "pad4_crop32_flip") return AugmentPolicy::Pad4Crop32Flip;
    if (name == "resize_crop") return AugmentPolicy::ResizeCrop;
    throw ConfigError("unknown augment policy: " + name);
}

Tensor resize_nearest(const Tensor& batch, std::int64_t out_h, std::int64_t out_w) {
    const std::size_t b = batch.extent(0), c = batch.extent(1);
    const std::size_t h = batch.extent(2), w = batch.extent(3);
    Tensor out({b, c, static_cast<std::size_t>(out_h), static_cast<std::size_t>(out_w)});
    for (std::size_t n = 0; n < b * c; ++n) {
        const double* src = batch.data() + n * h * w;
        double* dst = out.data() + n * static_cast<std::size_t>(out_h * out_w);
        for (std::int64_t y = 0; y < out_h; ++y) {
            const std::size_t sy = static_cast<std::size_t>(y * static_cast<std::int64_t>(h) / out_h);
            for (std::int64_t x = 0; x < out_w; ++x) {
                const std::size_t sx =
                    static_cast<std::size_t>(x * static_cast<std::int64_t>(w) / out_w);
                dst[y * out_w + x] = src[sy * w + sx];
            }
        }
    }
    return out;
}

namespace {

// Crop one image out of a zero-padded view; oy/ox are offsets into the padded
// plane. flip mirrors horizontally.
void crop_image(const double* src, std::size_t c, std::size_t h, std::size_t w, std::int64_t pad,
                std::int64_t oy, std::int64_t ox, std::size_t out_s, bool flip, double* dst) {
    for (std::size_t ch = 0; ch < c; ++ch) {
        for (std::size_t y = 0; y < out_s; ++y) {
            const std::int64_t sy = static_cast<std::int64_t>(y) + oy - pad;
            for (std::size_t x = 0; x < out_s; ++x) {
                const std::size_t xi = flip ? out_s - 1 - x : x;
                const std::int64_t sx = static_cast<std::int64_t>(xi) + ox - pad;
                double v = 0.0;
                if (sy >= 0 && sy < static_cast<std::int64_t>(h) && sx >= 0 &&
                    sx < static_cast<std::int64_t>(w)) {
                    v = src[(ch * h + static_cast<std::size_t>(sy)) * w +
                            static_cast<std::size_t>(sx)];
                }
                dst[(ch * out_s + y) * out_s + x] = v;
            }
        }
    }
}

}  // namespace

Tensor crop_padded(const Tensor& batch, std::int64_t pad, std::int64_t oy, std::int64_t ox,
                   bool flip, std::int64_t out_size) {
    const std::size_t b = batch.extent(0), c = batch.extent(1);
    const std::size_t h = batch.extent(2), w = batch.extent(3);
    const std::size_t out_s = static_cast<std::size_t>(out_size);
    Tensor out({b, c, out_s, out_s});
    for (std::size_t i = 0; i < b; ++i) {
        crop_image(batch.data() + i * c * h * w, c, h, w, pad, oy, ox, out_s, flip,
                   out.data() + i * c * out_s * out_s);
    }
    return out;
}

Tensor augment(const Tensor& batch, const AugmentConfig& cfg, std::uint64_t seed) {
    switch (cfg.policy) {
        case AugmentPolicy::None:
            return batch;
        case AugmentPolicy::Pad4Crop32Flip: {
            const std::size_t b = batch.extent(0), c = batch.extent(1);
            const std::size_t h = batch.extent(2), w = batch.extent(3);
            Rng rng(seed);
            Tensor out(batch.shape());
            for (std::size_t i = 0; i < b; ++i) {
                const std::int64_t oy = static_cast<std::int64_t>(rng.bounded(9));
                const std::int64_t ox = static_cast<std::int64_t>(rng.bounded(9));
                const bool flip = rng.bounded(2) == 1;
                crop_image(batch.data() + i * c * h * w, c, h, w, 4, oy, ox, h, flip,
                           out.data() + i * c * h * w);
            }
            return out;
        }
        case AugmentPolicy::ResizeCrop: {
            if (cfg.crop_to > cfg.resize_to) {
                throw ConfigError("crop size exceeds resize size");
            }
            Tensor resized = resize_nearest(batch, cfg.resize_to, cfg.resize_to);
            const std::size_t b = resized.extent(0), c = resized.extent(1);
            const std::size_t h = resized.extent(2), w = resized.extent(3);
            const std::size_t out_s = static_cast<std::size_t>(cfg.crop_to);
            const std::uint64_t span = static_cast<std::uint64_t>(cfg.resize_to - cfg.crop_to + 1);
            Rng rng(seed);
            Tensor out({b, c, out_s, out_s});
            for (std::size_t i = 0; i < b; ++i) {
                const std::int64_t oy = static_cast<std::int64_t>(rng.bounded(span));
                const std::int64_t ox = static_cast<std::int64_t>(rng.bounded(span));
                const bool flip = rng.bounded(2) == 1;
                crop_image(resized.data() + i * c * h * w, c, h, w, 0, oy, ox, out_s, flip,
                           out.data() + i * c * out_s * out_s);
            }
            return out;
        }
    }
    throw ConfigError("unreachable augment policy");
}

Tensor augment_valid(const Tensor& batch, const AugmentConfig& cfg) {
    if (cfg.policy == AugmentPolicy::ResizeCrop) {
        return resize_nearest(batch, cfg.crop_to, cfg.crop_to);
    }
    return batch;
}

}  // namespace bconv
