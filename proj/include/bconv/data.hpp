#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "bconv/tensor.hpp"

namespace bconv {

struct Dataset {
    Tensor images;            // N x 3 x H x W, values in [0, 1]
    std::vector<int> labels;  // in [0, num_classes)
    std::string split;        // "train" or "valid"

    std::size_t size() const { return labels.size(); }
};

// Procedural stand-in for an image-classification set: each class is an
// oriented gradient with a class-specific stripe frequency, plus seeded
// Gaussian noise (sigma 0.1, clamped back to [0, 1]). Split is a seeded
// stratified 80/20, so both splits stay exactly class-balanced.
std::pair<Dataset, Dataset> synth_dataset(int n_per_class, int num_classes,
                                          std::int64_t image_size, std::uint64_t seed,
                                          double noise_sigma = 0.1);

// Noise-free class template, the nearest-template oracle's reference.
Tensor synth_class_template(int cls, int num_classes, std::int64_t image_size);

// Reads the public binary layout: data_batch_1..5.bin for train,
// test_batch.bin for valid; each record is 1 label byte + 3072 pixel bytes
// (1024 R, 1024 G, 1024 B, row-major 32x32). Pixels are scaled to [0, 1].
// max_per_class > 0 caps each class deterministically in file order.
std::pair<Dataset, Dataset> load_cifar10(const std::string& dir, int max_per_class);

// Parses one batch file worth of records (shared by load_cifar10 and tests).
Dataset parse_cifar_records(const std::vector<unsigned char>& bytes, const std::string& split);

// Inverse of parsing: re-emit the binary record layout.
std::vector<unsigned char> cifar_serialize(const Dataset& ds);

enum class AugmentPolicy { None, Pad4Crop32Flip, ResizeCrop };

struct AugmentConfig {
    AugmentPolicy policy = AugmentPolicy::None;
    std::int64_t resize_to = 0;  // ResizeCrop only
    std::int64_t crop_to = 0;
};

AugmentPolicy augment_policy_from_string(const std::string& name);

// Training-path augmentation; seeded and deterministic per (seed, position).
Tensor augment(const Tensor& batch, const AugmentConfig& cfg, std::uint64_t seed);

// Validation path: no randomness; ResizeCrop only applies the deterministic
// resize to the crop size.
Tensor augment_valid(const Tensor& batch, const AugmentConfig& cfg);

// Nearest-neighbour resize of B x C x H x W.
Tensor resize_nearest(const Tensor& batch, std::int64_t out_h, std::int64_t out_w);

// Fixed-offset crop out of the zero-padded planes; the random policies draw
// (oy, ox, flip) and delegate here.
Tensor crop_padded(const Tensor& batch, std::int64_t pad, std::int64_t oy, std::int64_t ox,
                   bool flip, std::int64_t out_size);

}  // namespace bconv
