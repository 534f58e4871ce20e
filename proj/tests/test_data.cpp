#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <vector>

#include "bconv/data.hpp"
#include "bconv/errors.hpp"
#include "support/oracles.hpp"

using namespace bconv;

namespace {

int nearest_template_class(const double* img, int num_classes, std::int64_t size) {
    int best = -1;
    double best_d = 0.0;
    for (int c = 0; c < num_classes; ++c) {
        Tensor tmpl = synth_class_template(c, num_classes, size);
        double d = 0.0;
        for (std::size_t i = 0; i < tmpl.size(); ++i) {
            const double diff = img[i] - tmpl[i];
            d += diff * diff;
        }
        if (best < 0 || d < best_d) {
            best = c;
            best_d = d;
        }
    }
    return best;
}

}  // namespace

TEST_CASE("synthetic dataset: determinism, balance, and template separability") {
    auto [train_a, valid_a] = synth_dataset(10, 4, 16, 99);
    auto [train_b, valid_b] = synth_dataset(10, 4, 16, 99);
    CHECK(testsupport::max_abs_diff(train_a.images, train_b.images) == 0.0);
    CHECK(train_a.labels == train_b.labels);
    CHECK(valid_a.labels == valid_b.labels);

    // Stratified 80/20: every class appears exactly 8 times in train and 2 in
    // valid, so the full set holds exactly n_per_class per class.
    std::vector<int> train_counts(4, 0), valid_counts(4, 0);
    for (int label : train_a.labels) ++train_counts[label];
    for (int label : valid_a.labels) ++valid_counts[label];
    for (int c = 0; c < 4; ++c) {
        CHECK(train_counts[c] == 8);
        CHECK(valid_counts[c] == 2);
    }

    // Pixel range invariant.
    for (std::size_t i = 0; i < train_a.images.size(); ++i) {
        CHECK(train_a.images[i] >= 0.0);
        CHECK(train_a.images[i] <= 1.0);
    }

    // Noise-free samples are classified perfectly by the nearest template.
    auto [clean_train, clean_valid] = synth_dataset(5, 4, 16, 7, 0.0);
    const std::size_t chw = 3 * 16 * 16;
    for (std::size_t i = 0; i < clean_train.size(); ++i) {
        CHECK(nearest_template_class(clean_train.images.data() + i * chw, 4, 16) ==
              clean_train.labels[i]);
    }
}

TEST_CASE("cifar parsing: fixture, truncation, round trip") {
    // Two constructed records: label 3 with ramp pixels, label 9 constant.
    std::vector<unsigned char> bytes;
    bytes.push_back(3);
    for (int p = 0; p < 3072; ++p) bytes.push_back(static_cast<unsigned char>(p % 251));
    bytes.push_back(9);
    for (int p = 0; p < 3072; ++p) bytes.push_back(17);

    Dataset ds = parse_cifar_records(bytes, "train");
    REQUIRE(ds.size() == 2);
    CHECK(ds.labels[0] == 3);
    CHECK(ds.labels[1] == 9);
    CHECK(ds.images[0] == 0.0);
    CHECK(ds.images[1] == doctest::Approx(1.0 / 255.0));
    CHECK(ds.images[3072] == doctest::Approx(17.0 / 255.0));

    // Parsed tensors serialize back to the identical byte stream.
    CHECK(cifar_serialize(ds) == bytes);

    std::vector<unsigned char> truncated(3072, 0);
    CHECK_THROWS_AS(parse_cifar_records(truncated, "train"), FormatError);

    std::vector<unsigned char> bad_label(3073, 0);
    bad_label[0] = 10;
    CHECK_THROWS_AS(parse_cifar_records(bad_label, "train"), FormatError);
    try {
        parse_cifar_records(bad_label, "train");
    } catch (const FormatError& e) {
        CHECK(e.offset() == 0);  // the failing record starts the file
    }
}

TEST_CASE("cifar loader applies the per-class cap in file order") {
    namespace fs = std::filesystem;
    const fs::path dir = fs::path(BCONV_TEST_TMP) / "cifar_fixture";
    fs::create_directories(dir);

    // 5 train files, 20 records each, labels cycling 0..9; 10-record test file.
    auto write_batch = [&](const std::string& name, int records) {
        std::vector<unsigned char> bytes;
        for (int i = 0; i < records; ++i) {
            bytes.push_back(static_cast<unsigned char>(i % 10));
            for (int p = 0; p < 3072; ++p) {
                bytes.push_back(static_cast<unsigned char>((i * 7 + p) % 256));
            }
        }
        std::ofstream out(dir / name, std::ios::binary);
        out.write(reinterpret_cast<const char*>(bytes.data()),
                  static_cast<std::streamsize>(bytes.size()));
    };
    for (int f = 1; f <= 5; ++f) write_batch("data_batch_" + std::to_string(f) + ".bin", 20);
    write_batch("test_batch.bin", 10);

    auto [train, valid] = load_cifar10(dir.string(), 0);
    CHECK(train.size() == 100);
    CHECK(valid.size() == 10);

    auto [capped_train, capped_valid] = load_cifar10(dir.string(), 1);
    CHECK(capped_train.size() == 10);  // one per class, ten classes
    CHECK(capped_valid.size() == 10);
}

TEST_CASE("augmentation: identity, centered crop, resize invariants") {
    Tensor batch = Tensor::randn({2, 3, 32, 32}, 5);
    for (std::size_t i = 0; i < batch.size(); ++i) {
        batch[i] = std::min(1.0, std::abs(batch[i]));
    }

    AugmentConfig none;
    Tensor same = augment(batch, none, 1);
    CHECK(testsupport::max_abs_diff(same, batch) == 0.0);

    // Pad-4 then crop at offset (4,4) without flip is the identity.
    Tensor centered = crop_padded(batch, 4, 4, 4, false, 32);
    CHECK(testsupport::max_abs_diff(centered, batch) == 0.0);

    // Nearest-neighbour resize of a constant image stays constant.
    Tensor flat({1, 3, 8, 8});
    flat.fill(0.37);
    Tensor up = resize_nearest(flat, 21, 21);
    for (std::size_t i = 0; i < up.size(); ++i) CHECK(up[i] == 0.37);

    // Random policies keep pixels in range and are seed-deterministic.
    AugmentConfig pad;
    pad.policy = AugmentPolicy::Pad4Crop32Flip;
    Tensor crop_a = augment(batch, pad, 11);
    Tensor crop_b = augment(batch, pad, 11);
    CHECK(testsupport::max_abs_diff(crop_a, crop_b) == 0.0);
    for (std::size_t i = 0; i < crop_a.size(); ++i) {
        CHECK(crop_a[i] >= 0.0);
        CHECK(crop_a[i] <= 1.0);
    }

    AugmentConfig rc;
    rc.policy = AugmentPolicy::ResizeCrop;
    rc.resize_to = 40;
    rc.crop_to = 36;
    Tensor rcp = augment(batch, rc, 13);
    CHECK(rcp.extent(2) == 36);
    for (std::size_t i = 0; i < rcp.size(); ++i) {
        CHECK(rcp[i] >= 0.0);
        CHECK(rcp[i] <= 1.0);
    }

    // Validation path only resizes, deterministically.
    Tensor v = augment_valid(batch, rc);
    CHECK(v.extent(2) == 36);

    AugmentConfig bad;
    bad.policy = AugmentPolicy::ResizeCrop;
    bad.resize_to = 16;
    bad.crop_to = 24;
    CHECK_THROWS_AS(augment(batch, bad, 1), ConfigError);
}
