#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <numeric>
#include <string>
#include <vector>

#include "prslab/error.hpp"
#include "prslab/rng.hpp"

namespace prslab {

// Images/labels with pixel values in [0,1]. Inputs are stored as float
// regardless of the training scalar type; attack clipping and epsilon
// budgets are expressed in this raw pixel scale.
struct Dataset {
    std::string name;
    std::string split;  // "train" or "test"
    int n = 0, channels = 0, height = 0, width = 0;
    int num_classes = 0;
    std::vector<float> inputs;  // n * channels * height * width
    std::vector<int> labels;

    std::size_t sample_size() const {
        return static_cast<std::size_t>(channels) * height * width;
    }
    const float* sample(int i) const { return inputs.data() + i * sample_size(); }

    void validate() const {
        require(inputs.size() == static_cast<std::size_t>(n) * sample_size(),
                ErrorKind::consistency, "input buffer size mismatch");
        require(labels.size() == static_cast<std::size_t>(n), ErrorKind::consistency,
                "label count mismatch");
        for (float v : inputs)
            require(v >= 0.0f && v <= 1.0f, ErrorKind::data,
                    "input value outside [0,1]");
        for (int y : labels)
            require(y >= 0 && y < num_classes, ErrorKind::data, "label out of range");
    }
};

namespace detail {

inline std::vector<unsigned char> read_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    require(f.good(), ErrorKind::io, "cannot open " + path);
    return std::vector<unsigned char>(std::istreambuf_iterator<char>(f),
                                      std::istreambuf_iterator<char>());
}

inline std::uint32_t be32(const unsigned char* p) {
    return (std::uint32_t(p[0]) << 24) | (std::uint32_t(p[1]) << 16) |
           (std::uint32_t(p[2]) << 8) | std::uint32_t(p[3]);
}

inline void put_be32(std::vector<unsigned char>& out, std::uint32_t v) {
    out.push_back(static_cast<unsigned char>(v >> 24));
    out.push_back(static_cast<unsigned char>(v >> 16));
    out.push_back(static_cast<unsigned char>(v >> 8));
    out.push_back(static_cast<unsigned char>(v));
}

}  // namespace detail

// IDX format: big-endian magic 0x00000803 (images, 3 dims) or 0x00000801
// (labels, 1 dim), big-endian dimension sizes, then raw bytes. Pixels are
// scaled by 1/255 into [0,1].
inline Dataset load_idx(const std::string& images_path, const std::string& labels_path,
                        const std::string& name = "idx", const std::string& split = "train") {
    auto img = detail::read_file(images_path);
    require(img.size() >= 16, ErrorKind::length, "IDX image file too short: " + images_path);
    require(detail::be32(img.data()) == 0x00000803u, ErrorKind::format,
            "bad IDX image magic in " + images_path);
    std::uint32_t n = detail::be32(img.data() + 4);
    std::uint32_t h = detail::be32(img.data() + 8);
    std::uint32_t w = detail::be32(img.data() + 12);
    std::size_t expect = 16 + static_cast<std::size_t>(n) * h * w;
    require(img.size() == expect, ErrorKind::length,
            "IDX image file truncated or oversized: " + images_path);

    auto lab = detail::read_file(labels_path);
    require(lab.size() >= 8, ErrorKind::length, "IDX label file too short: " + labels_path);
    require(detail::be32(lab.data()) == 0x00000801u, ErrorKind::format,
            "bad IDX label magic in " + labels_path);
    std::uint32_t nl = detail::be32(lab.data() + 4);
    require(lab.size() == 8 + static_cast<std::size_t>(nl), ErrorKind::length,
            "IDX label file truncated: " + labels_path);
    require(n == nl, ErrorKind::consistency, "image/label count mismatch");

    Dataset d;
    d.name = name;
    d.split = split;
    d.n = static_cast<int>(n);
    d.channels = 1;
    d.height = static_cast<int>(h);
    d.width = static_cast<int>(w);
    d.inputs.resize(static_cast<std::size_t>(n) * h * w);
    for (std::size_t i = 0; i < d.inputs.size(); ++i)
        d.inputs[i] = static_cast<float>(img[16 + i]) / 255.0f;
    d.labels.assign(lab.begin() + 8, lab.end());
    int maxlab = 0;
    for (int y : d.labels) maxlab = std::max(maxlab, y);
    d.num_classes = std::max(10, maxlab + 1);
    return d;
}

// Inverse of load_idx; used by the round-trip contract. Pixel byte recovered
// as round(value*255), exact for values that are multiples of 1/255.
inline void save_idx(const Dataset& d, const std::string& images_path,
                     const std::string& labels_path) {
    std::vector<unsigned char> img;
    detail::put_be32(img, 0x00000803u);
    detail::put_be32(img, static_cast<std::uint32_t>(d.n));
    detail::put_be32(img, static_cast<std::uint32_t>(d.height));
    detail::put_be32(img, static_cast<std::uint32_t>(d.width));
    for (float v : d.inputs)
        img.push_back(static_cast<unsigned char>(std::lround(v * 255.0f)));
    std::ofstream fi(images_path, std::ios::binary);
    fi.write(reinterpret_cast<const char*>(img.data()), static_cast<std::streamsize>(img.size()));

    std::vector<unsigned char> lab;
    detail::put_be32(lab, 0x00000801u);
    detail::put_be32(lab, static_cast<std::uint32_t>(d.n));
    for (int y : d.labels) lab.push_back(static_cast<unsigned char>(y));
    std::ofstream fl(labels_path, std::ios::binary);
    fl.write(reinterpret_cast<const char*>(lab.data()), static_cast<std::streamsize>(lab.size()));
}

// CIFAR-10 binary batches: 3073-byte records, 1 label byte + 3072
// channel-major pixels (R plane, G plane, B plane), 32x32.
inline Dataset load_cifar10(const std::vector<std::string>& batch_paths,
                            const std::string& split = "train") {
    Dataset d;
    d.name = "cifar10";
    d.split = split;
    d.channels = 3;
    d.height = 32;
    d.width = 32;
    d.num_classes = 10;
    const std::size_t rec = 3073;
    for (const std::string& path : batch_paths) {
        auto bytes = detail::read_file(path);
        require(bytes.size() % rec == 0 && !bytes.empty(), ErrorKind::length,
                "CIFAR-10 batch truncated (size not a multiple of 3073): " + path);
        std::size_t count = bytes.size() / rec;
        for (std::size_t r = 0; r < count; ++r) {
            const unsigned char* p = bytes.data() + r * rec;
            require(p[0] < 10, ErrorKind::format, "CIFAR-10 label byte out of range");
            d.labels.push_back(p[0]);
            for (std::size_t i = 0; i < 3072; ++i)
                d.inputs.push_back(static_cast<float>(p[1 + i]) / 255.0f);
        }
        d.n += static_cast<int>(count);
    }
    return d;
}

inline void save_cifar10(const Dataset& d, const std::string& path) {
    std::vector<unsigned char> out;
    out.reserve(static_cast<std::size_t>(d.n) * 3073);
    for (int i = 0; i < d.n; ++i) {
        out.push_back(static_cast<unsigned char>(d.labels[i]));
        const float* s = d.sample(i);
        for (std::size_t j = 0; j < 3072; ++j)
            out.push_back(static_cast<unsigned char>(std::lround(s[j] * 255.0f)));
    }
    std::ofstream f(path, std::ios::binary);
    f.write(reinterpret_cast<const char*>(out.data()), static_cast<std::streamsize>(out.size()));
}

// Gaussian blobs with class means on a seeded random simplex in [0,1]^dims,
// clipped to [0,1]. Deterministic per seed.
// Class means are drawn from `seed`; per-sample noise from `noise_seed`
// (defaulting to the same stream). Distinct noise seeds with one mean seed
// give train/test splits of the same distribution.
inline Dataset make_blobs(int num_classes, int per_class, int dims, double spread,
                          std::uint64_t seed, std::uint64_t noise_seed = 0) {
    require(num_classes > 0 && per_class > 0 && dims > 0 && spread >= 0.0,
            ErrorKind::parameter, "make_blobs parameters must be positive");
    Rng mean_rng(seed);
    std::vector<std::vector<double>> means(num_classes, std::vector<double>(dims));
    for (auto& m : means)
        for (double& v : m) v = mean_rng.uniform(0.15, 0.85);
    Rng rng = noise_seed ? Rng(noise_seed) : std::move(mean_rng);
    Dataset d;
    d.name = "blobs";
    d.split = "train";
    d.n = num_classes * per_class;
    d.channels = 1;
    d.height = 1;
    d.width = dims;
    d.num_classes = num_classes;
    d.inputs.reserve(static_cast<std::size_t>(d.n) * dims);
    d.labels.reserve(d.n);
    for (int c = 0; c < num_classes; ++c)
        for (int i = 0; i < per_class; ++i) {
            for (int j = 0; j < dims; ++j) {
                double v = means[c][j] + spread * rng.normal();
                d.inputs.push_back(static_cast<float>(std::clamp(v, 0.0, 1.0)));
            }
            d.labels.push_back(c);
        }
    return d;
}

// Seeded sample of n items without replacement; stratified mode draws
// n / num_classes per class.
inline Dataset subset(const Dataset& d, int n, std::uint64_t seed, bool stratified) {
    require(n > 0 && n <= d.n, ErrorKind::parameter,
            "subset size must be in [1, N]");
    std::vector<int> chosen;
    if (stratified) {
        require(n % d.num_classes == 0, ErrorKind::parameter,
                "stratified subset size must be divisible by the class count");
        int per_class = n / d.num_classes;
        std::vector<std::vector<int>> by_class(d.num_classes);
        for (int i = 0; i < d.n; ++i) by_class[d.labels[i]].push_back(i);
        Rng rng(seed);
        for (int c = 0; c < d.num_classes; ++c) {
            require(static_cast<int>(by_class[c].size()) >= per_class, ErrorKind::data,
                    "class " + std::to_string(c) + " has too few samples to stratify");
            rng.shuffle(by_class[c]);
            for (int k = 0; k < per_class; ++k) chosen.push_back(by_class[c][k]);
        }
        std::sort(chosen.begin(), chosen.end());
    } else {
        std::vector<int> idx(d.n);
        std::iota(idx.begin(), idx.end(), 0);
        Rng rng(seed);
        rng.shuffle(idx);
        chosen.assign(idx.begin(), idx.begin() + n);
        std::sort(chosen.begin(), chosen.end());
    }
    Dataset out;
    out.name = d.name;
    out.split = d.split;
    out.n = n;
    out.channels = d.channels;
    out.height = d.height;
    out.width = d.width;
    out.num_classes = d.num_classes;
    out.inputs.reserve(static_cast<std::size_t>(n) * d.sample_size());
    for (int i : chosen) {
        const float* s = d.sample(i);
        out.inputs.insert(out.inputs.end(), s, s + d.sample_size());
        out.labels.push_back(d.labels[i]);
    }
    return out;
}

// One epoch visits every index exactly once (drop_last=false) or at most
// once (drop_last=true). Shuffle order depends on (seed, epoch).
class BatchIterator {
  public:
    BatchIterator(const Dataset& dataset, int batch_size, std::uint64_t seed,
                  bool shuffle = true, bool drop_last = false)
        : dataset_(dataset),
          batch_size_(batch_size),
          seed_(seed),
          shuffle_(shuffle),
          drop_last_(drop_last) {
        require(batch_size > 0, ErrorKind::parameter, "batch size must be positive");
    }

    // Batches of sample indices for the given epoch.
    std::vector<std::vector<int>> epoch(int epoch_index) const {
        std::vector<int> order(dataset_.n);
        std::iota(order.begin(), order.end(), 0);
        if (shuffle_) {
            Rng rng(seed_ ^ (0xE9C7A5B3u + static_cast<std::uint64_t>(epoch_index) * 0x1000193u));
            rng.shuffle(order);
        }
        std::vector<std::vector<int>> batches;
        for (int start = 0; start < dataset_.n; start += batch_size_) {
            int end = std::min(start + batch_size_, dataset_.n);
            if (drop_last_ && end - start < batch_size_) break;
            batches.emplace_back(order.begin() + start, order.begin() + end);
        }
        return batches;
    }

  private:
    const Dataset& dataset_;
    int batch_size_;
    std::uint64_t seed_;
    bool shuffle_;
    bool drop_last_;
};

// Gather a batch of inputs into a contiguous S-typed buffer.
template <class S>
std::vector<S> gather_batch(const Dataset& d, const std::vector<int>& indices) {
    std::vector<S> out;
    out.reserve(indices.size() * d.sample_size());
    for (int i : indices) {
        const float* s = d.sample(i);
        for (std::size_t j = 0; j < d.sample_size(); ++j) out.push_back(static_cast<S>(s[j]));
    }
    return out;
}

inline std::vector<int> gather_labels(const Dataset& d, const std::vector<int>& indices) {
    std::vector<int> out;
    out.reserve(indices.size());
    for (int i : indices) out.push_back(d.labels[i]);
    return out;
}

}  // namespace prslab
