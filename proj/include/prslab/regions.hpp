#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "prslab/data.hpp"
#include "prslab/error.hpp"
#include "prslab/nn.hpp"
#include "prslab/threads.hpp"

namespace prslab {

// Bit-packed sign vector of the pre-activation features f_{l:1}(x) at one
// layer: bit i set iff f^i > 0. Exact zeros map to the -1 side, matching the
// ReLU-inactive convention.
struct SignPattern {
    int layer = 0;
    int width = 0;
    std::vector<std::uint64_t> bits;

    bool operator==(const SignPattern& o) const {
        return layer == o.layer && width == o.width && bits == o.bits;
    }

    // Lexicographic order over the bit string, MSB-first within the vector
    // of words; used for deterministic tie-breaking.
    bool lex_less(const SignPattern& o) const { return bits < o.bits; }

    bool bit(int i) const {
        return (bits[static_cast<std::size_t>(i) >> 6] >> (i & 63)) & 1u;
    }

    std::string to_string() const {
        std::string s;
        s.reserve(width);
        for (int i = 0; i < width; ++i) s.push_back(bit(i) ? '+' : '-');
        return s;
    }
};

struct SignPatternHash {
    std::size_t operator()(const SignPattern& p) const {
        std::uint64_t h = 0xCBF29CE484222325ull ^ static_cast<std::uint64_t>(p.layer);
        for (std::uint64_t w : p.bits) {
            h ^= w;
            h *= 0x100000001B3ull;
            h ^= h >> 29;
        }
        return static_cast<std::size_t>(h);
    }
};

template <class S>
SignPattern pack_pattern(const S* features, int width, int layer) {
    SignPattern p;
    p.layer = layer;
    p.width = width;
    p.bits.assign(static_cast<std::size_t>(width + 63) / 64, 0);
    for (int i = 0; i < width; ++i)
        if (features[i] > S(0)) p.bits[static_cast<std::size_t>(i) >> 6] |= 1ull << (i & 63);
    return p;
}

// Per-region occupancy inside a RegionSet.
struct RegionInfo {
    std::vector<int> class_counts;
    int total = 0;
    int first_seen = 0;  // insertion ordinal, deterministic iteration order
};

// Populated Region Set at one layer: the distinct sign patterns of a sample
// set, with per-class occupancy counts.
struct RegionSet {
    int layer = 0;
    int width = 0;
    int num_classes = 0;
    int total_samples = 0;
    std::unordered_map<SignPattern, RegionInfo, SignPatternHash> regions;
    std::vector<SignPattern> order;  // insertion order

    void insert(const SignPattern& p, int label) {
        auto it = regions.find(p);
        if (it == regions.end()) {
            RegionInfo info;
            info.class_counts.assign(num_classes, 0);
            info.first_seen = static_cast<int>(order.size());
            it = regions.emplace(p, std::move(info)).first;
            order.push_back(p);
        }
        ++it->second.class_counts[label];
        ++it->second.total;
        ++total_samples;
    }

    bool contains(const SignPattern& p) const { return regions.count(p) > 0; }
    std::size_t size() const { return regions.size(); }

    // Merge counts from another set built at the same layer; iteration order
    // is re-derived deterministically (sorted by bit pattern) afterwards.
    void merge(const RegionSet& other) {
        require(layer == other.layer && width == other.width &&
                    num_classes == other.num_classes,
                ErrorKind::contract, "RegionSet merge across different layers");
        for (const auto& [pattern, info] : other.regions) {
            auto it = regions.find(pattern);
            if (it == regions.end()) {
                it = regions.emplace(pattern, RegionInfo{std::vector<int>(num_classes, 0), 0, 0})
                         .first;
                order.push_back(pattern);
            }
            for (int c = 0; c < num_classes; ++c)
                it->second.class_counts[c] += info.class_counts[c];
            it->second.total += info.total;
        }
        total_samples += other.total_samples;
        std::sort(order.begin(), order.end(),
                  [](const SignPattern& a, const SignPattern& b) { return a.lex_less(b); });
        for (std::size_t i = 0; i < order.size(); ++i)
            regions[order[i]].first_seen = static_cast<int>(i);
    }
};

// MR_{l,c} and MRV_{l,c} per class.
template <class S>
struct MajorRegionTable {
    int layer = 0;
    int width = 0;
    std::vector<SignPattern> patterns;      // per class
    std::vector<int> occupancy;             // class-c samples inside MR_{l,c}
    std::vector<std::vector<S>> mrv;        // per class, length width

    int num_classes() const { return static_cast<int>(patterns.size()); }
};

template <class S>
SignPattern sign_pattern(const Model<S>& model, const S* x, int layer) {
    std::vector<S> f = model.eval_features(x, 1, layer);
    return pack_pattern(f.data(), model.feature_width(layer), layer);
}

// All sign patterns of a dataset at one layer. Chunks may run on worker
// threads (set_num_threads); each chunk fills its own slots, so the result
// is thread-count independent.
template <class S>
std::vector<SignPattern> dataset_patterns(const Model<S>& model, const Dataset& data,
                                          int layer, int chunk = 256) {
    int width = model.feature_width(layer);
    std::vector<SignPattern> out(data.n);
    parallel_chunks(data.n, chunk, [&](int start, int count) {
        std::vector<int> idx(count);
        std::iota(idx.begin(), idx.end(), start);
        std::vector<S> batch = gather_batch<S>(data, idx);
        std::vector<S> f = model.eval_features(batch.data(), count, layer);
        for (int i = 0; i < count; ++i)
            out[start + i] = pack_pattern(f.data() + static_cast<std::size_t>(i) * width,
                                          width, layer);
    });
    return out;
}

template <class S>
RegionSet build_prs(const Model<S>& model, const Dataset& data, int layer) {
    require(data.n > 0, ErrorKind::data, "build_prs on an empty dataset");
    RegionSet set;
    set.layer = layer;
    set.width = model.feature_width(layer);
    set.num_classes = data.num_classes;
    std::vector<SignPattern> patterns = dataset_patterns(model, data, layer);
    for (int i = 0; i < data.n; ++i) set.insert(patterns[i], data.labels[i]);
    return set;
}

inline double prs_ratio(const RegionSet& set, int dataset_size) {
    require(dataset_size > 0, ErrorKind::parameter, "prs_ratio with empty dataset");
    return static_cast<double>(set.size()) / dataset_size;
}

// |PRS| at every layer 1..L-1.
template <class S>
std::vector<std::pair<int, std::size_t>> prs_depth_profile(const Model<S>& model,
                                                           const Dataset& data) {
    std::vector<std::pair<int, std::size_t>> profile;
    for (int l = 1; l < model.num_layers(); ++l)
        profile.emplace_back(l, build_prs(model, data, l).size());
    // single-layer model: profile over the lone layer
    if (model.num_layers() == 1)
        profile.emplace_back(1, build_prs(model, data, 1).size());
    return profile;
}

struct InclusionSplit {
    std::vector<int> included;
    std::vector<int> excluded;
    double inclusion_ratio = 0.0;
};

// Partition test samples by membership of their sign pattern in the training
// PRS at the same layer.
template <class S>
InclusionSplit inclusion_split(const Model<S>& model, const RegionSet& train_set,
                               const Dataset& test_data, int layer) {
    require(train_set.layer == layer, ErrorKind::contract,
            "inclusion_split: region set was built at layer " +
                std::to_string(train_set.layer) + ", not " + std::to_string(layer));
    InclusionSplit split;
    std::vector<SignPattern> patterns = dataset_patterns(model, test_data, layer);
    for (int i = 0; i < test_data.n; ++i) {
        if (train_set.contains(patterns[i]))
            split.included.push_back(i);
        else
            split.excluded.push_back(i);
    }
    split.inclusion_ratio = static_cast<double>(split.included.size()) / test_data.n;
    return split;
}

// Per class: the most-occupied region (ties -> lexicographically smaller bit
// pattern) and the mean pre-activation feature vector of that class's
// samples inside it.
template <class S>
MajorRegionTable<S> major_regions(const RegionSet& set, const Model<S>& model,
                                  const Dataset& data, int layer) {
    require(set.layer == layer, ErrorKind::contract, "major_regions: layer mismatch");
    int width = model.feature_width(layer);
    int classes = data.num_classes;
    MajorRegionTable<S> table;
    table.layer = layer;
    table.width = width;
    table.patterns.resize(classes);
    table.occupancy.assign(classes, 0);
    table.mrv.assign(classes, std::vector<S>(width, S(0)));

    for (int c = 0; c < classes; ++c) {
        bool found = false;
        for (const SignPattern& p : set.order) {
            int count = set.regions.at(p).class_counts[c];
            if (count == 0) continue;
            if (!found || count > table.occupancy[c] ||
                (count == table.occupancy[c] && p.lex_less(table.patterns[c]))) {
                table.patterns[c] = p;
                table.occupancy[c] = count;
                found = true;
            }
        }
        require(found, ErrorKind::data,
                "major_regions: class " + std::to_string(c) + " has no samples");
    }

    // accumulate MRV in double to keep the mean stable
    std::vector<std::vector<double>> acc(classes, std::vector<double>(width, 0.0));
    std::vector<SignPattern> patterns = dataset_patterns(model, data, layer);
    const int chunk = 256;
    for (int start = 0; start < data.n; start += chunk) {
        int count = std::min(chunk, data.n - start);
        std::vector<int> idx(count);
        std::iota(idx.begin(), idx.end(), start);
        std::vector<S> batch = gather_batch<S>(data, idx);
        std::vector<S> f = model.eval_features(batch.data(), count, layer);
        for (int i = 0; i < count; ++i) {
            int g = start + i;
            int c = data.labels[g];
            if (patterns[g] == table.patterns[c])
                for (int j = 0; j < width; ++j)
                    acc[c][j] += static_cast<double>(f[static_cast<std::size_t>(i) * width + j]);
        }
    }
    for (int c = 0; c < classes; ++c)
        for (int j = 0; j < width; ++j)
            table.mrv[c][j] = static_cast<S>(acc[c][j] / table.occupancy[c]);
    return table;
}

// Euclidean distance between f_{l:1}(x) and MRV_{l,c}.
template <class S>
double mrv_distance(const Model<S>& model, const S* x, const MajorRegionTable<S>& table,
                    int cls, int layer) {
    require(cls >= 0 && cls < table.num_classes(), ErrorKind::index,
            "mrv_distance: class out of range");
    require(table.layer == layer, ErrorKind::contract, "mrv_distance: layer mismatch");
    std::vector<S> f = model.eval_features(x, 1, layer);
    double acc = 0.0;
    for (int j = 0; j < table.width; ++j) {
        double d = static_cast<double>(f[j]) - static_cast<double>(table.mrv[cls][j]);
        acc += d * d;
    }
    return std::sqrt(acc);
}

struct SliceExtent {
    double umin = 0.0, umax = 1.0, vmin = 0.0, vmax = 1.0;
};

struct SliceMap {
    int nu = 0, nv = 0;
    SliceExtent extent;
    std::vector<int> region_id;        // nu * nv, row-major over v then u
    std::vector<int> predicted_class;  // same layout
    int num_regions = 0;
    // plane coordinates of the three anchors
    double anchor_u[3] = {0, 0, 0};
    double anchor_v[3] = {0, 0, 0};

    int cell(int iu, int iv) const { return iv * nu + iu; }
};

// 2D section of the input space through three anchor inputs: orthonormal
// basis from (a2-a1, a3-a1) by Gram-Schmidt, then an nu x nv grid over the
// extent. Region ids are first-encounter ordinals in scan order.
template <class S>
SliceMap plane_slice_region_map(const Model<S>& model, const S* a1, const S* a2,
                                const S* a3, int nu, int nv, const SliceExtent& extent,
                                int layer) {
    std::size_t dim = model.input_size();
    std::vector<double> e1(dim), e2(dim);
    double norm1 = 0.0;
    for (std::size_t i = 0; i < dim; ++i) {
        e1[i] = static_cast<double>(a2[i]) - static_cast<double>(a1[i]);
        norm1 += e1[i] * e1[i];
    }
    norm1 = std::sqrt(norm1);
    require(norm1 > 1e-12, ErrorKind::geometry, "slice anchors: a2 equals a1");
    for (std::size_t i = 0; i < dim; ++i) e1[i] /= norm1;
    double dot = 0.0;
    for (std::size_t i = 0; i < dim; ++i) {
        e2[i] = static_cast<double>(a3[i]) - static_cast<double>(a1[i]);
        dot += e2[i] * e1[i];
    }
    double norm2 = 0.0;
    for (std::size_t i = 0; i < dim; ++i) {
        e2[i] -= dot * e1[i];
        norm2 += e2[i] * e2[i];
    }
    norm2 = std::sqrt(norm2);
    require(norm2 > 1e-9, ErrorKind::geometry, "slice anchors are collinear");
    for (std::size_t i = 0; i < dim; ++i) e2[i] /= norm2;

    SliceMap map;
    map.nu = nu;
    map.nv = nv;
    map.extent = extent;
    map.region_id.assign(static_cast<std::size_t>(nu) * nv, -1);
    map.predicted_class.assign(static_cast<std::size_t>(nu) * nv, -1);
    // anchor plane coordinates: a1=(0,0), a2=(|a2-a1|,0), a3=(dot,|e2 residual|)
    map.anchor_u[0] = 0.0;
    map.anchor_v[0] = 0.0;
    map.anchor_u[1] = norm1;
    map.anchor_v[1] = 0.0;
    map.anchor_u[2] = dot;
    map.anchor_v[2] = norm2;

    int width = model.feature_width(layer);
    std::unordered_map<SignPattern, int, SignPatternHash> ids;
    const int chunk = 256;
    std::vector<S> batch;
    std::vector<std::size_t> cells;
    auto flush = [&]() {
        if (cells.empty()) return;
        int count = static_cast<int>(cells.size());
        std::vector<S> f = model.eval_features(batch.data(), count, layer);
        std::vector<S> logits = model.eval_features(batch.data(), count, model.num_layers());
        int classes = model.num_classes();
        for (int i = 0; i < count; ++i) {
            SignPattern p = pack_pattern(f.data() + static_cast<std::size_t>(i) * width,
                                         width, layer);
            auto [it, fresh] = ids.emplace(p, static_cast<int>(ids.size()));
            map.region_id[cells[i]] = it->second;
            const S* row = logits.data() + static_cast<std::size_t>(i) * classes;
            int best = 0;
            for (int j = 1; j < classes; ++j)
                if (row[j] > row[best]) best = j;
            map.predicted_class[cells[i]] = best;
        }
        batch.clear();
        cells.clear();
    };
    for (int iv = 0; iv < nv; ++iv) {
        double v = extent.vmin + (extent.vmax - extent.vmin) *
                                     (nv == 1 ? 0.5 : static_cast<double>(iv) / (nv - 1));
        for (int iu = 0; iu < nu; ++iu) {
            double u = extent.umin + (extent.umax - extent.umin) *
                                         (nu == 1 ? 0.5 : static_cast<double>(iu) / (nu - 1));
            for (std::size_t i = 0; i < dim; ++i)
                batch.push_back(static_cast<S>(static_cast<double>(a1[i]) + u * e1[i] +
                                               v * e2[i]));
            cells.push_back(static_cast<std::size_t>(map.cell(iu, iv)));
            if (static_cast<int>(cells.size()) == chunk) flush();
        }
    }
    flush();
    map.num_regions = static_cast<int>(ids.size());
    return map;
}

}  // namespace prslab
