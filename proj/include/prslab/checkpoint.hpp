#pragma once

#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "prslab/error.hpp"
#include "prslab/nn.hpp"

namespace prslab {

// Checkpoint file = one JSON header line + little-endian raw parameter
// buffers (W then b per layer, in layer order) in the stored precision.
struct CheckpointMeta {
    std::uint64_t seed = 0;
    int epoch = 0;
    std::string precision;  // "float32" or "float64"
};

namespace detail {

inline nlohmann::json layer_to_json(const LayerSpec& s) {
    nlohmann::json j;
    j["kind"] = s.kind == LayerKind::dense ? "dense" : "conv";
    j["activation"] = s.activation == Activation::relu ? "relu" : "none";
    if (s.kind == LayerKind::dense) {
        j["units"] = s.units;
    } else {
        j["channels"] = s.channels;
        j["kernel"] = s.kernel;
        j["stride"] = s.stride;
        j["padding"] = s.padding;
    }
    return j;
}

inline LayerSpec layer_from_json(const nlohmann::json& j) {
    LayerSpec s;
    std::string kind = j.at("kind");
    std::string act = j.at("activation");
    s.activation = act == "relu" ? Activation::relu : Activation::none;
    if (kind == "dense") {
        s.kind = LayerKind::dense;
        s.units = j.at("units");
    } else if (kind == "conv") {
        s.kind = LayerKind::conv;
        s.channels = j.at("channels");
        s.kernel = j.at("kernel");
        s.stride = j.at("stride");
        s.padding = j.at("padding");
    } else {
        raise(ErrorKind::format, "unknown layer kind '" + kind + "' in checkpoint");
    }
    return s;
}

template <class S>
constexpr const char* precision_name() {
    if constexpr (sizeof(S) == 4)
        return "float32";
    else
        return "float64";
}

}  // namespace detail

template <class S>
void save_checkpoint(const Model<S>& model, const std::string& path,
                     std::uint64_t seed, int epoch) {
    nlohmann::json header;
    header["format"] = "prslab-checkpoint";
    header["version"] = 1;
    header["precision"] = detail::precision_name<S>();
    header["input_shape"] = model.input_shape();
    header["seed"] = seed;
    header["epoch"] = epoch;
    nlohmann::json layers = nlohmann::json::array();
    nlohmann::json frozen = nlohmann::json::array();
    for (int l = 1; l <= model.num_layers(); ++l) {
        layers.push_back(detail::layer_to_json(model.specs()[l - 1]));
        frozen.push_back(model.frozen(l));
    }
    header["layers"] = layers;
    header["frozen"] = frozen;

    std::ofstream f(path, std::ios::binary);
    require(f.good(), ErrorKind::io, "cannot write checkpoint " + path);
    std::string head = header.dump();
    f.write(head.data(), static_cast<std::streamsize>(head.size()));
    f.put('\n');
    for (int l = 1; l <= model.num_layers(); ++l) {
        const auto& w = model.weight(l).value();
        const auto& b = model.bias(l).value();
        f.write(reinterpret_cast<const char*>(w.data()),
                static_cast<std::streamsize>(w.size() * sizeof(S)));
        f.write(reinterpret_cast<const char*>(b.data()),
                static_cast<std::streamsize>(b.size() * sizeof(S)));
    }
    require(f.good(), ErrorKind::io, "short write on checkpoint " + path);
}

template <class S>
Model<S> load_checkpoint(const std::string& path, CheckpointMeta* meta = nullptr) {
    std::ifstream f(path, std::ios::binary);
    require(f.good(), ErrorKind::io, "cannot open checkpoint " + path);
    std::string head;
    std::getline(f, head);
    nlohmann::json header;
    try {
        header = nlohmann::json::parse(head);
    } catch (const nlohmann::json::exception&) {
        raise(ErrorKind::format, "checkpoint header is not valid JSON: " + path);
    }
    require(header.value("format", "") == "prslab-checkpoint", ErrorKind::format,
            "not a checkpoint file: " + path);
    std::string precision = header.at("precision");
    require(precision == detail::precision_name<S>(), ErrorKind::format,
            "checkpoint precision " + precision + " does not match requested scalar type");
    std::vector<int> ishape = header.at("input_shape").get<std::vector<int>>();
    std::vector<LayerSpec> specs;
    for (const auto& j : header.at("layers")) specs.push_back(detail::layer_from_json(j));
    std::uint64_t seed = header.at("seed");
    Model<S> model(specs, Shape(ishape.begin(), ishape.end()), seed);
    std::vector<bool> frozen;
    for (bool b : header.at("frozen")) frozen.push_back(b);
    require(frozen.size() == specs.size(), ErrorKind::format, "frozen mask length mismatch");
    for (int l = 1; l <= model.num_layers(); ++l) {
        auto& w = model.weight(l).value_mut();
        auto& b = model.bias(l).value_mut();
        f.read(reinterpret_cast<char*>(w.data()),
               static_cast<std::streamsize>(w.size() * sizeof(S)));
        f.read(reinterpret_cast<char*>(b.data()),
               static_cast<std::streamsize>(b.size() * sizeof(S)));
        require(f.gcount() == static_cast<std::streamsize>(b.size() * sizeof(S)),
                ErrorKind::length, "checkpoint truncated: " + path);
        model.set_frozen(l, frozen[static_cast<std::size_t>(l) - 1]);
    }
    if (meta) {
        meta->seed = seed;
        meta->epoch = header.at("epoch");
        meta->precision = precision;
    }
    return model;
}

}  // namespace prslab
