// Copyright 2026 The MSKD Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "mskd/checkpoint.hpp"

#include <cstring>
#include <map>
#include <string>

#include "mskd/io.hpp"

namespace mskd::model {

namespace {

void put_tensor(io::ByteWriter& w, const std::string& name, const Tensor<float>& t) {
    w.put(static_cast<std::uint32_t>(name.size()));
    w.put_bytes(name.data(), name.size());
    w.put(static_cast<std::uint32_t>(io::DType::Float32));
    w.put(static_cast<std::uint32_t>(t.rank()));
    for (auto d : t.shape()) w.put(static_cast<std::uint64_t>(d));
    w.put_bytes(t.data(), t.size() * sizeof(float));
}

template <typename V> V need(io::ByteReader& r, const char* what) {
    auto v = r.get<V>();
    if (!v) throw CorruptCheckpointError(std::string("truncated checkpoint while reading ") + what, r.offset());
    return *v;
}

} // namespace

std::vector<char> encode_checkpoint(const SegModel& model, const AdamState<float>* optimizer) {
    io::ByteWriter w;
    w.put_bytes("MSKD", 4);
    w.put(kCheckpointVersion);
    const auto& c = model.config();
    for (int v : {c.in_channels, c.out_channels, c.depth, c.base_width, c.feature_tap_level})
        w.put(static_cast<std::int32_t>(v));
    w.put(static_cast<std::uint64_t>(optimizer ? optimizer->step : 0));
    const auto& params = model.parameters();
    w.put(static_cast<std::uint32_t>(params.size() * (optimizer ? 3 : 1)));
    for (const auto& p : params) put_tensor(w, p.name, p.value);
    if (optimizer) {
        for (std::size_t i = 0; i < params.size(); ++i)
            put_tensor(w, "adam.m." + params[i].name, optimizer->first_moment[i]);
        for (std::size_t i = 0; i < params.size(); ++i)
            put_tensor(w, "adam.v." + params[i].name, optimizer->second_moment[i]);
    }
    return w.bytes();
}

Checkpoint decode_checkpoint(std::span<const char> bytes) {
    io::ByteReader r(bytes);
    char magic[4];
    if (!r.get_bytes(magic, 4) || std::memcmp(magic, "MSKD", 4) != 0)
        throw CorruptCheckpointError("bad checkpoint magic", 0);
    const auto version_at = r.offset();
    const auto version = need<std::uint32_t>(r, "version");
    if (version != kCheckpointVersion)
        throw CorruptCheckpointError("unsupported checkpoint version " + std::to_string(version), version_at);

    ModelConfig config;
    const auto config_at = r.offset();
    config.in_channels = need<std::int32_t>(r, "config");
    config.out_channels = need<std::int32_t>(r, "config");
    config.depth = need<std::int32_t>(r, "config");
    config.base_width = need<std::int32_t>(r, "config");
    config.feature_tap_level = need<std::int32_t>(r, "config");
    try {
        config.validate();
    } catch (const ConfigError& e) {
        throw CorruptCheckpointError(std::string("invalid stored model config: ") + e.what(), config_at);
    }
    const auto step = need<std::uint64_t>(r, "optimizer step");
    const auto count = need<std::uint32_t>(r, "tensor count");

    SegModel model = SegModel::empty(config);
    const std::size_t n_params = model.parameters().size();
    if (count != n_params && count != 3 * n_params)
        throw CorruptCheckpointError("checkpoint holds " + std::to_string(count) + " tensors, model has " +
                                     std::to_string(n_params) + " parameters",
                                     r.offset() - 4);

    std::map<std::string, Tensor<float>> tensors;
    for (std::uint32_t t = 0; t < count; ++t) {
        const auto entry_at = r.offset();
        const auto name_len = need<std::uint32_t>(r, "tensor name length");
        if (name_len > 4096) throw CorruptCheckpointError("implausible tensor name length", entry_at);
        std::string name(name_len, '\0');
        if (!r.get_bytes(name.data(), name_len)) throw CorruptCheckpointError("truncated tensor name", r.offset());
        const auto dtype_at = r.offset();
        if (need<std::uint32_t>(r, "dtype") != static_cast<std::uint32_t>(io::DType::Float32))
            throw CorruptCheckpointError("tensor '" + name + "' is not float32", dtype_at);
        const auto rank = need<std::uint32_t>(r, "rank");
        if (rank > 8) throw CorruptCheckpointError("implausible rank for '" + name + "'", dtype_at + 4);
        Shape shape;
        for (std::uint32_t i = 0; i < rank; ++i) shape.push_back(static_cast<std::size_t>(need<std::uint64_t>(r, "shape")));
        const auto payload_at = r.offset();
        const std::size_t n = Tensor<float>::element_count(shape);
        if (n > r.remaining() / sizeof(float))
            throw CorruptCheckpointError("truncated payload for '" + name + "'", payload_at);
        std::vector<float> values(n);
        r.get_bytes(values.data(), n * sizeof(float));
        if (!tensors.emplace(name, Tensor<float>(std::move(shape), std::move(values))).second)
            throw CorruptCheckpointError("duplicate tensor '" + name + "'", entry_at);
    }
    if (!r.at_end()) throw CorruptCheckpointError("trailing bytes after last tensor", r.offset());

    auto take = [&](const std::string& name, const Shape& expected) {
        auto it = tensors.find(name);
        if (it == tensors.end()) throw CorruptCheckpointError("missing tensor '" + name + "'", r.offset());
        if (it->second.shape() != expected)
            throw CorruptCheckpointError("tensor '" + name + "' has shape " + shape_string(it->second.shape()) +
                                         ", expected " + shape_string(expected),
                                         r.offset());
        return std::move(it->second);
    };

    Checkpoint out{std::move(model), std::nullopt};
    for (auto& p : out.model.parameters()) p.value = take(p.name, p.value.shape());
    if (count == 3 * n_params) {
        AdamState<float> state;
        state.step = step;
        for (const auto& p : out.model.parameters()) {
            state.first_moment.push_back(take("adam.m." + p.name, p.value.shape()));
            state.second_moment.push_back(take("adam.v." + p.name, p.value.shape()));
        }
        out.optimizer = std::move(state);
    }
    return out;
}

void save_checkpoint(const std::filesystem::path& path, const SegModel& model, const AdamState<float>* optimizer) {
    io::write_file(path, encode_checkpoint(model, optimizer));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::vector<char> bytes;
    try {
        bytes = io::read_file(path);
    } catch (const DataError&) {
        throw DataError("cannot read checkpoint '" + path.string() + "'");
    }
    return decode_checkpoint(bytes);
}

Checkpoint load_checkpoint_expecting(const std::filesystem::path& path, int expected_out_channels) {
    Checkpoint ck = load_checkpoint(path);
    if (ck.model.config().out_channels != expected_out_channels)
        throw ConfigError("checkpoint '" + path.string() + "' has " + std::to_string(ck.model.config().out_channels) +
                          " output classes, expected " + std::to_string(expected_out_channels));
    return ck;
}

} // namespace mskd::model
