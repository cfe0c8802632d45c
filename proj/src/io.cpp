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

#include "mskd/io.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

namespace mskd {

std::string shape_string(const Shape& shape) {
    std::string s = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) s += "x";
        s += std::to_string(shape[i]);
    }
    return s + "]";
}

std::string_view error_code_name(ErrorCode code) noexcept {
    switch (code) {
    case ErrorCode::Shape: return "shape";
    case ErrorCode::InvalidInput: return "input";
    case ErrorCode::Config: return "config";
    case ErrorCode::Data: return "data";
    case ErrorCode::Sampling: return "sampling";
    case ErrorCode::TrainingFailure: return "training";
    case ErrorCode::CorruptCheckpoint: return "checkpoint";
    }
    return "unknown";
}

int error_exit_status(ErrorCode code) noexcept {
    switch (code) {
    case ErrorCode::Config: return 2;
    case ErrorCode::TrainingFailure: return 4;
    case ErrorCode::CorruptCheckpoint: return 5;
    case ErrorCode::Shape:
    case ErrorCode::InvalidInput:
    case ErrorCode::Data:
    case ErrorCode::Sampling: return 3;
    }
    return 1;
}

} // namespace mskd

namespace mskd::io {

std::size_t dtype_size(DType dtype) {
    switch (dtype) {
    case DType::Float32: return 4;
    case DType::Int32: return 4;
    case DType::UInt8: return 1;
    case DType::Float64: return 8;
    }
    return 0;
}

std::vector<char> read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open '" + path.string() + "' for reading");
    return std::vector<char>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

void write_file(const std::filesystem::path& path, std::span<const char> bytes) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot open '" + path.string() + "' for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw DataError("write to '" + path.string() + "' failed");
}

void write_text(const std::filesystem::path& path, std::string_view text) {
    write_file(path, std::span<const char>(text.data(), text.size()));
}

template <typename T> std::vector<char> encode_tensor(const Tensor<T>& t) {
    ByteWriter w;
    w.put_bytes("MSKT", 4);
    w.put(static_cast<std::uint32_t>(dtype_of<T>()));
    w.put(static_cast<std::uint32_t>(t.rank()));
    for (auto d : t.shape()) w.put(static_cast<std::uint64_t>(d));
    w.put_bytes(t.data(), t.size() * sizeof(T));
    return w.bytes();
}

template <typename T> Tensor<T> decode_tensor(std::span<const char> bytes, const std::string& origin) {
    ByteReader r(bytes);
    char magic[4];
    if (!r.get_bytes(magic, 4) || std::memcmp(magic, "MSKT", 4) != 0)
        throw DataError("'" + origin + "' is not an MSKT tensor file");
    auto dtype = r.get<std::uint32_t>();
    auto rank = r.get<std::uint32_t>();
    if (!dtype || !rank) throw DataError("'" + origin + "': truncated tensor header");
    if (*dtype != static_cast<std::uint32_t>(dtype_of<T>()))
        throw DataError("'" + origin + "': dtype code " + std::to_string(*dtype) + ", expected " +
                        std::to_string(static_cast<std::uint32_t>(dtype_of<T>())));
    if (*rank > 8) throw DataError("'" + origin + "': implausible rank " + std::to_string(*rank));
    Shape shape;
    for (std::uint32_t i = 0; i < *rank; ++i) {
        auto d = r.get<std::uint64_t>();
        if (!d) throw DataError("'" + origin + "': truncated tensor shape");
        shape.push_back(static_cast<std::size_t>(*d));
    }
    const std::size_t n = Tensor<T>::element_count(shape);
    if (r.remaining() != n * sizeof(T))
        throw DataError("'" + origin + "': payload is " + std::to_string(r.remaining()) + " bytes, expected " +
                        std::to_string(n * sizeof(T)));
    std::vector<T> values(n);
    r.get_bytes(values.data(), n * sizeof(T));
    return Tensor<T>(std::move(shape), std::move(values));
}

template <typename T> void write_tensor(const std::filesystem::path& path, const Tensor<T>& t) {
    write_file(path, encode_tensor(t));
}

template <typename T> Tensor<T> read_tensor(const std::filesystem::path& path) {
    return decode_tensor<T>(read_file(path), path.string());
}

#define MSKD_INSTANTIATE_TENSOR_IO(T)                                                                \
    template std::vector<char> encode_tensor<T>(const Tensor<T>&);                                   \
    template Tensor<T> decode_tensor<T>(std::span<const char>, const std::string&);                  \
    template void write_tensor<T>(const std::filesystem::path&, const Tensor<T>&);                   \
    template Tensor<T> read_tensor<T>(const std::filesystem::path&);

MSKD_INSTANTIATE_TENSOR_IO(float)
MSKD_INSTANTIATE_TENSOR_IO(double)
MSKD_INSTANTIATE_TENSOR_IO(std::int32_t)
MSKD_INSTANTIATE_TENSOR_IO(std::uint8_t)
#undef MSKD_INSTANTIATE_TENSOR_IO

namespace {

std::string_view trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

} // namespace

std::string format_double(double value) {
    char buf[64];
    auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), value);
    return std::string(buf, end);
}

KeyValues KeyValues::parse(std::string_view text, const std::string& origin) {
    KeyValues kv;
    std::size_t line_no = 0;
    while (!text.empty()) {
        const auto nl = text.find('\n');
        std::string_view line = trim(text.substr(0, nl));
        text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
        ++line_no;
        if (line.empty() || line.front() == '#') continue;
        const auto eq = line.find('=');
        if (eq == std::string_view::npos)
            throw ConfigError(origin + ":" + std::to_string(line_no) + ": expected key=value, got '" +
                              std::string(line) + "'");
        const auto key = trim(line.substr(0, eq));
        if (key.empty()) throw ConfigError(origin + ":" + std::to_string(line_no) + ": empty key");
        kv.set(std::string(key), std::string(trim(line.substr(eq + 1))));
    }
    return kv;
}

KeyValues KeyValues::load(const std::filesystem::path& path) {
    const auto bytes = read_file(path);
    return parse(std::string_view(bytes.data(), bytes.size()), path.string());
}

void KeyValues::set(const std::string& key, std::string value) {
    for (auto& [k, v] : entries_)
        if (k == key) {
            v = std::move(value);
            return;
        }
    entries_.emplace_back(key, std::move(value));
}

void KeyValues::set(const std::string& key, double value) { set(key, format_double(value)); }

bool KeyValues::contains(std::string_view key) const { return find(key).has_value(); }

std::optional<std::string> KeyValues::find(std::string_view key) const {
    for (const auto& [k, v] : entries_)
        if (k == key) return v;
    return std::nullopt;
}

std::string KeyValues::get(std::string_view key) const {
    auto v = find(key);
    if (!v) throw ConfigError("missing key '" + std::string(key) + "'");
    return *v;
}

std::string KeyValues::get_string(std::string_view key, const std::string& fallback) const {
    return find(key).value_or(fallback);
}

long long KeyValues::get_int(std::string_view key, long long fallback) const {
    auto v = find(key);
    if (!v) return fallback;
    long long out = 0;
    auto [end, ec] = std::from_chars(v->data(), v->data() + v->size(), out);
    if (ec != std::errc{} || end != v->data() + v->size())
        throw ConfigError("key '" + std::string(key) + "': '" + *v + "' is not an integer");
    return out;
}

double KeyValues::get_double(std::string_view key, double fallback) const {
    auto v = find(key);
    if (!v) return fallback;
    double out = 0;
    auto [end, ec] = std::from_chars(v->data(), v->data() + v->size(), out);
    if (ec != std::errc{} || end != v->data() + v->size())
        throw ConfigError("key '" + std::string(key) + "': '" + *v + "' is not a number");
    return out;
}

bool KeyValues::get_bool(std::string_view key, bool fallback) const {
    auto v = find(key);
    if (!v) return fallback;
    if (*v == "true" || *v == "1" || *v == "yes") return true;
    if (*v == "false" || *v == "0" || *v == "no") return false;
    throw ConfigError("key '" + std::string(key) + "': '" + *v + "' is not a boolean");
}

std::string KeyValues::to_string() const {
    std::ostringstream out;
    for (const auto& [k, v] : entries_) out << k << '=' << v << '\n';
    return out.str();
}

void KeyValues::save(const std::filesystem::path& path) const { write_text(path, to_string()); }

} // namespace mskd::io
