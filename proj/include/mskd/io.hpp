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

#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <type_traits>
#include <utility>
#include <vector>

#include "mskd/tensor.hpp"

namespace mskd::io {

static_assert(std::endian::native == std::endian::little, "file formats assume a little-endian host");

/// Element type codes shared by tensor files and checkpoints.
enum class DType : std::uint32_t { Float32 = 1, Int32 = 2, UInt8 = 3, Float64 = 4 };

template <typename T> constexpr DType dtype_of();
template <> constexpr DType dtype_of<float>() { return DType::Float32; }
template <> constexpr DType dtype_of<std::int32_t>() { return DType::Int32; }
template <> constexpr DType dtype_of<std::uint8_t>() { return DType::UInt8; }
template <> constexpr DType dtype_of<double>() { return DType::Float64; }

std::size_t dtype_size(DType dtype);

class ByteWriter {
public:
    template <typename T> void put(T value) {
        static_assert(std::is_trivially_copyable_v<T>);
        const auto* p = reinterpret_cast<const char*>(&value);
        bytes_.insert(bytes_.end(), p, p + sizeof(T));
    }
    void put_bytes(const void* data, std::size_t n) {
        const auto* p = static_cast<const char*>(data);
        bytes_.insert(bytes_.end(), p, p + n);
    }
    const std::vector<char>& bytes() const noexcept { return bytes_; }

private:
    std::vector<char> bytes_;
};

/// Bounds-checked reader. Short reads return nullopt/false and leave the
/// offset at the failure point so callers can report it.
class ByteReader {
public:
    explicit ByteReader(std::span<const char> bytes) : bytes_(bytes) {}

    std::uint64_t offset() const noexcept { return offset_; }
    std::size_t remaining() const noexcept { return bytes_.size() - offset_; }
    bool at_end() const noexcept { return offset_ == bytes_.size(); }

    template <typename T> std::optional<T> get() {
        if (remaining() < sizeof(T)) return std::nullopt;
        T value;
        std::memcpy(&value, bytes_.data() + offset_, sizeof(T));
        offset_ += sizeof(T);
        return value;
    }
    bool get_bytes(void* out, std::size_t n) {
        if (remaining() < n) return false;
        std::memcpy(out, bytes_.data() + offset_, n);
        offset_ += n;
        return true;
    }

private:
    std::span<const char> bytes_;
    std::uint64_t offset_ = 0;
};

std::vector<char> read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::span<const char> bytes);
void write_text(const std::filesystem::path& path, std::string_view text);

// MSKT tensor file: "MSKT", u32 dtype, u32 rank, rank × u64 dims, payload.
template <typename T> std::vector<char> encode_tensor(const Tensor<T>& t);
template <typename T> Tensor<T> decode_tensor(std::span<const char> bytes, const std::string& origin);
template <typename T> void write_tensor(const std::filesystem::path& path, const Tensor<T>& t);
template <typename T> Tensor<T> read_tensor(const std::filesystem::path& path);

/// Ordered `key=value` text document; `#` starts a comment line.
class KeyValues {
public:
    static KeyValues parse(std::string_view text, const std::string& origin = "<text>");
    static KeyValues load(const std::filesystem::path& path);

    void set(const std::string& key, std::string value);
    void set(const std::string& key, const char* value) { set(key, std::string(value)); }
    void set(const std::string& key, long long value) { set(key, std::to_string(value)); }
    void set(const std::string& key, int value) { set(key, static_cast<long long>(value)); }
    void set(const std::string& key, std::size_t value) { set(key, static_cast<long long>(value)); }
    void set(const std::string& key, double value);
    void set(const std::string& key, bool value) { set(key, std::string(value ? "true" : "false")); }

    bool contains(std::string_view key) const;
    std::optional<std::string> find(std::string_view key) const;
    std::string get(std::string_view key) const;

    std::string get_string(std::string_view key, const std::string& fallback) const;
    long long get_int(std::string_view key, long long fallback) const;
    double get_double(std::string_view key, double fallback) const;
    bool get_bool(std::string_view key, bool fallback) const;

    const std::vector<std::pair<std::string, std::string>>& entries() const noexcept { return entries_; }
    std::string to_string() const;
    void save(const std::filesystem::path& path) const;

private:
    std::vector<std::pair<std::string, std::string>> entries_;
};

/// Shortest decimal text that round-trips the double exactly.
std::string format_double(double value);

} // namespace mskd::io
