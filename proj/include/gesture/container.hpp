#pragma once

#include "gesture/mat.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace gesture {

// Portable on-disk tensor container.
// Layout: magic "RCM1" | u32 little-endian header length | UTF-8 JSON header
// describing entries in declaration order | raw little-endian payload.
// Entries tile the payload exactly: offsets never overlap and their byte
// lengths sum to the payload length.

enum class Dtype { f32, i32 };

struct TensorEntry {
    std::string name;
    Dtype dtype = Dtype::f32;
    std::vector<int64_t> shape;
    std::vector<float> f32;
    std::vector<int32_t> i32;

    int64_t numel() const {
        int64_t n = 1;
        for (int64_t d : shape) n *= d;
        return shape.empty() ? 0 : n;
    }

    MatF as_f32_matrix() const;
    MatI as_i32_matrix() const;

    static TensorEntry from_f32(const std::string& name, const MatF& m);
    static TensorEntry from_i32(const std::string& name, const MatI& m);
    static TensorEntry scalar_f32(const std::string& name, float v);
    static TensorEntry scalar_i32(const std::string& name, int32_t v);
    static TensorEntry from_text(const std::string& name, const std::string& text);
    std::string as_text() const;
};

void write_container(const std::string& path, const std::vector<TensorEntry>& entries);
std::vector<TensorEntry> read_container(const std::string& path);

// nullptr when absent
const TensorEntry* find_entry(const std::vector<TensorEntry>& entries,
                              const std::string& name);

}  // namespace gesture
