#include "gesture/container.hpp"

#include <json.hpp>

#include <cstring>
#include <fstream>
#include <stdexcept>

namespace gesture {

namespace {

constexpr char kMagic[4] = {'R', 'C', 'M', '1'};

static_assert(sizeof(float) == 4 && sizeof(int32_t) == 4);

int64_t byte_len(const TensorEntry& e) { return e.numel() * 4; }

[[noreturn]] void corrupt() { throw std::runtime_error("corrupt container"); }

}  // namespace

MatF TensorEntry::as_f32_matrix() const {
    if (dtype != Dtype::f32 || shape.size() > 2) corrupt();
    const Eigen::Index r = shape.empty() ? 0 : static_cast<Eigen::Index>(shape[0]);
    const Eigen::Index c = shape.size() == 2 ? static_cast<Eigen::Index>(shape[1]) : 1;
    MatF m(r, c);
    std::memcpy(m.data(), f32.data(), f32.size() * 4);
    return m;
}

MatI TensorEntry::as_i32_matrix() const {
    if (dtype != Dtype::i32 || shape.size() > 2) corrupt();
    const Eigen::Index r = shape.empty() ? 0 : static_cast<Eigen::Index>(shape[0]);
    const Eigen::Index c = shape.size() == 2 ? static_cast<Eigen::Index>(shape[1]) : 1;
    MatI m(r, c);
    std::memcpy(m.data(), i32.data(), i32.size() * 4);
    return m;
}

TensorEntry TensorEntry::from_f32(const std::string& name, const MatF& m) {
    TensorEntry e;
    e.name = name;
    e.dtype = Dtype::f32;
    e.shape = {m.rows(), m.cols()};
    e.f32.resize(static_cast<size_t>(m.size()));
    std::memcpy(e.f32.data(), m.data(), e.f32.size() * 4);
    return e;
}

TensorEntry TensorEntry::from_i32(const std::string& name, const MatI& m) {
    TensorEntry e;
    e.name = name;
    e.dtype = Dtype::i32;
    e.shape = {m.rows(), m.cols()};
    e.i32.resize(static_cast<size_t>(m.size()));
    std::memcpy(e.i32.data(), m.data(), e.i32.size() * 4);
    return e;
}

TensorEntry TensorEntry::scalar_f32(const std::string& name, float v) {
    TensorEntry e;
    e.name = name;
    e.dtype = Dtype::f32;
    e.shape = {1};
    e.f32 = {v};
    return e;
}

TensorEntry TensorEntry::scalar_i32(const std::string& name, int32_t v) {
    TensorEntry e;
    e.name = name;
    e.dtype = Dtype::i32;
    e.shape = {1};
    e.i32 = {v};
    return e;
}

TensorEntry TensorEntry::from_text(const std::string& name, const std::string& text) {
    TensorEntry e;
    e.name = name;
    e.dtype = Dtype::i32;
    e.shape = {static_cast<int64_t>(text.size())};
    e.i32.reserve(text.size());
    for (unsigned char c : text) e.i32.push_back(c);
    return e;
}

std::string TensorEntry::as_text() const {
    std::string s;
    s.reserve(i32.size());
    for (int32_t c : i32) s.push_back(static_cast<char>(c));
    return s;
}

void write_container(const std::string& path, const std::vector<TensorEntry>& entries) {
    nlohmann::json header;
    header["entries"] = nlohmann::json::array();
    int64_t offset = 0;
    for (const auto& e : entries) {
        nlohmann::json j;
        j["name"] = e.name;
        j["dtype"] = e.dtype == Dtype::f32 ? "f32" : "i32";
        j["shape"] = e.shape;
        j["offset"] = offset;
        header["entries"].push_back(j);
        offset += byte_len(e);
    }
    const std::string htext = header.dump();

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open " + path);
    out.write(kMagic, 4);
    const uint32_t hlen = static_cast<uint32_t>(htext.size());
    out.write(reinterpret_cast<const char*>(&hlen), 4);
    out.write(htext.data(), static_cast<std::streamsize>(htext.size()));
    for (const auto& e : entries) {
        if (e.dtype == Dtype::f32)
            out.write(reinterpret_cast<const char*>(e.f32.data()),
                      static_cast<std::streamsize>(e.f32.size() * 4));
        else
            out.write(reinterpret_cast<const char*>(e.i32.data()),
                      static_cast<std::streamsize>(e.i32.size() * 4));
    }
    if (!out) throw std::runtime_error("write failed: " + path);
}

std::vector<TensorEntry> read_container(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw MissingInput("cannot open " + path);
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

    if (bytes.size() < 8 || std::memcmp(bytes.data(), kMagic, 4) != 0)
        throw std::runtime_error("not a container");
    uint32_t hlen = 0;
    std::memcpy(&hlen, bytes.data() + 4, 4);
    if (8ull + hlen > bytes.size()) corrupt();

    nlohmann::json header;
    try {
        header = nlohmann::json::parse(bytes.substr(8, hlen));
    } catch (const nlohmann::json::exception&) {
        corrupt();
    }
    if (!header.contains("entries") || !header["entries"].is_array()) corrupt();

    const char* payload = bytes.data() + 8 + hlen;
    const int64_t payload_len = static_cast<int64_t>(bytes.size()) - 8 - hlen;

    std::vector<TensorEntry> entries;
    int64_t total = 0;
    int64_t prev_end = 0;
    for (const auto& j : header["entries"]) {
        TensorEntry e;
        try {
            e.name = j.at("name").get<std::string>();
            const std::string dt = j.at("dtype").get<std::string>();
            if (dt == "f32") e.dtype = Dtype::f32;
            else if (dt == "i32") e.dtype = Dtype::i32;
            else corrupt();
            e.shape = j.at("shape").get<std::vector<int64_t>>();
            const int64_t off = j.at("offset").get<int64_t>();
            const int64_t len = byte_len(e);
            if (off < prev_end || off + len > payload_len) corrupt();
            prev_end = off + len;
            total += len;
            if (e.dtype == Dtype::f32) {
                e.f32.resize(static_cast<size_t>(e.numel()));
                std::memcpy(e.f32.data(), payload + off, static_cast<size_t>(len));
            } else {
                e.i32.resize(static_cast<size_t>(e.numel()));
                std::memcpy(e.i32.data(), payload + off, static_cast<size_t>(len));
            }
        } catch (const nlohmann::json::exception&) {
            corrupt();
        }
        entries.push_back(std::move(e));
    }
    if (total != payload_len) corrupt();
    return entries;
}

const TensorEntry* find_entry(const std::vector<TensorEntry>& entries,
                              const std::string& name) {
    for (const auto& e : entries)
        if (e.name == name) return &e;
    return nullptr;
}

}  // namespace gesture
