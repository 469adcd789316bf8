#include "fedscope/weights_io.hpp"

#include <cstdint>
#include <fstream>
#include <stdexcept>

namespace fedscope::detector {

namespace {

constexpr char kMagic[4] = {'F', 'S', 'C', 'W'};
constexpr uint32_t kVersion = 1;

void put_u32(std::ostream& out, uint32_t v) { out.write(reinterpret_cast<char*>(&v), 4); }

uint32_t get_u32(std::istream& in) {
    uint32_t v = 0;
    in.read(reinterpret_cast<char*>(&v), 4);
    return v;
}

void put_tensor(std::ostream& out, const Tensor& t) {
    put_u32(out, static_cast<uint32_t>(t.shape.size()));
    for (int d : t.shape) put_u32(out, static_cast<uint32_t>(d));
    out.write(reinterpret_cast<const char*>(t.v.data()),
              static_cast<std::streamsize>(t.v.size() * sizeof(double)));
}

Tensor get_tensor(std::istream& in) {
    uint32_t rank = get_u32(in);
    if (rank > 8) throw std::runtime_error("weights file: implausible tensor rank");
    std::vector<int> shape(rank);
    for (auto& d : shape) d = static_cast<int>(get_u32(in));
    Tensor t(shape);
    in.read(reinterpret_cast<char*>(t.v.data()),
            static_cast<std::streamsize>(t.v.size() * sizeof(double)));
    return t;
}

}  // namespace

void save_weights(const std::string& path, const ModelParams& p) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path);
    out.write(kMagic, 4);
    put_u32(out, kVersion);
    put_u32(out, static_cast<uint32_t>(p.num_classes));
    put_u32(out, static_cast<uint32_t>(p.layers.size()));
    for (const Layer& l : p.layers) {
        put_u32(out, static_cast<uint32_t>(l.name.size()));
        out.write(l.name.data(), static_cast<std::streamsize>(l.name.size()));
        put_u32(out, static_cast<uint32_t>(l.spec.in_c));
        put_u32(out, static_cast<uint32_t>(l.spec.out_c));
        put_u32(out, static_cast<uint32_t>(l.spec.ksize));
        put_u32(out, static_cast<uint32_t>(l.spec.stride));
        put_u32(out, static_cast<uint32_t>(l.spec.pad));
        put_tensor(out, l.w);
        put_tensor(out, l.b);
    }
    if (!out) throw std::runtime_error("write failed: " + path);
}

ModelParams load_weights(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot read " + path);
    char magic[4];
    in.read(magic, 4);
    if (!in || std::string(magic, 4) != std::string(kMagic, 4))
        throw std::runtime_error("not a weights file: " + path);
    if (get_u32(in) != kVersion) throw std::runtime_error("unsupported weights version: " + path);
    ModelParams p;
    p.num_classes = static_cast<int>(get_u32(in));
    uint32_t layers = get_u32(in);
    for (uint32_t i = 0; i < layers; ++i) {
        Layer l;
        uint32_t name_len = get_u32(in);
        if (name_len > 256) throw std::runtime_error("weights file: bad layer name");
        l.name.resize(name_len);
        in.read(l.name.data(), name_len);
        l.spec.in_c = static_cast<int>(get_u32(in));
        l.spec.out_c = static_cast<int>(get_u32(in));
        l.spec.ksize = static_cast<int>(get_u32(in));
        l.spec.stride = static_cast<int>(get_u32(in));
        l.spec.pad = static_cast<int>(get_u32(in));
        l.w = get_tensor(in);
        l.b = get_tensor(in);
        p.layers.push_back(std::move(l));
    }
    if (!in) throw std::runtime_error("truncated weights file: " + path);
    return p;
}

}  // namespace fedscope::detector
