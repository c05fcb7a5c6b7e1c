#include "treepos/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>

static_assert(std::endian::native == std::endian::little,
              "checkpoint blobs are written as little-endian float32");

namespace treepos {

namespace {

constexpr char kMagic[8] = {'T', 'P', 'O', 'S', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kVersion = 1;

void write_u32(std::ostream& out, std::uint32_t v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

std::uint32_t read_u32(std::istream& in) {
    std::uint32_t v = 0;
    in.read(reinterpret_cast<char*>(&v), sizeof v);
    if (!in) throw std::runtime_error("checkpoint truncated");
    return v;
}

void write_str(std::ostream& out, const std::string& s) {
    write_u32(out, std::uint32_t(s.size()));
    out.write(s.data(), std::streamsize(s.size()));
}

std::string read_str(std::istream& in) {
    std::uint32_t len = read_u32(in);
    std::string s(len, '\0');
    in.read(s.data(), std::streamsize(len));
    if (!in) throw std::runtime_error("checkpoint truncated");
    return s;
}

}  // namespace

void save_checkpoint(const std::string& path, const nlohmann::json& config,
                     const ParamStore<float>& params) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open checkpoint for writing: " + path);
    out.write(kMagic, sizeof kMagic);
    write_u32(out, kVersion);
    write_str(out, config.dump());
    write_u32(out, std::uint32_t(params.entries().size()));
    for (const auto& [name, t] : params.entries()) {
        write_str(out, name);
        write_u32(out, std::uint32_t(t.shape.size()));
        for (int e : t.shape) write_u32(out, std::uint32_t(e));
        out.write(reinterpret_cast<const char*>(t.data.data()),
                  std::streamsize(t.data.size() * sizeof(float)));
    }
    if (!out) throw std::runtime_error("failed writing checkpoint: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open checkpoint: " + path);
    char magic[8];
    in.read(magic, sizeof magic);
    if (!in || std::memcmp(magic, kMagic, sizeof kMagic) != 0)
        throw std::runtime_error("not a checkpoint file: " + path);
    std::uint32_t version = read_u32(in);
    if (version != kVersion)
        throw std::runtime_error("unsupported checkpoint version " + std::to_string(version));

    Checkpoint ck;
    ck.config = nlohmann::json::parse(read_str(in));
    std::uint32_t count = read_u32(in);
    for (std::uint32_t p = 0; p < count; ++p) {
        std::string name = read_str(in);
        std::uint32_t ndim = read_u32(in);
        std::vector<int> shape(ndim);
        for (std::uint32_t i = 0; i < ndim; ++i) shape[i] = int(read_u32(in));
        Tensor<float> t(shape);
        in.read(reinterpret_cast<char*>(t.data.data()),
                std::streamsize(t.data.size() * sizeof(float)));
        if (!in) throw std::runtime_error("checkpoint truncated in blob '" + name + "'");
        ck.params.emplace(std::move(name), std::move(t));
    }
    return ck;
}

void load_into(ParamStore<float>& store, const Checkpoint& ck) {
    if (ck.params.size() != store.entries().size())
        throw std::runtime_error("checkpoint parameter count mismatch");
    for (auto& [name, t] : store.entries()) {
        auto it = ck.params.find(name);
        if (it == ck.params.end())
            throw std::runtime_error("checkpoint missing parameter '" + name + "'");
        if (it->second.shape != t.shape)
            throw std::runtime_error("checkpoint shape mismatch for '" + name + "'");
        t.data = it->second.data;
        t.zero_grad();
    }
}

}  // namespace treepos
