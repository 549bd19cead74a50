#include "mba/checkpoint.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

namespace mba {

namespace {

constexpr char kMagic[8] = {'M', 'B', 'A', 'N', 'E', 'T', 'C', 'K'};
constexpr uint32_t kVersion = 1;

template <class T>
void put(std::ostream& os, T v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T get(std::istream& is, const char* what) {
    T v{};
    is.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!is) throw DataError(std::string("checkpoint: truncated file while reading ") + what);
    return v;
}

std::vector<CheckpointEntry> network_entries(Network& net) {
    std::vector<CheckpointEntry> entries;
    for (const auto& p : net.named_params()) entries.push_back({p.name, p.tensor->shape, p.tensor->data});
    for (auto& [name, buf] : net.named_buffers()) entries.push_back({name, {int(buf->size())}, *buf});
    return entries;
}

}  // namespace

void write_checkpoint(const std::vector<CheckpointEntry>& entries, const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw DataError("checkpoint: cannot open '" + path + "' for writing");
    os.write(kMagic, sizeof(kMagic));
    put<uint32_t>(os, kVersion);
    put<uint32_t>(os, uint32_t(entries.size()));
    uint64_t offset = 0;
    for (const auto& e : entries) {
        put<uint16_t>(os, uint16_t(e.name.size()));
        os.write(e.name.data(), std::streamsize(e.name.size()));
        put<uint8_t>(os, 0);  // f32
        put<uint8_t>(os, uint8_t(e.shape.size()));
        for (int d : e.shape) put<int32_t>(os, d);
        put<uint64_t>(os, offset);
        offset += uint64_t(e.values.size()) * sizeof(float);
    }
    for (const auto& e : entries)
        os.write(reinterpret_cast<const char*>(e.values.data()), std::streamsize(e.values.size() * sizeof(float)));
    if (!os) throw DataError("checkpoint: write to '" + path + "' failed");
}

std::vector<CheckpointEntry> read_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("checkpoint: cannot open '" + path + "'");
    char magic[8];
    is.read(magic, sizeof(magic));
    if (!is || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
        throw DataError("checkpoint: '" + path + "' has a bad header");
    uint32_t version = get<uint32_t>(is, "version");
    if (version != kVersion)
        throw DataError("checkpoint: unsupported version " + std::to_string(version) + " in '" + path + "'");
    uint32_t count = get<uint32_t>(is, "tensor count");

    struct Dir {
        std::string name;
        std::vector<int> shape;
        uint64_t offset;
        std::size_t elems;
    };
    std::vector<Dir> dir;
    for (uint32_t i = 0; i < count; ++i) {
        uint16_t namelen = get<uint16_t>(is, "name length");
        std::string name(namelen, '\0');
        is.read(name.data(), namelen);
        if (!is) throw DataError("checkpoint: truncated file while reading a tensor name");
        uint8_t dtype = get<uint8_t>(is, "dtype");
        if (dtype != 0) throw DataError("checkpoint: tensor '" + name + "' has unsupported dtype");
        uint8_t ndim = get<uint8_t>(is, "rank");
        std::vector<int> shape;
        std::size_t elems = 1;
        for (uint8_t d = 0; d < ndim; ++d) {
            int32_t e = get<int32_t>(is, "extent");
            if (e <= 0) throw DataError("checkpoint: tensor '" + name + "' has a non-positive extent");
            shape.push_back(e);
            elems *= std::size_t(e);
        }
        uint64_t offset = get<uint64_t>(is, "offset");
        dir.push_back({std::move(name), std::move(shape), offset, elems});
    }
    std::streampos payload_base = is.tellg();
    std::vector<CheckpointEntry> entries;
    for (auto& d : dir) {
        CheckpointEntry e;
        e.name = d.name;
        e.shape = d.shape;
        e.values.resize(d.elems);
        is.seekg(payload_base + std::streampos(d.offset));
        is.read(reinterpret_cast<char*>(e.values.data()), std::streamsize(d.elems * sizeof(float)));
        if (!is) throw DataError("checkpoint: truncated payload for tensor '" + d.name + "'");
        entries.push_back(std::move(e));
    }
    return entries;
}

void save_checkpoint(Network& net, const std::string& path) { write_checkpoint(network_entries(net), path); }

void load_checkpoint(Network& net, const std::string& path) {
    auto file_entries = read_checkpoint(path);
    std::map<std::string, CheckpointEntry*> by_name;
    for (auto& e : file_entries) by_name[e.name] = &e;

    // stage everything against the live state before touching it
    auto params = net.named_params();
    auto buffers = net.named_buffers();
    std::vector<std::string> missing;
    std::size_t expected = 0;

    auto stage = [&](const std::string& name, const std::vector<int>& shape) -> CheckpointEntry* {
        ++expected;
        auto it = by_name.find(name);
        if (it == by_name.end()) {
            missing.push_back(name);
            return nullptr;
        }
        if (it->second->shape != shape)
            throw DataError("checkpoint: tensor '" + name + "' has shape " + shape_str(it->second->shape) +
                            ", expected " + shape_str(shape));
        return it->second;
    };

    std::vector<std::pair<TensorPtr, CheckpointEntry*>> param_writes;
    for (const auto& p : params)
        if (auto* e = stage(p.name, p.tensor->shape)) param_writes.emplace_back(p.tensor, e);
    std::vector<std::pair<std::vector<float>*, CheckpointEntry*>> buffer_writes;
    for (auto& [name, buf] : buffers)
        if (auto* e = stage(name, {int(buf->size())})) buffer_writes.emplace_back(buf, e);

    if (!missing.empty()) {
        std::ostringstream os;
        os << "checkpoint: '" << path << "' is missing " << missing.size() << " tensors:";
        for (const auto& m : missing) os << ' ' << m;
        throw DataError(os.str());
    }
    if (file_entries.size() != expected) {
        std::ostringstream os;
        os << "checkpoint: '" << path << "' contains unknown tensors:";
        std::map<std::string, bool> known;
        for (const auto& p : params) known[p.name] = true;
        for (auto& [name, buf] : buffers) known[name] = true;
        for (const auto& e : file_entries)
            if (!known.count(e.name)) os << ' ' << e.name;
        throw DataError(os.str());
    }

    for (auto& [tensor, e] : param_writes) tensor->data = e->values;
    for (auto& [buf, e] : buffer_writes) *buf = e->values;
}

void import_backbone(Network& net, const std::string& path) {
    auto file_entries = read_checkpoint(path);
    std::map<std::string, CheckpointEntry*> by_name;
    for (auto& e : file_entries) by_name[e.name] = &e;

    std::size_t loaded = 0;
    auto try_load = [&](const std::string& name, TensorPtr t) {
        auto it = by_name.find(name);
        if (it == by_name.end()) throw DataError("backbone import: '" + path + "' lacks tensor '" + name + "'");
        if (it->second->shape != t->shape)
            throw DataError("backbone import: tensor '" + name + "' has shape " + shape_str(it->second->shape) +
                            ", expected " + shape_str(t->shape));
        t->data = it->second->values;
        ++loaded;
    };
    for (const auto& p : net.named_params())
        if (p.name.rfind("backbone.", 0) == 0) try_load(p.name, p.tensor);
    for (auto& [name, buf] : net.named_buffers()) {
        if (name.rfind("backbone.", 0) != 0) continue;
        auto it = by_name.find(name);
        if (it == by_name.end()) throw DataError("backbone import: '" + path + "' lacks tensor '" + name + "'");
        if (it->second->values.size() != buf->size())
            throw DataError("backbone import: buffer '" + name + "' has wrong length");
        *buf = it->second->values;
        ++loaded;
    }
    if (loaded == 0) throw DataError("backbone import: no trunk tensors found in '" + path + "'");
}

}  // namespace mba
