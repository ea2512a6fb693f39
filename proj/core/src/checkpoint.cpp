#include "tsimp/checkpoint.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

#include <json.hpp>

namespace tsimp {

using nlohmann::json;

Array& ParamStore::add(const std::string& name, Array init) {
    auto [it, inserted] = slots_.emplace(name, Slot{std::move(init), Array(), Array()});
    if (!inserted) throw Error("ParamStore: duplicate parameter '" + name + "'");
    it->second.m = Array(it->second.value.shape());
    it->second.v = Array(it->second.value.shape());
    return it->second.value;
}

Array& ParamStore::at(const std::string& name) {
    auto it = slots_.find(name);
    if (it == slots_.end()) throw Error("ParamStore: unknown parameter '" + name + "'");
    return it->second.value;
}

const Array& ParamStore::at(const std::string& name) const {
    auto it = slots_.find(name);
    if (it == slots_.end()) throw Error("ParamStore: unknown parameter '" + name + "'");
    return it->second.value;
}

ParamStore::Slot& ParamStore::slot(const std::string& name) {
    auto it = slots_.find(name);
    if (it == slots_.end()) throw Error("ParamStore: unknown parameter '" + name + "'");
    return it->second;
}

int64_t ParamStore::total_parameters() const {
    int64_t n = 0;
    for (const auto& [name, s] : slots_) n += s.value.size();
    return n;
}

std::vector<std::string> ParamStore::names() const {
    std::vector<std::string> out;
    for (const auto& [name, s] : slots_) out.push_back(name);
    return out;
}

Array ParamStore::uniform_init(std::vector<int> shape, int fan_in, Rng& rng) {
    Array a(std::move(shape));
    float bound = 1.0f / std::sqrt(static_cast<float>(std::max(1, fan_in)));
    for (int i = 0; i < a.size(); ++i) a[i] = rng.uniform(-bound, bound);
    return a;
}

namespace {
constexpr char kMagic[4] = {'T', 'S', 'C', 'K'};

void write_u32(std::ostream& os, uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

uint32_t read_u32(std::istream& is) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
           (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
}
}  // namespace

void save_checkpoint(const std::string& path, const ParamStore& params,
                     const std::string& manifest_json) {
    json manifest = manifest_json.empty() ? json::object() : json::parse(manifest_json);
    json arrays = json::array();
    for (const auto& [name, s] : params)
        arrays.push_back({{"name", name}, {"shape", s.value.shape()}});
    json header = {{"version", kCheckpointVersion}, {"manifest", manifest}, {"arrays", arrays}};
    std::string hs = header.dump();

    std::ofstream os(path, std::ios::binary);
    if (!os) throw Error("cannot open checkpoint for writing: " + path);
    os.write(kMagic, 4);
    write_u32(os, kCheckpointVersion);
    write_u32(os, static_cast<uint32_t>(hs.size()));
    os.write(hs.data(), static_cast<std::streamsize>(hs.size()));
    for (const auto& [name, s] : params)
        os.write(reinterpret_cast<const char*>(s.value.data()),
                 static_cast<std::streamsize>(s.value.size() * sizeof(float)));
    if (!os) throw Error("write failure on checkpoint: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw Error("cannot open checkpoint: " + path);
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, kMagic, 4) != 0)
        throw Error("not a checkpoint file: " + path);
    uint32_t version = read_u32(is);
    if (version != kCheckpointVersion)
        throw Error("checkpoint version " + std::to_string(version) + " unsupported (expected " +
                    std::to_string(kCheckpointVersion) + "): " + path);
    uint32_t hlen = read_u32(is);
    std::string hs(hlen, '\0');
    is.read(hs.data(), hlen);
    if (!is) throw Error("truncated checkpoint header: " + path);
    json header = json::parse(hs);

    Checkpoint ck;
    ck.manifest_json = header.at("manifest").dump();
    for (const auto& a : header.at("arrays")) {
        std::vector<int> shape = a.at("shape").get<std::vector<int>>();
        Array arr(shape);
        is.read(reinterpret_cast<char*>(arr.data()),
                static_cast<std::streamsize>(arr.size() * sizeof(float)));
        if (!is) throw Error("truncated checkpoint data: " + path);
        ck.params.add(a.at("name").get<std::string>(), std::move(arr));
    }
    return ck;
}

}  // namespace tsimp
