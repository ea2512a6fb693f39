#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "tsimp/array.hpp"
#include "tsimp/rng.hpp"

namespace tsimp {

// Named parameter arrays with Adam moment slots, iterated in name order
// so training trajectories and serialized bytes are deterministic.
class ParamStore {
public:
    struct Slot {
        Array value;
        Array m, v;  // Adam moments
    };

    Array& add(const std::string& name, Array init);
    Array& at(const std::string& name);
    const Array& at(const std::string& name) const;
    bool contains(const std::string& name) const { return slots_.count(name) > 0; }
    Slot& slot(const std::string& name);

    int64_t total_parameters() const;
    std::vector<std::string> names() const;

    auto begin() { return slots_.begin(); }
    auto end() { return slots_.end(); }
    auto begin() const { return slots_.begin(); }
    auto end() const { return slots_.end(); }

    // Uniform +-1/sqrt(fan_in) init helper.
    static Array uniform_init(std::vector<int> shape, int fan_in, Rng& rng);

private:
    std::map<std::string, Slot> slots_;
};

// Versioned on-disk container: magic, format version, JSON manifest
// (arbitrary metadata plus array names/shapes), then raw little-endian
// float32 data in manifest order.
struct Checkpoint {
    std::string manifest_json;  // metadata only; arrays listed separately
    ParamStore params;
};

inline constexpr uint32_t kCheckpointVersion = 1;

void save_checkpoint(const std::string& path, const ParamStore& params,
                     const std::string& manifest_json);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace tsimp
