#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "tsimp/checkpoint.hpp"

using namespace tsimp;
namespace fs = std::filesystem;

namespace {

fs::path temp_file(const char* name) {
    return fs::temp_directory_path() / name;
}

}  // namespace

TEST_CASE("checkpoint round-trips arrays and manifest") {
    ParamStore ps;
    ps.add("b.bias", Array::from({3}, {0.1f, -0.2f, 0.3f}));
    ps.add("a.weight", Array::from({2, 2}, {1.0f, 2.0f, 3.0f, 4.0f}));
    fs::path p = temp_file("tsimp_ckpt_roundtrip.ckpt");
    save_checkpoint(p.string(), ps, "{\"note\":\"x\"}");
    Checkpoint ck = load_checkpoint(p.string());
    CHECK(ck.manifest_json.find("\"note\"") != std::string::npos);
    REQUIRE(ck.params.names() == std::vector<std::string>{"a.weight", "b.bias"});
    CHECK(ck.params.at("a.weight").shape() == std::vector<int>{2, 2});
    for (int i = 0; i < 4; ++i)
        CHECK(ck.params.at("a.weight")[i] == ps.at("a.weight")[i]);
    for (int i = 0; i < 3; ++i)
        CHECK(ck.params.at("b.bias")[i] == ps.at("b.bias")[i]);
    fs::remove(p);
}

TEST_CASE("re-saving identical parameters is byte-identical") {
    ParamStore ps;
    ps.add("w", Array::from({2}, {0.5f, -0.5f}));
    fs::path p1 = temp_file("tsimp_ckpt_a.ckpt");
    fs::path p2 = temp_file("tsimp_ckpt_b.ckpt");
    save_checkpoint(p1.string(), ps, "{}");
    save_checkpoint(p2.string(), ps, "{}");
    std::ifstream f1(p1, std::ios::binary), f2(p2, std::ios::binary);
    std::string s1((std::istreambuf_iterator<char>(f1)), {});
    std::string s2((std::istreambuf_iterator<char>(f2)), {});
    CHECK(s1 == s2);
    fs::remove(p1);
    fs::remove(p2);
}

TEST_CASE("corrupt magic and truncated files are rejected") {
    fs::path p = temp_file("tsimp_ckpt_bad.ckpt");
    {
        std::ofstream os(p, std::ios::binary);
        os << "NOPE  this is not a checkpoint";
    }
    CHECK_THROWS_AS(load_checkpoint(p.string()), Error);
    {
        ParamStore ps;
        ps.add("w", Array::from({4}, {1, 2, 3, 4}));
        save_checkpoint(p.string(), ps, "{}");
        auto sz = fs::file_size(p);
        fs::resize_file(p, sz - 6);  // chop off part of the float payload
    }
    CHECK_THROWS_AS(load_checkpoint(p.string()), Error);
    fs::remove(p);
    CHECK_THROWS_AS(load_checkpoint((fs::temp_directory_path() / "no_such.ckpt").string()),
                    Error);
}

TEST_CASE("total_parameters and uniform_init bounds") {
    ParamStore ps;
    ps.add("a", Array({3, 4}));
    ps.add("b", Array({5}));
    CHECK(ps.total_parameters() == 17);
    Rng rng(1);
    Array w = ParamStore::uniform_init({16, 16}, 16, rng);
    float bound = 1.0f / 4.0f;
    for (int i = 0; i < w.size(); ++i) {
        CHECK(w[i] <= bound);
        CHECK(w[i] >= -bound);
    }
}
