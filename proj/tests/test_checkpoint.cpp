#include <catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "elf/checkpoint.hpp"
#include "elf/model.hpp"

using namespace elf;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    std::ostringstream s;
    s << f.rdbuf();
    return s.str();
}

}  // namespace

TEST_CASE("save, load, save is byte-identical") {
    const auto dir = fs::temp_directory_path() / "elf_test_ckpt";
    fs::remove_all(dir);
    fs::create_directories(dir);
    ElfModel<float> a(ModelConfig::desk(), 3);
    a.params().randomize(4);
    write_checkpoint((dir / "a.ckpt").string(), to_checkpoint(a.params()));

    ElfModel<float> b(ModelConfig::desk(), 9);
    load_into(b.params(), read_checkpoint((dir / "a.ckpt").string()));
    for (std::size_t i = 0; i < a.params().size(); ++i)
        CHECK(a.params().entries()[i].tensor.data() == b.params().entries()[i].tensor.data());
    write_checkpoint((dir / "b.ckpt").string(), to_checkpoint(b.params()));
    CHECK(slurp(dir / "a.ckpt") == slurp(dir / "b.ckpt"));
}

TEST_CASE("encoding is order-independent") {
    Checkpoint ck{{"b", {2}, {1, 2}}, {"a", {1, 1}, {3}}};
    Checkpoint rev{ck[1], ck[0]};
    CHECK(encode_checkpoint(ck) == encode_checkpoint(rev));
    const auto back = decode_checkpoint(encode_checkpoint(ck));
    REQUIRE(back.size() == 2);
    CHECK(back[0].name == "a");
    CHECK(back[1].values == std::vector<float>{1, 2});
    CHECK_THROWS_AS(encode_checkpoint({{"a", {2}, {1}}}), Error);
    CHECK_THROWS_AS(encode_checkpoint({{"a", {1}, {1}}, {"a", {1}, {2}}}), Error);
}

TEST_CASE("corrupt files are rejected") {
    const auto bytes = encode_checkpoint({{"w", {3}, {1, 2, 3}}});
    auto flipped = bytes;
    flipped[flipped.size() - 6] ^= 0x01;  // inside the payload
    CHECK_THROWS_WITH(decode_checkpoint(flipped), Catch::Matchers::ContainsSubstring("CRC"));
    auto magic = bytes;
    magic[0] = 'X';
    CHECK_THROWS_WITH(decode_checkpoint(magic), Catch::Matchers::ContainsSubstring("magic"));
    CHECK_THROWS_WITH(decode_checkpoint(bytes.substr(0, bytes.size() - 2)), Catch::Matchers::ContainsSubstring("truncated"));
    CHECK_THROWS_WITH(decode_checkpoint(bytes + "x"), Catch::Matchers::ContainsSubstring("trailing"));
    CHECK_THROWS_AS(read_checkpoint("/nonexistent/x.ckpt"), Error);
}

TEST_CASE("loading checks names and shapes") {
    ElfModel<float> m(ModelConfig::desk(), 1);
    auto ck = to_checkpoint(m.params());
    auto missing = ck;
    missing.pop_back();
    CHECK_THROWS_AS(load_into(m.params(), missing), Error);
    auto renamed = ck;
    renamed[0].name = "nope";
    CHECK_THROWS_AS(load_into(m.params(), renamed), Error);
    auto reshaped = ck;
    reshaped[0].shape = {reshaped[0].values.size()};
    CHECK_THROWS_AS(load_into(m.params(), reshaped), Error);
    ElfModel<float> lw(ModelConfig::elf_lw(), 1);
    CHECK_THROWS_AS(load_into(lw.params(), ck), Error);
}
