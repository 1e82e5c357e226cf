#include "mbnet/errors.hpp"
#include "mbnet/tensor_archive.hpp"
#include "oracles.hpp"

#include <doctest.h>

#include <cstring>
#include <fstream>

using namespace mbnet;

namespace {

void write_raw(const std::filesystem::path& path, const std::string& bytes) {
    std::ofstream(path, std::ios::binary) << bytes;
}

std::string floats_le(const std::vector<float>& values) {
    std::string out;
    for (float v : values) {
        uint32_t bits = 0;
        std::memcpy(&bits, &v, 4);
        for (int i = 0; i < 4; ++i) {
            out.push_back(static_cast<char>((bits >> (8 * i)) & 0xFFu));
        }
    }
    return out;
}

}  // namespace

TEST_SUITE("archive") {

TEST_CASE("tensors round-trip bit for bit") {
    oracle::TempDir dir("mbnet-archive");
    const std::vector<NamedTensor> tensors{{"a.weight", torch::randn({2, 3, 3, 3})},
                                           {"a.bias", torch::randn({2})},
                                           {"scalar", torch::tensor(1.5f)},
                                           {"empty", torch::zeros({0, 4})}};
    write_tensor_archive(dir / "m.txt", dir / "w.bin", tensors);
    const auto back = read_tensor_archive(dir / "m.txt", dir / "w.bin");
    REQUIRE(back.size() == tensors.size());
    for (size_t i = 0; i < tensors.size(); ++i) {
        CAPTURE(tensors[i].name);
        CHECK(back[i].name == tensors[i].name);
        CHECK(back[i].value.sizes() == tensors[i].value.sizes());
        CHECK(torch::equal(back[i].value, tensors[i].value));
    }
    CHECK(oracle::read_bytes(dir / "w.bin").size() == (54 + 2 + 1) * 4);
}

TEST_CASE("short manifest lines and comments are accepted") {
    oracle::TempDir dir("mbnet-archive-short");
    write_raw(dir / "w.bin", floats_le({1.0f, 2.0f, 3.0f, 4.0f, 5.0f}));
    std::ofstream(dir / "m.txt") << "# exported weights\n\nx 2,2 0  # first\ny 1 16\n";
    const auto back = read_tensor_archive(dir / "m.txt", dir / "w.bin");
    REQUIRE(back.size() == 2);
    CHECK(torch::equal(back[0].value, torch::tensor({1.0f, 2.0f, 3.0f, 4.0f}).view({2, 2})));
    CHECK(back[1].value.item<float>() == 5.0f);
}

TEST_CASE("inconsistent manifests are corruption errors") {
    oracle::TempDir dir("mbnet-archive-bad");
    write_raw(dir / "w.bin", floats_le({1.0f, 2.0f}));

    std::ofstream(dir / "past.txt") << "x 3 0\n";
    CHECK_THROWS_AS(read_tensor_archive(dir / "past.txt", dir / "w.bin"), CorruptionError);

    std::ofstream(dir / "len.txt") << "x f32 2 0 4\n";
    CHECK_THROWS_AS(read_tensor_archive(dir / "len.txt", dir / "w.bin"), CorruptionError);

    std::ofstream(dir / "dtype.txt") << "x f16 2 0 8\n";
    CHECK_THROWS_AS(read_tensor_archive(dir / "dtype.txt", dir / "w.bin"), CorruptionError);

    std::ofstream(dir / "fields.txt") << "x 2\n";
    CHECK_THROWS_AS(read_tensor_archive(dir / "fields.txt", dir / "w.bin"), CorruptionError);

    std::ofstream(dir / "shape.txt") << "x 2,a 0\n";
    CHECK_THROWS_AS(read_tensor_archive(dir / "shape.txt", dir / "w.bin"), CorruptionError);

    std::ofstream(dir / "short.txt") << "x f32 1 0 4\n";
    CHECK_THROWS_AS(read_tensor_archive(dir / "short.txt", dir / "w.bin"), CorruptionError);

    CHECK_THROWS_AS(read_tensor_archive(dir / "missing.txt", dir / "w.bin"), IoError);
}

TEST_CASE("atomic writes replace contents") {
    oracle::TempDir dir("mbnet-archive-atomic");
    write_file_atomic(dir / "f.txt", "one");
    write_file_atomic(dir / "f.txt", "two");
    CHECK(read_text_file(dir / "f.txt") == "two");
    CHECK_THROWS_AS(write_file_atomic(dir / "no" / "such" / "f.txt", "x"), IoError);
}

}
