#include <filesystem>
#include <fstream>

#include "doctest.h"

#include "auxmtl/dataset_io.hpp"

using namespace auxmtl;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const char* tag) {
    const fs::path p = fs::temp_directory_path() / (std::string("auxmtl_io_") + tag);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

std::string file_bytes(const fs::path& p) {
    std::ifstream is(p, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>());
}

}  // namespace

TEST_CASE("sample files round-trip bit-exactly") {
    const fs::path dir = temp_dir("roundtrip");
    scenegen::LabelDist dist;
    const scenegen::Sample s = scenegen::generate_sample(1, 0, dist);
    dataset_io::write_sample_file(dir / "s.smt", s);
    const scenegen::Sample r = dataset_io::read_sample_file(dir / "s.smt");
    CHECK(r.h == s.h);
    CHECK(r.w == s.w);
    CHECK(r.image == s.image);
    CHECK(r.depth_m == s.depth_m);
    CHECK(r.mask == s.mask);
    CHECK(r.time_min == s.time_min);
    CHECK(r.weather == s.weather);
    CHECK(r.north_m == s.north_m);
    CHECK(r.east_m == s.east_m);
}

TEST_CASE("sample file magic is enforced") {
    const fs::path dir = temp_dir("magic");
    std::ofstream(dir / "bogus.smt") << "not a sample";
    CHECK_THROWS_AS(dataset_io::read_sample_file(dir / "bogus.smt"), std::runtime_error);
}

TEST_CASE("generate_dataset writes a complete, reproducible dataset") {
    const fs::path dir1 = temp_dir("gen1");
    const fs::path dir2 = temp_dir("gen2");
    scenegen::LabelDist dist;
    dist.img_h = 16;
    dist.img_w = 16;

    const auto m1 = dataset_io::generate_dataset(10, 77, dist, dir1);
    CHECK(m1.size() == 10);
    for (const auto& e : m1) CHECK(fs::exists(dir1 / e.file));

    const auto back = dataset_io::read_manifest(dir1 / "manifest.jsonl");
    CHECK(back.size() == 10);
    CHECK(back[3].north_m == m1[3].north_m);
    CHECK(back[3].file == m1[3].file);

    dataset_io::generate_dataset(10, 77, dist, dir2);
    CHECK(file_bytes(dir1 / "manifest.jsonl") == file_bytes(dir2 / "manifest.jsonl"));
    CHECK(file_bytes(dir1 / "samples/000004.smt") == file_bytes(dir2 / "samples/000004.smt"));
}

TEST_CASE("id lists round-trip") {
    const fs::path dir = temp_dir("ids");
    const std::vector<std::int64_t> ids{3, 1, 8, 0};
    dataset_io::write_id_list(dir / "ids.txt", ids);
    CHECK(dataset_io::read_id_list(dir / "ids.txt") == ids);
}

TEST_CASE("load_samples follows the id list order and validates ids") {
    const fs::path dir = temp_dir("load");
    scenegen::LabelDist dist;
    dist.img_h = 16;
    dist.img_w = 16;
    const auto manifest = dataset_io::generate_dataset(5, 3, dist, dir);
    const auto samples = dataset_io::load_samples(dir, manifest, {4, 0});
    CHECK(samples.size() == 2);
    CHECK(samples[0].north_m == manifest[4].north_m);
    CHECK(samples[1].north_m == manifest[0].north_m);
    CHECK_THROWS_AS(dataset_io::load_samples(dir, manifest, {9}), std::runtime_error);
}
