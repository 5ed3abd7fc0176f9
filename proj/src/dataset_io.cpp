#include "auxmtl/dataset_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <map>
#include <stdexcept>

#include "json.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

#include "auxmtl/kernels.hpp"

namespace auxmtl::dataset_io {

static_assert(std::endian::native == std::endian::little,
              "sample files are written in native byte order and documented as little-endian");

namespace {

constexpr char kMagic[4] = {'S', 'M', 'T', '1'};

void put_u32(std::ostream& os, std::uint32_t v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

std::uint32_t get_u32(std::istream& is) {
    std::uint32_t v = 0;
    is.read(reinterpret_cast<char*>(&v), sizeof(v));
    return v;
}

void put_field(std::ostream& os, const std::string& name, const std::vector<std::uint32_t>& dims,
               const float* data, std::size_t count) {
    put_u32(os, static_cast<std::uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    put_u32(os, static_cast<std::uint32_t>(dims.size()));
    for (std::uint32_t d : dims) put_u32(os, d);
    os.write(reinterpret_cast<const char*>(data), static_cast<std::streamsize>(count * sizeof(float)));
}

struct Field {
    std::vector<std::uint32_t> dims;
    std::vector<float> data;
};

std::map<std::string, Field> read_fields(std::istream& is, const std::string& path) {
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, kMagic, 4) != 0) {
        throw std::runtime_error("not an SMT1 sample file: " + path);
    }
    const std::uint32_t n_fields = get_u32(is);
    std::map<std::string, Field> fields;
    for (std::uint32_t f = 0; f < n_fields; ++f) {
        const std::uint32_t name_len = get_u32(is);
        std::string name(name_len, '\0');
        is.read(name.data(), name_len);
        Field fd;
        const std::uint32_t rank = get_u32(is);
        std::uint64_t count = 1;
        for (std::uint32_t r = 0; r < rank; ++r) {
            fd.dims.push_back(get_u32(is));
            count *= fd.dims.back();
        }
        fd.data.resize(count);
        is.read(reinterpret_cast<char*>(fd.data.data()),
                static_cast<std::streamsize>(count * sizeof(float)));
        if (!is) throw std::runtime_error("truncated sample file: " + path);
        fields.emplace(std::move(name), std::move(fd));
    }
    return fields;
}

const Field& need(const std::map<std::string, Field>& fields, const std::string& name,
                  const std::string& path) {
    auto it = fields.find(name);
    if (it == fields.end()) throw std::runtime_error("sample file missing field '" + name + "': " + path);
    return it->second;
}

}  // namespace

void write_sample_file(const std::filesystem::path& path, const scenegen::Sample& s) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("cannot open for writing: " + path.string());
    const auto h = static_cast<std::uint32_t>(s.h);
    const auto w = static_cast<std::uint32_t>(s.w);

    os.write(kMagic, 4);
    put_u32(os, 6);

    put_field(os, "image", {h, w, 3}, s.image.data(), s.image.size());
    put_field(os, "depth_m", {h, w}, s.depth_m.data(), s.depth_m.size());
    std::vector<float> mask_f(s.mask.size());
    for (std::size_t i = 0; i < s.mask.size(); ++i) mask_f[i] = static_cast<float>(s.mask[i]);
    put_field(os, "mask", {h, w}, mask_f.data(), mask_f.size());
    const float t = static_cast<float>(s.time_min);
    put_field(os, "time_min", {}, &t, 1);
    const float wx = static_cast<float>(s.weather);
    put_field(os, "weather", {}, &wx, 1);
    const float pos[2] = {static_cast<float>(s.north_m), static_cast<float>(s.east_m)};
    put_field(os, "world_pos", {2}, pos, 2);

    if (!os) throw std::runtime_error("write failed: " + path.string());
}

scenegen::Sample read_sample_file(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open sample file: " + path.string());
    const auto fields = read_fields(is, path.string());

    scenegen::Sample s;
    const Field& img = need(fields, "image", path.string());
    if (img.dims.size() != 3 || img.dims[2] != 3) {
        throw std::runtime_error("bad image field in " + path.string());
    }
    s.h = img.dims[0];
    s.w = img.dims[1];
    s.image = img.data;

    const Field& dep = need(fields, "depth_m", path.string());
    s.depth_m = dep.data;
    const Field& msk = need(fields, "mask", path.string());
    s.mask.resize(msk.data.size());
    for (std::size_t i = 0; i < msk.data.size(); ++i) {
        s.mask[i] = static_cast<std::int32_t>(msk.data[i]);
    }
    s.time_min = need(fields, "time_min", path.string()).data.at(0);
    s.weather = static_cast<std::int32_t>(need(fields, "weather", path.string()).data.at(0));
    const Field& pos = need(fields, "world_pos", path.string());
    s.north_m = pos.data.at(0);
    s.east_m = pos.data.at(1);

    if (s.depth_m.size() != static_cast<std::size_t>(s.h * s.w) ||
        s.mask.size() != static_cast<std::size_t>(s.h * s.w)) {
        throw std::runtime_error("inconsistent field extents in " + path.string());
    }
    return s;
}

void write_manifest(const std::filesystem::path& path,
                    const std::vector<scenegen::ManifestEntry>& entries) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw std::runtime_error("cannot open for writing: " + path.string());
    for (const auto& e : entries) {
        nlohmann::json j{{"id", e.id},         {"file", e.file},       {"north_m", e.north_m},
                         {"east_m", e.east_m}, {"time_min", e.time_min}, {"weather", e.weather}};
        os << j.dump() << "\n";
    }
    if (!os) throw std::runtime_error("write failed: " + path.string());
}

std::vector<scenegen::ManifestEntry> read_manifest(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot open manifest: " + path.string());
    std::vector<scenegen::ManifestEntry> entries;
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        const auto j = nlohmann::json::parse(line);
        scenegen::ManifestEntry e;
        e.id = j.at("id").get<std::int64_t>();
        e.file = j.at("file").get<std::string>();
        e.north_m = j.at("north_m").get<double>();
        e.east_m = j.at("east_m").get<double>();
        e.time_min = j.at("time_min").get<double>();
        e.weather = j.at("weather").get<std::int32_t>();
        entries.push_back(std::move(e));
    }
    return entries;
}

std::vector<scenegen::ManifestEntry> generate_dataset(std::int64_t n, std::uint64_t seed,
                                                      const scenegen::LabelDist& dist,
                                                      const std::filesystem::path& out_dir) {
    if (n < 1) throw std::invalid_argument("generate_dataset: n must be >= 1");
    dist.validate();
    std::error_code ec;
    std::filesystem::create_directories(out_dir / "samples", ec);
    if (ec) throw std::runtime_error("cannot create dataset directory " + out_dir.string() +
                                     ": " + ec.message());

    std::vector<scenegen::ManifestEntry> entries(static_cast<std::size_t>(n));
    bool failed = false;
    std::string fail_msg;

    // Samples are pure functions of (seed, index); only the manifest order
    // matters and it is by index.
#pragma omp parallel for schedule(dynamic, 16) if (kernels::parallel_enabled())
    for (std::int64_t i = 0; i < n; ++i) {
        try {
            const scenegen::Sample s = scenegen::generate_sample(seed, i, dist);
            char fname[32];
            std::snprintf(fname, sizeof(fname), "samples/%06lld.smt",
                          static_cast<long long>(i));
            write_sample_file(out_dir / fname, s);
            scenegen::ManifestEntry e;
            e.id = i;
            e.file = fname;
            e.north_m = s.north_m;
            e.east_m = s.east_m;
            e.time_min = s.time_min;
            e.weather = s.weather;
            entries[static_cast<std::size_t>(i)] = std::move(e);
        } catch (const std::exception& ex) {
#pragma omp critical
            {
                failed = true;
                fail_msg = ex.what();
            }
        }
    }
    if (failed) throw std::runtime_error("generate_dataset: " + fail_msg);

    write_manifest(out_dir / "manifest.jsonl", entries);
    return entries;
}

void write_id_list(const std::filesystem::path& path, const std::vector<std::int64_t>& ids) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw std::runtime_error("cannot open for writing: " + path.string());
    for (std::int64_t id : ids) os << id << "\n";
    if (!os) throw std::runtime_error("write failed: " + path.string());
}

std::vector<std::int64_t> read_id_list(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot open id list: " + path.string());
    std::vector<std::int64_t> ids;
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        ids.push_back(std::stoll(line));
    }
    return ids;
}

std::vector<scenegen::Sample> load_samples(const std::filesystem::path& data_dir,
                                           const std::vector<scenegen::ManifestEntry>& manifest,
                                           const std::vector<std::int64_t>& ids) {
    std::map<std::int64_t, const scenegen::ManifestEntry*> by_id;
    for (const auto& e : manifest) by_id[e.id] = &e;
    std::vector<scenegen::Sample> out;
    out.reserve(ids.size());
    for (std::int64_t id : ids) {
        auto it = by_id.find(id);
        if (it == by_id.end()) {
            throw std::runtime_error("id " + std::to_string(id) + " not in manifest");
        }
        out.push_back(read_sample_file(data_dir / it->second->file));
    }
    return out;
}

}  // namespace auxmtl::dataset_io
