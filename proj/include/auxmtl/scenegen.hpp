#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"

namespace auxmtl::scenegen {

// Mask class ids.
inline constexpr std::int32_t kBackground = 0;
inline constexpr std::int32_t kCar = 1;
inline constexpr std::int32_t kPedestrian = 2;
inline constexpr std::int32_t kNumMaskClasses = 3;

inline constexpr std::int32_t kNumWeatherClasses = 11;
// 0 clear, 1 overcast, 2 light-rain, 3 heavy-rain, 4 fog, 5 snow,
// 6 thunder, 7 drizzle, 8 haze, 9 dawn-glare, 10 night-clear.
extern const std::array<const char*, kNumWeatherClasses> kWeatherNames;

// Scene camera model, exposed so tests can verify rendered depth against
// the analytic ground plane.
inline constexpr double kCameraHeightM = 1.5;
inline constexpr double kHorizonFrac = 0.4;
inline constexpr double kSkyDepthM = 1000.0;
inline double focal_px(std::int64_t img_h) { return 0.8 * static_cast<double>(img_h); }
inline std::int64_t horizon_row(std::int64_t img_h) {
    return static_cast<std::int64_t>(kHorizonFrac * static_cast<double>(img_h));
}
// Ground-plane depth for a pixel row; rows at or above the horizon are sky.
double ground_depth_m(std::int64_t row, std::int64_t img_h);

// Label-distribution configuration for the generator. Times are drawn from
// a two-peak (morning/evening) mixture by default; weather from the given
// class weights.
struct LabelDist {
    std::int64_t img_h = 64;
    std::int64_t img_w = 48;
    std::vector<double> weather_weights = {0.30, 0.14, 0.10, 0.05, 0.06, 0.04,
                                           0.03, 0.08, 0.08, 0.05, 0.07};
    double time_morning_peak_min = 480.0;
    double time_evening_peak_min = 1080.0;
    double time_sigma_min = 90.0;
    double time_morning_frac = 0.5;
    std::int64_t max_cars = 5;
    std::int64_t max_pedestrians = 5;
    double world_extent_m = 10000.0;

    void validate() const;
    nlohmann::json to_json() const;
    static LabelDist from_json(const nlohmann::json& j);
};

// One synthetic scene. Pixel buffers are float32 and every scalar is
// f32-representable, so the on-disk format round-trips bit-exactly.
struct Sample {
    std::int64_t h = 0, w = 0;
    std::vector<float> image;        // (H,W,3) in [0,1]
    std::vector<float> depth_m;      // (H,W), > 0
    std::vector<std::int32_t> mask;  // (H,W) class ids
    double time_min = 0.0;           // [0,1440)
    std::int32_t weather = 0;        // [0,11)
    double north_m = 0.0, east_m = 0.0;
};

struct SampleMeta {
    double time_min = 0.0;
    std::int32_t weather = 0;
    double north_m = 0.0, east_m = 0.0;
};

// Labels only; consumes the same stream prefix as generate_sample, so the
// metadata of a rendered sample and its meta-only twin are identical.
SampleMeta sample_meta(std::uint64_t seed, std::int64_t index, const LabelDist& dist);

struct PlacedObject {
    std::int32_t cls = kCar;
    double dist_m = 0.0;
};

// Fully deterministic in (seed, index). When objects_out is non-null it
// receives the placed objects in paint order (far to near).
Sample generate_sample(std::uint64_t seed, std::int64_t index, const LabelDist& dist,
                       std::vector<PlacedObject>* objects_out = nullptr);

struct ManifestEntry {
    std::int64_t id = 0;
    std::string file;
    double north_m = 0.0, east_m = 0.0;
    double time_min = 0.0;
    std::int32_t weather = 0;
};

struct SplitSpec {
    double bin_size_m = 65.0;
    std::int64_t n_test_bins = 100;
    double buffer_m = 65.0;
    std::uint64_t rng_seed = 0;

    void validate() const;
};

struct SplitResult {
    std::vector<std::int64_t> train_ids;
    std::vector<std::int64_t> test_ids;
    std::vector<std::int64_t> buffer_ids;
    // (north_min, north_max, east_min, east_max) per selected test bin.
    std::vector<std::array<double, 4>> test_bin_rects;
};

// 2D-histogram split over world position: samples inside the randomly
// selected test bins become test, samples within buffer_m of any test-bin
// boundary are discarded into the buffer set, everything else trains.
// The three id sets partition the manifest.
SplitResult spatial_split(const std::vector<ManifestEntry>& entries, const SplitSpec& spec);

// Boundary distance from a point to an axis-aligned rectangle (0 inside).
double rect_distance(double north, double east, const std::array<double, 4>& rect);

}  // namespace auxmtl::scenegen
