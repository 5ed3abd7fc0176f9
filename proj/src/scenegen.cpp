#include "auxmtl/scenegen.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <stdexcept>
#include <utility>

#include "auxmtl/util.hpp"

namespace auxmtl::scenegen {

const std::array<const char*, kNumWeatherClasses> kWeatherNames = {
    "clear",   "overcast", "light-rain", "heavy-rain", "fog",        "snow",
    "thunder", "drizzle",  "haze",       "dawn-glare", "night-clear"};

double ground_depth_m(std::int64_t row, std::int64_t img_h) {
    const std::int64_t hor = horizon_row(img_h);
    if (row <= hor) return kSkyDepthM;
    const double d = kCameraHeightM * focal_px(img_h) / static_cast<double>(row - hor);
    return std::min(d, kSkyDepthM);
}

void LabelDist::validate() const {
    if (img_h < 16 || img_w < 16) {
        throw std::invalid_argument("label dist: image must be at least 16x16, got " +
                                    std::to_string(img_h) + "x" + std::to_string(img_w));
    }
    if (weather_weights.size() != static_cast<std::size_t>(kNumWeatherClasses)) {
        throw std::invalid_argument("label dist: need " + std::to_string(kNumWeatherClasses) +
                                    " weather weights, got " + std::to_string(weather_weights.size()));
    }
    double total = 0.0;
    for (double w : weather_weights) {
        if (!(w >= 0.0)) throw std::invalid_argument("label dist: negative weather weight");
        total += w;
    }
    if (!(total > 0.0)) throw std::invalid_argument("label dist: weather weights sum to zero");
    if (!(time_sigma_min > 0.0)) throw std::invalid_argument("label dist: time sigma must be > 0");
    if (!(time_morning_frac >= 0.0 && time_morning_frac <= 1.0)) {
        throw std::invalid_argument("label dist: morning fraction must be in [0,1]");
    }
    if (max_cars < 0 || max_pedestrians < 0) {
        throw std::invalid_argument("label dist: negative object count");
    }
    if (!(world_extent_m > 0.0)) throw std::invalid_argument("label dist: world extent must be > 0");
}

nlohmann::json LabelDist::to_json() const {
    return nlohmann::json{{"img_h", img_h},
                          {"img_w", img_w},
                          {"weather_weights", weather_weights},
                          {"time_morning_peak_min", time_morning_peak_min},
                          {"time_evening_peak_min", time_evening_peak_min},
                          {"time_sigma_min", time_sigma_min},
                          {"time_morning_frac", time_morning_frac},
                          {"max_cars", max_cars},
                          {"max_pedestrians", max_pedestrians},
                          {"world_extent_m", world_extent_m}};
}

LabelDist LabelDist::from_json(const nlohmann::json& j) {
    LabelDist d;
    d.img_h = j.value("img_h", d.img_h);
    d.img_w = j.value("img_w", d.img_w);
    if (j.contains("weather_weights")) {
        d.weather_weights = j.at("weather_weights").get<std::vector<double>>();
    }
    d.time_morning_peak_min = j.value("time_morning_peak_min", d.time_morning_peak_min);
    d.time_evening_peak_min = j.value("time_evening_peak_min", d.time_evening_peak_min);
    d.time_sigma_min = j.value("time_sigma_min", d.time_sigma_min);
    d.time_morning_frac = j.value("time_morning_frac", d.time_morning_frac);
    d.max_cars = j.value("max_cars", d.max_cars);
    d.max_pedestrians = j.value("max_pedestrians", d.max_pedestrians);
    d.world_extent_m = j.value("world_extent_m", d.world_extent_m);
    d.validate();
    return d;
}

namespace {

constexpr std::uint64_t kMetaStream = 0;
constexpr std::uint64_t kSceneStream = 1;

double wrap_day(double t) {
    double r = std::fmod(t, 1440.0);
    if (r < 0.0) r += 1440.0;
    if (r >= 1440.0) r = 0.0;
    return r;
}

SampleMeta draw_meta(Rng& rng, const LabelDist& dist) {
    SampleMeta m;
    const double peak = rng.uniform() < dist.time_morning_frac ? dist.time_morning_peak_min
                                                               : dist.time_evening_peak_min;
    m.time_min = round_f32(wrap_day(rng.normal(peak, dist.time_sigma_min)));
    if (m.time_min >= 1440.0) m.time_min = 0.0;  // f32 rounding at the wrap edge
    m.weather = static_cast<std::int32_t>(rng.discrete(dist.weather_weights));
    m.north_m = round_f32(rng.uniform(0.0, dist.world_extent_m));
    m.east_m = round_f32(rng.uniform(0.0, dist.world_extent_m));
    return m;
}

struct SceneObject {
    std::int32_t cls = kCar;
    double dist_m = 10.0;
    double lateral_m = 0.0;  // world offset from the camera axis
    double width_m = 1.8, height_m = 1.4;
    float r = 0.5f, g = 0.5f, b = 0.5f;
};

// Daylight factor from the minute of day; flat night floor with a sine
// arc between 06:00 and 18:00.
double daylight(double t_min) {
    if (t_min < 360.0 || t_min > 1080.0) return 0.0;
    return std::sin(M_PI * (t_min - 360.0) / 720.0);
}

}  // namespace

SampleMeta sample_meta(std::uint64_t seed, std::int64_t index, const LabelDist& dist) {
    dist.validate();
    Rng rng = Rng::stream(seed, static_cast<std::uint64_t>(index), kMetaStream);
    return draw_meta(rng, dist);
}

Sample generate_sample(std::uint64_t seed, std::int64_t index, const LabelDist& dist,
                       std::vector<PlacedObject>* objects_out) {
    dist.validate();
    Rng meta_rng = Rng::stream(seed, static_cast<std::uint64_t>(index), kMetaStream);
    const SampleMeta meta = draw_meta(meta_rng, dist);

    const std::int64_t h = dist.img_h, w = dist.img_w;
    Sample s;
    s.h = h;
    s.w = w;
    s.time_min = meta.time_min;
    s.weather = meta.weather;
    s.north_m = meta.north_m;
    s.east_m = meta.east_m;
    s.image.assign(static_cast<std::size_t>(h * w * 3), 0.0f);
    s.depth_m.assign(static_cast<std::size_t>(h * w), 0.0f);
    s.mask.assign(static_cast<std::size_t>(h * w), kBackground);

    Rng rng = Rng::stream(seed, static_cast<std::uint64_t>(index), kSceneStream);
    const std::int64_t hor = horizon_row(h);
    const double focal = focal_px(h);

    auto px = [&](std::int64_t y, std::int64_t x) { return y * w + x; };
    auto set_rgb = [&](std::int64_t y, std::int64_t x, double r, double g, double b) {
        const std::size_t i = static_cast<std::size_t>(px(y, x) * 3);
        s.image[i] = static_cast<float>(r);
        s.image[i + 1] = static_cast<float>(g);
        s.image[i + 2] = static_cast<float>(b);
    };

    // Ground plane, sky, and a road band narrowing toward the horizon.
    for (std::int64_t y = 0; y < h; ++y) {
        const double d = ground_depth_m(y, h);
        for (std::int64_t x = 0; x < w; ++x) {
            s.depth_m[static_cast<std::size_t>(px(y, x))] = static_cast<float>(round_f32(d));
            if (y <= hor) {
                set_rgb(y, x, 0.45, 0.62, 0.88);
            } else {
                const double half_road = 0.5 * focal * 3.5 / d;  // 3.5 m half width
                const double off = std::abs(static_cast<double>(x) - 0.5 * (w - 1));
                if (off <= half_road) {
                    const double lane = off < 0.05 * half_road ? 0.12 : 0.0;
                    set_rgb(y, x, 0.30 + lane, 0.30 + lane, 0.32 + lane);
                } else {
                    set_rgb(y, x, 0.22, 0.38, 0.20);
                }
            }
        }
    }

    // Objects, far to near, so the nearest wins each pixel.
    std::vector<SceneObject> objs;
    const std::int64_t n_cars = rng.uniform_int(0, dist.max_cars);
    const std::int64_t n_peds = rng.uniform_int(0, dist.max_pedestrians);
    for (std::int64_t i = 0; i < n_cars; ++i) {
        SceneObject o;
        o.cls = kCar;
        o.dist_m = round_f32(rng.uniform(3.0, 60.0));
        o.lateral_m = rng.uniform(-4.0, 4.0);
        o.width_m = 1.8;
        o.height_m = 1.4;
        o.r = static_cast<float>(rng.uniform(0.2, 0.9));
        o.g = static_cast<float>(rng.uniform(0.2, 0.9));
        o.b = static_cast<float>(rng.uniform(0.2, 0.9));
        objs.push_back(o);
    }
    for (std::int64_t i = 0; i < n_peds; ++i) {
        SceneObject o;
        o.cls = kPedestrian;
        o.dist_m = round_f32(rng.uniform(3.0, 40.0));
        o.lateral_m = rng.uniform(-5.0, 5.0);
        o.width_m = 0.45;
        o.height_m = 1.7;
        o.r = static_cast<float>(rng.uniform(0.5, 0.8));
        o.g = static_cast<float>(rng.uniform(0.2, 0.4));
        o.b = static_cast<float>(rng.uniform(0.15, 0.35));
        objs.push_back(o);
    }
    std::sort(objs.begin(), objs.end(), [](const SceneObject& a, const SceneObject& b) {
        return a.dist_m > b.dist_m;
    });
    if (objects_out) {
        objects_out->clear();
        for (const SceneObject& o : objs) objects_out->push_back({o.cls, o.dist_m});
    }

    for (const SceneObject& o : objs) {
        const double y_bottom = static_cast<double>(hor) + kCameraHeightM * focal / o.dist_m;
        const std::int64_t h_px = std::max<std::int64_t>(1, std::llround(focal * o.height_m / o.dist_m));
        const std::int64_t w_px = std::max<std::int64_t>(1, std::llround(focal * o.width_m / o.dist_m));
        const std::int64_t yb = std::min<std::int64_t>(h - 1, std::llround(y_bottom));
        const std::int64_t y0 = std::max<std::int64_t>(0, yb - h_px + 1);
        const std::int64_t xc = std::llround(0.5 * (w - 1) + focal * o.lateral_m / o.dist_m);
        const std::int64_t x0 = std::max<std::int64_t>(0, xc - w_px / 2);
        const std::int64_t x1 = std::min<std::int64_t>(w - 1, xc + (w_px - 1) / 2);
        if (x0 > x1 || y0 > yb) continue;
        for (std::int64_t y = y0; y <= yb; ++y) {
            for (std::int64_t x = x0; x <= x1; ++x) {
                s.mask[static_cast<std::size_t>(px(y, x))] = o.cls;
                s.depth_m[static_cast<std::size_t>(px(y, x))] = static_cast<float>(o.dist_m);
                set_rgb(y, x, o.r, o.g, o.b);
            }
        }
    }

    // Global illumination from the time of day.
    const double bright = 0.15 + 0.85 * daylight(s.time_min);
    for (float& v : s.image) v = static_cast<float>(v * bright);

    // Weather-specific appearance; labels are untouched.
    const std::int32_t wx = s.weather;
    auto add_noise = [&](double sigma) {
        for (float& v : s.image) v = static_cast<float>(v + rng.normal(0.0, sigma));
    };
    auto scale_all = [&](double f) {
        for (float& v : s.image) v = static_cast<float>(v * f);
    };
    if (wx == 1) {  // overcast
        scale_all(0.72);
    } else if (wx == 4 || wx == 8) {  // fog / haze: blend toward gray by depth
        const double range = wx == 4 ? 25.0 : 80.0;
        for (std::int64_t p = 0; p < h * w; ++p) {
            const double f = 1.0 - std::exp(-static_cast<double>(s.depth_m[static_cast<std::size_t>(p)]) / range);
            for (int c = 0; c < 3; ++c) {
                float& v = s.image[static_cast<std::size_t>(p * 3 + c)];
                v = static_cast<float>(v * (1.0 - f) + 0.6 * bright * f);
            }
        }
    } else if (wx == 2 || wx == 3 || wx == 7) {  // rain family
        const double sigma = wx == 3 ? 0.09 : (wx == 2 ? 0.045 : 0.02);
        const std::int64_t streaks = wx == 3 ? 70 : (wx == 2 ? 30 : 10);
        add_noise(sigma);
        for (std::int64_t i = 0; i < streaks; ++i) {
            const std::int64_t x = rng.uniform_int(0, w - 1);
            const std::int64_t y0 = rng.uniform_int(0, h - 1);
            const std::int64_t len = rng.uniform_int(3, 8);
            for (std::int64_t y = y0; y < std::min(h, y0 + len); ++y) {
                for (int c = 0; c < 3; ++c) {
                    float& v = s.image[static_cast<std::size_t>(px(y, x) * 3 + c)];
                    v = static_cast<float>(v + 0.18);
                }
            }
        }
    } else if (wx == 5) {  // snow speckles
        const std::int64_t flakes = (h * w) / 20;
        for (std::int64_t i = 0; i < flakes; ++i) {
            const std::int64_t x = rng.uniform_int(0, w - 1);
            const std::int64_t y = rng.uniform_int(0, h - 1);
            set_rgb(y, x, 0.95, 0.95, 0.97);
        }
    } else if (wx == 6) {  // thunder: dark scene, occasional flash band
        scale_all(0.5);
        if (rng.uniform() < 0.35) {
            const std::int64_t y0 = rng.uniform_int(0, std::max<std::int64_t>(0, hor - 1));
            for (std::int64_t x = 0; x < w; ++x) {
                set_rgb(y0, x, 0.95, 0.95, 0.85);
            }
        }
    } else if (wx == 9) {  // dawn glare: additive warm gradient
        for (std::int64_t y = 0; y < h; ++y) {
            const double f = 1.0 - static_cast<double>(y) / static_cast<double>(h);
            for (std::int64_t x = 0; x < w; ++x) {
                const std::size_t i = static_cast<std::size_t>(px(y, x) * 3);
                s.image[i] = static_cast<float>(s.image[i] + 0.35 * f);
                s.image[i + 1] = static_cast<float>(s.image[i + 1] + 0.18 * f);
                s.image[i + 2] = static_cast<float>(s.image[i + 2] + 0.04 * f);
            }
        }
    } else if (wx == 10) {  // clear night
        scale_all(0.35);
    }

    // Sensor noise on every class, then clamp and quantize.
    add_noise(0.01);
    for (float& v : s.image) v = std::min(1.0f, std::max(0.0f, v));
    return s;
}

void SplitSpec::validate() const {
    if (!(bin_size_m > 0.0) || !(buffer_m > 0.0) || n_test_bins < 1) {
        throw std::invalid_argument("split spec: bin size, buffer and test-bin count must be positive");
    }
}

double rect_distance(double north, double east, const std::array<double, 4>& rect) {
    const double dn = std::max({rect[0] - north, 0.0, north - rect[1]});
    const double de = std::max({rect[2] - east, 0.0, east - rect[3]});
    return std::hypot(dn, de);
}

SplitResult spatial_split(const std::vector<ManifestEntry>& entries, const SplitSpec& spec) {
    spec.validate();
    using BinKey = std::pair<std::int64_t, std::int64_t>;
    auto bin_of = [&](double north, double east) {
        return BinKey{static_cast<std::int64_t>(std::floor(north / spec.bin_size_m)),
                      static_cast<std::int64_t>(std::floor(east / spec.bin_size_m))};
    };

    std::map<BinKey, std::int64_t> occupied;  // ordered for determinism
    for (const auto& e : entries) occupied[bin_of(e.north_m, e.east_m)]++;

    if (static_cast<std::int64_t>(occupied.size()) < spec.n_test_bins) {
        throw std::runtime_error("spatial_split: only " + std::to_string(occupied.size()) +
                                 " occupied bins for " + std::to_string(spec.n_test_bins) +
                                 " requested test bins");
    }

    std::vector<BinKey> bins;
    bins.reserve(occupied.size());
    for (const auto& [k, cnt] : occupied) bins.push_back(k);

    Rng rng = Rng::stream(spec.rng_seed, 0x5b1, 0);
    // Partial Fisher-Yates: the first n_test_bins entries become test bins.
    for (std::int64_t i = 0; i < spec.n_test_bins; ++i) {
        const auto j = rng.uniform_int(i, static_cast<std::int64_t>(bins.size()) - 1);
        std::swap(bins[static_cast<std::size_t>(i)], bins[static_cast<std::size_t>(j)]);
    }
    std::vector<BinKey> test_bins(bins.begin(), bins.begin() + spec.n_test_bins);
    std::sort(test_bins.begin(), test_bins.end());

    SplitResult res;
    for (const BinKey& k : test_bins) {
        res.test_bin_rects.push_back({static_cast<double>(k.first) * spec.bin_size_m,
                                      static_cast<double>(k.first + 1) * spec.bin_size_m,
                                      static_cast<double>(k.second) * spec.bin_size_m,
                                      static_cast<double>(k.second + 1) * spec.bin_size_m});
    }

    for (const auto& e : entries) {
        const BinKey k = bin_of(e.north_m, e.east_m);
        if (std::binary_search(test_bins.begin(), test_bins.end(), k)) {
            res.test_ids.push_back(e.id);
            continue;
        }
        double dmin = std::numeric_limits<double>::infinity();
        for (const auto& r : res.test_bin_rects) {
            dmin = std::min(dmin, rect_distance(e.north_m, e.east_m, r));
        }
        if (dmin <= spec.buffer_m) {
            res.buffer_ids.push_back(e.id);
        } else {
            res.train_ids.push_back(e.id);
        }
    }
    return res;
}

}  // namespace auxmtl::scenegen
