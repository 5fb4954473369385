#include "pqt/shifts.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

namespace pqt {

namespace {

const double kSeverityTables[kNumCorruptionTypes][kNumSeverities] = {
    {0.04, 0.06, 0.08, 0.09, 0.10},  // gaussian_noise: sigma (of full range)
    {60.0, 25.0, 12.0, 5.0, 3.0},    // shot_noise: photon count
    {0.01, 0.02, 0.03, 0.05, 0.07},  // impulse_noise: flip fraction
    {0.4, 0.6, 0.8, 1.0, 1.2},       // gaussian_blur: sigma in pixels
    {0.75, 0.5, 0.4, 0.3, 0.15},     // contrast: scale about the mean
    {0.05, 0.10, 0.15, 0.20, 0.25},  // brightness: offset (of full range)
    {4.0 / 3.0, 1.6, 2.0, 8.0 / 3.0, 4.0}, // pixelate: downsample factor
};

inline int reflect_idx(int i, int n) {
    while (i < 0 || i >= n) {
        if (i < 0) i = -i - 1;
        if (i >= n) i = 2 * n - 1 - i;
    }
    return i;
}

uint64_t fnv1a(const std::string& s) {
    uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

std::vector<double> plane_of(const RgbImage& img, int channel) {
    std::vector<double> out(img.plane_size());
    const uint8_t* src = img.data.data() + channel * img.plane_size();
    for (size_t i = 0; i < out.size(); ++i) out[i] = src[i] / 255.0;
    return out;
}

void store_plane(RgbImage& img, int channel, const std::vector<double>& plane) {
    uint8_t* dst = img.data.data() + channel * img.plane_size();
    for (size_t i = 0; i < plane.size(); ++i) {
        const double v = std::min(1.0, std::max(0.0, plane[i]));
        dst[i] = static_cast<uint8_t>(std::lround(v * 255.0));
    }
}

} // namespace

const char* to_string(CorruptionType t) {
    switch (t) {
        case CorruptionType::gaussian_noise: return "gaussian_noise";
        case CorruptionType::shot_noise: return "shot_noise";
        case CorruptionType::impulse_noise: return "impulse_noise";
        case CorruptionType::gaussian_blur: return "gaussian_blur";
        case CorruptionType::contrast: return "contrast";
        case CorruptionType::brightness: return "brightness";
        case CorruptionType::pixelate: return "pixelate";
    }
    return "?";
}

CorruptionType corruption_from_string(const std::string& s) {
    for (int i = 0; i < kNumCorruptionTypes; ++i) {
        const auto t = static_cast<CorruptionType>(i);
        if (s == to_string(t)) return t;
    }
    throw ConfigError("unknown corruption type '" + s + "'");
}

const char* to_string(SuiteKind k) {
    return k == SuiteKind::rotation ? "rotation" : "corruption";
}

double corruption_param(CorruptionType type, int severity) {
    if (severity < 1 || severity > kNumSeverities)
        throw ConfigError("corruption severity must be in 1..5");
    return kSeverityTables[static_cast<int>(type)][severity - 1];
}

std::string ShiftSpec::name() const {
    char buf[64];
    if (kind == SuiteKind::rotation)
        std::snprintf(buf, sizeof(buf), "rot%03d", static_cast<int>(std::lround(angle_deg)));
    else
        std::snprintf(buf, sizeof(buf), "%s_s%d", to_string(type), severity);
    return buf;
}

std::vector<double> rotate_plane(const std::vector<double>& src, int h, int w, double angle_deg,
                                 double fill) {
    std::vector<double> dst(static_cast<size_t>(h) * w, fill);
    const double theta = angle_deg * M_PI / 180.0;
    const double c = std::cos(theta), s = std::sin(theta);
    const double cx = (w - 1) / 2.0, cy = (h - 1) / 2.0;
    // Tolerance keeps exact grid angles (90, 180) from spilling into the
    // fill region through rounding of cos/sin.
    constexpr double kEdgeTol = 1e-9;
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            const double dx = x - cx, dy = y - cy;
            double sx = cx + c * dx + s * dy;
            double sy = cy - s * dx + c * dy;
            if (sx < -kEdgeTol || sx > (w - 1) + kEdgeTol || sy < -kEdgeTol ||
                sy > (h - 1) + kEdgeTol)
                continue;
            sx = std::min(static_cast<double>(w - 1), std::max(0.0, sx));
            sy = std::min(static_cast<double>(h - 1), std::max(0.0, sy));
            const int x0 = static_cast<int>(sx);
            const int y0 = static_cast<int>(sy);
            const int x1 = std::min(x0 + 1, w - 1);
            const int y1 = std::min(y0 + 1, h - 1);
            const double fx = sx - x0, fy = sy - y0;
            const double v00 = src[static_cast<size_t>(y0) * w + x0];
            const double v01 = src[static_cast<size_t>(y0) * w + x1];
            const double v10 = src[static_cast<size_t>(y1) * w + x0];
            const double v11 = src[static_cast<size_t>(y1) * w + x1];
            dst[static_cast<size_t>(y) * w + x] = (1 - fy) * ((1 - fx) * v00 + fx * v01) +
                                                  fy * ((1 - fx) * v10 + fx * v11);
        }
    }
    return dst;
}

RgbImage rotate(const RgbImage& image, double angle_deg) {
    if (!image.valid()) throw ValidationError("rotate: invalid image");
    if (angle_deg < 0.0 || angle_deg >= 360.0)
        throw ValidationError("rotate: angle must be in [0, 360)");
    RgbImage out(image.height, image.width);
    for (int ch = 0; ch < 3; ++ch) {
        const auto plane = plane_of(image, ch);
        double mean = 0.0;
        for (double v : plane) mean += v;
        mean /= static_cast<double>(plane.size());
        store_plane(out, ch, rotate_plane(plane, image.height, image.width, angle_deg, mean));
    }
    return out;
}

void corrupt_plane(std::vector<double>& plane, int h, int w, CorruptionType type, double param,
                   Rng& rng) {
    switch (type) {
        case CorruptionType::gaussian_noise: {
            for (auto& v : plane) v += rng.normal(0.0, param);
            return;
        }
        case CorruptionType::shot_noise: {
            for (auto& v : plane) {
                const double lam = std::max(0.0, v) * param;
                v = static_cast<double>(rng.poisson(lam)) / param;
            }
            return;
        }
        case CorruptionType::impulse_noise: {
            for (auto& v : plane) {
                if (rng.uniform() < param) v = rng.uniform() < 0.5 ? 0.0 : 1.0;
            }
            return;
        }
        case CorruptionType::gaussian_blur: {
            const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * param)));
            std::vector<double> kernel(2 * radius + 1);
            double sum = 0.0;
            for (int i = -radius; i <= radius; ++i) {
                kernel[i + radius] = std::exp(-(i * i) / (2.0 * param * param));
                sum += kernel[i + radius];
            }
            for (auto& k : kernel) k /= sum;
            std::vector<double> tmp(plane.size());
            for (int y = 0; y < h; ++y)
                for (int x = 0; x < w; ++x) {
                    double acc = 0.0;
                    for (int i = -radius; i <= radius; ++i)
                        acc += kernel[i + radius] *
                               plane[static_cast<size_t>(y) * w + reflect_idx(x + i, w)];
                    tmp[static_cast<size_t>(y) * w + x] = acc;
                }
            for (int y = 0; y < h; ++y)
                for (int x = 0; x < w; ++x) {
                    double acc = 0.0;
                    for (int i = -radius; i <= radius; ++i)
                        acc += kernel[i + radius] *
                               tmp[static_cast<size_t>(reflect_idx(y + i, h)) * w + x];
                    plane[static_cast<size_t>(y) * w + x] = acc;
                }
            return;
        }
        case CorruptionType::contrast: {
            double mean = 0.0;
            for (double v : plane) mean += v;
            mean /= static_cast<double>(plane.size());
            for (auto& v : plane) v = mean + (v - mean) * param;
            return;
        }
        case CorruptionType::brightness: {
            for (auto& v : plane) v += param;
            return;
        }
        case CorruptionType::pixelate: {
            const int sh = std::max(1, static_cast<int>(std::lround(h / param)));
            const int sw = std::max(1, static_cast<int>(std::lround(w / param)));
            std::vector<double> acc(static_cast<size_t>(sh) * sw, 0.0);
            std::vector<int> cnt(acc.size(), 0);
            for (int y = 0; y < h; ++y) {
                const int by = std::min(sh - 1, y * sh / h);
                for (int x = 0; x < w; ++x) {
                    const int bx = std::min(sw - 1, x * sw / w);
                    acc[static_cast<size_t>(by) * sw + bx] += plane[static_cast<size_t>(y) * w + x];
                    cnt[static_cast<size_t>(by) * sw + bx] += 1;
                }
            }
            for (size_t i = 0; i < acc.size(); ++i)
                if (cnt[i] > 0) acc[i] /= cnt[i];
            for (int y = 0; y < h; ++y) {
                const int by = std::min(sh - 1, y * sh / h);
                for (int x = 0; x < w; ++x) {
                    const int bx = std::min(sw - 1, x * sw / w);
                    plane[static_cast<size_t>(y) * w + x] = acc[static_cast<size_t>(by) * sw + bx];
                }
            }
            return;
        }
    }
    throw ConfigError("unknown corruption type");
}

RgbImage corrupt(const RgbImage& image, CorruptionType type, int severity, uint64_t seed) {
    if (!image.valid()) throw ValidationError("corrupt: invalid image");
    const double param = corruption_param(type, severity);
    RgbImage out(image.height, image.width);
    Rng rng(seed);
    for (int ch = 0; ch < 3; ++ch) {
        auto plane = plane_of(image, ch);
        corrupt_plane(plane, image.height, image.width, type, param, rng);
        store_plane(out, ch, plane);
    }
    return out;
}

std::vector<ShiftSpec> shift_specs(SuiteKind kind) {
    std::vector<ShiftSpec> specs;
    if (kind == SuiteKind::rotation) {
        for (int a = 15; a <= 180; a += 15) {
            ShiftSpec s;
            s.kind = SuiteKind::rotation;
            s.angle_deg = a;
            specs.push_back(s);
        }
    } else {
        for (int t = 0; t < kNumCorruptionTypes; ++t)
            for (int sev = 1; sev <= kNumSeverities; ++sev) {
                ShiftSpec s;
                s.kind = SuiteKind::corruption;
                s.type = static_cast<CorruptionType>(t);
                s.severity = sev;
                specs.push_back(s);
            }
    }
    return specs;
}

std::vector<Sample> apply_shift(const std::vector<Sample>& testset, const ShiftSpec& spec,
                                uint64_t seed) {
    std::vector<Sample> out;
    out.reserve(testset.size());
    const uint64_t spec_hash = fnv1a(spec.name());
    for (const auto& s : testset) {
        Sample t = s;
        if (spec.kind == SuiteKind::rotation)
            t.image = rotate(s.image, spec.angle_deg);
        else
            t.image = corrupt(s.image, spec.type, spec.severity,
                              mix_seed(seed, spec_hash, static_cast<uint64_t>(s.id)));
        out.push_back(std::move(t));
    }
    return out;
}

std::vector<std::pair<ShiftSpec, std::vector<Sample>>> build_suite(
    const std::vector<Sample>& testset, SuiteKind kind, uint64_t seed) {
    if (testset.empty()) throw ValidationError("build_suite: empty test set");
    std::vector<std::pair<ShiftSpec, std::vector<Sample>>> out;
    for (const auto& spec : shift_specs(kind))
        out.emplace_back(spec, apply_shift(testset, spec, seed));
    return out;
}

} // namespace pqt
