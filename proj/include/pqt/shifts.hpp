#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "pqt/image.hpp"
#include "pqt/rng.hpp"

namespace pqt {

enum class CorruptionType {
    gaussian_noise,
    shot_noise,
    impulse_noise,
    gaussian_blur,
    contrast,
    brightness,
    pixelate,
};

constexpr int kNumCorruptionTypes = 7;
constexpr int kNumSeverities = 5;

const char* to_string(CorruptionType t);
CorruptionType corruption_from_string(const std::string& s);

// Severity-indexed parameter (severity in 1..5).
double corruption_param(CorruptionType type, int severity);

enum class SuiteKind { rotation, corruption };
const char* to_string(SuiteKind k);

struct ShiftSpec {
    SuiteKind kind = SuiteKind::rotation;
    double angle_deg = 0.0;                                  // rotation
    CorruptionType type = CorruptionType::gaussian_noise;    // corruption
    int severity = 1;

    std::string name() const;
};

// Rotation about the image center with bilinear interpolation;
// out-of-support pixels take the per-channel mean intensity.
RgbImage rotate(const RgbImage& image, double angle_deg);

// Seeded corruption; output clamped to [0,255].
RgbImage corrupt(const RgbImage& image, CorruptionType type, int severity, uint64_t seed);

// Float-plane cores (values nominally in [0,1]); the corruption core does
// not clamp, so linear-map properties hold exactly. The uint8 wrappers
// clamp and round.
std::vector<double> rotate_plane(const std::vector<double>& src, int h, int w, double angle_deg,
                                 double fill);
void corrupt_plane(std::vector<double>& plane, int h, int w, CorruptionType type, double param,
                   Rng& rng);

std::vector<ShiftSpec> shift_specs(SuiteKind kind);

// Transforms every sample; ids and labels are preserved. Stochastic
// corruptions derive a per-image stream from (seed, spec, id).
std::vector<Sample> apply_shift(const std::vector<Sample>& testset, const ShiftSpec& spec,
                                uint64_t seed);

std::vector<std::pair<ShiftSpec, std::vector<Sample>>> build_suite(
    const std::vector<Sample>& testset, SuiteKind kind, uint64_t seed);

} // namespace pqt
