#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "pqt/errors.hpp"

namespace pqt {

// 8-bit RGB raster, channel-planar (all R, then all G, then all B),
// row-major within each plane. Matches the CIFAR-10 record layout.
struct RgbImage {
    int height = 32;
    int width = 32;
    std::vector<uint8_t> data; // height * width * 3

    RgbImage() = default;
    RgbImage(int h, int w) : height(h), width(w), data(static_cast<size_t>(h) * w * 3, 0) {}

    size_t plane_size() const { return static_cast<size_t>(height) * width; }

    uint8_t& at(int channel, int y, int x) {
        return data[channel * plane_size() + static_cast<size_t>(y) * width + x];
    }
    uint8_t at(int channel, int y, int x) const {
        return data[channel * plane_size() + static_cast<size_t>(y) * width + x];
    }

    bool valid() const { return data.size() == plane_size() * 3 && height > 0 && width > 0; }
};

// Single-channel plane of reals in [0,1] (or MSCN coefficients, which are
// unbounded), row-major.
struct GrayPlane {
    int height = 0;
    int width = 0;
    std::vector<double> values;

    GrayPlane() = default;
    GrayPlane(int h, int w) : height(h), width(w), values(static_cast<size_t>(h) * w, 0.0) {}

    double& at(int y, int x) { return values[static_cast<size_t>(y) * width + x]; }
    double at(int y, int x) const { return values[static_cast<size_t>(y) * width + x]; }
};

struct Sample {
    int id = 0;
    RgbImage image;
    std::optional<int> clean_label;
    std::optional<double> quality_score;
};

// A loaded dataset: samples with dense contiguous ids [0, n) and a fixed
// class count.
struct Dataset {
    std::vector<Sample> samples;
    int num_classes = 10;

    size_t size() const { return samples.size(); }
};

} // namespace pqt
