#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "pqt/image.hpp"

namespace pqt {

constexpr size_t kCifarSide = 32;
constexpr size_t kCifarRecordBytes = 1 + 3 * kCifarSide * kCifarSide; // 3073

// Per-sample ordered label lists, exactly as written in the source CSV.
struct LabelFile {
    std::unordered_map<int, std::vector<int>> labels;

    const std::vector<int>& of(int id) const {
        auto it = labels.find(id);
        if (it == labels.end())
            throw ValidationError("label file: no entry for sample id " + std::to_string(id));
        return it->second;
    }
    bool has(int id) const { return labels.count(id) != 0; }
    size_t size() const { return labels.size(); }
};

// CIFAR-10 binary batch: records of 3073 bytes, 1 label byte followed by
// 1024 R + 1024 G + 1024 B bytes, row-major 32x32.
std::vector<Sample> load_cifar10_binary(const std::string& path, size_t count,
                                        int num_classes = 10);
std::vector<Sample> decode_cifar10_binary(const std::vector<uint8_t>& bytes, size_t count,
                                          int num_classes = 10);
std::vector<uint8_t> encode_cifar10_binary(const std::vector<Sample>& samples);
void save_cifar10_binary(const std::vector<Sample>& samples, const std::string& path);

// CSV with header `id,label1[,label2,label3]`; blank trailing cells allowed.
LabelFile load_label_file(const std::string& path, int num_classes);
void save_label_file(const LabelFile& lf, const std::string& path);

// Seeded class-separable image set: class c is an oriented sinusoidal
// grating at angle c*(180/C) degrees with a class-specific spatial
// frequency, plus per-sample phase jitter, random contrast in [0.3, 1.0]
// and Gaussian pixel noise. Classes are balanced to within one sample.
std::vector<Sample> synthetic_dataset(uint64_t seed, size_t n, int num_classes, int side);

Dataset make_dataset(std::vector<Sample> samples, int num_classes);

} // namespace pqt
