#include "pqt/dataset_io.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "pqt/csv.hpp"
#include "pqt/rng.hpp"

namespace pqt {

std::vector<Sample> decode_cifar10_binary(const std::vector<uint8_t>& bytes, size_t count,
                                          int num_classes) {
    if (bytes.size() % kCifarRecordBytes != 0) {
        const size_t offset = bytes.size() - bytes.size() % kCifarRecordBytes;
        throw FormatError("cifar10: truncated record at byte offset " + std::to_string(offset) +
                          " (file size " + std::to_string(bytes.size()) +
                          " is not a multiple of " + std::to_string(kCifarRecordBytes) + ")");
    }
    const size_t available = bytes.size() / kCifarRecordBytes;
    if (count > available) {
        throw FormatError("cifar10: requested " + std::to_string(count) + " records but only " +
                          std::to_string(available) + " present");
    }
    std::vector<Sample> out;
    out.reserve(count);
    for (size_t r = 0; r < count; ++r) {
        const uint8_t* rec = bytes.data() + r * kCifarRecordBytes;
        if (rec[0] >= num_classes) {
            throw FormatError("cifar10: label byte " + std::to_string(int(rec[0])) +
                              " out of range [0," + std::to_string(num_classes) + ") in record " +
                              std::to_string(r));
        }
        Sample s;
        s.id = static_cast<int>(r);
        s.clean_label = static_cast<int>(rec[0]);
        s.image = RgbImage(kCifarSide, kCifarSide);
        std::copy(rec + 1, rec + kCifarRecordBytes, s.image.data.begin());
        out.push_back(std::move(s));
    }
    return out;
}

std::vector<Sample> load_cifar10_binary(const std::string& path, size_t count, int num_classes) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cifar10: cannot open '" + path + "'");
    std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                               std::istreambuf_iterator<char>());
    return decode_cifar10_binary(bytes, count, num_classes);
}

std::vector<uint8_t> encode_cifar10_binary(const std::vector<Sample>& samples) {
    std::vector<uint8_t> bytes;
    bytes.reserve(samples.size() * kCifarRecordBytes);
    for (const auto& s : samples) {
        if (!s.clean_label)
            throw ValidationError("cifar10: sample " + std::to_string(s.id) +
                                  " has no label to serialize");
        if (s.image.height != int(kCifarSide) || s.image.width != int(kCifarSide))
            throw ValidationError("cifar10: sample " + std::to_string(s.id) +
                                  " is not 32x32; batch format is fixed-size");
        bytes.push_back(static_cast<uint8_t>(*s.clean_label));
        bytes.insert(bytes.end(), s.image.data.begin(), s.image.data.end());
    }
    return bytes;
}

void save_cifar10_binary(const std::vector<Sample>& samples, const std::string& path) {
    const auto bytes = encode_cifar10_binary(samples);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cifar10: cannot write '" + path + "'");
    out.write(reinterpret_cast<const char*>(bytes.data()), bytes.size());
}

LabelFile load_label_file(const std::string& path, int num_classes) {
    std::ifstream in(path);
    if (!in) throw FormatError("label file: cannot open '" + path + "'");
    LabelFile lf;
    std::string line;
    size_t row = 0;
    bool have_header = false;
    while (std::getline(in, line)) {
        ++row;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const auto cells = split_csv_line(line);
        if (!have_header) {
            if (cells.empty() || cells[0] != "id")
                throw FormatError("label file: expected header starting with 'id' at row " +
                                  std::to_string(row));
            have_header = true;
            continue;
        }
        if (cells.empty() || cells[0].empty())
            throw FormatError("label file: missing id at row " + std::to_string(row));
        const int id = static_cast<int>(parse_long(cells[0]));
        std::vector<int> labels;
        for (size_t i = 1; i < cells.size(); ++i) {
            if (cells[i].empty()) continue; // blank trailing cell
            const long v = parse_long(cells[i]);
            if (v < 0 || v >= num_classes)
                throw ValidationError("label file: label " + std::to_string(v) +
                                      " out of range [0," + std::to_string(num_classes) +
                                      ") at row " + std::to_string(row));
            labels.push_back(static_cast<int>(v));
        }
        if (labels.empty())
            throw ValidationError("label file: no labels for id " + std::to_string(id) +
                                  " at row " + std::to_string(row));
        if (!lf.labels.emplace(id, std::move(labels)).second)
            throw ValidationError("label file: duplicate id " + std::to_string(id) + " at row " +
                                  std::to_string(row));
    }
    if (!have_header) throw FormatError("label file: empty file '" + path + "'");
    return lf;
}

void save_label_file(const LabelFile& lf, const std::string& path) {
    CsvWriter w(path);
    size_t max_labels = 1;
    for (const auto& [id, labels] : lf.labels) max_labels = std::max(max_labels, labels.size());
    std::vector<std::string> header{"id"};
    for (size_t i = 1; i <= max_labels; ++i) header.push_back("label" + std::to_string(i));
    w.row(header);
    std::vector<int> ids;
    ids.reserve(lf.labels.size());
    for (const auto& [id, labels] : lf.labels) ids.push_back(id);
    std::sort(ids.begin(), ids.end());
    for (int id : ids) {
        std::vector<std::string> cells{std::to_string(id)};
        for (int v : lf.labels.at(id)) cells.push_back(std::to_string(v));
        w.row(cells);
    }
}

std::vector<Sample> synthetic_dataset(uint64_t seed, size_t n, int num_classes, int side) {
    if (num_classes < 1 || n < static_cast<size_t>(num_classes))
        throw ValidationError("synthetic_dataset: need n >= C >= 1");
    if (side < 8) throw ValidationError("synthetic_dataset: side must be >= 8");

    std::vector<Sample> out;
    out.reserve(n);
    for (size_t i = 0; i < n; ++i) {
        const int c = static_cast<int>(i % num_classes);
        Rng rng(mix_seed(seed, i));

        // Class determines orientation and spatial frequency; the per-sample
        // nuisance parameters keep the class manifold non-trivial.
        const double angle = c * (180.0 / num_classes) * M_PI / 180.0;
        const double cycles = 2.0 + 0.35 * c;
        const double freq = 2.0 * M_PI * cycles / side;
        const double phase = rng.uniform(-0.6, 0.6);
        const double contrast = rng.uniform(0.3, 1.0);
        const double noise_sigma = 0.03;
        const double ca = std::cos(angle), sa = std::sin(angle);

        Sample s;
        s.id = static_cast<int>(i);
        s.clean_label = c;
        s.image = RgbImage(side, side);
        for (int y = 0; y < side; ++y) {
            for (int x = 0; x < side; ++x) {
                const double u = x * ca + y * sa;
                double v = 0.5 + 0.5 * contrast * std::sin(freq * u + phase);
                v += rng.normal(0.0, noise_sigma);
                v = std::min(1.0, std::max(0.0, v));
                const uint8_t byte = static_cast<uint8_t>(std::lround(v * 255.0));
                for (int ch = 0; ch < 3; ++ch) s.image.at(ch, y, x) = byte;
            }
        }
        out.push_back(std::move(s));
    }
    return out;
}

Dataset make_dataset(std::vector<Sample> samples, int num_classes) {
    Dataset d;
    d.samples = std::move(samples);
    d.num_classes = num_classes;
    for (size_t i = 0; i < d.samples.size(); ++i) {
        if (d.samples[i].id != static_cast<int>(i))
            throw ValidationError("dataset: ids must be dense and contiguous (sample " +
                                  std::to_string(i) + " has id " +
                                  std::to_string(d.samples[i].id) + ")");
    }
    return d;
}

} // namespace pqt
