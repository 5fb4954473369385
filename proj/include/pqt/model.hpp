#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "pqt/image.hpp"

namespace pqt {

// Small convolutional classifier:
//   conv 3x3 -> ReLU -> maxpool 2x2 -> conv 3x3 -> ReLU -> maxpool 2x2
//   -> flatten -> dropout -> dense -> ReLU (features) -> head
// The head is either a linear softmax layer or a per-class RBF kernel
// (distance to class centroids in a learned embedding).
struct ClassifierConfig {
    int input_height = 32;
    int input_width = 32;
    int input_channels = 3;
    int conv1_channels = 16;
    int conv2_channels = 32;
    int dense_width = 64;
    double dropout_p = 0.2; // applied before the dense layer
    int num_classes = 10;
    uint64_t seed = 1;

    void validate() const;
    int pooled1_h() const { return input_height / 2; }
    int pooled1_w() const { return input_width / 2; }
    int pooled2_h() const { return pooled1_h() / 2; }
    int pooled2_w() const { return pooled1_w() / 2; }
    int flat_dim() const { return conv2_channels * pooled2_h() * pooled2_w(); }
};

struct DuqConfig {
    int embed_dim = 32;      // m
    double sigma = 0.1;      // kernel length scale
    double momentum = 0.999; // centroid EMA momentum
};

enum class HeadKind { vanilla, duq };

struct TensorView {
    std::string name;
    std::vector<int> dims;
    size_t offset = 0;
    size_t size = 0;
};

// All gradient-trained weights live in one flat vector (`params`);
// non-gradient state (the DUQ centroids) lives in `state`.
class ConvNet {
public:
    ConvNet() = default;
    ConvNet(const ClassifierConfig& cfg, HeadKind head, const DuqConfig& duq = DuqConfig{});

    const ClassifierConfig& config() const { return cfg_; }
    HeadKind head() const { return head_; }
    const DuqConfig& duq_config() const { return duq_; }

    std::vector<double> params;
    std::vector<double> state;
    const std::vector<TensorView>& param_views() const { return param_views_; }
    const std::vector<TensorView>& state_views() const { return state_views_; }

    double* tensor(const std::string& name);
    const double* tensor(const std::string& name) const;
    const TensorView& view(const std::string& name) const;

    // Seeded He-style initialization; a fresh net with the same config is
    // bit-identical.
    void init_weights();

private:
    ClassifierConfig cfg_;
    HeadKind head_ = HeadKind::vanilla;
    DuqConfig duq_;
    std::vector<TensorView> param_views_;
    std::vector<TensorView> state_views_;
    void build_layout();
};

// CHW doubles in [0,1] from an 8-bit planar image.
std::vector<double> image_to_input(const RgbImage& image);

struct ForwardResult {
    std::vector<double> features; // pre-head dense activations
    std::vector<double> logits;   // vanilla head only; empty for duq
};

// Deterministic forward pass with dropout disabled.
ForwardResult forward(const ConvNet& net, const RgbImage& image);

// softmax(logits) with max-subtraction; dropout disabled.
std::vector<double> predict(const ConvNet& net, const RgbImage& image);

// Mean of `passes` stochastic dropout-enabled softmax passes
// (inverted-dropout scaling). Optionally returns the per-pass
// distributions.
std::vector<double> mc_dropout_predict(const ConvNet& net, const RgbImage& image, int passes,
                                       uint64_t seed,
                                       std::vector<std::vector<double>>* per_pass = nullptr);

struct DuqPrediction {
    std::vector<double> kernels; // K_c in (0,1]
    std::vector<double> probs;   // K / sum(K), or uniform on underflow
    bool underflow = false;
};

DuqPrediction duq_predict(const ConvNet& net, const RgbImage& image);

// Shannon entropy in bits, 0·log 0 := 0.
double entropy_bits(const std::vector<double>& probs);

struct TrainHyper {
    int epochs = 12;
    int batch_size = 64;
    double learning_rate = 0.05;
    double momentum = 0.9;
    double weight_decay = 1e-4;
    uint64_t seed = 1;
    int threads = 0; // 0 = hardware default; never changes results

    void validate() const;
};

struct TrainPairRef {
    int sample_id = 0;
    int label = 0;
};

struct EpochStats {
    int epoch = 0;
    double loss = 0.0;
    double train_acc = 0.0;
};

struct TrainResult {
    ConvNet net;
    std::vector<EpochStats> log;
};

// SGD with momentum on cross-entropy (vanilla) or per-class binary
// cross-entropy over RBF kernels plus a centroid EMA update per batch
// (duq). Deterministic given (pairs, dataset, cfg, hyper): two runs
// produce bit-identical weights.
TrainResult train_classifier(const std::vector<TrainPairRef>& pairs, const Dataset& dataset,
                             const ClassifierConfig& cfg, const TrainHyper& hyper, HeadKind head,
                             const DuqConfig& duq = DuqConfig{});

// Loss + flat parameter gradient for one example; the test suite checks
// this against central finite differences. A fixed dropout mask (one byte
// per flat-layer unit, nonzero = keep) makes the dropout path
// deterministic; pass nullptr to disable dropout.
double loss_and_grad(const ConvNet& net, const std::vector<double>& input, int label,
                     std::vector<double>& grad, const std::vector<uint8_t>* dropout_mask);

} // namespace pqt
