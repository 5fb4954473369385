#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "pqt/checkpoint.hpp"
#include "pqt/dataset_io.hpp"
#include "pqt/model.hpp"
#include "pqt/rng.hpp"

using namespace pqt;

namespace {

ClassifierConfig tiny_config() {
    ClassifierConfig cfg;
    cfg.input_height = cfg.input_width = 8;
    cfg.input_channels = 3;
    cfg.conv1_channels = 2;
    cfg.conv2_channels = 3;
    cfg.dense_width = 4;
    cfg.num_classes = 3;
    cfg.dropout_p = 0.3;
    cfg.seed = 21;
    return cfg;
}

std::vector<double> random_input(const ClassifierConfig& cfg, uint64_t seed) {
    Rng rng(seed);
    std::vector<double> in(static_cast<size_t>(cfg.input_channels) * cfg.input_height *
                           cfg.input_width);
    for (auto& v : in) v = rng.uniform();
    return in;
}

// Central finite differences over every parameter.
double max_grad_rel_error(ConvNet& net, const std::vector<double>& input, int label,
                          const std::vector<uint8_t>* mask) {
    std::vector<double> grad;
    loss_and_grad(net, input, label, grad, mask);
    const double eps = 1e-4;
    double worst = 0.0;
    std::vector<double> dummy;
    for (size_t i = 0; i < net.params.size(); ++i) {
        const double saved = net.params[i];
        net.params[i] = saved + eps;
        const double up = loss_and_grad(net, input, label, dummy, mask);
        net.params[i] = saved - eps;
        const double down = loss_and_grad(net, input, label, dummy, mask);
        net.params[i] = saved;
        const double fd = (up - down) / (2.0 * eps);
        const double rel = std::abs(grad[i] - fd) / std::max({std::abs(grad[i]), std::abs(fd), 1e-6});
        worst = std::max(worst, rel);
    }
    return worst;
}

int argmax(const std::vector<double>& v) {
    return static_cast<int>(std::max_element(v.begin(), v.end()) - v.begin());
}

RgbImage image_from_input(const ClassifierConfig& cfg, const std::vector<double>& in) {
    RgbImage img(cfg.input_height, cfg.input_width);
    for (size_t i = 0; i < in.size(); ++i)
        img.data[i] = static_cast<uint8_t>(std::lround(in[i] * 255.0));
    return img;
}

} // namespace

TEST_CASE("gradients: vanilla head matches central finite differences") {
    ConvNet net(tiny_config(), HeadKind::vanilla);
    const auto input = random_input(net.config(), 31);
    CHECK(max_grad_rel_error(net, input, 1, nullptr) < 1e-4);
}

TEST_CASE("gradients: vanilla head with a fixed dropout mask") {
    ConvNet net(tiny_config(), HeadKind::vanilla);
    const auto input = random_input(net.config(), 32);
    Rng rng(5);
    std::vector<uint8_t> mask(net.config().flat_dim());
    for (auto& b : mask) b = rng.uniform() < 0.7 ? 1 : 0;
    CHECK(max_grad_rel_error(net, input, 2, &mask) < 1e-4);
}

TEST_CASE("gradients: duq head matches central finite differences") {
    DuqConfig dq;
    dq.embed_dim = 5;
    dq.sigma = 0.3;
    ConvNet net(tiny_config(), HeadKind::duq, dq);
    const auto input = random_input(net.config(), 33);
    CHECK(max_grad_rel_error(net, input, 0, nullptr) < 1e-4);
}

TEST_CASE("forward: deterministic, dim-checked, uniform with a zeroed head") {
    ConvNet net(tiny_config(), HeadKind::vanilla);
    const auto input = random_input(net.config(), 40);
    const auto img = image_from_input(net.config(), input);

    const auto a = forward(net, img);
    const auto b = forward(net, img);
    CHECK(a.logits == b.logits);
    CHECK(a.features == b.features);

    // zero the output layer -> uniform prediction
    const auto& vw = net.view("out.w");
    std::fill(net.params.begin() + vw.offset, net.params.begin() + vw.offset + vw.size, 0.0);
    const auto& vb = net.view("out.b");
    std::fill(net.params.begin() + vb.offset, net.params.begin() + vb.offset + vb.size, 0.0);
    const auto probs = predict(net, img);
    for (double p : probs) CHECK(p == doctest::Approx(1.0 / 3.0).epsilon(1e-12));

    RgbImage wrong(16, 16);
    CHECK_THROWS_AS(forward(net, wrong), ValidationError);
}

TEST_CASE("fresh nets with the same seed are bit-identical") {
    ConvNet a(tiny_config(), HeadKind::vanilla);
    ConvNet b(tiny_config(), HeadKind::vanilla);
    CHECK(a.params == b.params);
}

TEST_CASE("predict: softmax stability and long-double oracle") {
    // Zeroing out.w makes the logits equal out.b exactly, so the production
    // softmax path can be driven with chosen logits.
    ConvNet net(tiny_config(), HeadKind::vanilla);
    const auto& vw = net.view("out.w");
    std::fill(net.params.begin() + vw.offset, net.params.begin() + vw.offset + vw.size, 0.0);
    double* bias = net.tensor("out.b");
    const auto input = random_input(net.config(), 41);
    const auto img = image_from_input(net.config(), input);

    bias[0] = 1000.0;
    bias[1] = 0.0;
    bias[2] = 0.0;
    auto probs = predict(net, img);
    CHECK(std::isfinite(probs[0]));
    CHECK(probs[0] == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(probs[1] == 0.0);

    Rng rng(77);
    for (int trial = 0; trial < 50; ++trial) {
        for (int i = 0; i < 3; ++i) bias[i] = rng.normal(0.0, 5.0);
        probs = predict(net, img);
        const long double m =
            std::max({(long double)bias[0], (long double)bias[1], (long double)bias[2]});
        long double sum = 0.0;
        long double e[3];
        for (int i = 0; i < 3; ++i) {
            e[i] = expl(static_cast<long double>(bias[i]) - m);
            sum += e[i];
        }
        for (int i = 0; i < 3; ++i)
            CHECK(probs[i] == doctest::Approx(static_cast<double>(e[i] / sum)).epsilon(1e-12));
    }
}

TEST_CASE("mc_dropout: degenerate keep-all pass equals predict exactly") {
    auto cfg = tiny_config();
    cfg.dropout_p = 1e-300; // keep-probability rounds to 1 in double
    ConvNet net(cfg, HeadKind::vanilla);
    const auto input = random_input(cfg, 50);
    const auto img = image_from_input(cfg, input);
    const auto mc = mc_dropout_predict(net, img, 1, 9);
    CHECK(mc == predict(net, img));
}

TEST_CASE("mc_dropout: simplex output and per-pass stochasticity") {
    auto cfg = tiny_config();
    cfg.dropout_p = 0.5;
    cfg.dense_width = 16;
    ConvNet net(cfg, HeadKind::vanilla);

    // brief training so features are informative
    auto samples = synthetic_dataset(61, 60, 3, 8);
    Dataset ds = make_dataset(samples, 3);
    std::vector<TrainPairRef> pairs;
    for (const auto& s : ds.samples) pairs.push_back({s.id, *s.clean_label});
    TrainHyper hyper;
    hyper.epochs = 3;
    hyper.batch_size = 16;
    hyper.seed = 4;
    auto trained = train_classifier(pairs, ds, cfg, hyper, HeadKind::vanilla).net;

    std::vector<std::vector<double>> per_pass;
    const auto mean = mc_dropout_predict(trained, ds.samples[0].image, 16, 123, &per_pass);
    double sum = 0.0;
    for (double v : mean) sum += v;
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-6));
    REQUIRE(per_pass.size() == 16);

    // variance of the per-pass max-class probability must be positive
    std::vector<double> maxima;
    for (const auto& p : per_pass) maxima.push_back(*std::max_element(p.begin(), p.end()));
    double m = 0.0;
    for (double v : maxima) m += v;
    m /= maxima.size();
    double var = 0.0;
    for (double v : maxima) var += (v - m) * (v - m);
    CHECK(var > 0.0);

    auto p0 = tiny_config();
    p0.dropout_p = 0.0;
    ConvNet off(p0, HeadKind::vanilla);
    CHECK_THROWS_AS(mc_dropout_predict(off, ds.samples[0].image, 4, 1), ConfigError);
}

TEST_CASE("duq_predict: exact kernel at the centroid, uniform case, recompute oracle") {
    auto cfg = tiny_config();
    DuqConfig dq;
    dq.embed_dim = 4;
    dq.sigma = 0.2;
    ConvNet net(cfg, HeadKind::duq, dq);
    const auto input = random_input(cfg, 60);
    const auto img = image_from_input(cfg, input);

    // Map class 1's centroid exactly onto W_1 f(x).
    const auto fr = forward(net, img);
    const double* W = net.tensor("duq.w");
    double* E = net.tensor("duq.e");
    for (int j = 0; j < 4; ++j) {
        double acc = 0.0;
        const double* row = W + (1 * 4 + j) * cfg.dense_width;
        for (int i = 0; i < cfg.dense_width; ++i) acc += row[i] * fr.features[i];
        E[1 * 4 + j] = acc;
    }
    auto pred = duq_predict(net, img);
    CHECK(pred.kernels[1] == doctest::Approx(1.0).epsilon(1e-12));

    // kernels match a direct recomputation from W and e
    for (int k = 0; k < cfg.num_classes; ++k) {
        double dist2 = 0.0;
        for (int j = 0; j < 4; ++j) {
            double acc = 0.0;
            const double* row = W + (k * 4 + j) * cfg.dense_width;
            for (int i = 0; i < cfg.dense_width; ++i) acc += row[i] * fr.features[i];
            const double d = acc - E[k * 4 + j];
            dist2 += d * d;
        }
        const double expect = std::exp(-dist2 / (2.0 * 4 * 0.2 * 0.2));
        CHECK(pred.kernels[k] == doctest::Approx(expect).epsilon(1e-10));
    }

    // all-equal kernels: zero W collapses z to 0; equal centroids => uniform
    const auto& vw = net.view("duq.w");
    std::fill(net.params.begin() + vw.offset, net.params.begin() + vw.offset + vw.size, 0.0);
    for (int k = 0; k < cfg.num_classes; ++k)
        for (int j = 0; j < 4; ++j) E[k * 4 + j] = 0.5;
    pred = duq_predict(net, img);
    for (double p : pred.probs) CHECK(p == doctest::Approx(1.0 / cfg.num_classes).epsilon(1e-12));
    CHECK(entropy_bits(pred.probs) ==
          doctest::Approx(std::log2(double(cfg.num_classes))).epsilon(1e-9));

    // far-away centroids underflow the kernel sum -> uniform with a flag
    for (int k = 0; k < cfg.num_classes; ++k)
        for (int j = 0; j < 4; ++j) E[k * 4 + j] = 1e6;
    pred = duq_predict(net, img);
    CHECK(pred.underflow);
    for (double p : pred.probs) CHECK(p == doctest::Approx(1.0 / cfg.num_classes));
}

TEST_CASE("entropy: analytic anchors, bounds, permutation invariance") {
    CHECK(entropy_bits({1.0, 0.0, 0.0}) == 0.0);
    CHECK(entropy_bits(std::vector<double>(10, 0.1)) ==
          doctest::Approx(std::log2(10.0)).epsilon(1e-9));
    CHECK(entropy_bits({0.5, 0.5, 0.0, 0.0}) == doctest::Approx(1.0).epsilon(1e-12));

    Rng rng(17);
    for (int trial = 0; trial < 10000; ++trial) {
        std::vector<double> p(10);
        double sum = 0.0;
        for (auto& v : p) {
            v = -std::log(rng.uniform_pos());
            sum += v;
        }
        for (auto& v : p) v /= sum;
        const double h = entropy_bits(p);
        CHECK(h >= 0.0);
        CHECK(h <= std::log2(10.0) + 1e-12);

        auto q = p;
        Rng shuffle_rng(trial);
        shuffle_rng.shuffle(q);
        CHECK(entropy_bits(q) == doctest::Approx(h).epsilon(1e-12));
    }
}

TEST_CASE("train: linearly separable synthetic data reaches 95% train accuracy") {
    auto samples = synthetic_dataset(71, 200, 4, 12);
    Dataset ds = make_dataset(samples, 4);
    std::vector<TrainPairRef> pairs;
    for (const auto& s : ds.samples) pairs.push_back({s.id, *s.clean_label});

    ClassifierConfig cfg;
    cfg.input_height = cfg.input_width = 12;
    cfg.conv1_channels = 4;
    cfg.conv2_channels = 8;
    cfg.dense_width = 24;
    cfg.num_classes = 4;
    cfg.dropout_p = 0.1;
    cfg.seed = 2;
    TrainHyper hyper;
    hyper.epochs = 30;
    hyper.batch_size = 32;
    hyper.learning_rate = 0.05;
    hyper.seed = 2;
    const auto result = train_classifier(pairs, ds, cfg, hyper, HeadKind::vanilla);
    REQUIRE(result.log.size() == 30);
    // evaluate with dropout off
    size_t correct = 0;
    for (const auto& s : ds.samples)
        correct += argmax(predict(result.net, s.image)) == *s.clean_label;
    CHECK(static_cast<double>(correct) / ds.size() >= 0.95);
}

TEST_CASE("train: conflicting duplicate pairs split the predicted mass") {
    // one distinct image with labels 0 and 1, replicated
    auto samples = synthetic_dataset(81, 4, 2, 8);
    Dataset ds = make_dataset(samples, 2);
    std::vector<TrainPairRef> pairs;
    for (int rep = 0; rep < 8; ++rep) {
        pairs.push_back({0, 0});
        pairs.push_back({0, 1});
    }
    ClassifierConfig cfg = tiny_config();
    cfg.num_classes = 2;
    cfg.dropout_p = 0.0;
    TrainHyper hyper;
    hyper.epochs = 60;
    hyper.batch_size = 4;
    hyper.learning_rate = 0.02;
    hyper.weight_decay = 0.0;
    hyper.seed = 6;
    const auto result = train_classifier(pairs, ds, cfg, hyper, HeadKind::vanilla);
    const auto probs = predict(result.net, ds.samples[0].image);
    CHECK(std::abs(probs[0] - probs[1]) < 0.2);
}

TEST_CASE("train: zero epochs returns the initialized model unchanged") {
    auto samples = synthetic_dataset(91, 10, 2, 8);
    Dataset ds = make_dataset(samples, 2);
    std::vector<TrainPairRef> pairs{{0, 0}, {1, 1}};
    ClassifierConfig cfg = tiny_config();
    cfg.num_classes = 2;
    TrainHyper hyper;
    hyper.epochs = 0;
    const auto result = train_classifier(pairs, ds, cfg, hyper, HeadKind::vanilla);
    ConvNet fresh(cfg, HeadKind::vanilla);
    CHECK(result.net.params == fresh.params);
    CHECK(save_checkpoint(result.net) == save_checkpoint(fresh));
}

TEST_CASE("train: bit-identical across runs; duq centroids stay finite") {
    auto samples = synthetic_dataset(95, 40, 3, 8);
    Dataset ds = make_dataset(samples, 3);
    std::vector<TrainPairRef> pairs;
    for (const auto& s : ds.samples) pairs.push_back({s.id, *s.clean_label});

    ClassifierConfig cfg = tiny_config();
    cfg.dropout_p = 0.2;
    TrainHyper hyper;
    hyper.epochs = 4;
    hyper.batch_size = 8;
    hyper.seed = 11;
    hyper.threads = 2;

    const auto a = train_classifier(pairs, ds, cfg, hyper, HeadKind::vanilla);
    const auto b = train_classifier(pairs, ds, cfg, hyper, HeadKind::vanilla);
    CHECK(save_checkpoint(a.net) == save_checkpoint(b.net));
    // thread count must not change the result
    TrainHyper hyper1 = hyper;
    hyper1.threads = 1;
    const auto c = train_classifier(pairs, ds, cfg, hyper1, HeadKind::vanilla);
    CHECK(save_checkpoint(a.net) == save_checkpoint(c.net));

    DuqConfig dq;
    dq.embed_dim = 6;
    dq.momentum = 0.95;
    const auto d = train_classifier(pairs, ds, cfg, hyper, HeadKind::duq, dq);
    for (double e : d.net.state) CHECK(std::isfinite(e));
    const auto e2 = train_classifier(pairs, ds, cfg, hyper, HeadKind::duq, dq);
    CHECK(save_checkpoint(d.net) == save_checkpoint(e2.net));
}

TEST_CASE("train: validation errors") {
    auto samples = synthetic_dataset(97, 10, 2, 8);
    Dataset ds = make_dataset(samples, 2);
    ClassifierConfig cfg = tiny_config();
    cfg.num_classes = 2;
    TrainHyper hyper;
    CHECK_THROWS_AS(train_classifier({}, ds, cfg, hyper, HeadKind::vanilla), ValidationError);
    CHECK_THROWS_AS(train_classifier({{99, 0}}, ds, cfg, hyper, HeadKind::vanilla),
                    ValidationError);
    CHECK_THROWS_AS(train_classifier({{0, 7}}, ds, cfg, hyper, HeadKind::vanilla),
                    ValidationError);
}
