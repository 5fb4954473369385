#include "pqt/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <memory>
#include <numeric>

#include "pqt/parallel.hpp"
#include "pqt/rng.hpp"

namespace pqt {

void ClassifierConfig::validate() const {
    if (input_height < 8 || input_width < 8)
        throw ValidationError("classifier: input dims must be >= 8x8");
    if (input_channels < 1 || conv1_channels < 1 || conv2_channels < 1 || dense_width < 1)
        throw ValidationError("classifier: layer widths must be positive");
    if (num_classes < 2) throw ValidationError("classifier: need at least 2 classes");
    if (!(dropout_p >= 0.0 && dropout_p < 1.0))
        throw ValidationError("classifier: dropout_p must be in [0,1)");
}

void TrainHyper::validate() const {
    if (epochs < 0) throw ValidationError("train: epochs must be >= 0");
    if (batch_size < 1) throw ValidationError("train: batch_size must be >= 1");
    if (!(learning_rate > 0)) throw ValidationError("train: learning_rate must be > 0");
    if (momentum < 0 || momentum >= 1) throw ValidationError("train: momentum must be in [0,1)");
    if (weight_decay < 0) throw ValidationError("train: weight_decay must be >= 0");
}

ConvNet::ConvNet(const ClassifierConfig& cfg, HeadKind head, const DuqConfig& duq)
    : cfg_(cfg), head_(head), duq_(duq) {
    cfg_.validate();
    if (head_ == HeadKind::duq && (duq_.embed_dim < 1 || duq_.sigma <= 0 ||
                                   duq_.momentum <= 0 || duq_.momentum >= 1))
        throw ValidationError("classifier: invalid duq head configuration");
    build_layout();
    init_weights();
}

void ConvNet::build_layout() {
    param_views_.clear();
    state_views_.clear();
    size_t offset = 0;
    auto add = [&](std::vector<TensorView>& dst, const std::string& name,
                   std::vector<int> dims) {
        TensorView v;
        v.name = name;
        v.dims = std::move(dims);
        v.size = 1;
        for (int d : v.dims) v.size *= static_cast<size_t>(d);
        v.offset = offset;
        offset += v.size;
        dst.push_back(std::move(v));
    };

    add(param_views_, "conv1.w", {cfg_.conv1_channels, cfg_.input_channels, 3, 3});
    add(param_views_, "conv1.b", {cfg_.conv1_channels});
    add(param_views_, "conv2.w", {cfg_.conv2_channels, cfg_.conv1_channels, 3, 3});
    add(param_views_, "conv2.b", {cfg_.conv2_channels});
    add(param_views_, "fc.w", {cfg_.dense_width, cfg_.flat_dim()});
    add(param_views_, "fc.b", {cfg_.dense_width});
    if (head_ == HeadKind::vanilla) {
        add(param_views_, "out.w", {cfg_.num_classes, cfg_.dense_width});
        add(param_views_, "out.b", {cfg_.num_classes});
    } else {
        add(param_views_, "duq.w", {cfg_.num_classes, duq_.embed_dim, cfg_.dense_width});
    }
    params.assign(offset, 0.0);

    offset = 0;
    if (head_ == HeadKind::duq)
        add(state_views_, "duq.e", {cfg_.num_classes, duq_.embed_dim});
    state.assign(offset, 0.0);
}

const TensorView& ConvNet::view(const std::string& name) const {
    for (const auto& v : param_views_)
        if (v.name == name) return v;
    for (const auto& v : state_views_)
        if (v.name == name) return v;
    throw Error("classifier: unknown tensor '" + name + "'");
}

double* ConvNet::tensor(const std::string& name) {
    for (const auto& v : param_views_)
        if (v.name == name) return params.data() + v.offset;
    for (const auto& v : state_views_)
        if (v.name == name) return state.data() + v.offset;
    throw Error("classifier: unknown tensor '" + name + "'");
}

const double* ConvNet::tensor(const std::string& name) const {
    return const_cast<ConvNet*>(this)->tensor(name);
}

void ConvNet::init_weights() {
    Rng rng(cfg_.seed);
    for (const auto& v : param_views_) {
        double* p = params.data() + v.offset;
        if (v.name.ends_with(".b")) {
            std::fill(p, p + v.size, 0.0);
            continue;
        }
        // He scaling for ReLU layers; unit-variance-preserving for heads.
        size_t fan_in = 1;
        for (size_t i = 1; i < v.dims.size(); ++i) fan_in *= static_cast<size_t>(v.dims[i]);
        double sd;
        if (v.name == "out.w")
            sd = std::sqrt(1.0 / static_cast<double>(fan_in));
        else if (v.name == "duq.w")
            sd = std::sqrt(1.0 / static_cast<double>(cfg_.dense_width));
        else
            sd = std::sqrt(2.0 / static_cast<double>(fan_in));
        for (size_t i = 0; i < v.size; ++i) p[i] = rng.normal(0.0, sd);
    }
    for (const auto& v : state_views_) {
        double* p = state.data() + v.offset;
        for (size_t i = 0; i < v.size; ++i) p[i] = rng.normal(0.0, 0.1);
    }
}

std::vector<double> image_to_input(const RgbImage& image) {
    if (!image.valid()) throw ValidationError("image buffer does not match its declared dims");
    std::vector<double> out(image.data.size());
    for (size_t i = 0; i < image.data.size(); ++i) out[i] = image.data[i] / 255.0;
    return out;
}

namespace {

struct ConvDims {
    int in_c, in_h, in_w, out_c;
};

void pad_copy(const double* in, double* pad, int c, int h, int w) {
    const int pw = w + 2;
    std::memset(pad, 0, sizeof(double) * static_cast<size_t>(c) * (h + 2) * pw);
    for (int ic = 0; ic < c; ++ic) {
        const double* src = in + static_cast<size_t>(ic) * h * w;
        double* dst = pad + static_cast<size_t>(ic) * (h + 2) * pw + pw + 1;
        for (int y = 0; y < h; ++y)
            std::memcpy(dst + static_cast<size_t>(y) * pw, src + static_cast<size_t>(y) * w,
                        sizeof(double) * w);
    }
}

void conv3x3_forward(const double* pad, const double* w, const double* b, double* out,
                     const ConvDims& d) {
    const int pw = d.in_w + 2;
    const size_t plane = static_cast<size_t>(d.in_h) * d.in_w;
    for (int oc = 0; oc < d.out_c; ++oc) {
        double* o = out + oc * plane;
        std::fill(o, o + plane, b[oc]);
        for (int ic = 0; ic < d.in_c; ++ic) {
            const double* kw = w + (static_cast<size_t>(oc) * d.in_c + ic) * 9;
            const double k00 = kw[0], k01 = kw[1], k02 = kw[2];
            const double k10 = kw[3], k11 = kw[4], k12 = kw[5];
            const double k20 = kw[6], k21 = kw[7], k22 = kw[8];
            const double* base = pad + static_cast<size_t>(ic) * (d.in_h + 2) * pw;
            for (int y = 0; y < d.in_h; ++y) {
                const double* r0 = base + static_cast<size_t>(y) * pw;
                const double* r1 = r0 + pw;
                const double* r2 = r1 + pw;
                double* orow = o + static_cast<size_t>(y) * d.in_w;
                for (int x = 0; x < d.in_w; ++x) {
                    orow[x] += k00 * r0[x] + k01 * r0[x + 1] + k02 * r0[x + 2] +
                               k10 * r1[x] + k11 * r1[x + 1] + k12 * r1[x + 2] +
                               k20 * r2[x] + k21 * r2[x + 1] + k22 * r2[x + 2];
                }
            }
        }
    }
}

// dw/db accumulate; din_pad is overwritten.
void conv3x3_backward(const double* pad, const double* w, const double* dout, double* dw,
                      double* db, double* din_pad, const ConvDims& d) {
    const int pw = d.in_w + 2;
    const size_t plane = static_cast<size_t>(d.in_h) * d.in_w;
    if (din_pad)
        std::memset(din_pad, 0, sizeof(double) * static_cast<size_t>(d.in_c) * (d.in_h + 2) * pw);
    for (int oc = 0; oc < d.out_c; ++oc) {
        const double* go = dout + oc * plane;
        double bsum = 0.0;
        for (size_t i = 0; i < plane; ++i) bsum += go[i];
        db[oc] += bsum;
        for (int ic = 0; ic < d.in_c; ++ic) {
            const double* base = pad + static_cast<size_t>(ic) * (d.in_h + 2) * pw;
            double* kw = dw + (static_cast<size_t>(oc) * d.in_c + ic) * 9;
            double a00 = 0, a01 = 0, a02 = 0, a10 = 0, a11 = 0, a12 = 0, a20 = 0, a21 = 0,
                   a22 = 0;
            for (int y = 0; y < d.in_h; ++y) {
                const double* r0 = base + static_cast<size_t>(y) * pw;
                const double* r1 = r0 + pw;
                const double* r2 = r1 + pw;
                const double* grow = go + static_cast<size_t>(y) * d.in_w;
                for (int x = 0; x < d.in_w; ++x) {
                    const double g = grow[x];
                    a00 += g * r0[x]; a01 += g * r0[x + 1]; a02 += g * r0[x + 2];
                    a10 += g * r1[x]; a11 += g * r1[x + 1]; a12 += g * r1[x + 2];
                    a20 += g * r2[x]; a21 += g * r2[x + 1]; a22 += g * r2[x + 2];
                }
            }
            kw[0] += a00; kw[1] += a01; kw[2] += a02;
            kw[3] += a10; kw[4] += a11; kw[5] += a12;
            kw[6] += a20; kw[7] += a21; kw[8] += a22;

            if (din_pad) {
                const double* kws = w + (static_cast<size_t>(oc) * d.in_c + ic) * 9;
                double* dbase = din_pad + static_cast<size_t>(ic) * (d.in_h + 2) * pw;
                for (int y = 0; y < d.in_h; ++y) {
                    double* r0 = dbase + static_cast<size_t>(y) * pw;
                    double* r1 = r0 + pw;
                    double* r2 = r1 + pw;
                    const double* grow = go + static_cast<size_t>(y) * d.in_w;
                    for (int x = 0; x < d.in_w; ++x) {
                        const double g = grow[x];
                        r0[x] += g * kws[0]; r0[x + 1] += g * kws[1]; r0[x + 2] += g * kws[2];
                        r1[x] += g * kws[3]; r1[x + 1] += g * kws[4]; r1[x + 2] += g * kws[5];
                        r2[x] += g * kws[6]; r2[x + 1] += g * kws[7]; r2[x + 2] += g * kws[8];
                    }
                }
            }
        }
    }
}

void maxpool2x2(const double* in, double* out, int* idx, int c, int h, int w) {
    const int oh = h / 2, ow = w / 2;
    for (int ic = 0; ic < c; ++ic) {
        const double* plane = in + static_cast<size_t>(ic) * h * w;
        double* oplane = out + static_cast<size_t>(ic) * oh * ow;
        int* iplane = idx + static_cast<size_t>(ic) * oh * ow;
        for (int y = 0; y < oh; ++y) {
            for (int x = 0; x < ow; ++x) {
                const int y0 = 2 * y, x0 = 2 * x;
                int best = y0 * w + x0;
                double bv = plane[best];
                const int cand[3] = {y0 * w + x0 + 1, (y0 + 1) * w + x0, (y0 + 1) * w + x0 + 1};
                for (int k = 0; k < 3; ++k)
                    if (plane[cand[k]] > bv) { bv = plane[cand[k]]; best = cand[k]; }
                oplane[y * ow + x] = bv;
                iplane[y * ow + x] = best;
            }
        }
    }
}

struct Scratch {
    std::vector<double> input;                 // C*H*W
    std::vector<double> pad1, conv1, pool1;    // conv1 post-ReLU
    std::vector<int> pool1_idx;
    std::vector<double> pad2, conv2, pool2;
    std::vector<int> pool2_idx;
    std::vector<uint8_t> mask;                 // dropout mask over flat units
    std::vector<double> dropped;               // flat after dropout
    std::vector<double> features;              // post-ReLU dense
    std::vector<double> logits, probs;
    std::vector<double> duq_z;                 // C*m
    std::vector<double> kernels;
    // backward
    std::vector<double> d_features, d_dropped, d_pool2, d_conv2, d_pad2, d_pool1, d_conv1,
        d_pad1, d_logits, d_duq_z;

    explicit Scratch(const ClassifierConfig& c, HeadKind head, const DuqConfig& duq) {
        const int h = c.input_height, w = c.input_width;
        const int h2 = c.pooled1_h(), w2 = c.pooled1_w();
        const int h4 = c.pooled2_h(), w4 = c.pooled2_w();
        input.resize(static_cast<size_t>(c.input_channels) * h * w);
        pad1.resize(static_cast<size_t>(c.input_channels) * (h + 2) * (w + 2));
        conv1.resize(static_cast<size_t>(c.conv1_channels) * h * w);
        pool1.resize(static_cast<size_t>(c.conv1_channels) * h2 * w2);
        pool1_idx.resize(pool1.size());
        pad2.resize(static_cast<size_t>(c.conv1_channels) * (h2 + 2) * (w2 + 2));
        conv2.resize(static_cast<size_t>(c.conv2_channels) * h2 * w2);
        pool2.resize(static_cast<size_t>(c.conv2_channels) * h4 * w4);
        pool2_idx.resize(pool2.size());
        mask.resize(c.flat_dim());
        dropped.resize(c.flat_dim());
        features.resize(c.dense_width);
        logits.resize(c.num_classes);
        probs.resize(c.num_classes);
        if (head == HeadKind::duq) {
            duq_z.resize(static_cast<size_t>(c.num_classes) * duq.embed_dim);
            kernels.resize(c.num_classes);
        }
        d_features.resize(c.dense_width);
        d_dropped.resize(c.flat_dim());
        d_pool2.resize(pool2.size());
        d_conv2.resize(conv2.size());
        d_pad2.resize(pad2.size());
        d_pool1.resize(pool1.size());
        d_conv1.resize(conv1.size());
        d_pad1.resize(pad1.size());
        d_logits.resize(c.num_classes);
        if (head == HeadKind::duq) d_duq_z.resize(duq_z.size());
    }
};

// Trunk up to the pooled flat vector; dropout (optional) -> dense -> ReLU.
void forward_trunk(const ConvNet& net, Scratch& s, const uint8_t* mask, double inv_keep) {
    const auto& c = net.config();
    const int h = c.input_height, w = c.input_width;
    const int h2 = c.pooled1_h(), w2 = c.pooled1_w();

    pad_copy(s.input.data(), s.pad1.data(), c.input_channels, h, w);
    conv3x3_forward(s.pad1.data(), net.tensor("conv1.w"), net.tensor("conv1.b"), s.conv1.data(),
                    {c.input_channels, h, w, c.conv1_channels});
    for (auto& v : s.conv1) v = v > 0 ? v : 0.0;
    maxpool2x2(s.conv1.data(), s.pool1.data(), s.pool1_idx.data(), c.conv1_channels, h, w);

    pad_copy(s.pool1.data(), s.pad2.data(), c.conv1_channels, h2, w2);
    conv3x3_forward(s.pad2.data(), net.tensor("conv2.w"), net.tensor("conv2.b"), s.conv2.data(),
                    {c.conv1_channels, h2, w2, c.conv2_channels});
    for (auto& v : s.conv2) v = v > 0 ? v : 0.0;
    maxpool2x2(s.conv2.data(), s.pool2.data(), s.pool2_idx.data(), c.conv2_channels, h2, w2);

    const int flat = c.flat_dim();
    if (mask) {
        for (int i = 0; i < flat; ++i) s.dropped[i] = mask[i] ? s.pool2[i] * inv_keep : 0.0;
    } else {
        std::copy(s.pool2.begin(), s.pool2.end(), s.dropped.begin());
    }

    const double* fw = net.tensor("fc.w");
    const double* fb = net.tensor("fc.b");
    for (int j = 0; j < c.dense_width; ++j) {
        const double* row = fw + static_cast<size_t>(j) * flat;
        double acc = fb[j];
        for (int i = 0; i < flat; ++i) acc += row[i] * s.dropped[i];
        s.features[j] = acc > 0 ? acc : 0.0;
    }
}

void head_vanilla(const ConvNet& net, Scratch& s) {
    const auto& c = net.config();
    const double* ow = net.tensor("out.w");
    const double* ob = net.tensor("out.b");
    for (int k = 0; k < c.num_classes; ++k) {
        const double* row = ow + static_cast<size_t>(k) * c.dense_width;
        double acc = ob[k];
        for (int j = 0; j < c.dense_width; ++j) acc += row[j] * s.features[j];
        s.logits[k] = acc;
    }
}

void softmax_stable(const std::vector<double>& logits, std::vector<double>& probs) {
    const double m = *std::max_element(logits.begin(), logits.end());
    double sum = 0.0;
    for (size_t i = 0; i < logits.size(); ++i) {
        probs[i] = std::exp(logits[i] - m);
        sum += probs[i];
    }
    for (auto& p : probs) p /= sum;
}

void head_duq(const ConvNet& net, Scratch& s) {
    const auto& c = net.config();
    const auto& dq = net.duq_config();
    const int m = dq.embed_dim, d = c.dense_width;
    const double* W = net.tensor("duq.w");
    const double* E = net.tensor("duq.e");
    const double inv_scale = 1.0 / (2.0 * m * dq.sigma * dq.sigma);
    for (int k = 0; k < c.num_classes; ++k) {
        const double* Wk = W + static_cast<size_t>(k) * m * d;
        double* zk = s.duq_z.data() + static_cast<size_t>(k) * m;
        double dist2 = 0.0;
        for (int j = 0; j < m; ++j) {
            const double* row = Wk + static_cast<size_t>(j) * d;
            double acc = 0.0;
            for (int i = 0; i < d; ++i) acc += row[i] * s.features[i];
            zk[j] = acc;
            const double diff = acc - E[static_cast<size_t>(k) * m + j];
            dist2 += diff * diff;
        }
        s.kernels[k] = std::exp(-dist2 * inv_scale);
    }
}

// Backward from d_features through dense, dropout, pools and convs.
void backward_trunk(const ConvNet& net, Scratch& s, const uint8_t* mask, double inv_keep,
                    double* grad) {
    const auto& c = net.config();
    const int h = c.input_height, w = c.input_width;
    const int h2 = c.pooled1_h(), w2 = c.pooled1_w();
    const int flat = c.flat_dim();

    // dense (+ ReLU gate on features)
    const double* fw = net.tensor("fc.w");
    double* gfw = grad + net.view("fc.w").offset;
    double* gfb = grad + net.view("fc.b").offset;
    std::fill(s.d_dropped.begin(), s.d_dropped.end(), 0.0);
    for (int j = 0; j < c.dense_width; ++j) {
        double g = s.d_features[j];
        if (s.features[j] <= 0.0) g = 0.0;
        if (g == 0.0) continue;
        gfb[j] += g;
        const double* row = fw + static_cast<size_t>(j) * flat;
        double* grow = gfw + static_cast<size_t>(j) * flat;
        for (int i = 0; i < flat; ++i) {
            grow[i] += g * s.dropped[i];
            s.d_dropped[i] += g * row[i];
        }
    }

    if (mask) {
        for (int i = 0; i < flat; ++i) s.d_pool2[i] = mask[i] ? s.d_dropped[i] * inv_keep : 0.0;
    } else {
        std::copy(s.d_dropped.begin(), s.d_dropped.end(), s.d_pool2.begin());
    }

    // unpool2 + ReLU gate
    std::fill(s.d_conv2.begin(), s.d_conv2.end(), 0.0);
    {
        const int oh = h2 / 2, ow = w2 / 2;
        for (int ic = 0; ic < c.conv2_channels; ++ic) {
            const size_t pbase = static_cast<size_t>(ic) * oh * ow;
            const size_t cbase = static_cast<size_t>(ic) * h2 * w2;
            for (int i = 0; i < oh * ow; ++i)
                s.d_conv2[cbase + s.pool2_idx[pbase + i]] += s.d_pool2[pbase + i];
        }
        for (size_t i = 0; i < s.d_conv2.size(); ++i)
            if (s.conv2[i] <= 0.0) s.d_conv2[i] = 0.0;
    }

    conv3x3_backward(s.pad2.data(), net.tensor("conv2.w"), s.d_conv2.data(),
                     grad + net.view("conv2.w").offset, grad + net.view("conv2.b").offset,
                     s.d_pad2.data(), {c.conv1_channels, h2, w2, c.conv2_channels});

    // crop pad2 gradient -> d_pool1, unpool1 + ReLU gate
    const int pw2 = w2 + 2;
    for (int ic = 0; ic < c.conv1_channels; ++ic) {
        const double* src = s.d_pad2.data() + static_cast<size_t>(ic) * (h2 + 2) * pw2 + pw2 + 1;
        double* dst = s.d_pool1.data() + static_cast<size_t>(ic) * h2 * w2;
        for (int y = 0; y < h2; ++y)
            std::memcpy(dst + static_cast<size_t>(y) * w2, src + static_cast<size_t>(y) * pw2,
                        sizeof(double) * w2);
    }
    std::fill(s.d_conv1.begin(), s.d_conv1.end(), 0.0);
    {
        const int oh = h / 2, ow = w / 2;
        for (int ic = 0; ic < c.conv1_channels; ++ic) {
            const size_t pbase = static_cast<size_t>(ic) * oh * ow;
            const size_t cbase = static_cast<size_t>(ic) * h * w;
            for (int i = 0; i < oh * ow; ++i)
                s.d_conv1[cbase + s.pool1_idx[pbase + i]] += s.d_pool1[pbase + i];
        }
        for (size_t i = 0; i < s.d_conv1.size(); ++i)
            if (s.conv1[i] <= 0.0) s.d_conv1[i] = 0.0;
    }

    conv3x3_backward(s.pad1.data(), net.tensor("conv1.w"), s.d_conv1.data(),
                     grad + net.view("conv1.w").offset, grad + net.view("conv1.b").offset,
                     nullptr, {c.input_channels, h, w, c.conv1_channels});
}

constexpr double kBceClamp = 1e-7;

// Cross-entropy (vanilla) or summed per-class BCE on kernels (duq).
// Fills s.d_features and head gradients; returns the loss.
double backward_head(const ConvNet& net, Scratch& s, int label, double* grad) {
    const auto& c = net.config();
    std::fill(s.d_features.begin(), s.d_features.end(), 0.0);

    if (net.head() == HeadKind::vanilla) {
        softmax_stable(s.logits, s.probs);
        const double m = *std::max_element(s.logits.begin(), s.logits.end());
        double lse = 0.0;
        for (double v : s.logits) lse += std::exp(v - m);
        const double loss = std::log(lse) + m - s.logits[label];
        for (int k = 0; k < c.num_classes; ++k)
            s.d_logits[k] = s.probs[k] - (k == label ? 1.0 : 0.0);

        const double* ow = net.tensor("out.w");
        double* gow = grad + net.view("out.w").offset;
        double* gob = grad + net.view("out.b").offset;
        for (int k = 0; k < c.num_classes; ++k) {
            const double g = s.d_logits[k];
            gob[k] += g;
            const double* row = ow + static_cast<size_t>(k) * c.dense_width;
            double* grow = gow + static_cast<size_t>(k) * c.dense_width;
            for (int j = 0; j < c.dense_width; ++j) {
                grow[j] += g * s.features[j];
                s.d_features[j] += g * row[j];
            }
        }
        return loss;
    }

    // duq: L = sum_c BCE(K_c, one-hot); dK/dz = -K * (z - e) / (m sigma^2)
    const auto& dq = net.duq_config();
    const int m = dq.embed_dim, d = c.dense_width;
    const double* W = net.tensor("duq.w");
    const double* E = net.tensor("duq.e");
    double* gW = grad + net.view("duq.w").offset;
    const double inv_ms2 = 1.0 / (m * dq.sigma * dq.sigma);
    double loss = 0.0;
    for (int k = 0; k < c.num_classes; ++k) {
        const double t = (k == label) ? 1.0 : 0.0;
        const double kraw = s.kernels[k];
        const double kc = std::min(1.0 - kBceClamp, std::max(kBceClamp, kraw));
        loss += -(t * std::log(kc) + (1.0 - t) * std::log(1.0 - kc));
        // Outside the clamp range the loss is flat in K.
        double dK = 0.0;
        if (kraw > kBceClamp && kraw < 1.0 - kBceClamp) dK = -t / kc + (1.0 - t) / (1.0 - kc);
        const double* Wk = W + static_cast<size_t>(k) * m * d;
        double* gWk = gW + static_cast<size_t>(k) * m * d;
        const double* zk = s.duq_z.data() + static_cast<size_t>(k) * m;
        const double* ek = E + static_cast<size_t>(k) * m;
        const double common = dK * kraw * (-inv_ms2);
        for (int j = 0; j < m; ++j) {
            const double dz = common * (zk[j] - ek[j]);
            if (dz == 0.0) continue;
            const double* row = Wk + static_cast<size_t>(j) * d;
            double* grow = gWk + static_cast<size_t>(j) * d;
            for (int i = 0; i < d; ++i) {
                grow[i] += dz * s.features[i];
                s.d_features[i] += dz * row[i];
            }
        }
    }
    return loss;
}

void fill_dropout_mask(std::vector<uint8_t>& mask, double p, Rng& rng) {
    const double keep = 1.0 - p;
    for (auto& b : mask) b = rng.uniform() < keep ? 1 : 0;
}

int argmax_index(const std::vector<double>& v) {
    int best = 0;
    for (size_t i = 1; i < v.size(); ++i)
        if (v[i] > v[best]) best = static_cast<int>(i);
    return best;
}

} // namespace

ForwardResult forward(const ConvNet& net, const RgbImage& image) {
    const auto& c = net.config();
    if (image.height != c.input_height || image.width != c.input_width || !image.valid())
        throw ValidationError("forward: image dims do not match classifier config");
    Scratch s(c, net.head(), net.duq_config());
    s.input = image_to_input(image);
    forward_trunk(net, s, nullptr, 1.0);
    ForwardResult r;
    r.features = s.features;
    if (net.head() == HeadKind::vanilla) {
        head_vanilla(net, s);
        r.logits = s.logits;
    }
    return r;
}

std::vector<double> predict(const ConvNet& net, const RgbImage& image) {
    if (net.head() != HeadKind::vanilla)
        throw ConfigError("predict: softmax prediction needs a vanilla head");
    const auto& c = net.config();
    if (image.height != c.input_height || image.width != c.input_width || !image.valid())
        throw ValidationError("predict: image dims do not match classifier config");
    Scratch s(c, net.head(), net.duq_config());
    s.input = image_to_input(image);
    forward_trunk(net, s, nullptr, 1.0);
    head_vanilla(net, s);
    softmax_stable(s.logits, s.probs);
    return s.probs;
}

std::vector<double> mc_dropout_predict(const ConvNet& net, const RgbImage& image, int passes,
                                       uint64_t seed,
                                       std::vector<std::vector<double>>* per_pass) {
    if (net.head() != HeadKind::vanilla)
        throw ConfigError("mc_dropout: needs a vanilla (softmax) head");
    const auto& c = net.config();
    if (c.dropout_p <= 0.0)
        throw ConfigError("mc_dropout: dropout_p is 0; head would be identical to vanilla");
    if (passes < 1) throw ValidationError("mc_dropout: passes must be >= 1");
    if (image.height != c.input_height || image.width != c.input_width || !image.valid())
        throw ValidationError("mc_dropout: image dims do not match classifier config");

    Scratch s(c, net.head(), net.duq_config());
    s.input = image_to_input(image);
    // Dropout only affects layers after the flat vector, so the conv trunk
    // is shared across passes.
    forward_trunk(net, s, nullptr, 1.0);
    const std::vector<double> flat = s.pool2;

    const int flat_dim = c.flat_dim();
    const double inv_keep = 1.0 / (1.0 - c.dropout_p);
    std::vector<double> mean(c.num_classes, 0.0);
    if (per_pass) per_pass->clear();
    const double* fw = net.tensor("fc.w");
    const double* fb = net.tensor("fc.b");
    for (int t = 0; t < passes; ++t) {
        Rng rng(mix_seed(seed, static_cast<uint64_t>(t)));
        fill_dropout_mask(s.mask, c.dropout_p, rng);
        for (int i = 0; i < flat_dim; ++i) s.dropped[i] = s.mask[i] ? flat[i] * inv_keep : 0.0;
        for (int j = 0; j < c.dense_width; ++j) {
            const double* row = fw + static_cast<size_t>(j) * flat_dim;
            double acc = fb[j];
            for (int i = 0; i < flat_dim; ++i) acc += row[i] * s.dropped[i];
            s.features[j] = acc > 0 ? acc : 0.0;
        }
        head_vanilla(net, s);
        softmax_stable(s.logits, s.probs);
        for (int k = 0; k < c.num_classes; ++k) mean[k] += s.probs[k];
        if (per_pass) per_pass->push_back(s.probs);
    }
    for (auto& v : mean) v /= passes;
    return mean;
}

DuqPrediction duq_predict(const ConvNet& net, const RgbImage& image) {
    if (net.head() != HeadKind::duq) throw ConfigError("duq_predict: model has no duq head");
    const auto& c = net.config();
    if (image.height != c.input_height || image.width != c.input_width || !image.valid())
        throw ValidationError("duq_predict: image dims do not match classifier config");
    Scratch s(c, net.head(), net.duq_config());
    s.input = image_to_input(image);
    forward_trunk(net, s, nullptr, 1.0);
    head_duq(net, s);

    DuqPrediction out;
    out.kernels = s.kernels;
    out.probs.assign(c.num_classes, 0.0);
    double sum = 0.0;
    for (double k : s.kernels) sum += k;
    if (sum < 1e-30) {
        out.underflow = true;
        std::fill(out.probs.begin(), out.probs.end(), 1.0 / c.num_classes);
    } else {
        for (int k = 0; k < c.num_classes; ++k) out.probs[k] = s.kernels[k] / sum;
    }
    return out;
}

double entropy_bits(const std::vector<double>& probs) {
    double h = 0.0;
    for (double p : probs)
        if (p > 0.0) h -= p * std::log2(p);
    return h < 0.0 ? 0.0 : h;
}

double loss_and_grad(const ConvNet& net, const std::vector<double>& input, int label,
                     std::vector<double>& grad, const std::vector<uint8_t>* dropout_mask) {
    const auto& c = net.config();
    if (input.size() != static_cast<size_t>(c.input_channels) * c.input_height * c.input_width)
        throw ValidationError("loss_and_grad: input size mismatch");
    if (label < 0 || label >= c.num_classes) throw ValidationError("loss_and_grad: bad label");
    grad.assign(net.params.size(), 0.0);
    Scratch s(c, net.head(), net.duq_config());
    s.input = input;
    const uint8_t* mask = nullptr;
    double inv_keep = 1.0;
    if (dropout_mask) {
        if (dropout_mask->size() != static_cast<size_t>(c.flat_dim()))
            throw ValidationError("loss_and_grad: dropout mask size mismatch");
        mask = dropout_mask->data();
        inv_keep = 1.0 / (1.0 - c.dropout_p);
    }
    forward_trunk(net, s, mask, inv_keep);
    if (net.head() == HeadKind::vanilla)
        head_vanilla(net, s);
    else
        head_duq(net, s);
    const double loss = backward_head(net, s, label, grad.data());
    backward_trunk(net, s, mask, inv_keep, grad.data());
    return loss;
}

TrainResult train_classifier(const std::vector<TrainPairRef>& pairs, const Dataset& dataset,
                             const ClassifierConfig& cfg, const TrainHyper& hyper, HeadKind head,
                             const DuqConfig& duq) {
    cfg.validate();
    hyper.validate();
    if (pairs.empty()) throw ValidationError("train: no training pairs");
    for (const auto& p : pairs) {
        if (p.sample_id < 0 || p.sample_id >= static_cast<int>(dataset.size()))
            throw ValidationError("train: pair references unknown sample id " +
                                  std::to_string(p.sample_id));
        if (p.label < 0 || p.label >= cfg.num_classes)
            throw ValidationError("train: pair label out of range");
    }

    TrainResult result{ConvNet(cfg, head, duq), {}};
    ConvNet& net = result.net;
    if (hyper.epochs == 0) return result;

    const size_t n_params = net.params.size();
    std::vector<double> velocity(n_params, 0.0);

    constexpr size_t kChunk = 8; // fixed chunk layout keeps results thread-count independent
    const int threads = hyper.threads > 0 ? hyper.threads : default_thread_count();
    const size_t max_chunks =
        (static_cast<size_t>(hyper.batch_size) + kChunk - 1) / kChunk;

    struct ChunkBuf {
        std::vector<double> grad;
        std::vector<double> class_sum; // duq: sum of z_y over batch members per class
        std::vector<int> class_count;
        double loss = 0.0;
        int correct = 0;
        std::unique_ptr<Scratch> scratch;
    };
    const int m = duq.embed_dim;
    std::vector<ChunkBuf> bufs(max_chunks);
    for (auto& b : bufs) {
        b.grad.assign(n_params, 0.0);
        if (head == HeadKind::duq) {
            b.class_sum.assign(static_cast<size_t>(cfg.num_classes) * m, 0.0);
            b.class_count.assign(cfg.num_classes, 0);
        }
        b.scratch = std::make_unique<Scratch>(cfg, head, duq);
    }

    std::vector<size_t> order(pairs.size());
    std::iota(order.begin(), order.end(), size_t{0});

    std::vector<double> grad_total(n_params);
    const bool use_dropout = cfg.dropout_p > 0.0;
    const double inv_keep = use_dropout ? 1.0 / (1.0 - cfg.dropout_p) : 1.0;

    for (int epoch = 1; epoch <= hyper.epochs; ++epoch) {
        Rng shuffle_rng(mix_seed(hyper.seed, static_cast<uint64_t>(epoch)));
        shuffle_rng.shuffle(order);

        double epoch_loss = 0.0;
        size_t epoch_correct = 0;
        size_t batch_index = 0;

        for (size_t start = 0; start < order.size(); start += hyper.batch_size, ++batch_index) {
            const size_t end = std::min(order.size(), start + hyper.batch_size);
            const size_t bsize = end - start;

            parallel_chunks(bsize, kChunk, threads, [&](size_t cb, size_t ce, size_t chunk) {
                ChunkBuf& buf = bufs[chunk];
                std::fill(buf.grad.begin(), buf.grad.end(), 0.0);
                if (head == HeadKind::duq) {
                    std::fill(buf.class_sum.begin(), buf.class_sum.end(), 0.0);
                    std::fill(buf.class_count.begin(), buf.class_count.end(), 0);
                }
                buf.loss = 0.0;
                buf.correct = 0;
                Scratch& s = *buf.scratch;
                for (size_t i = cb; i < ce; ++i) {
                    const size_t pos = start + i;
                    const TrainPairRef& pair = pairs[order[pos]];
                    const Sample& sample = dataset.samples[pair.sample_id];
                    const auto& img = sample.image;
                    for (size_t px = 0; px < img.data.size(); ++px)
                        s.input[px] = img.data[px] / 255.0;

                    const uint8_t* mask = nullptr;
                    if (use_dropout) {
                        Rng drop_rng(mix_seed(hyper.seed, static_cast<uint64_t>(epoch),
                                              static_cast<uint64_t>(pos)));
                        fill_dropout_mask(s.mask, cfg.dropout_p, drop_rng);
                        mask = s.mask.data();
                    }
                    forward_trunk(net, s, mask, inv_keep);
                    if (head == HeadKind::vanilla) {
                        head_vanilla(net, s);
                        buf.correct += argmax_index(s.logits) == pair.label;
                    } else {
                        head_duq(net, s);
                        buf.correct += argmax_index(s.kernels) == pair.label;
                        double* cs = buf.class_sum.data() +
                                     static_cast<size_t>(pair.label) * m;
                        const double* zy =
                            s.duq_z.data() + static_cast<size_t>(pair.label) * m;
                        for (int j = 0; j < m; ++j) cs[j] += zy[j];
                        buf.class_count[pair.label] += 1;
                    }
                    buf.loss += backward_head(net, s, pair.label, buf.grad.data());
                    backward_trunk(net, s, mask, inv_keep, buf.grad.data());
                }
            });

            const size_t n_chunks = (bsize + kChunk - 1) / kChunk;
            std::fill(grad_total.begin(), grad_total.end(), 0.0);
            double batch_loss = 0.0;
            for (size_t cidx = 0; cidx < n_chunks; ++cidx) {
                const auto& buf = bufs[cidx];
                for (size_t i = 0; i < n_params; ++i) grad_total[i] += buf.grad[i];
                batch_loss += buf.loss;
                epoch_correct += buf.correct;
            }
            if (!std::isfinite(batch_loss))
                throw Error("training diverged: non-finite loss at epoch " +
                            std::to_string(epoch) + ", batch " + std::to_string(batch_index));
            epoch_loss += batch_loss;

            const double inv_b = 1.0 / static_cast<double>(bsize);
            for (size_t i = 0; i < n_params; ++i) {
                const double g = grad_total[i] * inv_b + hyper.weight_decay * net.params[i];
                velocity[i] = hyper.momentum * velocity[i] - hyper.learning_rate * g;
                net.params[i] += velocity[i];
            }

            if (head == HeadKind::duq) {
                double* E = net.tensor("duq.e");
                for (int k = 0; k < cfg.num_classes; ++k) {
                    int count = 0;
                    for (size_t cidx = 0; cidx < n_chunks; ++cidx)
                        count += bufs[cidx].class_count[k];
                    if (count == 0) continue;
                    for (int j = 0; j < m; ++j) {
                        double sum = 0.0;
                        for (size_t cidx = 0; cidx < n_chunks; ++cidx)
                            sum += bufs[cidx].class_sum[static_cast<size_t>(k) * m + j];
                        const double mean_z = sum / count;
                        double& e = E[static_cast<size_t>(k) * m + j];
                        e = duq.momentum * e + (1.0 - duq.momentum) * mean_z;
                    }
                }
            }
        }

        if (head == HeadKind::duq) {
            for (double e : net.state)
                if (!std::isfinite(e))
                    throw Error("training diverged: non-finite duq centroid after epoch " +
                                std::to_string(epoch));
        }

        EpochStats st;
        st.epoch = epoch;
        st.loss = epoch_loss / static_cast<double>(pairs.size());
        st.train_acc = static_cast<double>(epoch_correct) / static_cast<double>(pairs.size());
        result.log.push_back(st);
    }
    return result;
}

} // namespace pqt
