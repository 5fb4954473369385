#include "pqt/checkpoint.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

namespace pqt {

namespace {

constexpr char kMagic[8] = {'P', 'Q', 'T', 'C', 'K', 'P', 'T', '\0'};
constexpr uint32_t kVersion = 1;

void put_u16(std::vector<uint8_t>& b, uint16_t v) {
    b.push_back(v & 0xff);
    b.push_back((v >> 8) & 0xff);
}
void put_u32(std::vector<uint8_t>& b, uint32_t v) {
    for (int i = 0; i < 4; ++i) b.push_back((v >> (8 * i)) & 0xff);
}
void put_u64(std::vector<uint8_t>& b, uint64_t v) {
    for (int i = 0; i < 8; ++i) b.push_back((v >> (8 * i)) & 0xff);
}
void put_f64(std::vector<uint8_t>& b, double v) {
    uint64_t bits;
    std::memcpy(&bits, &v, 8);
    put_u64(b, bits);
}

struct Reader {
    const std::vector<uint8_t>& b;
    size_t pos = 0;

    void need(size_t n) const {
        if (pos + n > b.size())
            throw CorruptionError("checkpoint: truncated at byte " + std::to_string(pos));
    }
    uint16_t u16() {
        need(2);
        uint16_t v = b[pos] | (uint16_t(b[pos + 1]) << 8);
        pos += 2;
        return v;
    }
    uint32_t u32() {
        need(4);
        uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= uint32_t(b[pos + i]) << (8 * i);
        pos += 4;
        return v;
    }
    uint64_t u64() {
        need(8);
        uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= uint64_t(b[pos + i]) << (8 * i);
        pos += 8;
        return v;
    }
    double f64() {
        const uint64_t bits = u64();
        double v;
        std::memcpy(&v, &bits, 8);
        return v;
    }
    std::string str(size_t n) {
        need(n);
        std::string s(reinterpret_cast<const char*>(b.data() + pos), n);
        pos += n;
        return s;
    }
};

void put_tensor(std::vector<uint8_t>& out, const TensorView& v, const double* data) {
    put_u16(out, static_cast<uint16_t>(v.name.size()));
    out.insert(out.end(), v.name.begin(), v.name.end());
    out.push_back(static_cast<uint8_t>(v.dims.size()));
    for (int d : v.dims) put_u32(out, static_cast<uint32_t>(d));
    for (size_t i = 0; i < v.size; ++i) put_f64(out, data[i]);
}

void read_tensor(Reader& r, const TensorView& expect, double* dst) {
    const uint16_t name_len = r.u16();
    const std::string name = r.str(name_len);
    if (name != expect.name)
        throw CorruptionError("checkpoint: manifest mismatch, expected tensor '" + expect.name +
                              "' but found '" + name + "'");
    r.need(1);
    const uint8_t ndims = r.b[r.pos++];
    if (ndims != expect.dims.size())
        throw CorruptionError("checkpoint: tensor '" + name + "' rank mismatch");
    for (size_t i = 0; i < expect.dims.size(); ++i) {
        if (r.u32() != static_cast<uint32_t>(expect.dims[i]))
            throw CorruptionError("checkpoint: tensor '" + name + "' shape mismatch");
    }
    for (size_t i = 0; i < expect.size; ++i) dst[i] = r.f64();
}

} // namespace

std::vector<uint8_t> save_checkpoint(const ConvNet& net) {
    for (double p : net.params)
        if (!std::isfinite(p))
            throw ValidationError("checkpoint: refusing to save non-finite parameters");
    for (double p : net.state)
        if (!std::isfinite(p))
            throw ValidationError("checkpoint: refusing to save non-finite state");

    std::vector<uint8_t> out;
    out.insert(out.end(), kMagic, kMagic + 8);
    put_u32(out, kVersion);
    put_u32(out, net.head() == HeadKind::vanilla ? 0u : 1u);

    const auto& c = net.config();
    put_u32(out, c.input_height);
    put_u32(out, c.input_width);
    put_u32(out, c.input_channels);
    put_u32(out, c.conv1_channels);
    put_u32(out, c.conv2_channels);
    put_u32(out, c.dense_width);
    put_u32(out, c.num_classes);
    put_f64(out, c.dropout_p);
    put_u64(out, c.seed);
    const auto& dq = net.duq_config();
    put_u32(out, dq.embed_dim);
    put_f64(out, dq.sigma);
    put_f64(out, dq.momentum);

    put_u32(out, static_cast<uint32_t>(net.param_views().size() + net.state_views().size()));
    for (const auto& v : net.param_views()) put_tensor(out, v, net.params.data() + v.offset);
    for (const auto& v : net.state_views()) put_tensor(out, v, net.state.data() + v.offset);
    return out;
}

ConvNet load_checkpoint(const std::vector<uint8_t>& bytes) {
    Reader r{bytes};
    if (r.str(8) != std::string(kMagic, kMagic + 8))
        throw CorruptionError("checkpoint: bad magic");
    const uint32_t version = r.u32();
    if (version != kVersion)
        throw IncompatibilityError("checkpoint: format version " + std::to_string(version) +
                                   " is not supported (expected " + std::to_string(kVersion) +
                                   ")");
    const uint32_t head_kind = r.u32();
    if (head_kind > 1) throw CorruptionError("checkpoint: unknown head kind");

    ClassifierConfig cfg;
    cfg.input_height = static_cast<int>(r.u32());
    cfg.input_width = static_cast<int>(r.u32());
    cfg.input_channels = static_cast<int>(r.u32());
    cfg.conv1_channels = static_cast<int>(r.u32());
    cfg.conv2_channels = static_cast<int>(r.u32());
    cfg.dense_width = static_cast<int>(r.u32());
    cfg.num_classes = static_cast<int>(r.u32());
    cfg.dropout_p = r.f64();
    cfg.seed = r.u64();
    DuqConfig dq;
    dq.embed_dim = static_cast<int>(r.u32());
    dq.sigma = r.f64();
    dq.momentum = r.f64();

    ConvNet net(cfg, head_kind == 0 ? HeadKind::vanilla : HeadKind::duq, dq);
    const uint32_t tensor_count = r.u32();
    if (tensor_count != net.param_views().size() + net.state_views().size())
        throw CorruptionError("checkpoint: tensor count mismatch");
    for (const auto& v : net.param_views()) read_tensor(r, v, net.params.data() + v.offset);
    for (const auto& v : net.state_views()) read_tensor(r, v, net.state.data() + v.offset);
    if (r.pos != bytes.size())
        throw CorruptionError("checkpoint: " + std::to_string(bytes.size() - r.pos) +
                              " trailing bytes");
    return net;
}

void save_checkpoint_file(const ConvNet& net, const std::string& path) {
    const auto bytes = save_checkpoint(net);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("checkpoint: cannot write '" + path + "'");
    out.write(reinterpret_cast<const char*>(bytes.data()), bytes.size());
}

ConvNet load_checkpoint_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("checkpoint: cannot open '" + path + "'");
    std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                               std::istreambuf_iterator<char>());
    return load_checkpoint(bytes);
}

} // namespace pqt
