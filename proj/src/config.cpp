#include "pqt/config.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>

#include "pqt/csv.hpp"

namespace pqt {

namespace {

std::string trim(const std::string& s) {
    size_t b = 0, e = s.size();
    while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
    return s.substr(b, e - b);
}

[[noreturn]] void fail(size_t line, const std::string& msg) {
    throw ConfigError("config: line " + std::to_string(line) + ": " + msg);
}

// Strips a trailing comment while tracking string literals.
std::string strip_comment(const std::string& line) {
    bool in_str = false;
    for (size_t i = 0; i < line.size(); ++i) {
        const char c = line[i];
        if (c == '"' && (i == 0 || line[i - 1] != '\\')) in_str = !in_str;
        if (c == '#' && !in_str) return line.substr(0, i);
    }
    return line;
}

bool valid_key(const std::string& k) {
    if (k.empty()) return false;
    for (char c : k)
        if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '.' || c == '-'))
            return false;
    return true;
}

std::string parse_string_literal(const std::string& raw, size_t line) {
    if (raw.size() < 2 || raw.back() != '"') fail(line, "unterminated string");
    std::string out;
    for (size_t i = 1; i + 1 < raw.size(); ++i) {
        char c = raw[i];
        if (c == '\\') {
            if (i + 2 >= raw.size()) fail(line, "dangling escape");
            const char n = raw[++i];
            switch (n) {
                case '"': out.push_back('"'); break;
                case '\\': out.push_back('\\'); break;
                case 'n': out.push_back('\n'); break;
                case 't': out.push_back('\t'); break;
                default: fail(line, std::string("unsupported escape \\") + n);
            }
        } else {
            out.push_back(c);
        }
    }
    return out;
}

TomlValue parse_scalar(const std::string& raw, size_t line);

std::vector<std::string> split_array_items(const std::string& inner, size_t line) {
    std::vector<std::string> items;
    std::string cur;
    bool in_str = false;
    for (size_t i = 0; i < inner.size(); ++i) {
        const char c = inner[i];
        if (c == '"' && (i == 0 || inner[i - 1] != '\\')) in_str = !in_str;
        if (c == ',' && !in_str) {
            items.push_back(cur);
            cur.clear();
        } else {
            cur.push_back(c);
        }
    }
    if (in_str) fail(line, "unterminated string in array");
    if (!trim(cur).empty() || !items.empty()) items.push_back(cur);
    // Drop a trailing empty item from a trailing comma.
    while (!items.empty() && trim(items.back()).empty()) items.pop_back();
    return items;
}

TomlValue parse_value(const std::string& raw_in, size_t line) {
    const std::string raw = trim(raw_in);
    if (raw.empty()) fail(line, "missing value");
    if (raw.front() == '[') {
        if (raw.back() != ']') fail(line, "unterminated array (arrays must be single-line)");
        TomlValue v;
        v.kind = TomlValue::Kind::array;
        for (const auto& item : split_array_items(raw.substr(1, raw.size() - 2), line))
            v.arr.push_back(parse_scalar(trim(item), line));
        return v;
    }
    return parse_scalar(raw, line);
}

TomlValue parse_scalar(const std::string& raw, size_t line) {
    TomlValue v;
    if (raw.empty()) fail(line, "empty value");
    if (raw.front() == '"') {
        v.kind = TomlValue::Kind::string;
        v.s = parse_string_literal(raw, line);
        return v;
    }
    if (raw == "true" || raw == "false") {
        v.kind = TomlValue::Kind::boolean;
        v.b = raw == "true";
        return v;
    }
    // integer?
    {
        bool ok = true;
        size_t i = (raw[0] == '+' || raw[0] == '-') ? 1 : 0;
        if (i == raw.size()) ok = false;
        for (; i < raw.size() && ok; ++i)
            if (!std::isdigit(static_cast<unsigned char>(raw[i]))) ok = false;
        if (ok) {
            v.kind = TomlValue::Kind::integer;
            try {
                v.i = std::stoll(raw);
            } catch (...) {
                fail(line, "integer out of range: " + raw);
            }
            return v;
        }
    }
    try {
        size_t pos = 0;
        v.d = std::stod(raw, &pos);
        if (pos != raw.size()) fail(line, "cannot parse value: " + raw);
        v.kind = TomlValue::Kind::real;
        return v;
    } catch (const ConfigError&) {
        throw;
    } catch (...) {
        fail(line, "cannot parse value: " + raw);
    }
}

} // namespace

double TomlValue::as_real() const {
    if (kind == Kind::real) return d;
    if (kind == Kind::integer) return static_cast<double>(i);
    throw ConfigError("config: expected a number");
}

int64_t TomlValue::as_int() const {
    if (kind == Kind::integer) return i;
    throw ConfigError("config: expected an integer");
}

const std::string& TomlValue::as_string() const {
    if (kind == Kind::string) return s;
    throw ConfigError("config: expected a string");
}

bool TomlValue::as_bool() const {
    if (kind == Kind::boolean) return b;
    throw ConfigError("config: expected a boolean");
}

TomlTable TomlTable::parse(const std::string& text) {
    TomlTable t;
    std::istringstream in(text);
    std::string line;
    std::string section;
    size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        line = trim(strip_comment(line));
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']') fail(lineno, "unterminated section header");
            section = trim(line.substr(1, line.size() - 2));
            if (!valid_key(section)) fail(lineno, "invalid section name '" + section + "'");
            continue;
        }
        const size_t eq = [&] {
            bool in_str = false;
            for (size_t i = 0; i < line.size(); ++i) {
                if (line[i] == '"') in_str = !in_str;
                if (line[i] == '=' && !in_str) return i;
            }
            return std::string::npos;
        }();
        if (eq == std::string::npos) fail(lineno, "expected key = value");
        const std::string key = trim(line.substr(0, eq));
        if (!valid_key(key)) fail(lineno, "invalid key '" + key + "'");
        const std::string full = section.empty() ? key : section + "." + key;
        if (t.values_.count(full)) fail(lineno, "duplicate key '" + full + "'");
        t.values_[full] = parse_value(line.substr(eq + 1), lineno);
    }
    return t;
}

TomlTable TomlTable::parse_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("config: cannot open '" + path + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    return parse(ss.str());
}

const TomlValue& TomlTable::at(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) throw ConfigError("config: missing key '" + key + "'");
    return it->second;
}

std::string TomlTable::get_string(const std::string& key, const std::string& fallback) const {
    return has(key) ? at(key).as_string() : fallback;
}
int64_t TomlTable::get_int(const std::string& key, int64_t fallback) const {
    return has(key) ? at(key).as_int() : fallback;
}
double TomlTable::get_real(const std::string& key, double fallback) const {
    return has(key) ? at(key).as_real() : fallback;
}
bool TomlTable::get_bool(const std::string& key, bool fallback) const {
    return has(key) ? at(key).as_bool() : fallback;
}

std::vector<std::string> TomlTable::get_string_array(const std::string& key,
                                                     std::vector<std::string> fallback) const {
    if (!has(key)) return fallback;
    const auto& v = at(key);
    if (v.kind != TomlValue::Kind::array) throw ConfigError("config: '" + key + "' must be an array");
    std::vector<std::string> out;
    for (const auto& item : v.arr) out.push_back(item.as_string());
    return out;
}

std::vector<int64_t> TomlTable::get_int_array(const std::string& key,
                                              std::vector<int64_t> fallback) const {
    if (!has(key)) return fallback;
    const auto& v = at(key);
    if (v.kind != TomlValue::Kind::array) throw ConfigError("config: '" + key + "' must be an array");
    std::vector<int64_t> out;
    for (const auto& item : v.arr) out.push_back(item.as_int());
    return out;
}

const char* to_string(Head h) {
    switch (h) {
        case Head::vanilla: return "vanilla";
        case Head::mc_dropout: return "mc_dropout";
        case Head::duq: return "duq";
    }
    return "?";
}

Head head_from_string(const std::string& s) {
    if (s == "vanilla") return Head::vanilla;
    if (s == "mc_dropout") return Head::mc_dropout;
    if (s == "duq") return Head::duq;
    throw ConfigError("unknown head '" + s + "'");
}

void ExperimentConfig::validate() const {
    if (heads.empty() || conditions.empty() || suites.empty() || seeds.empty())
        throw ConfigError("experiment: need at least one head, condition, suite and seed");
    if (std::find(heads.begin(), heads.end(), Head::mc_dropout) != heads.end() &&
        model.dropout_p <= 0.0)
        throw ConfigError("experiment: mc_dropout head requires model.dropout_p > 0");
    if (mc_passes < 1) throw ConfigError("experiment: eval.mc_passes must be >= 1");
    if (dataset.kind == DatasetSpec::Kind::cifar && dataset.cifar.train_files.empty())
        throw ConfigError("experiment: cifar dataset needs train_files");
    pool.validate(dataset.kind == DatasetSpec::Kind::synthetic ? dataset.synthetic.classes
                                                               : dataset.cifar.classes);
    train.validate();
}

std::string ExperimentConfig::canonical() const {
    std::ostringstream o;
    o << "dataset.kind=" << (dataset.kind == DatasetSpec::Kind::synthetic ? "synthetic" : "cifar")
      << "\n";
    if (dataset.kind == DatasetSpec::Kind::synthetic) {
        const auto& s = dataset.synthetic;
        o << "dataset.n_train=" << s.n_train << "\ndataset.n_test=" << s.n_test
          << "\ndataset.classes=" << s.classes << "\ndataset.side=" << s.side
          << "\ndataset.seed=" << s.seed << "\n";
    } else {
        const auto& c = dataset.cifar;
        o << "dataset.train_files=";
        for (const auto& f : c.train_files) o << f << ";";
        o << "\ndataset.test_file=" << c.test_file << "\ndataset.train_count=" << c.train_count
          << "\ndataset.test_count=" << c.test_count << "\ndataset.classes=" << c.classes << "\n";
    }
    o << "labels.noisy_file=" << labels.noisy_file << "\nlabels.multi_file=" << labels.multi_file
      << "\nlabels.synth_noise_frac=" << format_double(labels.synth_noise_frac)
      << "\nlabels.synth_annotators=" << labels.synth_annotators
      << "\nlabels.synth_annotator_flip=" << format_double(labels.synth_annotator_flip)
      << "\nlabels.seed=" << labels.seed << "\n";
    o << "pool.pool_frac=" << format_double(pool.pool_frac)
      << "\npool.multi_frac=" << format_double(pool.multi_frac)
      << "\npool.triple_frac=" << format_double(pool.triple_frac) << "\npool.k_max=" << pool.k_max
      << "\npool.seed=" << pool.seed
      << "\npool.feature_mode=" << (feature_mode == FeatureMode::pixel ? "pixel" : "quality")
      << "\npool.calibrate_target="
      << (calibrate_target ? format_double(*calibrate_target) : std::string("none")) << "\n";
    o << "quality.ridge=" << format_double(quality_ridge) << "\n";
    o << "model.conv1_channels=" << model.conv1_channels
      << "\nmodel.conv2_channels=" << model.conv2_channels
      << "\nmodel.dense_width=" << model.dense_width
      << "\nmodel.dropout_p=" << format_double(model.dropout_p) << "\n";
    o << "duq.embed_dim=" << duq.embed_dim << "\nduq.sigma=" << format_double(duq.sigma)
      << "\nduq.momentum=" << format_double(duq.momentum) << "\n";
    o << "train.epochs=" << train.epochs << "\ntrain.batch_size=" << train.batch_size
      << "\ntrain.learning_rate=" << format_double(train.learning_rate)
      << "\ntrain.momentum=" << format_double(train.momentum)
      << "\ntrain.weight_decay=" << format_double(train.weight_decay) << "\n";
    o << "eval.mc_passes=" << mc_passes << "\neval.shift_seed=" << shift_seed << "\n";
    o << "run.conditions=";
    for (auto c : conditions) o << to_string(c) << ";";
    o << "\nrun.heads=";
    for (auto h : heads) o << to_string(h) << ";";
    o << "\nrun.suites=";
    for (auto s : suites) o << to_string(s) << ";";
    o << "\nrun.seeds=";
    for (auto s : seeds) o << s << ";";
    o << "\n";
    o << "margins.noise_entropy_gap=" << format_double(margins.noise_entropy_gap)
      << "\nmargins.noise_accuracy_gap=" << format_double(margins.noise_accuracy_gap)
      << "\nmargins.pq_entropy_gap=" << format_double(margins.pq_entropy_gap)
      << "\nmargins.pq_accuracy_slack=" << format_double(margins.pq_accuracy_slack) << "\n";
    return o.str();
}

std::string ExperimentConfig::digest() const {
    const std::string c = canonical();
    uint64_t h = 1469598103934665603ULL;
    for (unsigned char ch : c) {
        h ^= ch;
        h *= 1099511628211ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

ExperimentConfig config_from_table(const TomlTable& t) {
    ExperimentConfig c;

    const std::string kind = t.get_string("dataset.kind", "synthetic");
    if (kind == "synthetic") {
        c.dataset.kind = DatasetSpec::Kind::synthetic;
        auto& s = c.dataset.synthetic;
        s.n_train = static_cast<size_t>(t.get_int("dataset.n_train", s.n_train));
        s.n_test = static_cast<size_t>(t.get_int("dataset.n_test", s.n_test));
        s.classes = static_cast<int>(t.get_int("dataset.classes", s.classes));
        s.side = static_cast<int>(t.get_int("dataset.side", s.side));
        s.seed = static_cast<uint64_t>(t.get_int("dataset.seed", s.seed));
    } else if (kind == "cifar") {
        c.dataset.kind = DatasetSpec::Kind::cifar;
        auto& s = c.dataset.cifar;
        s.train_files = t.get_string_array("dataset.train_files", {});
        s.test_file = t.get_string("dataset.test_file", "");
        s.train_count = static_cast<size_t>(t.get_int("dataset.train_count", 0));
        s.test_count = static_cast<size_t>(t.get_int("dataset.test_count", 0));
        s.classes = static_cast<int>(t.get_int("dataset.classes", 10));
    } else {
        throw ConfigError("config: dataset.kind must be 'synthetic' or 'cifar'");
    }

    c.labels.noisy_file = t.get_string("labels.noisy_file", "");
    c.labels.multi_file = t.get_string("labels.multi_file", "");
    c.labels.synth_noise_frac = t.get_real("labels.synth_noise_frac", c.labels.synth_noise_frac);
    c.labels.synth_annotators =
        static_cast<int>(t.get_int("labels.synth_annotators", c.labels.synth_annotators));
    c.labels.synth_annotator_flip =
        t.get_real("labels.synth_annotator_flip", c.labels.synth_annotator_flip);
    c.labels.seed = static_cast<uint64_t>(t.get_int("labels.seed", c.labels.seed));

    c.pool.pool_frac = t.get_real("pool.pool_frac", c.pool.pool_frac);
    c.pool.multi_frac = t.get_real("pool.multi_frac", c.pool.multi_frac);
    c.pool.triple_frac = t.get_real("pool.triple_frac", c.pool.triple_frac);
    c.pool.k_max = static_cast<int>(t.get_int("pool.k_max", c.pool.k_max));
    c.pool.seed = static_cast<uint64_t>(t.get_int("pool.seed", c.pool.seed));
    const std::string fm = t.get_string("pool.feature_mode", "pixel");
    if (fm == "pixel")
        c.feature_mode = FeatureMode::pixel;
    else if (fm == "quality")
        c.feature_mode = FeatureMode::quality;
    else
        throw ConfigError("config: pool.feature_mode must be 'pixel' or 'quality'");
    if (t.has("pool.calibrate_target")) c.calibrate_target = t.at("pool.calibrate_target").as_real();

    c.quality_ridge = t.get_real("quality.ridge", c.quality_ridge);

    c.model.conv1_channels = static_cast<int>(t.get_int("model.conv1_channels", 16));
    c.model.conv2_channels = static_cast<int>(t.get_int("model.conv2_channels", 32));
    c.model.dense_width = static_cast<int>(t.get_int("model.dense_width", 64));
    c.model.dropout_p = t.get_real("model.dropout_p", 0.2);
    c.model.input_channels = 3;

    c.duq.embed_dim = static_cast<int>(t.get_int("duq.embed_dim", c.duq.embed_dim));
    c.duq.sigma = t.get_real("duq.sigma", c.duq.sigma);
    c.duq.momentum = t.get_real("duq.momentum", c.duq.momentum);

    c.train.epochs = static_cast<int>(t.get_int("train.epochs", c.train.epochs));
    c.train.batch_size = static_cast<int>(t.get_int("train.batch_size", c.train.batch_size));
    c.train.learning_rate = t.get_real("train.learning_rate", c.train.learning_rate);
    c.train.momentum = t.get_real("train.momentum", c.train.momentum);
    c.train.weight_decay = t.get_real("train.weight_decay", c.train.weight_decay);

    c.mc_passes = static_cast<int>(t.get_int("eval.mc_passes", c.mc_passes));
    c.shift_seed = static_cast<uint64_t>(t.get_int("eval.shift_seed", c.shift_seed));
    {
        std::vector<std::string> defaults{"rotation", "corruption"};
        c.suites.clear();
        for (const auto& s : t.get_string_array("eval.suites", defaults)) {
            if (s == "rotation")
                c.suites.push_back(SuiteKind::rotation);
            else if (s == "corruption")
                c.suites.push_back(SuiteKind::corruption);
            else
                throw ConfigError("config: unknown suite '" + s + "'");
        }
    }

    {
        std::vector<std::string> defaults{"clean", "noisy_single", "human_multi", "pq_multi"};
        c.conditions.clear();
        for (const auto& s : t.get_string_array("run.conditions", defaults))
            c.conditions.push_back(condition_from_string(s));
    }
    {
        std::vector<std::string> defaults{"vanilla", "mc_dropout", "duq"};
        c.heads.clear();
        for (const auto& s : t.get_string_array("run.heads", defaults))
            c.heads.push_back(head_from_string(s));
    }
    {
        c.seeds.clear();
        for (int64_t s : t.get_int_array("run.seeds", {1, 2, 3}))
            c.seeds.push_back(static_cast<uint64_t>(s));
    }
    c.out_dir = t.get_string("run.out_dir", c.out_dir);
    c.threads = static_cast<int>(t.get_int("run.threads", 0));

    c.margins.noise_entropy_gap =
        t.get_real("margins.noise_entropy_gap", c.margins.noise_entropy_gap);
    c.margins.noise_accuracy_gap =
        t.get_real("margins.noise_accuracy_gap", c.margins.noise_accuracy_gap);
    c.margins.pq_entropy_gap = t.get_real("margins.pq_entropy_gap", c.margins.pq_entropy_gap);
    c.margins.pq_accuracy_slack =
        t.get_real("margins.pq_accuracy_slack", c.margins.pq_accuracy_slack);

    c.validate();
    return c;
}

} // namespace pqt
