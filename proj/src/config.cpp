#include "volreg/config.hpp"

#include <fstream>
#include <sstream>

namespace volreg {

namespace {

std::string trim(const std::string& s) {
    const auto begin = s.find_first_not_of(" \t");
    if (begin == std::string::npos) return "";
    const auto end = s.find_last_not_of(" \t");
    return s.substr(begin, end - begin + 1);
}

double parse_double(const std::string& text, const std::string& key) {
    try {
        size_t pos = 0;
        double v = std::stod(text, &pos);
        if (pos != text.size()) throw std::invalid_argument(text);
        return v;
    } catch (const std::exception&) {
        throw ConfigError("bad number for " + key + ": '" + text + "'");
    }
}

int64_t parse_int(const std::string& text, const std::string& key) {
    try {
        size_t pos = 0;
        int64_t v = std::stoll(text, &pos);
        if (pos != text.size()) throw std::invalid_argument(text);
        return v;
    } catch (const std::exception&) {
        throw ConfigError("bad integer for " + key + ": '" + text + "'");
    }
}

uint64_t parse_uint(const std::string& text, const std::string& key) {
    try {
        size_t pos = 0;
        uint64_t v = std::stoull(text, &pos);
        if (pos != text.size()) throw std::invalid_argument(text);
        return v;
    } catch (const std::exception&) {
        throw ConfigError("bad unsigned integer for " + key + ": '" + text + "'");
    }
}

std::vector<int64_t> parse_int_list(const std::string& text, const std::string& key) {
    std::vector<int64_t> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(parse_int(trim(item), key));
    if (out.empty()) throw ConfigError("empty list for " + key);
    return out;
}

}  // namespace

KvMap parse_config_text(const std::string& text) {
    KvMap kv;
    std::istringstream in(text);
    std::string line;
    size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("config line " + std::to_string(line_no) +
                              ": expected 'key = value'");
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (key.empty()) throw ConfigError("config line " + std::to_string(line_no) +
                                           ": empty key");
        kv[key] = value;
    }
    return kv;
}

KvMap parse_config_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file: " + path.string());
    std::stringstream buffer;
    buffer << in.rdbuf();
    return parse_config_text(buffer.str());
}

void apply_override(KvMap& kv, const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos)
        throw ConfigError("override must be key=value, got '" + assignment + "'");
    const std::string key = trim(assignment.substr(0, eq));
    const std::string value = trim(assignment.substr(eq + 1));
    if (key.empty()) throw ConfigError("override with empty key: '" + assignment + "'");
    kv[key] = value;
}

RunConfig resolve_run_config(const KvMap& kv) {
    RunConfig rc;
    bool grad_clip_explicit = false;
    for (const auto& [key, value] : kv) {
        if (key == "model.family") rc.model.family = family_from_string(value);
        else if (key == "model.d") rc.model.d = parse_int(value, key);
        else if (key == "model.d_key") rc.model.d_key = parse_int(value, key);
        else if (key == "model.d_value") rc.model.d_value = parse_int(value, key);
        else if (key == "model.heads") rc.model.heads = parse_int(value, key);
        else if (key == "model.encoder_widths") rc.model.encoder_widths = parse_int_list(value, key);
        else if (key == "model.head_hidden") rc.model.head_hidden = parse_int(value, key);
        else if (key == "model.rnn_hidden") rc.model.rnn_hidden = parse_int(value, key);
        else if (key == "model.rnn_feature") rc.model.rnn_feature = parse_int(value, key);
        else if (key == "model.axis") rc.model.axis = axis_from_string(value);
        else if (key == "model.input_dims") {
            auto v = parse_int_list(value, key);
            if (v.size() != 3) throw ConfigError("model.input_dims needs 3 extents");
            rc.model.input_dims = {v[0], v[1], v[2]};
        } else if (key == "train.epochs") rc.train.epochs = parse_int(value, key);
        else if (key == "train.lr") rc.train.learning_rate = parse_double(value, key);
        else if (key == "train.weight_decay") rc.train.weight_decay = parse_double(value, key);
        else if (key == "train.batch_size") rc.train.batch_size = parse_int(value, key);
        else if (key == "train.grad_clip") {
            grad_clip_explicit = true;
            if (value == "none")
                rc.train.grad_clip.reset();
            else
                rc.train.grad_clip = parse_double(value, key);
        } else if (key == "train.seed") rc.train.seed = parse_uint(value, key);
        else if (key == "train.subsample_n") rc.train.subsample_n = parse_int(value, key);
        else if (key == "train.subsample_seed") rc.train.subsample_seed = parse_uint(value, key);
        else if (key == "train.fixed_updates") rc.train.fixed_updates = parse_int(value, key);
        else if (key == "data.manifest") rc.data_manifest = value;
        else throw ConfigError("unknown config key '" + key + "'");
    }
    if (!grad_clip_explicit && rc.model.family == ModelFamily::slice_rnn)
        rc.train.grad_clip = 1.0;
    rc.model.validate();
    return rc;
}

std::string RunConfig::to_text() const {
    std::ostringstream os;
    for (const auto& [k, v] : model.to_kv()) os << "model." << k << " = " << v << "\n";
    for (const auto& [k, v] : train.to_kv()) os << k << " = " << v << "\n";
    if (!data_manifest.empty()) os << "data.manifest = " << data_manifest << "\n";
    return os.str();
}

}  // namespace volreg
