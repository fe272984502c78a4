#include "volreg/models.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

namespace volreg {

ModelFamily family_from_string(const std::string& name) {
    if (name == "slice_mean") return ModelFamily::slice_mean;
    if (name == "slice_max") return ModelFamily::slice_max;
    if (name == "slice_attention") return ModelFamily::slice_attention;
    if (name == "slice_rnn") return ModelFamily::slice_rnn;
    if (name == "cnn3d") return ModelFamily::cnn3d;
    throw ConfigError("unknown model family '" + name +
                      "' (expected slice_mean|slice_max|slice_attention|slice_rnn|cnn3d)");
}

std::string family_to_string(ModelFamily family) {
    switch (family) {
        case ModelFamily::slice_mean: return "slice_mean";
        case ModelFamily::slice_max: return "slice_max";
        case ModelFamily::slice_attention: return "slice_attention";
        case ModelFamily::slice_rnn: return "slice_rnn";
        default: return "cnn3d";
    }
}

int64_t ModelSpec::head_in() const {
    switch (family) {
        case ModelFamily::slice_attention: return heads * value_dim();
        case ModelFamily::slice_rnn: return rnn_hidden;
        case ModelFamily::cnn3d: return 0;  // no feed-forward head
        default: return d;
    }
}

void ModelSpec::validate() const {
    if (d < 1 || heads < 1 || head_hidden < 1 || rnn_hidden < 1 || rnn_feature < 1)
        throw ConfigError("model spec: dims and head count must be >= 1");
    if (encoder_widths.empty()) throw ConfigError("model spec: encoder_widths must be nonempty");
    for (int64_t w : encoder_widths)
        if (w < 1) throw ConfigError("model spec: encoder widths must be >= 1");
}

namespace {

std::string join_ints(const std::vector<int64_t>& values) {
    std::ostringstream os;
    for (size_t i = 0; i < values.size(); ++i) os << (i ? "," : "") << values[i];
    return os.str();
}

std::vector<int64_t> parse_int_list(const std::string& text) {
    std::vector<int64_t> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        try {
            out.push_back(std::stoll(item));
        } catch (const std::exception&) {
            throw ConfigError("bad integer list entry '" + item + "'");
        }
    }
    if (out.empty()) throw ConfigError("empty integer list");
    return out;
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

}  // namespace

std::map<std::string, std::string> ModelSpec::to_kv() const {
    std::map<std::string, std::string> kv;
    kv["family"] = family_to_string(family);
    kv["d"] = std::to_string(d);
    kv["d_key"] = std::to_string(d_key);
    kv["d_value"] = std::to_string(d_value);
    kv["heads"] = std::to_string(heads);
    kv["encoder_widths"] = join_ints(encoder_widths);
    kv["head_hidden"] = std::to_string(head_hidden);
    kv["rnn_hidden"] = std::to_string(rnn_hidden);
    kv["rnn_feature"] = std::to_string(rnn_feature);
    kv["axis"] = axis_to_string(axis);
    kv["input_dims"] = join_ints({input_dims[0], input_dims[1], input_dims[2]});
    return kv;
}

ModelSpec ModelSpec::from_kv(const std::map<std::string, std::string>& kv) {
    ModelSpec spec;
    for (const auto& [key, value] : kv) {
        if (key == "family") spec.family = family_from_string(value);
        else if (key == "d") spec.d = parse_int(value, key);
        else if (key == "d_key") spec.d_key = parse_int(value, key);
        else if (key == "d_value") spec.d_value = parse_int(value, key);
        else if (key == "heads") spec.heads = parse_int(value, key);
        else if (key == "encoder_widths") spec.encoder_widths = parse_int_list(value);
        else if (key == "head_hidden") spec.head_hidden = parse_int(value, key);
        else if (key == "rnn_hidden") spec.rnn_hidden = parse_int(value, key);
        else if (key == "rnn_feature") spec.rnn_feature = parse_int(value, key);
        else if (key == "axis") spec.axis = axis_from_string(value);
        else if (key == "input_dims") {
            auto v = parse_int_list(value);
            if (v.size() != 3) throw ConfigError("input_dims needs 3 extents");
            spec.input_dims = {v[0], v[1], v[2]};
        } else {
            throw ConfigError("unknown model spec key '" + key + "'");
        }
    }
    spec.validate();
    return spec;
}

// ---- layer initialization ----------------------------------------------------

namespace {

template <typename T>
TensorT<T> uniform_init(std::vector<int64_t> shape, int64_t fan_in, Rng& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    std::vector<T> values(static_cast<size_t>(shape_numel(shape)));
    for (auto& v : values) v = static_cast<T>(rng.uniform(-bound, bound));
    return TensorT<T>::from_values(std::move(shape), std::move(values), true);
}

template <typename T>
Conv2dLayerT<T> init_conv2d(int64_t c_out, int64_t c_in, int64_t k, Rng& rng) {
    const int64_t fan_in = c_in * k * k;
    return {uniform_init<T>({c_out, c_in, k, k}, fan_in, rng),
            uniform_init<T>({c_out}, fan_in, rng)};
}

template <typename T>
Conv3dLayerT<T> init_conv3d(int64_t c_out, int64_t c_in, std::array<int64_t, 3> k, Rng& rng) {
    const int64_t fan_in = c_in * k[0] * k[1] * k[2];
    return {uniform_init<T>({c_out, c_in, k[0], k[1], k[2]}, fan_in, rng),
            uniform_init<T>({c_out}, fan_in, rng)};
}

template <typename T>
NormLayerT<T> init_norm(int64_t channels) {
    return {TensorT<T>::full({channels}, T(1), true), TensorT<T>::zeros({channels}, true)};
}

template <typename T>
LinearLayerT<T> init_linear(int64_t f_out, int64_t f_in, Rng& rng) {
    return {uniform_init<T>({f_out, f_in}, f_in, rng), uniform_init<T>({f_out}, f_in, rng)};
}

template <typename T>
void collect_encoder_params(Encoder2dT<T>& enc, std::vector<NamedParam<T>>& out) {
    for (size_t i = 0; i < enc.convs.size(); ++i) {
        const std::string base = "encoder.block" + std::to_string(i);
        out.push_back({base + ".conv.weight", enc.convs[i].weight});
        out.push_back({base + ".conv.bias", enc.convs[i].bias});
        out.push_back({base + ".norm.gain", enc.norms[i].gain});
        out.push_back({base + ".norm.shift", enc.norms[i].shift});
    }
    out.push_back({"encoder.proj.weight", enc.projection.weight});
    out.push_back({"encoder.proj.bias", enc.projection.bias});
}

}  // namespace

template <typename T>
Encoder2dT<T> make_encoder2d(const std::vector<int64_t>& widths, int64_t out_features, Rng& rng) {
    Encoder2dT<T> enc;
    int64_t c_in = 1;
    for (int64_t width : widths) {
        enc.convs.push_back(init_conv2d<T>(width, c_in, 3, rng));
        enc.norms.push_back(init_norm<T>(width));
        c_in = width;
    }
    enc.projection = init_conv2d<T>(out_features, c_in, 1, rng);
    return enc;
}

template <typename T>
TensorT<T> Encoder2dT<T>::forward(const TensorT<T>& slices) const {
    if (slices.dim() != 4 || slices.extent(1) != 1)
        throw DataError("encoder input must be [p, 1, H, W]");
    TensorT<T> x = slices;
    for (size_t i = 0; i < convs.size(); ++i) {
        x = conv2d(x, convs[i].weight, convs[i].bias, 1, 1);
        x = instance_norm(x, norms[i].gain, norms[i].shift);
        x = relu(x);
        x = max_pool2d(x, 2, 2);
    }
    x = conv2d(x, projection.weight, projection.bias, 1, 0);
    return global_avg_pool(x);
}

template <typename T>
TensorT<T> encode_slices(const TensorT<T>& slices, const Encoder2dT<T>& encoder) {
    return encoder.forward(slices);
}

// ---- model implementations ----------------------------------------------------

namespace {

template <typename T>
class SliceSetModelT final : public ModelT<T> {
public:
    SliceSetModelT(ModelSpec spec, uint64_t seed) : ModelT<T>(std::move(spec)) {
        Rng rng(mix_seed(seed, 0x6d6f64));
        const auto& s = this->spec_;
        encoder_ = make_encoder2d<T>(s.encoder_widths, s.encoder_out(), rng);
        if (s.family == ModelFamily::slice_attention)
            attention_ = init_attention_params<T>(s.d, s.key_dim(), s.value_dim(), s.heads, rng);
        fc1_ = init_linear<T>(s.head_hidden, s.head_in(), rng);
        fc2_ = init_linear<T>(1, s.head_hidden, rng);
    }

    TensorT<T> predict_batch(std::span<const TensorT<T>> scans) override {
        if (scans.empty()) throw DataError("predict_batch: no scans");
        std::vector<TensorT<T>> parts(scans.begin(), scans.end());
        auto flat = parts.size() == 1 ? parts[0] : concat_rows(parts);
        auto enc = encoder_.forward(flat);  // [sum p, d]

        std::vector<TensorT<T>> embeddings;
        embeddings.reserve(scans.size());
        int64_t row = 0;
        for (const auto& scan : scans) {
            const int64_t p = scan.extent(0);
            auto rows = narrow(enc, 0, row, p);
            row += p;
            TensorT<T> agg;
            switch (this->spec_.family) {
                case ModelFamily::slice_mean: agg = aggregate_mean(rows); break;
                case ModelFamily::slice_max: agg = aggregate_max(rows); break;
                default: agg = aggregate_attention(rows, *attention_); break;
            }
            embeddings.push_back(reshape(agg, {1, this->spec_.head_in()}));
        }
        auto batch = embeddings.size() == 1 ? embeddings[0] : concat_rows(embeddings);
        auto hidden = relu(linear(batch, fc1_.weight, fc1_.bias));
        auto out = linear(hidden, fc2_.weight, fc2_.bias);  // [B, 1]
        return reshape(out, {static_cast<int64_t>(scans.size())});
    }

    std::vector<NamedParam<T>> parameters() override {
        std::vector<NamedParam<T>> out;
        collect_encoder_params(encoder_, out);
        if (attention_) {
            out.push_back({"attn.query", attention_->query});
            out.push_back({"attn.key.weight", attention_->key_weight});
            out.push_back({"attn.key.bias", attention_->key_bias});
            out.push_back({"attn.value.weight", attention_->value_weight});
            out.push_back({"attn.value.bias", attention_->value_bias});
        }
        out.push_back({"head.fc1.weight", fc1_.weight});
        out.push_back({"head.fc1.bias", fc1_.bias});
        out.push_back({"head.fc2.weight", fc2_.weight});
        out.push_back({"head.fc2.bias", fc2_.bias});
        return out;
    }

    void zero_output_weights() override {
        auto w = fc2_.weight.values();
        std::fill(w.begin(), w.end(), T(0));
    }
    void set_output_bias(T value) override { fc2_.bias.values()[0] = value; }
    T output_bias() const override { return fc2_.bias.values()[0]; }

    const Encoder2dT<T>& encoder() const { return encoder_; }
    const AttentionParamsT<T>& attention() const { return *attention_; }

private:
    Encoder2dT<T> encoder_;
    std::optional<AttentionParamsT<T>> attention_;
    LinearLayerT<T> fc1_, fc2_;
};

template <typename T>
class SliceRnnModelT final : public ModelT<T> {
public:
    SliceRnnModelT(ModelSpec spec, uint64_t seed) : ModelT<T>(std::move(spec)) {
        Rng rng(mix_seed(seed, 0x6d6f64));
        const auto& s = this->spec_;
        encoder_ = make_encoder2d<T>(s.encoder_widths, s.rnn_feature, rng);
        lstm_.w_input = uniform_init<T>({4 * s.rnn_hidden, s.rnn_feature}, s.rnn_feature, rng);
        lstm_.w_hidden = uniform_init<T>({4 * s.rnn_hidden, s.rnn_hidden}, s.rnn_hidden, rng);
        lstm_.bias = uniform_init<T>({4 * s.rnn_hidden}, s.rnn_hidden, rng);
        fc1_ = init_linear<T>(s.head_hidden, s.rnn_hidden, rng);
        fc2_ = init_linear<T>(1, s.head_hidden, rng);
    }

    TensorT<T> predict_batch(std::span<const TensorT<T>> scans) override {
        if (scans.empty()) throw DataError("predict_batch: no scans");
        std::vector<TensorT<T>> parts(scans.begin(), scans.end());
        auto flat = parts.size() == 1 ? parts[0] : concat_rows(parts);
        auto enc = encoder_.forward(flat);  // [sum p, F]

        const int64_t hidden = this->spec_.rnn_hidden;
        std::vector<TensorT<T>> finals;
        finals.reserve(scans.size());
        int64_t row = 0;
        for (const auto& scan : scans) {
            const int64_t p = scan.extent(0);
            auto h = TensorT<T>::zeros({1, hidden});
            auto c = TensorT<T>::zeros({1, hidden});
            for (int64_t t = 0; t < p; ++t) {
                auto x_t = narrow(enc, 0, row + t, 1);
                auto hc = lstm_step(x_t, h, c, lstm_);
                h = hc.first;
                c = hc.second;
            }
            row += p;
            finals.push_back(h);
        }
        auto batch = finals.size() == 1 ? finals[0] : concat_rows(finals);
        auto hid = relu(linear(batch, fc1_.weight, fc1_.bias));
        auto out = linear(hid, fc2_.weight, fc2_.bias);
        return reshape(out, {static_cast<int64_t>(scans.size())});
    }

    std::vector<NamedParam<T>> parameters() override {
        std::vector<NamedParam<T>> out;
        collect_encoder_params(encoder_, out);
        out.push_back({"lstm.w_input", lstm_.w_input});
        out.push_back({"lstm.w_hidden", lstm_.w_hidden});
        out.push_back({"lstm.bias", lstm_.bias});
        out.push_back({"head.fc1.weight", fc1_.weight});
        out.push_back({"head.fc1.bias", fc1_.bias});
        out.push_back({"head.fc2.weight", fc2_.weight});
        out.push_back({"head.fc2.bias", fc2_.bias});
        return out;
    }

    void zero_output_weights() override {
        auto w = fc2_.weight.values();
        std::fill(w.begin(), w.end(), T(0));
    }
    void set_output_bias(T value) override { fc2_.bias.values()[0] = value; }
    T output_bias() const override { return fc2_.bias.values()[0]; }

private:
    Encoder2dT<T> encoder_;
    LstmParamsT<T> lstm_;
    LinearLayerT<T> fc1_, fc2_;
};

template <typename T>
class Cnn3dModelT final : public ModelT<T> {
public:
    Cnn3dModelT(ModelSpec spec, uint64_t seed) : ModelT<T>(std::move(spec)) {
        Rng rng(mix_seed(seed, 0x6d6f64));
        const auto& s = this->spec_;
        std::array<int64_t, 3> extent = s.input_dims;
        int64_t c_in = 1;
        for (int64_t width : s.encoder_widths) {
            for (int64_t e : extent)
                if (e < 2)
                    throw ConfigError(
                        "cnn3d: input dims too small for " +
                        std::to_string(s.encoder_widths.size()) + " pooled blocks");
            convs_.push_back(init_conv3d<T>(width, c_in, {3, 3, 3}, rng));
            norms_.push_back(init_norm<T>(width));
            for (auto& e : extent) e = e / 2;
            c_in = width;
        }
        final_ = init_conv3d<T>(1, c_in, extent, rng);
    }

    TensorT<T> predict_batch(std::span<const TensorT<T>> scans) override {
        if (scans.empty()) throw DataError("predict_batch: no scans");
        for (const auto& scan : scans) {
            if (scan.dim() != 5 || scan.extent(0) != 1 || scan.extent(1) != 1)
                throw DataError("cnn3d scan must be [1, 1, D1, D2, D3]");
            if (scan.extent(2) != this->spec_.input_dims[0] ||
                scan.extent(3) != this->spec_.input_dims[1] ||
                scan.extent(4) != this->spec_.input_dims[2])
                throw DataError("cnn3d: volume dims do not match model input_dims");
        }
        std::vector<TensorT<T>> parts(scans.begin(), scans.end());
        auto x = parts.size() == 1 ? parts[0] : concat_rows(parts);
        for (size_t i = 0; i < convs_.size(); ++i) {
            x = conv3d(x, convs_[i].weight, convs_[i].bias, 1, 1);
            x = instance_norm(x, norms_[i].gain, norms_[i].shift);
            x = relu(x);
            x = max_pool3d(x, 2, 2);
        }
        x = conv3d(x, final_.weight, final_.bias, 1, 0);  // [B,1,1,1,1]
        return reshape(x, {static_cast<int64_t>(scans.size())});
    }

    std::vector<NamedParam<T>> parameters() override {
        std::vector<NamedParam<T>> out;
        for (size_t i = 0; i < convs_.size(); ++i) {
            const std::string base = "encoder3d.block" + std::to_string(i);
            out.push_back({base + ".conv.weight", convs_[i].weight});
            out.push_back({base + ".conv.bias", convs_[i].bias});
            out.push_back({base + ".norm.gain", norms_[i].gain});
            out.push_back({base + ".norm.shift", norms_[i].shift});
        }
        out.push_back({"final.weight", final_.weight});
        out.push_back({"final.bias", final_.bias});
        return out;
    }

    void zero_output_weights() override {
        auto w = final_.weight.values();
        std::fill(w.begin(), w.end(), T(0));
    }
    void set_output_bias(T value) override { final_.bias.values()[0] = value; }
    T output_bias() const override { return final_.bias.values()[0]; }

private:
    std::vector<Conv3dLayerT<T>> convs_;
    std::vector<NormLayerT<T>> norms_;
    Conv3dLayerT<T> final_;
};

}  // namespace

template <typename T>
std::vector<TensorT<T>> ModelT<T>::parameter_tensors() {
    std::vector<TensorT<T>> out;
    for (auto& named : parameters()) out.push_back(named.tensor);
    return out;
}

template <typename T>
int64_t ModelT<T>::param_count() {
    int64_t count = 0;
    for (auto& named : parameters()) count += named.tensor.numel();
    return count;
}

template <typename T>
std::unique_ptr<ModelT<T>> make_model(const ModelSpec& spec, uint64_t seed) {
    spec.validate();
    switch (spec.family) {
        case ModelFamily::slice_mean:
        case ModelFamily::slice_max:
        case ModelFamily::slice_attention:
            return std::make_unique<SliceSetModelT<T>>(spec, seed);
        case ModelFamily::slice_rnn:
            return std::make_unique<SliceRnnModelT<T>>(spec, seed);
        default:
            return std::make_unique<Cnn3dModelT<T>>(spec, seed);
    }
}

// ---- checkpoints ----------------------------------------------------------------

namespace {
constexpr char kCkptMagic[4] = {'V', 'R', 'C', 'K'};
constexpr uint16_t kCkptVersion = 1;

template <typename V>
void write_pod(std::ofstream& out, const V& v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(V));
}

template <typename V>
V read_pod(std::ifstream& in, const std::string& path) {
    V v{};
    in.read(reinterpret_cast<char*>(&v), sizeof(V));
    if (!in) throw DataError("truncated checkpoint: " + path);
    return v;
}
}  // namespace

void save_checkpoint(const std::filesystem::path& path, ModelT<float>& model) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write checkpoint: " + path.string());
    out.write(kCkptMagic, 4);
    write_pod(out, kCkptVersion);

    std::ostringstream spec_text;
    for (const auto& [key, value] : model.spec().to_kv()) spec_text << key << "=" << value << "\n";
    const std::string text = spec_text.str();
    write_pod(out, static_cast<uint32_t>(text.size()));
    out.write(text.data(), static_cast<std::streamsize>(text.size()));

    auto params = model.parameters();
    write_pod(out, static_cast<uint32_t>(params.size()));
    for (auto& named : params) {
        write_pod(out, static_cast<uint16_t>(named.name.size()));
        out.write(named.name.data(), static_cast<std::streamsize>(named.name.size()));
        write_pod(out, static_cast<uint8_t>(named.tensor.dim()));
        for (int64_t e : named.tensor.shape()) write_pod(out, static_cast<uint32_t>(e));
        out.write(reinterpret_cast<const char*>(named.tensor.values().data()),
                  static_cast<std::streamsize>(named.tensor.numel() * sizeof(float)));
    }
    if (!out) throw DataError("failed writing checkpoint: " + path.string());
}

std::unique_ptr<ModelT<float>> load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open checkpoint: " + path.string());
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, kCkptMagic, 4) != 0)
        throw DataError("not a checkpoint file: " + path.string());
    if (read_pod<uint16_t>(in, path.string()) != kCkptVersion)
        throw DataError("unsupported checkpoint version in " + path.string());

    const auto text_len = read_pod<uint32_t>(in, path.string());
    std::string text(text_len, '\0');
    in.read(text.data(), text_len);
    if (!in) throw DataError("truncated checkpoint: " + path.string());
    std::map<std::string, std::string> kv;
    std::istringstream lines(text);
    std::string line;
    while (std::getline(lines, line)) {
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw DataError("malformed spec line in checkpoint: " + line);
        kv[line.substr(0, eq)] = line.substr(eq + 1);
    }
    auto model = make_model<float>(ModelSpec::from_kv(kv), 0);

    std::map<std::string, TensorT<float>> by_name;
    for (auto& named : model->parameters()) by_name.emplace(named.name, named.tensor);

    const auto blob_count = read_pod<uint32_t>(in, path.string());
    if (blob_count != by_name.size())
        throw DataError("checkpoint parameter count does not match model");
    for (uint32_t b = 0; b < blob_count; ++b) {
        const auto name_len = read_pod<uint16_t>(in, path.string());
        std::string name(name_len, '\0');
        in.read(name.data(), name_len);
        const auto ndim = read_pod<uint8_t>(in, path.string());
        std::vector<int64_t> shape(ndim);
        for (auto& e : shape) e = read_pod<uint32_t>(in, path.string());
        auto it = by_name.find(name);
        if (it == by_name.end())
            throw DataError("checkpoint parameter '" + name + "' not in model");
        if (it->second.shape() != shape)
            throw DataError("checkpoint parameter '" + name + "' has mismatched shape");
        in.read(reinterpret_cast<char*>(it->second.values().data()),
                static_cast<std::streamsize>(it->second.numel() * sizeof(float)));
        if (!in) throw DataError("truncated checkpoint: " + path.string());
    }
    return model;
}

// ---- instantiations ----------------------------------------------------------------

template struct Encoder2dT<float>;
template struct Encoder2dT<double>;
template Encoder2dT<float> make_encoder2d<float>(const std::vector<int64_t>&, int64_t, Rng&);
template Encoder2dT<double> make_encoder2d<double>(const std::vector<int64_t>&, int64_t, Rng&);
template TensorT<float> encode_slices<float>(const TensorT<float>&, const Encoder2dT<float>&);
template TensorT<double> encode_slices<double>(const TensorT<double>&, const Encoder2dT<double>&);
template class ModelT<float>;
template class ModelT<double>;
template std::unique_ptr<ModelT<float>> make_model<float>(const ModelSpec&, uint64_t);
template std::unique_ptr<ModelT<double>> make_model<double>(const ModelSpec&, uint64_t);

}  // namespace volreg
