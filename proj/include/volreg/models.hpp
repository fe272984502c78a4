#pragma once

#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "volreg/aggregation.hpp"
#include "volreg/data.hpp"
#include "volreg/ops.hpp"
#include "volreg/optim.hpp"
#include "volreg/rng.hpp"

namespace volreg {

enum class ModelFamily { slice_mean, slice_max, slice_attention, slice_rnn, cnn3d };

ModelFamily family_from_string(const std::string& name);
std::string family_to_string(ModelFamily family);

// Architecture selection and hyperparameters. Defaults: d=32, one head,
// hidden layer of 64, LSTM feature size 2 with hidden state 128.
struct ModelSpec {
    ModelFamily family = ModelFamily::slice_mean;
    int64_t d = 32;
    int64_t d_key = 0;    // 0 means "same as d"
    int64_t d_value = 0;  // 0 means "same as d"
    int64_t heads = 1;
    std::vector<int64_t> encoder_widths = {32, 64, 128, 256, 256};
    int64_t head_hidden = 64;
    int64_t rnn_hidden = 128;
    int64_t rnn_feature = 2;
    Axis axis = Axis::sagittal;
    // volume extents; required by the 3D family, whose final convolution
    // spans the remaining spatial extent
    std::array<int64_t, 3> input_dims = {91, 109, 91};

    int64_t key_dim() const { return d_key > 0 ? d_key : d; }
    int64_t value_dim() const { return d_value > 0 ? d_value : d; }
    // width of the encoder output per slice
    int64_t encoder_out() const { return family == ModelFamily::slice_rnn ? rnn_feature : d; }
    // width of the embedding entering the feed-forward head
    int64_t head_in() const;
    void validate() const;

    std::map<std::string, std::string> to_kv() const;
    static ModelSpec from_kv(const std::map<std::string, std::string>& kv);
};

template <typename T>
struct Conv2dLayerT {
    TensorT<T> weight, bias;
};
template <typename T>
struct Conv3dLayerT {
    TensorT<T> weight, bias;
};
template <typename T>
struct NormLayerT {
    TensorT<T> gain, shift;
};
template <typename T>
struct LinearLayerT {
    TensorT<T> weight, bias;
};

// Shared per-slice 2D encoder: 3x3 conv blocks (instance norm, ReLU, 2x2
// max-pool) followed by a 1x1 projection to `out` channels and global
// average pooling.
template <typename T>
struct Encoder2dT {
    std::vector<Conv2dLayerT<T>> convs;
    std::vector<NormLayerT<T>> norms;
    Conv2dLayerT<T> projection;

    // [p, 1, H, W] -> [p, out]
    TensorT<T> forward(const TensorT<T>& slices) const;
};

template <typename T>
Encoder2dT<T> make_encoder2d(const std::vector<int64_t>& widths, int64_t out_features, Rng& rng);

// One d-vector per slice through the shared encoder; row order follows the
// input order.
template <typename T>
TensorT<T> encode_slices(const TensorT<T>& slices, const Encoder2dT<T>& encoder);

// Common model interface. Scans arrive as tensors: slice families take
// [p, 1, H, W] per scan (any nonempty p), the 3D family takes
// [1, 1, D1, D2, D3].
template <typename T>
class ModelT {
public:
    explicit ModelT(ModelSpec spec) : spec_(std::move(spec)) {}
    virtual ~ModelT() = default;

    const ModelSpec& spec() const { return spec_; }

    // scalar prediction per scan, returned as [batch]
    virtual TensorT<T> predict_batch(std::span<const TensorT<T>> scans) = 0;
    TensorT<T> predict_one(const TensorT<T>& scan) { return predict_batch({&scan, 1}); }

    virtual std::vector<NamedParam<T>> parameters() = 0;
    std::vector<TensorT<T>> parameter_tensors();
    int64_t param_count();

    // Output-layer initialization used by the training protocol: zeroed
    // final weights make the initial prediction equal the output bias.
    virtual void zero_output_weights() = 0;
    virtual void set_output_bias(T value) = 0;
    virtual T output_bias() const = 0;

protected:
    ModelSpec spec_;
};

template <typename T>
std::unique_ptr<ModelT<T>> make_model(const ModelSpec& spec, uint64_t seed);

// Single-file checkpoint: versioned header, the spec as key-value text, then
// named parameter blobs (name, shape, little-endian f32).
void save_checkpoint(const std::filesystem::path& path, ModelT<float>& model);
std::unique_ptr<ModelT<float>> load_checkpoint(const std::filesystem::path& path);

using Model = ModelT<float>;

}  // namespace volreg
