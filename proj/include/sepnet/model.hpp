#ifndef SEPNET_MODEL_HPP
#define SEPNET_MODEL_HPP

#include "sepnet/kernels.hpp"
#include "sepnet/rng.hpp"
#include "sepnet/tensor.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace sepnet {

enum class Variant { separable, full_conv, shallow };
enum class Head { imagenet1000, binary };

std::string_view to_string(Variant v);
std::string_view to_string(Head h);
Variant parse_variant(std::string_view s);
Head parse_head(std::string_view s);

struct ModelConfig {
    double alpha = 1.0;
    int resolution = 224;
    int depth_multiplier = 1;
    Variant variant = Variant::separable;
    Head head = Head::imagenet1000;
    bool use_batchnorm = true;
    std::uint64_t seed = 0;

    /// Throws std::invalid_argument for alpha outside (0,1], channel counts that
    /// round to 0, depth_multiplier != 1 or resolution < 32.
    void validate() const;

    friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

/// round(alpha * channels), never below 1.
int scaled_channels(double alpha, int channels);

// ---------------------------------------------------------------------------
// Architecture plan: the weighted layers in order with their geometry. Shared
// by the builder and the cost model.

enum class LayerKind { conv, depthwise, dense };

struct LayerSpec {
    std::string name;
    LayerKind kind = LayerKind::conv;
    int kernel = 1;
    int stride = 1;
    int in_channels = 0;
    int out_channels = 0;
    int in_size = 0;   // spatial edge of the input (1 for dense)
    int out_size = 0;
    bool batchnorm = false;
    bool relu = false;
    double dropout = 0.0;  // applied after the activation
    double l2 = 0.0;       // lambda * sum(w^2) on this layer's weights
    bool has_bias = false;
};

inline constexpr double kHeadL2 = 0.015;
inline constexpr double kHeadDropout = 0.4;
inline constexpr int kHeadUnits = 128;

std::vector<LayerSpec> architecture(const ModelConfig& config);

// ---------------------------------------------------------------------------
// Layers

struct ConvLayer {
    std::string name;
    Tensor weights;  // [k,k,cin,cout]
    Tensor bias;     // empty when !has_bias
    int stride = 1;
};

struct DepthwiseLayer {
    std::string name;
    Tensor weights;  // [k,k,c]
    Tensor bias;
    int stride = 1;
};

struct BatchNormLayer {
    std::string name;
    Tensor gamma, beta, running_mean, running_var;
};

struct ReluLayer {};

/// Global average pool followed by flattening to N x c.
struct PoolLayer {};

struct DenseLayer {
    std::string name;
    Tensor weights;  // [k,m]
    Tensor bias;     // [m]
    double l2 = 0.0;
};

struct DropoutLayer {
    double p = 0.0;
};

using Layer = std::variant<ConvLayer, DepthwiseLayer, BatchNormLayer, ReluLayer, PoolLayer, DenseLayer, DropoutLayer>;

struct NamedTensor {
    std::string name;
    Tensor tensor;
};

struct ParamRef {
    std::string name;
    Tensor* tensor;
    bool trainable;  // false for batchnorm running statistics
};

/// Per-layer values retained by forward() for backward().
struct LayerCache {
    Tensor input;
    BatchNormCache<float> batchnorm;
    Tensor mask;
    Shape input_shape;
};

struct Activations {
    std::vector<LayerCache> layers;
};

/// One gradient per trainable parameter, in parameters() order.
using Gradients = std::vector<NamedTensor>;

class Model {
public:
    Model(ModelConfig config, std::vector<Layer> layers);

    const ModelConfig& config() const { return config_; }
    const std::vector<Layer>& layers() const { return layers_; }

    /// Conv, depthwise and dense layers.
    int weighted_layer_count() const;
    int num_classes() const;

    /// All parameter tensors in a fixed order, trainable and not.
    std::vector<ParamRef> parameters();
    std::vector<std::pair<std::string, const Tensor*>> parameters() const;
    Index trainable_parameter_count() const;

    /// input: N x res x res x 3. In train mode batchnorm uses batch statistics
    /// and updates its running estimates, and dropout draws masks from rng.
    Tensor forward(const Tensor& input, Mode mode, Rng& rng, Activations* cache = nullptr);

    /// Gradients of (loss + regularization_loss()) given d loss / d logits.
    Gradients backward(const Activations& cache, const Tensor& d_logits) const;

    /// sum over layers of lambda * sum(w^2).
    double regularization_loss() const;

private:
    ModelConfig config_;
    std::vector<Layer> layers_;
};

/// He-normal weights, batchnorm gamma 1 / beta 0 / running var 1, zero biases.
Model build_model(const ModelConfig& config);
Model build_model(const ModelConfig& config, Rng& rng);

}  // namespace sepnet

#endif  // SEPNET_MODEL_HPP
