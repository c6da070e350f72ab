#include "sepnet/model.hpp"

#include <cmath>
#include <stdexcept>

namespace sepnet {

namespace {

// Separable body after the stem: (in, out, stride) at alpha = 1. The source
// table's penultimate "dw / s2" keeps a 7x7 map, so it runs at stride 1.
struct BlockDef {
    int in, out, stride;
};
constexpr BlockDef kBody[] = {
    {32, 64, 1},   {64, 128, 2},  {128, 128, 1}, {128, 256, 2},  {256, 256, 1},
    {256, 512, 2}, {512, 512, 1}, {512, 512, 1}, {512, 512, 1},  {512, 512, 1},
    {512, 512, 1}, {512, 1024, 2}, {1024, 1024, 1},
};
constexpr int kStemChannels = 32;
constexpr int kFeatureChannels = 1024;
constexpr int kImagenetClasses = 1000;
constexpr int kBinaryClasses = 2;

// Blocks 6..10 are the five repeated 14x14x512 pairs removed by the shallow variant.
bool is_repeated_block(std::size_t i) { return i >= 6 && i <= 10; }

int out_size(int in, int stride) { return (in + stride - 1) / stride; }

}  // namespace

std::string_view to_string(Variant v) {
    switch (v) {
        case Variant::separable: return "separable";
        case Variant::full_conv: return "full_conv";
        case Variant::shallow: return "shallow";
    }
    return "?";
}

std::string_view to_string(Head h) { return h == Head::imagenet1000 ? "imagenet1000" : "binary"; }

Variant parse_variant(std::string_view s) {
    if (s == "separable") return Variant::separable;
    if (s == "full_conv") return Variant::full_conv;
    if (s == "shallow") return Variant::shallow;
    throw std::invalid_argument("unknown variant '" + std::string(s) + "' (separable|full_conv|shallow)");
}

Head parse_head(std::string_view s) {
    if (s == "imagenet1000") return Head::imagenet1000;
    if (s == "binary" || s == "binary_head") return Head::binary;
    throw std::invalid_argument("unknown head '" + std::string(s) + "' (imagenet1000|binary)");
}

int scaled_channels(double alpha, int channels) {
    return std::max(1, static_cast<int>(std::lround(alpha * channels)));
}

void ModelConfig::validate() const {
    if (!(alpha > 0.0 && alpha <= 1.0)) {
        throw std::invalid_argument("alpha must be in (0, 1], got " + std::to_string(alpha));
    }
    if (std::lround(alpha * kStemChannels) < 1) {
        throw std::invalid_argument("alpha " + std::to_string(alpha) + " scales the 32-channel stem to 0 channels");
    }
    if (depth_multiplier != 1) {
        throw std::invalid_argument("depth_multiplier must be 1, got " + std::to_string(depth_multiplier));
    }
    if (resolution < 32) {
        throw std::invalid_argument("resolution must be >= 32, got " + std::to_string(resolution));
    }
}

std::vector<LayerSpec> architecture(const ModelConfig& config) {
    config.validate();
    const bool bn = config.use_batchnorm;
    std::vector<LayerSpec> plan;

    int size = config.resolution;
    LayerSpec stem;
    stem.name = "conv1";
    stem.kind = LayerKind::conv;
    stem.kernel = 3;
    stem.stride = 2;
    stem.in_channels = 3;
    stem.out_channels = scaled_channels(config.alpha, kStemChannels);
    stem.in_size = size;
    stem.out_size = size = out_size(size, 2);
    stem.batchnorm = bn;
    stem.relu = true;
    stem.has_bias = !bn;
    plan.push_back(stem);

    for (std::size_t i = 0; i < std::size(kBody); ++i) {
        if (config.variant == Variant::shallow && is_repeated_block(i)) continue;
        const BlockDef& b = kBody[i];
        const int cin = scaled_channels(config.alpha, b.in);
        const int cout = scaled_channels(config.alpha, b.out);
        const int next = out_size(size, b.stride);
        const std::string index = std::to_string(i + 2);

        if (config.variant == Variant::full_conv) {
            LayerSpec conv{"conv" + index, LayerKind::conv, 3, b.stride, cin, cout, size, next, bn, true};
            conv.has_bias = !bn;
            plan.push_back(conv);
        } else {
            LayerSpec dw{"dw" + index, LayerKind::depthwise, 3, b.stride, cin, cin, size, next, bn, true};
            dw.has_bias = !bn;
            LayerSpec pw{"pw" + index, LayerKind::conv, 1, 1, cin, cout, next, next, bn, true};
            pw.has_bias = !bn;
            plan.push_back(dw);
            plan.push_back(pw);
        }
        size = next;
    }

    const int features = scaled_channels(config.alpha, kFeatureChannels);
    if (config.head == Head::imagenet1000) {
        LayerSpec fc{"fc", LayerKind::dense, 1, 1, features, kImagenetClasses, 1, 1};
        fc.has_bias = true;
        plan.push_back(fc);
    } else {
        LayerSpec hidden{"head_dense", LayerKind::dense, 1, 1, features, kHeadUnits, 1, 1};
        hidden.relu = true;
        hidden.dropout = kHeadDropout;
        hidden.l2 = kHeadL2;
        hidden.has_bias = true;
        LayerSpec out{"head_out", LayerKind::dense, 1, 1, kHeadUnits, kBinaryClasses, 1, 1};
        out.has_bias = true;
        plan.push_back(hidden);
        plan.push_back(out);
    }
    return plan;
}

// ---------------------------------------------------------------------------

namespace {

Tensor he_normal(const Shape& shape, Index fan_in, Rng& rng) {
    Tensor t(shape);
    const double stddev = std::sqrt(2.0 / static_cast<double>(fan_in));
    for (auto& v : t.values()) v = static_cast<float>(rng.normal(0.0, stddev));
    return t;
}

template <class... Ts>
struct Overloaded : Ts... {
    using Ts::operator()...;
};
template <class... Ts>
Overloaded(Ts...) -> Overloaded<Ts...>;

}  // namespace

Model build_model(const ModelConfig& config) {
    Rng rng(config.seed);
    return build_model(config, rng);
}

Model build_model(const ModelConfig& config, Rng& rng) {
    std::vector<Layer> layers;
    bool pooled = false;
    for (const LayerSpec& spec : architecture(config)) {
        const Index k = spec.kernel, cin = spec.in_channels, cout = spec.out_channels;
        switch (spec.kind) {
            case LayerKind::conv: {
                ConvLayer conv{spec.name, he_normal({k, k, cin, cout}, k * k * cin, rng), Tensor(), spec.stride};
                if (spec.has_bias) conv.bias = Tensor({cout});
                layers.emplace_back(std::move(conv));
                break;
            }
            case LayerKind::depthwise: {
                DepthwiseLayer dw{spec.name, he_normal({k, k, cin}, k * k, rng), Tensor(), spec.stride};
                if (spec.has_bias) dw.bias = Tensor({cin});
                layers.emplace_back(std::move(dw));
                break;
            }
            case LayerKind::dense:
                if (!pooled) {
                    layers.emplace_back(PoolLayer{});
                    pooled = true;
                }
                layers.emplace_back(DenseLayer{spec.name, he_normal({cin, cout}, cin, rng), Tensor({cout}), spec.l2});
                break;
        }
        if (spec.batchnorm) {
            layers.emplace_back(BatchNormLayer{spec.name + "_bn", Tensor({cout}, 1.0f), Tensor({cout}), Tensor({cout}),
                                               Tensor({cout}, 1.0f)});
        }
        if (spec.relu) layers.emplace_back(ReluLayer{});
        if (spec.dropout > 0.0) layers.emplace_back(DropoutLayer{spec.dropout});
    }
    return Model(config, std::move(layers));
}

Model::Model(ModelConfig config, std::vector<Layer> layers) : config_(config), layers_(std::move(layers)) {}

int Model::weighted_layer_count() const {
    int n = 0;
    for (const auto& layer : layers_) {
        if (std::holds_alternative<ConvLayer>(layer) || std::holds_alternative<DepthwiseLayer>(layer) ||
            std::holds_alternative<DenseLayer>(layer)) {
            ++n;
        }
    }
    return n;
}

int Model::num_classes() const {
    for (auto it = layers_.rbegin(); it != layers_.rend(); ++it) {
        if (const auto* d = std::get_if<DenseLayer>(&*it)) return static_cast<int>(d->weights.dim(1));
    }
    return 0;
}

std::vector<ParamRef> Model::parameters() {
    std::vector<ParamRef> params;
    for (auto& layer : layers_) {
        std::visit(Overloaded{
                       [&](ConvLayer& l) {
                           params.push_back({l.name + "/weights", &l.weights, true});
                           if (!l.bias.empty()) params.push_back({l.name + "/bias", &l.bias, true});
                       },
                       [&](DepthwiseLayer& l) {
                           params.push_back({l.name + "/weights", &l.weights, true});
                           if (!l.bias.empty()) params.push_back({l.name + "/bias", &l.bias, true});
                       },
                       [&](BatchNormLayer& l) {
                           params.push_back({l.name + "/gamma", &l.gamma, true});
                           params.push_back({l.name + "/beta", &l.beta, true});
                           params.push_back({l.name + "/running_mean", &l.running_mean, false});
                           params.push_back({l.name + "/running_var", &l.running_var, false});
                       },
                       [&](DenseLayer& l) {
                           params.push_back({l.name + "/weights", &l.weights, true});
                           params.push_back({l.name + "/bias", &l.bias, true});
                       },
                       [](auto&) {},
                   },
                   layer);
    }
    return params;
}

std::vector<std::pair<std::string, const Tensor*>> Model::parameters() const {
    std::vector<std::pair<std::string, const Tensor*>> out;
    for (const auto& p : const_cast<Model*>(this)->parameters()) out.emplace_back(p.name, p.tensor);
    return out;
}

Index Model::trainable_parameter_count() const {
    Index n = 0;
    for (const auto& p : const_cast<Model*>(this)->parameters()) {
        if (p.trainable) n += p.tensor->size();
    }
    return n;
}

Tensor Model::forward(const Tensor& input, Mode mode, Rng& rng, Activations* cache) {
    const Index res = config_.resolution;
    if (input.rank() != 4 || input.dim(1) != res || input.dim(2) != res || input.dim(3) != 3) {
        throw std::invalid_argument("model expects input N x " + std::to_string(res) + " x " + std::to_string(res) +
                                    " x 3, got " + shape_to_string(input.shape()));
    }
    if (cache) cache->layers.assign(layers_.size(), LayerCache{});

    Tensor x = input;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
        LayerCache* c = cache ? &cache->layers[i] : nullptr;
        x = std::visit(Overloaded{
                           [&](ConvLayer& l) {
                               Tensor y = l.bias.empty() ? conv2d(x, l.weights, l.stride, Padding::same)
                                                         : conv2d(x, l.weights, l.bias, l.stride, Padding::same);
                               if (c) c->input = std::move(x);
                               return y;
                           },
                           [&](DepthwiseLayer& l) {
                               Tensor y = l.bias.empty()
                                              ? depthwise_conv2d(x, l.weights, l.stride, Padding::same)
                                              : depthwise_conv2d(x, l.weights, l.bias, l.stride, Padding::same);
                               if (c) c->input = std::move(x);
                               return y;
                           },
                           [&](BatchNormLayer& l) {
                               auto r = batchnorm(x, l.gamma, l.beta, l.running_mean, l.running_var, mode);
                               if (c) c->batchnorm = std::move(r.cache);
                               return std::move(r.output);
                           },
                           [&](ReluLayer&) {
                               Tensor y = relu(x);
                               if (c) c->input = std::move(x);
                               return y;
                           },
                           [&](PoolLayer&) {
                               Tensor y = global_avg_pool(x);
                               if (c) c->input_shape = x.shape();
                               return std::move(y).reshaped({x.dim(0), x.dim(3)});
                           },
                           [&](DenseLayer& l) {
                               Tensor y = dense(x, l.weights, l.bias);
                               if (c) c->input = std::move(x);
                               return y;
                           },
                           [&](DropoutLayer& l) {
                               auto r = dropout(x, l.p, mode, rng);
                               if (c) c->mask = std::move(r.mask);
                               return std::move(r.output);
                           },
                       },
                       layers_[i]);
    }
    return x;
}

Gradients Model::backward(const Activations& cache, const Tensor& d_logits) const {
    if (cache.layers.size() != layers_.size()) {
        throw std::invalid_argument("backward: activation cache does not belong to this model");
    }
    // Collected back-to-front, reversed at the end to match parameters() order.
    std::vector<NamedTensor> reversed;
    auto take = [&](const std::string& layer, LayerGrads<float>& g) {
        for (auto it = g.d_params.rbegin(); it != g.d_params.rend(); ++it) {
            reversed.push_back({layer + "/" + it->first, std::move(it->second)});
        }
        return std::move(g.d_input);
    };

    Tensor d = d_logits;
    for (std::size_t i = layers_.size(); i-- > 0;) {
        const LayerCache& c = cache.layers[i];
        d = std::visit(Overloaded{
                           [&](const ConvLayer& l) {
                               auto g = conv2d_backward(c.input, l.weights, l.stride, Padding::same, d, !l.bias.empty());
                               return take(l.name, g);
                           },
                           [&](const DepthwiseLayer& l) {
                               auto g = depthwise_conv2d_backward(c.input, l.weights, l.stride, Padding::same, d,
                                                                  !l.bias.empty());
                               return take(l.name, g);
                           },
                           [&](const BatchNormLayer& l) {
                               auto g = batchnorm_backward(c.batchnorm, l.gamma, d);
                               return take(l.name, g);
                           },
                           [&](const ReluLayer&) { return relu_backward(c.input, d); },
                           [&](const PoolLayer&) {
                               const Shape& s = c.input_shape;
                               return global_avg_pool_backward(s, d.reshaped({s[0], 1, 1, s[3]}));
                           },
                           [&](const DenseLayer& l) {
                               auto g = dense_backward(c.input, l.weights, d);
                               if (l.l2 > 0.0) {
                                   auto& dw = g.d_params.front().second;
                                   for (Index j = 0; j < dw.size(); ++j) {
                                       dw[j] += static_cast<float>(2.0 * l.l2 * l.weights[j]);
                                   }
                               }
                               return take(l.name, g);
                           },
                           [&](const DropoutLayer&) { return dropout_backward(c.mask, d); },
                       },
                       layers_[i]);
    }
    return Gradients(std::make_move_iterator(reversed.rbegin()), std::make_move_iterator(reversed.rend()));
}

double Model::regularization_loss() const {
    double total = 0.0;
    for (const auto& layer : layers_) {
        if (const auto* d = std::get_if<DenseLayer>(&layer); d && d->l2 > 0.0) {
            double sq = 0.0;
            for (float w : d->weights.values()) sq += static_cast<double>(w) * w;
            total += d->l2 * sq;
        }
    }
    return total;
}

}  // namespace sepnet
