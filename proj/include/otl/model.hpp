#pragma once

#include <cstddef>
#include <map>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

#include "otl/rng.hpp"
#include "otl/tensor.hpp"

namespace otl {

struct InputSpec {
    std::size_t height = 32;
    std::size_t width = 32;
    std::size_t channels = 1;
    friend bool operator==(const InputSpec&, const InputSpec&) = default;
};

enum class Padding { same, valid };

// Stride-1 convolution, weight layout [kernel_h, kernel_w, in_channels, out_channels].
struct Conv2d {
    std::size_t kernel_h = 3;
    std::size_t kernel_w = 3;
    std::size_t out_channels = 8;
    Padding padding = Padding::same;
    friend bool operator==(const Conv2d&, const Conv2d&) = default;
};

// Non-overlapping window x window max pooling; trailing rows/cols that do
// not fill a window are dropped.
struct MaxPool {
    std::size_t window = 2;
    friend bool operator==(const MaxPool&, const MaxPool&) = default;
};

struct Relu {
    friend bool operator==(const Relu&, const Relu&) = default;
};

// Fully connected, flattens its input. Weight layout [in, units].
struct Dense {
    std::size_t units = 10;
    friend bool operator==(const Dense&, const Dense&) = default;
};

using LayerSpec = std::variant<Conv2d, MaxPool, Relu, Dense>;

std::string layer_kind(const LayerSpec& layer);

struct ModelConfig {
    InputSpec input;
    std::vector<LayerSpec> layers;

    // conv3x3x8 -> relu -> pool2 -> conv3x3x16 -> relu -> pool2 -> dense(bottleneck) -> dense(classes)
    static ModelConfig desk_default(std::size_t height, std::size_t width, std::size_t classes,
                                    std::size_t bottleneck = 32);

    static ModelConfig from_json(const nlohmann::json& doc);
    nlohmann::json to_json() const;

    friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

using ParameterSet = std::map<std::string, Tensor>;
using Gradients = std::map<std::string, Tensor>;

/// Sequential network over NHWC batches.
///
/// The final layer must be Dense: it is the classification layer producing
/// the scores s. Its input is the bottleneck feature vector used as the
/// embedding once the classification layer is set aside.
class Model {
public:
    // All parameters zero. Throws ShapeError if the layer shapes do not compose.
    explicit Model(ModelConfig config);

    // Glorot-uniform weights, zero biases.
    static Model initialized(ModelConfig config, Rng& rng);

    const ModelConfig& config() const { return config_; }
    const InputSpec& input_spec() const { return config_.input; }
    std::size_t layer_count() const { return config_.layers.size(); }

    ParameterSet& parameters() { return params_; }
    const ParameterSet& parameters() const { return params_; }
    Tensor& parameter(const std::string& name);
    const Tensor& parameter(const std::string& name) const;

    // Per-sample output shape of layer k (without the batch axis).
    const Shape& output_shape(std::size_t layer) const { return shapes_.at(layer + 1); }
    const Shape& sample_shape() const { return shapes_.front(); }

    std::size_t class_count() const;
    std::size_t bottleneck_dim() const;
    // Index one past the last layer feeding the classification layer.
    std::size_t bottleneck_end() const { return layer_count() - 1; }

    static std::string weight_name(std::size_t layer, const LayerSpec& spec);
    static std::string bias_name(std::size_t layer, const LayerSpec& spec);

    // Pure functions of (parameters, batch). batch is [N, H, W, C].
    Tensor forward(const Tensor& batch) const;
    Tensor features(const Tensor& batch) const;
    Tensor forward_range(const Tensor& batch, std::size_t end_layer) const;
    std::vector<std::size_t> predict(const Tensor& batch) const;

    void check_batch(const Tensor& batch) const;

private:
    ModelConfig config_;
    std::vector<Shape> shapes_;
    ParameterSet params_;
};

struct BackwardResult {
    Gradients parameters;
    Tensor input;
};

/// Records one forward pass so it can be differentiated in reverse.
///
/// backward() propagates an upstream gradient dL/d(output) through every
/// recorded layer and returns dL/d(parameter) for every model parameter
/// (zero for layers the recorded pass did not reach) plus dL/d(input).
class Tape {
public:
    explicit Tape(const Model& model) : model_(&model) {}

    const Tensor& forward(const Tensor& batch);
    const Tensor& forward(const Tensor& batch, std::size_t end_layer);

    bool recorded() const { return !activations_.empty(); }
    const Tensor& output() const;

    BackwardResult backward(const Tensor& output_grad) const;

private:
    const Model* model_;
    std::vector<Tensor> activations_;
    std::vector<std::vector<std::size_t>> argmax_;
};

Gradients zero_gradients(const ParameterSet& params);

}  // namespace otl
