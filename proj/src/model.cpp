#include "otl/model.hpp"

#include <cmath>

#include <fmt/format.h>

#include "otl/errors.hpp"
#include "otl/layers.hpp"

namespace otl {

using nlohmann::json;

std::string layer_kind(const LayerSpec& layer) {
    struct Visitor {
        std::string operator()(const Conv2d&) const { return "conv2d"; }
        std::string operator()(const MaxPool&) const { return "maxpool"; }
        std::string operator()(const Relu&) const { return "relu"; }
        std::string operator()(const Dense&) const { return "dense"; }
    };
    return std::visit(Visitor{}, layer);
}

ModelConfig ModelConfig::desk_default(std::size_t height, std::size_t width, std::size_t classes,
                                      std::size_t bottleneck) {
    ModelConfig cfg;
    cfg.input = {height, width, 1};
    cfg.layers = {Conv2d{3, 3, 8, Padding::same}, Relu{}, MaxPool{2}, Conv2d{3, 3, 16, Padding::same}, Relu{},
                  MaxPool{2}, Dense{bottleneck}, Dense{classes}};
    return cfg;
}

namespace {

std::size_t positive(const json& doc, const char* key) {
    if (!doc.contains(key) || !doc.at(key).is_number_unsigned() || doc.at(key).get<std::size_t>() == 0) {
        throw ConfigError(fmt::format("model config: '{}' must be a positive integer", key));
    }
    return doc.at(key).get<std::size_t>();
}

}  // namespace

ModelConfig ModelConfig::from_json(const json& doc) {
    if (!doc.is_object() || !doc.contains("input") || !doc.contains("layers") || !doc.at("layers").is_array()) {
        throw ConfigError("model config needs an 'input' object and a 'layers' array");
    }
    ModelConfig cfg;
    const json& in = doc.at("input");
    cfg.input = {positive(in, "height"), positive(in, "width"), positive(in, "channels")};
    for (const json& layer : doc.at("layers")) {
        const std::string type = layer.value("type", "");
        if (type == "conv2d") {
            Conv2d conv;
            if (!layer.contains("kernel") || !layer.at("kernel").is_array() || layer.at("kernel").size() != 2) {
                throw ConfigError("conv2d layer needs 'kernel': [h, w]");
            }
            conv.kernel_h = layer.at("kernel")[0].get<std::size_t>();
            conv.kernel_w = layer.at("kernel")[1].get<std::size_t>();
            if (conv.kernel_h == 0 || conv.kernel_w == 0) throw ConfigError("conv2d kernel must be positive");
            conv.out_channels = positive(layer, "out_channels");
            const std::string pad = layer.value("padding", "same");
            if (pad == "same") {
                conv.padding = Padding::same;
            } else if (pad == "valid") {
                conv.padding = Padding::valid;
            } else {
                throw ConfigError("conv2d padding must be 'same' or 'valid'");
            }
            cfg.layers.emplace_back(conv);
        } else if (type == "maxpool") {
            cfg.layers.emplace_back(MaxPool{positive(layer, "window")});
        } else if (type == "relu") {
            cfg.layers.emplace_back(Relu{});
        } else if (type == "dense") {
            cfg.layers.emplace_back(Dense{positive(layer, "units")});
        } else {
            throw ConfigError(fmt::format("unknown layer type '{}'", type));
        }
    }
    return cfg;
}

json ModelConfig::to_json() const {
    json layers_doc = json::array();
    for (const LayerSpec& layer : layers) {
        json entry = {{"type", layer_kind(layer)}};
        if (const auto* conv = std::get_if<Conv2d>(&layer)) {
            entry["kernel"] = {conv->kernel_h, conv->kernel_w};
            entry["out_channels"] = conv->out_channels;
            entry["padding"] = conv->padding == Padding::same ? "same" : "valid";
        } else if (const auto* pool = std::get_if<MaxPool>(&layer)) {
            entry["window"] = pool->window;
        } else if (const auto* dense = std::get_if<Dense>(&layer)) {
            entry["units"] = dense->units;
        }
        layers_doc.push_back(std::move(entry));
    }
    return {{"input", {{"height", input.height}, {"width", input.width}, {"channels", input.channels}}},
            {"layers", std::move(layers_doc)}};
}

std::string Model::weight_name(std::size_t layer, const LayerSpec& spec) {
    return fmt::format("{}{}.weight", layer_kind(spec), layer);
}

std::string Model::bias_name(std::size_t layer, const LayerSpec& spec) {
    return fmt::format("{}{}.bias", layer_kind(spec), layer);
}

Model::Model(ModelConfig config) : config_(std::move(config)) {
    if (config_.layers.empty()) throw ShapeError("model needs at least one layer");
    if (!std::holds_alternative<Dense>(config_.layers.back())) {
        throw ShapeError("the final (classification) layer must be dense");
    }
    const InputSpec& in = config_.input;
    if (in.height == 0 || in.width == 0 || in.channels == 0) throw ShapeError("input spec must be positive");
    shapes_.push_back({in.height, in.width, in.channels});
    for (std::size_t k = 0; k < config_.layers.size(); ++k) {
        const Shape& cur = shapes_.back();
        const LayerSpec& spec = config_.layers[k];
        Shape next;
        if (const auto* conv = std::get_if<Conv2d>(&spec)) {
            next = layers::conv2d_output_shape(cur, *conv);
            params_.emplace(weight_name(k, spec), Tensor({conv->kernel_h, conv->kernel_w, cur[2], conv->out_channels}));
            params_.emplace(bias_name(k, spec), Tensor({conv->out_channels}));
        } else if (const auto* pool = std::get_if<MaxPool>(&spec)) {
            next = layers::maxpool_output_shape(cur, *pool);
        } else if (std::holds_alternative<Relu>(spec)) {
            next = cur;
        } else {
            const auto& dense = std::get<Dense>(spec);
            next = {dense.units};
            params_.emplace(weight_name(k, spec), Tensor({shape_size(cur), dense.units}));
            params_.emplace(bias_name(k, spec), Tensor({dense.units}));
        }
        shapes_.push_back(std::move(next));
    }
}

Model Model::initialized(ModelConfig config, Rng& rng) {
    Model model(std::move(config));
    // Layer order, not name order, fixes the draw sequence.
    for (std::size_t k = 0; k < model.layer_count(); ++k) {
        const LayerSpec& spec = model.config_.layers[k];
        double fan_in = 0, fan_out = 0;
        if (const auto* conv = std::get_if<Conv2d>(&spec)) {
            const double area = static_cast<double>(conv->kernel_h * conv->kernel_w);
            fan_in = area * static_cast<double>(model.shapes_[k][2]);
            fan_out = area * static_cast<double>(conv->out_channels);
        } else if (const auto* dense = std::get_if<Dense>(&spec)) {
            fan_in = static_cast<double>(shape_size(model.shapes_[k]));
            fan_out = static_cast<double>(dense->units);
        } else {
            continue;
        }
        const double limit = std::sqrt(6.0 / (fan_in + fan_out));
        for (double& w : model.params_.at(weight_name(k, spec)).data()) w = rng.uniform(-limit, limit);
    }
    return model;
}

Tensor& Model::parameter(const std::string& name) {
    auto it = params_.find(name);
    if (it == params_.end()) throw KeyError("no parameter named '" + name + "'");
    return it->second;
}

const Tensor& Model::parameter(const std::string& name) const {
    auto it = params_.find(name);
    if (it == params_.end()) throw KeyError("no parameter named '" + name + "'");
    return it->second;
}

std::size_t Model::class_count() const { return std::get<Dense>(config_.layers.back()).units; }

std::size_t Model::bottleneck_dim() const { return shape_size(shapes_[bottleneck_end()]); }

void Model::check_batch(const Tensor& batch) const {
    const InputSpec& in = config_.input;
    const Shape& s = batch.shape();
    if (s.size() != 4 || s[1] != in.height || s[2] != in.width || s[3] != in.channels) {
        throw ShapeError(fmt::format("input batch {} does not match model input [N,{},{},{}]", shape_to_string(s),
                                     in.height, in.width, in.channels));
    }
}

namespace {

Tensor apply_layer(const Model& model, std::size_t k, const Tensor& x, std::vector<std::size_t>* argmax) {
    const LayerSpec& spec = model.config().layers[k];
    if (const auto* conv = std::get_if<Conv2d>(&spec)) {
        return layers::conv2d_forward(x, model.parameter(Model::weight_name(k, spec)),
                                      model.parameter(Model::bias_name(k, spec)), conv->padding);
    }
    if (const auto* pool = std::get_if<MaxPool>(&spec)) return layers::maxpool_forward(x, pool->window, argmax);
    if (std::holds_alternative<Relu>(spec)) return layers::relu_forward(x);
    return layers::dense_forward(x, model.parameter(Model::weight_name(k, spec)),
                                 model.parameter(Model::bias_name(k, spec)));
}

void require_finite(const Tensor& t, const char* what) {
    if (!t.all_finite()) throw NumericError(fmt::format("non-finite values in {}", what));
}

}  // namespace

Tensor Model::forward_range(const Tensor& batch, std::size_t end_layer) const {
    check_batch(batch);
    if (end_layer > layer_count()) throw ShapeError("forward_range past the last layer");
    Tensor x = batch;
    for (std::size_t k = 0; k < end_layer; ++k) x = apply_layer(*this, k, x, nullptr);
    if (x.rank() != 2) x = x.reshaped({x.dim(0), x.size() / std::max<std::size_t>(x.dim(0), 1)});
    require_finite(x, "forward output");
    return x;
}

Tensor Model::forward(const Tensor& batch) const { return forward_range(batch, layer_count()); }

Tensor Model::features(const Tensor& batch) const { return forward_range(batch, bottleneck_end()); }

std::vector<std::size_t> Model::predict(const Tensor& batch) const {
    const Tensor logits = forward(batch);
    const std::size_t n = logits.dim(0), k = logits.dim(1);
    std::vector<std::size_t> out(n);
    for (std::size_t i = 0; i < n; ++i) {
        std::size_t best = 0;
        for (std::size_t j = 1; j < k; ++j) {
            if (logits.at(i, j) > logits.at(i, best)) best = j;
        }
        out[i] = best;
    }
    return out;
}

const Tensor& Tape::forward(const Tensor& batch) { return forward(batch, model_->layer_count()); }

const Tensor& Tape::forward(const Tensor& batch, std::size_t end_layer) {
    model_->check_batch(batch);
    if (end_layer > model_->layer_count()) throw ShapeError("tape forward past the last layer");
    activations_.clear();
    argmax_.assign(end_layer, {});
    activations_.push_back(batch);
    for (std::size_t k = 0; k < end_layer; ++k) {
        activations_.push_back(apply_layer(*model_, k, activations_.back(), &argmax_[k]));
    }
    Tensor& out = activations_.back();
    if (out.rank() != 2) out = out.reshaped({out.dim(0), out.size() / std::max<std::size_t>(out.dim(0), 1)});
    require_finite(out, "forward output");
    return out;
}

const Tensor& Tape::output() const {
    if (!recorded()) throw StateError("no forward pass recorded");
    return activations_.back();
}

BackwardResult Tape::backward(const Tensor& output_grad) const {
    if (!recorded()) throw StateError("backward called before any forward pass was recorded");
    const std::size_t depth = activations_.size() - 1;
    if (output_grad.size() != activations_.back().size()) {
        throw ShapeError("upstream gradient " + shape_to_string(output_grad.shape()) + " does not match output " +
                         shape_to_string(activations_.back().shape()));
    }
    BackwardResult result{zero_gradients(model_->parameters()), {}};
    const std::size_t n = activations_.front().dim(0);
    Tensor grad = output_grad;
    for (std::size_t k = depth; k-- > 0;) {
        const LayerSpec& spec = model_->config().layers[k];
        const Tensor& in = activations_[k];
        Shape out_shape{n};
        const Shape& per_sample = model_->output_shape(k);
        out_shape.insert(out_shape.end(), per_sample.begin(), per_sample.end());
        grad = grad.reshaped(out_shape);

        if (const auto* conv = std::get_if<Conv2d>(&spec)) {
            Tensor grad_in(in.shape());
            layers::conv2d_backward(in, model_->parameter(Model::weight_name(k, spec)), grad, conv->padding,
                                    result.parameters.at(Model::weight_name(k, spec)),
                                    result.parameters.at(Model::bias_name(k, spec)), &grad_in);
            grad = std::move(grad_in);
        } else if (std::holds_alternative<MaxPool>(spec)) {
            grad = layers::maxpool_backward(in.shape(), argmax_[k], grad);
        } else if (std::holds_alternative<Relu>(spec)) {
            grad = layers::relu_backward(in, grad);
        } else {
            Tensor grad_in(in.shape());
            layers::dense_backward(in, model_->parameter(Model::weight_name(k, spec)), grad,
                                   result.parameters.at(Model::weight_name(k, spec)),
                                   result.parameters.at(Model::bias_name(k, spec)), &grad_in);
            grad = std::move(grad_in);
        }
    }
    result.input = std::move(grad);
    return result;
}

Gradients zero_gradients(const ParameterSet& params) {
    Gradients grads;
    for (const auto& [name, tensor] : params) grads.emplace(name, Tensor(tensor.shape()));
    return grads;
}

}  // namespace otl
