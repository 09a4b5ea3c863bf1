#include "otl/layers.hpp"

#include <algorithm>

#include "otl/errors.hpp"

namespace otl::layers {

namespace {

struct ConvGeometry {
    std::size_t n, h, w, ci, kh, kw, co, oh, ow, pad_top, pad_left;
};

ConvGeometry conv_geometry(const Shape& in, const Shape& weight, Padding padding) {
    if (in.size() != 4) throw ShapeError("conv2d expects a [N,H,W,C] input, got " + shape_to_string(in));
    if (weight.size() != 4 || weight[2] != in[3]) {
        throw ShapeError("conv2d weight " + shape_to_string(weight) + " does not match input " + shape_to_string(in));
    }
    ConvGeometry g{in[0], in[1], in[2], in[3], weight[0], weight[1], weight[3], 0, 0, 0, 0};
    if (padding == Padding::same) {
        g.oh = g.h;
        g.ow = g.w;
        g.pad_top = (g.kh - 1) / 2;
        g.pad_left = (g.kw - 1) / 2;
    } else {
        if (g.kh > g.h || g.kw > g.w) throw ShapeError("conv2d kernel larger than its valid-padded input");
        g.oh = g.h - g.kh + 1;
        g.ow = g.w - g.kw + 1;
    }
    return g;
}

}  // namespace

Shape conv2d_output_shape(const Shape& in, const Conv2d& spec) {
    if (in.size() != 3) throw ShapeError("conv2d needs a spatial [H,W,C] input, got " + shape_to_string(in));
    if (spec.padding == Padding::same) return {in[0], in[1], spec.out_channels};
    if (spec.kernel_h > in[0] || spec.kernel_w > in[1]) throw ShapeError("conv2d kernel larger than input");
    return {in[0] - spec.kernel_h + 1, in[1] - spec.kernel_w + 1, spec.out_channels};
}

Tensor conv2d_forward(const Tensor& in, const Tensor& weight, const Tensor& bias, Padding padding) {
    const ConvGeometry g = conv_geometry(in.shape(), weight.shape(), padding);
    Tensor out({g.n, g.oh, g.ow, g.co});
    const double* x = in.data().data();
    const double* wt = weight.data().data();
    const double* b = bias.data().data();
    double* y = out.data().data();

    for (std::size_t n = 0; n < g.n; ++n) {
        for (std::size_t oy = 0; oy < g.oh; ++oy) {
            for (std::size_t ox = 0; ox < g.ow; ++ox) {
                double* acc = y + ((n * g.oh + oy) * g.ow + ox) * g.co;
                std::copy(b, b + g.co, acc);
                for (std::size_t ky = 0; ky < g.kh; ++ky) {
                    const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy + ky) - static_cast<std::ptrdiff_t>(g.pad_top);
                    if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.h)) continue;
                    for (std::size_t kx = 0; kx < g.kw; ++kx) {
                        const std::ptrdiff_t ix =
                            static_cast<std::ptrdiff_t>(ox + kx) - static_cast<std::ptrdiff_t>(g.pad_left);
                        if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.w)) continue;
                        const double* px = x + ((n * g.h + static_cast<std::size_t>(iy)) * g.w + static_cast<std::size_t>(ix)) * g.ci;
                        const double* pw = wt + (ky * g.kw + kx) * g.ci * g.co;
                        for (std::size_t c = 0; c < g.ci; ++c) {
                            const double v = px[c];
                            const double* row = pw + c * g.co;
                            for (std::size_t o = 0; o < g.co; ++o) acc[o] += v * row[o];
                        }
                    }
                }
            }
        }
    }
    return out;
}

void conv2d_backward(const Tensor& in, const Tensor& weight, const Tensor& grad_out, Padding padding,
                     Tensor& grad_weight, Tensor& grad_bias, Tensor* grad_in) {
    const ConvGeometry g = conv_geometry(in.shape(), weight.shape(), padding);
    const double* x = in.data().data();
    const double* wt = weight.data().data();
    const double* gy = grad_out.data().data();
    double* gw = grad_weight.data().data();
    double* gb = grad_bias.data().data();
    double* gx = grad_in ? grad_in->data().data() : nullptr;

    for (std::size_t n = 0; n < g.n; ++n) {
        for (std::size_t oy = 0; oy < g.oh; ++oy) {
            for (std::size_t ox = 0; ox < g.ow; ++ox) {
                const double* go = gy + ((n * g.oh + oy) * g.ow + ox) * g.co;
                for (std::size_t o = 0; o < g.co; ++o) gb[o] += go[o];
                for (std::size_t ky = 0; ky < g.kh; ++ky) {
                    const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy + ky) - static_cast<std::ptrdiff_t>(g.pad_top);
                    if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.h)) continue;
                    for (std::size_t kx = 0; kx < g.kw; ++kx) {
                        const std::ptrdiff_t ix =
                            static_cast<std::ptrdiff_t>(ox + kx) - static_cast<std::ptrdiff_t>(g.pad_left);
                        if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.w)) continue;
                        const std::size_t in_off =
                            ((n * g.h + static_cast<std::size_t>(iy)) * g.w + static_cast<std::size_t>(ix)) * g.ci;
                        const std::size_t w_off = (ky * g.kw + kx) * g.ci * g.co;
                        for (std::size_t c = 0; c < g.ci; ++c) {
                            const double v = x[in_off + c];
                            double* gwr = gw + w_off + c * g.co;
                            const double* wr = wt + w_off + c * g.co;
                            double sum = 0.0;
                            for (std::size_t o = 0; o < g.co; ++o) {
                                gwr[o] += v * go[o];
                                sum += wr[o] * go[o];
                            }
                            if (gx) gx[in_off + c] += sum;
                        }
                    }
                }
            }
        }
    }
}

Shape maxpool_output_shape(const Shape& in, const MaxPool& spec) {
    if (in.size() != 3) throw ShapeError("maxpool needs a spatial [H,W,C] input, got " + shape_to_string(in));
    if (spec.window == 0 || spec.window > in[0] || spec.window > in[1]) {
        throw ShapeError("maxpool window does not fit input " + shape_to_string(in));
    }
    return {in[0] / spec.window, in[1] / spec.window, in[2]};
}

Tensor maxpool_forward(const Tensor& in, std::size_t window, std::vector<std::size_t>* argmax) {
    const Shape& s = in.shape();
    if (s.size() != 4) throw ShapeError("maxpool expects a [N,H,W,C] input");
    const std::size_t n = s[0], h = s[1], w = s[2], c = s[3];
    const std::size_t oh = h / window, ow = w / window;
    Tensor out({n, oh, ow, c});
    if (argmax) argmax->assign(out.size(), 0);
    const double* x = in.data().data();
    double* y = out.data().data();
    for (std::size_t b = 0; b < n; ++b) {
        for (std::size_t oy = 0; oy < oh; ++oy) {
            for (std::size_t ox = 0; ox < ow; ++ox) {
                for (std::size_t ch = 0; ch < c; ++ch) {
                    std::size_t best = ((b * h + oy * window) * w + ox * window) * c + ch;
                    for (std::size_t dy = 0; dy < window; ++dy) {
                        for (std::size_t dx = 0; dx < window; ++dx) {
                            const std::size_t idx = ((b * h + oy * window + dy) * w + ox * window + dx) * c + ch;
                            // strict > keeps the first maximum in scan order
                            if (x[idx] > x[best]) best = idx;
                        }
                    }
                    const std::size_t o = ((b * oh + oy) * ow + ox) * c + ch;
                    y[o] = x[best];
                    if (argmax) (*argmax)[o] = best;
                }
            }
        }
    }
    return out;
}

Tensor maxpool_backward(const Shape& in_shape, const std::vector<std::size_t>& argmax, const Tensor& grad_out) {
    Tensor grad_in(in_shape);
    for (std::size_t o = 0; o < argmax.size(); ++o) grad_in[argmax[o]] += grad_out[o];
    return grad_in;
}

Tensor relu_forward(const Tensor& in) {
    Tensor out = in;
    for (double& v : out.data()) v = v > 0.0 ? v : 0.0;
    return out;
}

Tensor relu_backward(const Tensor& in, const Tensor& grad_out) {
    Tensor grad_in(in.shape());
    for (std::size_t i = 0; i < in.size(); ++i) grad_in[i] = in[i] > 0.0 ? grad_out[i] : 0.0;
    return grad_in;
}

Tensor dense_forward(const Tensor& in, const Tensor& weight, const Tensor& bias) {
    const std::size_t n = in.dim(0);
    const std::size_t f = weight.dim(0), u = weight.dim(1);
    if (n != 0 && in.size() / n != f) {
        throw ShapeError("dense weight " + shape_to_string(weight.shape()) + " does not match input " +
                         shape_to_string(in.shape()));
    }
    Tensor out({n, u});
    const double* x = in.data().data();
    const double* wt = weight.data().data();
    double* y = out.data().data();
    for (std::size_t b = 0; b < n; ++b) {
        double* acc = y + b * u;
        std::copy(bias.data().begin(), bias.data().end(), acc);
        const double* xr = x + b * f;
        for (std::size_t i = 0; i < f; ++i) {
            const double v = xr[i];
            const double* wr = wt + i * u;
            for (std::size_t o = 0; o < u; ++o) acc[o] += v * wr[o];
        }
    }
    return out;
}

void dense_backward(const Tensor& in, const Tensor& weight, const Tensor& grad_out, Tensor& grad_weight,
                    Tensor& grad_bias, Tensor* grad_in) {
    const std::size_t n = in.dim(0);
    const std::size_t f = weight.dim(0), u = weight.dim(1);
    const double* x = in.data().data();
    const double* wt = weight.data().data();
    const double* gy = grad_out.data().data();
    double* gw = grad_weight.data().data();
    double* gb = grad_bias.data().data();
    double* gx = grad_in ? grad_in->data().data() : nullptr;
    for (std::size_t b = 0; b < n; ++b) {
        const double* go = gy + b * u;
        const double* xr = x + b * f;
        for (std::size_t o = 0; o < u; ++o) gb[o] += go[o];
        for (std::size_t i = 0; i < f; ++i) {
            double* gwr = gw + i * u;
            const double* wr = wt + i * u;
            const double v = xr[i];
            double sum = 0.0;
            for (std::size_t o = 0; o < u; ++o) {
                gwr[o] += v * go[o];
                sum += wr[o] * go[o];
            }
            if (gx) gx[b * f + i] += sum;
        }
    }
}

}  // namespace otl::layers
