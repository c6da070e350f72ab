#ifndef SEPNET_KERNELS_HPP
#define SEPNET_KERNELS_HPP

// Layer kernels with hand-written gradients. Every kernel is a pure function of
// its arguments (batchnorm additionally updates the running statistics passed
// to it). Work is split across samples only; per-element reduction order is
// fixed, so results are bitwise identical for any thread count.

#include "sepnet/parallel.hpp"
#include "sepnet/rng.hpp"
#include "sepnet/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace sepnet {

enum class Padding { same, valid };
enum class Mode { train, infer };

struct ConvGeometry {
    Index in_h = 0, in_w = 0;
    Index out_h = 0, out_w = 0;
    Index pad_top = 0, pad_left = 0;
};

/// "same": out = ceil(in / stride), total padding split low/high with the odd
/// pixel on the high side. "valid": no padding.
inline ConvGeometry conv_geometry(Index in_h, Index in_w, Index kh, Index kw, int stride, Padding padding) {
    if (stride < 1) throw std::invalid_argument("stride must be >= 1, got " + std::to_string(stride));
    ConvGeometry g;
    g.in_h = in_h;
    g.in_w = in_w;
    if (padding == Padding::same) {
        g.out_h = (in_h + stride - 1) / stride;
        g.out_w = (in_w + stride - 1) / stride;
        g.pad_top = std::max<Index>((g.out_h - 1) * stride + kh - in_h, 0) / 2;
        g.pad_left = std::max<Index>((g.out_w - 1) * stride + kw - in_w, 0) / 2;
    } else {
        if (in_h < kh || in_w < kw) {
            throw std::invalid_argument("valid convolution: input " + std::to_string(in_h) + "x" +
                                        std::to_string(in_w) + " smaller than kernel " + std::to_string(kh) +
                                        "x" + std::to_string(kw));
        }
        g.out_h = (in_h - kh) / stride + 1;
        g.out_w = (in_w - kw) / stride + 1;
    }
    return g;
}

template <typename Scalar>
struct LayerGrads {
    BasicTensor<Scalar> d_input;
    std::vector<std::pair<std::string, BasicTensor<Scalar>>> d_params;

    const BasicTensor<Scalar>& param(const std::string& name) const {
        for (const auto& [n, t] : d_params) {
            if (n == name) return t;
        }
        throw std::out_of_range("no gradient named " + name);
    }
};

namespace detail {

inline void require(bool ok, const std::string& message) {
    if (!ok) throw std::invalid_argument(message);
}

inline std::string dim_mismatch(Index got, Index expected) {
    return "is " + std::to_string(got) + ", expected " + std::to_string(expected);
}

template <typename Scalar>
void check_nhwc(const BasicTensor<Scalar>& t, const char* name) {
    require(t.rank() == 4, std::string(name) + " must be rank 4 (NHWC), got " + shape_to_string(t.shape()));
}

/// Gathers the receptive fields of sample n into rows of `col`
/// ((out_h*out_w) x (kh*kw*c)), column order (ky, kx, c) to match
/// the [kh,kw,cin,cout] weight layout.
template <typename Scalar>
void im2col(const BasicTensor<Scalar>& input, Index n, const ConvGeometry& g, Index kh, Index kw, int stride,
            RowMatrix<Scalar>& col) {
    const Index c = input.dim(3);
    col.setZero(g.out_h * g.out_w, kh * kw * c);
    for (Index oh = 0; oh < g.out_h; ++oh) {
        for (Index ow = 0; ow < g.out_w; ++ow) {
            Scalar* row = col.data() + (oh * g.out_w + ow) * kh * kw * c;
            for (Index ky = 0; ky < kh; ++ky) {
                const Index ih = oh * stride - g.pad_top + ky;
                if (ih < 0 || ih >= g.in_h) continue;
                for (Index kx = 0; kx < kw; ++kx) {
                    const Index iw = ow * stride - g.pad_left + kx;
                    if (iw < 0 || iw >= g.in_w) continue;
                    std::copy_n(&input.at(n, ih, iw, 0), c, row + (ky * kw + kx) * c);
                }
            }
        }
    }
}

template <typename Scalar>
void col2im_add(const RowMatrix<Scalar>& col, Index n, const ConvGeometry& g, Index kh, Index kw, int stride,
                BasicTensor<Scalar>& d_input) {
    const Index c = d_input.dim(3);
    for (Index oh = 0; oh < g.out_h; ++oh) {
        for (Index ow = 0; ow < g.out_w; ++ow) {
            const Scalar* row = col.data() + (oh * g.out_w + ow) * kh * kw * c;
            for (Index ky = 0; ky < kh; ++ky) {
                const Index ih = oh * stride - g.pad_top + ky;
                if (ih < 0 || ih >= g.in_h) continue;
                for (Index kx = 0; kx < kw; ++kx) {
                    const Index iw = ow * stride - g.pad_left + kx;
                    if (iw < 0 || iw >= g.in_w) continue;
                    Scalar* dst = &d_input.at(n, ih, iw, 0);
                    const Scalar* src = row + (ky * kw + kx) * c;
                    for (Index ci = 0; ci < c; ++ci) dst[ci] += src[ci];
                }
            }
        }
    }
}

inline bool is_plain_pointwise(Index kh, Index kw, int stride, const ConvGeometry& g) {
    return kh == 1 && kw == 1 && stride == 1 && g.pad_top == 0 && g.pad_left == 0;
}

template <typename Scalar>
ConvGeometry check_conv(const BasicTensor<Scalar>& input, const BasicTensor<Scalar>& weights,
                        const BasicTensor<Scalar>* bias, int stride, Padding padding) {
    check_nhwc(input, "conv2d input");
    require(weights.rank() == 4, "conv2d weights must be [kh,kw,cin,cout], got " + shape_to_string(weights.shape()));
    require(input.dim(3) == weights.dim(2), "conv2d: input channel dim (3) " + dim_mismatch(input.dim(3), weights.dim(2)));
    if (bias) {
        require(bias->rank() == 1 && bias->dim(0) == weights.dim(3),
                "conv2d: bias length " + dim_mismatch(bias->size(), weights.dim(3)));
    }
    return conv_geometry(input.dim(1), input.dim(2), weights.dim(0), weights.dim(1), stride, padding);
}

template <typename Scalar>
ConvGeometry check_depthwise(const BasicTensor<Scalar>& input, const BasicTensor<Scalar>& weights,
                             const BasicTensor<Scalar>* bias, int stride, Padding padding) {
    check_nhwc(input, "depthwise_conv2d input");
    require(weights.rank() == 3, "depthwise weights must be [kh,kw,c], got " + shape_to_string(weights.shape()));
    require(input.dim(3) == weights.dim(2),
            "depthwise_conv2d: input channel dim (3) " + dim_mismatch(input.dim(3), weights.dim(2)));
    if (bias) {
        require(bias->rank() == 1 && bias->dim(0) == weights.dim(2),
                "depthwise_conv2d: bias length " + dim_mismatch(bias->size(), weights.dim(2)));
    }
    return conv_geometry(input.dim(1), input.dim(2), weights.dim(0), weights.dim(1), stride, padding);
}

template <typename Scalar>
BasicTensor<Scalar> conv2d_impl(const BasicTensor<Scalar>& input, const BasicTensor<Scalar>& weights,
                                const BasicTensor<Scalar>* bias, int stride, Padding padding) {
    const ConvGeometry g = check_conv(input, weights, bias, stride, padding);
    const Index batch = input.dim(0), cin = input.dim(3);
    const Index kh = weights.dim(0), kw = weights.dim(1), cout = weights.dim(3);
    BasicTensor<Scalar> out({batch, g.out_h, g.out_w, cout});
    const auto w = weights.matrix(cout);
    const bool pointwise = is_plain_pointwise(kh, kw, stride, g);

    parallel_for(batch, [&](Index n) {
        Eigen::Map<RowMatrix<Scalar>> y(out.data() + n * g.out_h * g.out_w * cout, g.out_h * g.out_w, cout);
        if (pointwise) {
            Eigen::Map<const RowMatrix<Scalar>> x(input.data() + n * g.in_h * g.in_w * cin, g.in_h * g.in_w, cin);
            y.noalias() = x * w;
        } else {
            RowMatrix<Scalar> col;
            im2col(input, n, g, kh, kw, stride, col);
            y.noalias() = col * w;
        }
        if (bias) {
            for (Index r = 0; r < y.rows(); ++r) {
                for (Index j = 0; j < cout; ++j) y(r, j) += (*bias)[j];
            }
        }
    });
    return out;
}

template <typename Scalar>
LayerGrads<Scalar> conv2d_backward_impl(const BasicTensor<Scalar>& input, const BasicTensor<Scalar>& weights,
                                        bool has_bias, int stride, Padding padding,
                                        const BasicTensor<Scalar>& d_output) {
    const ConvGeometry g = check_conv<Scalar>(input, weights, nullptr, stride, padding);
    const Index batch = input.dim(0), cin = input.dim(3);
    const Index kh = weights.dim(0), kw = weights.dim(1), cout = weights.dim(3);
    require(d_output.shape() == Shape{batch, g.out_h, g.out_w, cout},
            "conv2d_backward: d_output shape " + shape_to_string(d_output.shape()) + " does not match output shape " +
                shape_to_string({batch, g.out_h, g.out_w, cout}));

    LayerGrads<Scalar> grads;
    grads.d_input = BasicTensor<Scalar>::zeros_like(input);
    BasicTensor<Scalar> d_weights = BasicTensor<Scalar>::zeros_like(weights);
    BasicTensor<Scalar> d_bias({cout});
    const auto w = weights.matrix(cout);
    const bool pointwise = is_plain_pointwise(kh, kw, stride, g);
    const Index rows = g.out_h * g.out_w;

    parallel_for(batch, [&](Index n) {
        Eigen::Map<const RowMatrix<Scalar>> dy(d_output.data() + n * rows * cout, rows, cout);
        if (pointwise) {
            Eigen::Map<RowMatrix<Scalar>> dx(grads.d_input.data() + n * g.in_h * g.in_w * cin, g.in_h * g.in_w, cin);
            dx.noalias() = dy * w.transpose();
        } else {
            RowMatrix<Scalar> dcol = dy * w.transpose();
            col2im_add(dcol, n, g, kh, kw, stride, grads.d_input);
        }
    });

    auto dw = d_weights.matrix(cout);
    RowMatrix<Scalar> col;
    for (Index n = 0; n < batch; ++n) {
        Eigen::Map<const RowMatrix<Scalar>> dy(d_output.data() + n * rows * cout, rows, cout);
        if (pointwise) {
            Eigen::Map<const RowMatrix<Scalar>> x(input.data() + n * rows * cin, rows, cin);
            dw.noalias() += x.transpose() * dy;
        } else {
            im2col(input, n, g, kh, kw, stride, col);
            dw.noalias() += col.transpose() * dy;
        }
        if (has_bias) {
            for (Index r = 0; r < rows; ++r) {
                for (Index j = 0; j < cout; ++j) d_bias[j] += dy(r, j);
            }
        }
    }

    grads.d_params.emplace_back("weights", std::move(d_weights));
    if (has_bias) grads.d_params.emplace_back("bias", std::move(d_bias));
    return grads;
}

template <typename Scalar>
BasicTensor<Scalar> depthwise_impl(const BasicTensor<Scalar>& input, const BasicTensor<Scalar>& weights,
                                   const BasicTensor<Scalar>* bias, int stride, Padding padding) {
    const ConvGeometry g = check_depthwise(input, weights, bias, stride, padding);
    const Index batch = input.dim(0), c = input.dim(3);
    const Index kh = weights.dim(0), kw = weights.dim(1);
    BasicTensor<Scalar> out({batch, g.out_h, g.out_w, c});

    parallel_for(batch, [&](Index n) {
        for (Index oh = 0; oh < g.out_h; ++oh) {
            for (Index ow = 0; ow < g.out_w; ++ow) {
                Scalar* dst = &out.at(n, oh, ow, 0);
                if (bias) std::copy_n(bias->data(), c, dst);
                for (Index ky = 0; ky < kh; ++ky) {
                    const Index ih = oh * stride - g.pad_top + ky;
                    if (ih < 0 || ih >= g.in_h) continue;
                    for (Index kx = 0; kx < kw; ++kx) {
                        const Index iw = ow * stride - g.pad_left + kx;
                        if (iw < 0 || iw >= g.in_w) continue;
                        const Scalar* src = &input.at(n, ih, iw, 0);
                        const Scalar* k = weights.data() + (ky * kw + kx) * c;
                        for (Index ci = 0; ci < c; ++ci) dst[ci] += src[ci] * k[ci];
                    }
                }
            }
        }
    });
    return out;
}

template <typename Scalar>
LayerGrads<Scalar> depthwise_backward_impl(const BasicTensor<Scalar>& input, const BasicTensor<Scalar>& weights,
                                           bool has_bias, int stride, Padding padding,
                                           const BasicTensor<Scalar>& d_output) {
    const ConvGeometry g = check_depthwise<Scalar>(input, weights, nullptr, stride, padding);
    const Index batch = input.dim(0), c = input.dim(3);
    const Index kh = weights.dim(0), kw = weights.dim(1);
    require(d_output.shape() == Shape{batch, g.out_h, g.out_w, c},
            "depthwise_conv2d_backward: d_output shape " + shape_to_string(d_output.shape()) +
                " does not match output shape " + shape_to_string({batch, g.out_h, g.out_w, c}));

    LayerGrads<Scalar> grads;
    grads.d_input = BasicTensor<Scalar>::zeros_like(input);
    BasicTensor<Scalar> d_weights = BasicTensor<Scalar>::zeros_like(weights);
    BasicTensor<Scalar> d_bias({c});

    parallel_for(batch, [&](Index n) {
        for (Index oh = 0; oh < g.out_h; ++oh) {
            for (Index ow = 0; ow < g.out_w; ++ow) {
                const Scalar* dy = &d_output.at(n, oh, ow, 0);
                for (Index ky = 0; ky < kh; ++ky) {
                    const Index ih = oh * stride - g.pad_top + ky;
                    if (ih < 0 || ih >= g.in_h) continue;
                    for (Index kx = 0; kx < kw; ++kx) {
                        const Index iw = ow * stride - g.pad_left + kx;
                        if (iw < 0 || iw >= g.in_w) continue;
                        Scalar* dx = &grads.d_input.at(n, ih, iw, 0);
                        const Scalar* k = weights.data() + (ky * kw + kx) * c;
                        for (Index ci = 0; ci < c; ++ci) dx[ci] += dy[ci] * k[ci];
                    }
                }
            }
        }
    });

    for (Index n = 0; n < batch; ++n) {
        for (Index oh = 0; oh < g.out_h; ++oh) {
            for (Index ow = 0; ow < g.out_w; ++ow) {
                const Scalar* dy = &d_output.at(n, oh, ow, 0);
                if (has_bias) {
                    for (Index ci = 0; ci < c; ++ci) d_bias[ci] += dy[ci];
                }
                for (Index ky = 0; ky < kh; ++ky) {
                    const Index ih = oh * stride - g.pad_top + ky;
                    if (ih < 0 || ih >= g.in_h) continue;
                    for (Index kx = 0; kx < kw; ++kx) {
                        const Index iw = ow * stride - g.pad_left + kx;
                        if (iw < 0 || iw >= g.in_w) continue;
                        const Scalar* x = &input.at(n, ih, iw, 0);
                        Scalar* dk = d_weights.data() + (ky * kw + kx) * c;
                        for (Index ci = 0; ci < c; ++ci) dk[ci] += x[ci] * dy[ci];
                    }
                }
            }
        }
    }

    grads.d_params.emplace_back("weights", std::move(d_weights));
    if (has_bias) grads.d_params.emplace_back("bias", std::move(d_bias));
    return grads;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Convolutions

template <typename Scalar>
BasicTensor<Scalar> conv2d(const BasicTensor<Scalar>& input, const BasicTensor<Scalar>& weights,
                           const BasicTensor<Scalar>& bias, int stride, Padding padding) {
    return detail::conv2d_impl(input, weights, &bias, stride, padding);
}

/// Bias-free variant, used when a batchnorm follows.
template <typename Scalar>
BasicTensor<Scalar> conv2d(const BasicTensor<Scalar>& input, const BasicTensor<Scalar>& weights, int stride,
                           Padding padding) {
    return detail::conv2d_impl<Scalar>(input, weights, nullptr, stride, padding);
}

/// Gradients "weights" and, when has_bias, "bias".
template <typename Scalar>
LayerGrads<Scalar> conv2d_backward(const BasicTensor<Scalar>& input, const BasicTensor<Scalar>& weights, int stride,
                                   Padding padding, const BasicTensor<Scalar>& d_output, bool has_bias = true) {
    return detail::conv2d_backward_impl(input, weights, has_bias, stride, padding, d_output);
}

template <typename Scalar>
BasicTensor<Scalar> depthwise_conv2d(const BasicTensor<Scalar>& input, const BasicTensor<Scalar>& weights,
                                     const BasicTensor<Scalar>& bias, int stride, Padding padding) {
    return detail::depthwise_impl(input, weights, &bias, stride, padding);
}

template <typename Scalar>
BasicTensor<Scalar> depthwise_conv2d(const BasicTensor<Scalar>& input, const BasicTensor<Scalar>& weights,
                                     int stride, Padding padding) {
    return detail::depthwise_impl<Scalar>(input, weights, nullptr, stride, padding);
}

template <typename Scalar>
LayerGrads<Scalar> depthwise_conv2d_backward(const BasicTensor<Scalar>& input, const BasicTensor<Scalar>& weights,
                                             int stride, Padding padding, const BasicTensor<Scalar>& d_output,
                                             bool has_bias = true) {
    return detail::depthwise_backward_impl(input, weights, has_bias, stride, padding, d_output);
}

// ---------------------------------------------------------------------------
// Batch normalization over every axis but the last.

inline constexpr double kBatchNormEps = 1e-5;
inline constexpr double kBatchNormMomentum = 0.9;

template <typename Scalar>
struct BatchNormCache {
    Mode mode = Mode::train;
    BasicTensor<Scalar> input;
    std::vector<double> mean, inv_std;

    /// x-hat for element i, recomputed in double.
    double normalized(Index i) const {
        const auto j = static_cast<std::size_t>(i % input.dim(input.rank() - 1));
        return (input[i] - mean[j]) * inv_std[j];
    }
};

template <typename Scalar>
struct BatchNormResult {
    BasicTensor<Scalar> output;
    BatchNormCache<Scalar> cache;
};

/// Train mode normalizes with batch statistics and folds them into the running
/// estimates (running = momentum * running + (1 - momentum) * batch, with the
/// unbiased batch variance). Infer mode reads the running estimates only.
template <typename Scalar>
BatchNormResult<Scalar> batchnorm(const BasicTensor<Scalar>& input, const BasicTensor<Scalar>& gamma,
                                  const BasicTensor<Scalar>& beta, BasicTensor<Scalar>& running_mean,
                                  BasicTensor<Scalar>& running_var, Mode mode, double eps = kBatchNormEps,
                                  double momentum = kBatchNormMomentum) {
    const Index c = input.dim(input.rank() - 1);
    for (const BasicTensor<Scalar>* p : {&gamma, &beta, static_cast<const BasicTensor<Scalar>*>(&running_mean), static_cast<const BasicTensor<Scalar>*>(&running_var)}) {
        detail::require(p->rank() == 1 && p->dim(0) == c,
                        "batchnorm: parameter length " + detail::dim_mismatch(p->size(), c));
    }
    const Index m = input.size() / c;

    std::vector<double> mean(static_cast<std::size_t>(c), 0.0), var(static_cast<std::size_t>(c), 0.0);
    if (mode == Mode::train) {
        for (Index r = 0; r < m; ++r) {
            const Scalar* x = input.data() + r * c;
            for (Index j = 0; j < c; ++j) mean[j] += x[j];
        }
        for (Index j = 0; j < c; ++j) mean[j] /= static_cast<double>(m);
        for (Index r = 0; r < m; ++r) {
            const Scalar* x = input.data() + r * c;
            for (Index j = 0; j < c; ++j) {
                const double d = x[j] - mean[j];
                var[j] += d * d;
            }
        }
        for (Index j = 0; j < c; ++j) {
            var[j] /= static_cast<double>(m);
            const double unbiased = m > 1 ? var[j] * m / static_cast<double>(m - 1) : var[j];
            running_mean[j] = static_cast<Scalar>(momentum * running_mean[j] + (1.0 - momentum) * mean[j]);
            running_var[j] = static_cast<Scalar>(momentum * running_var[j] + (1.0 - momentum) * unbiased);
        }
    } else {
        for (Index j = 0; j < c; ++j) {
            mean[j] = running_mean[j];
            var[j] = running_var[j];
        }
    }

    BatchNormResult<Scalar> result;
    result.cache.mode = mode;
    result.cache.inv_std.resize(static_cast<std::size_t>(c));
    for (Index j = 0; j < c; ++j) result.cache.inv_std[j] = 1.0 / std::sqrt(var[j] + eps);
    result.output = BasicTensor<Scalar>(input.shape());
    for (Index r = 0; r < m; ++r) {
        const Scalar* x = input.data() + r * c;
        Scalar* y = result.output.data() + r * c;
        for (Index j = 0; j < c; ++j) {
            y[j] = static_cast<Scalar>(gamma[j] * ((x[j] - mean[j]) * result.cache.inv_std[j]) + beta[j]);
        }
    }
    result.cache.input = input;
    result.cache.mean = std::move(mean);
    return result;
}

/// Gradients "gamma" and "beta".
template <typename Scalar>
LayerGrads<Scalar> batchnorm_backward(const BatchNormCache<Scalar>& cache, const BasicTensor<Scalar>& gamma,
                                      const BasicTensor<Scalar>& d_output) {
    const auto& in = cache.input;
    detail::require(d_output.shape() == in.shape(), "batchnorm_backward: d_output shape " +
                                                        shape_to_string(d_output.shape()) + " does not match " +
                                                        shape_to_string(in.shape()));
    const Index c = in.dim(in.rank() - 1);
    const Index m = in.size() / c;
    // x-hat is rebuilt in double: with few values per channel it sits near +-1
    // and the train-mode input gradient cancels to a small difference.
    std::vector<double> sum_dy(static_cast<std::size_t>(c), 0.0), sum_dy_xh(static_cast<std::size_t>(c), 0.0);
    for (Index r = 0; r < m; ++r) {
        const Scalar* dy = d_output.data() + r * c;
        const Scalar* x = in.data() + r * c;
        for (Index j = 0; j < c; ++j) {
            const double xh = (x[j] - cache.mean[j]) * cache.inv_std[j];
            sum_dy[j] += dy[j];
            sum_dy_xh[j] += dy[j] * xh;
        }
    }

    LayerGrads<Scalar> grads;
    grads.d_input = BasicTensor<Scalar>(in.shape());
    for (Index r = 0; r < m; ++r) {
        const Scalar* dy = d_output.data() + r * c;
        const Scalar* x = in.data() + r * c;
        Scalar* dx = grads.d_input.data() + r * c;
        for (Index j = 0; j < c; ++j) {
            const double scale = gamma[j] * cache.inv_std[j];
            if (cache.mode == Mode::train) {
                const double xh = (x[j] - cache.mean[j]) * cache.inv_std[j];
                dx[j] = static_cast<Scalar>(scale / m * (m * dy[j] - sum_dy[j] - xh * sum_dy_xh[j]));
            } else {
                dx[j] = static_cast<Scalar>(scale * dy[j]);
            }
        }
    }
    BasicTensor<Scalar> d_gamma({c}), d_beta({c});
    for (Index j = 0; j < c; ++j) {
        d_gamma[j] = static_cast<Scalar>(sum_dy_xh[j]);
        d_beta[j] = static_cast<Scalar>(sum_dy[j]);
    }
    grads.d_params.emplace_back("gamma", std::move(d_gamma));
    grads.d_params.emplace_back("beta", std::move(d_beta));
    return grads;
}

// ---------------------------------------------------------------------------
// Pointwise and pooling

template <typename Scalar>
BasicTensor<Scalar> relu(const BasicTensor<Scalar>& input) {
    BasicTensor<Scalar> out(input);
    for (auto& v : out.values()) v = v > Scalar(0) ? v : Scalar(0);
    return out;
}

/// Subgradient at exactly 0 is 0.
template <typename Scalar>
BasicTensor<Scalar> relu_backward(const BasicTensor<Scalar>& input, const BasicTensor<Scalar>& d_output) {
    detail::require(input.shape() == d_output.shape(), "relu_backward: shape mismatch " +
                                                           shape_to_string(input.shape()) + " vs " +
                                                           shape_to_string(d_output.shape()));
    BasicTensor<Scalar> d(input.shape());
    for (Index i = 0; i < input.size(); ++i) d[i] = input[i] > Scalar(0) ? d_output[i] : Scalar(0);
    return d;
}

/// N x h x w x c -> N x 1 x 1 x c.
template <typename Scalar>
BasicTensor<Scalar> global_avg_pool(const BasicTensor<Scalar>& input) {
    detail::check_nhwc(input, "global_avg_pool input");
    const Index batch = input.dim(0), hw = input.dim(1) * input.dim(2), c = input.dim(3);
    BasicTensor<Scalar> out({batch, 1, 1, c});
    std::vector<double> acc(static_cast<std::size_t>(c));
    for (Index n = 0; n < batch; ++n) {
        std::fill(acc.begin(), acc.end(), 0.0);
        const Scalar* x = input.data() + n * hw * c;
        for (Index p = 0; p < hw; ++p) {
            for (Index j = 0; j < c; ++j) acc[j] += x[p * c + j];
        }
        for (Index j = 0; j < c; ++j) out.at(n, 0, 0, j) = static_cast<Scalar>(acc[j] / static_cast<double>(hw));
    }
    return out;
}

template <typename Scalar>
BasicTensor<Scalar> global_avg_pool_backward(const Shape& input_shape, const BasicTensor<Scalar>& d_output) {
    detail::require(input_shape.size() == 4, "global_avg_pool_backward: input shape must be rank 4");
    const Index batch = input_shape[0], hw = input_shape[1] * input_shape[2], c = input_shape[3];
    detail::require(d_output.shape() == Shape{batch, 1, 1, c},
                    "global_avg_pool_backward: d_output shape " + shape_to_string(d_output.shape()));
    BasicTensor<Scalar> d(input_shape);
    const Scalar inv = Scalar(1) / static_cast<Scalar>(hw);
    for (Index n = 0; n < batch; ++n) {
        for (Index p = 0; p < hw; ++p) {
            for (Index j = 0; j < c; ++j) d[(n * hw + p) * c + j] = d_output[n * c + j] * inv;
        }
    }
    return d;
}

// ---------------------------------------------------------------------------
// Dense

template <typename Scalar>
BasicTensor<Scalar> dense(const BasicTensor<Scalar>& input, const BasicTensor<Scalar>& weights,
                          const BasicTensor<Scalar>& bias) {
    detail::require(input.rank() == 2, "dense input must be N x k, got " + shape_to_string(input.shape()));
    detail::require(weights.rank() == 2, "dense weights must be k x m, got " + shape_to_string(weights.shape()));
    detail::require(input.dim(1) == weights.dim(0),
                    "dense: input inner dim " + detail::dim_mismatch(input.dim(1), weights.dim(0)));
    detail::require(bias.rank() == 1 && bias.dim(0) == weights.dim(1),
                    "dense: bias length " + detail::dim_mismatch(bias.size(), weights.dim(1)));
    const Index m = weights.dim(1);
    BasicTensor<Scalar> out({input.dim(0), m});
    auto y = out.matrix(m);
    y.noalias() = input.matrix(input.dim(1)) * weights.matrix(m);
    for (Index r = 0; r < y.rows(); ++r) {
        for (Index j = 0; j < m; ++j) y(r, j) += bias[j];
    }
    return out;
}

/// Gradients "weights" and "bias".
template <typename Scalar>
LayerGrads<Scalar> dense_backward(const BasicTensor<Scalar>& input, const BasicTensor<Scalar>& weights,
                                  const BasicTensor<Scalar>& d_output) {
    detail::require(input.rank() == 2 && weights.rank() == 2 && input.dim(1) == weights.dim(0),
                    "dense_backward: input " + shape_to_string(input.shape()) + " incompatible with weights " +
                        shape_to_string(weights.shape()));
    detail::require(d_output.shape() == Shape{input.dim(0), weights.dim(1)},
                    "dense_backward: d_output shape " + shape_to_string(d_output.shape()));
    const Index k = weights.dim(0), m = weights.dim(1);
    LayerGrads<Scalar> grads;
    grads.d_input = BasicTensor<Scalar>(input.shape());
    grads.d_input.matrix(k).noalias() = d_output.matrix(m) * weights.matrix(m).transpose();
    BasicTensor<Scalar> d_weights(weights.shape()), d_bias({m});
    d_weights.matrix(m).noalias() = input.matrix(k).transpose() * d_output.matrix(m);
    for (Index r = 0; r < input.dim(0); ++r) {
        for (Index j = 0; j < m; ++j) d_bias[j] += d_output[r * m + j];
    }
    grads.d_params.emplace_back("weights", std::move(d_weights));
    grads.d_params.emplace_back("bias", std::move(d_bias));
    return grads;
}

// ---------------------------------------------------------------------------
// Dropout (inverted)

template <typename Scalar>
struct DropoutResult {
    BasicTensor<Scalar> output;
    BasicTensor<Scalar> mask;  // 0 or 1/(1-p) per element
};

template <typename Scalar>
DropoutResult<Scalar> dropout(const BasicTensor<Scalar>& input, double p, Mode mode, Rng& rng) {
    if (!(p >= 0.0 && p < 1.0)) throw std::invalid_argument("dropout probability must be in [0, 1), got " + std::to_string(p));
    DropoutResult<Scalar> r{input, BasicTensor<Scalar>(input.shape(), Scalar(1))};
    if (mode == Mode::infer || p == 0.0) return r;
    const auto keep = static_cast<Scalar>(1.0 / (1.0 - p));
    for (Index i = 0; i < input.size(); ++i) {
        r.mask[i] = rng.uniform() < p ? Scalar(0) : keep;
        r.output[i] = input[i] * r.mask[i];
    }
    return r;
}

template <typename Scalar>
BasicTensor<Scalar> dropout_backward(const BasicTensor<Scalar>& mask, const BasicTensor<Scalar>& d_output) {
    detail::require(mask.shape() == d_output.shape(), "dropout_backward: shape mismatch");
    BasicTensor<Scalar> d(d_output);
    d.array() *= mask.array();
    return d;
}

// ---------------------------------------------------------------------------
// Softmax + cross-entropy

template <typename Scalar>
struct SoftmaxCrossEntropy {
    double loss = 0.0;  // mean over rows
    BasicTensor<Scalar> probs;
    BasicTensor<Scalar> d_logits;  // (probs - onehot) / N
};

template <typename Scalar>
BasicTensor<Scalar> softmax(const BasicTensor<Scalar>& logits) {
    detail::require(logits.rank() == 2, "softmax expects N x k logits, got " + shape_to_string(logits.shape()));
    const Index rows = logits.dim(0), k = logits.dim(1);
    BasicTensor<Scalar> probs(logits.shape());
    for (Index r = 0; r < rows; ++r) {
        const Scalar* z = logits.data() + r * k;
        const double zmax = *std::max_element(z, z + k);
        double total = 0.0;
        for (Index j = 0; j < k; ++j) total += std::exp(z[j] - zmax);
        for (Index j = 0; j < k; ++j) probs[r * k + j] = static_cast<Scalar>(std::exp(z[j] - zmax) / total);
    }
    return probs;
}

template <typename Scalar>
SoftmaxCrossEntropy<Scalar> softmax_cross_entropy(const BasicTensor<Scalar>& logits, std::span<const int> labels) {
    detail::require(logits.rank() == 2, "softmax_cross_entropy expects N x k logits, got " +
                                            shape_to_string(logits.shape()));
    const Index rows = logits.dim(0), k = logits.dim(1);
    detail::require(static_cast<Index>(labels.size()) == rows,
                    "softmax_cross_entropy: label count " + detail::dim_mismatch(static_cast<Index>(labels.size()), rows));
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] < 0 || labels[i] >= k) {
            throw std::invalid_argument("label " + std::to_string(labels[i]) + " at row " + std::to_string(i) +
                                        " outside [0, " + std::to_string(k) + ")");
        }
    }

    SoftmaxCrossEntropy<Scalar> out;
    out.probs = BasicTensor<Scalar>(logits.shape());
    out.d_logits = BasicTensor<Scalar>(logits.shape());
    double total_loss = 0.0;
    for (Index r = 0; r < rows; ++r) {
        const Scalar* z = logits.data() + r * k;
        const double zmax = *std::max_element(z, z + k);
        double sum = 0.0;
        for (Index j = 0; j < k; ++j) sum += std::exp(z[j] - zmax);
        const double log_sum = std::log(sum) + zmax;
        const int label = labels[static_cast<std::size_t>(r)];
        total_loss += log_sum - z[label];
        for (Index j = 0; j < k; ++j) {
            const double p = std::exp(z[j] - log_sum);
            out.probs[r * k + j] = static_cast<Scalar>(p);
            out.d_logits[r * k + j] = static_cast<Scalar>((p - (j == label ? 1.0 : 0.0)) / rows);
        }
    }
    out.loss = total_loss / static_cast<double>(rows);
    return out;
}

}  // namespace sepnet

#endif  // SEPNET_KERNELS_HPP
