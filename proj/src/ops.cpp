#include "mmmil/ops.hpp"

#include <algorithm>
#include <cmath>

namespace mmmil {

Activation activation_from_string(const std::string& s) {
    if (s == "relu") return Activation::relu;
    if (s == "tanh") return Activation::tanh;
    if (s == "sigmoid") return Activation::sigmoid;
    fail_data("unknown activation '", s, "' (expected relu|tanh|sigmoid)");
}

std::string activation_to_string(Activation a) {
    switch (a) {
        case Activation::relu: return "relu";
        case Activation::tanh: return "tanh";
        case Activation::sigmoid: return "sigmoid";
    }
    return "relu";
}

namespace ops {

using detail::Node;

namespace {

Tensor make_result(Shape shape, std::vector<double> values,
                   std::initializer_list<Tensor> inputs, std::function<void(Node&)> backward) {
    auto node = std::make_shared<Node>();
    node->shape = std::move(shape);
    node->values = std::move(values);
    bool record = false;
    if (grad_enabled()) {
        for (const Tensor& t : inputs)
            if (t.requires_grad()) {
                record = true;
                break;
            }
    }
    if (record) {
        node->requires_grad = true;
        node->parents.reserve(inputs.size());
        for (const Tensor& t : inputs) node->parents.push_back(t.node_ptr());
        node->backward_fn = std::move(backward);
    }
    return Tensor::wrap(std::move(node));
}

void check_same_shape(const char* op, const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape())
        fail_runtime(op, ": shape mismatch ", shape_str(a.shape()), " vs ", shape_str(b.shape()));
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
    check_same_shape("add", a, b);
    const auto& av = a.values();
    const auto& bv = b.values();
    std::vector<double> out(av.size());
    for (size_t i = 0; i < av.size(); ++i) out[i] = av[i] + bv[i];
    Node* pa = a.node();
    Node* pb = b.node();
    return make_result(a.shape(), std::move(out), {a, b}, [pa, pb](Node& self) {
        if (pa->requires_grad) {
            pa->ensure_grad();
            for (size_t i = 0; i < self.grad.size(); ++i) pa->grad[i] += self.grad[i];
        }
        if (pb->requires_grad) {
            pb->ensure_grad();
            for (size_t i = 0; i < self.grad.size(); ++i) pb->grad[i] += self.grad[i];
        }
    });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    check_same_shape("sub", a, b);
    const auto& av = a.values();
    const auto& bv = b.values();
    std::vector<double> out(av.size());
    for (size_t i = 0; i < av.size(); ++i) out[i] = av[i] - bv[i];
    Node* pa = a.node();
    Node* pb = b.node();
    return make_result(a.shape(), std::move(out), {a, b}, [pa, pb](Node& self) {
        if (pa->requires_grad) {
            pa->ensure_grad();
            for (size_t i = 0; i < self.grad.size(); ++i) pa->grad[i] += self.grad[i];
        }
        if (pb->requires_grad) {
            pb->ensure_grad();
            for (size_t i = 0; i < self.grad.size(); ++i) pb->grad[i] -= self.grad[i];
        }
    });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    check_same_shape("mul", a, b);
    const auto& av = a.values();
    const auto& bv = b.values();
    std::vector<double> out(av.size());
    for (size_t i = 0; i < av.size(); ++i) out[i] = av[i] * bv[i];
    Node* pa = a.node();
    Node* pb = b.node();
    return make_result(a.shape(), std::move(out), {a, b}, [pa, pb](Node& self) {
        if (pa->requires_grad) {
            pa->ensure_grad();
            for (size_t i = 0; i < self.grad.size(); ++i) pa->grad[i] += self.grad[i] * pb->values[i];
        }
        if (pb->requires_grad) {
            pb->ensure_grad();
            for (size_t i = 0; i < self.grad.size(); ++i) pb->grad[i] += self.grad[i] * pa->values[i];
        }
    });
}

Tensor scale(const Tensor& a, double c) {
    const auto& av = a.values();
    std::vector<double> out(av.size());
    for (size_t i = 0; i < av.size(); ++i) out[i] = av[i] * c;
    Node* pa = a.node();
    return make_result(a.shape(), std::move(out), {a}, [pa, c](Node& self) {
        if (!pa->requires_grad) return;
        pa->ensure_grad();
        for (size_t i = 0; i < self.grad.size(); ++i) pa->grad[i] += self.grad[i] * c;
    });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0))
        fail_runtime("matmul: incompatible shapes ", shape_str(a.shape()), " vs ",
                     shape_str(b.shape()));
    const int p = a.dim(0), q = a.dim(1), r = b.dim(1);
    const auto& av = a.values();
    const auto& bv = b.values();
    std::vector<double> out(static_cast<size_t>(p) * r, 0.0);
    for (int i = 0; i < p; ++i) {
        const double* arow = av.data() + static_cast<size_t>(i) * q;
        double* orow = out.data() + static_cast<size_t>(i) * r;
        for (int k = 0; k < q; ++k) {
            const double aik = arow[k];
            const double* brow = bv.data() + static_cast<size_t>(k) * r;
            for (int j = 0; j < r; ++j) orow[j] += aik * brow[j];
        }
    }
    Node* pa = a.node();
    Node* pb = b.node();
    return make_result({p, r}, std::move(out), {a, b}, [pa, pb, p, q, r](Node& self) {
        // dA = dOut·Bᵀ, dB = Aᵀ·dOut
        if (pa->requires_grad) {
            pa->ensure_grad();
            for (int i = 0; i < p; ++i) {
                const double* grow = self.grad.data() + static_cast<size_t>(i) * r;
                double* garow = pa->grad.data() + static_cast<size_t>(i) * q;
                for (int k = 0; k < q; ++k) {
                    const double* brow = pb->values.data() + static_cast<size_t>(k) * r;
                    double acc = 0.0;
                    for (int j = 0; j < r; ++j) acc += grow[j] * brow[j];
                    garow[k] += acc;
                }
            }
        }
        if (pb->requires_grad) {
            pb->ensure_grad();
            for (int i = 0; i < p; ++i) {
                const double* arow = pa->values.data() + static_cast<size_t>(i) * q;
                const double* grow = self.grad.data() + static_cast<size_t>(i) * r;
                for (int k = 0; k < q; ++k) {
                    const double aik = arow[k];
                    if (aik == 0.0) continue;
                    double* gbrow = pb->grad.data() + static_cast<size_t>(k) * r;
                    for (int j = 0; j < r; ++j) gbrow[j] += aik * grow[j];
                }
            }
        }
    });
}

Tensor affine(const Tensor& x, const Tensor& w, const Tensor& b) {
    if (x.rank() != 2 || w.rank() != 2 || x.dim(1) != w.dim(0))
        fail_runtime("affine: incompatible shapes x=", shape_str(x.shape()), " w=",
                     shape_str(w.shape()));
    if (b.rank() != 1 || b.dim(0) != w.dim(1))
        fail_runtime("affine: bias shape ", shape_str(b.shape()), " does not match w=",
                     shape_str(w.shape()));
    const int batch = x.dim(0), in = x.dim(1), out_dim = w.dim(1);
    const auto& xv = x.values();
    const auto& wv = w.values();
    const auto& bv = b.values();
    std::vector<double> out(static_cast<size_t>(batch) * out_dim);
    for (int i = 0; i < batch; ++i) {
        double* orow = out.data() + static_cast<size_t>(i) * out_dim;
        for (int j = 0; j < out_dim; ++j) orow[j] = bv[j];
        const double* xrow = xv.data() + static_cast<size_t>(i) * in;
        for (int k = 0; k < in; ++k) {
            const double xik = xrow[k];
            const double* wrow = wv.data() + static_cast<size_t>(k) * out_dim;
            for (int j = 0; j < out_dim; ++j) orow[j] += xik * wrow[j];
        }
    }
    Node* px = x.node();
    Node* pw = w.node();
    Node* pb = b.node();
    return make_result({batch, out_dim}, std::move(out), {x, w, b},
                       [px, pw, pb, batch, in, out_dim](Node& self) {
                           if (px->requires_grad) {
                               px->ensure_grad();
                               for (int i = 0; i < batch; ++i) {
                                   const double* grow = self.grad.data() + static_cast<size_t>(i) * out_dim;
                                   double* gxrow = px->grad.data() + static_cast<size_t>(i) * in;
                                   for (int k = 0; k < in; ++k) {
                                       const double* wrow = pw->values.data() + static_cast<size_t>(k) * out_dim;
                                       double acc = 0.0;
                                       for (int j = 0; j < out_dim; ++j) acc += grow[j] * wrow[j];
                                       gxrow[k] += acc;
                                   }
                               }
                           }
                           if (pw->requires_grad) {
                               pw->ensure_grad();
                               for (int i = 0; i < batch; ++i) {
                                   const double* xrow = px->values.data() + static_cast<size_t>(i) * in;
                                   const double* grow = self.grad.data() + static_cast<size_t>(i) * out_dim;
                                   for (int k = 0; k < in; ++k) {
                                       const double xik = xrow[k];
                                       if (xik == 0.0) continue;
                                       double* gwrow = pw->grad.data() + static_cast<size_t>(k) * out_dim;
                                       for (int j = 0; j < out_dim; ++j) gwrow[j] += xik * grow[j];
                                   }
                               }
                           }
                           if (pb->requires_grad) {
                               pb->ensure_grad();
                               for (int i = 0; i < batch; ++i) {
                                   const double* grow = self.grad.data() + static_cast<size_t>(i) * out_dim;
                                   for (int j = 0; j < out_dim; ++j) pb->grad[j] += grow[j];
                               }
                           }
                       });
}

Tensor conv2d(const Tensor& x, const Tensor& kernels, int stride, int padding) {
    if (x.rank() != 4 || kernels.rank() != 4)
        fail_runtime("conv2d: expected 4-D input and kernels, got ", shape_str(x.shape()), " and ",
                     shape_str(kernels.shape()));
    if (stride < 1) fail_runtime("conv2d: stride must be >= 1, got ", stride);
    if (padding < 0) fail_runtime("conv2d: padding must be >= 0, got ", padding);
    const int n = x.dim(0), cin = x.dim(1), H = x.dim(2), W = x.dim(3);
    const int cout = kernels.dim(0), kh = kernels.dim(2), kw = kernels.dim(3);
    if (kernels.dim(1) != cin)
        fail_runtime("conv2d: kernel channels ", shape_str(kernels.shape()),
                     " do not match input ", shape_str(x.shape()));
    if (kh > H + 2 * padding || kw > W + 2 * padding)
        fail_runtime("conv2d: kernel ", shape_str(kernels.shape()), " larger than padded input ",
                     shape_str(x.shape()), " with padding ", padding);
    const int oh = (H + 2 * padding - kh) / stride + 1;
    const int ow = (W + 2 * padding - kw) / stride + 1;

    const auto& xv = x.values();
    const auto& kv = kernels.values();
    std::vector<double> out(static_cast<size_t>(n) * cout * oh * ow, 0.0);

    auto x_plane = [&](int b, int c) { return xv.data() + (static_cast<size_t>(b) * cin + c) * H * W; };
    auto k_plane = [&](int oc, int c) {
        return kv.data() + (static_cast<size_t>(oc) * cin + c) * kh * kw;
    };

    for (int b = 0; b < n; ++b) {
        for (int oc = 0; oc < cout; ++oc) {
            double* oplane = out.data() + (static_cast<size_t>(b) * cout + oc) * oh * ow;
            for (int c = 0; c < cin; ++c) {
                const double* xp = x_plane(b, c);
                const double* kp = k_plane(oc, c);
                for (int ky = 0; ky < kh; ++ky) {
                    for (int kx = 0; kx < kw; ++kx) {
                        const double wgt = kp[ky * kw + kx];
                        if (wgt == 0.0) continue;
                        for (int oy = 0; oy < oh; ++oy) {
                            const int iy = oy * stride - padding + ky;
                            if (iy < 0 || iy >= H) continue;
                            // valid ox range so that ix = ox·stride − padding + kx ∈ [0, W)
                            int lo = 0, hi = ow - 1;
                            if (stride == 1) {
                                lo = std::max(0, padding - kx);
                                hi = std::min(ow - 1, W - 1 + padding - kx);
                            } else {
                                while (lo <= hi && lo * stride - padding + kx < 0) ++lo;
                                while (hi >= lo && hi * stride - padding + kx >= W) --hi;
                            }
                            double* orow = oplane + static_cast<size_t>(oy) * ow;
                            const double* xrow = xp + static_cast<size_t>(iy) * W - padding + kx;
                            if (stride == 1) {
                                for (int ox = lo; ox <= hi; ++ox) orow[ox] += wgt * xrow[ox];
                            } else {
                                for (int ox = lo; ox <= hi; ++ox) orow[ox] += wgt * xrow[ox * stride];
                            }
                        }
                    }
                }
            }
        }
    }

    Node* px = x.node();
    Node* pk = kernels.node();
    auto backward = [px, pk, n, cin, cout, H, W, kh, kw, oh, ow, stride, padding](Node& self) {
        auto gx_plane = [&](int b, int c) {
            return px->grad.data() + (static_cast<size_t>(b) * cin + c) * H * W;
        };
        auto x_plane2 = [&](int b, int c) {
            return px->values.data() + (static_cast<size_t>(b) * cin + c) * H * W;
        };
        auto k_plane2 = [&](int oc, int c) {
            return pk->values.data() + (static_cast<size_t>(oc) * cin + c) * kh * kw;
        };
        auto gk_plane = [&](int oc, int c) {
            return pk->grad.data() + (static_cast<size_t>(oc) * cin + c) * kh * kw;
        };
        if (px->requires_grad) px->ensure_grad();
        if (pk->requires_grad) pk->ensure_grad();
        for (int b = 0; b < n; ++b) {
            for (int oc = 0; oc < cout; ++oc) {
                const double* gplane = self.grad.data() + (static_cast<size_t>(b) * cout + oc) * oh * ow;
                for (int c = 0; c < cin; ++c) {
                    const double* xp = x_plane2(b, c);
                    const double* kp = k_plane2(oc, c);
                    double* gxp = px->requires_grad ? gx_plane(b, c) : nullptr;
                    double* gkp = pk->requires_grad ? gk_plane(oc, c) : nullptr;
                    for (int ky = 0; ky < kh; ++ky) {
                        for (int kx = 0; kx < kw; ++kx) {
                            const double wgt = kp[ky * kw + kx];
                            double kacc = 0.0;
                            for (int oy = 0; oy < oh; ++oy) {
                                const int iy = oy * stride - padding + ky;
                                if (iy < 0 || iy >= H) continue;
                                const double* grow = gplane + static_cast<size_t>(oy) * ow;
                                for (int ox = 0; ox < ow; ++ox) {
                                    const int ix = ox * stride - padding + kx;
                                    if (ix < 0 || ix >= W) continue;
                                    const double g = grow[ox];
                                    if (gxp) gxp[iy * W + ix] += g * wgt;
                                    if (gkp) kacc += g * xp[iy * W + ix];
                                }
                            }
                            if (gkp) gkp[ky * kw + kx] += kacc;
                        }
                    }
                }
            }
        }
    };
    return make_result({n, cout, oh, ow}, std::move(out), {x, kernels}, std::move(backward));
}

Tensor add_channel_bias(const Tensor& x, const Tensor& b) {
    if (x.rank() != 4 || b.rank() != 1 || b.dim(0) != x.dim(1))
        fail_runtime("add_channel_bias: shapes ", shape_str(x.shape()), " and ",
                     shape_str(b.shape()), " are incompatible");
    const int n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
    const auto& xv = x.values();
    const auto& bv = b.values();
    std::vector<double> out(xv.size());
    for (int bi = 0; bi < n; ++bi)
        for (int ci = 0; ci < c; ++ci) {
            const size_t base = (static_cast<size_t>(bi) * c + ci) * hw;
            const double bias = bv[ci];
            for (int i = 0; i < hw; ++i) out[base + i] = xv[base + i] + bias;
        }
    Node* px = x.node();
    Node* pb = b.node();
    return make_result(x.shape(), std::move(out), {x, b}, [px, pb, n, c, hw](Node& self) {
        if (px->requires_grad) {
            px->ensure_grad();
            for (size_t i = 0; i < self.grad.size(); ++i) px->grad[i] += self.grad[i];
        }
        if (pb->requires_grad) {
            pb->ensure_grad();
            for (int bi = 0; bi < n; ++bi)
                for (int ci = 0; ci < c; ++ci) {
                    const size_t base = (static_cast<size_t>(bi) * c + ci) * hw;
                    double acc = 0.0;
                    for (int i = 0; i < hw; ++i) acc += self.grad[base + i];
                    pb->grad[ci] += acc;
                }
        }
    });
}

Tensor activate(const Tensor& x, Activation kind) {
    const auto& xv = x.values();
    std::vector<double> out(xv.size());
    switch (kind) {
        case Activation::relu:
            for (size_t i = 0; i < xv.size(); ++i) out[i] = xv[i] > 0.0 ? xv[i] : 0.0;
            break;
        case Activation::tanh:
            for (size_t i = 0; i < xv.size(); ++i) out[i] = std::tanh(xv[i]);
            break;
        case Activation::sigmoid:
            for (size_t i = 0; i < xv.size(); ++i) out[i] = 1.0 / (1.0 + std::exp(-xv[i]));
            break;
    }
    Node* px = x.node();
    return make_result(x.shape(), std::move(out), {x}, [px, kind](Node& self) {
        if (!px->requires_grad) return;
        px->ensure_grad();
        switch (kind) {
            case Activation::relu:
                for (size_t i = 0; i < self.grad.size(); ++i)
                    if (px->values[i] > 0.0) px->grad[i] += self.grad[i];
                break;
            case Activation::tanh:
                for (size_t i = 0; i < self.grad.size(); ++i) {
                    const double y = self.values[i];
                    px->grad[i] += self.grad[i] * (1.0 - y * y);
                }
                break;
            case Activation::sigmoid:
                for (size_t i = 0; i < self.grad.size(); ++i) {
                    const double y = self.values[i];
                    px->grad[i] += self.grad[i] * y * (1.0 - y);
                }
                break;
        }
    });
}

Tensor softmax_vec(const Tensor& x) {
    if (x.rank() != 1) fail_runtime("softmax: expected 1-D tensor, got ", shape_str(x.shape()));
    const auto& xv = x.values();
    if (xv.empty()) fail_runtime("softmax: empty input");
    const double mx = *std::max_element(xv.begin(), xv.end());
    std::vector<double> out(xv.size());
    double denom = 0.0;
    for (size_t i = 0; i < xv.size(); ++i) {
        out[i] = std::exp(xv[i] - mx);
        denom += out[i];
    }
    for (double& v : out) v /= denom;
    Node* px = x.node();
    return make_result(x.shape(), std::move(out), {x}, [px](Node& self) {
        if (!px->requires_grad) return;
        px->ensure_grad();
        double dot = 0.0;
        for (size_t i = 0; i < self.grad.size(); ++i) dot += self.grad[i] * self.values[i];
        for (size_t i = 0; i < self.grad.size(); ++i)
            px->grad[i] += self.values[i] * (self.grad[i] - dot);
    });
}

Tensor layernorm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
    if (x.rank() != 2) fail_runtime("layernorm: expected 2-D input, got ", shape_str(x.shape()));
    const int batch = x.dim(0), d = x.dim(1);
    if (d < 2) fail_runtime("layernorm: feature dim must be >= 2, got ", d);
    if (gain.rank() != 1 || gain.dim(0) != d || bias.rank() != 1 || bias.dim(0) != d)
        fail_runtime("layernorm: gain/bias ", shape_str(gain.shape()), "/",
                     shape_str(bias.shape()), " do not match input ", shape_str(x.shape()));
    const auto& xv = x.values();
    const auto& gv = gain.values();
    const auto& bv = bias.values();
    std::vector<double> out(xv.size());
    std::vector<double> normed(xv.size());  // saved for backward
    std::vector<double> inv_sigma(batch);
    for (int i = 0; i < batch; ++i) {
        const double* row = xv.data() + static_cast<size_t>(i) * d;
        double mean = 0.0;
        for (int j = 0; j < d; ++j) mean += row[j];
        mean /= d;
        double var = 0.0;
        for (int j = 0; j < d; ++j) {
            const double c = row[j] - mean;
            var += c * c;
        }
        var /= d;
        const double is = 1.0 / std::sqrt(var + eps);
        inv_sigma[i] = is;
        double* nrow = normed.data() + static_cast<size_t>(i) * d;
        double* orow = out.data() + static_cast<size_t>(i) * d;
        for (int j = 0; j < d; ++j) {
            nrow[j] = (row[j] - mean) * is;
            orow[j] = gv[j] * nrow[j] + bv[j];
        }
    }
    Node* px = x.node();
    Node* pg = gain.node();
    Node* pb = bias.node();
    auto backward = [px, pg, pb, batch, d, normed = std::move(normed),
                     inv_sigma = std::move(inv_sigma)](Node& self) {
        if (px->requires_grad) px->ensure_grad();
        if (pg->requires_grad) pg->ensure_grad();
        if (pb->requires_grad) pb->ensure_grad();
        for (int i = 0; i < batch; ++i) {
            const double* grow = self.grad.data() + static_cast<size_t>(i) * d;
            const double* nrow = normed.data() + static_cast<size_t>(i) * d;
            if (pg->requires_grad)
                for (int j = 0; j < d; ++j) pg->grad[j] += grow[j] * nrow[j];
            if (pb->requires_grad)
                for (int j = 0; j < d; ++j) pb->grad[j] += grow[j];
            if (px->requires_grad) {
                // dx = (g⊙dy − mean(g⊙dy) − n·mean(g⊙dy⊙n)) / σ
                double m1 = 0.0, m2 = 0.0;
                for (int j = 0; j < d; ++j) {
                    const double gd = pg->values[j] * grow[j];
                    m1 += gd;
                    m2 += gd * nrow[j];
                }
                m1 /= d;
                m2 /= d;
                double* gxrow = px->grad.data() + static_cast<size_t>(i) * d;
                for (int j = 0; j < d; ++j) {
                    const double gd = pg->values[j] * grow[j];
                    gxrow[j] += (gd - m1 - nrow[j] * m2) * inv_sigma[i];
                }
            }
        }
    };
    return make_result(x.shape(), std::move(out), {x, gain, bias}, std::move(backward));
}

Tensor bce_loss(const Tensor& p, const Tensor& y, double eps) {
    check_same_shape("bce_loss", p, y);
    const auto& pv = p.values();
    const auto& yv = y.values();
    const size_t n = pv.size();
    double loss = 0.0;
    for (size_t i = 0; i < n; ++i) {
        const double pc = std::clamp(pv[i], eps, 1.0 - eps);
        loss += -(yv[i] * std::log(pc) + (1.0 - yv[i]) * std::log(1.0 - pc));
    }
    loss /= static_cast<double>(n);
    Node* pp = p.node();
    Node* py = y.node();
    return make_result({1}, {loss}, {p, y}, [pp, py, eps, n](Node& self) {
        if (!pp->requires_grad) return;
        pp->ensure_grad();
        const double g = self.grad[0] / static_cast<double>(n);
        for (size_t i = 0; i < n; ++i) {
            const double raw = pp->values[i];
            if (raw <= eps || raw >= 1.0 - eps) continue;  // clamp region: zero slope
            pp->grad[i] += g * (raw - py->values[i]) / (raw * (1.0 - raw));
        }
    });
}

Tensor sum_all(const Tensor& x) {
    const auto& xv = x.values();
    double s = 0.0;
    for (double v : xv) s += v;
    Node* px = x.node();
    return make_result({1}, {s}, {x}, [px](Node& self) {
        if (!px->requires_grad) return;
        px->ensure_grad();
        for (double& g : px->grad) g += self.grad[0];
    });
}

Tensor mean_all(const Tensor& x) {
    const auto& xv = x.values();
    double s = 0.0;
    for (double v : xv) s += v;
    const double inv = 1.0 / static_cast<double>(xv.size());
    Node* px = x.node();
    return make_result({1}, {s * inv}, {x}, [px, inv](Node& self) {
        if (!px->requires_grad) return;
        px->ensure_grad();
        for (double& g : px->grad) g += self.grad[0] * inv;
    });
}

Tensor spatial_mean(const Tensor& x) {
    if (x.rank() != 4) fail_runtime("spatial_mean: expected 4-D input, got ", shape_str(x.shape()));
    const int n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
    const auto& xv = x.values();
    std::vector<double> out(static_cast<size_t>(n) * c);
    const double inv = 1.0 / hw;
    for (int b = 0; b < n; ++b)
        for (int ci = 0; ci < c; ++ci) {
            const size_t base = (static_cast<size_t>(b) * c + ci) * hw;
            double acc = 0.0;
            for (int i = 0; i < hw; ++i) acc += xv[base + i];
            out[static_cast<size_t>(b) * c + ci] = acc * inv;
        }
    Node* px = x.node();
    return make_result({n, c}, std::move(out), {x}, [px, n, c, hw, inv](Node& self) {
        if (!px->requires_grad) return;
        px->ensure_grad();
        for (int b = 0; b < n; ++b)
            for (int ci = 0; ci < c; ++ci) {
                const double g = self.grad[static_cast<size_t>(b) * c + ci] * inv;
                const size_t base = (static_cast<size_t>(b) * c + ci) * hw;
                for (int i = 0; i < hw; ++i) px->grad[base + i] += g;
            }
    });
}

Tensor channel_mean(const Tensor& x) {
    if (x.rank() != 4) fail_runtime("channel_mean: expected 4-D input, got ", shape_str(x.shape()));
    const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    const int hw = h * w;
    const auto& xv = x.values();
    std::vector<double> out(static_cast<size_t>(n) * hw, 0.0);
    const double inv = 1.0 / c;
    for (int b = 0; b < n; ++b) {
        double* oplane = out.data() + static_cast<size_t>(b) * hw;
        for (int ci = 0; ci < c; ++ci) {
            const double* xp = xv.data() + (static_cast<size_t>(b) * c + ci) * hw;
            for (int i = 0; i < hw; ++i) oplane[i] += xp[i];
        }
        for (int i = 0; i < hw; ++i) oplane[i] *= inv;
    }
    Node* px = x.node();
    return make_result({n, h, w}, std::move(out), {x}, [px, n, c, hw, inv](Node& self) {
        if (!px->requires_grad) return;
        px->ensure_grad();
        for (int b = 0; b < n; ++b) {
            const double* gplane = self.grad.data() + static_cast<size_t>(b) * hw;
            for (int ci = 0; ci < c; ++ci) {
                double* gxp = px->grad.data() + (static_cast<size_t>(b) * c + ci) * hw;
                for (int i = 0; i < hw; ++i) gxp[i] += gplane[i] * inv;
            }
        }
    });
}

Tensor reshape(const Tensor& x, const Shape& shape) {
    if (shape_numel(shape) != x.size())
        fail_runtime("reshape: cannot view ", shape_str(x.shape()), " as ", shape_str(shape));
    Node* px = x.node();
    return make_result(shape, x.values(), {x}, [px](Node& self) {
        if (!px->requires_grad) return;
        px->ensure_grad();
        for (size_t i = 0; i < self.grad.size(); ++i) px->grad[i] += self.grad[i];
    });
}

Tensor transpose(const Tensor& x) {
    if (x.rank() != 2) fail_runtime("transpose: expected a matrix, got ", shape_str(x.shape()));
    const int r = x.dim(0), c = x.dim(1);
    const auto& xv = x.values();
    std::vector<double> out(xv.size());
    for (int i = 0; i < r; ++i)
        for (int j = 0; j < c; ++j)
            out[static_cast<size_t>(j) * r + i] = xv[static_cast<size_t>(i) * c + j];
    Node* px = x.node();
    return make_result({c, r}, std::move(out), {x}, [px, r, c](Node& self) {
        if (!px->requires_grad) return;
        px->ensure_grad();
        for (int i = 0; i < r; ++i)
            for (int j = 0; j < c; ++j)
                px->grad[static_cast<size_t>(i) * c + j] +=
                    self.grad[static_cast<size_t>(j) * r + i];
    });
}

Tensor slice_cols(const Tensor& x, int start, int len) {
    if (x.rank() != 2) fail_runtime("slice_cols: expected a matrix, got ", shape_str(x.shape()));
    const int r = x.dim(0), c = x.dim(1);
    if (start < 0 || len < 1 || start + len > c)
        fail_runtime("slice_cols: [", start, ", ", start + len, ") outside 0..", c);
    const auto& xv = x.values();
    std::vector<double> out(static_cast<size_t>(r) * len);
    for (int i = 0; i < r; ++i)
        std::copy_n(xv.data() + static_cast<size_t>(i) * c + start, len,
                    out.data() + static_cast<size_t>(i) * len);
    Node* px = x.node();
    return make_result({r, len}, std::move(out), {x}, [px, r, c, start, len](Node& self) {
        if (!px->requires_grad) return;
        px->ensure_grad();
        for (int i = 0; i < r; ++i)
            for (int j = 0; j < len; ++j)
                px->grad[static_cast<size_t>(i) * c + start + j] +=
                    self.grad[static_cast<size_t>(i) * len + j];
    });
}

Tensor softmax_rows(const Tensor& x) {
    if (x.rank() != 2) fail_runtime("softmax_rows: expected a matrix, got ", shape_str(x.shape()));
    const int r = x.dim(0), c = x.dim(1);
    const auto& xv = x.values();
    std::vector<double> out(xv.size());
    for (int i = 0; i < r; ++i) {
        const double* row = xv.data() + static_cast<size_t>(i) * c;
        double* orow = out.data() + static_cast<size_t>(i) * c;
        const double mx = *std::max_element(row, row + c);
        double denom = 0.0;
        for (int j = 0; j < c; ++j) {
            orow[j] = std::exp(row[j] - mx);
            denom += orow[j];
        }
        for (int j = 0; j < c; ++j) orow[j] /= denom;
    }
    Node* px = x.node();
    return make_result(x.shape(), std::move(out), {x}, [px, r, c](Node& self) {
        if (!px->requires_grad) return;
        px->ensure_grad();
        for (int i = 0; i < r; ++i) {
            const double* grow = self.grad.data() + static_cast<size_t>(i) * c;
            const double* yrow = self.values.data() + static_cast<size_t>(i) * c;
            double dot = 0.0;
            for (int j = 0; j < c; ++j) dot += grow[j] * yrow[j];
            double* gxrow = px->grad.data() + static_cast<size_t>(i) * c;
            for (int j = 0; j < c; ++j) gxrow[j] += yrow[j] * (grow[j] - dot);
        }
    });
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
    if (parts.empty()) fail_runtime("concat_rows: empty input");
    int cols = -1, rows = 0;
    for (const Tensor& t : parts) {
        if (t.rank() != 2) fail_runtime("concat_rows: expected matrices, got ", shape_str(t.shape()));
        if (cols < 0) cols = t.dim(1);
        if (t.dim(1) != cols)
            fail_runtime("concat_rows: column mismatch ", cols, " vs ", shape_str(t.shape()));
        rows += t.dim(0);
    }
    std::vector<double> out;
    out.reserve(static_cast<size_t>(rows) * cols);
    for (const Tensor& t : parts) out.insert(out.end(), t.values().begin(), t.values().end());

    auto node = std::make_shared<Node>();
    node->shape = {rows, cols};
    node->values = std::move(out);
    bool record = false;
    if (grad_enabled())
        for (const Tensor& t : parts)
            if (t.requires_grad()) record = true;
    if (record) {
        node->requires_grad = true;
        std::vector<Node*> raw;
        for (const Tensor& t : parts) {
            node->parents.push_back(t.node_ptr());
            raw.push_back(t.node());
        }
        node->backward_fn = [raw](Node& self) {
            size_t off = 0;
            for (Node* p : raw) {
                const size_t cnt = p->values.size();
                if (p->requires_grad) {
                    p->ensure_grad();
                    for (size_t i = 0; i < cnt; ++i) p->grad[i] += self.grad[off + i];
                }
                off += cnt;
            }
        };
    }
    return Tensor::wrap(std::move(node));
}

Tensor concat_cols(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.dim(0) != b.dim(0))
        fail_runtime("concat_cols: incompatible shapes ", shape_str(a.shape()), " vs ",
                     shape_str(b.shape()));
    const int rows = a.dim(0), ca = a.dim(1), cb = b.dim(1);
    std::vector<double> out(static_cast<size_t>(rows) * (ca + cb));
    for (int i = 0; i < rows; ++i) {
        std::copy_n(a.values().data() + static_cast<size_t>(i) * ca, ca,
                    out.data() + static_cast<size_t>(i) * (ca + cb));
        std::copy_n(b.values().data() + static_cast<size_t>(i) * cb, cb,
                    out.data() + static_cast<size_t>(i) * (ca + cb) + ca);
    }
    Node* pa = a.node();
    Node* pb = b.node();
    return make_result({rows, ca + cb}, std::move(out), {a, b}, [pa, pb, rows, ca, cb](Node& self) {
        for (int i = 0; i < rows; ++i) {
            const double* grow = self.grad.data() + static_cast<size_t>(i) * (ca + cb);
            if (pa->requires_grad) {
                pa->ensure_grad();
                for (int j = 0; j < ca; ++j) pa->grad[static_cast<size_t>(i) * ca + j] += grow[j];
            }
            if (pb->requires_grad) {
                pb->ensure_grad();
                for (int j = 0; j < cb; ++j) pb->grad[static_cast<size_t>(i) * cb + j] += grow[ca + j];
            }
        }
    });
}

}  // namespace ops
}  // namespace mmmil
