#include "semcomm/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace semcomm {

namespace {

void check_rank(const Tensor& t, int rank, const char* where) {
    if (t.rank() != rank) {
        throw ShapeError(std::string(where) + ": expected rank " + std::to_string(rank) +
                         ", got " + t.shape_str());
    }
}

}  // namespace

// ---------------------------------------------------------------------------
// Graph
// ---------------------------------------------------------------------------

Var Graph::input(Tensor value) {
    Node n;
    n.value = std::move(value);
    nodes_.push_back(std::move(n));
    return static_cast<Var>(nodes_.size() - 1);
}

Var Graph::leaf(Tensor value) {
    Node n;
    n.value = std::move(value);
    n.requires_grad = training_;
    nodes_.push_back(std::move(n));
    return static_cast<Var>(nodes_.size() - 1);
}

Var Graph::param(ParamStore& store, const std::string& name) {
    if (bound_store_ && bound_store_ != &store) {
        throw ContractError("one Graph cannot span two ParamStores");
    }
    bound_store_ = &store;
    auto it = param_cache_.find(name);
    if (it != param_cache_.end()) return it->second;

    const ParamStore::Entry& e = store.entry(name);
    Node n;
    n.value = e.value;
    n.requires_grad = training_ && e.trainable;
    n.store = &store;
    n.param_name = name;
    nodes_.push_back(std::move(n));
    const Var v = static_cast<Var>(nodes_.size() - 1);
    param_cache_.emplace(name, v);
    return v;
}

Tensor& Graph::ensure_grad(Var v) {
    Node& n = nodes_[static_cast<std::size_t>(v)];
    if (!n.grad_ready) {
        n.grad = Tensor(n.value.shape, 0.0f);
        n.grad_ready = true;
    }
    return n.grad;
}

Tensor& Graph::grad(Var v) { return ensure_grad(v); }

float Graph::scalar(Var v) const {
    const Tensor& t = value(v);
    if (t.numel() != 1) throw ContractError("scalar() on non-scalar node " + t.shape_str());
    return t.data[0];
}

Var Graph::emit(Tensor value, std::vector<Var> inputs, BackFn back) {
    Node n;
    n.value = std::move(value);
    n.inputs = std::move(inputs);
    if (training_) {
        for (Var in : n.inputs) {
            if (nodes_[static_cast<std::size_t>(in)].requires_grad) {
                n.requires_grad = true;
                break;
            }
        }
        if (n.requires_grad) n.back = std::move(back);
    }
    nodes_.push_back(std::move(n));
    return static_cast<Var>(nodes_.size() - 1);
}

void Graph::backward(Var loss, float seed) {
    if (!training_) throw ContractError("backward() on an eval-mode graph");
    Node& ln = nodes_[static_cast<std::size_t>(loss)];
    if (ln.value.numel() != 1) {
        throw ContractError("backward() needs a scalar loss, got " + ln.value.shape_str());
    }
    ensure_grad(loss).data[0] += seed;
    for (Var id = loss; id >= 0; --id) {
        Node& n = nodes_[static_cast<std::size_t>(id)];
        if (!n.grad_ready || !n.back) continue;
        n.back(*this, id);
    }
    // fold parameter-leaf gradients into the store
    for (auto& [name, v] : param_cache_) {
        Node& n = nodes_[static_cast<std::size_t>(v)];
        if (!n.grad_ready || !n.requires_grad) continue;
        Tensor& dst = n.store->grad(name);
        for (std::size_t i = 0; i < dst.data.size(); ++i) dst.data[i] += n.grad.data[i];
    }
}

// ---------------------------------------------------------------------------
// convolution
// ---------------------------------------------------------------------------

int conv_out_extent(int in, int k, int stride, int pad, int dilation) {
    if (stride < 1 || dilation < 1 || pad < 0) {
        throw ContractError("conv geometry: stride/dilation >= 1, pad >= 0");
    }
    const int eff = dilation * (k - 1) + 1;
    if (in + 2 * pad < eff) throw GeometryError("convolution window exceeds padded extent");
    const int out = (in + 2 * pad - eff) / stride + 1;
    if (out < 1) throw GeometryError("convolution output extent would be non-positive");
    return out;
}

namespace {

// inclusive output-index range so that j*stride - pad + tap stays in [0, limit)
inline void tap_range(int limit, int stride, int pad, int tap, int out, int& jlo, int& jhi) {
    const int off = tap - pad;  // in-index = j*stride + off
    jlo = off < 0 ? (-off + stride - 1) / stride : 0;
    jhi = (limit - 1 - off) / stride;
    if (jhi > out - 1) jhi = out - 1;
}

Tensor conv2d_forward(const Tensor& in, const Tensor& k, const Tensor* bias,
                      const ConvSpec& sp) {
    check_rank(in, 3, "conv2d input");
    check_rank(k, 4, "conv2d kernel");
    const int C = in.dim(0), Hi = in.dim(1), Wi = in.dim(2);
    const int F = k.dim(0), kh = k.dim(2), kw = k.dim(3);
    if (k.dim(1) != C) {
        throw ShapeError("conv2d: kernel expects " + std::to_string(k.dim(1)) +
                         " input channels, image has " + std::to_string(C));
    }
    if (bias && (bias->rank() != 1 || bias->dim(0) != F)) {
        throw ShapeError("conv2d: bias must be [F]");
    }
    const int Ho = conv_out_extent(Hi, kh, sp.stride, sp.pad, sp.dilation);
    const int Wo = conv_out_extent(Wi, kw, sp.stride, sp.pad, sp.dilation);

    Tensor out({F, Ho, Wo}, 0.0f);
    parallel_for(F, [&](int f0, int f1) {
        for (int f = f0; f < f1; ++f) {
            float* oc = &out.data[static_cast<std::size_t>(f) * Ho * Wo];
            if (bias) {
                std::fill(oc, oc + static_cast<std::size_t>(Ho) * Wo,
                          bias->data[static_cast<std::size_t>(f)]);
            }
            for (int c = 0; c < C; ++c) {
                const float* ic = &in.data[static_cast<std::size_t>(c) * Hi * Wi];
                const float* kc = &k.data[((static_cast<std::size_t>(f) * C + c) * kh) * kw];
                for (int u = 0; u < kh; ++u) {
                    int ilo, ihi;
                    tap_range(Hi, sp.stride, sp.pad, u * sp.dilation, Ho, ilo, ihi);
                    for (int v = 0; v < kw; ++v) {
                        const float w = kc[u * kw + v];
                        int jlo, jhi;
                        tap_range(Wi, sp.stride, sp.pad, v * sp.dilation, Wo, jlo, jhi);
                        const int joff = v * sp.dilation - sp.pad;
                        for (int i = ilo; i <= ihi; ++i) {
                            const float* irow =
                                ic + static_cast<std::size_t>(i * sp.stride - sp.pad +
                                                              u * sp.dilation) *
                                         Wi;
                            float* orow = oc + static_cast<std::size_t>(i) * Wo;
                            if (sp.stride == 1) {
                                const float* ir = irow + joff;
                                for (int j = jlo; j <= jhi; ++j) orow[j] += w * ir[j];
                            } else {
                                for (int j = jlo; j <= jhi; ++j) {
                                    orow[j] += w * irow[j * sp.stride + joff];
                                }
                            }
                        }
                    }
                }
            }
        }
    });
    return out;
}

void conv2d_backward(const Tensor& in, const Tensor& k, const ConvSpec& sp, const Tensor& gout,
                     Tensor* gin, Tensor* gk, Tensor* gbias) {
    const int C = in.dim(0), Hi = in.dim(1), Wi = in.dim(2);
    const int F = k.dim(0), kh = k.dim(2), kw = k.dim(3);
    const int Ho = gout.dim(1), Wo = gout.dim(2);

    if (gbias) {
        for (int f = 0; f < F; ++f) {
            double s = 0;
            const float* gc = &gout.data[static_cast<std::size_t>(f) * Ho * Wo];
            for (std::size_t i = 0; i < static_cast<std::size_t>(Ho) * Wo; ++i) s += gc[i];
            gbias->data[static_cast<std::size_t>(f)] += static_cast<float>(s);
        }
    }
    for (int f = 0; f < F; ++f) {
        const float* gc = &gout.data[static_cast<std::size_t>(f) * Ho * Wo];
        for (int c = 0; c < C; ++c) {
            const float* ic = &in.data[static_cast<std::size_t>(c) * Hi * Wi];
            float* ginc = gin ? &gin->data[static_cast<std::size_t>(c) * Hi * Wi] : nullptr;
            const std::size_t kbase = ((static_cast<std::size_t>(f) * C + c) * kh) * kw;
            for (int u = 0; u < kh; ++u) {
                int ilo, ihi;
                tap_range(Hi, sp.stride, sp.pad, u * sp.dilation, Ho, ilo, ihi);
                for (int v = 0; v < kw; ++v) {
                    int jlo, jhi;
                    tap_range(Wi, sp.stride, sp.pad, v * sp.dilation, Wo, jlo, jhi);
                    const int joff = v * sp.dilation - sp.pad;
                    const float w = k.data[kbase + static_cast<std::size_t>(u) * kw + v];
                    double acc = 0;
                    for (int i = ilo; i <= ihi; ++i) {
                        const int ii = i * sp.stride - sp.pad + u * sp.dilation;
                        const float* irow = ic + static_cast<std::size_t>(ii) * Wi;
                        float* grow_in =
                            ginc ? ginc + static_cast<std::size_t>(ii) * Wi : nullptr;
                        const float* grow = gc + static_cast<std::size_t>(i) * Wo;
                        for (int j = jlo; j <= jhi; ++j) {
                            const int jj = j * sp.stride + joff;
                            acc += static_cast<double>(irow[jj]) * grow[j];
                            if (grow_in) grow_in[jj] += w * grow[j];
                        }
                    }
                    if (gk) {
                        gk->data[kbase + static_cast<std::size_t>(u) * kw + v] +=
                            static_cast<float>(acc);
                    }
                }
            }
        }
    }
}

}  // namespace

Var conv2d(Graph& g, Var input, Var kernel, Var bias, const ConvSpec& spec) {
    const Tensor* bt = bias >= 0 ? &g.value(bias) : nullptr;
    Tensor out = conv2d_forward(g.value(input), g.value(kernel), bt, spec);
    std::vector<Var> ins = {input, kernel};
    if (bias >= 0) ins.push_back(bias);
    return g.emit(std::move(out), std::move(ins), [input, kernel, bias, spec](Graph& gg, Var self) {
        const Tensor& gout = gg.grad(self);
        Tensor* gin = gg.wants_grad(input) ? &gg.grad(input) : nullptr;
        Tensor* gk = gg.wants_grad(kernel) ? &gg.grad(kernel) : nullptr;
        Tensor* gb = (bias >= 0 && gg.wants_grad(bias)) ? &gg.grad(bias) : nullptr;
        conv2d_backward(gg.value(input), gg.value(kernel), spec, gout, gin, gk, gb);
    });
}

Var conv_transpose2d(Graph& g, Var input, Var kernel, int stride, int pad, int out_pad) {
    const Tensor& in = g.value(input);
    const Tensor& k = g.value(kernel);
    check_rank(in, 3, "conv_transpose2d input");
    check_rank(k, 4, "conv_transpose2d kernel");
    if (stride < 1 || pad < 0 || out_pad < 0) {
        throw ContractError("conv_transpose2d: stride >= 1, pad/out_pad >= 0");
    }
    const int C = in.dim(0), Hi = in.dim(1), Wi = in.dim(2);
    const int F = k.dim(1), kh = k.dim(2), kw = k.dim(3);
    if (k.dim(0) != C) throw ShapeError("conv_transpose2d: kernel [C,F,kh,kw] vs input C");
    const int Ho = (Hi - 1) * stride - 2 * pad + kh + out_pad;
    const int Wo = (Wi - 1) * stride - 2 * pad + kw + out_pad;
    if (Ho < 1 || Wo < 1) throw GeometryError("conv_transpose2d output extent non-positive");

    Tensor out({F, Ho, Wo}, 0.0f);
    for (int c = 0; c < C; ++c) {
        const float* ic = &in.data[static_cast<std::size_t>(c) * Hi * Wi];
        for (int f = 0; f < F; ++f) {
            float* oc = &out.data[static_cast<std::size_t>(f) * Ho * Wo];
            const float* kc = &k.data[((static_cast<std::size_t>(c) * F + f) * kh) * kw];
            for (int i = 0; i < Hi; ++i) {
                for (int j = 0; j < Wi; ++j) {
                    const float x = ic[static_cast<std::size_t>(i) * Wi + j];
                    for (int u = 0; u < kh; ++u) {
                        const int oi = i * stride - pad + u;
                        if (oi < 0 || oi >= Ho) continue;
                        float* orow = oc + static_cast<std::size_t>(oi) * Wo;
                        const float* krow = kc + static_cast<std::size_t>(u) * kw;
                        for (int v = 0; v < kw; ++v) {
                            const int oj = j * stride - pad + v;
                            if (oj < 0 || oj >= Wo) continue;
                            orow[oj] += x * krow[v];
                        }
                    }
                }
            }
        }
    }

    return g.emit(std::move(out), {input, kernel},
                  [input, kernel, stride, pad](Graph& gg, Var self) {
        const Tensor& gout = gg.grad(self);
        const Tensor& in = gg.value(input);
        const Tensor& k = gg.value(kernel);
        const int C = in.dim(0), Hi = in.dim(1), Wi = in.dim(2);
        const int F = k.dim(1), kh = k.dim(2), kw = k.dim(3);
        const int Ho = gout.dim(1), Wo = gout.dim(2);
        Tensor* gin = gg.wants_grad(input) ? &gg.grad(input) : nullptr;
        Tensor* gk = gg.wants_grad(kernel) ? &gg.grad(kernel) : nullptr;
        for (int c = 0; c < C; ++c) {
            const float* ic = &in.data[static_cast<std::size_t>(c) * Hi * Wi];
            float* ginc = gin ? &gin->data[static_cast<std::size_t>(c) * Hi * Wi] : nullptr;
            for (int f = 0; f < F; ++f) {
                const float* gc = &gout.data[static_cast<std::size_t>(f) * Ho * Wo];
                const std::size_t kbase = ((static_cast<std::size_t>(c) * F + f) * kh) * kw;
                for (int i = 0; i < Hi; ++i) {
                    for (int j = 0; j < Wi; ++j) {
                        const float x = ic[static_cast<std::size_t>(i) * Wi + j];
                        double acc = 0;
                        for (int u = 0; u < kh; ++u) {
                            const int oi = i * stride - pad + u;
                            if (oi < 0 || oi >= Ho) continue;
                            const float* grow = gc + static_cast<std::size_t>(oi) * Wo;
                            for (int v = 0; v < kw; ++v) {
                                const int oj = j * stride - pad + v;
                                if (oj < 0 || oj >= Wo) continue;
                                const float go = grow[oj];
                                const float w =
                                    k.data[kbase + static_cast<std::size_t>(u) * kw + v];
                                acc += static_cast<double>(go) * w;
                                if (gk) {
                                    gk->data[kbase + static_cast<std::size_t>(u) * kw + v] +=
                                        x * go;
                                }
                            }
                        }
                        if (ginc) ginc[static_cast<std::size_t>(i) * Wi + j] +=
                            static_cast<float>(acc);
                    }
                }
            }
        }
    });
}

// ---------------------------------------------------------------------------
// pooling / resampling
// ---------------------------------------------------------------------------

Var pool2d(Graph& g, Var input, PoolKind kind, int ksize, int stride, int pad) {
    const Tensor& in = g.value(input);
    check_rank(in, 3, "pool2d input");
    const int C = in.dim(0), Hi = in.dim(1), Wi = in.dim(2);
    if (ksize > Hi + 2 * pad || ksize > Wi + 2 * pad) {
        throw GeometryError("pool2d: window exceeds padded extent");
    }
    if (stride < 1 || pad < 0) throw ContractError("pool2d: stride >= 1, pad >= 0");
    const int Ho = (Hi + 2 * pad - ksize) / stride + 1;
    const int Wo = (Wi + 2 * pad - ksize) / stride + 1;

    Tensor out({C, Ho, Wo}, 0.0f);
    // for max pooling: flat input index of the selected element per output
    auto argmax = std::make_shared<std::vector<std::int64_t>>();
    bool replay_sel = false;
    std::vector<std::int64_t>* sel_slot = nullptr;
    if (kind == PoolKind::Max) {
        argmax->assign(out.data.size(), -1);
        sel_slot = g.gate_slot<std::vector<std::int64_t>>(replay_sel);
        if (replay_sel) *argmax = *sel_slot;
    }

    for (int c = 0; c < C; ++c) {
        const float* ic = &in.data[static_cast<std::size_t>(c) * Hi * Wi];
        for (int i = 0; i < Ho; ++i) {
            for (int j = 0; j < Wo; ++j) {
                const int r0 = i * stride - pad, c0 = j * stride - pad;
                const std::size_t oidx = (static_cast<std::size_t>(c) * Ho + i) * Wo + j;
                if (kind == PoolKind::Max && replay_sel) {
                    const std::int64_t src = (*argmax)[oidx];
                    out.data[oidx] = src >= 0 ? in.data[static_cast<std::size_t>(src)] : 0.0f;
                } else if (kind == PoolKind::Max) {
                    float best = -std::numeric_limits<float>::infinity();
                    std::int64_t best_idx = -1;
                    for (int u = 0; u < ksize; ++u) {
                        const int r = r0 + u;
                        if (r < 0 || r >= Hi) continue;  // padding is -inf for max
                        for (int v = 0; v < ksize; ++v) {
                            const int cc = c0 + v;
                            if (cc < 0 || cc >= Wi) continue;
                            const float val = ic[static_cast<std::size_t>(r) * Wi + cc];
                            if (val > best) {
                                best = val;
                                best_idx = static_cast<std::int64_t>(c) * Hi * Wi +
                                           static_cast<std::int64_t>(r) * Wi + cc;
                            }
                        }
                    }
                    out.data[oidx] = best;
                    (*argmax)[oidx] = best_idx;
                } else {
                    double s = 0;  // zero padding counts toward the mean
                    for (int u = 0; u < ksize; ++u) {
                        const int r = r0 + u;
                        if (r < 0 || r >= Hi) continue;
                        for (int v = 0; v < ksize; ++v) {
                            const int cc = c0 + v;
                            if (cc < 0 || cc >= Wi) continue;
                            s += ic[static_cast<std::size_t>(r) * Wi + cc];
                        }
                    }
                    out.data[oidx] = static_cast<float>(s / (ksize * ksize));
                }
            }
        }
    }

    if (sel_slot && !replay_sel) *sel_slot = *argmax;
    return g.emit(std::move(out), {input},
                  [input, kind, ksize, stride, pad, argmax](Graph& gg, Var self) {
        if (!gg.wants_grad(input)) return;
        const Tensor& gout = gg.grad(self);
        Tensor& gin = gg.grad(input);
        const Tensor& in = gg.value(input);
        const int Hi = in.dim(1), Wi = in.dim(2);
        const int C = gout.dim(0), Ho = gout.dim(1), Wo = gout.dim(2);
        if (kind == PoolKind::Max) {
            for (std::size_t oidx = 0; oidx < gout.data.size(); ++oidx) {
                const std::int64_t src = (*argmax)[oidx];
                if (src >= 0) gin.data[static_cast<std::size_t>(src)] += gout.data[oidx];
            }
        } else {
            const float inv = 1.0f / (ksize * ksize);
            for (int c = 0; c < C; ++c) {
                for (int i = 0; i < Ho; ++i) {
                    for (int j = 0; j < Wo; ++j) {
                        const float go =
                            gout.data[(static_cast<std::size_t>(c) * Ho + i) * Wo + j] * inv;
                        for (int u = 0; u < ksize; ++u) {
                            const int r = i * stride - pad + u;
                            if (r < 0 || r >= Hi) continue;
                            for (int v = 0; v < ksize; ++v) {
                                const int cc = j * stride - pad + v;
                                if (cc < 0 || cc >= Wi) continue;
                                gin.data[(static_cast<std::size_t>(c) * Hi + r) * Wi + cc] += go;
                            }
                        }
                    }
                }
            }
        }
    });
}

namespace {
inline int bin_lo(int i, int extent, int bins) { return (i * extent) / bins; }
}  // namespace

Var adaptive_avg_pool2d(Graph& g, Var input, int bins) {
    const Tensor& in = g.value(input);
    check_rank(in, 3, "adaptive_avg_pool2d input");
    const int C = in.dim(0), H = in.dim(1), W = in.dim(2);
    if (bins < 1 || bins > H || bins > W) {
        throw GeometryError("adaptive_avg_pool2d: bins must be in [1, min(H,W)]");
    }
    Tensor out({C, bins, bins}, 0.0f);
    for (int c = 0; c < C; ++c) {
        for (int bi = 0; bi < bins; ++bi) {
            const int r0 = bin_lo(bi, H, bins), r1 = bin_lo(bi + 1, H, bins);
            for (int bj = 0; bj < bins; ++bj) {
                const int c0 = bin_lo(bj, W, bins), c1 = bin_lo(bj + 1, W, bins);
                double s = 0;
                for (int r = r0; r < r1; ++r) {
                    for (int cc = c0; cc < c1; ++cc) s += in.at(c, r, cc);
                }
                out.at(c, bi, bj) = static_cast<float>(s / ((r1 - r0) * (c1 - c0)));
            }
        }
    }
    return g.emit(std::move(out), {input}, [input, bins](Graph& gg, Var self) {
        if (!gg.wants_grad(input)) return;
        const Tensor& gout = gg.grad(self);
        Tensor& gin = gg.grad(input);
        const Tensor& in = gg.value(input);
        const int C = in.dim(0), H = in.dim(1), W = in.dim(2);
        for (int c = 0; c < C; ++c) {
            for (int bi = 0; bi < bins; ++bi) {
                const int r0 = bin_lo(bi, H, bins), r1 = bin_lo(bi + 1, H, bins);
                for (int bj = 0; bj < bins; ++bj) {
                    const int c0 = bin_lo(bj, W, bins), c1 = bin_lo(bj + 1, W, bins);
                    const float go = gout.at(c, bi, bj) / ((r1 - r0) * (c1 - c0));
                    for (int r = r0; r < r1; ++r) {
                        for (int cc = c0; cc < c1; ++cc) gin.at(c, r, cc) += go;
                    }
                }
            }
        }
    });
}

namespace {
struct LerpAxis {
    int i0, i1;
    float w1;  // weight of i1; weight of i0 is 1-w1
};
LerpAxis lerp_axis(int dst, int in_extent, int out_extent) {
    if (out_extent == 1 || in_extent == 1) return {0, 0, 0.0f};
    const double src = static_cast<double>(dst) * (in_extent - 1) / (out_extent - 1);
    int i0 = static_cast<int>(src);
    if (i0 > in_extent - 2) i0 = in_extent - 2;
    return {i0, i0 + 1, static_cast<float>(src - i0)};
}
}  // namespace

Var bilinear_upsample(Graph& g, Var input, int out_h, int out_w) {
    const Tensor& in = g.value(input);
    check_rank(in, 3, "bilinear_upsample input");
    const int C = in.dim(0), H = in.dim(1), W = in.dim(2);
    if (out_h < H || out_w < W) throw GeometryError("bilinear_upsample: downscale unsupported");
    Tensor out({C, out_h, out_w}, 0.0f);
    for (int i = 0; i < out_h; ++i) {
        const LerpAxis ay = lerp_axis(i, H, out_h);
        for (int j = 0; j < out_w; ++j) {
            const LerpAxis ax = lerp_axis(j, W, out_w);
            for (int c = 0; c < C; ++c) {
                const float v00 = in.at(c, ay.i0, ax.i0), v01 = in.at(c, ay.i0, ax.i1);
                const float v10 = in.at(c, ay.i1, ax.i0), v11 = in.at(c, ay.i1, ax.i1);
                out.at(c, i, j) = (1 - ay.w1) * ((1 - ax.w1) * v00 + ax.w1 * v01) +
                                  ay.w1 * ((1 - ax.w1) * v10 + ax.w1 * v11);
            }
        }
    }
    return g.emit(std::move(out), {input}, [input, out_h, out_w](Graph& gg, Var self) {
        if (!gg.wants_grad(input)) return;
        const Tensor& gout = gg.grad(self);
        Tensor& gin = gg.grad(input);
        const Tensor& in = gg.value(input);
        const int C = in.dim(0), H = in.dim(1), W = in.dim(2);
        for (int i = 0; i < out_h; ++i) {
            const LerpAxis ay = lerp_axis(i, H, out_h);
            for (int j = 0; j < out_w; ++j) {
                const LerpAxis ax = lerp_axis(j, W, out_w);
                for (int c = 0; c < C; ++c) {
                    const float go = gout.at(c, i, j);
                    gin.at(c, ay.i0, ax.i0) += (1 - ay.w1) * (1 - ax.w1) * go;
                    gin.at(c, ay.i0, ax.i1) += (1 - ay.w1) * ax.w1 * go;
                    gin.at(c, ay.i1, ax.i0) += ay.w1 * (1 - ax.w1) * go;
                    gin.at(c, ay.i1, ax.i1) += ay.w1 * ax.w1 * go;
                }
            }
        }
    });
}

// ---------------------------------------------------------------------------
// normalization
// ---------------------------------------------------------------------------

Var normalize(Graph& g, Var input, Var gamma, Var beta, NormKind kind, float eps,
              Tensor* running_mean, Tensor* running_var, float momentum) {
    const Tensor& in = g.value(input);
    const Tensor& gam = g.value(gamma);
    const Tensor& bet = g.value(beta);
    check_rank(in, 3, "normalize input");
    const int C = in.dim(0), H = in.dim(1), W = in.dim(2);
    if (gam.rank() != 1 || gam.dim(0) != C || bet.rank() != 1 || bet.dim(0) != C) {
        throw ShapeError("normalize: gamma/beta must be [C]");
    }
    if (eps <= 0) throw ContractError("normalize: eps must be > 0");
    const std::size_t hw = static_cast<std::size_t>(H) * W;

    const bool use_running = (kind == NormKind::Batch) && !g.training() && running_mean;

    Tensor out({C, H, W});
    auto xhat = std::make_shared<Tensor>(Tensor({C, H, W}));
    auto inv_std = std::make_shared<std::vector<float>>(static_cast<std::size_t>(C));

    for (int c = 0; c < C; ++c) {
        const float* x = &in.data[static_cast<std::size_t>(c) * hw];
        float* o = &out.data[static_cast<std::size_t>(c) * hw];
        float* xh = &xhat->data[static_cast<std::size_t>(c) * hw];
        double mu, var;
        if (use_running) {
            mu = running_mean->data[static_cast<std::size_t>(c)];
            var = running_var->data[static_cast<std::size_t>(c)];
        } else {
            double s = 0;
            for (std::size_t i = 0; i < hw; ++i) s += x[i];
            mu = s / static_cast<double>(hw);
            double s2 = 0;
            for (std::size_t i = 0; i < hw; ++i) {
                const double d = x[i] - mu;
                s2 += d * d;
            }
            var = s2 / static_cast<double>(hw);  // population variance
            if (kind == NormKind::Batch && g.training() && running_mean && running_var) {
                auto& rm = running_mean->data[static_cast<std::size_t>(c)];
                auto& rv = running_var->data[static_cast<std::size_t>(c)];
                rm = (1.0f - momentum) * rm + momentum * static_cast<float>(mu);
                rv = (1.0f - momentum) * rv + momentum * static_cast<float>(var);
            }
        }
        const float inv = static_cast<float>(1.0 / std::sqrt(var + eps));
        (*inv_std)[static_cast<std::size_t>(c)] = inv;
        const float gc = gam.data[static_cast<std::size_t>(c)];
        const float bc = bet.data[static_cast<std::size_t>(c)];
        const float muf = static_cast<float>(mu);
        for (std::size_t i = 0; i < hw; ++i) {
            xh[i] = (x[i] - muf) * inv;
            o[i] = gc * xh[i] + bc;
        }
    }

    return g.emit(std::move(out), {input, gamma, beta},
                  [input, gamma, beta, xhat, inv_std, use_running](Graph& gg, Var self) {
        const Tensor& gout = gg.grad(self);
        const Tensor& gam = gg.value(gamma);
        const int C = gout.dim(0), H = gout.dim(1), W = gout.dim(2);
        const std::size_t hw = static_cast<std::size_t>(H) * W;
        Tensor* gin = gg.wants_grad(input) ? &gg.grad(input) : nullptr;
        Tensor* gg_gamma = gg.wants_grad(gamma) ? &gg.grad(gamma) : nullptr;
        Tensor* gg_beta = gg.wants_grad(beta) ? &gg.grad(beta) : nullptr;
        for (int c = 0; c < C; ++c) {
            const float* go = &gout.data[static_cast<std::size_t>(c) * hw];
            const float* xh = &xhat->data[static_cast<std::size_t>(c) * hw];
            const float inv = (*inv_std)[static_cast<std::size_t>(c)];
            const float gc = gam.data[static_cast<std::size_t>(c)];
            double sum_go = 0, sum_go_xh = 0;
            for (std::size_t i = 0; i < hw; ++i) {
                sum_go += go[i];
                sum_go_xh += static_cast<double>(go[i]) * xh[i];
            }
            if (gg_gamma) gg_gamma->data[static_cast<std::size_t>(c)] +=
                static_cast<float>(sum_go_xh);
            if (gg_beta) gg_beta->data[static_cast<std::size_t>(c)] +=
                static_cast<float>(sum_go);
            if (gin) {
                float* gi = &gin->data[static_cast<std::size_t>(c) * hw];
                if (use_running) {
                    for (std::size_t i = 0; i < hw; ++i) gi[i] += go[i] * gc * inv;
                } else {
                    const float mean_go = static_cast<float>(sum_go / static_cast<double>(hw));
                    const float mean_go_xh =
                        static_cast<float>(sum_go_xh / static_cast<double>(hw));
                    for (std::size_t i = 0; i < hw; ++i) {
                        gi[i] += gc * inv * (go[i] - mean_go - xh[i] * mean_go_xh);
                    }
                }
            }
        }
    });
}

// ---------------------------------------------------------------------------
// activations
// ---------------------------------------------------------------------------

Var activate(Graph& g, Var input, ActKind kind) {
    const Tensor& in = g.value(input);
    Tensor out(in.shape);

    if (kind == ActKind::SoftmaxChannel) {
        check_rank(in, 3, "softmax_channel input");
        const int C = in.dim(0), H = in.dim(1), W = in.dim(2);
        const std::size_t hw = static_cast<std::size_t>(H) * W;
        for (std::size_t p = 0; p < hw; ++p) {
            float mx = -std::numeric_limits<float>::infinity();
            for (int c = 0; c < C; ++c) mx = std::max(mx, in.data[c * hw + p]);
            double denom = 0;
            for (int c = 0; c < C; ++c) {
                const double e = std::exp(static_cast<double>(in.data[c * hw + p]) - mx);
                out.data[c * hw + p] = static_cast<float>(e);
                denom += e;
            }
            for (int c = 0; c < C; ++c) {
                out.data[c * hw + p] = static_cast<float>(out.data[c * hw + p] / denom);
            }
        }
    } else if (kind == ActKind::Relu) {
        bool replay = false;
        std::vector<std::uint8_t>* mask = g.gate_slot<std::vector<std::uint8_t>>(replay);
        if (replay) {
            for (std::size_t i = 0; i < in.data.size(); ++i) {
                out.data[i] = (*mask)[i] ? in.data[i] : 0.0f;
            }
        } else {
            if (mask) mask->resize(in.data.size());
            for (std::size_t i = 0; i < in.data.size(); ++i) {
                const bool on = in.data[i] > 0;
                out.data[i] = on ? in.data[i] : 0.0f;
                if (mask) (*mask)[i] = on;
            }
        }
    } else {
        for (std::size_t i = 0; i < in.data.size(); ++i) {
            const float x = in.data[i];
            switch (kind) {
                case ActKind::Sigmoid:
                    out.data[i] = static_cast<float>(1.0 / (1.0 + std::exp(-static_cast<double>(x))));
                    break;
                case ActKind::Tanh: out.data[i] = std::tanh(x); break;
                default: break;
            }
        }
    }

    auto y = std::make_shared<Tensor>(out);  // saved activation
    return g.emit(std::move(out), {input}, [input, kind, y](Graph& gg, Var self) {
        if (!gg.wants_grad(input)) return;
        const Tensor& gout = gg.grad(self);
        Tensor& gin = gg.grad(input);
        if (kind == ActKind::SoftmaxChannel) {
            const int C = y->dim(0);
            const std::size_t hw = static_cast<std::size_t>(y->dim(1)) * y->dim(2);
            for (std::size_t p = 0; p < hw; ++p) {
                double dot = 0;
                for (int c = 0; c < C; ++c) {
                    dot += static_cast<double>(gout.data[c * hw + p]) * y->data[c * hw + p];
                }
                for (int c = 0; c < C; ++c) {
                    gin.data[c * hw + p] += static_cast<float>(
                        y->data[c * hw + p] * (gout.data[c * hw + p] - dot));
                }
            }
            return;
        }
        const Tensor& x = gg.value(input);
        for (std::size_t i = 0; i < gin.data.size(); ++i) {
            float d = 0;
            switch (kind) {
                case ActKind::Relu: d = x.data[i] > 0 ? 1.0f : 0.0f; break;
                case ActKind::Sigmoid: d = y->data[i] * (1.0f - y->data[i]); break;
                case ActKind::Tanh: d = 1.0f - y->data[i] * y->data[i]; break;
                default: break;
            }
            gin.data[i] += gout.data[i] * d;
        }
    });
}

// ---------------------------------------------------------------------------
// shape surgery
// ---------------------------------------------------------------------------

Var concat_channels(Graph& g, Var a, Var b) {
    const Tensor& ta = g.value(a);
    const Tensor& tb = g.value(b);
    check_rank(ta, 3, "concat_channels a");
    check_rank(tb, 3, "concat_channels b");
    if (ta.dim(1) != tb.dim(1) || ta.dim(2) != tb.dim(2)) {
        throw ShapeError("concat_channels: spatial mismatch " + ta.shape_str() + " vs " +
                         tb.shape_str());
    }
    Tensor out({ta.dim(0) + tb.dim(0), ta.dim(1), ta.dim(2)});
    std::copy(ta.data.begin(), ta.data.end(), out.data.begin());
    std::copy(tb.data.begin(), tb.data.end(), out.data.begin() + ta.data.size());
    const std::size_t na = ta.data.size();
    return g.emit(std::move(out), {a, b}, [a, b, na](Graph& gg, Var self) {
        const Tensor& gout = gg.grad(self);
        if (gg.wants_grad(a)) {
            Tensor& ga = gg.grad(a);
            for (std::size_t i = 0; i < na; ++i) ga.data[i] += gout.data[i];
        }
        if (gg.wants_grad(b)) {
            Tensor& gb = gg.grad(b);
            for (std::size_t i = 0; i < gb.data.size(); ++i) gb.data[i] += gout.data[na + i];
        }
    });
}

Var slice_channels(Graph& g, Var input, int c0, int c1) {
    const Tensor& in = g.value(input);
    check_rank(in, 3, "slice_channels input");
    if (c0 < 0 || c1 <= c0 || c1 > in.dim(0)) throw ShapeError("slice_channels: bad range");
    const std::size_t hw = static_cast<std::size_t>(in.dim(1)) * in.dim(2);
    Tensor out({c1 - c0, in.dim(1), in.dim(2)});
    std::copy(in.data.begin() + c0 * hw, in.data.begin() + c1 * hw, out.data.begin());
    return g.emit(std::move(out), {input}, [input, c0, hw](Graph& gg, Var self) {
        if (!gg.wants_grad(input)) return;
        const Tensor& gout = gg.grad(self);
        Tensor& gin = gg.grad(input);
        for (std::size_t i = 0; i < gout.data.size(); ++i) {
            gin.data[c0 * hw + i] += gout.data[i];
        }
    });
}

// ---------------------------------------------------------------------------
// elementwise arithmetic
// ---------------------------------------------------------------------------

Var add(Graph& g, Var a, Var b) {
    const Tensor& ta = g.value(a);
    const Tensor& tb = g.value(b);
    check_same_shape(ta, tb, "add");
    Tensor out(ta.shape);
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] = ta.data[i] + tb.data[i];
    return g.emit(std::move(out), {a, b}, [a, b](Graph& gg, Var self) {
        const Tensor& gout = gg.grad(self);
        if (gg.wants_grad(a)) {
            Tensor& ga = gg.grad(a);
            for (std::size_t i = 0; i < ga.data.size(); ++i) ga.data[i] += gout.data[i];
        }
        if (gg.wants_grad(b)) {
            Tensor& gb = gg.grad(b);
            for (std::size_t i = 0; i < gb.data.size(); ++i) gb.data[i] += gout.data[i];
        }
    });
}

Var sub(Graph& g, Var a, Var b) {
    const Tensor& ta = g.value(a);
    const Tensor& tb = g.value(b);
    check_same_shape(ta, tb, "sub");
    Tensor out(ta.shape);
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] = ta.data[i] - tb.data[i];
    return g.emit(std::move(out), {a, b}, [a, b](Graph& gg, Var self) {
        const Tensor& gout = gg.grad(self);
        if (gg.wants_grad(a)) {
            Tensor& ga = gg.grad(a);
            for (std::size_t i = 0; i < ga.data.size(); ++i) ga.data[i] += gout.data[i];
        }
        if (gg.wants_grad(b)) {
            Tensor& gb = gg.grad(b);
            for (std::size_t i = 0; i < gb.data.size(); ++i) gb.data[i] -= gout.data[i];
        }
    });
}

namespace {
enum class Bcast { None, PerChannel, PerPixel };

Bcast broadcast_kind(const Tensor& a, const Tensor& b) {
    if (a.same_shape(b)) return Bcast::None;
    if (a.rank() == 3 && b.rank() == 3 && b.dim(0) == a.dim(0) && b.dim(1) == 1 && b.dim(2) == 1) {
        return Bcast::PerChannel;
    }
    if (a.rank() == 3 && b.rank() == 3 && b.dim(0) == 1 && b.dim(1) == a.dim(1) &&
        b.dim(2) == a.dim(2)) {
        return Bcast::PerPixel;
    }
    throw ShapeError("mul: incompatible shapes " + a.shape_str() + " vs " + b.shape_str());
}
}  // namespace

Var mul(Graph& g, Var a, Var b) {
    const Tensor& ta = g.value(a);
    const Tensor& tb = g.value(b);
    const Bcast bc = broadcast_kind(ta, tb);
    Tensor out(ta.shape);
    const std::size_t hw =
        ta.rank() == 3 ? static_cast<std::size_t>(ta.dim(1)) * ta.dim(2) : ta.data.size();
    switch (bc) {
        case Bcast::None:
            for (std::size_t i = 0; i < out.data.size(); ++i)
                out.data[i] = ta.data[i] * tb.data[i];
            break;
        case Bcast::PerChannel:
            for (int c = 0; c < ta.dim(0); ++c) {
                const float m = tb.data[static_cast<std::size_t>(c)];
                for (std::size_t i = 0; i < hw; ++i) out.data[c * hw + i] = ta.data[c * hw + i] * m;
            }
            break;
        case Bcast::PerPixel:
            for (int c = 0; c < ta.dim(0); ++c) {
                for (std::size_t i = 0; i < hw; ++i) {
                    out.data[c * hw + i] = ta.data[c * hw + i] * tb.data[i];
                }
            }
            break;
    }
    return g.emit(std::move(out), {a, b}, [a, b, bc, hw](Graph& gg, Var self) {
        const Tensor& gout = gg.grad(self);
        const Tensor& ta = gg.value(a);
        const Tensor& tb = gg.value(b);
        Tensor* ga = gg.wants_grad(a) ? &gg.grad(a) : nullptr;
        Tensor* gb = gg.wants_grad(b) ? &gg.grad(b) : nullptr;
        switch (bc) {
            case Bcast::None:
                for (std::size_t i = 0; i < gout.data.size(); ++i) {
                    if (ga) ga->data[i] += gout.data[i] * tb.data[i];
                    if (gb) gb->data[i] += gout.data[i] * ta.data[i];
                }
                break;
            case Bcast::PerChannel:
                for (int c = 0; c < ta.dim(0); ++c) {
                    const float m = tb.data[static_cast<std::size_t>(c)];
                    double acc = 0;
                    for (std::size_t i = 0; i < hw; ++i) {
                        if (ga) ga->data[c * hw + i] += gout.data[c * hw + i] * m;
                        acc += static_cast<double>(gout.data[c * hw + i]) * ta.data[c * hw + i];
                    }
                    if (gb) gb->data[static_cast<std::size_t>(c)] += static_cast<float>(acc);
                }
                break;
            case Bcast::PerPixel:
                for (int c = 0; c < ta.dim(0); ++c) {
                    for (std::size_t i = 0; i < hw; ++i) {
                        if (ga) ga->data[c * hw + i] += gout.data[c * hw + i] * tb.data[i];
                        if (gb) gb->data[i] += gout.data[c * hw + i] * ta.data[c * hw + i];
                    }
                }
                break;
        }
    });
}

Var scalar_mul(Graph& g, Var a, float c) {
    const Tensor& ta = g.value(a);
    Tensor out(ta.shape);
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] = ta.data[i] * c;
    return g.emit(std::move(out), {a}, [a, c](Graph& gg, Var self) {
        if (!gg.wants_grad(a)) return;
        const Tensor& gout = gg.grad(self);
        Tensor& ga = gg.grad(a);
        for (std::size_t i = 0; i < ga.data.size(); ++i) ga.data[i] += gout.data[i] * c;
    });
}

Var scalar_add(Graph& g, Var a, float c) {
    const Tensor& ta = g.value(a);
    Tensor out(ta.shape);
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] = ta.data[i] + c;
    return g.emit(std::move(out), {a}, [a](Graph& gg, Var self) {
        if (!gg.wants_grad(a)) return;
        const Tensor& gout = gg.grad(self);
        Tensor& ga = gg.grad(a);
        for (std::size_t i = 0; i < ga.data.size(); ++i) ga.data[i] += gout.data[i];
    });
}

Var add_const(Graph& g, Var a, Tensor c) {
    const Tensor& ta = g.value(a);
    check_same_shape(ta, c, "add_const");
    Tensor out(ta.shape);
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] = ta.data[i] + c.data[i];
    return g.emit(std::move(out), {a}, [a](Graph& gg, Var self) {
        if (!gg.wants_grad(a)) return;
        const Tensor& gout = gg.grad(self);
        Tensor& ga = gg.grad(a);
        for (std::size_t i = 0; i < ga.data.size(); ++i) ga.data[i] += gout.data[i];
    });
}

// ---------------------------------------------------------------------------
// channel reductions
// ---------------------------------------------------------------------------

Var channel_max(Graph& g, Var input) {
    const Tensor& in = g.value(input);
    check_rank(in, 3, "channel_max input");
    const int C = in.dim(0);
    const std::size_t hw = static_cast<std::size_t>(in.dim(1)) * in.dim(2);
    Tensor out({1, in.dim(1), in.dim(2)});
    auto arg = std::make_shared<std::vector<int>>(hw);
    bool replay = false;
    std::vector<int>* slot = g.gate_slot<std::vector<int>>(replay);
    if (replay) {
        *arg = *slot;
        for (std::size_t p = 0; p < hw; ++p) {
            out.data[p] = in.data[static_cast<std::size_t>((*arg)[p]) * hw + p];
        }
    } else {
        for (std::size_t p = 0; p < hw; ++p) {
            float best = in.data[p];
            int bc = 0;
            for (int c = 1; c < C; ++c) {
                if (in.data[c * hw + p] > best) {
                    best = in.data[c * hw + p];
                    bc = c;
                }
            }
            out.data[p] = best;
            (*arg)[p] = bc;
        }
        if (slot) *slot = *arg;
    }
    return g.emit(std::move(out), {input}, [input, arg, hw](Graph& gg, Var self) {
        if (!gg.wants_grad(input)) return;
        const Tensor& gout = gg.grad(self);
        Tensor& gin = gg.grad(input);
        for (std::size_t p = 0; p < hw; ++p) {
            gin.data[static_cast<std::size_t>((*arg)[p]) * hw + p] += gout.data[p];
        }
    });
}

Var channel_mean(Graph& g, Var input) {
    const Tensor& in = g.value(input);
    check_rank(in, 3, "channel_mean input");
    const int C = in.dim(0);
    const std::size_t hw = static_cast<std::size_t>(in.dim(1)) * in.dim(2);
    Tensor out({1, in.dim(1), in.dim(2)});
    for (std::size_t p = 0; p < hw; ++p) {
        double s = 0;
        for (int c = 0; c < C; ++c) s += in.data[c * hw + p];
        out.data[p] = static_cast<float>(s / C);
    }
    return g.emit(std::move(out), {input}, [input, C, hw](Graph& gg, Var self) {
        if (!gg.wants_grad(input)) return;
        const Tensor& gout = gg.grad(self);
        Tensor& gin = gg.grad(input);
        const float inv = 1.0f / C;
        for (std::size_t p = 0; p < hw; ++p) {
            const float go = gout.data[p] * inv;
            for (int c = 0; c < C; ++c) gin.data[c * hw + p] += go;
        }
    });
}

// ---------------------------------------------------------------------------
// reductions to scalar
// ---------------------------------------------------------------------------

Var sum_all(Graph& g, Var input) {
    const Tensor& in = g.value(input);
    double s = 0;
    for (float v : in.data) s += v;
    return g.emit(Tensor::from({1}, {static_cast<float>(s)}), {input},
                  [input](Graph& gg, Var self) {
        if (!gg.wants_grad(input)) return;
        const float go = gg.grad(self).data[0];
        Tensor& gin = gg.grad(input);
        for (float& v : gin.data) v += go;
    });
}

Var mean_all(Graph& g, Var input) {
    const Tensor& in = g.value(input);
    double s = 0;
    for (float v : in.data) s += v;
    const std::size_t n = in.data.size();
    return g.emit(Tensor::from({1}, {static_cast<float>(s / static_cast<double>(n))}), {input},
                  [input, n](Graph& gg, Var self) {
        if (!gg.wants_grad(input)) return;
        const float go = gg.grad(self).data[0] / static_cast<float>(n);
        Tensor& gin = gg.grad(input);
        for (float& v : gin.data) v += go;
    });
}

Var inner(Graph& g, Var input, Tensor weights) {
    const Tensor& in = g.value(input);
    check_same_shape(in, weights, "inner");
    double s = 0;
    for (std::size_t i = 0; i < in.data.size(); ++i) {
        s += static_cast<double>(in.data[i]) * weights.data[i];
    }
    auto w = std::make_shared<Tensor>(std::move(weights));
    return g.emit(Tensor::from({1}, {static_cast<float>(s)}), {input},
                  [input, w](Graph& gg, Var self) {
        if (!gg.wants_grad(input)) return;
        const float go = gg.grad(self).data[0];
        Tensor& gin = gg.grad(input);
        for (std::size_t i = 0; i < gin.data.size(); ++i) gin.data[i] += go * w->data[i];
    });
}

Var vlog(Graph& g, Var input) {
    const Tensor& in = g.value(input);
    Tensor out(in.shape);
    for (std::size_t i = 0; i < out.data.size(); ++i) {
        out.data[i] = std::log(in.data[i]);
    }
    return g.emit(std::move(out), {input}, [input](Graph& gg, Var self) {
        if (!gg.wants_grad(input)) return;
        const Tensor& gout = gg.grad(self);
        const Tensor& x = gg.value(input);
        Tensor& gin = gg.grad(input);
        for (std::size_t i = 0; i < gin.data.size(); ++i) gin.data[i] += gout.data[i] / x.data[i];
    });
}

Var clamp(Graph& g, Var input, float lo, float hi) {
    const Tensor& in = g.value(input);
    Tensor out(in.shape);
    bool replay = false;
    std::vector<std::uint8_t>* region = g.gate_slot<std::vector<std::uint8_t>>(replay);
    if (replay) {
        for (std::size_t i = 0; i < out.data.size(); ++i) {
            out.data[i] = (*region)[i] == 0 ? in.data[i] : ((*region)[i] == 1 ? lo : hi);
        }
    } else {
        if (region) region->resize(out.data.size());
        for (std::size_t i = 0; i < out.data.size(); ++i) {
            out.data[i] = std::min(std::max(in.data[i], lo), hi);
            if (region) {
                (*region)[i] = in.data[i] < lo ? 1 : (in.data[i] > hi ? 2 : 0);
            }
        }
    }
    return g.emit(std::move(out), {input}, [input, lo, hi](Graph& gg, Var self) {
        if (!gg.wants_grad(input)) return;
        const Tensor& gout = gg.grad(self);
        const Tensor& x = gg.value(input);
        Tensor& gin = gg.grad(input);
        for (std::size_t i = 0; i < gin.data.size(); ++i) {
            if (x.data[i] >= lo && x.data[i] <= hi) gin.data[i] += gout.data[i];
        }
    });
}

Var mean_abs_diff(Graph& g, Var a, Var b) {
    const Tensor& ta = g.value(a);
    const Tensor& tb = g.value(b);
    check_same_shape(ta, tb, "mean_abs_diff");
    bool replay = false;
    std::vector<std::int8_t>* signs = g.gate_slot<std::vector<std::int8_t>>(replay);
    double s = 0;
    if (replay) {
        for (std::size_t i = 0; i < ta.data.size(); ++i) {
            s += (*signs)[i] * (static_cast<double>(ta.data[i]) - tb.data[i]);
        }
    } else {
        if (signs) signs->resize(ta.data.size());
        for (std::size_t i = 0; i < ta.data.size(); ++i) {
            const double d = static_cast<double>(ta.data[i]) - tb.data[i];
            s += std::fabs(d);
            if (signs) (*signs)[i] = d > 0 ? 1 : (d < 0 ? -1 : 0);
        }
    }
    const std::size_t n = ta.data.size();
    return g.emit(Tensor::from({1}, {static_cast<float>(s / static_cast<double>(n))}), {a, b},
                  [a, b, n](Graph& gg, Var self) {
        const float go = gg.grad(self).data[0] / static_cast<float>(n);
        const Tensor& ta = gg.value(a);
        const Tensor& tb = gg.value(b);
        Tensor* ga = gg.wants_grad(a) ? &gg.grad(a) : nullptr;
        Tensor* gb = gg.wants_grad(b) ? &gg.grad(b) : nullptr;
        for (std::size_t i = 0; i < n; ++i) {
            const float d = ta.data[i] - tb.data[i];
            const float sgn = d > 0 ? 1.0f : (d < 0 ? -1.0f : 0.0f);
            if (ga) ga->data[i] += go * sgn;
            if (gb) gb->data[i] -= go * sgn;
        }
    });
}

// ---------------------------------------------------------------------------
// segmentation losses
// ---------------------------------------------------------------------------

namespace {
void check_target(const Tensor& t, const LabelMap& target, const char* where) {
    check_rank(t, 3, where);
    if (t.dim(1) != target.height || t.dim(2) != target.width) {
        throw ShapeError(std::string(where) + ": map dims do not match tensor");
    }
    target.validate(t.dim(0));
}
}  // namespace

Var ce_loss(Graph& g, Var logits, const LabelMap& target) {
    const Tensor& in = g.value(logits);
    check_target(in, target, "ce_loss");
    const int C = in.dim(0);
    const std::size_t hw = static_cast<std::size_t>(in.dim(1)) * in.dim(2);

    auto probs = std::make_shared<Tensor>(Tensor(in.shape));
    double loss = 0;
    for (std::size_t p = 0; p < hw; ++p) {
        float mx = -std::numeric_limits<float>::infinity();
        for (int c = 0; c < C; ++c) mx = std::max(mx, in.data[c * hw + p]);
        double denom = 0;
        for (int c = 0; c < C; ++c) {
            const double e = std::exp(static_cast<double>(in.data[c * hw + p]) - mx);
            probs->data[c * hw + p] = static_cast<float>(e);
            denom += e;
        }
        for (int c = 0; c < C; ++c) {
            probs->data[c * hw + p] = static_cast<float>(probs->data[c * hw + p] / denom);
        }
        const int t = target.labels[p];
        loss -= std::log(std::max(static_cast<double>(probs->data[t * hw + p]), 1e-30));
    }
    loss /= static_cast<double>(hw);

    auto tgt = std::make_shared<LabelMap>(target);
    return g.emit(Tensor::from({1}, {static_cast<float>(loss)}), {logits},
                  [logits, probs, tgt, C, hw](Graph& gg, Var self) {
        if (!gg.wants_grad(logits)) return;
        const float go = gg.grad(self).data[0] / static_cast<float>(hw);
        Tensor& gin = gg.grad(logits);
        for (std::size_t p = 0; p < hw; ++p) {
            const int t = tgt->labels[p];
            for (int c = 0; c < C; ++c) {
                const float onehot = (c == t) ? 1.0f : 0.0f;
                gin.data[c * hw + p] += go * (probs->data[c * hw + p] - onehot);
            }
        }
    });
}

Var dice_loss(Graph& g, Var probs, const LabelMap& target, float smooth) {
    const Tensor& x = g.value(probs);
    check_target(x, target, "dice_loss");
    const int C = x.dim(0);
    const std::size_t hw = static_cast<std::size_t>(x.dim(1)) * x.dim(2);

    double sum_x = 0, sum_xy = 0;
    for (std::size_t i = 0; i < x.data.size(); ++i) sum_x += x.data[i];
    for (std::size_t p = 0; p < hw; ++p) {
        sum_xy += x.data[static_cast<std::size_t>(target.labels[p]) * hw + p];
    }
    const double sum_y = static_cast<double>(hw);  // one-hot target mass
    const double num = 2.0 * sum_xy;
    const double den = sum_x + sum_y + smooth;
    const double loss = 1.0 - num / den;

    auto tgt = std::make_shared<LabelMap>(target);
    return g.emit(Tensor::from({1}, {static_cast<float>(loss)}), {probs},
                  [probs, tgt, C, hw, num, den](Graph& gg, Var self) {
        if (!gg.wants_grad(probs)) return;
        const float go = gg.grad(self).data[0];
        Tensor& gin = gg.grad(probs);
        // d/dx_i [1 - num/den]: num depends on true-class entries, den on all
        const double den2 = den * den;
        for (std::size_t p = 0; p < hw; ++p) {
            const int t = tgt->labels[p];
            for (int c = 0; c < C; ++c) {
                const double dnum = (c == t) ? 2.0 : 0.0;
                gin.data[c * hw + p] +=
                    go * static_cast<float>(-(dnum * den - num) / den2);
            }
        }
    });
}

Var focal_loss(Graph& g, Var probs, const LabelMap& target, float alpha, float gamma,
               float eps) {
    if (gamma < 0 || alpha <= 0 || alpha > 1) {
        throw ContractError("focal_loss: need gamma >= 0 and alpha in (0,1]");
    }
    const Tensor& x = g.value(probs);
    check_target(x, target, "focal_loss");
    const std::size_t hw = static_cast<std::size_t>(x.dim(1)) * x.dim(2);

    double loss = 0;
    for (std::size_t p = 0; p < hw; ++p) {
        const double pt = std::min(
            std::max(static_cast<double>(
                         x.data[static_cast<std::size_t>(target.labels[p]) * hw + p]),
                     static_cast<double>(eps)),
            1.0);
        loss += -alpha * std::pow(1.0 - pt, gamma) * std::log(pt);
    }
    loss /= static_cast<double>(hw);

    auto tgt = std::make_shared<LabelMap>(target);
    return g.emit(Tensor::from({1}, {static_cast<float>(loss)}), {probs},
                  [probs, tgt, alpha, gamma, eps, hw](Graph& gg, Var self) {
        if (!gg.wants_grad(probs)) return;
        const float go = gg.grad(self).data[0] / static_cast<float>(hw);
        const Tensor& x = gg.value(probs);
        Tensor& gin = gg.grad(probs);
        for (std::size_t p = 0; p < hw; ++p) {
            const std::size_t idx = static_cast<std::size_t>(tgt->labels[p]) * hw + p;
            const double raw = x.data[idx];
            if (raw < eps || raw > 1.0) continue;  // clamped: zero gradient
            const double q = 1.0 - raw;
            // d/dp [-a (1-p)^g ln p] = a*g*(1-p)^(g-1)*ln p - a*(1-p)^g / p
            double d = -alpha * std::pow(q, gamma) / raw;
            if (gamma > 0 && q > 0) d += alpha * gamma * std::pow(q, gamma - 1.0) * std::log(raw);
            gin.data[idx] += go * static_cast<float>(d);
        }
    });
}

// ---------------------------------------------------------------------------
// helpers
// ---------------------------------------------------------------------------

LabelMap argmax_labels(const Tensor& logits) {
    if (logits.rank() != 3) throw ShapeError("argmax_labels wants [M,H,W]");
    const int C = logits.dim(0), H = logits.dim(1), W = logits.dim(2);
    if (C > 256) throw ContractError("argmax_labels: more than 256 classes");
    const std::size_t hw = static_cast<std::size_t>(H) * W;
    LabelMap out(W, H);
    for (std::size_t p = 0; p < hw; ++p) {
        float best = logits.data[p];
        int bc = 0;
        for (int c = 1; c < C; ++c) {
            if (logits.data[c * hw + p] > best) {  // strict: ties keep lowest index
                best = logits.data[c * hw + p];
                bc = c;
            }
        }
        out.labels[p] = static_cast<std::uint8_t>(bc);
    }
    return out;
}

}  // namespace semcomm
