#include "semcomm/quantize.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>

#include "json.hpp"
#include "semcomm/metrics.hpp"

namespace semcomm {

QuantParams calibrate(const Tensor& t, bool symmetric) {
    if (t.data.empty()) throw ContractError("calibrate: empty tensor");
    float lo = t.data[0], hi = t.data[0];
    for (float v : t.data) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    // near-zero widths (dead relu channels can leave denormal residue) fall
    // back to a usable scale instead of underflowing to zero
    constexpr float kTinyRange = 1e-30f;
    QuantParams p;
    if (symmetric) {
        const float amax = std::max(std::fabs(lo), std::fabs(hi));
        p.scale = amax > kTinyRange ? amax / 127.0f : 1.0f;
        p.zero_point = 0;
        return p;
    }
    if (!((hi - lo) > kTinyRange)) {
        // constant tensor: park it on a representable value
        const float amax = std::max(std::fabs(lo), std::fabs(hi));
        p.scale = amax > kTinyRange ? amax / 127.0f : 1.0f;
        p.zero_point = 0;
        return p;
    }
    p.scale = (hi - lo) / 255.0f;
    const long zp = std::lround(-static_cast<double>(lo) / p.scale) - 128;
    p.zero_point = static_cast<std::int32_t>(std::max(-128L, std::min(127L, zp)));
    return p;
}

QuantizedTensor quantize(const Tensor& t, const QuantParams& params) {
    if (!(params.scale > 0)) throw ContractError("quantize: scale must be > 0");
    QuantizedTensor q;
    q.shape = t.shape;
    q.params = params;
    q.data.resize(t.data.size());
    for (std::size_t i = 0; i < t.data.size(); ++i) {
        q.data[i] = quantize_value(t.data[i], params);
    }
    return q;
}

Tensor dequantize(const QuantizedTensor& q) {
    Tensor t(q.shape);
    for (std::size_t i = 0; i < q.data.size(); ++i) {
        t.data[i] = dequantize_value(q.data[i], q.params);
    }
    return t;
}

namespace {
// inclusive output range with j*stride - pad + tap inside [0, limit)
inline void qtap_range(int limit, int stride, int pad, int tap, int out, int& jlo, int& jhi) {
    const int off = tap - pad;
    jlo = off < 0 ? (-off + stride - 1) / stride : 0;
    jhi = (limit - 1 - off) / stride;
    if (jhi > out - 1) jhi = out - 1;
}
}  // namespace

QuantizedTensor qconv2d(const QuantizedTensor& input, const QuantizedTensor& kernel,
                        const std::vector<float>* bias, const QuantParams& out_params,
                        const ConvSpec& sp) {
    if (input.shape.size() != 3 || kernel.shape.size() != 4) {
        throw ShapeError("qconv2d: input [C,H,W], kernel [F,C,kh,kw]");
    }
    const int C = input.dim(0), Hi = input.dim(1), Wi = input.dim(2);
    const int F = kernel.dim(0), kh = kernel.dim(2), kw = kernel.dim(3);
    if (kernel.dim(1) != C) throw ShapeError("qconv2d: channel mismatch");
    if (bias && static_cast<int>(bias->size()) != F) throw ShapeError("qconv2d: bias size");
    if (static_cast<std::int64_t>(127) * 127 * kh * kw * C >= (1LL << 31)) {
        throw ContractError("qconv2d: kh*kw*C too large for i32 accumulation");
    }
    const int Ho = conv_out_extent(Hi, kh, sp.stride, sp.pad, sp.dilation);
    const int Wo = conv_out_extent(Wi, kw, sp.stride, sp.pad, sp.dilation);

    // zero points hoisted into int16 working copies; products accumulate in i32
    std::vector<std::int16_t> x16(input.data.size());
    for (std::size_t i = 0; i < input.data.size(); ++i) {
        x16[i] = static_cast<std::int16_t>(input.data[i] - input.params.zero_point);
    }
    std::vector<std::int16_t> k16(kernel.data.size());
    for (std::size_t i = 0; i < kernel.data.size(); ++i) {
        k16[i] = static_cast<std::int16_t>(kernel.data[i] - kernel.params.zero_point);
    }

    const float acc_scale = input.params.scale * kernel.params.scale;
    QuantizedTensor out;
    out.shape = {F, Ho, Wo};
    out.params = out_params;
    out.data.resize(static_cast<std::size_t>(F) * Ho * Wo);

    parallel_for(F, [&](int f0, int f1) {
        std::vector<std::int32_t> acc(static_cast<std::size_t>(Ho) * Wo);
        for (int f = f0; f < f1; ++f) {
            std::fill(acc.begin(), acc.end(), 0);
            for (int c = 0; c < C; ++c) {
                const std::int16_t* ic = &x16[static_cast<std::size_t>(c) * Hi * Wi];
                const std::int16_t* kc = &k16[((static_cast<std::size_t>(f) * C + c) * kh) * kw];
                for (int u = 0; u < kh; ++u) {
                    int ilo, ihi;
                    qtap_range(Hi, sp.stride, sp.pad, u * sp.dilation, Ho, ilo, ihi);
                    for (int v = 0; v < kw; ++v) {
                        const std::int32_t w = kc[u * kw + v];
                        if (w == 0) continue;  // exact zero tap contributes nothing
                        int jlo, jhi;
                        qtap_range(Wi, sp.stride, sp.pad, v * sp.dilation, Wo, jlo, jhi);
                        const int joff = v * sp.dilation - sp.pad;
                        for (int i = ilo; i <= ihi; ++i) {
                            const std::int16_t* irow =
                                ic + static_cast<std::size_t>(i * sp.stride - sp.pad +
                                                              u * sp.dilation) *
                                         Wi;
                            std::int32_t* arow = &acc[static_cast<std::size_t>(i) * Wo];
                            if (sp.stride == 1) {
                                const std::int16_t* ir = irow + joff;
                                for (int j = jlo; j <= jhi; ++j) arow[j] += w * ir[j];
                            } else {
                                for (int j = jlo; j <= jhi; ++j) {
                                    arow[j] += w * irow[j * sp.stride + joff];
                                }
                            }
                        }
                    }
                }
            }
            const float b = bias ? (*bias)[static_cast<std::size_t>(f)] : 0.0f;
            std::int8_t* oc = &out.data[static_cast<std::size_t>(f) * Ho * Wo];
            for (std::size_t i = 0; i < acc.size(); ++i) {
                oc[i] = quantize_value(static_cast<float>(acc[i]) * acc_scale + b, out_params);
            }
        }
    });
    return out;
}

std::string SizeReport::to_json() const {
    nlohmann::ordered_json j;
    j["float_param_bytes"] = float_param_bytes;
    j["int8_param_bytes"] = int8_param_bytes;
    j["parameter_ratio"] = parameter_ratio;
    j["float_file_bytes"] = float_file_bytes;
    j["int8_file_bytes"] = int8_file_bytes;
    j["file_ratio"] = file_ratio;
    j["empty_model"] = empty_model;
    return j.dump(2);
}

WeightFile quantize_model(const WeightFile& model, SizeReport* report) {
    WeightFile out;
    out.records.reserve(model.records.size());
    std::int64_t float_bytes = 0, int8_bytes = 0;
    for (const auto& r : model.records) {
        if (r.dtype != 0) throw ContractError("quantize_model: model already quantized");
        WeightRecord q;
        q.name = r.name;
        q.dtype = 1;
        q.shape = r.shape;
        const Tensor t = Tensor::from(r.shape, r.f32);
        const QuantParams p = calibrate(t, /*symmetric=*/true);
        const QuantizedTensor qt = quantize(t, p);
        q.i8 = qt.data;
        q.scale = p.scale;
        q.zero_point = p.zero_point;
        q.trainable = r.trainable;
        float_bytes += r.numel() * 4;
        int8_bytes += r.numel();
        out.records.push_back(std::move(q));
    }
    if (report) {
        report->float_param_bytes = float_bytes;
        report->int8_param_bytes = int8_bytes;
        report->empty_model = model.records.empty();
        report->parameter_ratio =
            int8_bytes > 0 ? static_cast<double>(float_bytes) / int8_bytes : 1.0;
    }
    return out;
}

WeightFile dequantize_model(const WeightFile& model) {
    WeightFile out;
    out.records.reserve(model.records.size());
    for (const auto& r : model.records) {
        WeightRecord f;
        f.name = r.name;
        f.dtype = 0;
        f.shape = r.shape;
        f.trainable = r.trainable;
        if (r.dtype == 0) {
            f.f32 = r.f32;
        } else {
            QuantizedTensor qt;
            qt.shape = r.shape;
            qt.data = r.i8;
            qt.params = {r.scale, r.zero_point};
            f.f32 = dequantize(qt).data;
        }
        out.records.push_back(std::move(f));
    }
    return out;
}

// ---------------------------------------------------------------------------
// quantized inference
// ---------------------------------------------------------------------------

namespace {
Tensor float_conv_reference(const Tensor& input, const Tensor& kernel, const Tensor* bias,
                            const ConvSpec& spec) {
    Graph g(/*training=*/false);
    const Var b = bias ? g.input(*bias) : -1;
    return g.value(conv2d(g, g.input(input), g.input(kernel), b, spec));
}
}  // namespace

Tensor CalibrationObserver::conv(const std::string& name, const Tensor& input,
                                 const Tensor& kernel, const Tensor* bias,
                                 const ConvSpec& spec) {
    merge(in_, name, input);
    Tensor out = float_conv_reference(input, kernel, bias, spec);
    merge(out_, name, out);
    return out;
}

void CalibrationObserver::merge(std::map<std::string, Range>& dst, const std::string& name,
                                const Tensor& t) {
    Range& r = dst[name];
    for (float v : t.data) {
        if (!r.seen) {
            r.lo = r.hi = v;
            r.seen = true;
        } else {
            r.lo = std::min(r.lo, v);
            r.hi = std::max(r.hi, v);
        }
    }
}

namespace {
QuantParams range_params(const CalibrationObserver::Range& r) {
    Tensor t({2});
    t.data[0] = r.lo;
    t.data[1] = r.hi;
    return calibrate(t, /*symmetric=*/false);
}
}  // namespace

QuantizedConvExecutor::QuantizedConvExecutor(const ParamStore& ps,
                                             const CalibrationObserver& ranges) {
    for (const auto& [name, in_range] : ranges.input_ranges()) {
        LayerQuant lq;
        const Tensor& w = ps.value(name);
        lq.kernel = quantize(w, calibrate(w, /*symmetric=*/true));
        lq.in_params = range_params(in_range);
        lq.out_params = range_params(ranges.output_ranges().at(name));
        layers_.emplace(name, std::move(lq));
    }
}

Tensor QuantizedConvExecutor::conv(const std::string& name, const Tensor& input,
                                   const Tensor& kernel, const Tensor* bias,
                                   const ConvSpec& spec) {
    (void)kernel;  // the prequantized copy is used
    auto it = layers_.find(name);
    if (it == layers_.end()) throw ContractError("quantized executor: uncalibrated " + name);
    const LayerQuant& lq = it->second;
    const QuantizedTensor qin = quantize(input, lq.in_params);
    const std::vector<float>* b = bias ? &bias->data : nullptr;
    return dequantize(qconv2d(qin, lq.kernel, b, lq.out_params, spec));
}

QuantizedConvExecutor make_quantized_executor(ParamStore& ps, const SegNetConfig& cfg,
                                              const std::vector<const Tensor*>& calibration) {
    if (calibration.empty()) throw ContractError("calibration batch must be non-empty");
    CalibrationObserver obs;
    for (const Tensor* img : calibration) {
        segment(*img, cfg, ps, &obs);
    }
    return QuantizedConvExecutor(ps, obs);
}

std::string SpeedupReport::to_json() const {
    nlohmann::ordered_json j;
    j["t_float_s"] = t_float_s;
    j["t_quant_s"] = t_quant_s;
    j["qar"] = qar;
    j["miou_float"] = miou_float;
    j["miou_quant"] = miou_quant;
    j["delta_miou"] = delta_miou;
    return j.dump(2);
}

SpeedupReport quantization_speedup_report(ParamStore& ps, const SegNetConfig& cfg,
                                          QuantizedConvExecutor& qexec,
                                          const std::vector<const Tensor*>& eval_images,
                                          const std::vector<const LabelMap*>& eval_labels,
                                          int runs) {
    if (eval_images.empty() || eval_images.size() != eval_labels.size()) {
        throw ContractError("speedup report: evaluation pairs mismatch");
    }
    if (runs < 2) throw StatsError("speedup report: need at least 2 timing runs");

    using clock = std::chrono::steady_clock;
    auto time_forward = [&](ConvHook* hook) {
        std::vector<double> samples;
        samples.reserve(static_cast<std::size_t>(runs));
        for (int i = 0; i < runs; ++i) {
            const auto t0 = clock::now();
            segment(*eval_images[0], cfg, ps, hook);
            const auto t1 = clock::now();
            samples.push_back(std::chrono::duration<double>(t1 - t0).count());
        }
        std::sort(samples.begin(), samples.end());
        return samples[samples.size() / 2];
    };

    SpeedupReport rep;
    rep.t_float_s = time_forward(nullptr);
    rep.t_quant_s = time_forward(&qexec);
    if (rep.t_float_s <= 0) throw StatsError("speedup report: timer resolution insufficient");
    rep.qar = (rep.t_float_s - rep.t_quant_s) / rep.t_float_s;

    ConfusionMatrix cm_f(cfg.num_classes), cm_q(cfg.num_classes);
    for (std::size_t i = 0; i < eval_images.size(); ++i) {
        cm_f.add(segment(*eval_images[i], cfg, ps, nullptr), *eval_labels[i]);
        cm_q.add(segment(*eval_images[i], cfg, ps, &qexec), *eval_labels[i]);
    }
    rep.miou_float = cm_f.mean_iou();
    rep.miou_quant = cm_q.mean_iou();
    rep.delta_miou = rep.miou_float - rep.miou_quant;
    return rep;
}

}  // namespace semcomm
