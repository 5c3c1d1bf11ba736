#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "semcomm/autograd.hpp"
#include "semcomm/segnet.hpp"
#include "semcomm/tensor.hpp"
#include "semcomm/weights_io.hpp"

namespace semcomm {

struct QuantParams {
    float scale = 1.0f;
    std::int32_t zero_point = 0;  // in [-128, 127]
};

struct QuantizedTensor {
    std::vector<int> shape;
    std::vector<std::int8_t> data;
    QuantParams params;

    std::int64_t numel() const { return static_cast<std::int64_t>(data.size()); }
    int dim(int i) const { return shape[static_cast<std::size_t>(i)]; }
};

// Min/max calibration. Symmetric: scale = max|v|/127, zero point 0.
// Asymmetric: scale = (max-min)/255, zero point = round(-min/scale) - 128.
// Degenerate (constant) tensors fall back to a usable scale.
QuantParams calibrate(const Tensor& t, bool symmetric);

// q = clamp(round(v/scale) + zp, -128, 127), rounding half away from zero.
QuantizedTensor quantize(const Tensor& t, const QuantParams& params);
Tensor dequantize(const QuantizedTensor& q);

inline std::int8_t quantize_value(float v, const QuantParams& params) {
    const double scaled = static_cast<double>(v) / params.scale;
    // half-away-from-zero via shift-and-truncate, avoiding lround per element
    const std::int32_t q =
        static_cast<std::int32_t>(scaled >= 0 ? scaled + 0.5 : scaled - 0.5) +
        params.zero_point;
    return static_cast<std::int8_t>(q < -128 ? -128 : (q > 127 ? 127 : q));
}

inline float dequantize_value(std::int8_t q, const QuantParams& params) {
    return static_cast<float>(q - params.zero_point) * params.scale;
}

// INT8 convolution with i32 accumulation of (q - zp) products, float bias,
// requantization to out_params. Geometry matches conv2d. The accumulator
// cannot overflow while 127^2 * kh * kw * C < 2^31 (checked).
QuantizedTensor qconv2d(const QuantizedTensor& input, const QuantizedTensor& kernel,
                        const std::vector<float>* bias, const QuantParams& out_params,
                        const ConvSpec& spec);

struct SizeReport {
    std::int64_t float_param_bytes = 0;
    std::int64_t int8_param_bytes = 0;
    double parameter_ratio = 1.0;  // exactly 4 for non-empty models
    std::int64_t float_file_bytes = 0;  // 0 when not measured from disk
    std::int64_t int8_file_bytes = 0;
    double file_ratio = 0.0;
    bool empty_model = false;

    std::string to_json() const;
};

// Per-tensor symmetric weight quantization of every f32 record.
WeightFile quantize_model(const WeightFile& model, SizeReport* report = nullptr);
// Back to f32 (for accuracy comparisons of weight-only quantization).
WeightFile dequantize_model(const WeightFile& model);

// --- quantized segmentation inference -------------------------------------

// Observes per-convolution activation ranges during float forwards.
class CalibrationObserver : public ConvHook {
  public:
    Tensor conv(const std::string& name, const Tensor& input, const Tensor& kernel,
                const Tensor* bias, const ConvSpec& spec) override;

    struct Range {
        float lo = 0;
        float hi = 0;
        bool seen = false;
    };
    const std::map<std::string, Range>& input_ranges() const { return in_; }
    const std::map<std::string, Range>& output_ranges() const { return out_; }

  private:
    void merge(std::map<std::string, Range>& dst, const std::string& name, const Tensor& t);
    std::map<std::string, Range> in_;
    std::map<std::string, Range> out_;
};

// Executes every convolution in INT8: weights per-tensor symmetric,
// activations per-tensor asymmetric from calibration ranges. Non-conv ops
// stay in float.
class QuantizedConvExecutor : public ConvHook {
  public:
    QuantizedConvExecutor(const ParamStore& ps, const CalibrationObserver& ranges);
    Tensor conv(const std::string& name, const Tensor& input, const Tensor& kernel,
                const Tensor* bias, const ConvSpec& spec) override;

  private:
    struct LayerQuant {
        QuantizedTensor kernel;
        QuantParams in_params;
        QuantParams out_params;
    };
    std::map<std::string, LayerQuant> layers_;
};

// Builds the executor by calibrating on the given images.
QuantizedConvExecutor make_quantized_executor(ParamStore& ps, const SegNetConfig& cfg,
                                              const std::vector<const Tensor*>& calibration);

struct SpeedupReport {
    double t_float_s = 0;
    double t_quant_s = 0;
    double qar = 0;  // (t_float - t_quant) / t_float
    double miou_float = 0;
    double miou_quant = 0;
    double delta_miou = 0;

    std::string to_json() const;
};

// Median wall times over `runs` forwards of each variant plus mIoU on the
// evaluation pairs. Needs runs >= 2 and a monotonic clock with visible
// resolution at the model's scale.
SpeedupReport quantization_speedup_report(ParamStore& ps, const SegNetConfig& cfg,
                                          QuantizedConvExecutor& qexec,
                                          const std::vector<const Tensor*>& eval_images,
                                          const std::vector<const LabelMap*>& eval_labels,
                                          int runs = 21);

}  // namespace semcomm
