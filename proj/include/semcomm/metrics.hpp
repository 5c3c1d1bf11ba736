#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "semcomm/label_map.hpp"
#include "semcomm/tensor.hpp"

namespace semcomm {

double mse(const Tensor& a, const Tensor& b);

// 10*log10(max_val^2 / mse), capped at 100 dB for identical images.
double psnr(const Tensor& a, const Tensor& b, double max_val = 255.0);

// Mean local SSIM on luma (ITU-R 601), 11x11 gaussian window sigma 1.5,
// C1=(0.01*255)^2, C2=(0.03*255)^2. Inputs are 3xHxW or 1xHxW in [0,255]
// with extents >= 11.
double ssim(const Tensor& a, const Tensor& b);

// counts[gt][pred]
class ConfusionMatrix {
  public:
    explicit ConfusionMatrix(int num_classes);

    void add_pixel(int gt, int pred);
    void add(const LabelMap& pred, const LabelMap& gt);
    std::int64_t at(int gt, int pred) const;
    std::int64_t total() const;
    int classes() const { return k_; }

    // IoU_k = TP/(TP+FP+FN), averaged over classes present in gt or pred.
    double mean_iou() const;
    // PA_k = TP/(TP+FN), averaged over classes present in gt.
    double mean_pixel_accuracy() const;
    // -1 marks classes absent from both prediction and ground truth.
    std::vector<double> per_class_iou() const;

  private:
    int k_;
    std::vector<std::int64_t> counts_;
};

struct SegScores {
    double miou = 0;
    double mpa = 0;
    std::vector<double> per_class_iou;
};
SegScores miou_mpa(const LabelMap& pred, const LabelMap& gt, int num_classes);

double compression_ratio(std::int64_t raw_bytes, std::int64_t payload_bytes);

struct LatencyModel {
    double bitrate_bps = 1e6;
    double t_seg_s = 0;
    double t_restore_s = 0;
    std::int64_t raw_bits = 0;
    std::int64_t payload_bits = 0;
};

struct LatencyReport {
    double t_raw_s = 0;       // raw_bits / bitrate
    double t_semantic_s = 0;  // t_seg + payload_bits / bitrate + t_restore
    double reduction = 0;     // 1 - t_semantic / t_raw (may be negative)

    std::string to_json() const;
};

LatencyReport latency_report(const LatencyModel& model);

}  // namespace semcomm
