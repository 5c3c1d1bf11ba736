#include "semcomm/metrics.hpp"

#include <cmath>

#include "json.hpp"
#include "semcomm/errors.hpp"

namespace semcomm {

double mse(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "mse");
    double s = 0;
    for (std::size_t i = 0; i < a.data.size(); ++i) {
        const double d = static_cast<double>(a.data[i]) - b.data[i];
        s += d * d;
    }
    return s / static_cast<double>(a.data.size());
}

double psnr(const Tensor& a, const Tensor& b, double max_val) {
    const double e = mse(a, b);
    if (e <= 0) return 100.0;
    return std::min(100.0, 10.0 * std::log10(max_val * max_val / e));
}

namespace {

std::vector<double> luma_plane(const Tensor& t) {
    if (t.rank() != 3 || (t.dim(0) != 1 && t.dim(0) != 3)) {
        throw ShapeError("ssim: wants 1xHxW or 3xHxW");
    }
    const int h = t.dim(1), w = t.dim(2);
    std::vector<double> y(static_cast<std::size_t>(h) * w);
    if (t.dim(0) == 1) {
        for (std::size_t i = 0; i < y.size(); ++i) y[i] = t.data[i];
    } else {
        const std::size_t hw = y.size();
        for (std::size_t i = 0; i < hw; ++i) {
            y[i] = 0.299 * t.data[i] + 0.587 * t.data[hw + i] + 0.114 * t.data[2 * hw + i];
        }
    }
    return y;
}

struct GaussWindow {
    static constexpr int kSize = 11;
    double w[kSize * kSize];
    GaussWindow() {
        const double sigma = 1.5;
        double sum = 0;
        for (int i = 0; i < kSize; ++i) {
            for (int j = 0; j < kSize; ++j) {
                const double dy = i - kSize / 2, dx = j - kSize / 2;
                w[i * kSize + j] = std::exp(-(dx * dx + dy * dy) / (2 * sigma * sigma));
                sum += w[i * kSize + j];
            }
        }
        for (double& v : w) v /= sum;
    }
};

}  // namespace

double ssim(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "ssim");
    const int h = a.dim(1), w = a.dim(2);
    if (h < 11 || w < 11) throw GeometryError("ssim: extents must be >= 11");
    static const GaussWindow win;
    const std::vector<double> x = luma_plane(a);
    const std::vector<double> y = luma_plane(b);

    const double c1 = (0.01 * 255) * (0.01 * 255);
    const double c2 = (0.03 * 255) * (0.03 * 255);
    double total = 0;
    std::int64_t n = 0;
    for (int i = 0; i + 11 <= h; ++i) {
        for (int j = 0; j + 11 <= w; ++j) {
            double mx = 0, my = 0;
            for (int u = 0; u < 11; ++u) {
                for (int v = 0; v < 11; ++v) {
                    const double g = win.w[u * 11 + v];
                    mx += g * x[static_cast<std::size_t>(i + u) * w + (j + v)];
                    my += g * y[static_cast<std::size_t>(i + u) * w + (j + v)];
                }
            }
            double vx = 0, vy = 0, cov = 0;
            for (int u = 0; u < 11; ++u) {
                for (int v = 0; v < 11; ++v) {
                    const double g = win.w[u * 11 + v];
                    const double dx = x[static_cast<std::size_t>(i + u) * w + (j + v)] - mx;
                    const double dy = y[static_cast<std::size_t>(i + u) * w + (j + v)] - my;
                    vx += g * dx * dx;
                    vy += g * dy * dy;
                    cov += g * dx * dy;
                }
            }
            total += ((2 * mx * my + c1) * (2 * cov + c2)) /
                     ((mx * mx + my * my + c1) * (vx + vy + c2));
            ++n;
        }
    }
    return total / static_cast<double>(n);
}

ConfusionMatrix::ConfusionMatrix(int num_classes) : k_(num_classes) {
    if (num_classes < 1) throw ContractError("ConfusionMatrix: need >= 1 class");
    counts_.assign(static_cast<std::size_t>(k_) * k_, 0);
}

void ConfusionMatrix::add_pixel(int gt, int pred) {
    if (gt < 0 || gt >= k_ || pred < 0 || pred >= k_) {
        throw ContractError("ConfusionMatrix: label out of range");
    }
    ++counts_[static_cast<std::size_t>(gt) * k_ + pred];
}

void ConfusionMatrix::add(const LabelMap& pred, const LabelMap& gt) {
    if (pred.width != gt.width || pred.height != gt.height) {
        throw ShapeError("ConfusionMatrix: map dims differ");
    }
    for (std::size_t i = 0; i < gt.labels.size(); ++i) {
        add_pixel(gt.labels[i], pred.labels[i]);
    }
}

std::int64_t ConfusionMatrix::at(int gt, int pred) const {
    return counts_[static_cast<std::size_t>(gt) * k_ + pred];
}

std::int64_t ConfusionMatrix::total() const {
    std::int64_t t = 0;
    for (auto c : counts_) t += c;
    return t;
}

std::vector<double> ConfusionMatrix::per_class_iou() const {
    std::vector<double> iou(static_cast<std::size_t>(k_), -1.0);
    for (int k = 0; k < k_; ++k) {
        const std::int64_t tp = at(k, k);
        std::int64_t fp = 0, fn = 0;
        for (int o = 0; o < k_; ++o) {
            if (o == k) continue;
            fp += at(o, k);
            fn += at(k, o);
        }
        const std::int64_t denom = tp + fp + fn;
        if (denom > 0) iou[static_cast<std::size_t>(k)] = static_cast<double>(tp) / denom;
    }
    return iou;
}

double ConfusionMatrix::mean_iou() const {
    const auto iou = per_class_iou();
    double s = 0;
    int n = 0;
    for (double v : iou) {
        if (v >= 0) {
            s += v;
            ++n;
        }
    }
    return n > 0 ? s / n : 0.0;
}

double ConfusionMatrix::mean_pixel_accuracy() const {
    double s = 0;
    int n = 0;
    for (int k = 0; k < k_; ++k) {
        std::int64_t gt_total = 0;
        for (int o = 0; o < k_; ++o) gt_total += at(k, o);
        if (gt_total > 0) {
            s += static_cast<double>(at(k, k)) / gt_total;
            ++n;
        }
    }
    return n > 0 ? s / n : 0.0;
}

SegScores miou_mpa(const LabelMap& pred, const LabelMap& gt, int num_classes) {
    ConfusionMatrix cm(num_classes);
    cm.add(pred, gt);
    SegScores s;
    s.miou = cm.mean_iou();
    s.mpa = cm.mean_pixel_accuracy();
    s.per_class_iou = cm.per_class_iou();
    return s;
}

double compression_ratio(std::int64_t raw_bytes, std::int64_t payload_bytes) {
    if (raw_bytes <= 0 || payload_bytes <= 0) {
        throw ContractError("compression_ratio: sizes must be > 0");
    }
    return static_cast<double>(raw_bytes) / static_cast<double>(payload_bytes);
}

std::string LatencyReport::to_json() const {
    nlohmann::ordered_json j;
    j["t_raw_s"] = t_raw_s;
    j["t_semantic_s"] = t_semantic_s;
    j["reduction"] = reduction;
    return j.dump(2);
}

LatencyReport latency_report(const LatencyModel& m) {
    if (m.bitrate_bps <= 0) throw ContractError("latency_report: bitrate must be > 0");
    if (m.raw_bits <= 0 || m.payload_bits <= 0 || m.t_seg_s < 0 || m.t_restore_s < 0) {
        throw ContractError("latency_report: sizes must be positive, times non-negative");
    }
    LatencyReport r;
    r.t_raw_s = static_cast<double>(m.raw_bits) / m.bitrate_bps;
    r.t_semantic_s = m.t_seg_s + static_cast<double>(m.payload_bits) / m.bitrate_bps +
                     m.t_restore_s;
    r.reduction = 1.0 - r.t_semantic_s / r.t_raw_s;
    return r;
}

}  // namespace semcomm
