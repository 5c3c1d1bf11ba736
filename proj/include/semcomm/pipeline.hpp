#pragma once

#include <map>
#include <string>
#include <vector>

#include "semcomm/channel.hpp"
#include "semcomm/gan.hpp"
#include "semcomm/segnet.hpp"

namespace semcomm {

struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

// Line-based key=value configuration; '#' starts a comment. Unknown keys are
// rejected. CLI flags override file values through set().
class PipelineConfig {
  public:
    PipelineConfig();
    static PipelineConfig from_file(const std::string& path);

    void set(const std::string& key, const std::string& value);
    const std::string& get(const std::string& key) const;
    bool has(const std::string& key) const;

    int get_int(const std::string& key) const;
    double get_double(const std::string& key) const;
    bool get_bool(const std::string& key) const;
    std::uint64_t get_u64(const std::string& key) const;

    SegNetConfig segnet_config() const;
    CycleConfig cycle_config() const;
    ChannelConfig channel_config() const;

    const std::map<std::string, std::string>& entries() const { return values_; }

  private:
    std::map<std::string, std::string> values_;
};

// stage-attributed pipeline error
struct StageError {
    std::string stage;
    std::string message;
};

struct RunSummary {
    double snr_db = 0;
    double ber = 0;
    double label_agreement = 0;
    double miou_vs_sent = 0;
    double psnr_db = 0;
    double ssim_v = 0;
    double compression = 0;
    double t_raw_s = 0;
    double t_semantic_s = 0;
    double reduction = 0;
    bool degraded = false;  // payload failed to decode after the channel
    std::string report_json;
};

// image -> segment -> encode -> channel -> decode -> restore -> metrics.
// Artifacts written to output_dir: sent_labels.pgm, received_labels.pgm,
// restored.ppm, report.json (plus symbols.csv when dump_symbols=1).
RunSummary run_pipeline(const PipelineConfig& cfg);

void write_sweep_csv(const std::string& path, const std::vector<RunSummary>& runs);

struct TrainResult {
    std::string weights_path;
    std::string trace_path;
    int epochs = 0;
    float best_val_loss = 0;
};

// dataset_dir holds paired <stem>.ppm / <stem>.pgm files
TrainResult train_segmentation(const PipelineConfig& cfg, const std::string& dataset_dir);
// two directories of unpaired PPM images
TrainResult train_restoration(const PipelineConfig& cfg, const std::string& dir_x,
                              const std::string& dir_y);

}  // namespace semcomm
