#include "semcomm/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <filesystem>
#include <fstream>

#include "json.hpp"
#include "semcomm/datasets.hpp"
#include "semcomm/image_io.hpp"
#include "semcomm/metrics.hpp"
#include "semcomm/quantize.hpp"
#include "semcomm/weights_io.hpp"

namespace fs = std::filesystem;

namespace semcomm {

namespace {

const std::map<std::string, std::string>& default_config() {
    static const std::map<std::string, std::string> defaults = {
        {"image", ""},
        {"gt_labels", ""},
        {"weights", ""},
        {"gan_weights", ""},
        {"output_dir", "out"},
        {"palette", ""},
        {"num_classes", "3"},
        {"base_channels", "8"},
        {"stage_blocks", "1,1,1,1"},
        {"snr_db", "10"},
        {"fading", "0"},
        {"per_symbol_fading", "0"},
        {"seed", "1"},
        {"bitrate", "1000000"},
        {"quantized", "0"},
        {"timing", "fixed"},  // "measured" breaks byte-identical reruns
        {"t_seg", "0.25"},
        {"t_restore", "0.25"},
        {"dump_symbols", "0"},
        {"lr", "0.0005"},
        {"gan_lr", "0.0002"},
        {"epochs", "10"},
        {"batch", "4"},
        {"step_size", "100"},
        {"gamma", "0.5"},
        {"val_fraction", "0.2"},
        {"gen_base", "16"},
        {"gen_res", "2"},
        {"disc_layers", "5"},
        {"lambda", "10"},
    };
    return defaults;
}

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

std::vector<int> parse_int_list(const std::string& s) {
    std::vector<int> out;
    std::size_t pos = 0;
    while (pos < s.size()) {
        const auto comma = s.find(',', pos);
        const std::string tok = s.substr(pos, comma == std::string::npos ? s.npos : comma - pos);
        out.push_back(std::stoi(tok));
        if (comma == std::string::npos) break;
        pos = comma + 1;
    }
    return out;
}

}  // namespace

PipelineConfig::PipelineConfig() : values_(default_config()) {}

PipelineConfig PipelineConfig::from_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file: " + path);
    PipelineConfig cfg;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const std::string t = trim(line);
        if (t.empty() || t[0] == '#') continue;
        const auto eq = t.find('=');
        if (eq == std::string::npos) {
            throw ConfigError(path + ":" + std::to_string(lineno) + ": expected key=value");
        }
        cfg.set(trim(t.substr(0, eq)), trim(t.substr(eq + 1)));
    }
    return cfg;
}

void PipelineConfig::set(const std::string& key, const std::string& value) {
    if (!default_config().count(key)) throw ConfigError("unknown config key: " + key);
    values_[key] = value;
}

const std::string& PipelineConfig::get(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) throw ConfigError("unknown config key: " + key);
    return it->second;
}

bool PipelineConfig::has(const std::string& key) const {
    auto it = values_.find(key);
    return it != values_.end() && !it->second.empty();
}

int PipelineConfig::get_int(const std::string& key) const {
    try {
        return std::stoi(get(key));
    } catch (const std::exception&) {
        throw ConfigError("config key " + key + " is not an integer: " + get(key));
    }
}

double PipelineConfig::get_double(const std::string& key) const {
    try {
        return std::stod(get(key));
    } catch (const std::exception&) {
        throw ConfigError("config key " + key + " is not a number: " + get(key));
    }
}

bool PipelineConfig::get_bool(const std::string& key) const {
    const std::string& v = get(key);
    if (v == "1" || v == "true") return true;
    if (v == "0" || v == "false") return false;
    throw ConfigError("config key " + key + " is not a boolean: " + v);
}

std::uint64_t PipelineConfig::get_u64(const std::string& key) const {
    try {
        return std::stoull(get(key));
    } catch (const std::exception&) {
        throw ConfigError("config key " + key + " is not an unsigned integer: " + get(key));
    }
}

SegNetConfig PipelineConfig::segnet_config() const {
    SegNetConfig cfg;
    cfg.num_classes = get_int("num_classes");
    cfg.base_channels = get_int("base_channels");
    cfg.stage_blocks = parse_int_list(get("stage_blocks"));
    cfg.validate();
    return cfg;
}

CycleConfig PipelineConfig::cycle_config() const {
    CycleConfig cfg;
    cfg.gen.base_filters = get_int("gen_base");
    cfg.gen.res_blocks = get_int("gen_res");
    cfg.disc.layers = get_int("disc_layers");
    cfg.lambda_cycle = static_cast<float>(get_double("lambda"));
    cfg.lr = static_cast<float>(get_double("gan_lr"));
    cfg.schedule.step_size = get_int("step_size");
    cfg.schedule.gamma = static_cast<float>(get_double("gamma"));
    return cfg;
}

ChannelConfig PipelineConfig::channel_config() const {
    ChannelConfig cc;
    cc.snr_db = get_double("snr_db");
    cc.fading = get_bool("fading");
    cc.per_symbol_fading = get_bool("per_symbol_fading");
    cc.seed = get_u64("seed");
    cc.record_symbols = get_bool("dump_symbols");
    return cc;
}

// ---------------------------------------------------------------------------
// pipeline run
// ---------------------------------------------------------------------------

namespace {

// prefixes the active exception with its pipeline stage, keeping the type so
// the CLI can map it onto the right exit code
[[noreturn]] void rethrow_stage(const std::string& stage) {
    try {
        throw;
    } catch (const ConfigError&) {
        throw;
    } catch (const IoError& e) {
        throw IoError("[" + stage + "] " + e.what());
    } catch (const FormatError& e) {
        throw FormatError("[" + stage + "] " + e.what());
    } catch (const CorruptionError& e) {
        throw CorruptionError("[" + stage + "] " + e.what());
    } catch (const GeometryError& e) {
        throw GeometryError("[" + stage + "] " + e.what());
    } catch (const ShapeError& e) {
        throw ShapeError("[" + stage + "] " + e.what());
    } catch (const std::exception& e) {
        throw std::runtime_error("[" + stage + "] " + e.what());
    }
}

double elapsed_s(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace

RunSummary run_pipeline(const PipelineConfig& cfg) {
    using clock = std::chrono::steady_clock;
    RunSummary sum;
    sum.snr_db = cfg.get_double("snr_db");

    const fs::path out_dir = cfg.get("output_dir");
    fs::create_directories(out_dir);

    // --- load ---
    Tensor image;
    SegNetConfig net_cfg = cfg.segnet_config();
    ParamStore seg_params;
    try {
        if (!cfg.has("image")) throw ConfigError("pipeline needs image=");
        if (!cfg.has("weights")) throw ConfigError("pipeline needs weights=");
        image = read_ppm(cfg.get("image"));
        load_into_store(load_weights(cfg.get("weights")), seg_params);
    } catch (...) {
        rethrow_stage("load");
    }

    const Palette palette = cfg.has("palette") ? Palette::load(cfg.get("palette"))
                                               : Palette::make_default(net_cfg.num_classes);

    // --- segment ---
    LabelMap sent;
    double t_seg_measured = 0;
    try {
        const auto t0 = clock::now();
        if (cfg.get_bool("quantized")) {
            std::vector<const Tensor*> calib = {&image};
            QuantizedConvExecutor qexec = make_quantized_executor(seg_params, net_cfg, calib);
            sent = segment(image, net_cfg, seg_params, &qexec);
        } else {
            sent = segment(image, net_cfg, seg_params);
        }
        t_seg_measured = elapsed_s(t0);
    } catch (...) {
        rethrow_stage("segment");
    }
    write_pgm((out_dir / "sent_labels.pgm").string(), sent);

    // --- encode / channel / decode ---
    Payload payload;
    LabelMap received;
    bool decode_ok = true;
    std::string decode_error;
    double t_channel_measured = 0;
    std::int64_t bit_errors = 0;
    std::size_t nbits = 0;
    try {
        payload = encode_label_map(sent, net_cfg.num_classes);
        const std::vector<std::uint8_t> tx_bits = bytes_to_bits(payload.to_bytes());
        const auto t0 = clock::now();
        ChannelConfig ch = cfg.channel_config();
        const ChannelOutput rx = apply_channel(tx_bits, ch);
        t_channel_measured = elapsed_s(t0);
        nbits = tx_bits.size();
        for (std::size_t i = 0; i < tx_bits.size(); ++i) {
            bit_errors += tx_bits[i] != rx.bits[i];
        }
        if (ch.record_symbols) {
            write_symbol_log_csv((out_dir / "symbols.csv").string(), rx.log);
        }
        try {
            const Payload rx_payload = Payload::from_bytes(bits_to_bytes(rx.bits));
            received = decode_payload(rx_payload, net_cfg.num_classes);
            if (received.width != sent.width || received.height != sent.height) {
                throw CorruptionError("decoded extents differ from transmitted map");
            }
        } catch (const CorruptionError& e) {
            decode_ok = false;
            decode_error = e.what();
        }
    } catch (...) {
        rethrow_stage("channel");
    }
    sum.ber = nbits ? static_cast<double>(bit_errors) / static_cast<double>(nbits) : 0.0;
    sum.degraded = !decode_ok;

    // --- restore ---
    Tensor restored;
    double t_restore_measured = 0;
    const bool have_gan = cfg.has("gan_weights");
    if (decode_ok) {
        write_pgm((out_dir / "received_labels.pgm").string(), received);
        try {
            const Tensor semantic_rgb = colorize(received, palette);
            const auto t0 = clock::now();
            if (have_gan) {
                ParamStore gan_params;
                load_into_store(load_weights(cfg.get("gan_weights")), gan_params);
                restored = restore_image(semantic_rgb, cfg.cycle_config().gen, gan_params, "F/");
            } else {
                restored = semantic_rgb;  // palette rendering only
            }
            t_restore_measured = elapsed_s(t0);
        } catch (...) {
            rethrow_stage("restore");
        }
        write_ppm((out_dir / "restored.ppm").string(), restored);
    }

    // --- metrics + latency ---
    nlohmann::ordered_json j;
    try {
        const bool measured = cfg.get("timing") == "measured";
        const double t_seg = measured ? t_seg_measured : cfg.get_double("t_seg");
        const double t_restore = measured ? t_restore_measured : cfg.get_double("t_restore");

        const std::int64_t raw_bytes = static_cast<std::int64_t>(image.numel());
        const std::int64_t payload_bytes = static_cast<std::int64_t>(payload.total_bytes());
        sum.compression = compression_ratio(raw_bytes, payload_bytes);

        LatencyModel lm;
        lm.bitrate_bps = cfg.get_double("bitrate");
        lm.t_seg_s = t_seg;
        lm.t_restore_s = t_restore;
        lm.raw_bits = raw_bytes * 8;
        lm.payload_bits = payload_bytes * 8;
        const LatencyReport lat = latency_report(lm);
        sum.t_raw_s = lat.t_raw_s;
        sum.t_semantic_s = lat.t_semantic_s;
        sum.reduction = lat.reduction;

        j["config"] = cfg.entries();
        j["stages"]["timing"] = cfg.get("timing");
        j["stages"]["t_seg_s"] = t_seg;
        j["stages"]["t_restore_s"] = t_restore;
        if (measured) j["stages"]["t_channel_s"] = t_channel_measured;

        j["payload"]["raw_bytes"] = raw_bytes;
        j["payload"]["payload_bytes"] = payload_bytes;
        j["payload"]["codec"] = payload.codec == 0 ? "bitpack" : "rle";
        j["payload"]["compression_ratio"] = sum.compression;

        j["channel"]["snr_db"] = sum.snr_db;
        j["channel"]["fading"] = cfg.get_bool("fading");
        j["channel"]["bits"] = nbits;
        j["channel"]["bit_errors"] = bit_errors;
        j["channel"]["ber"] = sum.ber;
        j["channel"]["degraded"] = sum.degraded;
        if (!decode_ok) j["channel"]["decode_error"] = decode_error;

        if (decode_ok) {
            std::int64_t same = 0;
            for (std::size_t i = 0; i < sent.labels.size(); ++i) {
                same += sent.labels[i] == received.labels[i];
            }
            sum.label_agreement =
                static_cast<double>(same) / static_cast<double>(sent.labels.size());
            sum.miou_vs_sent = miou_mpa(received, sent, net_cfg.num_classes).miou;
            j["semantics"]["label_agreement"] = sum.label_agreement;
            j["semantics"]["miou_vs_sent"] = sum.miou_vs_sent;

            sum.psnr_db = psnr(restored, image);
            sum.ssim_v = ssim(restored, image);
            j["restoration"]["generator"] = have_gan;
            j["restoration"]["mse"] = mse(restored, image);
            j["restoration"]["psnr_db"] = sum.psnr_db;
            j["restoration"]["ssim"] = sum.ssim_v;
        }

        if (cfg.has("gt_labels") && decode_ok) {
            const LabelMap gt = read_pgm(cfg.get("gt_labels"));
            j["semantics"]["miou_vs_gt"] = miou_mpa(received, gt, net_cfg.num_classes).miou;
        }

        j["latency"]["t_raw_s"] = lat.t_raw_s;
        j["latency"]["t_semantic_s"] = lat.t_semantic_s;
        j["latency"]["reduction"] = lat.reduction;
    } catch (...) {
        rethrow_stage("report");
    }

    sum.report_json = j.dump(2) + "\n";
    std::ofstream rep(out_dir / "report.json", std::ios::binary);
    rep << sum.report_json;
    if (!rep) throw IoError("cannot write report.json");
    return sum;
}

void write_sweep_csv(const std::string& path, const std::vector<RunSummary>& runs) {
    std::ofstream os(path);
    if (!os) throw IoError("cannot write sweep csv: " + path);
    os << "snr_db,ber,miou,psnr,ssim,ratio,t_raw,t_semantic,reduction\n";
    for (const RunSummary& r : runs) {
        os << r.snr_db << ',' << r.ber << ',' << r.miou_vs_sent << ',' << r.psnr_db << ','
           << r.ssim_v << ',' << r.compression << ',' << r.t_raw_s << ',' << r.t_semantic_s
           << ',' << r.reduction << '\n';
    }
}

// ---------------------------------------------------------------------------
// training entry points
// ---------------------------------------------------------------------------

namespace {

struct SegDataset {
    std::vector<Tensor> images;
    std::vector<LabelMap> labels;
};

SegDataset load_seg_dataset(const std::string& dir) {
    SegDataset ds;
    std::vector<fs::path> stems;
    for (const auto& entry : fs::directory_iterator(dir)) {
        if (entry.path().extension() == ".ppm") stems.push_back(entry.path());
    }
    std::sort(stems.begin(), stems.end());
    for (const auto& p : stems) {
        fs::path lbl = p;
        lbl.replace_extension(".pgm");
        if (!fs::exists(lbl)) {
            throw FormatError("missing label map for " + p.string());
        }
        ds.images.push_back(read_ppm(p.string()));
        ds.labels.push_back(read_pgm(lbl.string()));
    }
    if (ds.images.empty()) throw FormatError("dataset directory has no .ppm files: " + dir);
    return ds;
}

std::vector<Tensor> load_image_dir(const std::string& dir) {
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(dir)) {
        if (entry.path().extension() == ".ppm") files.push_back(entry.path());
    }
    std::sort(files.begin(), files.end());
    std::vector<Tensor> out;
    for (const auto& p : files) out.push_back(read_ppm(p.string()));
    if (out.empty()) throw FormatError("image directory has no .ppm files: " + dir);
    return out;
}

}  // namespace

TrainResult train_segmentation(const PipelineConfig& cfg, const std::string& dataset_dir) {
    const SegNetConfig net_cfg = cfg.segnet_config();
    const SegDataset ds = load_seg_dataset(dataset_dir);
    const fs::path out_dir = cfg.get("output_dir");
    fs::create_directories(out_dir);

    const double val_fraction = cfg.get_double("val_fraction");
    std::size_t n_val = static_cast<std::size_t>(val_fraction * static_cast<double>(ds.images.size()));
    if (ds.images.size() > 1 && n_val == 0) n_val = 1;
    const std::size_t n_train = ds.images.size() - n_val;
    if (n_train == 0) throw ConfigError("train_segmentation: empty training split");

    ParamStore params;
    Rng init_rng(cfg.get_u64("seed"));
    init_segnet_params(params, net_cfg, init_rng);

    AdamOptimizer::Config oc;
    oc.lr = static_cast<float>(cfg.get_double("lr"));
    oc.schedule.step_size = cfg.get_int("step_size");
    oc.schedule.gamma = static_cast<float>(cfg.get_double("gamma"));
    AdamOptimizer opt(oc);

    const int epochs = cfg.get_int("epochs");
    const int batch = std::max(1, cfg.get_int("batch"));
    Rng order_rng(cfg.get_u64("seed") + 1);

    const std::string trace_path = (out_dir / "seg_trace.csv").string();
    const std::string weights_path = (out_dir / "seg_weights.scwt").string();
    std::ofstream trace(trace_path);
    trace << "epoch,train_loss,val_loss\n";

    float best_val = std::numeric_limits<float>::max();
    for (int epoch = 0; epoch < epochs; ++epoch) {
        opt.set_epoch(epoch);
        // deterministic shuffle of the training split
        std::vector<std::size_t> idx(n_train);
        for (std::size_t i = 0; i < n_train; ++i) idx[i] = i;
        for (std::size_t i = n_train; i > 1; --i) {
            std::swap(idx[i - 1], idx[order_rng.below(i)]);
        }

        double train_loss = 0;
        int steps = 0;
        for (std::size_t at = 0; at < n_train; at += static_cast<std::size_t>(batch)) {
            std::vector<const Tensor*> imgs;
            std::vector<const LabelMap*> lbls;
            for (std::size_t k = at; k < std::min(at + static_cast<std::size_t>(batch), n_train);
                 ++k) {
                imgs.push_back(&ds.images[idx[k]]);
                lbls.push_back(&ds.labels[idx[k]]);
            }
            train_loss += train_seg_step(params, net_cfg, opt, imgs, lbls);
            ++steps;
        }
        train_loss /= std::max(steps, 1);

        double val_loss = 0;
        if (n_val > 0) {
            for (std::size_t k = n_train; k < ds.images.size(); ++k) {
                Graph g(/*training=*/true);  // batch statistics, but no update
                SegNetRun r{g, params, net_cfg, nullptr};
                const Var logits = segnet_logits(r, g.input(ds.images[k]));
                val_loss += g.scalar(seg_total_loss(g, logits, ds.labels[k]));
            }
            val_loss /= static_cast<double>(n_val);
        } else {
            val_loss = train_loss;
        }
        trace << epoch << ',' << train_loss << ',' << val_loss << '\n';

        if (val_loss < best_val) {
            best_val = static_cast<float>(val_loss);
            save_weights(weights_path, to_weight_file(params));
        }
    }

    TrainResult res;
    res.weights_path = weights_path;
    res.trace_path = trace_path;
    res.epochs = epochs;
    res.best_val_loss = best_val;
    return res;
}

TrainResult train_restoration(const PipelineConfig& cfg, const std::string& dir_x,
                              const std::string& dir_y) {
    const fs::path out_dir = cfg.get("output_dir");
    fs::create_directories(out_dir);

    std::vector<Tensor> xs_raw = load_image_dir(dir_x);
    std::vector<Tensor> ys_raw = load_image_dir(dir_y);
    std::vector<Tensor> xs, ys;
    for (auto& t : xs_raw) xs.push_back(to_unit_range(t));
    for (auto& t : ys_raw) ys.push_back(to_unit_range(t));

    CycleConfig cc = cfg.cycle_config();
    CycleState state(cc, cfg.get_u64("seed"));
    Rng pick(cfg.get_u64("seed") + 2);

    const int epochs = cfg.get_int("epochs");
    const int batch = std::max(1, cfg.get_int("batch"));
    const std::string trace_path = (out_dir / "gan_trace.csv").string();
    const std::string weights_path = (out_dir / "gan_weights.scwt").string();
    std::ofstream trace(trace_path);
    trace << "epoch,d_x,d_y,adv,cycle,identity\n";

    float best = std::numeric_limits<float>::max();
    for (int epoch = 0; epoch < epochs; ++epoch) {
        state.set_epoch(epoch);
        CycleState::StepLosses acc;
        const int steps = static_cast<int>(
            (std::min(xs.size(), ys.size()) + static_cast<std::size_t>(batch) - 1) /
            static_cast<std::size_t>(batch));
        for (int s = 0; s < steps; ++s) {
            std::vector<const Tensor*> bx, by;
            for (int b = 0; b < batch; ++b) {
                bx.push_back(&xs[pick.below(xs.size())]);
                by.push_back(&ys[pick.below(ys.size())]);
            }
            const auto l = state.train_step(bx, by);
            acc.d_x += l.d_x;
            acc.d_y += l.d_y;
            acc.adv_g += l.adv_g + l.adv_f;
            acc.cycle += l.cycle;
            acc.identity += l.identity;
        }
        const float inv = 1.0f / static_cast<float>(std::max(1, steps));
        trace << epoch << ',' << acc.d_x * inv << ',' << acc.d_y * inv << ',' << acc.adv_g * inv
              << ',' << acc.cycle * inv << ',' << acc.identity * inv << '\n';
        if (acc.cycle * inv < best) {
            best = acc.cycle * inv;
            save_weights(weights_path, to_weight_file(state.params()));
        }
    }

    TrainResult res;
    res.weights_path = weights_path;
    res.trace_path = trace_path;
    res.epochs = epochs;
    res.best_val_loss = best;
    return res;
}

}  // namespace semcomm
