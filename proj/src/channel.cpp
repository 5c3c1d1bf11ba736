#include "semcomm/channel.hpp"

#include <cmath>
#include <fstream>

#include "semcomm/errors.hpp"

namespace semcomm {

namespace {

class BitWriter {
  public:
    void put(std::uint32_t value, int nbits) {
        for (int b = nbits - 1; b >= 0; --b) push_bit((value >> b) & 1u);
    }
    std::vector<std::uint8_t> finish() {
        if (fill_ > 0) {
            bytes_.push_back(static_cast<std::uint8_t>(cur_ << (8 - fill_)));
            fill_ = 0;
            cur_ = 0;
        }
        return std::move(bytes_);
    }
    std::size_t bit_count() const { return bytes_.size() * 8 + fill_; }

  private:
    void push_bit(std::uint32_t bit) {
        cur_ = static_cast<std::uint8_t>((cur_ << 1) | bit);
        if (++fill_ == 8) {
            bytes_.push_back(cur_);
            cur_ = 0;
            fill_ = 0;
        }
    }
    std::vector<std::uint8_t> bytes_;
    std::uint8_t cur_ = 0;
    int fill_ = 0;
};

class BitReader {
  public:
    explicit BitReader(const std::vector<std::uint8_t>& bytes) : bytes_(bytes) {}
    // throws CorruptionError when the stream runs out
    std::uint32_t take(int nbits) {
        std::uint32_t v = 0;
        for (int b = 0; b < nbits; ++b) {
            const std::size_t byte = pos_ >> 3;
            if (byte >= bytes_.size()) throw CorruptionError("payload body truncated");
            const int off = 7 - static_cast<int>(pos_ & 7);
            v = (v << 1) | ((bytes_[byte] >> off) & 1u);
            ++pos_;
        }
        return v;
    }

  private:
    const std::vector<std::uint8_t>& bytes_;
    std::size_t pos_ = 0;
};

constexpr char kMagic[4] = {'S', 'C', 'P', 'L'};

std::vector<std::uint8_t> pack_bitmap(const LabelMap& map, int bits) {
    BitWriter w;
    for (std::uint8_t v : map.labels) w.put(v, bits);
    return w.finish();
}

std::vector<std::uint8_t> pack_rle(const LabelMap& map, int bits) {
    BitWriter w;
    std::size_t i = 0;
    const std::size_t n = map.labels.size();
    while (i < n) {
        const std::uint8_t v = map.labels[i];
        std::size_t run = 1;
        while (i + run < n && map.labels[i + run] == v && run < 255) ++run;
        w.put(static_cast<std::uint32_t>(run), 8);
        w.put(v, bits);
        i += run;
    }
    return w.finish();
}

}  // namespace

int label_bits(int num_classes) {
    if (num_classes < 1 || num_classes > 255) {
        throw ContractError("label_bits: num_classes must be in [1,255]");
    }
    int bits = 0;
    while ((1 << bits) < num_classes) ++bits;
    return bits < 1 ? 1 : bits;
}

std::vector<std::uint8_t> Payload::to_bytes() const {
    std::vector<std::uint8_t> out;
    out.reserve(kHeaderBytes + body.size());
    out.insert(out.end(), kMagic, kMagic + 4);
    out.push_back(version);
    out.push_back(static_cast<std::uint8_t>(width & 0xFF));
    out.push_back(static_cast<std::uint8_t>((width >> 8) & 0xFF));
    out.push_back(static_cast<std::uint8_t>(height & 0xFF));
    out.push_back(static_cast<std::uint8_t>((height >> 8) & 0xFF));
    out.push_back(static_cast<std::uint8_t>(num_classes));
    out.push_back(codec);
    out.insert(out.end(), body.begin(), body.end());
    return out;
}

Payload Payload::from_bytes(const std::vector<std::uint8_t>& bytes) {
    if (bytes.size() < kHeaderBytes) throw CorruptionError("payload shorter than header");
    for (int i = 0; i < 4; ++i) {
        if (bytes[static_cast<std::size_t>(i)] != static_cast<std::uint8_t>(kMagic[i])) {
            throw CorruptionError("payload magic mismatch");
        }
    }
    Payload p;
    p.version = bytes[4];
    if (p.version != 1) throw CorruptionError("unsupported payload version");
    p.width = bytes[5] | (bytes[6] << 8);
    p.height = bytes[7] | (bytes[8] << 8);
    p.num_classes = bytes[9];
    p.codec = bytes[10];
    if (p.width < 1 || p.height < 1) throw CorruptionError("payload extents invalid");
    if (p.num_classes < 1) throw CorruptionError("payload class count invalid");
    if (p.codec > 1) throw CorruptionError("payload codec unknown");
    p.body.assign(bytes.begin() + kHeaderBytes, bytes.end());
    return p;
}

Payload encode_label_map(const LabelMap& map, int num_classes) {
    if (num_classes < 2 || num_classes > 255) {
        throw ContractError("encode_label_map: num_classes must be in [2,255]");
    }
    if (map.width > 0xFFFF || map.height > 0xFFFF) {
        throw FormatError("encode_label_map: extents exceed 65535");
    }
    map.validate(num_classes);

    const int bits = label_bits(num_classes);
    Payload p;
    p.width = map.width;
    p.height = map.height;
    p.num_classes = num_classes;
    p.body = pack_bitmap(map, bits);
    p.codec = 0;

    std::vector<std::uint8_t> rle = pack_rle(map, bits);
    if (rle.size() < p.body.size()) {
        p.body = std::move(rle);
        p.codec = 1;
    }
    return p;
}

LabelMap decode_payload(const Payload& payload, int num_classes) {
    if (payload.num_classes != num_classes) {
        throw CorruptionError("payload class count does not match expectation");
    }
    const int bits = label_bits(num_classes);
    const std::int64_t pixels =
        static_cast<std::int64_t>(payload.width) * payload.height;
    if (pixels > (1LL << 26)) throw CorruptionError("implausible payload extents");
    if (payload.codec == 0) {
        const std::int64_t needed = (pixels * bits + 7) / 8;
        if (static_cast<std::int64_t>(payload.body.size()) < needed) {
            throw CorruptionError("payload body truncated");
        }
    }
    LabelMap map(payload.width, payload.height);
    const std::size_t n = map.labels.size();
    BitReader r(payload.body);
    if (payload.codec == 0) {
        for (std::size_t i = 0; i < n; ++i) {
            const std::uint32_t v = r.take(bits);
            if (v >= static_cast<std::uint32_t>(num_classes)) {
                throw CorruptionError("decoded label out of range");
            }
            map.labels[i] = static_cast<std::uint8_t>(v);
        }
    } else {
        std::size_t i = 0;
        while (i < n) {
            const std::uint32_t run = r.take(8);
            if (run == 0) throw CorruptionError("zero-length run");
            const std::uint32_t v = r.take(bits);
            if (v >= static_cast<std::uint32_t>(num_classes)) {
                throw CorruptionError("decoded label out of range");
            }
            if (i + run > n) throw CorruptionError("run overflows the map");
            std::fill(map.labels.begin() + static_cast<std::ptrdiff_t>(i),
                      map.labels.begin() + static_cast<std::ptrdiff_t>(i + run),
                      static_cast<std::uint8_t>(v));
            i += run;
        }
    }
    return map;  // trailing pad bits ignored
}

std::vector<std::uint8_t> bytes_to_bits(const std::vector<std::uint8_t>& bytes) {
    std::vector<std::uint8_t> bits;
    bits.reserve(bytes.size() * 8);
    for (std::uint8_t byte : bytes) {
        for (int b = 7; b >= 0; --b) bits.push_back((byte >> b) & 1u);
    }
    return bits;
}

std::vector<std::uint8_t> bits_to_bytes(const std::vector<std::uint8_t>& bits) {
    if (bits.size() % 8) throw ContractError("bits_to_bytes: length must be a byte multiple");
    std::vector<std::uint8_t> bytes(bits.size() / 8, 0);
    for (std::size_t i = 0; i < bits.size(); ++i) {
        bytes[i >> 3] = static_cast<std::uint8_t>((bytes[i >> 3] << 1) | (bits[i] & 1u));
    }
    return bytes;
}

double q_function(double x) { return 0.5 * std::erfc(x / std::sqrt(2.0)); }

double bpsk_awgn_ber(double snr_db) {
    const double snr = std::pow(10.0, snr_db / 10.0);
    return q_function(std::sqrt(2.0 * snr));
}

ChannelOutput apply_channel(const std::vector<std::uint8_t>& bits, const ChannelConfig& cfg) {
    if (bits.empty()) throw ContractError("apply_channel: empty bit stream");
    Rng rng(cfg.seed);
    const double sigma2 = std::pow(10.0, -cfg.snr_db / 10.0);  // unit symbol energy
    const double comp_std = std::sqrt(sigma2 / 2.0);

    ChannelOutput out;
    out.bits.resize(bits.size());
    if (cfg.record_symbols) out.log.reserve(bits.size());

    double h_re = 1.0, h_im = 0.0;
    auto draw_gain = [&] {
        h_re = rng.gaussian() / std::sqrt(2.0);
        h_im = rng.gaussian() / std::sqrt(2.0);
    };
    if (cfg.fading) draw_gain();  // block fading: one gain per call

    for (std::size_t i = 0; i < bits.size(); ++i) {
        if (cfg.fading && cfg.per_symbol_fading && i > 0) draw_gain();
        const int sent = bits[i] ? -1 : +1;
        const double n_re = comp_std * rng.gaussian();
        const double n_im = comp_std * rng.gaussian();
        const double y_re = h_re * sent + n_re;
        const double y_im = h_im * sent + n_im;
        // perfect-CSI equalization: y/h, decide on the real part
        const double h2 = h_re * h_re + h_im * h_im;
        const double eq_re = h2 > 0 ? (y_re * h_re + y_im * h_im) / h2 : 0.0;
        const std::uint8_t decided = eq_re >= 0 ? 0 : 1;
        out.bits[i] = decided;
        if (cfg.record_symbols) {
            out.log.push_back({static_cast<std::int64_t>(i), sent, h_re, h_im, n_re, n_im,
                               decided ? -1 : +1});
        }
    }
    return out;
}

double measure_empirical_snr(const std::vector<SymbolRecord>& log, double cap_db) {
    if (log.size() < 10000) {
        throw StatsError("measure_empirical_snr: need at least 10^4 symbols");
    }
    double mse = 0;
    for (const SymbolRecord& r : log) {
        // equalized symbol = sent + n/h
        const double h2 = r.h_re * r.h_re + r.h_im * r.h_im;
        const double e_re = (r.n_re * r.h_re + r.n_im * r.h_im) / h2;
        const double e_im = (r.n_im * r.h_re - r.n_re * r.h_im) / h2;
        mse += e_re * e_re + e_im * e_im;
    }
    mse /= static_cast<double>(log.size());
    if (mse <= 0) return cap_db;
    const double snr_db = 10.0 * std::log10(1.0 / mse);
    return std::min(snr_db, cap_db);
}

void write_symbol_log_csv(const std::string& path, const std::vector<SymbolRecord>& log) {
    std::ofstream os(path);
    if (!os) throw IoError("cannot write symbol log: " + path);
    os << "index,sent,h_re,h_im,n_re,n_im,decided\n";
    for (const SymbolRecord& r : log) {
        os << r.index << ',' << r.sent << ',' << r.h_re << ',' << r.h_im << ',' << r.n_re << ','
           << r.n_im << ',' << r.decided << '\n';
    }
}

Var channel_layer_forward(Graph& g, Var x, const ChannelConfig& cfg, Rng& rng, double* h_out) {
    double h = 1.0;
    if (cfg.fading) {
        const double a = rng.gaussian() / std::sqrt(2.0);
        const double b = rng.gaussian() / std::sqrt(2.0);
        h = std::sqrt(a * a + b * b);  // Rayleigh magnitude, E[h^2] = 1
    }
    if (h_out) *h_out = h;
    const double sigma = std::sqrt(std::pow(10.0, -cfg.snr_db / 10.0));
    Tensor noise = gaussian_tensor(rng, g.value(x).shape, static_cast<float>(sigma));
    return add_const(g, scalar_mul(g, x, static_cast<float>(h)), std::move(noise));
}

}  // namespace semcomm
