#pragma once

#include <complex>
#include <cstdint>
#include <string>
#include <vector>

#include "semcomm/autograd.hpp"
#include "semcomm/label_map.hpp"
#include "semcomm/tensor.hpp"

namespace semcomm {

// Bit-exact payload layout, little-endian:
//   "SCPL" | u8 version=1 | u16 width | u16 height | u8 num_classes | u8 codec | body
// codec 0: labels packed MSB-first at ceil(log2 K) bits each, raster order.
// codec 1: run-length pairs (u8 run 1..255, packed label), same bit order.
// The encoder picks codec 1 only when its body is strictly smaller.
struct Payload {
    std::uint8_t version = 1;
    int width = 0;
    int height = 0;
    int num_classes = 0;
    std::uint8_t codec = 0;
    std::vector<std::uint8_t> body;

    std::vector<std::uint8_t> to_bytes() const;
    static Payload from_bytes(const std::vector<std::uint8_t>& bytes);

    std::size_t total_bytes() const { return kHeaderBytes + body.size(); }
    static constexpr std::size_t kHeaderBytes = 11;
};

int label_bits(int num_classes);  // max(1, ceil(log2 K))

Payload encode_label_map(const LabelMap& map, int num_classes);
LabelMap decode_payload(const Payload& payload, int num_classes);

std::vector<std::uint8_t> bytes_to_bits(const std::vector<std::uint8_t>& bytes);
std::vector<std::uint8_t> bits_to_bytes(const std::vector<std::uint8_t>& bits);

// Rayleigh fading + AWGN over BPSK symbols (bit 0 -> +1, bit 1 -> -1).
// snr_db is Es/N0 with unit symbol energy; noise is complex gaussian with
// per-component variance sigma^2/2. The receiver equalizes with perfect CSI
// and decides on the sign of the real part.
struct ChannelConfig {
    double snr_db = 10.0;
    bool fading = false;
    bool per_symbol_fading = false;  // default: one gain per payload (block fading)
    std::uint64_t seed = 1;
    double snr_cap_db = 200.0;
    bool record_symbols = false;
};

struct SymbolRecord {
    std::int64_t index;
    int sent;  // +1 / -1
    double h_re, h_im;
    double n_re, n_im;
    int decided;
};

struct ChannelOutput {
    std::vector<std::uint8_t> bits;
    std::vector<SymbolRecord> log;  // filled when record_symbols
};

ChannelOutput apply_channel(const std::vector<std::uint8_t>& bits, const ChannelConfig& cfg);

double q_function(double x);  // Q(x) = P(N(0,1) > x)
double bpsk_awgn_ber(double snr_db);  // Q(sqrt(2*snr))

// 10*log10(signal power / MSE of equalized symbols); needs >= 10^4 symbols.
double measure_empirical_snr(const std::vector<SymbolRecord>& log, double cap_db = 200.0);

void write_symbol_log_csv(const std::string& path, const std::vector<SymbolRecord>& log);

// Differentiable training-time channel on real tensors: y = h*x + n with a
// per-call scalar gain and elementwise gaussian noise of power 10^(-snr/10)
// (unit-signal-power convention). The gradient wrt x is h.
Var channel_layer_forward(Graph& g, Var x, const ChannelConfig& cfg, Rng& rng,
                          double* h_out = nullptr);

}  // namespace semcomm
