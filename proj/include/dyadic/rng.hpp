#pragma once

// Counter-based random streams. Every (seed, purpose, stream id) triple owns
// an independent sequence, so the draws of path i never depend on which
// thread ran it or on how many paths came before it.

#include <array>
#include <cmath>
#include <cstdint>

namespace dyadic {

/// Philox4x32 with 10 rounds (Salmon et al., "Parallel random numbers: as
/// easy as 1, 2, 3").
struct Philox4x32 {
  using Counter = std::array<std::uint32_t, 4>;
  using Key = std::array<std::uint32_t, 2>;

  static constexpr std::uint32_t kMul0 = 0xD2511F53u;
  static constexpr std::uint32_t kMul1 = 0xCD9E8D57u;
  static constexpr std::uint32_t kWeyl0 = 0x9E3779B9u;
  static constexpr std::uint32_t kWeyl1 = 0xBB67AE85u;

  static constexpr Counter generate(Counter ctr, Key key) {
    for (int round = 0; round < 10; ++round) {
      if (round > 0) {
        key[0] += kWeyl0;
        key[1] += kWeyl1;
      }
      const std::uint64_t p0 = static_cast<std::uint64_t>(kMul0) * ctr[0];
      const std::uint64_t p1 = static_cast<std::uint64_t>(kMul1) * ctr[2];
      const auto hi0 = static_cast<std::uint32_t>(p0 >> 32);
      const auto lo0 = static_cast<std::uint32_t>(p0);
      const auto hi1 = static_cast<std::uint32_t>(p1 >> 32);
      const auto lo1 = static_cast<std::uint32_t>(p1);
      ctr = {hi1 ^ ctr[1] ^ key[0], lo1, hi0 ^ ctr[3] ^ key[1], lo0};
    }
    return ctr;
  }
};

/// Tags keeping the streams of different subsystems apart under one seed.
enum class StreamPurpose : std::uint32_t { Path = 1, Escape = 2 };

struct ZigguratTables {
  static constexpr double kR = 3.442619855899;
  static constexpr double kArea = 9.91256303526217e-3;
  std::array<std::uint32_t, 128> kn{};
  std::array<double, 128> wn{};
  std::array<double, 128> fn{};

  static const ZigguratTables& get() {
    static const ZigguratTables tables;
    return tables;
  }

 private:
  ZigguratTables() {
    const double m1 = 2147483648.0;
    double dn = kR;
    double tn = dn;
    const double q = kArea / std::exp(-0.5 * dn * dn);
    kn[0] = static_cast<std::uint32_t>((dn / q) * m1);
    kn[1] = 0;
    wn[0] = q / m1;
    wn[127] = dn / m1;
    fn[0] = 1.0;
    fn[127] = std::exp(-0.5 * dn * dn);
    for (int i = 126; i >= 1; --i) {
      dn = std::sqrt(-2.0 * std::log(kArea / dn + std::exp(-0.5 * dn * dn)));
      kn[static_cast<std::size_t>(i) + 1] = static_cast<std::uint32_t>((dn / tn) * m1);
      tn = dn;
      fn[static_cast<std::size_t>(i)] = std::exp(-0.5 * dn * dn);
      wn[static_cast<std::size_t>(i)] = dn / m1;
    }
  }
};

class RandomStream {
 public:
  RandomStream(std::uint64_t seed, StreamPurpose purpose, std::uint32_t stream_id)
      : key_{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32)},
        purpose_(static_cast<std::uint32_t>(purpose)),
        stream_id_(stream_id) {}

  std::uint32_t next_u32() {
    if (lane_ == 4) refill();
    return buffer_[lane_++];
  }

  /// Uniform on the open interval (0, 1) with 53 random bits.
  double uniform() {
    const std::uint64_t a = next_u32() >> 5;
    const std::uint64_t b = next_u32() >> 6;
    const double u53 = static_cast<double>((a << 26) | b);
    return (u53 + 0.5) * 0x1.0p-53;
  }

  /// Standard normal by the 128-layer ziggurat of Marsaglia and Tsang. The
  /// layer index comes from bits separate from the 32-bit abscissa to avoid
  /// the layer/value correlation of the original generator.
  double normal() {
    const auto& z = ZigguratTables::get();
    for (;;) {
      const auto hz = static_cast<std::int32_t>(next_u32());
      const int iz = static_cast<int>(next_layer());
      if (static_cast<std::uint32_t>(hz < 0 ? -static_cast<std::int64_t>(hz) : hz) < z.kn[iz]) {
        return hz * z.wn[iz];
      }
      const double x = hz * z.wn[iz];
      if (iz == 0) {
        double tail, y;
        do {
          tail = -std::log(uniform()) / ZigguratTables::kR;
          y = -std::log(uniform());
        } while (y + y < tail * tail);
        return hz > 0 ? ZigguratTables::kR + tail : -ZigguratTables::kR - tail;
      }
      if (z.fn[iz] + uniform() * (z.fn[iz - 1] - z.fn[iz]) < std::exp(-0.5 * x * x)) return x;
    }
  }

  /// Exponential with the given rate, by inversion.
  double exponential(double rate) { return -std::log(uniform()) / rate; }

  std::uint64_t blocks_used() const { return block_; }

 private:
  /// 7-bit ziggurat layer index; one 32-bit draw serves four layers.
  std::uint32_t next_layer() {
    if (layer_bits_left_ == 0) {
      layer_bits_ = next_u32();
      layer_bits_left_ = 4;
    }
    const std::uint32_t v = layer_bits_ & 127u;
    layer_bits_ >>= 8;
    --layer_bits_left_;
    return v;
  }

  void refill() {
    const Philox4x32::Counter ctr{static_cast<std::uint32_t>(block_), static_cast<std::uint32_t>(block_ >> 32),
                                  stream_id_, purpose_};
    buffer_ = Philox4x32::generate(ctr, key_);
    ++block_;
    lane_ = 0;
  }

  Philox4x32::Key key_;
  std::uint32_t purpose_;
  std::uint32_t stream_id_;
  std::uint64_t block_ = 0;
  Philox4x32::Counter buffer_{};
  int lane_ = 4;
  std::uint32_t layer_bits_ = 0;
  int layer_bits_left_ = 0;
};

}  // namespace dyadic
