// SPDX-License-Identifier: Apache-2.0
//
// Exactly rounded, order-independent summation of doubles.
//
// The accumulator is a fixed-point register wide enough for the full
// double exponent range (a Kulisch-style long accumulator, stored as
// 32-bit chunks inside 64-bit limbs so carries can be deferred). Adding a
// value touches at most three limbs; value() normalizes carries and rounds
// the exact sum to nearest-even once. Because the register holds the sum
// exactly, the result does not depend on the order in which terms are
// added, which is what the aggregation code relies on for its permutation
// invariance.

#pragma once

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>

namespace vsc {

class ExactSum {
 public:
  ExactSum() { limbs_.fill(0); }

  void reset() {
    limbs_.fill(0);
    pending_ = 0;
  }

  void add(double x) {
    if (x == 0.0) return;
    const std::uint64_t bits = std::bit_cast<std::uint64_t>(x);
    const bool negative = (bits >> 63) != 0;
    const int raw_exp = static_cast<int>((bits >> 52) & 0x7ff);
    std::uint64_t mant = bits & 0xfffffffffffffULL;
    // offset of the mantissa's least significant bit from 2^-1074
    int pos;
    if (raw_exp == 0) {
      pos = 0;  // subnormal
    } else {
      mant |= 1ULL << 52;
      pos = raw_exp - 1;
    }
    const int limb = pos >> 5;
    const int shift = pos & 31;
    const unsigned __int128 wide = static_cast<unsigned __int128>(mant) << shift;
    const std::int64_t lo = static_cast<std::int64_t>(static_cast<std::uint32_t>(wide));
    const std::int64_t mid = static_cast<std::int64_t>(static_cast<std::uint32_t>(wide >> 32));
    const std::int64_t hi = static_cast<std::int64_t>(static_cast<std::uint32_t>(wide >> 64));
    if (negative) {
      limbs_[limb] -= lo;
      limbs_[limb + 1] -= mid;
      limbs_[limb + 2] -= hi;
    } else {
      limbs_[limb] += lo;
      limbs_[limb + 1] += mid;
      limbs_[limb + 2] += hi;
    }
    if (++pending_ >= kMaxPending) {
      carry_propagate(limbs_);
      pending_ = 0;
    }
  }

  // Exact sum rounded to nearest, ties to even.
  double value() const {
    std::array<std::int64_t, kLimbs> t = limbs_;
    carry_propagate(t);
    // after propagation only the guard (top) limb carries the sign
    const bool negative = t[kLimbs - 1] < 0;
    if (negative) {
      std::int64_t carry = 1;
      for (int i = 0; i + 1 < kLimbs; ++i) {
        const std::int64_t v = (0xffffffffLL - t[i]) + carry;
        t[i] = v & 0xffffffffLL;
        carry = v >> 32;
      }
      t[kLimbs - 1] = -t[kLimbs - 1] - 1 + carry;
    }
    int top = kLimbs - 1;
    while (top >= 0 && t[top] == 0) --top;
    if (top < 0) return 0.0;
    int high_bit = 62;
    while (((t[top] >> high_bit) & 1) == 0) --high_bit;
    const long msb = static_cast<long>(top) * 32 + high_bit;

    auto bit_at = [&](long p) -> int {
      if (p < 0) return 0;
      if (p >= 32L * (kLimbs - 1)) {
        const long s = p - 32L * (kLimbs - 1);
        if (s > 62) return 0;
        return static_cast<int>((t[kLimbs - 1] >> s) & 1);
      }
      return static_cast<int>((t[p >> 5] >> (p & 31)) & 1);
    };

    std::uint64_t mantissa = 0;
    for (long p = msb; p > msb - 53; --p) mantissa = (mantissa << 1) | static_cast<std::uint64_t>(bit_at(p));
    const int guard = bit_at(msb - 53);

    bool sticky = false;
    const long sticky_top = msb - 54;
    if (sticky_top >= 0) {
      const long l = std::min(sticky_top >> 5, static_cast<long>(kLimbs - 1));
      for (long q = 0; q < l && !sticky; ++q) sticky = t[q] != 0;
      if (!sticky) {
        const long nbits = sticky_top - 32L * l + 1;  // 1..63
        const std::int64_t mask =
            (nbits >= 63) ? std::int64_t(0x7fffffffffffffffLL) : ((std::int64_t(1) << nbits) - 1);
        sticky = (t[l] & mask) != 0;
      }
    }

    long exp = msb;
    if (guard && (sticky || (mantissa & 1))) {
      ++mantissa;
      if (mantissa == (1ULL << 53)) {
        mantissa >>= 1;
        ++exp;
      }
    }
    const double magnitude = std::ldexp(static_cast<double>(mantissa), static_cast<int>(exp - 52) - 1074);
    return negative ? -magnitude : magnitude;
  }

 private:
  // bit 0 sits at 2^-1074; 70 limbs cover the top of the double range plus
  // headroom for deferred carries
  static constexpr int kLimbs = 70;
  static constexpr int kMaxPending = 1 << 30;

  static void carry_propagate(std::array<std::int64_t, kLimbs>& t) {
    for (int i = 0; i + 1 < kLimbs; ++i) {
      const std::int64_t c = t[i] >> 32;
      t[i] -= c << 32;
      t[i + 1] += c;
    }
  }

  std::array<std::int64_t, kLimbs> limbs_;
  int pending_ = 0;
};

// Exact sum of a range of doubles.
template <typename It>
double exact_sum(It first, It last) {
  ExactSum acc;
  for (; first != last; ++first) acc.add(*first);
  return acc.value();
}

}  // namespace vsc
