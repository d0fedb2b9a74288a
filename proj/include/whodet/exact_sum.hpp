#pragma once

#include <cmath>
#include <stdexcept>

#include "whodet/error.hpp"

namespace whodet {

/// Order-independent accumulator of doubles.
///
/// Every addend is rounded to a fixed-point grid of 2^-48 and summed in a
/// 128-bit integer, so sums are associative and commutative bit for bit.
/// Statistics accumulators rely on this to make merged partial results
/// identical to a single pass over the same data.
class ExactSum {
public:
    static constexpr int kFractionBits = 48;

    void add(double v) {
        const double scaled = std::ldexp(v, kFractionBits);
        if (!(std::abs(scaled) < kLimit)) throw NumericalError("statistics accumulator overflow or non-finite input");
        raw_ += static_cast<__int128>(std::nearbyint(scaled));
    }

    ExactSum& operator+=(const ExactSum& other) {
        raw_ += other.raw_;
        return *this;
    }

    double value() const { return std::ldexp(static_cast<double>(raw_), -kFractionBits); }
    long double longValue() const { return std::ldexp(static_cast<long double>(raw_), -kFractionBits); }

    bool operator==(const ExactSum&) const = default;

private:
    static constexpr double kLimit = 0x1p120;
    __int128 raw_ = 0;
};

}  // namespace whodet
