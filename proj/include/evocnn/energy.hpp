#pragma once

// Multiplication-energy reduction estimate for a pruned network relative to
// its unpruned ancestor. Parameter counts stand in for multiply counts; the
// fixed-point factor reflects a 16-bit integer multiply costing roughly
// 1/2.4 of a 32-bit float multiply.

#include <cstddef>

#include "evocnn/errors.hpp"
#include "evocnn/layers.hpp"

namespace evocnn {

struct EnergyModel {
    // Energy ratio of one fp32 multiply to one 16-bit fixed-point multiply.
    double fx16_gain = 2.4;
};

// Factor by which multiplication energy shrinks when the original network
// (par_orig parameters, fp32 inference) is replaced by the reduced network
// (par_red parameters) run in the given numeric mode.
inline double estimate_emult_reduction(std::size_t par_orig, std::size_t par_red,
                                       const NumericMode& mode,
                                       const EnergyModel& model = {}) {
    if (par_orig == 0 || par_red == 0) {
        throw ConfigError("estimate_emult_reduction: parameter counts must be positive");
    }
    const double ratio = static_cast<double>(par_orig) / static_cast<double>(par_red);
    return mode.kind == NumericMode::Kind::fx16 ? model.fx16_gain * ratio : ratio;
}

} // namespace evocnn
