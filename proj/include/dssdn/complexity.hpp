#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dssdn/network.hpp"

namespace dssdn {

struct ComplexityRow {
    std::string path;
    std::string kind;
    int64_t params = 0;
    int64_t macs = 0;
};

struct ComplexityReport {
    std::vector<ComplexityRow> rows;
    int64_t total_params = 0;
    int64_t total_macs = 0;
    Shape input_shape;

    std::string table() const;
    std::string to_json() const;
};

// Layer-by-layer accounting along the forward graph. Shared branches (the
// pointwise conv feeding both depthwise branches of SC/OSC) count once.
ComplexityReport analyze(const DSSDNModel& model, const Shape& input_shape);

int64_t count_params(const DSSDNModel& model);
int64_t count_macs(const DSSDNModel& model, const Shape& input_shape);

}  // namespace dssdn
