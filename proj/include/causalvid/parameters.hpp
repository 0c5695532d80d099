#pragma once

#include "causalvid/common.hpp"

#include <string>
#include <unordered_map>
#include <vector>

namespace causalvid {

struct ParamEntry {
    std::string name;
    std::vector<int> shape;  // 1-D or 2-D
    size_t offset = 0;
    size_t size = 0;
};

// Flat storage for named tensors. Gradients and optimizer moments use
// separate buffers with the same layout.
class ParameterSet {
public:
    size_t add(const std::string& name, std::vector<int> shape);

    size_t size() const { return values_.size(); }
    const std::vector<ParamEntry>& entries() const { return entries_; }
    const ParamEntry& entry(size_t index) const { return entries_.at(index); }
    size_t index_of(const std::string& name) const;

    std::vector<double>& values() { return values_; }
    const std::vector<double>& values() const { return values_; }

    // Views over an arbitrary buffer with this layout. 1-D entries are
    // presented as a single row.
    MatMap view(size_t index, std::vector<double>& buffer) const;
    ConstMatMap view(size_t index, const std::vector<double>& buffer) const;

    MatMap view(size_t index) { return view(index, values_); }
    ConstMatMap view(size_t index) const { return view(index, values_); }

private:
    std::vector<ParamEntry> entries_;
    std::unordered_map<std::string, size_t> by_name_;
    std::vector<double> values_;
};

// A dense layer y = x W + b with W stored in x out.
struct LinearIds {
    size_t w = 0;
    size_t b = 0;
    int in = 0;
    int out = 0;
};

LinearIds add_linear(ParameterSet& params, const std::string& prefix, int in, int out);

}  // namespace causalvid
