#include "causalvid/parameters.hpp"

namespace causalvid {

size_t ParameterSet::add(const std::string& name, std::vector<int> shape) {
    require(!by_name_.contains(name), "duplicate parameter name " + name);
    require(!shape.empty() && shape.size() <= 2, "parameter " + name + " must be 1-D or 2-D");
    size_t count = 1;
    for (int d : shape) {
        require(d > 0, "parameter " + name + " has a non-positive dimension");
        count *= static_cast<size_t>(d);
    }
    ParamEntry e{name, std::move(shape), values_.size(), count};
    values_.resize(values_.size() + count, 0.0);
    by_name_[name] = entries_.size();
    entries_.push_back(std::move(e));
    return entries_.size() - 1;
}

size_t ParameterSet::index_of(const std::string& name) const {
    const auto it = by_name_.find(name);
    if (it == by_name_.end()) {
        throw ContractError("unknown parameter " + name);
    }
    return it->second;
}

namespace {

std::pair<Eigen::Index, Eigen::Index> dims(const ParamEntry& e) {
    if (e.shape.size() == 1) {
        return {1, e.shape[0]};
    }
    return {e.shape[0], e.shape[1]};
}

}  // namespace

MatMap ParameterSet::view(size_t index, std::vector<double>& buffer) const {
    const auto& e = entries_.at(index);
    const auto [r, c] = dims(e);
    return MatMap(buffer.data() + e.offset, r, c);
}

ConstMatMap ParameterSet::view(size_t index, const std::vector<double>& buffer) const {
    const auto& e = entries_.at(index);
    const auto [r, c] = dims(e);
    return ConstMatMap(buffer.data() + e.offset, r, c);
}

LinearIds add_linear(ParameterSet& params, const std::string& prefix, int in, int out) {
    LinearIds ids;
    ids.w = params.add(prefix + ".w", {in, out});
    ids.b = params.add(prefix + ".b", {out});
    ids.in = in;
    ids.out = out;
    return ids;
}

}  // namespace causalvid
