#include "causalvid/kv_cache.hpp"

#include "causalvid/attention.hpp"

#include <cstring>
#include <string>

namespace causalvid {

KVCache::KVCache(int layers, int capacity, int tokens_per_frame, int dim, int bank_depth)
    : layers_(layers), capacity_(capacity), tokens_(tokens_per_frame), dim_(dim), bank_depth_(bank_depth) {
    require(layers >= 1 && capacity >= 1 && tokens_per_frame >= 1 && dim >= 1 && bank_depth >= 0,
            "KVCache: invalid geometry");
    keys_.assign(static_cast<size_t>(layers), Mat::Zero(static_cast<Eigen::Index>(capacity) * tokens_, dim));
    values_.assign(static_cast<size_t>(layers), Mat::Zero(static_cast<Eigen::Index>(capacity) * tokens_, dim));
    banks_.assign(static_cast<size_t>(layers), {});
}

std::vector<std::int64_t> KVCache::resident_ids() const {
    std::vector<std::int64_t> ids(static_cast<size_t>(resident_));
    for (int i = 0; i < resident_; ++i) {
        ids[static_cast<size_t>(i)] = first_id_ + i;
    }
    return ids;
}

Eigen::Index KVCache::slot_row(std::int64_t frame_id) const {
    if (frame_id < first_id_ || frame_id >= next_id()) {
        throw ContractError("KVCache: frame " + std::to_string(frame_id) + " is not resident");
    }
    return static_cast<Eigen::Index>(frame_id % capacity_) * tokens_;
}

Mat::ConstRowsBlockXpr KVCache::keys(int layer, std::int64_t frame_id) const {
    return keys_.at(static_cast<size_t>(layer)).middleRows(slot_row(frame_id), tokens_);
}

Mat::ConstRowsBlockXpr KVCache::values(int layer, std::int64_t frame_id) const {
    return values_.at(static_cast<size_t>(layer)).middleRows(slot_row(frame_id), tokens_);
}

void KVCache::append(const std::vector<Mat>& new_keys, const std::vector<Mat>& new_values,
                     const std::vector<Mat>& new_bank, int n_new) {
    if (n_new < 0 || n_new > capacity_) {
        throw ContractError("KVCache: cannot append " + std::to_string(n_new) + " frames to a cache of capacity " +
                            std::to_string(capacity_));
    }
    require(static_cast<int>(new_keys.size()) == layers_ && static_cast<int>(new_values.size()) == layers_ &&
                static_cast<int>(new_bank.size()) == layers_,
            "KVCache: per-layer input count mismatch");
    const Eigen::Index rows = static_cast<Eigen::Index>(n_new) * tokens_;
    for (int l = 0; l < layers_; ++l) {
        const auto li = static_cast<size_t>(l);
        require(new_keys[li].rows() == rows && new_keys[li].cols() == dim_ && new_values[li].rows() == rows &&
                    new_values[li].cols() == dim_ && new_bank[li].rows() == rows && new_bank[li].cols() == dim_,
                "KVCache: appended block shape mismatch");
    }

    const int overflow = resident_ + n_new - capacity_;
    if (overflow > 0) {
        first_id_ += overflow;
        resident_ -= overflow;
        evicted_ += overflow;
    }
    const std::int64_t start = next_id();
    resident_ += n_new;
    for (int l = 0; l < layers_; ++l) {
        const auto li = static_cast<size_t>(l);
        for (int f = 0; f < n_new; ++f) {
            const Eigen::Index dst = slot_row(start + f);
            keys_[li].middleRows(dst, tokens_) = new_keys[li].middleRows(static_cast<Eigen::Index>(f) * tokens_, tokens_);
            values_[li].middleRows(dst, tokens_) =
                new_values[li].middleRows(static_cast<Eigen::Index>(f) * tokens_, tokens_);
            if (bank_depth_ > 0) {
                banks_[li].push_back(new_bank[li].middleRows(static_cast<Eigen::Index>(f) * tokens_, tokens_));
                while (static_cast<int>(banks_[li].size()) > bank_depth_) {
                    banks_[li].pop_front();
                }
            }
        }
    }
}

namespace {

void fnv_mix(std::uint64_t& h, const void* data, size_t bytes) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (size_t i = 0; i < bytes; ++i) {
        h ^= p[i];
        h *= 1099511628211ull;
    }
}

}  // namespace

std::uint64_t KVCache::digest() const {
    std::uint64_t h = 1469598103934665603ull;
    fnv_mix(h, &resident_, sizeof(resident_));
    fnv_mix(h, &first_id_, sizeof(first_id_));
    for (int l = 0; l < layers_; ++l) {
        const auto li = static_cast<size_t>(l);
        fnv_mix(h, keys_[li].data(), static_cast<size_t>(keys_[li].size()) * sizeof(double));
        fnv_mix(h, values_[li].data(), static_cast<size_t>(values_[li].size()) * sizeof(double));
        for (const auto& b : banks_[li]) {
            fnv_mix(h, b.data(), static_cast<size_t>(b.size()) * sizeof(double));
        }
    }
    return h;
}

void KVCache::clear() {
    resident_ = 0;
    first_id_ = 0;
    evicted_ = 0;
    for (auto& b : banks_) {
        b.clear();
    }
}

Mat cached_causal_attention(const Mat& Q_chunk, const Mat& K_chunk, const Mat& V_chunk, const Mat& K_cache,
                            const Mat& V_cache, std::span<const std::int64_t> cache_ids,
                            std::span<const std::int64_t> chunk_ids) {
    require(K_cache.rows() == V_cache.rows() && static_cast<Eigen::Index>(cache_ids.size()) == K_cache.rows(),
            "cached attention: cache id count mismatch");
    if (!cache_ids.empty() && !chunk_ids.empty() && cache_ids.back() >= chunk_ids.front()) {
        throw ContractError("cached attention: cached frames must precede the chunk");
    }
    Mat K(K_cache.rows() + K_chunk.rows(), K_chunk.cols());
    Mat V(V_cache.rows() + V_chunk.rows(), V_chunk.cols());
    K << K_cache, K_chunk;
    V << V_cache, V_chunk;
    std::vector<std::int64_t> key_ids(cache_ids.begin(), cache_ids.end());
    key_ids.insert(key_ids.end(), chunk_ids.begin(), chunk_ids.end());
    return causal_temporal_attention(Q_chunk, K, V, chunk_ids, key_ids);
}

}  // namespace causalvid
