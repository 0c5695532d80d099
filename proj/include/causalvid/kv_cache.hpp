#pragma once

#include "causalvid/common.hpp"

#include <cstdint>
#include <deque>
#include <span>
#include <vector>

namespace causalvid {

// Per-layer ring buffers of temporal-attention key/value rows for up to
// `capacity` clean frames, plus the spatial-attention inputs of the newest
// prompt frames. Frame f lives in slot f % capacity, so the slot index is
// also the frame's cyclic position.
class KVCache {
public:
    KVCache() = default;
    KVCache(int layers, int capacity, int tokens_per_frame, int dim, int bank_depth);

    int layers() const { return layers_; }
    int capacity() const { return capacity_; }
    int tokens_per_frame() const { return tokens_; }
    int dim() const { return dim_; }
    int bank_depth() const { return bank_depth_; }

    // Number of resident frames (the frame_count k of the cache).
    int resident() const { return resident_; }
    std::int64_t first_id() const { return first_id_; }
    std::int64_t next_id() const { return first_id_ + resident_; }
    std::vector<std::int64_t> resident_ids() const;

    // S x D key/value rows of a resident frame at one layer.
    Mat::ConstRowsBlockXpr keys(int layer, std::int64_t frame_id) const;
    Mat::ConstRowsBlockXpr values(int layer, std::int64_t frame_id) const;

    // Prompt-activation bank for a layer, oldest frame first.
    const std::deque<Mat>& bank(int layer) const { return banks_.at(static_cast<size_t>(layer)); }

    // Appends n_new frames. new_keys[l], new_values[l] and new_bank[l] are
    // (n_new * S) x D, frame-major. Evicts the oldest frames first when the
    // resident count would exceed capacity.
    void append(const std::vector<Mat>& new_keys, const std::vector<Mat>& new_values,
                const std::vector<Mat>& new_bank, int n_new);

    // Number of frames evicted over the cache's lifetime.
    std::int64_t evicted() const { return evicted_; }

    // FNV-1a over every stored byte and the bookkeeping fields.
    std::uint64_t digest() const;

    void clear();

private:
    Eigen::Index slot_row(std::int64_t frame_id) const;

    int layers_ = 0;
    int capacity_ = 0;
    int tokens_ = 0;
    int dim_ = 0;
    int bank_depth_ = 0;
    int resident_ = 0;
    std::int64_t first_id_ = 0;
    std::int64_t evicted_ = 0;
    std::vector<Mat> keys_;    // per layer: (capacity * S) x D
    std::vector<Mat> values_;  // per layer: (capacity * S) x D
    std::vector<std::deque<Mat>> banks_;
};

// Temporal attention of an n-frame chunk against k cached frames of one
// spatial site (single head). Equivalent to full causal attention over the
// concatenated (k + n)-frame sequence restricted to its last n rows.
Mat cached_causal_attention(const Mat& Q_chunk, const Mat& K_chunk, const Mat& V_chunk, const Mat& K_cache,
                            const Mat& V_cache, std::span<const std::int64_t> cache_ids,
                            std::span<const std::int64_t> chunk_ids);

}  // namespace causalvid
