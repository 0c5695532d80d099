#pragma once

#include "causalvid/common.hpp"

#include <cstdint>
#include <string>

namespace causalvid {

struct ModelConfig {
    int num_blocks = 4;
    int hidden_dim = 64;
    int num_heads = 4;
    int patch_size = 4;
    // Temporal positional table length; also the kv-cache capacity.
    int max_frames = 49;
    int height = 16;
    int width = 16;
    int channels = 3;
    int caption_vocab_size = 64;
    int caption_len = 3;
    int mlp_ratio = 4;
    // Number of prompt frames whose spatial-attention inputs are appended to
    // the keys/values of every noisy frame.
    int prompt_enhance_len = 2;
    // Ablation switch: false gives bidirectional temporal attention.
    bool causal = true;
    // Sub-prompt selection: false takes the newest P' prompt frames,
    // true takes frames P-1 .. P-P' (skipping the newest).
    bool literal_subprompt = false;

    int head_dim() const { return hidden_dim / num_heads; }
    int grid_h() const { return height / patch_size; }
    int grid_w() const { return width / patch_size; }
    int tokens_per_frame() const { return grid_h() * grid_w(); }
    int patch_dim() const { return patch_size * patch_size * channels; }
    int frame_dim() const { return height * width * channels; }
    int mlp_dim() const { return hidden_dim * mlp_ratio; }
    // Frames retained in the cached prompt-activation bank.
    int bank_depth() const { return prompt_enhance_len + (literal_subprompt ? 1 : 0); }

    void validate() const;
};

// Index into the temporal positional table: positions wrap at the table
// length so generation can run past the trained horizon.
inline int cyclic_position(std::int64_t frame_id, int capacity) {
    require(capacity >= 1, "cyclic_position: capacity must be positive");
    require(frame_id >= 0, "cyclic_position: negative frame id");
    return static_cast<int>(frame_id % capacity);
}

}  // namespace causalvid
