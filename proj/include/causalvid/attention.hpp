#pragma once

#include "causalvid/common.hpp"

#include <cstdint>
#include <span>
#include <vector>

namespace causalvid {

// Scaled dot-product attention split over `heads` column blocks.
// visible[i] is the number of leading key rows query row i may attend to;
// an empty span means every key is visible. Keys past the prefix get
// exactly zero weight and are never read when forming the output.
Mat multihead_attention(const Mat& Q, const Mat& K, const Mat& V, int heads, std::span<const int> visible = {},
                        std::vector<Mat>* probs = nullptr);

// Gradients for multihead_attention given the saved probabilities.
// Results are accumulated into dQ, dK and dV, which must be pre-sized.
void multihead_attention_backward(const Mat& Q, const Mat& K, const Mat& V, int heads,
                                  const std::vector<Mat>& probs, const Mat& d_out, Mat& dQ, Mat& dK, Mat& dV);

// Additive N x N mask with -inf strictly above the diagonal.
Mat causal_mask(int n);

// Additive n x (k + n) mask for a chunk of n queries following k cached
// frames: the left k columns are open and the right n x n block is causal.
Mat offset_causal_mask(int n, int k);

// Single-head causal temporal attention for one spatial site: query row i
// (absolute frame query_ids[i]) attends to key rows j with
// key_ids[j] <= query_ids[i]. key_ids must be strictly increasing and
// contain every query id.
Mat causal_temporal_attention(const Mat& Q, const Mat& K, const Mat& V, std::span<const std::int64_t> query_ids,
                              std::span<const std::int64_t> key_ids, std::vector<Mat>* probs = nullptr);

// Convenience overload for a plain N-frame sequence (ids 0..N-1).
Mat causal_temporal_attention(const Mat& Q, const Mat& K, const Mat& V, std::vector<Mat>* probs = nullptr);

struct AttentionProjections {
    Mat wq, wk, wv, wo;  // D x D each, applied as x W
    RowVec bq, bk, bv, bo;
    int heads = 1;
};

// Spatial self-attention for one frame with frame-prompt enhancement.
// Noisy frames attend over [own tokens; prompt_bank frames]; prompt frames
// attend over their own tokens repeated enhance_len + 1 times.
Mat spatial_attention_enhanced(const Mat& frame_tokens, const std::vector<Mat>& prompt_bank, int enhance_len,
                               bool is_prompt, const AttentionProjections& proj);

}  // namespace causalvid
