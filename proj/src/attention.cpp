#include "causalvid/attention.hpp"

#include <cmath>
#include <limits>
#include <string>

namespace causalvid {

Mat multihead_attention(const Mat& Q, const Mat& K, const Mat& V, int heads, std::span<const int> visible,
                        std::vector<Mat>* probs) {
    require(heads >= 1 && Q.cols() % heads == 0, "attention: width not divisible by head count");
    require(K.cols() == Q.cols() && V.cols() == Q.cols(), "attention: Q/K/V widths differ");
    require(K.rows() == V.rows(), "attention: K/V row counts differ");
    require(visible.empty() || static_cast<Eigen::Index>(visible.size()) == Q.rows(),
            "attention: visibility list length mismatch");

    const Eigen::Index m = Q.rows();
    const Eigen::Index keys = K.rows();
    const Eigen::Index hd = Q.cols() / heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(hd));

    Mat out = Mat::Zero(m, Q.cols());
    if (probs) {
        probs->assign(static_cast<size_t>(heads), Mat());
    }
    for (int h = 0; h < heads; ++h) {
        const auto Qh = Q.middleCols(h * hd, hd);
        const auto Kh = K.middleCols(h * hd, hd);
        const auto Vh = V.middleCols(h * hd, hd);
        Mat p = (Qh * Kh.transpose()) * scale;
        for (Eigen::Index i = 0; i < m; ++i) {
            const Eigen::Index vis = visible.empty() ? keys : visible[static_cast<size_t>(i)];
            if (vis < 1 || vis > keys) {
                throw ContractError("attention: query row " + std::to_string(i) + " sees " + std::to_string(vis) +
                                    " of " + std::to_string(keys) + " keys");
            }
            auto row = p.row(i);
            const double mx = row.head(vis).maxCoeff();
            double sum = 0.0;
            for (Eigen::Index j = 0; j < vis; ++j) {
                row(j) = std::exp(row(j) - mx);
                sum += row(j);
            }
            row.head(vis) /= sum;
            row.tail(keys - vis).setZero();
            out.block(i, h * hd, 1, hd).noalias() = row.head(vis) * Vh.topRows(vis);
        }
        if (probs) {
            (*probs)[static_cast<size_t>(h)] = std::move(p);
        }
    }
    return out;
}

void multihead_attention_backward(const Mat& Q, const Mat& K, const Mat& V, int heads,
                                  const std::vector<Mat>& probs, const Mat& d_out, Mat& dQ, Mat& dK, Mat& dV) {
    const Eigen::Index hd = Q.cols() / heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
    for (int h = 0; h < heads; ++h) {
        const Mat& p = probs[static_cast<size_t>(h)];
        const auto Qh = Q.middleCols(h * hd, hd);
        const auto Kh = K.middleCols(h * hd, hd);
        const auto Vh = V.middleCols(h * hd, hd);
        const auto dOh = d_out.middleCols(h * hd, hd);
        dV.middleCols(h * hd, hd).noalias() += p.transpose() * dOh;
        Mat dp = dOh * Vh.transpose();
        const Eigen::VectorXd rowdot = (p.array() * dp.array()).rowwise().sum();
        Mat ds = p.array() * (dp.colwise() - rowdot).array();
        dQ.middleCols(h * hd, hd).noalias() += scale * (ds * Kh);
        dK.middleCols(h * hd, hd).noalias() += scale * (ds.transpose() * Qh);
    }
}

Mat causal_mask(int n) {
    return offset_causal_mask(n, 0);
}

Mat offset_causal_mask(int n, int k) {
    require(n >= 0 && k >= 0, "mask dimensions must be non-negative");
    Mat m = Mat::Zero(n, k + n);
    for (int i = 0; i < n; ++i) {
        for (int j = k + i + 1; j < k + n; ++j) {
            m(i, j) = -std::numeric_limits<double>::infinity();
        }
    }
    return m;
}

Mat causal_temporal_attention(const Mat& Q, const Mat& K, const Mat& V, std::span<const std::int64_t> query_ids,
                              std::span<const std::int64_t> key_ids, std::vector<Mat>* probs) {
    require(static_cast<Eigen::Index>(query_ids.size()) == Q.rows(), "temporal attention: query id count mismatch");
    require(static_cast<Eigen::Index>(key_ids.size()) == K.rows(), "temporal attention: key id count mismatch");
    for (size_t j = 1; j < key_ids.size(); ++j) {
        if (key_ids[j] <= key_ids[j - 1]) {
            throw ContractError("temporal attention: key frame ids must be strictly increasing");
        }
    }
    std::vector<int> visible(query_ids.size());
    size_t cursor = 0;
    for (size_t i = 0; i < query_ids.size(); ++i) {
        while (cursor < key_ids.size() && key_ids[cursor] <= query_ids[i]) {
            ++cursor;
        }
        if (cursor == 0 || key_ids[cursor - 1] != query_ids[i]) {
            throw ContractError("temporal attention: query frame " + std::to_string(query_ids[i]) +
                                " has no matching key row");
        }
        visible[i] = static_cast<int>(cursor);
    }
    return multihead_attention(Q, K, V, 1, visible, probs);
}

Mat causal_temporal_attention(const Mat& Q, const Mat& K, const Mat& V, std::vector<Mat>* probs) {
    std::vector<std::int64_t> ids(static_cast<size_t>(Q.rows()));
    for (size_t i = 0; i < ids.size(); ++i) {
        ids[i] = static_cast<std::int64_t>(i);
    }
    return causal_temporal_attention(Q, K, V, ids, ids, probs);
}

Mat spatial_attention_enhanced(const Mat& frame_tokens, const std::vector<Mat>& prompt_bank, int enhance_len,
                               bool is_prompt, const AttentionProjections& proj) {
    require(enhance_len >= 0, "enhance_len must be non-negative");
    const Eigen::Index s = frame_tokens.rows();
    const Eigen::Index d = frame_tokens.cols();

    std::vector<const Mat*> sources{&frame_tokens};
    if (enhance_len > 0) {
        if (is_prompt) {
            for (int r = 0; r < enhance_len; ++r) {
                sources.push_back(&frame_tokens);
            }
        } else {
            if (prompt_bank.empty()) {
                throw ContractError("spatial attention: noisy frame needs a prompt bank when enhance_len > 0");
            }
            require(static_cast<int>(prompt_bank.size()) <= enhance_len,
                    "spatial attention: prompt bank larger than enhance_len");
            for (const auto& b : prompt_bank) {
                require(b.rows() == s && b.cols() == d, "spatial attention: prompt bank frame shape mismatch");
                sources.push_back(&b);
            }
        }
    }

    Mat kv_in(static_cast<Eigen::Index>(sources.size()) * s, d);
    for (size_t i = 0; i < sources.size(); ++i) {
        kv_in.middleRows(static_cast<Eigen::Index>(i) * s, s) = *sources[i];
    }
    const Mat q = (frame_tokens * proj.wq).rowwise() + proj.bq;
    const Mat k = (kv_in * proj.wk).rowwise() + proj.bk;
    const Mat v = (kv_in * proj.wv).rowwise() + proj.bv;
    const Mat attn = multihead_attention(q, k, v, proj.heads);
    return (attn * proj.wo).rowwise() + proj.bo;
}

}  // namespace causalvid
