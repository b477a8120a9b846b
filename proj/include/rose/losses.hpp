#pragma once

#include <string>
#include <vector>

#include "rose/grid.hpp"
#include "rose/mask.hpp"
#include "rose/tape.hpp"
#include "rose/vocab.hpp"

namespace rose::losses {

struct LossWeights {
    double lambda_bce = 2.0;
    double lambda_dice = 0.5;
    double tau = 0.07;
};

// Streams with no supervised positions contribute 0 and bump this counter.
long& empty_mask_warnings();

// Frozen stand-in for a pretrained text encoder: a seeded per-word table;
// names embed as the mean over their tokens, L2-normalized.
class TextEmbedder {
public:
    TextEmbedder(const text::Vocab& vocab, int d_s, uint64_t seed);

    Eigen::MatrixXd embed(const text::Vocab& vocab, const std::vector<std::string>& names) const;

    template <typename S>
    ad::Mat<S> embed_as(const text::Vocab& vocab, const std::vector<std::string>& names) const {
        return embed(vocab, names).cast<S>();
    }

    int dim() const { return static_cast<int>(table_.cols()); }

private:
    Eigen::MatrixXd table_;  // vocab_size x d_s
};

// Mean token cross-entropy over the masked positions of one stream.
// A zero mask yields 0 and increments the warning counter.
template <typename S>
int masked_ce(ad::Tape<S>& t, int logits, const std::vector<int>& targets,
              const std::vector<S>& mask) {
    S total = S(0);
    for (S m : mask) total += m;
    if (total <= S(0)) {
        ++empty_mask_warnings();
        return t.constant(ad::Mat<S>::Zero(1, 1));
    }
    return t.softmax_ce(logits, targets, mask);
}

// L_txt: counting stream plus category stream, each a masked mean CE.
template <typename S>
int text_loss(ad::Tape<S>& t, int counting_logits, const std::vector<int>& counting_targets,
              const std::vector<S>& counting_mask, int category_logits,
              const std::vector<int>& category_targets, const std::vector<S>& category_mask) {
    return t.add(masked_ce(t, counting_logits, counting_targets, counting_mask),
                 masked_ce(t, category_logits, category_targets, category_mask));
}

// L_mask on one (prediction, ground truth) pair. pred_logits is (L*L)x1.
// lambda_bce * mean-pixel BCE + lambda_dice * (1 - (2*I + 1)/(P + G + 1)).
template <typename S>
int mask_loss(ad::Tape<S>& t, int pred_logits, const Mask& gt, const LossWeights& w) {
    if (t.rows(pred_logits) != static_cast<Eigen::Index>(gt.data.size()) ||
        t.cols(pred_logits) != 1)
        throw std::logic_error("mask_loss: prediction must be (H*W)x1 matching the mask");
    ad::Mat<S> g(t.rows(pred_logits), 1);
    S gsum = S(0);
    for (size_t i = 0; i < gt.data.size(); ++i) {
        g(static_cast<Eigen::Index>(i), 0) = gt.data[i] ? S(1) : S(0);
        gsum += g(static_cast<Eigen::Index>(i), 0);
    }
    int bce = t.bce_with_logits(pred_logits, g);
    int p = t.sigmoid(pred_logits);
    int inter = t.sum(t.cmul(p, t.constant(std::move(g))));
    int numer = t.affine(inter, S(2), S(1));
    int denom = t.affine(t.sum(p), S(1), gsum + S(1));
    int dice = t.affine(t.div(numer, denom), S(-1), S(1));
    return t.add(t.scale(bce, static_cast<S>(w.lambda_bce)),
                 t.scale(dice, static_cast<S>(w.lambda_dice)));
}

// L_obj: mean BCE over the plan's positives (label 1) and sampled negatives
// (label 0); every other patch is excluded and receives no gradient.
template <typename S>
int objectness_loss(ad::Tape<S>& t, int obj_logits, const grid::SupervisionPlan& plan) {
    if (t.cols(obj_logits) != 1)
        throw std::logic_error("objectness_loss: logits must be a column");
    if (plan.positive.empty() && plan.negative.empty())
        return t.constant(ad::Mat<S>::Zero(1, 1));
    ad::Mat<S> targets = ad::Mat<S>::Zero(t.rows(obj_logits), 1);
    ad::Mat<S> weights = ad::Mat<S>::Zero(t.rows(obj_logits), 1);
    for (const auto& [patch, target_index] : plan.positive) {
        targets(patch, 0) = S(1);
        weights(patch, 0) = S(1);
    }
    for (int patch : plan.negative) weights(patch, 0) = S(1);
    return t.bce_with_logits(obj_logits, std::move(targets), std::move(weights));
}

// L_sig: InfoNCE between predicted patch embeddings (rows of e_sig) and the
// frozen text embeddings of their gold names; diagonal is gold; rows that
// share a name are masked out of each other's denominators. One row -> 0.
template <typename S>
int siglip_loss(ad::Tape<S>& t, int e_sig, const std::vector<std::string>& gold_names,
                const TextEmbedder& embedder, const text::Vocab& vocab, const LossWeights& w) {
    const Eigen::Index n = t.rows(e_sig);
    if (static_cast<size_t>(n) != gold_names.size())
        throw std::logic_error("siglip_loss: one gold name per row required");
    if (n <= 1) return t.constant(ad::Mat<S>::Zero(1, 1));

    int pred = t.l2_normalize_rows(e_sig);
    int text = t.constant(embedder.embed_as<S>(vocab, gold_names));
    int logits = t.scale(t.matmul_nt(pred, text), S(1) / static_cast<S>(w.tau));

    ad::Mat<S> mask = ad::Mat<S>::Zero(n, n);
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = 0; j < n; ++j)
            if (i != j && gold_names[i] == gold_names[j]) mask(i, j) = S(-1e9);
    int masked = t.add(logits, t.constant(std::move(mask)));

    std::vector<int> diag(n);
    for (Eigen::Index i = 0; i < n; ++i) diag[i] = static_cast<int>(i);
    return t.softmax_ce(masked, diag, std::vector<S>(n, S(1)));
}

// Eq-6-style combination: plain sum (per-term weights live inside the terms).
template <typename S>
int total_loss(ad::Tape<S>& t, const std::vector<int>& components) {
    if (components.empty()) throw std::logic_error("total_loss: no components");
    int acc = components[0];
    for (size_t i = 1; i < components.size(); ++i) acc = t.add(acc, components[i]);
    return acc;
}

}  // namespace rose::losses
