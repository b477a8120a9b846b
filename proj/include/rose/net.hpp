#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <string>
#include <vector>

#include "rose/common.hpp"
#include "rose/mask.hpp"
#include "rose/scene.hpp"
#include "rose/tape.hpp"
#include "rose/vocab.hpp"

namespace rose::net {

// Architecture hyperparameters. The defaults describe the desk-scale model;
// tests shrink them. All widths are validated together because the decoder
// reuses the mask-embedding width and the feature stride is fixed by the
// two stride-2 convolutions in the feature encoder.
struct ModelConfig {
    int image_side = 96;    // L
    int patch_side = 8;     // p
    int dim = 128;          // D: LM width, analyzer hidden width
    int dim_mask = 128;     // D_m: mask embedding / decoder width
    int dim_sig = 64;       // D_s: signature embedding width
    int vision_layers = 2;
    int language_layers = 4;
    int decoder_layers = 2;
    int heads = 4;
    int feature_stride = 4;
    int context_window = 512;
    std::string arch = "patchwise";  // "patchwise" or "vanilla"

    int grid_side() const { return image_side / patch_side; }
    int patch_count() const { return grid_side() * grid_side(); }
    int feature_side() const { return image_side / feature_stride; }

    void validate() const {
        if (image_side <= 0 || patch_side <= 0 || image_side % patch_side != 0)
            throw ConfigError("model: image_side must be a positive multiple of patch_side");
        if (dim <= 0 || dim_mask <= 0 || dim_sig <= 0)
            throw ConfigError("model: embedding widths must be positive");
        if (heads <= 0 || dim % heads != 0 || dim_mask % heads != 0)
            throw ConfigError("model: dim and dim_mask must be divisible by heads");
        if (vision_layers <= 0 || language_layers <= 0 || decoder_layers <= 0)
            throw ConfigError("model: all stacks need at least one layer");
        if (feature_stride != 4)
            throw ConfigError("model: feature encoder is built for stride 4");
        if (image_side % feature_stride != 0)
            throw ConfigError("model: image_side must be divisible by feature_stride");
        if (context_window < patch_count() + 8)
            throw ConfigError("model: context window too small for the patch grid");
        if (arch != "patchwise" && arch != "vanilla")
            throw ConfigError("model: arch must be 'patchwise' or 'vanilla'");
    }
};

// One named tensor with its gradient accumulator and Adam moments.
template <typename S>
struct Param {
    std::string name;
    ad::Mat<S> value;
    ad::Mat<S> grad;
    ad::Mat<S> m;
    ad::Mat<S> v;
};

template <typename S>
class ParamStore {
  public:
    int add(const std::string& name, int rows, int cols) {
        if (index_.count(name)) throw std::logic_error("param store: duplicate name " + name);
        int id = static_cast<int>(params_.size());
        params_.push_back({name, ad::Mat<S>::Zero(rows, cols), ad::Mat<S>::Zero(rows, cols),
                           ad::Mat<S>::Zero(rows, cols), ad::Mat<S>::Zero(rows, cols)});
        index_[name] = id;
        return id;
    }
    int find(const std::string& name) const {
        auto it = index_.find(name);
        return it == index_.end() ? -1 : it->second;
    }
    Param<S>& at(int id) { return params_.at(static_cast<size_t>(id)); }
    const Param<S>& at(int id) const { return params_.at(static_cast<size_t>(id)); }
    int count() const { return static_cast<int>(params_.size()); }
    long total_scalars() const {
        long n = 0;
        for (const auto& p : params_) n += static_cast<long>(p.value.size());
        return n;
    }
    void zero_grads() {
        for (auto& p : params_) p.grad.setZero();
    }

  private:
    std::vector<Param<S>> params_;
    std::unordered_map<std::string, int> index_;
};

struct AdamConfig {
    double lr = 3e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.0;
};

// One Adam update over every parameter. `step` is 1-based and drives the
// bias correction, so callers must pass their running update count.
template <typename S>
void adam_step(ParamStore<S>& store, const AdamConfig& opt, long step) {
    if (step < 1) throw std::logic_error("adam_step: step must be >= 1");
    const S b1 = static_cast<S>(opt.beta1), b2 = static_cast<S>(opt.beta2);
    const S c1 = static_cast<S>(1.0 - std::pow(opt.beta1, static_cast<double>(step)));
    const S c2 = static_cast<S>(1.0 - std::pow(opt.beta2, static_cast<double>(step)));
    const S lr = static_cast<S>(opt.lr), eps = static_cast<S>(opt.eps);
    const S wd = static_cast<S>(opt.weight_decay);
    for (int i = 0; i < store.count(); ++i) {
        auto& p = store.at(i);
        p.m = b1 * p.m + (S(1) - b1) * p.grad;
        p.v = (b2 * p.v.array() + (S(1) - b2) * p.grad.array().square()).matrix();
        ad::Mat<S> update =
            ((p.m.array() / c1) / ((p.v.array() / c2).sqrt() + eps)).matrix();
        if (wd != S(0)) update += wd * p.value;
        p.value -= lr * update;
    }
}

// Token layout of one multimodal sequence:
//   <BOS> USER: {instruction} <IMAGE> ASSISTANT: {answer} <EOS>
// The image placeholder occupies one slot in `ids` and expands to S^2 rows
// inside the transformer. The instruction precedes the image so that, under
// the causal mask, every patch state can already condition on the task and
// referring text it must react to.
struct SequenceLayout {
    std::vector<int> ids;
    int image_pos = -1;
    int answer_begin = 0;  // first answer token index (inclusive)
    int answer_end = 0;    // one past the trailing <EOS>; == begin when no answer
};

inline SequenceLayout build_sequence(const text::Vocab& vocab, const std::string& instruction,
                                     const std::string& answer) {
    SequenceLayout out;
    out.ids.push_back(text::Vocab::kBos);
    for (int id : text::encode(vocab, "USER: " + instruction)) out.ids.push_back(id);
    out.image_pos = static_cast<int>(out.ids.size());
    out.ids.push_back(text::Vocab::kImage);
    for (int id : text::encode(vocab, "ASSISTANT:")) out.ids.push_back(id);
    out.answer_begin = static_cast<int>(out.ids.size());
    if (!answer.empty()) {
        for (int id : text::encode(vocab, answer)) out.ids.push_back(id);
        out.ids.push_back(text::Vocab::kEos);
    }
    out.answer_end = static_cast<int>(out.ids.size());
    return out;
}

// Tape references produced by one perception forward pass. Analyzer outputs
// have one row per patch, ordered row-major over the grid.
struct Perception {
    SequenceLayout layout;
    int patch_count = 0;
    int rows_total = 0;
    int hidden = -1;      // rows_total x D, after the final layer norm
    int patch_row0 = -1;  // row index of the first patch token
    int obj = -1;         // S^2 x 1 objectness logits
    int e_msk = -1;       // S^2 x D_m
    int e_cat = -1;       // S^2 x D
    int e_sig = -1;       // S^2 x D_s

    // Maps a token index in layout.ids to its row in the expanded sequence.
    // The image placeholder maps to the first patch row.
    int row_of_token(int token_index) const {
        if (token_index < layout.image_pos) return token_index;
        if (token_index == layout.image_pos) return patch_row0;
        return token_index + patch_count - 1;
    }
};

// Teacher-forced logits over one supervision stream: row i of `logits`
// predicts `targets[i]`.
struct TextStream {
    int logits = -1;
    std::vector<int> targets;
};

// The full trainable model, templated on scalar so gradient checks can run
// in double while training runs in float. A Model owns its parameters; each
// forward pass is recorded on a caller-provided tape via bind().
template <typename S>
class Model {
  public:
    Model(ModelConfig config, text::Vocab vocab, uint64_t seed)
        : cfg_(std::move(config)), vocab_(std::move(vocab)), seed_(seed) {
        cfg_.validate();
        build_params();
        build_category_template();
    }

    const ModelConfig& config() const { return cfg_; }
    const text::Vocab& vocab() const { return vocab_; }
    ParamStore<S>& params() { return store_; }
    const ParamStore<S>& params() const { return store_; }

    // Starts recording a forward graph on `tape`. Parameters become leaves
    // lazily on first use; accumulate_grads() folds their tape gradients
    // back into the store after backward().
    void bind(ad::Tape<S>& tape) {
        tape_ = &tape;
        bound_.assign(static_cast<size_t>(store_.count()), -1);
    }

    void accumulate_grads() {
        for (int id = 0; id < store_.count(); ++id) {
            if (bound_[static_cast<size_t>(id)] >= 0)
                store_.at(id).grad += t().grad(bound_[static_cast<size_t>(id)]);
        }
    }

    // Vision encoder + causal LM over [prefix, S^2 patch tokens, suffix],
    // then the four analyzer heads on the patch rows. The optional mask
    // channel feeds the zero-initialized 4th input channel.
    Perception forward_perception(const synth::Image& image, const Mask* mask_channel,
                                  const SequenceLayout& layout) {
        auto& T = t();
        const int s2 = cfg_.patch_count();
        if (layout.image_pos < 0 || layout.image_pos >= static_cast<int>(layout.ids.size()) ||
            layout.ids[static_cast<size_t>(layout.image_pos)] != text::Vocab::kImage)
            throw std::logic_error("forward_perception: layout has no image placeholder");

        Perception out;
        out.layout = layout;
        out.patch_count = s2;
        out.rows_total = static_cast<int>(layout.ids.size()) - 1 + s2;
        if (out.rows_total > cfg_.context_window)
            throw ConfigError("forward_perception: sequence of " + std::to_string(out.rows_total) +
                              " rows exceeds the context window (" +
                              std::to_string(cfg_.context_window) + ")");

        // Vision tower: patchify -> linear embed -> bidirectional blocks.
        int img = T.constant(image_with_mask(image, mask_channel));
        int patches = T.im2col(img, cfg_.image_side, cfg_.image_side, cfg_.patch_side,
                               cfg_.patch_side, 0);
        int x = linear(patches, vis_patch_w_, vis_patch_b_);
        x = T.add(x, use(vis_pos_));
        std::vector<ad::AttnBlock> vblocks{{0, s2, 0, s2}};
        for (const auto& blk : vis_) x = block_self(x, blk, vblocks, false);
        int vtok = linear(T.gelu(linear(x, conn_w1_, conn_b1_)), conn_w2_, conn_b2_);

        // Language tower: token embeddings with the image slot replaced by
        // the S^2 connector outputs.
        std::vector<int> pre(layout.ids.begin(), layout.ids.begin() + layout.image_pos);
        std::vector<int> post(layout.ids.begin() + layout.image_pos + 1, layout.ids.end());
        std::vector<int> parts;
        if (!pre.empty()) parts.push_back(T.gather_rows(use(embed_), pre));
        parts.push_back(vtok);
        if (!post.empty()) parts.push_back(T.gather_rows(use(embed_), post));
        int seq = T.concat_rows(parts);
        int h = lm_stack(T.add(seq, T.slice_rows(use(lm_pos_), 0, out.rows_total)),
                         {{0, out.rows_total, 0, out.rows_total}});

        out.hidden = h;
        out.patch_row0 = layout.image_pos;
        int pr = T.slice_rows(h, layout.image_pos, s2);
        out.obj = mlp2(pr, obj_);
        out.e_msk = mlp2(pr, msk_);
        out.e_cat = mlp2(pr, cat_);
        out.e_sig = mlp2(pr, sig_);
        return out;
    }

    // Teacher-forced logits for the answer span of a perception pass (the
    // counting stream). Rows are contiguous because the answer sits after
    // the image expansion.
    TextStream answer_stream(const Perception& p) {
        if (p.layout.answer_begin >= p.layout.answer_end)
            throw std::logic_error("answer_stream: layout has no answer span");
        auto& T = t();
        int first_row = p.row_of_token(p.layout.answer_begin) - 1;
        int n = p.layout.answer_end - p.layout.answer_begin;
        TextStream s;
        s.logits = T.matmul_nt(T.slice_rows(p.hidden, first_row, n), use(embed_));
        s.targets.assign(p.layout.ids.begin() + p.layout.answer_begin,
                         p.layout.ids.begin() + p.layout.answer_end);
        return s;
    }

    // Logits predicting layout.ids[token_index] from the preceding row.
    // Used by autoregressive generation.
    int next_token_logits(const Perception& p, int token_index) {
        auto& T = t();
        return T.matmul_nt(T.slice_rows(p.hidden, p.row_of_token(token_index) - 1, 1),
                           use(embed_));
    }

    // Feature encoder for the mask branch: two stride-2 convs and a 1x1
    // projection, giving an (L/4)^2 x D_m map with its own position table.
    int encode_features(const synth::Image& image, const Mask* mask_channel) {
        auto& T = t();
        const int side = cfg_.image_side;
        int img = T.constant(image_with_mask(image, mask_channel));
        int c1 = T.relu(linear(T.im2col(img, side, side, 3, 2, 1), f1_w_, f1_b_));
        int c2 = T.relu(linear(T.im2col(c1, side / 2, side / 2, 3, 2, 1), f2_w_, f2_b_));
        int c3 = linear(c2, f3_w_, f3_b_);
        return T.add(c3, use(dec_pos_));
    }

    // Embedding-prompted mask decoding. Each row of e_msk_rows is one prompt
    // token; prompts cross-attend to the feature map, and the final logits
    // are the inner product of the updated prompt with the projected map,
    // upsampled to full resolution. Returns (L*L) x N logits, one column per
    // prompt; prompts never see each other, so columns are independent.
    int decode_masks(int e_msk_rows, int features) {
        auto& T = t();
        if (static_cast<int>(T.cols(e_msk_rows)) != cfg_.dim_mask)
            throw std::logic_error("decode_masks: prompt width must be dim_mask");
        int p = e_msk_rows;
        for (const auto& blk : dec_) p = block_cross(p, features, blk);
        int pm = T.matmul(T.layer_norm(p, use(dec_ln_g_), use(dec_ln_b_)), use(dec_wm_));
        int fm = T.matmul(features, use(dec_wf_));
        int logits = T.scale(T.matmul_nt(fm, pm),
                             S(1) / static_cast<S>(std::sqrt(static_cast<double>(cfg_.dim_mask))));
        return T.bilinear_upsample(logits, cfg_.feature_side(), cfg_.feature_side(),
                                   cfg_.feature_stride);
    }

    // Teacher-forced category decoding. Every row of e_cat_rows becomes one
    // sequence "<BOS> USER: <CATEGORY> ... ASSISTANT: Sure, it is {name} <EOS>"
    // with the <CATEGORY> embedding replaced by that row; the sequences run
    // as independent causal blocks of one batched pass, so swapping two rows
    // (and their names) swaps the corresponding logit rows exactly.
    TextStream category_stream(int e_cat_rows, const std::vector<std::string>& gold_names) {
        auto& T = t();
        const int n = static_cast<int>(T.rows(e_cat_rows));
        if (n != static_cast<int>(gold_names.size()))
            throw std::logic_error("category_stream: one gold name per row required");
        if (n == 0) throw std::logic_error("category_stream: empty batch");

        std::vector<std::vector<int>> ids(static_cast<size_t>(n));
        for (int i = 0; i < n; ++i) {
            ids[static_cast<size_t>(i)] = cat_prefix_;
            for (int id : text::encode(vocab_, gold_names[static_cast<size_t>(i)]))
                ids[static_cast<size_t>(i)].push_back(id);
            ids[static_cast<size_t>(i)].push_back(text::Vocab::kEos);
        }
        int h = category_hidden(e_cat_rows, ids);

        std::vector<int> rows;
        std::vector<int> targets;
        int offset = 0;
        for (int i = 0; i < n; ++i) {
            const auto& seq = ids[static_cast<size_t>(i)];
            for (int j = cat_answer_begin_; j < static_cast<int>(seq.size()); ++j) {
                rows.push_back(offset + j - 1);
                targets.push_back(seq[static_cast<size_t>(j)]);
            }
            offset += static_cast<int>(seq.size());
        }
        TextStream s;
        s.logits = T.matmul_nt(T.gather_rows(h, rows), use(embed_));
        s.targets = std::move(targets);
        return s;
    }

    // Greedy category decoding for inference: all rows advance in lockstep,
    // each emitting at most `kMaxCategoryTokens` tokens or stopping at
    // <EOS>. An empty decode falls back to "unknown".
    std::vector<std::string> generate_categories(const ad::Mat<S>& e_cat_values) {
        const int n = static_cast<int>(e_cat_values.rows());
        if (n == 0) return {};
        ad::Tape<S>* saved_tape = tape_;
        std::vector<int> saved_bound = bound_;

        std::vector<std::vector<int>> generated(static_cast<size_t>(n));
        std::vector<bool> done(static_cast<size_t>(n), false);
        for (int step = 0; step < kMaxCategoryTokens; ++step) {
            ad::Tape<S> tape;
            bind(tape);
            int e = tape.constant(e_cat_values);
            std::vector<std::vector<int>> ids(static_cast<size_t>(n));
            for (int i = 0; i < n; ++i) {
                ids[static_cast<size_t>(i)] = cat_prefix_;
                for (int id : generated[static_cast<size_t>(i)])
                    ids[static_cast<size_t>(i)].push_back(id);
            }
            int h = category_hidden(e, ids);
            std::vector<int> last_rows;
            int offset = 0;
            for (int i = 0; i < n; ++i) {
                last_rows.push_back(offset + static_cast<int>(ids[static_cast<size_t>(i)].size()) - 1);
                offset += static_cast<int>(ids[static_cast<size_t>(i)].size());
            }
            int logits = tape.matmul_nt(tape.gather_rows(h, last_rows), use(embed_));
            const ad::Mat<S>& lv = tape.value(logits);
            bool all_done = true;
            for (int i = 0; i < n; ++i) {
                if (done[static_cast<size_t>(i)]) continue;
                Eigen::Index best = 0;
                lv.row(i).maxCoeff(&best);
                if (static_cast<int>(best) == text::Vocab::kEos) {
                    done[static_cast<size_t>(i)] = true;
                } else {
                    generated[static_cast<size_t>(i)].push_back(static_cast<int>(best));
                    all_done = false;
                }
            }
            if (all_done) break;
        }
        tape_ = saved_tape;
        bound_ = std::move(saved_bound);

        std::vector<std::string> names;
        names.reserve(static_cast<size_t>(n));
        for (int i = 0; i < n; ++i) {
            std::string name = text::decode(vocab_, generated[static_cast<size_t>(i)]);
            names.push_back(name.empty() ? std::string("unknown") : name);
        }
        return names;
    }

    // Greedy text generation over the full multimodal sequence; used by the
    // vanilla baseline, which reads its answer back out of the text stream.
    // Returns the generated ids, including the terminal <EOS> if reached.
    std::vector<int> generate_answer(const synth::Image& image, const Mask* mask_channel,
                                     const SequenceLayout& prefix, int max_new) {
        if (prefix.answer_begin != prefix.answer_end)
            throw std::logic_error("generate_answer: prefix already has an answer");
        ad::Tape<S>* saved_tape = tape_;
        std::vector<int> saved_bound = bound_;

        SequenceLayout layout = prefix;
        std::vector<int> generated;
        for (int step = 0; step < max_new; ++step) {
            ad::Tape<S> tape;
            bind(tape);
            Perception p = forward_perception(image, mask_channel, layout);
            int logits = tape.matmul_nt(tape.slice_rows(p.hidden, p.rows_total - 1, 1),
                                        use(embed_));
            Eigen::Index best = 0;
            tape.value(logits).row(0).maxCoeff(&best);
            generated.push_back(static_cast<int>(best));
            layout.ids.push_back(static_cast<int>(best));
            if (static_cast<int>(best) == text::Vocab::kEos) break;
        }
        tape_ = saved_tape;
        bound_ = std::move(saved_bound);
        return generated;
    }

    // Analyzer heads applied to arbitrary hidden rows (the perception pass
    // uses them on patch rows; the vanilla baseline reuses the mask head on
    // its <SEG> rows).
    int head_obj(int x) { return mlp2(x, obj_); }
    int head_msk(int x) { return mlp2(x, msk_); }
    int head_cat(int x) { return mlp2(x, cat_); }
    int head_sig(int x) { return mlp2(x, sig_); }

    static constexpr int kMaxCategoryTokens = 4;

  private:
    struct Mlp2 {
        int w1 = -1, b1 = -1, w2 = -1, b2 = -1;
    };
    struct Block {
        int ln1_g = -1, ln1_b = -1;
        int wq = -1, bq = -1, wk = -1, bk = -1, wv = -1, bv = -1, wo = -1, bo = -1;
        int ln2_g = -1, ln2_b = -1;
        int w1 = -1, b1 = -1, w2 = -1, b2 = -1;
    };

    ad::Tape<S>& t() {
        if (!tape_) throw std::logic_error("model: no tape bound");
        return *tape_;
    }

    int use(int pid) {
        auto& slot = bound_.at(static_cast<size_t>(pid));
        if (slot < 0) slot = t().leaf(store_.at(pid).value);
        return slot;
    }

    int linear(int x, int w, int b) { return t().add_rowvec(t().matmul(x, use(w)), use(b)); }

    int mlp2(int x, const Mlp2& m) {
        return linear(t().relu(linear(x, m.w1, m.b1)), m.w2, m.b2);
    }

    int mha(int xq, int xkv, const Block& b, const std::vector<ad::AttnBlock>& blocks,
            bool causal) {
        auto& T = t();
        int q = linear(xq, b.wq, b.bq);
        int k = linear(xkv, b.wk, b.bk);
        int v = linear(xkv, b.wv, b.bv);
        const int dh = static_cast<int>(T.cols(q)) / cfg_.heads;
        std::vector<int> heads;
        heads.reserve(static_cast<size_t>(cfg_.heads));
        for (int hI = 0; hI < cfg_.heads; ++hI) {
            heads.push_back(T.attention(T.slice_cols(q, hI * dh, dh), T.slice_cols(k, hI * dh, dh),
                                        T.slice_cols(v, hI * dh, dh), causal, blocks));
        }
        return linear(T.concat_cols(heads), b.wo, b.bo);
    }

    int block_self(int x, const Block& b, const std::vector<ad::AttnBlock>& blocks, bool causal) {
        auto& T = t();
        int a = T.layer_norm(x, use(b.ln1_g), use(b.ln1_b));
        x = T.add(x, mha(a, a, b, blocks, causal));
        int m = T.layer_norm(x, use(b.ln2_g), use(b.ln2_b));
        return T.add(x, linear(T.gelu(linear(m, b.w1, b.b1)), b.w2, b.b2));
    }

    // Pre-LN cross-attention: the prompt stream attends to the (constant)
    // feature memory; the features are never updated.
    int block_cross(int p, int feats, const Block& b) {
        auto& T = t();
        std::vector<ad::AttnBlock> blocks{
            {0, static_cast<int>(T.rows(p)), 0, static_cast<int>(T.rows(feats))}};
        int a = T.layer_norm(p, use(b.ln1_g), use(b.ln1_b));
        p = T.add(p, mha(a, feats, b, blocks, false));
        int m = T.layer_norm(p, use(b.ln2_g), use(b.ln2_b));
        return T.add(p, linear(T.gelu(linear(m, b.w1, b.b1)), b.w2, b.b2));
    }

    int lm_stack(int x, const std::vector<ad::AttnBlock>& blocks) {
        for (const auto& blk : lm_) x = block_self(x, blk, blocks, true);
        return t().layer_norm(x, use(lnf_g_), use(lnf_b_));
    }

    // Runs the causal LM over a batch of category sequences laid out as
    // independent blocks. Position embeddings restart at 0 in every block.
    int category_hidden(int e_cat_rows, const std::vector<std::vector<int>>& ids) {
        auto& T = t();
        std::vector<int> parts;
        std::vector<int> positions;
        std::vector<ad::AttnBlock> blocks;
        int pre_node = -1;
        int offset = 0;
        for (size_t i = 0; i < ids.size(); ++i) {
            const auto& seq = ids[i];
            if (static_cast<int>(seq.size()) > cfg_.context_window)
                throw ConfigError("category_hidden: sequence exceeds the context window");
            std::vector<int> pre(seq.begin(), seq.begin() + cat_slot_);
            std::vector<int> post(seq.begin() + cat_slot_ + 1, seq.end());
            if (pre_node < 0) pre_node = T.gather_rows(use(embed_), pre);
            parts.push_back(pre_node);  // identical prefix for every sequence
            parts.push_back(T.slice_rows(e_cat_rows, static_cast<int>(i), 1));
            parts.push_back(T.gather_rows(use(embed_), post));
            for (int j = 0; j < static_cast<int>(seq.size()); ++j) positions.push_back(j);
            blocks.push_back({offset, offset + static_cast<int>(seq.size()), offset,
                              offset + static_cast<int>(seq.size())});
            offset += static_cast<int>(seq.size());
        }
        int seq = T.concat_rows(parts);
        int pos = T.gather_rows(use(lm_pos_), positions);
        return lm_stack(T.add(seq, pos), blocks);
    }

    // Builds the (L*L) x 4 input: three image channels plus the mask
    // channel, zero when absent.
    ad::Mat<S> image_with_mask(const synth::Image& image, const Mask* mask_channel) const {
        const int pixels = cfg_.image_side * cfg_.image_side;
        if (static_cast<int>(image.rows()) != pixels || image.cols() != 3)
            throw std::logic_error("model: image must be (L*L) x 3");
        ad::Mat<S> out = ad::Mat<S>::Zero(pixels, 4);
        out.leftCols(3) = image.template cast<S>();
        if (mask_channel) {
            if (mask_channel->h != cfg_.image_side || mask_channel->w != cfg_.image_side)
                throw std::logic_error("model: mask channel must match the image side");
            for (int i = 0; i < pixels; ++i)
                out(i, 3) = static_cast<S>(mask_channel->data[static_cast<size_t>(i)]);
        }
        return out;
    }

    int add_normal(const std::string& name, int rows, int cols, double stddev) {
        int id = store_.add(name, rows, cols);
        Rng rng(derive_seed(seed_, fnv1a64(name)));
        auto& v = store_.at(id).value;
        for (int r = 0; r < rows; ++r)
            for (int c = 0; c < cols; ++c) v(r, c) = static_cast<S>(rng.normal(0.0, stddev));
        return id;
    }

    int add_zeros(const std::string& name, int rows, int cols) {
        return store_.add(name, rows, cols);
    }

    int add_ones(const std::string& name, int rows, int cols) {
        int id = store_.add(name, rows, cols);
        store_.at(id).value.setOnes();
        return id;
    }

    Block add_block(const std::string& prefix, int width, int layers_in_stack) {
        const double base = 0.02;
        const double resid = base / std::sqrt(2.0 * layers_in_stack);
        Block b;
        b.ln1_g = add_ones(prefix + ".ln1.g", 1, width);
        b.ln1_b = add_zeros(prefix + ".ln1.b", 1, width);
        b.wq = add_normal(prefix + ".attn.wq", width, width, base);
        b.bq = add_zeros(prefix + ".attn.bq", 1, width);
        b.wk = add_normal(prefix + ".attn.wk", width, width, base);
        b.bk = add_zeros(prefix + ".attn.bk", 1, width);
        b.wv = add_normal(prefix + ".attn.wv", width, width, base);
        b.bv = add_zeros(prefix + ".attn.bv", 1, width);
        b.wo = add_normal(prefix + ".attn.wo", width, width, resid);
        b.bo = add_zeros(prefix + ".attn.bo", 1, width);
        b.ln2_g = add_ones(prefix + ".ln2.g", 1, width);
        b.ln2_b = add_zeros(prefix + ".ln2.b", 1, width);
        b.w1 = add_normal(prefix + ".mlp.w1", width, 4 * width, base);
        b.b1 = add_zeros(prefix + ".mlp.b1", 1, 4 * width);
        b.w2 = add_normal(prefix + ".mlp.w2", 4 * width, width, resid);
        b.b2 = add_zeros(prefix + ".mlp.b2", 1, width);
        return b;
    }

    Mlp2 add_mlp2(const std::string& prefix, int din, int dhid, int dout) {
        Mlp2 m;
        m.w1 = add_normal(prefix + ".w1", din, dhid, 0.02);
        m.b1 = add_zeros(prefix + ".b1", 1, dhid);
        m.w2 = add_normal(prefix + ".w2", dhid, dout, 0.02);
        m.b2 = add_zeros(prefix + ".b2", 1, dout);
        return m;
    }

    void build_params() {
        const int d = cfg_.dim, dm = cfg_.dim_mask;
        const int s2 = cfg_.patch_count();
        const int f2 = cfg_.feature_side() * cfg_.feature_side();
        const int patch_in = cfg_.patch_side * cfg_.patch_side * 4;

        vis_patch_w_ = add_normal("vis.patch.w", patch_in, d, 0.02);
        // Zero the rows that read the mask channel so a 3-channel input is
        // bit-identical to a 4-channel input with an all-zero mask, and the
        // channel only starts learning once refinement examples arrive.
        {
            auto& w = store_.at(vis_patch_w_).value;
            for (int r = 3; r < patch_in; r += 4) w.row(r).setZero();
        }
        vis_patch_b_ = add_zeros("vis.patch.b", 1, d);
        vis_pos_ = add_normal("vis.pos", s2, d, 0.01);
        for (int l = 0; l < cfg_.vision_layers; ++l)
            vis_.push_back(add_block("vis.l" + std::to_string(l), d, cfg_.vision_layers));
        conn_w1_ = add_normal("conn.w1", d, d, 0.02);
        conn_b1_ = add_zeros("conn.b1", 1, d);
        conn_w2_ = add_normal("conn.w2", d, d, 0.02);
        conn_b2_ = add_zeros("conn.b2", 1, d);

        embed_ = add_normal("lm.embed", vocab_.size(), d, 0.02);
        lm_pos_ = add_normal("lm.pos", cfg_.context_window, d, 0.01);
        for (int l = 0; l < cfg_.language_layers; ++l)
            lm_.push_back(add_block("lm.l" + std::to_string(l), d, cfg_.language_layers));
        lnf_g_ = add_ones("lm.lnf.g", 1, d);
        lnf_b_ = add_zeros("lm.lnf.b", 1, d);

        obj_ = add_mlp2("head.obj", d, d, 1);
        msk_ = add_mlp2("head.msk", d, d, cfg_.dim_mask);
        cat_ = add_mlp2("head.cat", d, d, d);
        sig_ = add_mlp2("head.sig", d, d, cfg_.dim_sig);

        f1_w_ = add_normal("fenc.c1.w", 3 * 3 * 4, 32, std::sqrt(2.0 / (3 * 3 * 4)));
        f1_b_ = add_zeros("fenc.c1.b", 1, 32);
        f2_w_ = add_normal("fenc.c2.w", 3 * 3 * 32, 64, std::sqrt(2.0 / (3 * 3 * 32)));
        f2_b_ = add_zeros("fenc.c2.b", 1, 64);
        f3_w_ = add_normal("fenc.c3.w", 64, dm, std::sqrt(2.0 / 64));
        f3_b_ = add_zeros("fenc.c3.b", 1, dm);
        dec_pos_ = add_normal("dec.pos", f2, dm, 0.01);
        for (int l = 0; l < cfg_.decoder_layers; ++l)
            dec_.push_back(add_block("dec.l" + std::to_string(l), dm, cfg_.decoder_layers));
        dec_ln_g_ = add_ones("dec.out.ln.g", 1, dm);
        dec_ln_b_ = add_zeros("dec.out.ln.b", 1, dm);
        dec_wm_ = add_normal("dec.out.wm", dm, dm, 0.02);
        dec_wf_ = add_normal("dec.out.wf", dm, dm, 0.02);
    }

    void build_category_template() {
        cat_prefix_.push_back(text::Vocab::kBos);
        for (int id : text::encode(vocab_,
                                   "USER: <CATEGORY> Please decode this linguistic embedding "
                                   "into a noun concept. ASSISTANT: Sure, it is"))
            cat_prefix_.push_back(id);
        cat_slot_ = -1;
        for (int j = 0; j < static_cast<int>(cat_prefix_.size()); ++j)
            if (cat_prefix_[static_cast<size_t>(j)] == text::Vocab::kCategory) cat_slot_ = j;
        // The loss mask covers exactly the name tokens and <EOS>; the fixed
        // "Sure, it is" lead-in is context, not a target.
        cat_answer_begin_ = static_cast<int>(cat_prefix_.size());
        if (cat_slot_ < 0) throw std::logic_error("model: malformed category template");
    }

    ModelConfig cfg_;
    text::Vocab vocab_;
    uint64_t seed_;
    ParamStore<S> store_;

    int vis_patch_w_ = -1, vis_patch_b_ = -1, vis_pos_ = -1;
    std::vector<Block> vis_;
    int conn_w1_ = -1, conn_b1_ = -1, conn_w2_ = -1, conn_b2_ = -1;
    int embed_ = -1, lm_pos_ = -1;
    std::vector<Block> lm_;
    int lnf_g_ = -1, lnf_b_ = -1;
    Mlp2 obj_, msk_, cat_, sig_;
    int f1_w_ = -1, f1_b_ = -1, f2_w_ = -1, f2_b_ = -1, f3_w_ = -1, f3_b_ = -1;
    int dec_pos_ = -1;
    std::vector<Block> dec_;
    int dec_ln_g_ = -1, dec_ln_b_ = -1, dec_wm_ = -1, dec_wf_ = -1;

    std::vector<int> cat_prefix_;
    int cat_slot_ = -1;
    int cat_answer_begin_ = -1;

    ad::Tape<S>* tape_ = nullptr;
    std::vector<int> bound_;
};

}  // namespace rose::net
