#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

// Reverse-mode autodiff over dense Eigen matrices. A Tape owns every
// intermediate value; ops return integer node ids. backward() walks the
// recording in reverse creation order, so graphs must be built forward-only.
// Templated on the scalar so training runs in float and finite-difference
// gradient checks run in double.
namespace rose::ad {

template <typename S>
using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>;

// One attention block: query rows [q0, q1) attend to key rows [k0, k1).
struct AttnBlock {
    int q0 = 0, q1 = 0, k0 = 0, k1 = 0;
};

template <typename S>
class Tape {
public:
    int leaf(Mat<S> v) { return push(std::move(v)); }
    int constant(Mat<S> v) { return push(std::move(v)); }

    const Mat<S>& value(int id) const { return nodes_[check(id)].value; }
    const Mat<S>& grad(int id) const { return nodes_[check(id)].grad; }
    Eigen::Index rows(int id) const { return value(id).rows(); }
    Eigen::Index cols(int id) const { return value(id).cols(); }
    size_t size() const { return nodes_.size(); }

    void clear() { nodes_.clear(); }

    // Seeds d(root)/d(root) = 1 and propagates to every earlier node.
    // root must be a 1x1 scalar.
    void backward(int root) {
        if (value(root).size() != 1) throw std::logic_error("tape: backward root must be 1x1");
        nodes_[root].grad(0, 0) = S(1);
        for (int i = root; i >= 0; --i)
            if (nodes_[i].backward) nodes_[i].backward();
    }

    // ---- arithmetic ----

    int add(int a, int b) {
        require_same_shape(a, b, "add");
        int out = push(value(a) + value(b));
        set_backward(out, [this, a, b, out] {
            nodes_[a].grad += nodes_[out].grad;
            nodes_[b].grad += nodes_[out].grad;
        });
        return out;
    }

    int sub(int a, int b) {
        require_same_shape(a, b, "sub");
        int out = push(value(a) - value(b));
        set_backward(out, [this, a, b, out] {
            nodes_[a].grad += nodes_[out].grad;
            nodes_[b].grad -= nodes_[out].grad;
        });
        return out;
    }

    int cmul(int a, int b) {
        require_same_shape(a, b, "cmul");
        int out = push(value(a).cwiseProduct(value(b)));
        set_backward(out, [this, a, b, out] {
            nodes_[a].grad += nodes_[out].grad.cwiseProduct(nodes_[b].value);
            nodes_[b].grad += nodes_[out].grad.cwiseProduct(nodes_[a].value);
        });
        return out;
    }

    int div(int a, int b) {
        require_same_shape(a, b, "div");
        int out = push(value(a).cwiseQuotient(value(b)));
        set_backward(out, [this, a, b, out] {
            nodes_[a].grad += nodes_[out].grad.cwiseQuotient(nodes_[b].value);
            nodes_[b].grad -= nodes_[out]
                                  .grad.cwiseProduct(nodes_[out].value)
                                  .cwiseQuotient(nodes_[b].value);
        });
        return out;
    }

    // alpha * x + beta, elementwise
    int affine(int a, S alpha, S beta) {
        int out = push(Mat<S>((value(a).array() * alpha + beta).matrix()));
        set_backward(out, [this, a, out, alpha] { nodes_[a].grad += alpha * nodes_[out].grad; });
        return out;
    }

    int scale(int a, S alpha) { return affine(a, alpha, S(0)); }

    // A + 1*v with v a 1xN row vector broadcast over rows of A.
    int add_rowvec(int a, int v) {
        if (cols(a) != cols(v) || rows(v) != 1)
            throw std::logic_error("tape: add_rowvec expects 1xN bias matching A's columns");
        int out = push(value(a).rowwise() + value(v).row(0));
        set_backward(out, [this, a, v, out] {
            nodes_[a].grad += nodes_[out].grad;
            nodes_[v].grad.row(0) += nodes_[out].grad.colwise().sum();
        });
        return out;
    }

    // ---- matrix products ----

    int matmul(int a, int b) {
        if (cols(a) != rows(b)) throw std::logic_error("tape: matmul shape mismatch");
        int out = push(value(a) * value(b));
        set_backward(out, [this, a, b, out] {
            nodes_[a].grad.noalias() += nodes_[out].grad * nodes_[b].value.transpose();
            nodes_[b].grad.noalias() += nodes_[a].value.transpose() * nodes_[out].grad;
        });
        return out;
    }

    // A * B^T
    int matmul_nt(int a, int b) {
        if (cols(a) != cols(b)) throw std::logic_error("tape: matmul_nt shape mismatch");
        int out = push(value(a) * value(b).transpose());
        set_backward(out, [this, a, b, out] {
            nodes_[a].grad.noalias() += nodes_[out].grad * nodes_[b].value;
            nodes_[b].grad.noalias() += nodes_[out].grad.transpose() * nodes_[a].value;
        });
        return out;
    }

    // A^T * B
    int matmul_tn(int a, int b) {
        if (rows(a) != rows(b)) throw std::logic_error("tape: matmul_tn shape mismatch");
        int out = push(value(a).transpose() * value(b));
        set_backward(out, [this, a, b, out] {
            nodes_[a].grad.noalias() += nodes_[b].value * nodes_[out].grad.transpose();
            nodes_[b].grad.noalias() += nodes_[a].value * nodes_[out].grad;
        });
        return out;
    }

    // ---- nonlinearities ----

    int relu(int a) {
        int out = push(value(a).cwiseMax(S(0)));
        set_backward(out, [this, a, out] {
            nodes_[a].grad.array() +=
                nodes_[out].grad.array() * (nodes_[a].value.array() > S(0)).template cast<S>();
        });
        return out;
    }

    int sigmoid(int a) {
        Mat<S> y = (S(1) / (S(1) + (-value(a).array()).exp())).matrix();
        int out = push(std::move(y));
        set_backward(out, [this, a, out] {
            auto y2 = nodes_[out].value.array();
            nodes_[a].grad.array() += nodes_[out].grad.array() * y2 * (S(1) - y2);
        });
        return out;
    }

    // tanh-approximation gelu
    int gelu(int a) {
        const S c = S(0.7978845608028654);  // sqrt(2/pi)
        const S k = S(0.044715);
        auto x = value(a).array();
        Mat<S> t = (c * (x + k * x.cube())).tanh().matrix();
        Mat<S> y = (S(0.5) * x * (S(1) + t.array())).matrix();
        int out = push(std::move(y));
        set_backward(out, [this, a, out, t = std::move(t), c, k] {
            auto x2 = nodes_[a].value.array();
            auto ta = t.array();
            auto dt = (S(1) - ta.square()) * c * (S(1) + S(3) * k * x2.square());
            nodes_[a].grad.array() +=
                nodes_[out].grad.array() * (S(0.5) * (S(1) + ta) + S(0.5) * x2 * dt);
        });
        return out;
    }

    // Per-row y = x / sqrt(|x|^2 + eps)
    int l2_normalize_rows(int a, S eps = S(1e-8)) {
        Mat<S> inv(rows(a), 1);
        Mat<S> y(rows(a), cols(a));
        for (Eigen::Index r = 0; r < rows(a); ++r) {
            inv(r, 0) = S(1) / std::sqrt(value(a).row(r).squaredNorm() + eps);
            y.row(r) = value(a).row(r) * inv(r, 0);
        }
        int out = push(std::move(y));
        set_backward(out, [this, a, out, inv = std::move(inv)] {
            for (Eigen::Index r = 0; r < nodes_[a].value.rows(); ++r) {
                auto g = nodes_[out].grad.row(r);
                auto yr = nodes_[out].value.row(r);
                S dot = g.dot(yr);
                nodes_[a].grad.row(r) += (g - yr * dot) * inv(r, 0);
            }
        });
        return out;
    }

    // Row-wise layer norm with learned gain/bias (1xD each).
    int layer_norm(int a, int gamma, int beta, S eps = S(1e-5)) {
        if (rows(gamma) != 1 || rows(beta) != 1 || cols(gamma) != cols(a) || cols(beta) != cols(a))
            throw std::logic_error("tape: layer_norm gain/bias must be 1xD");
        const Eigen::Index n = rows(a), d = cols(a);
        Mat<S> xhat(n, d);
        Mat<S> istd(n, 1);
        Mat<S> y(n, d);
        for (Eigen::Index r = 0; r < n; ++r) {
            S mu = value(a).row(r).mean();
            Mat<S> centered = (value(a).row(r).array() - mu).matrix();
            S var = centered.squaredNorm() / S(d);
            istd(r, 0) = S(1) / std::sqrt(var + eps);
            xhat.row(r) = centered * istd(r, 0);
            y.row(r) = (xhat.row(r).array() * value(gamma).row(0).array() +
                        value(beta).row(0).array())
                           .matrix();
        }
        int out = push(std::move(y));
        set_backward(out, [this, a, gamma, beta, out, xhat = std::move(xhat),
                           istd = std::move(istd)] {
            const auto& g = nodes_[out].grad;
            nodes_[beta].grad.row(0) += g.colwise().sum();
            nodes_[gamma].grad.row(0) += g.cwiseProduct(xhat).colwise().sum();
            for (Eigen::Index r = 0; r < g.rows(); ++r) {
                Mat<S> gx =
                    (g.row(r).array() * nodes_[gamma].value.row(0).array()).matrix();
                S m1 = gx.mean();
                S m2 = gx.cwiseProduct(xhat.row(r)).mean();
                nodes_[a].grad.row(r) +=
                    ((gx.array() - m1 - xhat.row(r).array() * m2) * istd(r, 0)).matrix();
            }
        });
        return out;
    }

    // ---- attention ----
    //
    // Scaled dot-product attention over explicit blocks. Inside each block,
    // query q attends to keys/values k, v; softmax is over the block's key
    // range. With causal=true, local query i sees local keys j such that
    // j - i <= (block key count - block query count); with equal counts this
    // is the standard causal mask. Entries outside every block do not attend.
    int attention(int q, int k, int v, bool causal, std::vector<AttnBlock> blocks) {
        if (cols(q) != cols(k)) throw std::logic_error("tape: attention q/k width mismatch");
        if (rows(k) != rows(v)) throw std::logic_error("tape: attention k/v row mismatch");
        for (const auto& b : blocks) {
            if (b.q0 < 0 || b.q1 > rows(q) || b.k0 < 0 || b.k1 > rows(k) || b.q0 >= b.q1 ||
                b.k0 >= b.k1)
                throw std::logic_error("tape: attention block out of range");
            if (causal && (b.k1 - b.k0) < (b.q1 - b.q0))
                throw std::logic_error("tape: causal attention needs at least as many keys as queries");
        }
        const S inv_scale = S(1) / std::sqrt(static_cast<S>(cols(q)));
        Mat<S> out_v = Mat<S>::Zero(rows(q), cols(v));
        std::vector<Mat<S>> probs(blocks.size());
        for (size_t bi = 0; bi < blocks.size(); ++bi) {
            const auto& b = blocks[bi];
            const Eigen::Index qn = b.q1 - b.q0, kn = b.k1 - b.k0;
            Mat<S> scores = value(q).middleRows(b.q0, qn) *
                            value(k).middleRows(b.k0, kn).transpose() * inv_scale;
            if (causal) {
                const Eigen::Index off = kn - qn;
                for (Eigen::Index i = 0; i < qn; ++i)
                    for (Eigen::Index j = i + off + 1; j < kn; ++j)
                        scores(i, j) = S(-1e30);
            }
            Mat<S>& p = probs[bi];
            p.resize(qn, kn);
            for (Eigen::Index i = 0; i < qn; ++i) {
                S mx = scores.row(i).maxCoeff();
                p.row(i) = (scores.row(i).array() - mx).exp();
                p.row(i) /= p.row(i).sum();
            }
            out_v.middleRows(b.q0, qn).noalias() += p * value(v).middleRows(b.k0, kn);
        }
        int out = push(std::move(out_v));
        set_backward(out, [this, q, k, v, out, inv_scale, blocks = std::move(blocks),
                           probs = std::move(probs)] {
            for (size_t bi = 0; bi < blocks.size(); ++bi) {
                const auto& b = blocks[bi];
                const Eigen::Index qn = b.q1 - b.q0, kn = b.k1 - b.k0;
                const Mat<S>& p = probs[bi];
                Mat<S> g_out = nodes_[out].grad.middleRows(b.q0, qn);
                nodes_[v].grad.middleRows(b.k0, kn).noalias() +=
                    p.transpose() * g_out;
                Mat<S> gp = g_out * nodes_[v].value.middleRows(b.k0, kn).transpose();
                Mat<S> gs(qn, kn);
                for (Eigen::Index i = 0; i < qn; ++i) {
                    S dot = gp.row(i).dot(p.row(i));
                    gs.row(i) = (gp.row(i).array() - dot) * p.row(i).array();
                }
                gs *= inv_scale;
                nodes_[q].grad.middleRows(b.q0, qn).noalias() +=
                    gs * nodes_[k].value.middleRows(b.k0, kn);
                nodes_[k].grad.middleRows(b.k0, kn).noalias() +=
                    gs.transpose() * nodes_[q].value.middleRows(b.q0, qn);
            }
        });
        return out;
    }

    // ---- shape ops ----

    int concat_rows(const std::vector<int>& parts) {
        if (parts.empty()) throw std::logic_error("tape: concat_rows with no parts");
        Eigen::Index total = 0;
        const Eigen::Index width = cols(parts[0]);
        for (int p : parts) {
            if (cols(p) != width) throw std::logic_error("tape: concat_rows width mismatch");
            total += rows(p);
        }
        Mat<S> v(total, width);
        Eigen::Index at = 0;
        for (int p : parts) {
            v.middleRows(at, rows(p)) = value(p);
            at += rows(p);
        }
        int out = push(std::move(v));
        set_backward(out, [this, out, parts] {
            Eigen::Index at2 = 0;
            for (int p : parts) {
                nodes_[p].grad += nodes_[out].grad.middleRows(at2, nodes_[p].value.rows());
                at2 += nodes_[p].value.rows();
            }
        });
        return out;
    }

    int concat_cols(const std::vector<int>& parts) {
        if (parts.empty()) throw std::logic_error("tape: concat_cols with no parts");
        Eigen::Index total = 0;
        const Eigen::Index height = rows(parts[0]);
        for (int p : parts) {
            if (rows(p) != height) throw std::logic_error("tape: concat_cols height mismatch");
            total += cols(p);
        }
        Mat<S> v(height, total);
        Eigen::Index at = 0;
        for (int p : parts) {
            v.middleCols(at, cols(p)) = value(p);
            at += cols(p);
        }
        int out = push(std::move(v));
        set_backward(out, [this, out, parts] {
            Eigen::Index at2 = 0;
            for (int p : parts) {
                nodes_[p].grad += nodes_[out].grad.middleCols(at2, nodes_[p].value.cols());
                at2 += nodes_[p].value.cols();
            }
        });
        return out;
    }

    int slice_rows(int a, int r0, int count) {
        if (r0 < 0 || r0 + count > rows(a)) throw std::logic_error("tape: slice_rows out of range");
        int out = push(value(a).middleRows(r0, count));
        set_backward(out, [this, a, out, r0, count] {
            nodes_[a].grad.middleRows(r0, count) += nodes_[out].grad;
        });
        return out;
    }

    int slice_cols(int a, int c0, int count) {
        if (c0 < 0 || c0 + count > cols(a)) throw std::logic_error("tape: slice_cols out of range");
        int out = push(value(a).middleCols(c0, count));
        set_backward(out, [this, a, out, c0, count] {
            nodes_[a].grad.middleCols(c0, count) += nodes_[out].grad;
        });
        return out;
    }

    int gather_rows(int a, std::vector<int> idx) {
        Mat<S> v(static_cast<Eigen::Index>(idx.size()), cols(a));
        for (size_t i = 0; i < idx.size(); ++i) {
            if (idx[i] < 0 || idx[i] >= rows(a))
                throw std::logic_error("tape: gather_rows index out of range");
            v.row(static_cast<Eigen::Index>(i)) = value(a).row(idx[i]);
        }
        int out = push(std::move(v));
        set_backward(out, [this, a, out, idx = std::move(idx)] {
            for (size_t i = 0; i < idx.size(); ++i)
                nodes_[a].grad.row(idx[i]) += nodes_[out].grad.row(static_cast<Eigen::Index>(i));
        });
        return out;
    }

    // ---- image ops ----
    //
    // Images are (H*W) x C matrices with row-major pixel order. im2col
    // produces (Ho*Wo) x (kernel*kernel*C); convolution is then im2col
    // followed by matmul with a (kernel*kernel*C) x Cout weight.
    int im2col(int a, int h, int w, int kernel, int stride, int pad) {
        if (rows(a) != static_cast<Eigen::Index>(h) * w)
            throw std::logic_error("tape: im2col input rows != H*W");
        const int ho = (h + 2 * pad - kernel) / stride + 1;
        const int wo = (w + 2 * pad - kernel) / stride + 1;
        if (ho <= 0 || wo <= 0) throw std::logic_error("tape: im2col empty output");
        const Eigen::Index c = cols(a);
        std::vector<int> src(static_cast<size_t>(ho) * wo * kernel * kernel, -1);
        for (int oy = 0; oy < ho; ++oy)
            for (int ox = 0; ox < wo; ++ox)
                for (int ky = 0; ky < kernel; ++ky)
                    for (int kx = 0; kx < kernel; ++kx) {
                        int iy = oy * stride - pad + ky;
                        int ix = ox * stride - pad + kx;
                        if (iy < 0 || iy >= h || ix < 0 || ix >= w) continue;
                        src[(static_cast<size_t>(oy) * wo + ox) * kernel * kernel + ky * kernel + kx] =
                            iy * w + ix;
                    }
        Mat<S> v = Mat<S>::Zero(static_cast<Eigen::Index>(ho) * wo,
                                static_cast<Eigen::Index>(kernel) * kernel * c);
        for (size_t o = 0; o < static_cast<size_t>(ho) * wo; ++o)
            for (int t = 0; t < kernel * kernel; ++t) {
                int s = src[o * kernel * kernel + t];
                if (s >= 0)
                    v.block(static_cast<Eigen::Index>(o), static_cast<Eigen::Index>(t) * c, 1, c) =
                        value(a).row(s);
            }
        int out = push(std::move(v));
        set_backward(out, [this, a, out, src = std::move(src), kernel, c] {
            const int kk = kernel * kernel;
            for (size_t o = 0; o < static_cast<size_t>(nodes_[out].value.rows()); ++o)
                for (int t = 0; t < kk; ++t) {
                    int s = src[o * kk + t];
                    if (s >= 0)
                        nodes_[a].grad.row(s) +=
                            nodes_[out].grad.block(static_cast<Eigen::Index>(o),
                                                   static_cast<Eigen::Index>(t) * c, 1, c);
                }
        });
        return out;
    }

    // Bilinear upsample by an integer factor, half-pixel centers.
    int bilinear_upsample(int a, int h, int w, int factor) {
        if (rows(a) != static_cast<Eigen::Index>(h) * w)
            throw std::logic_error("tape: bilinear_upsample input rows != H*W");
        const int oh = h * factor, ow = w * factor;
        struct Tap {
            int src;
            S weight;
        };
        std::vector<std::array<Tap, 4>> taps(static_cast<size_t>(oh) * ow);
        for (int oy = 0; oy < oh; ++oy)
            for (int ox = 0; ox < ow; ++ox) {
                double sy = (oy + 0.5) / factor - 0.5;
                double sx = (ox + 0.5) / factor - 0.5;
                int y0 = static_cast<int>(std::floor(sy)), x0 = static_cast<int>(std::floor(sx));
                double fy = sy - y0, fx = sx - x0;
                auto& t4 = taps[static_cast<size_t>(oy) * ow + ox];
                int i = 0;
                for (int dy = 0; dy <= 1; ++dy)
                    for (int dx = 0; dx <= 1; ++dx) {
                        int yy = std::clamp(y0 + dy, 0, h - 1);
                        int xx = std::clamp(x0 + dx, 0, w - 1);
                        double wgt = (dy ? fy : 1.0 - fy) * (dx ? fx : 1.0 - fx);
                        t4[i++] = Tap{yy * w + xx, static_cast<S>(wgt)};
                    }
            }
        Mat<S> v = Mat<S>::Zero(static_cast<Eigen::Index>(oh) * ow, cols(a));
        for (size_t o = 0; o < taps.size(); ++o)
            for (const Tap& t : taps[o])
                v.row(static_cast<Eigen::Index>(o)) += t.weight * value(a).row(t.src);
        int out = push(std::move(v));
        set_backward(out, [this, a, out, taps = std::move(taps)] {
            for (size_t o = 0; o < taps.size(); ++o)
                for (const Tap& t : taps[o])
                    nodes_[a].grad.row(t.src) +=
                        t.weight * nodes_[out].grad.row(static_cast<Eigen::Index>(o));
        });
        return out;
    }

    // ---- reductions and losses ----

    int sum(int a) {
        Mat<S> v(1, 1);
        v(0, 0) = value(a).sum();
        int out = push(std::move(v));
        set_backward(out, [this, a, out] {
            nodes_[a].grad.array() += nodes_[out].grad(0, 0);
        });
        return out;
    }

    int mean(int a) { return scale(sum(a), S(1) / static_cast<S>(value(a).size())); }

    // Weighted mean cross-entropy over rows of a logits matrix. Row i is a
    // distribution over cols(logits) classes with gold class targets[i];
    // rows with zero weight are skipped. Normalizes by the weight sum
    // (result is 0 when all weights are 0).
    int softmax_ce(int logits, std::vector<int> targets, std::vector<S> row_weights) {
        const Eigen::Index n = rows(logits);
        if (static_cast<Eigen::Index>(targets.size()) != n ||
            static_cast<Eigen::Index>(row_weights.size()) != n)
            throw std::logic_error("tape: softmax_ce needs one target and weight per row");
        S wsum = S(0);
        for (S w : row_weights) wsum += w;
        Mat<S> probs = Mat<S>::Zero(n, cols(logits));
        S loss = S(0);
        for (Eigen::Index i = 0; i < n; ++i) {
            if (row_weights[i] == S(0)) continue;
            if (targets[i] < 0 || targets[i] >= cols(logits))
                throw std::logic_error("tape: softmax_ce target out of range");
            S mx = value(logits).row(i).maxCoeff();
            Mat<S> e = (value(logits).row(i).array() - mx).exp().matrix();
            S z = e.sum();
            probs.row(i) = e / z;
            loss += row_weights[i] * (std::log(z) + mx - value(logits)(i, targets[i]));
        }
        Mat<S> v(1, 1);
        v(0, 0) = wsum > S(0) ? loss / wsum : S(0);
        int out = push(std::move(v));
        set_backward(out, [this, logits, out, targets = std::move(targets),
                           row_weights = std::move(row_weights), probs = std::move(probs), wsum] {
            if (wsum <= S(0)) return;
            const S g = nodes_[out].grad(0, 0) / wsum;
            for (Eigen::Index i = 0; i < probs.rows(); ++i) {
                if (row_weights[i] == S(0)) continue;
                nodes_[logits].grad.row(i) += g * row_weights[i] * probs.row(i);
                nodes_[logits].grad(i, targets[i]) -= g * row_weights[i];
            }
        });
        return out;
    }

    // Weighted mean binary cross-entropy with logits. weights empty means
    // all-ones; normalizes by the weight sum (0 when the weight sum is 0).
    int bce_with_logits(int logits, Mat<S> targets, Mat<S> weights = {}) {
        if (targets.rows() != rows(logits) || targets.cols() != cols(logits))
            throw std::logic_error("tape: bce_with_logits target shape mismatch");
        if (weights.size() == 0) weights = Mat<S>::Ones(rows(logits), cols(logits));
        if (weights.rows() != rows(logits) || weights.cols() != cols(logits))
            throw std::logic_error("tape: bce_with_logits weight shape mismatch");
        const S wsum = weights.sum();
        auto z = value(logits).array();
        // max(z,0) - z*t + log(1+exp(-|z|)), numerically stable
        Mat<S> elems =
            (z.max(S(0)) - z * targets.array() +
             (-z.abs()).exp().unaryExpr([](S e) { return std::log1p(e); }))
                .matrix();
        Mat<S> v(1, 1);
        v(0, 0) = wsum > S(0) ? elems.cwiseProduct(weights).sum() / wsum : S(0);
        int out = push(std::move(v));
        set_backward(out, [this, logits, out, targets = std::move(targets),
                           weights = std::move(weights), wsum] {
            if (wsum <= S(0)) return;
            const S g = nodes_[out].grad(0, 0) / wsum;
            auto sig = (S(1) / (S(1) + (-nodes_[logits].value.array()).exp()));
            nodes_[logits].grad.array() += g * weights.array() * (sig - targets.array());
        });
        return out;
    }

private:
    struct Node {
        Mat<S> value;
        Mat<S> grad;
        std::function<void()> backward;
    };

    int push(Mat<S> v) {
        Node n;
        n.grad = Mat<S>::Zero(v.rows(), v.cols());
        n.value = std::move(v);
        nodes_.push_back(std::move(n));
        return static_cast<int>(nodes_.size()) - 1;
    }

    void set_backward(int id, std::function<void()> fn) { nodes_[id].backward = std::move(fn); }

    int check(int id) const {
        if (id < 0 || id >= static_cast<int>(nodes_.size()))
            throw std::logic_error("tape: bad node id");
        return id;
    }

    void require_same_shape(int a, int b, const char* op) const {
        if (rows(a) != rows(b) || cols(a) != cols(b))
            throw std::logic_error(std::string("tape: ") + op + " shape mismatch");
    }

    std::vector<Node> nodes_;
};

}  // namespace rose::ad
