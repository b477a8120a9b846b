#include "rose/losses.hpp"

#include "rose/common.hpp"

namespace rose::losses {

long& empty_mask_warnings() {
    static long counter = 0;
    return counter;
}

TextEmbedder::TextEmbedder(const text::Vocab& vocab, int d_s, uint64_t seed) {
    table_.resize(vocab.size(), d_s);
    const double inv = 1.0 / std::sqrt(static_cast<double>(d_s));
    for (int wi = 0; wi < vocab.size(); ++wi) {
        Rng rng(derive_seed(seed, static_cast<uint64_t>(wi)));
        for (int j = 0; j < d_s; ++j) table_(wi, j) = rng.normal() * inv;
    }
}

Eigen::MatrixXd TextEmbedder::embed(const text::Vocab& vocab,
                                    const std::vector<std::string>& names) const {
    Eigen::MatrixXd out(static_cast<Eigen::Index>(names.size()), table_.cols());
    for (size_t i = 0; i < names.size(); ++i) {
        Eigen::RowVectorXd acc = Eigen::RowVectorXd::Zero(table_.cols());
        auto tokens = text::tokenize_words(names[i]);
        if (tokens.empty()) throw ConfigError("cannot embed empty name");
        for (const auto& tok : tokens) acc += table_.row(vocab.id(tok));
        acc /= static_cast<double>(tokens.size());
        double norm = acc.norm();
        out.row(static_cast<Eigen::Index>(i)) = norm > 0 ? (acc / norm).eval() : acc;
    }
    return out;
}

}  // namespace rose::losses
