#pragma once

#include <algorithm>
#include <cctype>
#include <fstream>
#include <iostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "rgin/nn.hpp"

namespace rgin {

/// Token <-> id map. Id 0 is the unknown token, id 1 is padding; known tokens
/// start at kFirstId.
class Vocabulary {
 public:
  static constexpr int kUnknown = 0;
  static constexpr int kPad = 1;
  static constexpr int kFirstId = 2;

  Vocabulary() = default;
  explicit Vocabulary(const std::vector<std::string>& tokens) {
    for (const auto& t : tokens) add(t);
  }

  int add(const std::string& token) {
    if (auto it = ids_.find(token); it != ids_.end()) return it->second;
    int id = kFirstId + static_cast<int>(tokens_.size());
    tokens_.push_back(token);
    ids_.emplace(token, id);
    return id;
  }

  int id(const std::string& token) const {
    auto it = ids_.find(token);
    return it == ids_.end() ? kUnknown : it->second;
  }

  const std::string& token(int id) const {
    static const std::string unk = "<unk>", pad = "<pad>";
    if (id == kUnknown) return unk;
    if (id == kPad) return pad;
    return tokens_.at(static_cast<std::size_t>(id - kFirstId));
  }

  /// Number of ids including the reserved ones.
  std::size_t size() const { return tokens_.size() + kFirstId; }
  const std::vector<std::string>& tokens() const { return tokens_; }

  /// One token per line; line index = id - kFirstId.
  void save(std::ostream& os) const {
    for (const auto& t : tokens_) os << t << '\n';
  }
  static Vocabulary load(std::istream& is) {
    Vocabulary v;
    std::string line;
    while (std::getline(is, line)) {
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line.empty()) continue;
      v.add(line);
    }
    return v;
  }

  bool operator==(const Vocabulary& o) const { return tokens_ == o.tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> ids_;
};

struct TokenSequence {
  std::vector<int> ids;
  std::string text;
};

inline constexpr std::size_t kMaxExpressionTokens = 16;

/// Lowercases and splits on whitespace. Unknown words map to id 0.
inline TokenSequence tokenize(const std::string& expression, const Vocabulary& vocab,
                              std::size_t max_len = kMaxExpressionTokens) {
  std::string lower = expression;
  std::transform(lower.begin(), lower.end(), lower.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  std::istringstream is(lower);
  TokenSequence seq{{}, expression};
  std::string word;
  while (is >> word) seq.ids.push_back(vocab.id(word));
  if (seq.ids.empty()) throw std::invalid_argument("tokenize: empty expression");
  if (seq.ids.size() > max_len) {
    std::clog << "[warn] expression truncated to " << max_len << " tokens: \"" << expression << "\"\n";
    seq.ids.resize(max_len);
  }
  return seq;
}

/// Standard GRU cell, gates laid out [reset | update | candidate]:
///   r = sig(x Wr + br + h Ur + cr), z = sig(x Wz + bz + h Uz + cz)
///   c = tanh(x Wc + bc + r * (h Uc + cc)),  h' = (1 - z) * c + z * h
template <class T>
struct GruCell {
  Linear<T> input;   // [E, 3n]
  Linear<T> hidden;  // [n, 3n]
  std::size_t hidden_size = 0;

  GruCell() = default;
  GruCell(Init& init, std::size_t embed, std::size_t n) : hidden_size(n) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(n));
    input = Linear<T>(init, embed, 3 * n, true, bound);
    hidden = Linear<T>(init, n, 3 * n, true, bound);
  }

  Tensor<T> step(Tape<T>& tape, const Tensor<T>& x, const Tensor<T>& h) const {
    auto gx = split_channels(tape, input(tape, x), 3);
    auto gh = split_channels(tape, hidden(tape, h), 3);
    auto r = sigmoid(tape, add(tape, gx[0], gh[0]));
    auto z = sigmoid(tape, add(tape, gx[1], gh[1]));
    auto c = rgin::tanh(tape, add(tape, gx[2], mul(tape, r, gh[2])));
    // (1 - z) * c + z * h == c + z * (h - c)
    return add(tape, c, mul(tape, z, sub(tape, h, c)));
  }

  void register_params(ParamSet<T>& ps, const std::string& prefix) const {
    input.register_params(ps, prefix + ".input");
    hidden.register_params(ps, prefix + ".hidden");
  }
};

/// Embedding + bidirectional GRU; the textual feature is the sum of the last
/// forward and last backward hidden states.
template <class T>
struct TextEncoder {
  Tensor<T> embedding_table;  // [V, E]
  GruCell<T> forward_cell, backward_cell;

  TextEncoder() = default;
  TextEncoder(Init& init, std::size_t vocab_size, std::size_t embed, std::size_t hidden)
      : embedding_table(init.uniform<T>({vocab_size, embed}, std::sqrt(3.0))),
        forward_cell(init, embed, hidden),
        backward_cell(init, embed, hidden) {}

  std::size_t hidden_size() const { return forward_cell.hidden_size; }

  /// Runs one direction over a padded batch. Sequences shorter than the longest are
  /// masked so the hidden state freezes after (forward) or stays zero before
  /// (reverse) their real tokens; the returned state is therefore each sequence's
  /// own last state.
  Tensor<T> run_direction(Tape<T>& tape, const GruCell<T>& cell,
                          const std::vector<std::vector<int>>& batch, bool reverse) const {
    const std::size_t B = batch.size();
    std::size_t L = 0;
    for (const auto& s : batch) {
      if (s.empty()) throw std::invalid_argument("encode: empty token sequence");
      L = std::max(L, s.size());
    }
    auto h = Tensor<T>::zeros({B, cell.hidden_size});
    for (std::size_t i = 0; i < L; ++i) {
      const std::size_t t = reverse ? L - 1 - i : i;
      std::vector<int> ids(B);
      std::vector<T> mask(B);
      bool all_live = true;
      for (std::size_t b = 0; b < B; ++b) {
        const bool live = t < batch[b].size();
        ids[b] = live ? batch[b][t] : Vocabulary::kPad;
        mask[b] = live ? T(1) : T(0);
        all_live = all_live && live;
      }
      auto x = embedding(tape, embedding_table, ids);
      auto h_new = cell.step(tape, x, h);
      if (all_live) {
        h = h_new;
      } else {
        Tensor<T> m({B}, std::move(mask));
        h = add(tape, h, scale_rows(tape, sub(tape, h_new, h), m));
      }
    }
    return h;
  }

  /// [B, n] textual features for a batch of token id sequences.
  Tensor<T> encode(Tape<T>& tape, const std::vector<std::vector<int>>& batch) const {
    auto fwd = run_direction(tape, forward_cell, batch, false);
    auto bwd = run_direction(tape, backward_cell, batch, true);
    return add(tape, fwd, bwd);
  }

  Tensor<T> encode(Tape<T>& tape, const TokenSequence& seq) const {
    return encode(tape, std::vector<std::vector<int>>{seq.ids});
  }

  void register_params(ParamSet<T>& ps, const std::string& prefix) const {
    ps.add(prefix + ".embedding", embedding_table);
    forward_cell.register_params(ps, prefix + ".gru_fwd");
    backward_cell.register_params(ps, prefix + ".gru_bwd");
  }
};

}  // namespace rgin
