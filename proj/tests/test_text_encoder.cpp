#include <cmath>
#include <cstring>
#include <sstream>

#include <gtest/gtest.h>

#include "rgin/gradcheck_suite.hpp"
#include "rgin/text_encoder.hpp"

using namespace rgin;

namespace {

Vocabulary shapes_vocab() { return Vocabulary({"the", "red", "circle", "square", "left", "of"}); }

void fill(Tensor<double>& t, std::vector<double> v) {
  ASSERT_EQ(t.size(), v.size());
  std::copy(v.begin(), v.end(), t.mutable_data().begin());
}

double sig(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// One GRU step written out per unit: r, z, candidate with the reset applied to the
// hidden projection (bias included), h' = (1 - z) c + z h.
std::vector<double> gru_oracle(const std::vector<double>& x, const std::vector<double>& h,
                               const std::vector<double>& Wx, const std::vector<double>& bx,
                               const std::vector<double>& Wh, const std::vector<double>& bh, std::size_t n) {
  const std::size_t E = x.size();
  auto proj = [&](const std::vector<double>& v, const std::vector<double>& W, const std::vector<double>& b,
                  std::size_t in, std::size_t col) {
    double s = b[col];
    for (std::size_t i = 0; i < in; ++i) s += v[i] * W[i * 3 * n + col];
    return s;
  };
  std::vector<double> out(n);
  for (std::size_t j = 0; j < n; ++j) {
    double r = sig(proj(x, Wx, bx, E, j) + proj(h, Wh, bh, n, j));
    double z = sig(proj(x, Wx, bx, E, n + j) + proj(h, Wh, bh, n, n + j));
    double c = std::tanh(proj(x, Wx, bx, E, 2 * n + j) + r * proj(h, Wh, bh, n, 2 * n + j));
    out[j] = (1 - z) * c + z * h[j];
  }
  return out;
}

}  // namespace

TEST(Vocabulary, ReservedIdsAndRoundTrip) {
  auto v = shapes_vocab();
  EXPECT_EQ(Vocabulary::kUnknown, 0);
  EXPECT_EQ(Vocabulary::kPad, 1);
  EXPECT_EQ(v.id("the"), 2);
  EXPECT_EQ(v.id("of"), 7);
  EXPECT_EQ(v.size(), 8u);
  EXPECT_EQ(v.token(v.id("circle")), "circle");
  std::stringstream ss;
  v.save(ss);
  EXPECT_EQ(ss.str(), "the\nred\ncircle\nsquare\nleft\nof\n");  // line index = id - 2
  auto back = Vocabulary::load(ss);
  EXPECT_TRUE(back == v);
}

TEST(Tokenize, LowercaseWhitespaceAndOov) {
  auto v = shapes_vocab();
  auto a = tokenize("Red Circle", v);
  EXPECT_EQ(a.ids, (std::vector<int>{v.id("red"), v.id("circle")}));
  EXPECT_EQ(a.text, "Red Circle");
  EXPECT_EQ(tokenize("red  circle", v).ids, a.ids);
  EXPECT_EQ(tokenize("  red\tcircle ", v).ids, a.ids);
  EXPECT_EQ(tokenize("xyzzy circle", v).ids, (std::vector<int>{0, v.id("circle")}));
}

TEST(Tokenize, EmptyAndTruncation) {
  auto v = shapes_vocab();
  EXPECT_THROW(tokenize("", v), std::invalid_argument);
  EXPECT_THROW(tokenize("   \t ", v), std::invalid_argument);
  std::string longer;
  for (int i = 0; i < 20; ++i) longer += "red ";
  EXPECT_EQ(tokenize(longer, v).ids.size(), kMaxExpressionTokens);
}

TEST(GruCell, SingleTokenMatchesScalarOracle) {
  Init init(1);
  TextEncoder<double> enc(init, 3, 2, 2);
  // embeddings for ids 0..2
  fill(enc.embedding_table, {0.0, 0.0, 0.0, 0.0, 0.5, -0.3});
  const std::vector<double> fWx{0.1, -0.2, 0.3, 0.05, 0.4, -0.1, -0.3, 0.2, 0.1, -0.4, 0.25, 0.15};
  const std::vector<double> fbx{0.01, -0.02, 0.03, 0.0, 0.05, -0.05};
  const std::vector<double> fWh{0.2, 0.1, -0.1, 0.3, 0.2, 0.0, 0.0, -0.2, 0.4, 0.1, -0.3, 0.2};
  const std::vector<double> fbh{0.02, 0.01, -0.03, 0.04, 0.1, -0.2};
  const std::vector<double> bWx{-0.1, 0.2, 0.15, -0.05, 0.3, 0.1, 0.2, -0.2, -0.1, 0.35, 0.05, -0.15};
  const std::vector<double> bbx{0.0, 0.02, -0.01, 0.03, -0.04, 0.06};
  const std::vector<double> bWh(12, 0.05);
  const std::vector<double> bbh{0.03, -0.01, 0.02, 0.0, -0.1, 0.05};
  fill(enc.forward_cell.input.weight, fWx);
  fill(enc.forward_cell.input.bias, fbx);
  fill(enc.forward_cell.hidden.weight, fWh);
  fill(enc.forward_cell.hidden.bias, fbh);
  fill(enc.backward_cell.input.weight, bWx);
  fill(enc.backward_cell.input.bias, bbx);
  fill(enc.backward_cell.hidden.weight, bWh);
  fill(enc.backward_cell.hidden.bias, bbh);

  Tape<double> tape;
  auto f = enc.encode(tape, std::vector<std::vector<int>>{{2}});
  const std::vector<double> x{0.5, -0.3}, h0{0.0, 0.0};
  auto hf = gru_oracle(x, h0, fWx, fbx, fWh, fbh, 2);
  auto hb = gru_oracle(x, h0, bWx, bbx, bWh, bbh, 2);
  ASSERT_EQ(f.shape(), (Shape{1, 2}));
  EXPECT_NEAR(f[0], hf[0] + hb[0], 1e-6);
  EXPECT_NEAR(f[1], hf[1] + hb[1], 1e-6);

  // Two tokens: the forward direction chains two oracle steps.
  Tape<double> t2;
  auto g = enc.run_direction(t2, enc.forward_cell, {{2, 0}}, false);
  auto step1 = gru_oracle(x, h0, fWx, fbx, fWh, fbh, 2);
  auto step2 = gru_oracle({0.0, 0.0}, step1, fWx, fbx, fWh, fbh, 2);
  EXPECT_NEAR(g[0], step2[0], 1e-12);
  EXPECT_NEAR(g[1], step2[1], 1e-12);
}

TEST(TextEncoder, ReverseDirectionEqualsForwardOnReversedSequence) {
  Init init(4);
  TextEncoder<float> enc(init, 10, 8, 12);
  std::vector<int> s{2, 5, 7, 3, 9};
  std::vector<int> rev(s.rbegin(), s.rend());
  Tape<float> tape;
  auto a = enc.run_direction(tape, enc.forward_cell, {s}, true);
  auto b = enc.run_direction(tape, enc.forward_cell, {rev}, false);
  EXPECT_EQ(std::memcmp(a.raw(), b.raw(), a.size() * sizeof(float)), 0);
}

TEST(TextEncoder, OutputDimensionIndependentOfLength) {
  Init init(5);
  TextEncoder<float> enc(init, 10, 8, 12);
  Tape<float> tape;
  for (std::size_t len : {1u, 3u, 16u}) {
    std::vector<int> s(len, 4);
    EXPECT_EQ(enc.encode(tape, std::vector<std::vector<int>>{s}).shape(), (Shape{1, 12}));
  }
}

TEST(TextEncoder, DeterministicAndOrderSensitive) {
  Init init(6);
  TextEncoder<float> enc(init, 10, 8, 12);
  Tape<float> tape;
  auto a = enc.encode(tape, std::vector<std::vector<int>>{{2, 5, 7}});
  auto b = enc.encode(tape, std::vector<std::vector<int>>{{2, 5, 7}});
  auto c = enc.encode(tape, std::vector<std::vector<int>>{{5, 2, 7}});
  EXPECT_EQ(std::memcmp(a.raw(), b.raw(), a.size() * sizeof(float)), 0);
  double diff = 0;
  for (std::size_t i = 0; i < a.size(); ++i) diff += std::abs(a[i] - c[i]);
  EXPECT_GT(diff, 1e-4);
  for (float v : a.data()) EXPECT_TRUE(std::isfinite(v));
}

TEST(TextEncoder, PaddedBatchMatchesIndividualEncodes) {
  Init init(7);
  TextEncoder<double> enc(init, 10, 8, 12);
  std::vector<std::vector<int>> batch{{2, 5, 7, 3}, {9}, {4, 4}};
  Tape<double> tape;
  auto all = enc.encode(tape, batch);
  for (std::size_t b = 0; b < batch.size(); ++b) {
    auto one = enc.encode(tape, std::vector<std::vector<int>>{batch[b]});
    for (std::size_t j = 0; j < 12; ++j) EXPECT_NEAR(all[b * 12 + j], one[j], 1e-12);
  }
}

TEST(TextEncoder, Errors) {
  Init init(8);
  TextEncoder<float> enc(init, 10, 8, 12);
  Tape<float> tape;
  EXPECT_THROW(enc.encode(tape, std::vector<std::vector<int>>{{}}), std::invalid_argument);
  EXPECT_THROW(enc.encode(tape, std::vector<std::vector<int>>{{2, 10}}), std::out_of_range);
  EXPECT_THROW(enc.encode(tape, std::vector<std::vector<int>>{{-1}}), std::out_of_range);
}

TEST(TextEncoder, GradientsThroughUnrolledGru) {
  for (const auto& c : gradsuite::block_cases()) {
    if (c.name != "text_encoder") continue;
    auto r = c.run({});
    EXPECT_TRUE(r.passed) << r.max_rel_error;
    return;
  }
  FAIL() << "text_encoder gradient case missing";
}
