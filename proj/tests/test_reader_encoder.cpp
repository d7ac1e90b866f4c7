#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "d2nn/model.hpp"

namespace {

using namespace d2nn;
using Vec = std::vector<double>;

constexpr std::size_t kDim = 5;

struct Reader {
  ParamStore store;
  ReaderEncoderParams p;
  explicit Reader(std::uint64_t seed, const Variant& v = {}, ReaderCombine combine = ReaderCombine::Sum) {
    ModelConfig cfg;
    cfg.dim = kDim;
    cfg.attention_dim = 4;
    cfg.combine = combine;
    std::mt19937_64 rng(seed);
    p = make_reader_encoder_params(store, cfg, v, rng);
    std::mt19937_64 brng(seed * 31 + 7);
    for (auto& param : store)
      if (param->name.find(".b_") != std::string::npos || param->name.find("bias") != std::string::npos)
        fill_uniform(param->value.data, 0.3, brng);
  }
};

std::vector<Var> random_clicks(Graph& g, std::size_t n, std::mt19937_64& rng) {
  std::vector<Var> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(g.input(uniform_tensor({kDim}, 1.0, rng)));
  return out;
}

double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

// Hand-rolled reference LSTM step.
std::pair<Vec, Vec> lstm_oracle(const Vec& h, const Vec& c, const Vec& x, const LstmParams& p) {
  Vec hx(h);
  hx.insert(hx.end(), x.begin(), x.end());
  auto affine = [&](const Parameter* w, const Parameter* b, std::size_t r) {
    double z = b->value[r];
    for (std::size_t k = 0; k < hx.size(); ++k) z += w->value.at(r, k) * hx[k];
    return z;
  };
  Vec h2(kDim), c2(kDim);
  for (std::size_t r = 0; r < kDim; ++r) {
    const double f = sigmoid(affine(p.w_forget, p.b_forget, r));
    const double i = sigmoid(affine(p.w_input, p.b_input, r));
    const double cand = std::tanh(affine(p.w_cell, p.b_cell, r));
    const double o = sigmoid(affine(p.w_output, p.b_output, r));
    c2[r] = f * c[r] + i * cand;
    h2[r] = o * std::tanh(c2[r]);
  }
  return {h2, c2};
}

void expect_near(const Vec& a, const Vec& b, double tol) {
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], b[i], tol) << "index " << i;
}

TEST(LongTerm, EmptySingleAndSum) {
  Graph g;
  for (double v : long_term_interest(g, {}, kDim).value().data) EXPECT_EQ(v, 0.0);
  std::mt19937_64 rng(1);
  auto clicks = random_clicks(g, 3, rng);
  EXPECT_EQ(long_term_interest(g, std::span(clicks).first(1), kDim).value().data, clicks[0].value().data);
  const Vec sum = long_term_interest(g, clicks, kDim).value().data;
  for (std::size_t j = 0; j < kDim; ++j)
    EXPECT_NEAR(sum[j], clicks[0].value()[j] + clicks[1].value()[j] + clicks[2].value()[j], 1e-12);
}

TEST(LongTerm, PermutationInvariant) {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 20; ++trial) {
    Graph g;
    auto clicks = random_clicks(g, 7, rng);
    const Vec a = long_term_interest(g, clicks, kDim).value().data;
    std::shuffle(clicks.begin(), clicks.end(), rng);
    const Vec b = long_term_interest(g, clicks, kDim).value().data;
    expect_near(a, b, 1e-12);
  }
}

TEST(Lstm, ZeroParametersKeepZeroState) {
  Reader r(3);
  for (auto& p : r.store) std::fill(p->value.data.begin(), p->value.data.end(), 0.0);
  Graph g;
  std::mt19937_64 rng(3);
  const auto clicks = random_clicks(g, 4, rng);
  const auto st = short_term_interest(g, clicks, r.p.lstm, kDim);
  for (const Var& h : st.hidden)
    for (double v : h.value().data) EXPECT_EQ(v, 0.0);
  const auto one = short_term_interest(g, std::span(clicks).first(1), r.p.lstm, kDim);
  for (double v : one.last.value().data) EXPECT_EQ(v, 0.0);
}

TEST(Lstm, GatesStayInsideTheUnitInterval) {
  Reader r(4);
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 50; ++trial) {
    Graph g;
    Var x = g.input(uniform_tensor({kDim}, 50.0, rng));
    Var h = g.input(uniform_tensor({kDim}, 1.0, rng));
    const Var parts[] = {h, x};
    Var gate = ops::sigmoid(
        ops::add(ops::matvec(g.param(*r.p.lstm.w_forget), ops::concat(parts)), g.param(*r.p.lstm.b_forget)));
    for (double v : gate.value().data) {
      EXPECT_GE(v, 0.0);
      EXPECT_LE(v, 1.0);
    }
    const auto [h2, c2] = lstm_step(g, h, g.input(Tensor(Shape{kDim})), x, r.p.lstm);
    for (double v : h2.value().data) EXPECT_LT(std::abs(v), 1.0);
  }
}

TEST(Lstm, OneStepMatchesHandRolledReference) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Reader r(10 + seed);
    std::mt19937_64 rng(seed);
    Graph g;
    Var h = g.input(uniform_tensor({kDim}, 1.0, rng));
    Var c = g.input(uniform_tensor({kDim}, 1.0, rng));
    Var x = g.input(uniform_tensor({kDim}, 1.0, rng));
    const auto [h2, c2] = lstm_step(g, h, c, x, r.p.lstm);
    const auto [eh, ec] = lstm_oracle(h.value().data, c.value().data, x.value().data, r.p.lstm);
    expect_near(h2.value().data, eh, 1e-12);
    expect_near(c2.value().data, ec, 1e-12);
  }
}

TEST(ShortTerm, EmptyWindowAndStepComposition) {
  Reader r(5);
  Graph g;
  const auto empty = short_term_interest(g, {}, r.p.lstm, kDim);
  EXPECT_TRUE(empty.hidden.empty());
  for (double v : empty.last.value().data) EXPECT_EQ(v, 0.0);

  std::mt19937_64 rng(5);
  const auto clicks = random_clicks(g, 3, rng);
  const auto st = short_term_interest(g, clicks, r.p.lstm, kDim);
  Vec h(kDim, 0.0), c(kDim, 0.0);
  for (const Var& x : clicks) std::tie(h, c) = lstm_oracle(h, c, x.value().data, r.p.lstm);
  expect_near(st.last.value().data, h, 1e-12);
  ASSERT_EQ(st.hidden.size(), 3u);
  EXPECT_EQ(st.hidden.back().id, st.last.id);
}

TEST(ShortTerm, IsOrderSensitive) {
  std::size_t differing = 0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Reader r(100 + seed);
    std::mt19937_64 rng(seed);
    Graph g;
    auto clicks = random_clicks(g, 4, rng);
    const Vec a = short_term_interest(g, clicks, r.p.lstm, kDim).last.value().data;
    std::reverse(clicks.begin(), clicks.end());
    const Vec b = short_term_interest(g, clicks, r.p.lstm, kDim).last.value().data;
    double diff = 0.0;
    for (std::size_t j = 0; j < kDim; ++j) diff = std::max(diff, std::abs(a[j] - b[j]));
    differing += diff > 1e-6;
  }
  EXPECT_GE(differing, 1u);
}

TEST(Diversity, OneStepAndIdenticalSteps) {
  Reader r(6);
  Graph g;
  std::mt19937_64 rng(6);
  auto one = random_clicks(g, 1, rng);
  const auto a = diversity_attention(g, one, r.p.diversity_attn, kDim);
  EXPECT_EQ(a.weights, Vec{1.0});
  expect_near(a.pooled.value().data, one[0].value().data, 1e-15);
  std::vector<Var> same(5, one[0]);
  expect_near(diversity_attention(g, same, r.p.diversity_attn, kDim).pooled.value().data, one[0].value().data, 1e-15);
  const auto none = diversity_attention(g, {}, r.p.diversity_attn, kDim);
  EXPECT_TRUE(none.weights.empty());
  for (double v : none.pooled.value().data) EXPECT_EQ(v, 0.0);
}

TEST(Diversity, MatchesBruteForceAndStaysInTheConvexHull) {
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    Reader r(200 + seed);
    std::mt19937_64 rng(seed);
    Graph g;
    const auto hidden = random_clicks(g, 4, rng);
    const auto a = diversity_attention(g, hidden, r.p.diversity_attn, kDim);
    const auto& att = r.p.diversity_attn;
    Vec mu;
    for (const Var& hv : hidden) {
      double s = 0.0;
      for (std::size_t k = 0; k < att.proj->value.rows(); ++k) {
        double z = att.bias->value[k];
        for (std::size_t j = 0; j < kDim; ++j) z += att.proj->value.at(k, j) * hv.value()[j];
        s += att.query->value[k] * std::tanh(z);
      }
      mu.push_back(s);
    }
    const double mx = *std::max_element(mu.begin(), mu.end());
    double z = 0.0;
    for (double& m : mu) z += m = std::exp(m - mx);
    for (double& m : mu) m /= z;
    expect_near(a.weights, mu, 1e-12);
    EXPECT_NEAR(std::accumulate(a.weights.begin(), a.weights.end(), 0.0), 1.0, 1e-9);
    for (std::size_t j = 0; j < kDim; ++j) {
      double expected = 0.0, lo = INFINITY, hi = -INFINITY;
      for (std::size_t i = 0; i < 4; ++i) {
        expected += mu[i] * hidden[i].value()[j];
        lo = std::min(lo, hidden[i].value()[j]);
        hi = std::max(hi, hidden[i].value()[j]);
      }
      EXPECT_NEAR(a.pooled.value()[j], expected, 1e-10);
      EXPECT_GE(a.pooled.value()[j], lo - 1e-12);
      EXPECT_LE(a.pooled.value()[j], hi + 1e-12);
    }
  }
}

TEST(Combine, SumRule) {
  Reader r(7);
  Graph g;
  std::mt19937_64 rng(7);
  Var lt = g.input(uniform_tensor({kDim}, 1.0, rng));
  Var st = g.input(uniform_tensor({kDim}, 1.0, rng));
  Var zero = g.input(Tensor(Shape{kDim}));
  EXPECT_EQ(combine_reader(g, lt, zero, r.p).value().data, lt.value().data);
  for (double v : combine_reader(g, zero, zero, r.p).value().data) EXPECT_EQ(v, 0.0);
  const Vec sum = combine_reader(g, lt, st, r.p).value().data;
  for (std::size_t j = 0; j < kDim; ++j) EXPECT_NEAR(sum[j], lt.value()[j] + st.value()[j], 1e-15);
}

TEST(Combine, ConcatProjectionSwitch) {
  Reader r(8, {}, ReaderCombine::ConcatProject);
  ASSERT_NE(r.p.combine, nullptr);
  Graph g;
  std::mt19937_64 rng(8);
  Var lt = g.input(uniform_tensor({kDim}, 1.0, rng));
  Var st = g.input(uniform_tensor({kDim}, 1.0, rng));
  const Vec out = combine_reader(g, lt, st, r.p).value().data;
  for (std::size_t i = 0; i < kDim; ++i) {
    double e = 0.0;
    for (std::size_t j = 0; j < kDim; ++j)
      e += r.p.combine->value.at(i, j) * lt.value()[j] + r.p.combine->value.at(i, kDim + j) * st.value()[j];
    EXPECT_NEAR(out[i], e, 1e-12);
  }
}

TEST(Variants, ReaderPathsPerBaseModel) {
  std::mt19937_64 rng(9);
  Graph g;
  const auto clicks = random_clicks(g, 6, rng);
  const std::size_t window = 4;

  Reader full(9);
  const auto rf = encode_reader(g, clicks, full.p, {}, window);
  const Vec lt = long_term_interest(g, clicks, kDim).value().data;
  const auto st = short_term_interest(g, std::span(clicks).last(window), full.p.lstm, kDim);
  const auto div = diversity_attention(g, st.hidden, full.p.diversity_attn, kDim);
  Vec expected(kDim);
  for (std::size_t j = 0; j < kDim; ++j) expected[j] = lt[j] + div.pooled.value()[j];
  expect_near(rf.vector.value().data, expected, 1e-12);
  EXPECT_EQ(rf.diversity_weights.size(), window);

  Variant lti = Variant::parse("lti");
  Reader rl(9, lti);
  EXPECT_EQ(rl.p.lstm.w_forget, nullptr);
  expect_near(encode_reader(g, clicks, rl.p, lti, window).vector.value().data, lt, 1e-12);

  Variant sti = Variant::parse("sti");
  expect_near(encode_reader(g, clicks, full.p, sti, window).vector.value().data, div.pooled.value().data, 1e-12);

  Variant no_attn = Variant::parse("d2nn+no_reader_attn");
  Vec bypass(kDim);
  for (std::size_t j = 0; j < kDim; ++j) bypass[j] = lt[j] + st.last.value()[j];
  expect_near(encode_reader(g, clicks, full.p, no_attn, window).vector.value().data, bypass, 1e-12);

  Variant mh = Variant::parse("multihead:5");
  Reader rm(9, mh);
  EXPECT_EQ(encode_reader(g, clicks, rm.p, mh, window).vector.shape(), Shape{kDim});
}

TEST(Variants, EmptyHistoryScoresFromZeroVectors) {
  Reader r(10);
  Graph g;
  const auto rep = encode_reader(g, {}, r.p, {}, 4);
  for (double v : rep.vector.value().data) EXPECT_EQ(v, 0.0);
  EXPECT_TRUE(rep.diversity_weights.empty());
}

TEST(Gradients, FullReaderPathMatchesFiniteDifferences) {
  for (const char* name : {"d2nn", "multihead:5", "sti"}) {
    const Variant v = Variant::parse(name);
    Reader r(11, v);
    std::mt19937_64 rng(11);
    const Tensor probe = uniform_tensor({kDim}, 1.0, rng);
    std::vector<Tensor> inputs;
    for (int i = 0; i < 5; ++i) inputs.push_back(uniform_tensor({kDim}, 1.0, rng));
    LossFn loss = [&](Graph& g) {
      std::vector<Var> clicks;
      for (const auto& t : inputs) clicks.push_back(g.input(t));
      return ops::dot(encode_reader(g, clicks, r.p, v, 3).vector, g.input(probe));
    };
    std::vector<ParamCoord> coords;
    for (auto& p : r.store)
      for (std::size_t k = 0; k < std::min<std::size_t>(8, p->value.size()); ++k)
        coords.push_back({p.get(), (k * 7919) % p->value.size()});
    EXPECT_LT(finite_diff_check(loss, coords, 1e-5), 1e-3) << name;
  }
}

}  // namespace
