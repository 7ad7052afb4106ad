#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numeric>

#include "mil/error.hpp"
#include "mil/gradcheck.hpp"
#include "mil/models.hpp"
#include "test_support.hpp"

namespace {

using namespace mil;
using mil::testing::random_matrix;
namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Straight-line reference forward pass over plain vectors, no graph involved.

using Vec = std::vector<double>;
using Mat = std::vector<Vec>;

Mat to_mat(const Matrix& m) {
  Mat out(m.rows, Vec(m.cols));
  for (std::size_t r = 0; r < m.rows; ++r)
    for (std::size_t c = 0; c < m.cols; ++c) out[r][c] = m(r, c);
  return out;
}

Mat ref_dense(const Mat& x, const Linear& l, bool relu) {
  const Mat w = to_mat(l.weight.value);
  Mat out(x.size(), Vec(l.out()));
  for (std::size_t i = 0; i < x.size(); ++i)
    for (std::size_t o = 0; o < l.out(); ++o) {
      double s = l.bias.value(0, o);
      for (std::size_t j = 0; j < l.in(); ++j) s += x[i][j] * w[j][o];
      out[i][o] = relu ? std::max(0.0, s) : s;
    }
  return out;
}

Vec ref_softmax(const Vec& s) {
  const double m = *std::max_element(s.begin(), s.end());
  Vec e(s.size());
  double tot = 0;
  for (std::size_t i = 0; i < s.size(); ++i) tot += e[i] = std::exp(s[i] - m);
  for (double& v : e) v /= tot;
  return e;
}

// a_k = softmax_k(w . tanh(V h_k)), z = sum_k a_k h_k
std::pair<Vec, Vec> ref_attention(const Mat& h, const AttentionParams& p) {
  const Mat v = to_mat(p.V.value);
  Vec scores(h.size());
  for (std::size_t k = 0; k < h.size(); ++k) {
    double s = 0;
    for (std::size_t l = 0; l < p.hidden(); ++l) {
      double u = 0;
      for (std::size_t m = 0; m < p.width(); ++m) u += v[l][m] * h[k][m];
      s += p.w.value(l, 0) * std::tanh(u);
    }
    scores[k] = s;
  }
  Vec a = ref_softmax(scores);
  Vec z(p.width(), 0.0);
  for (std::size_t k = 0; k < h.size(); ++k)
    for (std::size_t m = 0; m < p.width(); ++m) z[m] += a[k] * h[k][m];
  return {z, a};
}

struct RefOut {
  Vec prob;
  std::array<Vec, 3> att;
};

RefOut ref_multi_attention(const Matrix& x, const MultiAttentionParams& p) {
  const Mat h1 = ref_dense(to_mat(x), p.fc1, true);
  auto [z1, a1] = ref_attention(h1, p.att1);
  const Mat h2 = ref_dense(h1, p.fc2, true);
  auto [z2, a2] = ref_attention(h2, p.att2);
  const Mat h3 = ref_dense(h2, p.fc3, true);
  auto [z3, a3] = ref_attention(h3, p.att3);
  Vec z(z1.size());
  for (std::size_t i = 0; i < z.size(); ++i) z[i] = z1[i] + z2[i] + z3[i];
  const Mat logits = ref_dense(Mat{z}, p.head, false);
  return {ref_softmax(logits[0]), {a1, a2, a3}};
}

// ---------------------------------------------------------------------------

MultiAttentionParams small_params(std::uint64_t seed) {
  return init_multi_attention({8, 6, 5}, seed);
}

Matrix permute_rows(const Matrix& m, const std::vector<std::size_t>& perm) {
  Matrix out(m.rows, m.cols);
  for (std::size_t i = 0; i < m.rows; ++i)
    for (std::size_t c = 0; c < m.cols; ++c) out(i, c) = m(perm[i], c);
  return out;
}

TEST(AttentionPool, SingletonGivesExactOne) {
  Rng rng(1);
  auto p = small_params(3);
  ad::Graph g;
  Matrix h = random_matrix(1, 6, rng);
  auto pool = attention_pool(g, g.constant(h), std::as_const(p).att1);
  EXPECT_EQ(pool.a.value()(0, 0), 1.0);
  EXPECT_EQ(pool.z.value(), h);
}

TEST(AttentionPool, IdenticalEmbeddingsSplitEvenly) {
  Rng rng(2);
  auto p = small_params(4);
  Matrix row = random_matrix(1, 6, rng);
  Matrix h(2, 6);
  for (std::size_t r = 0; r < 2; ++r)
    for (std::size_t c = 0; c < 6; ++c) h(r, c) = row(0, c);
  ad::Graph g;
  auto pool = attention_pool(g, g.constant(h), std::as_const(p).att1);
  EXPECT_EQ(pool.a.value().data, (std::vector<double>{0.5, 0.5}));
  for (std::size_t c = 0; c < 6; ++c) EXPECT_NEAR(pool.z.value()(0, c), row(0, c), 1e-15);
}

TEST(AttentionPool, ZeroWeightVectorIsUniform) {
  Rng rng(3);
  auto p = small_params(5);
  p.att1.w.value.fill(0.0);
  for (std::size_t k : {1u, 3u, 7u}) {
    ad::Graph g;
    auto pool = attention_pool(g, g.constant(random_matrix(k, 6, rng)), std::as_const(p).att1);
    for (double a : pool.a.value().data) EXPECT_NEAR(a, 1.0 / k, 1e-15);
  }
}

TEST(AttentionPool, WidthMismatchIsDimensionError) {
  auto p = small_params(5);
  ad::Graph g;
  try {
    attention_pool(g, g.constant(Matrix(3, 4)), std::as_const(p).att1);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::dimension);
  }
}

TEST(MultiAttention, ZeroParametersGiveHalfAndUniformAttention) {
  auto p = small_params(6);
  Model m(p);
  for (auto* t : m.parameters()) t->value.fill(0.0);
  Rng rng(6);
  auto pred = predict(m, random_matrix(5, 8, rng));
  EXPECT_EQ(pred.prob[0], 0.5);
  EXPECT_EQ(pred.prob[1], 0.5);
  ASSERT_TRUE(pred.attention);
  for (const auto& layer : pred.attention->layers)
    for (double a : layer) EXPECT_NEAR(a, 0.2, 1e-15);
}

TEST(MultiAttention, MatchesStraightLineReference) {
  Rng rng(7);
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    auto p = small_params(seed);
    // nonzero biases so the bias path is exercised
    for (Linear* l : {&p.fc1, &p.fc2, &p.fc3, &p.head})
      for (double& b : l->bias.value.data) b = rng.uniform(-0.5, 0.5);
    Matrix x = random_matrix(4, 8, rng);
    auto ref = ref_multi_attention(x, p);
    auto pred = predict(Model(p), x);
    EXPECT_NEAR(pred.prob[0], ref.prob[0], 1e-9);
    EXPECT_NEAR(pred.prob[1], ref.prob[1], 1e-9);
    for (int l = 0; l < 3; ++l)
      for (std::size_t k = 0; k < 4; ++k) EXPECT_NEAR(pred.attention->layers[l][k], ref.att[l][k], 1e-9);
  }
}

TEST(MultiAttention, NormalizationAndPermutationInvariance) {
  Rng rng(8);
  auto model = Model(small_params(8));
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t k = 1 + rng.below(16);
    Matrix x = random_matrix(k, 8, rng);
    std::vector<std::size_t> perm(k);
    std::iota(perm.begin(), perm.end(), 0);
    rng.shuffle(std::span(perm));
    auto a = predict(model, x);
    auto b = predict(model, permute_rows(x, perm));
    EXPECT_NEAR(a.prob[0] + a.prob[1], 1.0, 1e-9);
    EXPECT_NEAR(a.prob[1], b.prob[1], 1e-6);
    for (int l = 0; l < 3; ++l) {
      double s = 0;
      for (std::size_t i = 0; i < k; ++i) {
        EXPECT_GE(a.attention->layers[l][i], 0.0);
        s += a.attention->layers[l][i];
        EXPECT_EQ(b.attention->layers[l][i], a.attention->layers[l][perm[i]]);
      }
      EXPECT_NEAR(s, 1.0, 1e-6);
    }
  }
}

TEST(MultiAttention, SingletonBagAttentionIsExactlyOne) {
  Rng rng(9);
  auto pred = predict(Model(small_params(9)), random_matrix(1, 8, rng));
  for (const auto& layer : pred.attention->layers) EXPECT_EQ(layer, std::vector<double>{1.0});
}

TEST(MultiAttention, InputErrors) {
  Model m(small_params(10));
  try {
    predict(m, Matrix(0, 8));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::empty_bag);
  }
  try {
    predict(m, Matrix(3, 7));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::dimension);
  }
}

TEST(MultiAttention, FourFullyConnectedMappingsAndSharedWidth) {
  auto p = init_multi_attention({20, 16, 9}, 1);
  EXPECT_EQ(p.fc1.weight.value.rows, 20u);
  EXPECT_EQ(p.fc1.out(), 16u);
  EXPECT_EQ(p.fc2.in(), 16u);
  EXPECT_EQ(p.fc3.out(), 16u);
  EXPECT_EQ(p.head.in(), 16u);
  EXPECT_EQ(p.head.out(), 2u);
  for (auto* a : {&p.att1, &p.att2, &p.att3}) {
    EXPECT_EQ(a->hidden(), 9u);
    EXPECT_EQ(a->width(), 16u);
  }
  EXPECT_EQ(Model(p).parameters().size(), 14u);
}

TEST(MultiAttention, DefaultDims) {
  MultiAttentionDims d;
  EXPECT_EQ(d.hidden, 256u);
  EXPECT_EQ(d.attention, 128u);
  EXPECT_EQ(MiNetDims{}.widths, (std::vector<std::size_t>{256, 128, 64}));
}

TEST(MiNet, IdenticalInstancesMatchSingleton) {
  Rng rng(11);
  for (auto pool : {ad::Reduction::max, ad::Reduction::mean}) {
    Model m(init_minet({8, {6, 5, 4}}, pool, 3));
    Matrix one = random_matrix(1, 8, rng);
    Matrix many(5, 8);
    for (std::size_t r = 0; r < 5; ++r)
      for (std::size_t c = 0; c < 8; ++c) many(r, c) = one(0, c);
    auto a = predict(m, one), b = predict(m, many);
    EXPECT_NEAR(a.prob[1], b.prob[1], 1e-12);
    EXPECT_FALSE(a.attention.has_value());
  }
}

TEST(MiNet, PermutationInvariance) {
  Rng rng(12);
  for (auto pool : {ad::Reduction::max, ad::Reduction::mean}) {
    Model m(init_minet({8, {6, 5, 4}}, pool, 4));
    for (int trial = 0; trial < 50; ++trial) {
      const std::size_t k = 1 + rng.below(16);
      Matrix x = random_matrix(k, 8, rng);
      std::vector<std::size_t> perm(k);
      std::iota(perm.begin(), perm.end(), 0);
      rng.shuffle(std::span(perm));
      EXPECT_NEAR(predict(m, x).prob[1], predict(m, permute_rows(x, perm)).prob[1], 1e-6);
    }
  }
}

TEST(MiNet, LinearMeanPoolMatchesAveragedInstance) {
  Rng rng(13);
  auto p = init_minet({8, {6, 5, 4}}, ad::Reduction::mean, 5);
  p.hidden_activation = ad::Activation::identity;
  for (auto& l : p.layers)
    for (double& b : l.bias.value.data) b = rng.uniform(-0.3, 0.3);
  Model m(p);
  Matrix two = random_matrix(2, 8, rng);
  Matrix avg(1, 8);
  for (std::size_t c = 0; c < 8; ++c) avg(0, c) = 0.5 * (two(0, c) + two(1, c));
  EXPECT_NEAR(predict(m, two).prob[1], predict(m, avg).prob[1], 1e-12);

  // With ReLU the identity no longer holds in general.
  Model relu(init_minet({8, {6, 5, 4}}, ad::Reduction::mean, 5));
  double worst = 0;
  for (int t = 0; t < 20; ++t) {
    Matrix x = random_matrix(2, 8, rng, -3, 3);
    Matrix a(1, 8);
    for (std::size_t c = 0; c < 8; ++c) a(0, c) = 0.5 * (x(0, c) + x(1, c));
    worst = std::max(worst, std::abs(predict(relu, x).prob[1] - predict(relu, a).prob[1]));
  }
  EXPECT_GT(worst, 1e-6);
}

TEST(MiNet, MaxPoolPicksStrongestInstance) {
  Rng rng(14);
  auto p = init_minet({8, {6, 5, 4}}, ad::Reduction::max, 6);
  ad::Graph g;
  Matrix x = random_matrix(3, 8, rng);
  auto fp = forward_minet(g, x, std::as_const(p));
  EXPECT_NEAR(fp.prob.value().data[0] + fp.prob.value().data[1], 1.0, 1e-12);
  EXPECT_TRUE(fp.attention.empty());
}

TEST(Init, DeterministicPerSeed) {
  auto a = init_multi_attention({8, 6, 5}, 42), b = init_multi_attention({8, 6, 5}, 42),
       c = init_multi_attention({8, 6, 5}, 43);
  Model ma(a), mb(b), mc(c);
  auto pa = std::as_const(ma).parameters(), pb = std::as_const(mb).parameters(),
       pc = std::as_const(mc).parameters();
  bool any_diff = false;
  for (std::size_t i = 0; i < pa.size(); ++i) {
    EXPECT_EQ(pa[i]->value, pb[i]->value);
    any_diff |= !(pa[i]->value == pc[i]->value);
  }
  EXPECT_TRUE(any_diff);
}

TEST(Init, BiasesZeroWeightsWithinBound) {
  for (Model m : {Model(init_multi_attention({12, 10, 7}, 1)),
                  Model(init_minet({12, {9, 8, 7}}, ad::Reduction::mean, 1))}) {
    for (const auto* p : std::as_const(m).parameters()) {
      if (p->name.ends_with(".bias")) {
        for (double v : p->value.data) EXPECT_EQ(v, 0.0);
      }
    }
  }
  EXPECT_EQ(xavier_bound(3, 3), 1.0);
  EXPECT_EQ(xavier_bound(6, 6), std::sqrt(0.5));
  auto p = init_minet({3, {3}}, ad::Reduction::max, 9);
  double worst = 0;
  for (double v : p.layers[0].weight.value.data) worst = std::max(worst, std::abs(v));
  EXPECT_LE(worst, 1.0);
  EXPECT_GT(worst, 0.3);
}

TEST(Init, ZeroDimsRejected) {
  EXPECT_THROW(init_multi_attention({0, 6, 5}, 1), Error);
  EXPECT_THROW(init_multi_attention({8, 0, 5}, 1), Error);
  EXPECT_THROW(init_minet({8, {6, 0}}, ad::Reduction::max, 1), Error);
}

TEST(GradientIntegrity, AllKindsPassFiniteDifferences) {
  for (const auto& r : gradient_check_suite(1)) {
    EXPECT_TRUE(r.passed) << to_string(r.kind) << " " << r.max_rel_error;
    EXPECT_LE(r.max_rel_error, 1e-4);
  }
}

TEST(GradientIntegrity, TrainingDropoutPathPassesWithFixedMask) {
  // Re-seeding the dropout stream per evaluation keeps the mask fixed.
  Rng rng(15);
  auto p = small_params(15);
  p.dropout = 0.3;
  Matrix x = random_matrix(4, 8, rng);
  auto loss = [&] {
    ad::Graph g;
    Rng drop(99);
    auto fp = forward_multi_attention(g, x, p, TrainingMode{&drop});
    return ad::cross_entropy(fp.prob, 1).value()(0, 0);
  };
  {
    ad::Graph g;
    Rng drop(99);
    auto fp = forward_multi_attention(g, x, p, TrainingMode{&drop});
    g.backward(ad::cross_entropy(fp.prob, 1));
  }
  const Matrix analytic = p.head.weight.grad;
  Matrix numeric = mil::testing::numeric_gradient(p.head.weight.value, loss);
  EXPECT_LE(mil::testing::max_rel_err(analytic, numeric), 1e-4);
}

TEST(Checkpoint, RoundTripAllKinds) {
  const fs::path dir = fs::temp_directory_path() / "mil_ckpt_test";
  fs::create_directories(dir);
  Rng rng(16);
  Matrix x = random_matrix(3, 8, rng);
  for (Model m : {Model(init_multi_attention({8, 6, 5}, 2)), Model(init_minet({8, {6, 5, 4}}, ad::Reduction::max, 2)),
                  Model(init_minet({8, {6, 5, 4}}, ad::Reduction::mean, 2))}) {
    const fs::path path = dir / (std::string(to_string(m.kind())) + ".ckpt");
    save_checkpoint(m, path);
    Model back = load_checkpoint(path);
    EXPECT_EQ(back.kind(), m.kind());
    auto pa = std::as_const(m).parameters(), pb = std::as_const(back).parameters();
    ASSERT_EQ(pa.size(), pb.size());
    for (std::size_t i = 0; i < pa.size(); ++i) EXPECT_EQ(pa[i]->value, pb[i]->value);
    EXPECT_EQ(predict(m, x).prob, predict(back, x).prob);
  }
  fs::remove_all(dir);
}

TEST(Checkpoint, HeaderLayout) {
  const fs::path path = fs::temp_directory_path() / "mil_ckpt_header.ckpt";
  Model m(init_multi_attention({8, 6, 5}, 2));
  save_checkpoint(m, path);
  std::ifstream in(path, std::ios::binary);
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), {});
  ASSERT_GE(bytes.size(), 28u);
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 8), "MILCKPT1");
  auto u32 = [&](std::size_t off) {
    return bytes[off] | (bytes[off + 1] << 8) | (bytes[off + 2] << 16) | (std::uint32_t(bytes[off + 3]) << 24);
  };
  EXPECT_EQ(u32(8), 1u);   // kind tag
  EXPECT_EQ(u32(12), 3u);  // dim count
  EXPECT_EQ(u32(16), 8u);
  EXPECT_EQ(u32(20), 6u);
  EXPECT_EQ(u32(24), 5u);
  EXPECT_EQ(bytes.size(), 28 + 8 * m.parameter_count());
  // first value is fc1.weight(0,0), little-endian double
  double first;
  std::memcpy(&first, bytes.data() + 28, 8);
  EXPECT_EQ(first, m.multi_attention().fc1.weight.value(0, 0));
  fs::remove(path);
}

TEST(Checkpoint, CorruptFilesRejected) {
  const fs::path path = fs::temp_directory_path() / "mil_ckpt_bad.ckpt";
  save_checkpoint(Model(init_multi_attention({8, 6, 5}, 2)), path);
  std::ifstream in(path, std::ios::binary);
  std::string bytes((std::istreambuf_iterator<char>(in)), {});
  in.close();
  auto expect_data_error = [&](const std::string& content) {
    std::ofstream(path, std::ios::binary) << content;
    try {
      load_checkpoint(path);
      FAIL();
    } catch (const Error& e) {
      EXPECT_EQ(e.kind(), ErrorKind::data) << e.what();
    }
  };
  std::string bad_magic = bytes;
  bad_magic[0] = 'X';
  expect_data_error(bad_magic);
  expect_data_error(bytes.substr(0, bytes.size() - 3));
  expect_data_error(bytes.substr(0, 6));
  expect_data_error(bytes + "extra");
  std::string bad_tag = bytes;
  bad_tag[8] = 9;
  expect_data_error(bad_tag);
  fs::remove(path);
  try {
    load_checkpoint(path);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::data);
  }
}

TEST(ModelKind, Names) {
  for (auto k : {ModelKind::multi_attention, ModelKind::minet_max, ModelKind::minet_mean})
    EXPECT_EQ(parse_model_kind(to_string(k)), k);
  EXPECT_THROW(parse_model_kind("clam"), Error);
}

}  // namespace
