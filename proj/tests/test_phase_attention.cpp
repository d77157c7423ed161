#include <gtest/gtest.h>

#include <cmath>
#include <complex>
#include <numeric>

#include "cope/phase_attention.hpp"

using namespace cope;

namespace {

ComplexMatrix random_complex(std::size_t r, std::size_t c, Rng& rng) {
  return {normal_matrix(r, c, 1.0, rng), normal_matrix(r, c, 1.0, rng)};
}

EmbeddedBatch batch_from(const RealMatrix& re, const RealMatrix& im) {
  EmbeddedBatch b;
  b.z = ComplexMatrix(re, im);
  b.pad_mask.assign(re.rows(), false);
  for (std::size_t i = 0; i < re.rows(); ++i) b.positions.push_back(i);
  return b;
}

ScoreVariant variant_of(ScoreKind k) { return ScoreVariant{k, 0.2}; }

}  // namespace

TEST(ComplexProjection, MatchesElementwiseComplexProduct) {
  Rng rng(1);
  const ComplexMatrix z = random_complex(3, 4, rng);
  const ComplexProjection p(normal_matrix(4, 2, 1.0, rng), normal_matrix(4, 2, 1.0, rng));
  const ComplexMatrix q = project_complex(z, p);
  for (std::size_t r = 0; r < 3; ++r)
    for (std::size_t c = 0; c < 2; ++c) {
      std::complex<double> acc = 0.0;
      for (std::size_t k = 0; k < 4; ++k)
        acc += std::complex<double>(z.re(r, k), z.im(r, k)) *
               std::complex<double>(p.w_real.value(k, c), p.w_imag.value(k, c));
      EXPECT_NEAR(q.re(r, c), acc.real(), 1e-12);
      EXPECT_NEAR(q.im(r, c), acc.imag(), 1e-12);
    }
}

TEST(ComplexProjection, RealInputAndRealWeightStayReal) {
  Rng rng(2);
  const ComplexMatrix z(normal_matrix(3, 4, 1.0, rng), RealMatrix(3, 4));
  const ComplexProjection p(normal_matrix(4, 2, 1.0, rng), RealMatrix(4, 2));
  const ComplexMatrix q = project_complex(z, p);
  EXPECT_EQ(q.im, RealMatrix(3, 2));
  EXPECT_LE(max_abs_diff(q.re, matmul(z.re, p.w_real.value)), 1e-15);
  EXPECT_THROW(project_complex(random_complex(3, 5, rng), p), DimensionError);
  EXPECT_THROW(ComplexProjection(RealMatrix(4, 2), RealMatrix(4, 3)), DimensionError);
}

TEST(ComplexScores, ConjugatesTheKey) {
  const ComplexMatrix q(RealMatrix{{3.0}}, RealMatrix{{4.0}});
  const ComplexMatrix one(RealMatrix{{1.0}}, RealMatrix{{0.0}});
  ComplexMatrix a = complex_scores(q, one);
  EXPECT_EQ(a.re(0, 0), 3.0);
  EXPECT_EQ(a.im(0, 0), 4.0);
  a = complex_scores(one, q);
  EXPECT_EQ(a.re(0, 0), 3.0);
  EXPECT_EQ(a.im(0, 0), -4.0);
}

TEST(PhaseAttention, SingleTokenAttendsToItself) {
  for (ScoreKind k : kAllScoreKinds) {
    Rng rng(3);
    PhaseAttentionLayer layer(8, 2, variant_of(k), rng);
    std::vector<RealMatrix> w;
    phase_attend(batch_from(normal_matrix(1, 8, 1.0, rng), normal_matrix(1, 8, 1.0, rng)), layer, &w);
    ASSERT_EQ(w.size(), 2u);
    for (const auto& m : w) EXPECT_NEAR(m(0, 0), 1.0, 1e-15) << to_string(k);
  }
}

// With no imaginary input, no imaginary weights and the real-part score, the
// layer is ordinary scaled dot-product attention with the same weights.
TEST(PhaseAttention, RealDegenerateCaseIsStandardAttention) {
  const std::size_t d = 8, heads = 2, dk = 4, T = 5;
  Rng rng(4);
  PhaseAttentionLayer phase(d, heads, variant_of(ScoreKind::real), rng);
  StandardAttentionLayer standard(d, heads, rng);
  for (std::size_t h = 0; h < heads; ++h) {
    phase.q_proj[h].w_imag.value.fill(0.0);
    phase.k_proj[h].w_imag.value.fill(0.0);
    for (std::size_t r = 0; r < d; ++r)
      for (std::size_t c = 0; c < dk; ++c) {
        standard.w_q.value(r, h * dk + c) = phase.q_proj[h].w_real.value(r, c);
        standard.w_k.value(r, h * dk + c) = phase.k_proj[h].w_real.value(r, c);
        standard.w_v.value(r, h * dk + c) = phase.w_v[h].value(r, c);
      }
  }
  standard.w_o.value = phase.w_o.value;

  const RealMatrix x = normal_matrix(T, d, 1.0, rng);
  const RealMatrix out_phase = phase_attend(batch_from(x, RealMatrix(T, d)), phase);
  Tape tape;
  Binder bind(tape);
  std::vector<std::size_t> pos(T);
  std::iota(pos.begin(), pos.end(), 0);
  const RealMatrix out_std =
      standard.forward(bind, tape.constant(x), pos, std::vector<bool>(T, false), ForwardMode{}).value();
  EXPECT_LE(max_abs_diff(out_phase, out_std), 1e-12);
}

TEST(PhaseAttention, IdenticalTokensAtDifferentPositions) {
  Rng rng(5);
  const TokenEmbeddingTable table(normal_matrix(4, 8, 1.0, rng));
  const std::vector<std::size_t> tokens{2, 3, 3, 3, 3, 2};
  for (ScoreKind k : kAllScoreKinds) {
    Rng layer_rng(6);
    PhaseAttentionLayer layer(8, 1, variant_of(k), layer_rng);

    std::vector<RealMatrix> w_cope;
    phase_attend(embed_cope(tokens, table, PositionalSpec{}), layer, &w_cope);
    const double p0 = w_cope[0](0, 0), p5 = w_cope[0](0, 5);
    EXPECT_GT(std::abs(p0 / (p0 + p5) - 0.5), 1e-6) << to_string(k);

    PositionalSpec none;
    none.scheme = PositionalScheme::none;
    std::vector<RealMatrix> w_none;
    phase_attend(embed_additive(tokens, table, none), layer, &w_none);
    EXPECT_NEAR(w_none[0](0, 0), w_none[0](0, 5), 1e-15) << to_string(k);
  }
}

TEST(PhaseAttention, PermutationEquivariantWithoutPositions) {
  Rng rng(7);
  PhaseAttentionLayer layer(8, 2, variant_of(ScoreKind::hybrid), rng);
  const RealMatrix x = normal_matrix(4, 8, 1.0, rng);
  const std::vector<std::size_t> perm{2, 0, 3, 1};
  RealMatrix xp(4, 8);
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t c = 0; c < 8; ++c) xp(i, c) = x(perm[i], c);
  const RealMatrix y = phase_attend(batch_from(x, RealMatrix(4, 8)), layer);
  const RealMatrix yp = phase_attend(batch_from(xp, RealMatrix(4, 8)), layer);
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t c = 0; c < 8; ++c) EXPECT_NEAR(yp(i, c), y(perm[i], c), 1e-12);
}

TEST(PhaseAttention, PositionalImaginaryPartBreaksEquivariance) {
  Rng rng(8);
  PhaseAttentionLayer layer(8, 2, variant_of(ScoreKind::phase), rng);
  const TokenEmbeddingTable table(normal_matrix(6, 8, 1.0, rng));
  const RealMatrix y = phase_attend(embed_cope({1, 2, 3, 4}, table, PositionalSpec{}), layer);
  const RealMatrix yp = phase_attend(embed_cope({3, 1, 4, 2}, table, PositionalSpec{}), layer);
  const std::vector<std::size_t> perm{2, 0, 3, 1};
  double diff = 0.0;
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t c = 0; c < 8; ++c) diff = std::max(diff, std::abs(yp(i, c) - y(perm[i], c)));
  EXPECT_GT(diff, 1e-6);
}

TEST(PhaseAttention, PadKeysGetNoWeight) {
  Rng rng(9);
  const TokenEmbeddingTable table(normal_matrix(6, 8, 1.0, rng));
  for (ScoreKind k : kAllScoreKinds) {
    Rng layer_rng(10);
    PhaseAttentionLayer layer(8, 2, variant_of(k), layer_rng);
    std::vector<RealMatrix> w;
    const RealMatrix y = phase_attend(embed_cope({4, 5, kPadId, 3, kPadId}, table, PositionalSpec{}), layer, &w);
    EXPECT_TRUE(y.all_finite());
    for (const auto& m : w)
      for (std::size_t r = 0; r < 5; ++r) {
        EXPECT_EQ(m(r, 2), 0.0);
        EXPECT_EQ(m(r, 4), 0.0);
        EXPECT_NEAR(m(r, 0) + m(r, 1) + m(r, 3), 1.0, 1e-12);
      }
  }
}

TEST(PhaseAttention, RejectsBadShapes) {
  Rng rng(11);
  EXPECT_THROW(PhaseAttentionLayer(8, 3, ScoreVariant{}, rng), ConfigError);
  EXPECT_THROW(PhaseAttentionLayer(8, 2, ScoreVariant{ScoreKind::hybrid_norm}, rng, AttentionMode::linear),
               ConfigError);
  PhaseAttentionLayer layer(8, 2, ScoreVariant{}, rng);
  EXPECT_THROW(phase_attend(batch_from(RealMatrix(2, 6), RealMatrix(2, 6)), layer), DimensionError);
}

TEST(PhaseAttention, ParameterNamesArePerHead) {
  Rng rng(12);
  PhaseAttentionLayer layer(8, 2, ScoreVariant{}, rng);
  NamedParameters named;
  layer.collect("layer0", named);
  ASSERT_EQ(named.size(), 11u);
  EXPECT_EQ(named[0].first, "layer0.head0.q_real");
  EXPECT_EQ(named[5].first, "layer0.head1.q_real");
  EXPECT_EQ(named.back().first, "layer0.w_o");
}
