#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "cope/properties.hpp"

using namespace cope;

TEST(PhaseIdentity, HoldsOnGrid) {
  for (double w : {1e-4, 0.01, 0.5, 1.0, 3.0})
    EXPECT_LE(phase_identity_check(w, square_grid(64)), 1e-12) << w;
  EXPECT_EQ(square_grid(3).size(), 9u);
}

TEST(PhaseIdentity, HandValues) {
  // sin(a) sin(b) for a = pi/2, b = pi/6 is 1/2
  const double w = std::numbers::pi / 6.0;
  EXPECT_NEAR(std::sin(3 * w) * std::sin(w), 0.5, 1e-15);
  EXPECT_LE(phase_identity_check(w, {{3.0, 1.0}}), 1e-15);
}

TEST(Decay, RelativeTermKeepsFullAmplitudeFarOut) {
  const double w = 2.0 * std::numbers::pi / 100.0;
  const DecayProfile prof = decay_profile(w, 10000, 100);
  ASSERT_EQ(prof.values.size(), 10001u);
  double far = 0.0;
  for (std::size_t d = 9000; d <= 10000; ++d) far = std::max(far, prof.values[d]);
  EXPECT_GE(far, 0.9);
  for (double v : prof.values) EXPECT_LE(v, 1.0 + 1e-12);
  EXPECT_TRUE(assert_no_decay(prof, 100).passed);
}

TEST(Decay, ValueIsWorstPhaseOffset) {
  const double w = 0.3;
  const DecayProfile prof = decay_profile(w, 200, 10);
  for (std::size_t d : {0u, 7u, 150u}) {
    double best = 0.0;
    const double period = 2 * std::numbers::pi / w;
    for (std::size_t k = 0; k < kPhasePointsPerPeriod; ++k)
      best = std::max(best, std::abs(std::cos(w * d) - std::cos(w * (d + period * k / 64.0))) / 2.0);
    EXPECT_NEAR(prof.values[d], best, 1e-15);
  }
}

TEST(Decay, ControlsPassAndFail) {
  std::vector<double> cosine, damped, zero(2000, 0.0), hole(2000, 1.0);
  for (std::size_t d = 0; d < 2000; ++d) {
    cosine.push_back(std::cos(0.05 * d));
    damped.push_back(std::exp(-0.01 * d));
  }
  hole[1500] = 0.0;
  for (std::size_t i = 1000; i < 1020; ++i) hole[i] = 0.0;
  EXPECT_TRUE(assert_no_decay(profile_from_values(cosine, 20), 20).passed);
  const DecayReport d = assert_no_decay(profile_from_values(damped, 20), 20);
  EXPECT_FALSE(d.passed);
  EXPECT_LT(d.slope, -0.5);
  const DecayReport z = assert_no_decay(profile_from_values(zero, 20), 20);
  EXPECT_FALSE(z.passed);
  EXPECT_NE(z.diagnostic.find("degenerate"), std::string::npos);
  const DecayReport h = assert_no_decay(profile_from_values(hole, 100), 100);
  EXPECT_FALSE(h.passed);
  EXPECT_NE(h.diagnostic.find("vanishes"), std::string::npos);
}

TEST(Decay, UsageErrors) {
  EXPECT_THROW(window_maxima({1.0, 2.0, 3.0, 4.0}, 2), UsageError);
  EXPECT_THROW(window_maxima({1.0, 2.0}, 3), UsageError);
  EXPECT_THROW(decay_profile(0.0, 1000, 10), UsageError);
  EXPECT_THROW(decay_profile(0.1, 50, 10), UsageError);
}

TEST(Decay, WindowMaximaCoverTail) {
  std::vector<double> v(10);
  for (std::size_t i = 0; i < 10; ++i) v[i] = static_cast<double>(i);
  const auto wm = window_maxima(v, 3);
  ASSERT_EQ(wm.size(), 3u);
  EXPECT_EQ(wm[0].second, 2.0);
  EXPECT_EQ(wm[1].second, 5.0);
  EXPECT_EQ(wm[2].second, 9.0);
}

TEST(PositionTerm, ScalarCase) {
  PositionalSpec spec;
  spec.frequencies = {0.1};
  const PositionTermReport r = end_to_end_positional_term(spec, 8, 1);
  EXPECT_LE(r.max_error, 1e-14);
  EXPECT_EQ(r.max_imag, 0.0);

  // the score for (3, 5) is sin(0.3) sin(0.5)
  PositionalSpec s = spec;
  s.imag_mode = ImagMode::sin_only;
  const TokenEmbeddingTable zero(RealMatrix(2, 1));
  const EmbeddedBatch z = embed_cope(std::vector<std::size_t>(6, 1), zero, s);
  const ComplexProjection unit(RealMatrix::identity(1), RealMatrix(1, 1));
  const ComplexMatrix a = complex_scores(project_complex(z.z, unit), project_complex(z.z, unit));
  EXPECT_NEAR(a.re(3, 5), std::sin(0.3) * std::sin(0.5), 1e-15);
}

TEST(PositionTerm, GammaScalesQuadratically) {
  PositionalSpec spec;
  spec.gamma = 0.5;
  const PositionTermReport half = end_to_end_positional_term(spec, 16, 8);
  spec.gamma = 1.0;
  const PositionTermReport one = end_to_end_positional_term(spec, 16, 8);
  EXPECT_LE(half.max_error, 1e-13);
  EXPECT_NEAR(half.max_abs_score, 0.25 * one.max_abs_score, 1e-12);
}

TEST(PositionTerm, ContentOnlyHasNoPositionTerm) {
  // with no imaginary part, identical tokens score identically at every offset
  Rng rng(1);
  const TokenEmbeddingTable table(normal_matrix(3, 8, 1.0, rng));
  PositionalSpec none;
  none.scheme = PositionalScheme::none;
  const EmbeddedBatch z = embed_additive({2, 2, 2, 2, 2}, table, none);
  const ComplexProjection p(normal_matrix(8, 4, 1.0, rng), normal_matrix(8, 4, 1.0, rng));
  const ComplexMatrix a = complex_scores(project_complex(z.z, p), project_complex(z.z, p));
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t j = 0; j < 5; ++j) {
      EXPECT_NEAR(a.re(i, j), a.re(0, 0), 1e-12);
      EXPECT_NEAR(a.im(i, j), 0.0, 1e-12);
    }
}

TEST(Equivalence, LinearMatchesQuadratic) {
  const auto res = linear_equivalence_check({1, 16, 128}, 16, 3);
  EXPECT_EQ(res.size(), 12u);
  for (const auto& r : res) EXPECT_LE(r.rel_error, 1e-10) << to_string(r.kind) << " T=" << r.seq_len;
}

class LayerGradcheck : public ::testing::TestWithParam<ScoreKind> {};

TEST_P(LayerGradcheck, MatchesFiniteDifferences) {
  const auto groups = gradcheck_layer(GetParam(), GradcheckOptions{});
  EXPECT_EQ(groups.size(), 11u);
  for (const auto& g : groups) EXPECT_LE(g.rel_error, 1e-6) << g.group;
}

INSTANTIATE_TEST_SUITE_P(AllVariants, LayerGradcheck, ::testing::ValuesIn(kAllScoreKinds),
                         [](const auto& info) { return std::string(to_string(info.param)); });

TEST(LayerGradcheckLinear, MatchesFiniteDifferences) {
  for (ScoreKind k : {ScoreKind::magnitude, ScoreKind::phase, ScoreKind::real, ScoreKind::hybrid})
    for (const auto& g : gradcheck_layer(k, GradcheckOptions{}, AttentionMode::linear))
      EXPECT_LE(g.rel_error, 1e-6) << to_string(k) << " " << g.group;
}

TEST(ModelGradcheck, EverySchemeMatchesFiniteDifferences) {
  for (PositionalScheme s : kAllSchemes) {
    ModelConfig c;
    c.layers = 2;
    c.positional.scheme = s;
    for (const auto& g : gradcheck_model(c, GradcheckOptions{})) EXPECT_LE(g.rel_error, 1e-5) << g.group;
  }
}

TEST(Verify, FullReportPasses) {
  VerifyOptions opts;
  opts.model_gradients = false;
  const VerifyReport rep = run_verification(opts);
  EXPECT_TRUE(rep.passed()) << rep.text();
  const auto j = rep.json();
  EXPECT_TRUE(j.at("passed").get<bool>());
  EXPECT_EQ(j.at("checks").size(), rep.checks.size());
}
