#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <limits>
#include <numeric>
#include <tuple>
#include <random>
#include <vector>

#include "topoprune/activation_pipeline.hpp"
#include "topoprune/encoder.hpp"

namespace {

using topoprune::Checkpoint;
using topoprune::Component;
using topoprune::Error;
using topoprune::NeuronScore;
using topoprune::Tensor;

// Synthetic dump with `layers` layers; hidden-width components are `h` wide,
// Intermediate `inter` wide. Values come from `fill(layer, component, row, col)`.
template <typename Fill>
Checkpoint synthetic_dump(int layers, std::int64_t rows, std::int64_t h, std::int64_t inter, Fill fill) {
  Checkpoint c;
  for (int l = 1; l <= layers; ++l) {
    for (const auto comp : topoprune::kAllComponents) {
      const std::int64_t w = comp == Component::kIntermediate ? inter : h;
      Tensor t(topoprune::activation_name(l, comp), {rows, w});
      for (std::int64_t r = 0; r < rows; ++r) {
        for (std::int64_t j = 0; j < w; ++j) t.at(r, j) = fill(l, comp, r, j);
      }
      c.add(std::move(t));
    }
  }
  c.metadata["kind"] = "activations";
  return c;
}

Checkpoint random_dump(std::uint64_t seed, int layers = 2, std::int64_t rows = 20) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> n(0.0f, 1.0f);
  return synthetic_dump(layers, rows, 4, 6, [&](int, Component, std::int64_t, std::int64_t) { return n(rng); });
}

// Sort-and-gap written out independently: the largest sorted gap, halved.
double largest_gap_half(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  double g = 0.0;
  for (std::size_t i = 1; i < v.size(); ++i) g = std::max(g, v[i] - v[i - 1]);
  return g / 2.0;
}

TEST(Scores, SmallColumnExample) {
  const float col[] = {0.0f, 1.0f, 3.0f};
  const auto dump = topoprune::validate_dump(synthetic_dump(
      1, 3, 2, 2, [&](int, Component, std::int64_t r, std::int64_t j) { return j == 0 ? col[r] : 5.0f; }));
  const auto scores = topoprune::score_neurons(dump);
  const NeuronScore& s = scores[0];
  EXPECT_EQ(s.layer, 1);
  EXPECT_EQ(s.component, Component::kQ);
  EXPECT_EQ(s.neuron, 0);
  EXPECT_DOUBLE_EQ(s.r_f, 1.0);
  EXPECT_NEAR(s.mean, 4.0 / 3.0, 1e-12);
  EXPECT_NEAR(s.std, std::sqrt(14.0 / 9.0), 1e-12);
  EXPECT_NEAR(s.compensation(), 4.0 / 3.0 + std::sqrt(14.0 / 9.0), 1e-12);
  // The constant column.
  EXPECT_EQ(scores[1].r_f, 0.0);
  EXPECT_EQ(scores[1].std, 0.0);
  EXPECT_EQ(scores[1].compensation(), 5.0);
}

TEST(Scores, OrderAndCount) {
  const auto scores = topoprune::score_neurons(topoprune::validate_dump(random_dump(1)));
  ASSERT_EQ(scores.size(), 2u * (5 * 4 + 6));
  for (std::size_t i = 1; i < scores.size(); ++i) {
    const auto& a = scores[i - 1];
    const auto& b = scores[i];
    EXPECT_LT(std::make_tuple(a.layer, a.component, a.neuron), std::make_tuple(b.layer, b.component, b.neuron));
  }
}

TEST(Scores, MatchSortAndGapOracle) {
  const auto ckpt = random_dump(2, 3, 37);
  const auto dump = topoprune::validate_dump(ckpt);
  for (const auto& s : topoprune::score_neurons(dump)) {
    const auto& t = ckpt.get(topoprune::activation_name(s.layer, s.component));
    std::vector<double> col;
    for (std::int64_t r = 0; r < t.rows(); ++r) col.push_back(t.at(r, s.neuron));
    EXPECT_DOUBLE_EQ(s.r_f, largest_gap_half(col));
  }
}

TEST(Scores, ConsumedStatisticsDriveCompensation) {
  auto ckpt = random_dump(3, 1, 10);
  Tensor consumed(topoprune::consumed_name(1, Component::kIntermediate), {10, 6});
  for (std::int64_t r = 0; r < 10; ++r) {
    for (std::int64_t j = 0; j < 6; ++j) consumed.at(r, j) = static_cast<float>(r % 2);
  }
  ckpt.add(consumed);
  const auto scores = topoprune::score_neurons(topoprune::validate_dump(ckpt));
  for (const auto& s : scores) {
    if (s.component == Component::kIntermediate) {
      ASSERT_TRUE(s.consumed_mean.has_value());
      EXPECT_DOUBLE_EQ(*s.consumed_mean, 0.5);
      EXPECT_DOUBLE_EQ(*s.consumed_std, 0.5);
      EXPECT_DOUBLE_EQ(s.compensation(), 1.0);
    } else {
      EXPECT_FALSE(s.consumed_mean.has_value());
    }
  }
}

TEST(Scores, IndependentOfThreadCount) {
  const auto dump = topoprune::validate_dump(random_dump(4, 3, 50));
  ::setenv("TOPOPRUNE_THREADS", "1", 1);
  const auto a = topoprune::score_neurons(dump);
  ::setenv("TOPOPRUNE_THREADS", "8", 1);
  const auto b = topoprune::score_neurons(dump);
  ::unsetenv("TOPOPRUNE_THREADS");
  EXPECT_EQ(a, b);
}

TEST(ScoreProperties, ShiftInvariantAndScaleEquivariant) {
  std::mt19937_64 rng(5);
  std::normal_distribution<float> n(0.0f, 1.0f);
  std::vector<float> base(40 * 4);
  for (auto& v : base) v = n(rng);
  auto make = [&](float scale, float shift) {
    return topoprune::score_neurons(topoprune::validate_dump(synthetic_dump(
        1, 40, 4, 4, [&](int, Component, std::int64_t r, std::int64_t j) {
          return base[static_cast<std::size_t>(r * 4 + j)] * scale + shift;
        })));
  };
  const auto ref = make(1.0f, 0.0f);
  const auto shifted = make(1.0f, 3.0f);
  const auto scaled = make(4.0f, 0.0f);  // power of two: exact in float
  for (std::size_t i = 0; i < ref.size(); ++i) {
    EXPECT_NEAR(shifted[i].r_f, ref[i].r_f, 1e-6);
    EXPECT_NEAR(scaled[i].r_f, 4.0 * ref[i].r_f, 1e-12);
  }
}

TEST(ScoreProperties, RowPermutationInvariant) {
  std::mt19937_64 rng(6);
  std::normal_distribution<float> n(0.0f, 1.0f);
  std::vector<float> base(30 * 4);
  for (auto& v : base) v = n(rng);
  std::vector<std::int64_t> perm(30);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  const auto a = topoprune::score_neurons(topoprune::validate_dump(synthetic_dump(
      1, 30, 4, 4, [&](int, Component, std::int64_t r, std::int64_t j) { return base[static_cast<std::size_t>(r * 4 + j)]; })));
  const auto b = topoprune::score_neurons(topoprune::validate_dump(
      synthetic_dump(1, 30, 4, 4, [&](int, Component, std::int64_t r, std::int64_t j) {
        return base[static_cast<std::size_t>(perm[static_cast<std::size_t>(r)] * 4 + j)];
      })));
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].r_f, b[i].r_f);
    EXPECT_NEAR(a[i].mean, b[i].mean, 1e-12);
  }
}

TEST(Percentile, LinearInterpolation) {
  const std::vector<double> v{10, 9, 8, 7, 6, 5, 4, 3, 2, 1};
  EXPECT_NEAR(topoprune::percentile(v, 30), 3.7, 1e-12);
  EXPECT_EQ(topoprune::percentile(v, 0), 1.0);
  EXPECT_EQ(topoprune::percentile(v, 100), 10.0);
  EXPECT_EQ(topoprune::percentile(v, 50), 5.5);
  EXPECT_EQ(topoprune::percentile({4.0}, 70), 4.0);
  EXPECT_THROW(topoprune::percentile({}, 50), Error);
  EXPECT_THROW(topoprune::percentile(v, 101), Error);
}

TEST(Percentile, MonotoneInP) {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> v(57);
  for (auto& x : v) x = u(rng);
  double prev = -1.0;
  for (int p = 0; p <= 100; ++p) {
    const double q = topoprune::percentile(v, p);
    EXPECT_GE(q, prev);
    prev = q;
  }
}

TEST(Summary, GroupsAndPercentiles) {
  const auto dists = topoprune::summarize(topoprune::score_neurons(topoprune::validate_dump(random_dump(8))));
  ASSERT_EQ(dists.size(), 12u);
  for (const auto& d : dists) {
    const auto values = d.rf_values();
    EXPECT_EQ(d.median_rf, topoprune::percentile(values, 50));
    EXPECT_LE(d.percentiles.at(30), d.percentiles.at(50));
    EXPECT_LE(d.percentiles.at(50), d.percentiles.at(70));
    for (std::size_t i = 0; i < d.scores.size(); ++i) EXPECT_EQ(d.scores[i].neuron, static_cast<int>(i));
  }
}

TEST(Validation, RejectsBadDumps) {
  auto nan = random_dump(9, 1, 5);
  nan.get("act.layer.1.V").data[3] = std::numeric_limits<float>::quiet_NaN();
  EXPECT_THROW(topoprune::validate_dump(nan), Error);

  auto missing = random_dump(9, 2, 5);
  missing.tensors.erase("act.layer.1.K");
  EXPECT_THROW(topoprune::validate_dump(missing), Error);

  auto rows = random_dump(9, 1, 5);
  rows.get("act.layer.1.Output") = Tensor("act.layer.1.Output", {4, 4});
  EXPECT_THROW(topoprune::validate_dump(rows), Error);

  auto width = random_dump(9, 1, 5);
  width.get("act.layer.1.AttOutput") = Tensor("act.layer.1.AttOutput", {5, 3});
  EXPECT_THROW(topoprune::validate_dump(width), Error);

  auto name = random_dump(9, 1, 5);
  name.add(Tensor("act.layer.x.Q", {5, 4}));
  EXPECT_THROW(topoprune::validate_dump(name), Error);

  auto comp = random_dump(9, 1, 5);
  comp.add(Tensor("act.layer.1.Pooler", {5, 4}));
  EXPECT_THROW(topoprune::validate_dump(comp), Error);

  EXPECT_THROW(topoprune::validate_dump(Checkpoint{}), Error);
}

TEST(Reports, CsvShapesAndRoundTrip) {
  const auto scores = topoprune::score_neurons(topoprune::validate_dump(random_dump(10)));
  const auto dists = topoprune::summarize(scores);
  const auto rf = topoprune::rf_csv(dists);
  EXPECT_EQ(std::count(rf.begin(), rf.end(), '\n'), 13);
  EXPECT_EQ(rf.substr(0, rf.find('\n')), "layer,component,median_rf,p30,p50,p70");
  const auto csv = topoprune::neuron_csv(scores);
  EXPECT_EQ(static_cast<std::size_t>(std::count(csv.begin(), csv.end(), '\n')), scores.size() + 1);
  EXPECT_EQ(topoprune::parse_neuron_csv(csv), scores);
  EXPECT_THROW(topoprune::parse_neuron_csv("bad header\n"), Error);
  EXPECT_THROW(topoprune::parse_neuron_csv("layer,component,neuron,r_f,mean,std\n1,Q,0,abc,0,0\n"), Error);
  EXPECT_THROW(topoprune::parse_neuron_csv("layer,component,neuron,r_f,mean,std\n1,Q,0,-1,0,0\n"), Error);
}

TEST(Reports, SvgIsDeterministicAndHasEverySeries) {
  const auto dists = topoprune::summarize(topoprune::score_neurons(topoprune::validate_dump(random_dump(11))));
  const auto a = topoprune::medians_svg(dists);
  EXPECT_EQ(a, topoprune::medians_svg(dists));
  EXPECT_EQ(a.rfind("<svg", 0), 0u);
  for (const auto c : topoprune::kAllComponents) {
    EXPECT_NE(a.find(">" + std::string(topoprune::component_name(c)) + "</text>"), std::string::npos);
  }
  int polylines = 0;
  for (std::size_t p = a.find("<polyline"); p != std::string::npos; p = a.find("<polyline", p + 1)) ++polylines;
  EXPECT_EQ(polylines, 6);
}

TEST(Reports, ExportWritesThreeFiles) {
  const auto dir = std::filesystem::temp_directory_path() / "topoprune_report_test";
  std::filesystem::remove_all(dir);
  const auto dists = topoprune::summarize(topoprune::score_neurons(topoprune::validate_dump(random_dump(12))));
  topoprune::export_report(dists, dir);
  for (const char* f : {"rf.csv", "neurons.csv", "medians.svg"}) EXPECT_TRUE(std::filesystem::exists(dir / f)) << f;
  std::filesystem::remove_all(dir);
}

TEST(Pipeline, EncoderDumpScoresEveryNeuron) {
  topoprune::EncoderConfig cfg;
  cfg.layers = 2;
  const auto ckpt = topoprune::init_model(cfg);
  topoprune::Corpus corpus;
  for (std::int64_t i = 0; i < 12; ++i) corpus.push_back({1, 2 + i, 30 + i});
  const auto dump = topoprune::dump_activations(topoprune::EncoderModel(ckpt), topoprune::make_batch(corpus, cfg));
  const auto scores = topoprune::score_neurons(topoprune::validate_dump(dump));
  EXPECT_EQ(scores.size(), 2u * (5 * 8 + 16));
  for (const auto& s : scores) {
    // Layer-1 Q/K/V at [CLS] see only the [CLS] embedding: the same for every text.
    if (s.layer == 1 && topoprune::is_attention(s.component)) {
      EXPECT_EQ(s.r_f, 0.0);
    } else {
      EXPECT_GT(s.r_f, 0.0);
    }
    if (s.component == Component::kV || s.component == Component::kIntermediate) {
      EXPECT_TRUE(s.consumed_mean.has_value());
    }
  }
}

}  // namespace
