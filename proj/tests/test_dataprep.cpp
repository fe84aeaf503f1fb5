#include <gtest/gtest.h>

#include "irrigation/dataprep.hpp"
#include "irrigation/field_sim.hpp"
#include "support.hpp"

using namespace irrigation;

namespace {

Dataset column(std::initializer_list<double> values) {
  Dataset d;
  for (double v : values) d.instances.push_back(make_instance(v, 1, 2, 0, 0));
  return d;
}

double sample_mean(const Dataset& d, std::size_t a) {
  double s = 0;
  for (const auto& i : d.instances) s += i.at(a);
  return s / static_cast<double>(d.size());
}

double sample_sd(const Dataset& d, std::size_t a) {
  double m = sample_mean(d, a), ss = 0;
  for (const auto& i : d.instances) ss += (i.at(a) - m) * (i.at(a) - m);
  return std::sqrt(ss / static_cast<double>(d.size() - 1));
}

}  // namespace

TEST(Payload, FourFieldsUnlabeled) {
  auto inst = parse_payload("78,9,485,1");
  EXPECT_EQ(inst, make_instance(78, 9, 485, 1));
  EXPECT_FALSE(inst.label);
}

TEST(Payload, FiveFieldsLabeled) {
  auto inst = parse_payload("35,18,775,0,1");
  EXPECT_EQ(inst, make_instance(35, 18, 775, 0, 1));
}

TEST(Payload, WhitespaceTolerated) { EXPECT_EQ(parse_payload(" 35 , 18,775 ,0 \n"), make_instance(35, 18, 775, 0)); }

TEST(Payload, Errors) {
  EXPECT_THROW(parse_payload("78,9,485"), ParseError);
  EXPECT_THROW(parse_payload("78,9,485,1,0,1"), ParseError);
  EXPECT_THROW(parse_payload(""), ParseError);
  try {
    parse_payload("78,x,485,1");
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_NE(std::string(e.what()).find("field 2"), std::string::npos);
  }
  EXPECT_THROW(parse_payload("78,9,485,1,2"), ParseError);
}

TEST(Payload, ReadingValidation) {
  auto r = payload_to_reading("78,9,485,1", 5, "n1");
  EXPECT_EQ(r.soil_moisture_raw, 485);
  EXPECT_EQ(r.is_raining, 1);
  EXPECT_EQ(format_payload(r), "78,9,485,1");
  EXPECT_THROW(payload_to_reading("78,9,2000,1", 5, "n1"), ValidationError);
  EXPECT_THROW(payload_to_reading("78,9,485.5,1", 5, "n1"), ValidationError);
  EXPECT_THROW(payload_to_reading("78,9,485,0.5", 5, "n1"), ValidationError);
}

TEST(Csv, RoundTripWithMissing) {
  Dataset d;
  d.instances.push_back(make_instance(78, 9, 485, 1, 0));
  d.instances.push_back(Instance{{std::nullopt, 20.5, 700, 0}, 1});
  std::string csv = format_training_csv(d);
  EXPECT_EQ(csv, "humidity,temperature,soil_moisture,is_raining,label\n78,9,485,1,0\n?,20.5,700,0,1\n");
  EXPECT_EQ(parse_training_csv(csv), d);
}

TEST(Csv, MissingFirstCellIsNotAHeader) {
  auto d = parse_training_csv("?,9,485,1,0\n,10,400,1,0\n");
  ASSERT_EQ(d.size(), 2u);
  EXPECT_FALSE(d.instances[0].features[0]);
  EXPECT_FALSE(d.instances[1].features[0]);
}

TEST(Csv, ErrorsNameTheLine) {
  try {
    parse_training_csv("humidity,temperature,soil_moisture,is_raining,label\n1,2,3,0,1\n1,2,x,0,1\n");
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_NE(std::string(e.what()).find("line 3"), std::string::npos);
  }
}

TEST(Clean, DropRemovesIncomplete) {
  Dataset d;
  for (int i = 0; i < 5; ++i) d.instances.push_back(make_instance(i, i, i, 0, 0));
  d.instances[1].features[2].reset();
  d.instances[3].features[0].reset();
  auto out = clean_dataset(d, DropMissing{});
  ASSERT_EQ(out.size(), 3u);
  EXPECT_EQ(out.instances[0].at(0), 0);
  EXPECT_EQ(out.instances[1].at(0), 2);
  EXPECT_EQ(out.instances[2].at(0), 4);
}

TEST(Clean, KnnSingleNeighborCopies) {
  Dataset d;
  d.instances.push_back(make_instance(50, 20, 500, 0, 0));
  d.instances.push_back(make_instance(80, 35, 900, 1, 0));
  d.instances.push_back(Instance{{51, std::nullopt, 505, 0}, 0});
  auto out = clean_dataset(d, KnnImpute{1});
  EXPECT_EQ(out.instances[2].at(kTemperature), 20);
}

TEST(Clean, KnnMeanOfThree) {
  Dataset d;
  d.instances.push_back(make_instance(50, 10, 500, 0, 0));
  d.instances.push_back(make_instance(52, 20, 510, 0, 0));
  d.instances.push_back(make_instance(48, 30, 490, 0, 0));
  d.instances.push_back(make_instance(90, 45, 1000, 1, 0));
  d.instances.push_back(Instance{{50, std::nullopt, 500, 0}, 1});
  auto out = clean_dataset(d, KnnImpute{3});
  EXPECT_DOUBLE_EQ(out.instances[4].at(kTemperature), 20.0);
  EXPECT_EQ(out.instances[4].label, 1);
  EXPECT_EQ(out.size(), 5u);
}

TEST(Clean, KnnNeedsKCompleteInstances) {
  Dataset d;
  d.instances.push_back(make_instance(50, 10, 500, 0, 0));
  d.instances.push_back(Instance{{50, std::nullopt, 500, 0}, 1});
  EXPECT_THROW(clean_dataset(d, KnnImpute{3}), std::invalid_argument);
}

// Brute force: z-score the complete rows, enumerate distances, average the k
// nearest (earlier row wins ties).
TEST(Clean, KnnMatchesBruteForce) {
  detail::Rng rng(21);
  for (int trial = 0; trial < 50; ++trial) {
    Dataset d;
    for (int i = 0; i < 30; ++i) {
      Instance inst = make_instance(static_cast<double>(rng.below(100)), static_cast<double>(rng.below(50)),
                                    static_cast<double>(rng.below(1024)), static_cast<double>(rng.below(2)), 0);
      if (rng.chance(0.2)) inst.features[rng.below(4)].reset();
      d.instances.push_back(inst);
    }
    const std::size_t k = 1 + rng.below(4);
    Dataset complete;
    for (const auto& i : d.instances)
      if (i.complete()) complete.instances.push_back(i);
    if (complete.size() < k) continue;
    std::array<double, 4> mean{}, sd{};
    for (std::size_t a = 0; a < 4; ++a) {
      mean[a] = sample_mean(complete, a);
      sd[a] = sample_sd(complete, a);
    }
    auto z = [&](double x, std::size_t a) { return sd[a] == 0 ? 0.0 : (x - mean[a]) / sd[a]; };
    auto out = clean_dataset(d, KnnImpute{k});
    for (std::size_t r = 0; r < d.size(); ++r) {
      const auto& inst = d.instances[r];
      if (inst.complete()) {
        EXPECT_EQ(out.instances[r], inst);
        continue;
      }
      std::vector<std::pair<double, std::size_t>> dist;
      for (std::size_t c = 0; c < complete.size(); ++c) {
        double s = 0;
        for (std::size_t a = 0; a < 4; ++a)
          if (inst.features[a]) s += std::pow(z(*inst.features[a], a) - z(complete.instances[c].at(a), a), 2);
        dist.push_back({s, c});
      }
      std::sort(dist.begin(), dist.end());
      for (std::size_t a = 0; a < 4; ++a) {
        if (inst.features[a]) continue;
        double sum = 0;
        for (std::size_t j = 0; j < k; ++j) sum += complete.instances[dist[j].second].at(a);
        EXPECT_NEAR(out.instances[r].at(a), sum / static_cast<double>(k), 1e-9);
      }
    }
  }
}

TEST(Norm, ZScoreHandExample) {
  auto stats = fit_norm_stats(column({400, 500, 600}), NormMethod::kZScore);
  EXPECT_DOUBLE_EQ(stats.mean(0), 500);
  EXPECT_DOUBLE_EQ(stats.stddev(0), 100);
  EXPECT_DOUBLE_EQ(normalize_value(400, stats, 0), -1.0);
}

TEST(Norm, MinMaxHandExample) {
  auto stats = fit_norm_stats(column({120, 560, 1000}), NormMethod::kMinMax);
  EXPECT_EQ(stats.min(0), 120);
  EXPECT_EQ(stats.max(0), 1000);
  EXPECT_EQ(normalize_value(120, stats, 0), 0.0);
  EXPECT_EQ(normalize_value(1000, stats, 0), 1.0);
  EXPECT_EQ(normalize_value(50, stats, 0), 0.0);    // live value below range
  EXPECT_EQ(normalize_value(1023, stats, 0), 1.0);  // and above
}

TEST(Norm, ConstantColumn) {
  auto z = fit_norm_stats(column({7, 7, 7}), NormMethod::kZScore);
  EXPECT_EQ(z.stddev(0), 0.0);
  EXPECT_EQ(normalize_value(7, z, 0), 0.0);
  EXPECT_EQ(normalize_value(9, z, 0), 0.0);
  auto m = fit_norm_stats(column({7, 7, 7}), NormMethod::kMinMax);
  EXPECT_EQ(normalize_value(7, m, 0), 0.0);
}

TEST(Norm, Preconditions) {
  EXPECT_THROW(fit_norm_stats(column({1}), NormMethod::kZScore), std::invalid_argument);
  Dataset d = column({1, 2});
  d.instances[0].features[1].reset();
  EXPECT_THROW(fit_norm_stats(d, NormMethod::kZScore), std::invalid_argument);
}

TEST(Norm, PropertiesOnGeneratedSets) {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    Dataset d = sim::generate_training_set({}, 200, seed);
    auto zs = fit_norm_stats(d, NormMethod::kZScore);
    Dataset z = apply_norm(d, zs);
    auto mm = fit_norm_stats(d, NormMethod::kMinMax);
    Dataset m = apply_norm(d, mm);
    ASSERT_EQ(z.size(), d.size());
    for (std::size_t i = 0; i < d.size(); ++i) {
      EXPECT_EQ(z.instances[i].label, d.instances[i].label);
      EXPECT_EQ(m.instances[i].label, d.instances[i].label);
    }
    for (std::size_t a = 0; a < kFeatureCount; ++a) {
      if (zs.stddev(a) == 0) continue;
      EXPECT_LT(std::abs(sample_mean(z, a)), 1e-9);
      EXPECT_LT(std::abs(sample_sd(z, a) - 1), 1e-9);
      double lo = 2, hi = -1;
      for (const auto& inst : m.instances) {
        lo = std::min(lo, inst.at(a));
        hi = std::max(hi, inst.at(a));
      }
      EXPECT_EQ(lo, 0.0);
      EXPECT_EQ(hi, 1.0);
      for (std::size_t i = 0; i < d.size(); ++i) {
        double x = d.instances[i].at(a);
        EXPECT_NEAR(denormalize_value(z.instances[i].at(a), zs, a), x, 1e-9 * std::max(1.0, std::abs(x)));
      }
    }
  }
}

TEST(Downsample, OneBucketPerHour) {
  Dataset d;
  std::vector<TimestampMs> ts;
  const TimestampMs hour = 1'560'000'000'000 / 3'600'000 * 3'600'000;
  for (int i = 0; i < 12; ++i) {
    d.instances.push_back(make_instance(i, 0, 0, 0));
    ts.push_back(hour + i * 300'000);
  }
  auto one = downsample_period(d, 3600, ts);
  ASSERT_EQ(one.size(), 1u);
  EXPECT_EQ(one.instances[0].at(0), 0);
  EXPECT_EQ(downsample_period(d, 60, ts).size(), 12u);
}

TEST(Downsample, MatchesBruteForceBucketScan) {
  detail::Rng rng(8);
  Dataset d;
  std::vector<TimestampMs> ts;
  TimestampMs t = 1'000'000'000;
  for (int i = 0; i < 500; ++i) {
    t += static_cast<TimestampMs>(rng.below(4) == 0 ? 0 : rng.below(900'000));
    d.instances.push_back(make_instance(i, 0, 0, 0));
    ts.push_back(t);
  }
  for (std::int64_t period : {1, 60, 300, 3600, 86400}) {
    std::vector<double> expected;
    std::set<std::int64_t> seen;
    for (std::size_t i = 0; i < ts.size(); ++i) {
      if (seen.insert(ts[i] / (period * 1000)).second) expected.push_back(i);
    }
    auto out = downsample_period(d, period, ts);
    ASSERT_EQ(out.size(), expected.size()) << period;
    for (std::size_t i = 0; i < out.size(); ++i) EXPECT_EQ(out.instances[i].at(0), expected[i]);
  }
}
