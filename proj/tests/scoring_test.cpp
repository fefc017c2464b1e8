#include <algorithm>
#include <cmath>
#include <vector>

#include <doctest.h>

#include "fjd/errors.hpp"
#include "fjd/rng.hpp"
#include "fjd/scoring.hpp"

using namespace fjd;

namespace {

// Independent softmax for oracle comparisons: direct exp/sum, no log-space
// tricks, no shared code with the implementation.
std::vector<double> naive_softmax(const std::vector<double>& logits, double tau) {
  std::vector<double> out(logits.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out[i] = std::exp(logits[i] / tau);
    sum += out[i];
  }
  for (double& v : out) v /= sum;
  return out;
}

LogitVector lv(std::vector<double> values) { return LogitVector{std::move(values)}; }

}  // namespace

TEST_CASE("softmax matches the dummy-example vectors") {
  const auto a1 = softmax_with_temperature(lv({10, 9, 1}), Temperature(1.0));
  CHECK(std::abs(a1[0] - 0.731) < 1e-3);
  CHECK(std::abs(a1[1] - 0.269) < 1e-3);
  CHECK(std::abs(a1[2] - 0.0001) < 1e-3);

  const auto b1 = softmax_with_temperature(lv({10, 8, 8}), Temperature(1.0));
  CHECK(std::abs(b1[0] - 0.787) < 1e-3);
  CHECK(std::abs(b1[1] - 0.106) < 1e-3);
  CHECK(std::abs(b1[2] - 0.106) < 1e-3);

  const auto a2 = softmax_with_temperature(lv({10, 9, 1}), Temperature(2.0));
  CHECK(std::abs(a2[0] - 0.619) < 1e-3);
  CHECK(std::abs(a2[1] - 0.375) < 1e-3);
  CHECK(std::abs(a2[2] - 0.007) < 1e-3);

  const auto b2 = softmax_with_temperature(lv({10, 8, 8}), Temperature(2.0));
  CHECK(std::abs(b2[0] - 0.576) < 1e-3);
  CHECK(std::abs(b2[1] - 0.212) < 1e-3);
  CHECK(std::abs(b2[2] - 0.212) < 1e-3);
}

TEST_CASE("softmax of constant logits is uniform") {
  for (double c : {0.0, -3.5, 1e4}) {
    for (double tau : {0.1, 1.0, 3.0}) {
      const auto p = softmax_with_temperature(lv({c, c, c}), Temperature(tau));
      for (double v : p) CHECK(v == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
    }
  }
}

TEST_CASE("softmax shift invariance") {
  rng::Engine eng = rng::seeded(11);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> z(4);
    for (double& v : z) v = rng::next_gaussian(eng) * 5.0;
    const double shift = rng::next_gaussian(eng) * 100.0;
    std::vector<double> shifted = z;
    for (double& v : shifted) v += shift;
    const double tau = 0.25 + 3.0 * rng::next_unit(eng);
    const auto p = softmax_with_temperature(lv(z), Temperature(tau));
    const auto q = softmax_with_temperature(lv(shifted), Temperature(tau));
    for (std::size_t i = 0; i < p.size(); ++i) {
      CHECK(std::abs(p[i] - q[i]) < 1e-12);
    }
  }
}

TEST_CASE("softmax stays normalized and argmax-invariant over random draws") {
  rng::Engine eng = rng::seeded(7);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = 2 + rng::next_below(eng, 16);
    std::vector<double> z(n);
    for (double& v : z) v = rng::next_gaussian(eng) * 10.0;
    const double tau = 1e-9 + 4.0 * rng::next_unit(eng);

    const auto p = softmax_with_temperature(lv(z), Temperature(tau));
    double sum = 0.0;
    for (double v : p) {
      CHECK(v >= 0.0);  // tiny tau can underflow the losing entries to 0
      CHECK(v <= 1.0);
      sum += v;
    }
    CHECK(std::abs(sum - 1.0) < 1e-9);
    CHECK(argmax_index(p) == argmax_index(z));
  }
}

TEST_CASE("softmax entries stay strictly positive at moderate temperatures") {
  rng::Engine eng = rng::seeded(8);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> z(6);
    for (double& v : z) v = rng::next_gaussian(eng) * 5.0;
    const double tau = 0.5 + 3.5 * rng::next_unit(eng);
    for (double v : softmax_with_temperature(lv(z), Temperature(tau))) {
      CHECK(v > 0.0);
    }
  }
}

TEST_CASE("softmax survives extreme logit magnitudes") {
  const auto p = softmax_with_temperature(lv({1e4, 0.0, -1e4}), Temperature(1.0));
  CHECK(p[0] == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(std::isfinite(p[2]));
}

TEST_CASE("softmax input validation") {
  CHECK_THROWS_AS(softmax_with_temperature(lv({}), Temperature(1.0)), Error);
  CHECK_THROWS_AS(softmax_with_temperature(lv({1.0, std::nan("")}), Temperature(1.0)), Error);
  CHECK_THROWS_AS(Temperature(0.0), Error);
  CHECK_THROWS_AS(Temperature(-1.0), Error);
  CHECK_THROWS_AS(Temperature(std::nan("")), Error);
  try {
    Temperature(0.0);
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::InvalidTemperature);
  }
}

TEST_CASE("first-token confidence reproduces the flip pair") {
  const LogitVector a = lv({10, 9, 1});
  const LogitVector b = lv({10, 8, 8});

  const double a1 = first_token_confidence(a, Temperature(1.0)).value;
  const double b1 = first_token_confidence(b, Temperature(1.0)).value;
  CHECK(std::abs(a1 - 0.731) < 1e-3);
  CHECK(std::abs(b1 - 0.787) < 1e-3);
  CHECK(b1 > a1);

  const double a2 = first_token_confidence(a, Temperature(2.0)).value;
  const double b2 = first_token_confidence(b, Temperature(2.0)).value;
  CHECK(std::abs(a2 - 0.619) < 1e-3);
  CHECK(std::abs(b2 - 0.576) < 1e-3);
  CHECK(a2 > b2);  // rank flipped between the samples
}

TEST_CASE("one-hot-dominant logits saturate at 1") {
  const double c = first_token_confidence(lv({100, 0, 0}), Temperature(1.0)).value;
  CHECK(std::abs(c - 1.0) < 1e-9);
}

TEST_CASE("higher temperature strictly flattens non-constant logits") {
  rng::Engine eng = rng::seeded(23);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> z(5);
    for (double& v : z) v = rng::next_gaussian(eng) * 3.0;
    z[0] += 1.0;  // ensure non-constant
    const double t1 = 0.2 + 1.5 * rng::next_unit(eng);
    const double t2 = t1 + 0.1 + rng::next_unit(eng);
    const double c1 = first_token_confidence(lv(z), Temperature(t1)).value;
    const double c2 = first_token_confidence(lv(z), Temperature(t2)).value;
    CHECK(c2 < c1);
  }
}

TEST_CASE("first_k_confidence") {
  const std::vector<LogitVector> dists = {lv({3, 1, 0}), lv({2, 2, -1}), lv({5, 0, 0})};

  SUBCASE("k=1 bit-equals first_token_confidence") {
    rng::Engine eng = rng::seeded(99);
    for (int trial = 0; trial < 100; ++trial) {
      std::vector<LogitVector> random_dists;
      const int positions = 1 + int(rng::next_below(eng, 4));
      for (int p = 0; p < positions; ++p) {
        std::vector<double> z(3 + rng::next_below(eng, 5));
        for (double& v : z) v = rng::next_gaussian(eng) * 4.0;
        random_dists.push_back(lv(z));
      }
      const double tau = 0.3 + 2.0 * rng::next_unit(eng);
      const double via_k = first_k_confidence(random_dists, 1, Temperature(tau)).value;
      const double direct = first_token_confidence(random_dists[0], Temperature(tau)).value;
      CHECK(via_k == direct);
    }
  }

  SUBCASE("mean of two known confidences") {
    // Construct positions whose confidences are exactly 0.8 and 0.6.
    const double l8 = std::log(0.8 / 0.2);
    const double l6 = std::log(0.6 / 0.4);
    const std::vector<LogitVector> pair = {lv({l8, 0}), lv({l6, 0})};
    const double c = first_k_confidence(pair, 2, Temperature(1.0)).value;
    CHECK(c == doctest::Approx(0.7).epsilon(1e-12));
  }

  SUBCASE("k=5 matches a per-position hand oracle") {
    rng::Engine eng = rng::seeded(5);
    std::vector<LogitVector> positions;
    std::vector<std::vector<double>> raw;
    for (int p = 0; p < 5; ++p) {
      std::vector<double> z(8);
      for (double& v : z) v = rng::next_gaussian(eng) * 3.0;
      raw.push_back(z);
      positions.push_back(lv(z));
    }
    const double tau = 1.7;
    double expected = 0.0;
    for (const auto& z : raw) {
      const auto p = naive_softmax(z, tau);
      expected += *std::max_element(p.begin(), p.end());
    }
    expected /= 5.0;
    const double got = first_k_confidence(positions, 5, Temperature(tau)).value;
    CHECK(got == doctest::Approx(expected).epsilon(1e-12));
  }

  SUBCASE("fewer than k positions is insufficient-tokens") {
    try {
      first_k_confidence(dists, 4, Temperature(1.0));
      FAIL("expected insufficient-tokens");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::InsufficientTokens);
    }
  }
}

TEST_CASE("detect applies the strict-threshold rule") {
  CHECK(detect(Confidence{0.5}, 0.7).label == Label::Jailbreak);
  CHECK(detect(Confidence{0.9}, 0.7).label == Label::Benign);
  // Boundary goes to benign per the otherwise clause.
  CHECK(detect(Confidence{0.7}, 0.7).label == Label::Benign);

  CHECK_THROWS_AS(detect(Confidence{0.5}, -0.1), Error);
  CHECK_THROWS_AS(detect(Confidence{0.5}, 1.5), Error);
  try {
    detect(Confidence{0.5}, 2.0);
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::InvalidThreshold);
  }
}

TEST_CASE("verdict monotonicity in the threshold") {
  rng::Engine eng = rng::seeded(31);
  for (int trial = 0; trial < 100; ++trial) {
    const double c = rng::next_unit(eng);
    bool seen_jailbreak = false;
    for (double t = 0.0; t <= 1.0; t += 0.05) {
      const bool jailbreak = detect(Confidence{c}, t).label == Label::Jailbreak;
      // Once the threshold passes the confidence the verdict stays jailbreak.
      if (seen_jailbreak) CHECK(jailbreak);
      seen_jailbreak = jailbreak;
    }
  }
}

TEST_CASE("confidence_from_topk_logprobs") {
  SUBCASE("single entry is exact at tau=1") {
    const TopKLogprobs entries{{"t", std::log(0.9)}};
    const double c = confidence_from_topk_logprobs(entries, Temperature(1.0)).value;
    CHECK(c == std::exp(std::log(0.9)));
    CHECK(c == doctest::Approx(0.9).epsilon(1e-12));
  }

  SUBCASE("symmetric two-entry map stays 0.5 at any tau") {
    const TopKLogprobs entries{{"a", std::log(0.5)}, {"b", std::log(0.5)}};
    for (double tau : {0.5, 1.0, 2.0, 3.7}) {
      const double c = confidence_from_topk_logprobs(entries, Temperature(tau)).value;
      CHECK(c == doctest::Approx(0.5).epsilon(1e-12));
    }
  }

  SUBCASE("tail mass acts as one pseudo token") {
    const TopKLogprobs entries{{"a", std::log(0.6)}, {"b", std::log(0.3)}};
    const double tau = 2.0;
    // Oracle: renormalize the three masses {0.6, 0.3, 0.1} after ^(1/tau).
    const double pa = std::pow(0.6, 1.0 / tau);
    const double pb = std::pow(0.3, 1.0 / tau);
    const double pt = std::pow(0.1, 1.0 / tau);
    const double expected = pa / (pa + pb + pt);
    const double got = confidence_from_topk_logprobs(entries, Temperature(tau)).value;
    CHECK(got == doctest::Approx(expected).epsilon(1e-9));
  }

  SUBCASE("masses above 1 are inconsistent") {
    const TopKLogprobs entries{{"a", std::log(0.7)}, {"b", std::log(0.7)}};
    try {
      confidence_from_topk_logprobs(entries, Temperature(1.0));
      FAIL("expected inconsistent-logprobs");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::InconsistentLogprobs);
    }
  }

  SUBCASE("positive logprob rejected") {
    CHECK_THROWS_AS(confidence_from_topk_logprobs({{"a", 0.1}}, Temperature(1.0)), Error);
  }

  SUBCASE("empty map rejected") {
    CHECK_THROWS_AS(confidence_from_topk_logprobs({}, Temperature(1.0)), Error);
  }
}

TEST_CASE("implementation softmax agrees with the naive oracle") {
  rng::Engine eng = rng::seeded(77);
  for (int trial = 0; trial < 300; ++trial) {
    std::vector<double> z(2 + rng::next_below(eng, 10));
    for (double& v : z) v = rng::next_gaussian(eng) * 6.0;
    const double tau = 0.1 + 3.9 * rng::next_unit(eng);
    const auto got = softmax_with_temperature(lv(z), Temperature(tau));
    const auto expected = naive_softmax(z, tau);
    for (std::size_t i = 0; i < z.size(); ++i) {
      CHECK(got[i] == doctest::Approx(expected[i]).epsilon(1e-12));
    }
  }
}
