#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <json.hpp>
#include <memory>
#include <random>

#include "oracles.hpp"
#include "pkd/metrics.hpp"

using namespace pkd;
using testing::brute_cap;
using testing::brute_eval;
using testing::brute_portions;
using testing::Brute;

namespace {

std::span<const bool> as_span(const std::unique_ptr<bool[]>& p, std::size_t n) { return {p.get(), n}; }

std::unique_ptr<bool[]> bools(std::initializer_list<bool> v) {
  auto p = std::make_unique<bool[]>(v.size());
  std::copy(v.begin(), v.end(), p.get());
  return p;
}

}  // namespace

TEST_CASE("average_precision hand fixtures") {
  const std::vector<double> s{0.9, 0.8, 0.7};
  auto pos = bools({true, false, true});
  CHECK(std::abs(average_precision(s, as_span(pos, 3)) - (1.0 + 2.0 / 3.0) / 2.0) <= 1e-15);
  CHECK(std::abs(calibrated_ap(s, as_span(pos, 3), 2.0) - 0.9) <= 1e-15);
  CHECK(calibrated_ap(s, as_span(pos, 3), 1.0) == average_precision(s, as_span(pos, 3)));

  auto perfect = bools({true, true, false});
  CHECK(average_precision(s, as_span(perfect, 3)) == 1.0);
  for (double w : {0.1, 1.0, 7.0}) CHECK(calibrated_ap(s, as_span(perfect, 3), w) == 1.0);

  const std::vector<double> one{0.3};
  auto single = bools({true});
  CHECK(average_precision(one, as_span(single, 1)) == 1.0);

  auto none = bools({false, false, false});
  CHECK_THROWS_AS(average_precision(s, as_span(none, 3)), std::invalid_argument);
  CHECK_THROWS_AS(calibrated_ap(s, as_span(pos, 3), 0.0), std::invalid_argument);
  CHECK_THROWS_AS(calibrated_ap(s, as_span(pos, 3), -1.0), std::invalid_argument);
}

TEST_CASE("ties are broken by frame index") {
  const std::vector<double> s{0.5, 0.5, 0.5};
  auto first = bools({true, false, false});
  auto last = bools({false, false, true});
  CHECK(average_precision(s, as_span(first, 3)) == 1.0);
  CHECK(std::abs(average_precision(s, as_span(last, 3)) - 1.0 / 3.0) <= 1e-15);
}

TEST_CASE("evaluate agrees with the brute-force rank walk on 500 fixtures") {
  std::mt19937_64 rng(1);
  double worst = 0.0;
  int done = 0;
  while (done < 500) {
    const int F = std::uniform_int_distribution<int>(1, 50)(rng);
    const int M = std::uniform_int_distribution<int>(1, 4)(rng);
    std::vector<int> labels(static_cast<std::size_t>(F));
    for (int& l : labels) l = std::uniform_int_distribution<int>(0, M)(rng);
    if (std::all_of(labels.begin(), labels.end(), [](int l) { return l == 0; })) continue;
    Tensor s = Tensor::matrix(static_cast<std::size_t>(F), static_cast<std::size_t>(M + 1));
    // Coarse scores so ties occur.
    for (double& v : s.data()) v = std::uniform_int_distribution<int>(0, 5)(rng) / 5.0;
    const EvalReport r = evaluate(s, labels);
    const Brute b = brute_eval(s, labels);
    REQUIRE(r.classes.size() == b.classes);
    worst = std::max({worst, std::abs(r.map - b.map), std::abs(r.mcap - b.mcap)});
    for (const auto& c : r.classes) {
      CHECK(c.ap >= 0.0);
      CHECK(c.ap <= 1.0);
      CHECK(c.cap <= 1.0);
    }
    ++done;
  }
  CHECK(worst <= 1e-9);
}

TEST_CASE("evaluate: structure and errors") {
  SUBCASE("one class, perfect scores") {
    const std::vector<int> labels{0, 1, 1, 0};
    Tensor s({4, 2}, std::vector<double>{1, 0, 0, 1, 0, 1, 1, 0});
    const EvalReport r = evaluate(s, labels);
    CHECK(r.map == 100.0);
    CHECK(r.mcap == 100.0);
    CHECK(r.classes.at(0).omega == 1.0);
  }
  SUBCASE("absent classes are skipped and listed") {
    const std::vector<int> labels{0, 2, 2, 0};
    const EvalReport r = evaluate(Tensor::matrix(4, 4), labels);
    CHECK(r.classes.size() == 1);
    CHECK(r.skipped_classes == std::vector<int>{1, 3});
    const auto j = nlohmann::json::parse(r.to_json());
    CHECK(j["skipped_classes"].size() == 2);
    CHECK(r.to_csv().find("class,AP,cAP,omega") == 0);
  }
  SUBCASE("no action frames") {
    const std::vector<int> labels{0, 0};
    CHECK_THROWS_AS(evaluate(Tensor::matrix(2, 3), labels), std::invalid_argument);
  }
  SUBCASE("labels out of range or miscounted") {
    const std::vector<int> labels{0, 3};
    CHECK_THROWS_AS(evaluate(Tensor::matrix(2, 3), labels), std::invalid_argument);
    const std::vector<int> three{0, 1, 1};
    CHECK_THROWS_AS(evaluate(Tensor::matrix(2, 3), three), std::invalid_argument);
  }
}

TEST_CASE("AP and cAP are invariant under monotone transforms") {
  std::mt19937_64 rng(2);
  std::normal_distribution<double> n;
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t F = 40;
    std::vector<int> labels(F);
    for (int& l : labels) l = static_cast<int>(rng() % 3);
    labels[0] = 1;
    labels[1] = 2;
    Tensor s = Tensor::matrix(F, 3);
    for (double& v : s.data()) v = n(rng);
    Tensor t = s;
    for (double& v : t.data()) v = std::exp(3.0 * v) - 7.0;
    const EvalReport a = evaluate(s, labels), b = evaluate(t, labels);
    CHECK(a.map == b.map);
    CHECK(a.mcap == b.mcap);
  }
}

TEST_CASE("cAP grows with omega when a false positive outranks a hit") {
  const std::vector<double> s{0.9, 0.8, 0.7, 0.1};
  auto pos = bools({false, true, false, true});
  double prev = 0.0;
  for (double w : {0.25, 0.5, 1.0, 2.0, 8.0}) {
    const double c = calibrated_ap(s, as_span(pos, 4), w);
    CHECK(c > prev);
    prev = c;
  }
}

TEST_CASE("swapping a positive above a negative never lowers AP") {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> n;
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t F = 20;
    std::vector<double> s(F);
    auto pos = std::make_unique<bool[]>(F);
    for (std::size_t i = 0; i < F; ++i) {
      s[i] = n(rng);
      pos[i] = rng() % 2;
    }
    pos[0] = true;
    pos[1] = false;
    if (s[0] > s[1]) std::swap(s[0], s[1]);
    const double before = average_precision(s, as_span(pos, F));
    std::swap(s[0], s[1]);
    CHECK(average_precision(s, as_span(pos, F)) >= before);
  }
}

TEST_CASE("random scores give AP near the class prior") {
  std::mt19937_64 rng(4);
  const std::size_t F = 100000;
  std::vector<int> labels(F);
  for (int& l : labels) l = static_cast<int>(rng() % 4);
  Tensor s = Tensor::matrix(F, 4);
  std::uniform_real_distribution<double> u;
  for (double& v : s.data()) v = u(rng);
  const EvalReport r = evaluate(s, labels);
  CHECK(std::abs(r.map - 25.0) <= 2.0);
  // With omega equal to the negative/positive ratio a random ranking gives cPrec ~ 1/2.
  CHECK(std::abs(r.mcap - 50.0) <= 2.0);
}

TEST_CASE("find_instances respects sequence boundaries") {
  const std::vector<int> labels{0, 1, 1, 2, 2, 2, 0, 1};
  auto inst = find_instances(labels);
  REQUIRE(inst.size() == 3);
  CHECK(inst[1].begin == 3);
  CHECK(inst[1].length == 3);
  const std::vector<std::size_t> starts{0, 5};
  inst = find_instances(labels, starts);
  REQUIRE(inst.size() == 4);
  CHECK(inst[1].length == 2);
  CHECK(inst[2].begin == 5);
}

TEST_CASE("portion_eval") {
  SUBCASE("instance of length bins puts one frame per bin") {
    std::vector<int> labels(14, 0);
    for (int i = 2; i < 12; ++i) labels[static_cast<std::size_t>(i)] = 1;
    Tensor s = Tensor::matrix(14, 2);
    for (std::size_t t = 0; t < 14; ++t) s.at(t, 1) = labels[t] ? 1.0 : 0.0;
    const auto r = portion_eval(s, labels);
    REQUIRE(r.size() == 10);
    for (double v : r) CHECK(v == 100.0);
  }
  SUBCASE("rising scores within instances favour later bins") {
    std::vector<int> labels;
    Tensor s = Tensor::matrix(3 * 30, 2);
    std::mt19937_64 rng(5);
    for (int rep = 0; rep < 3; ++rep)
      for (int i = 0; i < 30; ++i) labels.push_back(i >= 10 ? 1 : 0);
    for (std::size_t t = 0; t < labels.size(); ++t) {
      const int j = static_cast<int>(t % 30) - 10;
      s.at(t, 1) = labels[t] ? 0.05 * j : 0.3;
    }
    const auto r = portion_eval(s, labels);
    for (std::size_t b = 1; b < r.size(); ++b) CHECK(r[b] >= r[b - 1]);
  }
  SUBCASE("two-instance fixture against brute force") {
    const std::vector<int> labels{0, 1, 1, 1, 1, 0, 0, 2, 2, 2, 2, 2, 2, 0, 0};
    std::mt19937_64 rng(6);
    Tensor s = Tensor::matrix(labels.size(), 3);
    std::uniform_real_distribution<double> u;
    for (double& v : s.data()) v = u(rng);
    for (bool inc : {false, true}) {
      PortionOptions o;
      o.bins = 4;
      o.include_other_portions = inc;
      const auto got = portion_eval(s, labels, o);
      const auto ref = brute_portions(s, labels, 4, inc);
      REQUIRE(got.size() == ref.size());
      for (std::size_t b = 0; b < got.size(); ++b) CHECK(std::abs(got[b] - ref[b]) <= 1e-9);
    }
  }
  SUBCASE("random fixtures against brute force") {
    std::mt19937_64 rng(7);
    double worst = 0.0;
    for (int trial = 0; trial < 200; ++trial) {
      std::vector<int> labels;
      while (labels.size() < 60) {
        const int bg = static_cast<int>(rng() % 5), len = 1 + static_cast<int>(rng() % 12);
        const int cls = 1 + static_cast<int>(rng() % 3);
        labels.insert(labels.end(), static_cast<std::size_t>(bg) + 1, 0);
        labels.insert(labels.end(), static_cast<std::size_t>(len), cls);
      }
      Tensor s = Tensor::matrix(labels.size(), 4);
      for (double& v : s.data()) v = static_cast<double>(rng() % 7);
      PortionOptions o;
      o.bins = 1 + static_cast<int>(rng() % 10);
      o.include_other_portions = trial % 2;
      const auto got = portion_eval(s, labels, o);
      const auto ref = brute_portions(s, labels, o.bins, o.include_other_portions);
      for (std::size_t b = 0; b < got.size(); ++b) {
        REQUIRE(std::isnan(got[b]) == std::isnan(ref[b]));
        if (!std::isnan(got[b])) worst = std::max(worst, std::abs(got[b] - ref[b]));
      }
    }
    CHECK(worst <= 1e-9);
  }
  SUBCASE("bins < 1 rejected") {
    const std::vector<int> labels{0, 1};
    PortionOptions o;
    o.bins = 0;
    CHECK_THROWS_AS(portion_eval(Tensor::matrix(2, 2), labels, o), std::invalid_argument);
  }
}
