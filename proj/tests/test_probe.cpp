#include <doctest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "slidekit/probe.hpp"
#include "support.hpp"

using namespace slidekit;

namespace {

struct Dataset {
  Eigen::MatrixXd x;
  std::vector<int> y;
};

Dataset blobs(int n_per_class, int classes, int dim, double separation, unsigned seed) {
  std::mt19937 gen(seed);
  std::normal_distribution<double> nd;
  Dataset d;
  d.x.resize(n_per_class * classes, dim);
  for (int c = 0; c < classes; ++c)
    for (int i = 0; i < n_per_class; ++i) {
      for (int j = 0; j < dim; ++j) d.x(c * n_per_class + i, j) = nd(gen) + (j == c ? separation : 0.0);
      d.y.push_back(c);
    }
  return d;
}

}  // namespace

TEST_CASE("adam") {
  SUBCASE("first step moves each coordinate by lr against the gradient sign") {
    Eigen::VectorXd w = Eigen::VectorXd::Zero(3);
    Eigen::VectorXd g(3);
    g << 0.5, -3.0, 1e-3;
    AdamState s(3);
    adam_step(w, g, s, 0.01);
    CHECK(w[0] == doctest::Approx(-0.01).epsilon(1e-6));
    CHECK(w[1] == doctest::Approx(0.01).epsilon(1e-6));
    CHECK(w[2] == doctest::Approx(-0.01).epsilon(1e-4));
  }
  SUBCASE("zero gradients leave parameters unchanged") {
    Eigen::VectorXd w = Eigen::VectorXd::Constant(4, 1.25);
    AdamState s(4);
    for (int i = 0; i < 10; ++i) adam_step(w, Eigen::VectorXd::Zero(4), s, 0.1);
    CHECK((w.array() == 1.25).all());
  }
  SUBCASE("agrees with a scalar reference over many steps") {
    Eigen::VectorXd w = Eigen::VectorXd::Zero(1);
    AdamState s(1);
    double ref = 0.0, m = 0.0, v = 0.0;
    for (int t = 1; t <= 200; ++t) {
      const double g = std::sin(0.37 * t) + 0.2 * (ref - 1.0);
      adam_step(w, Eigen::VectorXd::Constant(1, g), s, 1e-3);
      m = 0.9 * m + 0.1 * g;
      v = 0.999 * v + 0.001 * g * g;
      const double mh = m / (1 - std::pow(0.9, t)), vh = v / (1 - std::pow(0.999, t));
      ref -= 1e-3 * mh / (std::sqrt(vh) + 1e-8);
      REQUIRE(w[0] == doctest::Approx(ref).epsilon(1e-10).scale(1.0));
    }
  }
  Eigen::VectorXd w = Eigen::VectorXd::Zero(2);
  AdamState s(2);
  CHECK_THROWS(adam_step(w, Eigen::Vector2d(1.0, std::nan("")), s, 0.1));
  CHECK_THROWS(adam_step(w, Eigen::VectorXd::Zero(3), s, 0.1));
}

TEST_CASE("cosine schedule") {
  CHECK(cosine_lr(0, 100, 0.2) == doctest::Approx(0.2));
  CHECK(cosine_lr(50, 100, 0.2) == doctest::Approx(0.1));
  CHECK(cosine_lr(100, 100, 0.2) == doctest::Approx(0.0));
  CHECK(cosine_lr(25, 100, 1.0) == doctest::Approx(0.5 * (1 + std::cos(std::numbers::pi / 4))));
  CHECK_THROWS(cosine_lr(0, 0, 1.0));
  CHECK_THROWS(cosine_lr(101, 100, 1.0));
}

TEST_CASE("cross-entropy gradient matches finite differences") {
  const Dataset d = blobs(10, 3, 4, 1.0, 2);
  LinearModel m;
  std::mt19937 gen(1);
  std::normal_distribution<double> nd(0.0, 0.3);
  m.weights = Eigen::MatrixXd::NullaryExpr(3, 4, [&] { return nd(gen); });
  m.bias = Eigen::VectorXd::NullaryExpr(3, [&] { return nd(gen); });
  Eigen::MatrixXd gw;
  Eigen::VectorXd gb;
  softmax_cross_entropy(m, d.x, d.y, &gw, &gb);
  const double h = 1e-6;
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 4; ++c) {
      LinearModel p = m, q = m;
      p.weights(r, c) += h;
      q.weights(r, c) -= h;
      const double fd = (softmax_cross_entropy(p, d.x, d.y) - softmax_cross_entropy(q, d.x, d.y)) / (2 * h);
      CHECK(gw(r, c) == doctest::Approx(fd).epsilon(1e-6).scale(1.0));
    }
    LinearModel p = m, q = m;
    p.bias[r] += h;
    q.bias[r] -= h;
    CHECK(gb[r] == doctest::Approx((softmax_cross_entropy(p, d.x, d.y) - softmax_cross_entropy(q, d.x, d.y)) / (2 * h))
                       .epsilon(1e-6)
                       .scale(1.0));
  }
  LinearModel zero{Eigen::MatrixXd::Zero(3, 4), Eigen::VectorXd::Zero(3)};
  CHECK(softmax_cross_entropy(zero, d.x, d.y) == doctest::Approx(std::log(3.0)));
}

TEST_CASE("training") {
  TrainConfig cfg;
  cfg.learning_rate = 1e-2;
  cfg.epochs = 20;
  cfg.batch_size = 32;
  cfg.seed = 3;

  SUBCASE("separable classes are learned") {
    const Dataset train = blobs(200, 3, 8, 8.0, 1), test = blobs(200, 3, 8, 8.0, 2);
    const LinearModel m = train_probe(train.x, train.y, cfg);
    CHECK(balanced_accuracy(m.predict(test.x), test.y) >= 0.99);
  }
  SUBCASE("shuffled labels stay at chance") {
    Dataset train = blobs(1000, 2, 10, 0.0, 4), test = blobs(1000, 2, 10, 0.0, 5);
    std::shuffle(train.y.begin(), train.y.end(), std::mt19937(7));
    const LinearModel m = train_probe(train.x, train.y, cfg);
    CHECK(std::abs(balanced_accuracy(m.predict(test.x), test.y) - 0.5) <= 0.05);
  }
  SUBCASE("same seed gives identical weights") {
    const Dataset train = blobs(50, 2, 5, 2.0, 1);
    const LinearModel a = train_probe(train.x, train.y, cfg), b = train_probe(train.x, train.y, cfg);
    CHECK(a.weights == b.weights);
    CHECK(a.bias == b.bias);
    TrainConfig other = cfg;
    other.seed = 4;
    CHECK(train_probe(train.x, train.y, other).weights != a.weights);
  }
  SUBCASE("full-data loss decreases epoch over epoch") {
    const Dataset train = blobs(100, 3, 6, 2.0, 8);
    TrainConfig short_run = cfg;
    short_run.epochs = 3;
    TrainReport report;
    train_probe(train.x, train.y, short_run, &report);
    REQUIRE(report.epoch_loss.size() == 3);
    CHECK(report.epoch_loss[0] < std::log(3.0));
    CHECK(report.epoch_loss[1] < report.epoch_loss[0]);
    CHECK(report.epoch_loss[2] < report.epoch_loss[1]);
  }
  SUBCASE("weight decay shrinks weights") {
    const Dataset train = blobs(100, 2, 4, 3.0, 9);
    TrainConfig wd = cfg;
    wd.weight_decay = 0.5;
    CHECK(train_probe(train.x, train.y, wd).weights.norm() < train_probe(train.x, train.y, cfg).weights.norm());
  }
  const std::vector<int> one_class(10, 1);
  CHECK_THROWS(train_probe(Eigen::MatrixXd::Zero(10, 2), one_class, cfg));
}

TEST_CASE("metrics") {
  const std::vector<int> labels = {0, 0, 1, 1}, preds = {0, 0, 0, 1};
  const Eigen::MatrixXi cm = confusion_matrix(preds, labels, 2);
  CHECK(cm(0, 0) == 2);
  CHECK(cm(0, 1) == 0);
  CHECK(cm(1, 0) == 1);
  CHECK(cm(1, 1) == 1);
  CHECK(balanced_accuracy(preds, labels) == doctest::Approx(0.75));
  CHECK(accuracy(preds, labels) == doctest::Approx(0.75));
  const ClassF1 f = per_class_f1(preds, labels);
  CHECK(f.f1[0] == doctest::Approx(0.8));
  CHECK(f.f1[1] == doctest::Approx(2.0 / 3));
  CHECK(macro_f1(preds, labels) == doctest::Approx((0.8 + 2.0 / 3) / 2));

  const std::vector<int> gap = {0, 2, 2}, gap_pred = {0, 2, 2};
  CHECK(per_class_f1(gap_pred, gap).defined[1] == false);
  CHECK(macro_f1(gap_pred, gap) == doctest::Approx(1.0));
  CHECK(balanced_accuracy(gap_pred, gap) == doctest::Approx(1.0));

  const std::vector<int> imbalanced = {0, 0, 0, 0, 0, 0, 0, 0, 0, 1}, all_zero(10, 0);
  CHECK(accuracy(all_zero, imbalanced) == doctest::Approx(0.9));
  CHECK(balanced_accuracy(all_zero, imbalanced) == doctest::Approx(0.5));
}

TEST_CASE("splits, sweeps and label files") {
  const auto [a, b] = split_rows(100, 0.2, 5);
  CHECK(a.size() == 80);
  CHECK(b.size() == 20);
  std::vector<std::size_t> all(a);
  all.insert(all.end(), b.begin(), b.end());
  std::sort(all.begin(), all.end());
  for (std::size_t i = 0; i < 100; ++i) CHECK(all[i] == i);
  CHECK(split_rows(100, 0.2, 5).second == b);

  const Dataset d = blobs(60, 2, 4, 4.0, 3);
  TrainConfig base;
  base.epochs = 5;
  base.batch_size = 16;
  const std::vector<double> lrs = {1e-6, 1e-2}, wds = {0.0, 1e-4};
  const SweepResult r = sweep_probe(d.x, d.y, lrs, wds, base);
  CHECK(r.trials.size() == 4);
  std::size_t best = 0;
  for (std::size_t i = 1; i < r.trials.size(); ++i)
    if (r.trials[i].validation_balanced_accuracy > r.trials[best].validation_balanced_accuracy) best = i;
  CHECK(r.learning_rate == r.trials[best].learning_rate);
  CHECK(r.weight_decay == r.trials[best].weight_decay);
  CHECK(r.validation_balanced_accuracy == r.trials[best].validation_balanced_accuracy);

  testing::TempDir dir("probe");
  testing::write_file(dir / "l.csv", "row,label\n0,1\n1,0\n5,2\n");
  const auto labels = load_labels_csv(dir / "l.csv");
  REQUIRE(labels.size() == 3);
  CHECK(labels[2] == std::pair<std::size_t, int>{5, 2});
  testing::write_file(dir / "bad.csv", "row,label\n0,-1\n");
  CHECK_THROWS(load_labels_csv(dir / "bad.csv"));
}
