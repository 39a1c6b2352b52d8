#include <doctest.h>

#include <map>
#include <set>

#include "oracles.hpp"
#include "slidekit/cluster.hpp"
#include "slidekit/errors.hpp"
#include "slidekit/random.hpp"
#include "slidekit/synth.hpp"

using namespace slidekit;

TEST_CASE("k = 1 is the global mean") {
  const RowMatrixXd x = oracle::gaussian_matrix(200, 5, 1);
  const ClusterModel m = kmeans_fit(x, {1, 100, 1e-6, 3});
  const Eigen::RowVectorXd mean = x.colwise().mean();
  CHECK((m.centroids.row(0) - mean).norm() < 1e-12);
  const double total = (x.rowwise() - mean).squaredNorm();
  CHECK(m.inertia == doctest::Approx(total).epsilon(1e-12));
}

TEST_CASE("two separated blobs") {
  const auto blobs = oracle::make_blobs(2, 1000, 4, 20.0, 1.0, 11);
  const ClusterModel m = kmeans_fit(blobs.points, {2, 100, 1e-6, 5});
  const auto labels = assign_nearest(m.centroids, blobs.points);
  CHECK(oracle::adjusted_rand_index(labels, blobs.labels) >= 0.99);

  const RowMatrixXd ref = oracle::lloyd(blobs.points, blobs.centers, 100);
  for (int c = 0; c < 2; ++c) {
    double best_truth = 1e300, best_ref = 1e300;
    for (int t = 0; t < 2; ++t) {
      best_truth = std::min(best_truth, (m.centroids.row(c) - blobs.centers.row(t)).norm());
      best_ref = std::min(best_ref, (m.centroids.row(c) - ref.row(t)).norm());
    }
    CHECK(best_truth <= 0.5);
    CHECK(best_ref <= 1e-9);
  }

  SUBCASE("each point twice gives the same centroids") {
    RowMatrixXd twice(blobs.points.rows() * 2, blobs.points.cols());
    twice << blobs.points, blobs.points;
    const ClusterModel d = kmeans_fit(twice, {2, 100, 1e-6, 5});
    for (int c = 0; c < 2; ++c) {
      double best = 1e300;
      for (int t = 0; t < 2; ++t) best = std::min(best, (d.centroids.row(c) - m.centroids.row(t)).norm());
      CHECK(best < 1e-9);
    }
  }
}

TEST_CASE("inertia never increases and converged labels are nearest centroids") {
  for (int trial = 0; trial < 20; ++trial) {
    const RowMatrixXd x = oracle::gaussian_matrix(150 + trial * 7, 3 + trial % 4, 100 + trial);
    const ClusterModel m = kmeans_fit(x, {2 + trial % 6, 100, 1e-9, static_cast<std::uint64_t>(trial)});
    REQUIRE(m.inertia_history.size() >= 1);
    for (std::size_t i = 1; i < m.inertia_history.size(); ++i) {
      CHECK(m.inertia_history[i] <= m.inertia_history[i - 1] * (1 + 1e-12));
    }
    const auto labels = assign_nearest(m.centroids, x);
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
      const double own = (x.row(i) - m.centroids.row(labels[static_cast<std::size_t>(i)])).squaredNorm();
      for (Eigen::Index c = 0; c < m.centroids.rows(); ++c) REQUIRE(own <= (x.row(i) - m.centroids.row(c)).squaredNorm());
    }
  }
  CHECK_THROWS_AS(kmeans_fit(oracle::gaussian_matrix(3, 2, 1), {5, 10, 1e-6, 0}), Error);
}

TEST_CASE("model format") {
  const ClusterModel m = kmeans_fit(oracle::gaussian_matrix(50, 6, 2), {4, 50, 1e-6, 1});
  const std::string bytes = m.serialize();
  const ClusterModel back = ClusterModel::deserialize(bytes);
  CHECK(back.serialize() == bytes);
  CHECK(back.k == 4);
  std::string bad = bytes;
  bad[1] = 'Z';
  CHECK_THROWS_AS(ClusterModel::deserialize(bad), FormatError);
  CHECK_THROWS_AS(ClusterModel::deserialize(bytes.substr(0, 20)), FormatError);
}

TEST_CASE("per-slide subsampling") {
  std::vector<std::vector<std::size_t>> groups(2);
  for (std::size_t i = 0; i < 100; ++i) groups[0].push_back(i);
  for (std::size_t i = 100; i < 10100; ++i) groups[1].push_back(i);
  const auto a = subsample_patches(groups, 500, 9);
  const auto b = subsample_patches(groups, 500, 9);
  CHECK(a == b);
  CHECK(a.size() == 600);
  CHECK(std::set<std::size_t>(a.begin(), a.end()).size() == 600);
  CHECK(std::count_if(a.begin(), a.end(), [](std::size_t r) { return r < 100; }) == 100);
  CHECK(subsample_patches(groups, 500, 10) != a);
}

TEST_CASE("label propagation") {
  RowMatrixXd labeled(5, 1);
  labeled << 0.0, 1.0, 2.0, 10.0, 20.0;
  const std::vector<int> labels = {2, 2, 7, 5, 9};

  RowMatrixXd q(1, 1);
  q << 10.0;
  CHECK(propagate_labels(labeled, labels, q, 1)[0] == 5);

  q << 0.9;  // nearest three: 1.0 (2), 0.0 (2), 2.0 (7)
  CHECK(propagate_labels(labeled, labels, q, 3)[0] == 2);

  q << 15.0;  // equidistant from 10 (5) and 20 (9)
  CHECK(propagate_labels(labeled, labels, q, 2)[0] == 5);

  const RowMatrixXd pts = oracle::gaussian_matrix(40, 3, 8);
  std::vector<int> lab(40);
  for (int i = 0; i < 40; ++i) lab[static_cast<std::size_t>(i)] = i % 7;
  CHECK(propagate_labels(pts, lab, pts, 1) == lab);
}

TEST_CASE("merge maps") {
  std::string identity = "raw_clusters 9\n";
  for (int m = 0; m < 9; ++m) identity += "meta " + std::to_string(m) + " 1.0\nmap " + std::to_string(m) + " " + std::to_string(m) + "\n";
  const std::vector<int> raw = {0, 1, 2, 3, 4, 5, 6, 7, 8};
  CHECK(apply_merge_map(raw, MergeMap::parse(identity)) == raw);

  const MergeMap only3 = MergeMap::parse("raw_clusters 9\nmeta 0 1.0 kept\nmap 3 0\ndrop 0-2 4-8\n");
  const std::vector<int> mixed = {3, 1, 3, 8, 0};
  const auto out = apply_merge_map(mixed, only3);
  CHECK(out == std::vector<int>{0, kDropped, 0, kDropped, kDropped});

  const MergeMap shipped = MergeMap::parse(synth_merge_map_k100());
  CHECK(shipped.meta_count() == 9);
  std::vector<int> labels;
  Rng rng(4);
  for (int i = 0; i < 5000; ++i) labels.push_back(static_cast<int>(rng.index(100)));
  const auto meta = apply_merge_map(labels, shipped);
  std::set<int> present(meta.begin(), meta.end());
  present.erase(kDropped);
  CHECK(present.size() == 9);
  CHECK(meta.size() == labels.size());

  CHECK(MergeMap::parse(shipped.serialize()).target == shipped.target);
  CHECK_THROWS_AS(MergeMap::parse("raw_clusters 3\nmeta 0 1\nmap 0-1 0\n"), ConfigError);
  CHECK_THROWS_AS(MergeMap::parse("raw_clusters 3\nmeta 0 1\nmap 0-2 1\n"), ConfigError);
  CHECK_THROWS_AS(MergeMap::parse("raw_clusters 3\nmeta 0 1\nmap 0-2 0\nmap 1 0\n"), ConfigError);
  CHECK_THROWS_AS(apply_merge_map(std::vector<int>{12}, only3), Error);
}
