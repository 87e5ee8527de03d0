#pragma once

#include <Eigen/Dense>

#include <cassert>
#include <limits>
#include <random>
#include <string>
#include <vector>

#include "wsidg/error.hpp"
#include "wsidg/random.hpp"

namespace wsidg {

struct KMeansOptions {
  int max_iterations = 300;
  int restarts = 10;  // independent k-means++ initializations; best objective wins
};

template <typename Scalar>
struct KMeansResult {
  Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> centroids;  // k x dim
  std::vector<int> assignments;
  Scalar objective = 0;  // sum of squared distances to assigned centroids
  bool converged = false;
  int iterations = 0;
  std::vector<Scalar> objective_history;  // per Lloyd iteration of the winning restart
  int reseeded_clusters = 0;
};

// Index of the nearest row of `centroids`; ties go to the lowest index.
template <typename Derived, typename CDerived>
int nearest_centroid(const Eigen::MatrixBase<Derived>& point, const Eigen::MatrixBase<CDerived>& centroids,
                     typename Derived::Scalar* distance = nullptr) {
  using Scalar = typename Derived::Scalar;
  int best = 0;
  Scalar best_d = std::numeric_limits<Scalar>::infinity();
  for (Eigen::Index c = 0; c < centroids.rows(); ++c) {
    const Scalar d = (centroids.row(c) - point).squaredNorm();
    if (d < best_d) {
      best_d = d;
      best = static_cast<int>(c);
    }
  }
  if (distance) *distance = best_d;
  return best;
}

namespace detail {

template <typename Scalar>
using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

template <typename Scalar>
Mat<Scalar> kmeans_plus_plus(const Mat<Scalar>& points, int k, Rng& rng) {
  const Eigen::Index n = points.rows();
  Mat<Scalar> centroids(k, points.cols());
  std::vector<bool> chosen(n, false);
  std::uniform_int_distribution<Eigen::Index> pick(0, n - 1);
  Eigen::Index first = pick(rng);
  centroids.row(0) = points.row(first);
  chosen[first] = true;
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> d2 = (points.rowwise() - centroids.row(0)).rowwise().squaredNorm();
  for (int c = 1; c < k; ++c) {
    const Scalar total = d2.sum();
    Eigen::Index next = -1;
    if (total > 0) {
      std::uniform_real_distribution<double> u(0.0, static_cast<double>(total));
      double r = u(rng);
      for (Eigen::Index i = 0; i < n; ++i) {
        r -= static_cast<double>(d2(i));
        if (r <= 0 && d2(i) > 0) {
          next = i;
          break;
        }
      }
      if (next < 0) {
        for (Eigen::Index i = n; i-- > 0;) {
          if (d2(i) > 0) {
            next = i;
            break;
          }
        }
      }
    } else {
      // All remaining points coincide with a centroid: take an unchosen index.
      std::vector<Eigen::Index> free;
      for (Eigen::Index i = 0; i < n; ++i) {
        if (!chosen[i]) free.push_back(i);
      }
      std::uniform_int_distribution<std::size_t> pf(0, free.size() - 1);
      next = free[pf(rng)];
    }
    chosen[next] = true;
    centroids.row(c) = points.row(next);
    d2 = d2.cwiseMin((points.rowwise() - centroids.row(c)).rowwise().squaredNorm());
  }
  return centroids;
}

template <typename Scalar>
Scalar assign(const Mat<Scalar>& points, const Mat<Scalar>& centroids, std::vector<int>& assignments) {
  Scalar objective = 0;
  for (Eigen::Index i = 0; i < points.rows(); ++i) {
    Scalar d;
    assignments[i] = nearest_centroid(points.row(i), centroids, &d);
    objective += d;
  }
  return objective;
}

template <typename Scalar>
KMeansResult<Scalar> lloyd(const Mat<Scalar>& points, Mat<Scalar> centroids, int max_iterations) {
  const Eigen::Index n = points.rows();
  const int k = static_cast<int>(centroids.rows());
  KMeansResult<Scalar> res;
  res.assignments.assign(n, -1);
  std::vector<int> previous;
  Scalar objective = assign(points, centroids, res.assignments);
  res.objective_history.push_back(objective);
  for (int it = 1; it <= max_iterations; ++it) {
    res.iterations = it;
    Mat<Scalar> sums = Mat<Scalar>::Zero(k, points.cols());
    std::vector<Eigen::Index> counts(k, 0);
    for (Eigen::Index i = 0; i < n; ++i) {
      sums.row(res.assignments[i]) += points.row(i);
      ++counts[res.assignments[i]];
    }
    for (int c = 0; c < k; ++c) {
      if (counts[c] > 0) {
        centroids.row(c) = sums.row(c) / static_cast<Scalar>(counts[c]);
        continue;
      }
      // Empty cluster: move it onto the point farthest from its own centroid.
      Eigen::Index far = 0;
      Scalar far_d = -1;
      for (Eigen::Index i = 0; i < n; ++i) {
        const Scalar d = (points.row(i) - centroids.row(res.assignments[i])).squaredNorm();
        if (d > far_d) {
          far_d = d;
          far = i;
        }
      }
      centroids.row(c) = points.row(far);
      ++res.reseeded_clusters;
    }
    previous = res.assignments;
    const Scalar prev_objective = objective;
    objective = assign(points, centroids, res.assignments);
    assert(objective <= prev_objective + Scalar(1e-9) * (Scalar(1) + prev_objective));
    (void)prev_objective;
    res.objective_history.push_back(objective);
    if (res.assignments == previous) {
      res.converged = true;
      break;
    }
  }
  res.centroids = std::move(centroids);
  res.objective = objective;
  return res;
}

}  // namespace detail

// Lloyd's algorithm with k-means++ seeding over the rows of `points`,
// squared Euclidean distance. Deterministic for a fixed seed.
template <typename Derived>
KMeansResult<typename Derived::Scalar> kmeans(const Eigen::MatrixBase<Derived>& points, int k,
                                              std::uint64_t seed, const KMeansOptions& options = {}) {
  using Scalar = typename Derived::Scalar;
  const detail::Mat<Scalar> pts = points;
  if (k < 1) throw InvalidInput("kmeans: k must be >= 1");
  if (k > pts.rows()) {
    throw InvalidInput("kmeans: k = " + std::to_string(k) + " exceeds the number of points (" +
                       std::to_string(pts.rows()) + ")");
  }
  if (!pts.allFinite()) throw InvalidInput("kmeans: non-finite input");
  Rng rng(mix_seed(seed, 31));
  KMeansResult<Scalar> best;
  bool have = false;
  for (int r = 0; r < std::max(1, options.restarts); ++r) {
    auto res = detail::lloyd(pts, detail::kmeans_plus_plus(pts, k, rng), options.max_iterations);
    if (!have || res.objective < best.objective) {
      best = std::move(res);
      have = true;
    }
  }
  return best;
}

}  // namespace wsidg
