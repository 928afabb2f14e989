#pragma once

// k-means with k-means++ seeding, plus the silhouette coefficient.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <vector>

#include "fluidlab/field.hpp"
#include "fluidlab/rng.hpp"

namespace fluidlab {

using Point = std::vector<double>;

inline double squared_distance(const Point& a, const Point& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return s;
}

struct KMeansResult {
  std::vector<std::size_t> assignments;
  std::vector<Point> centroids;
  double silhouette = 0.0;
  std::vector<double> inertia;  // after each assignment pass
  std::size_t iterations = 0;
};

/// Nearest centroid; ties go to the lowest index.
inline std::size_t nearest(const Point& p, const std::vector<Point>& centroids, double* dist = nullptr) {
  std::size_t best = 0;
  double bd = std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < centroids.size(); ++k) {
    const double d = squared_distance(p, centroids[k]);
    if (d < bd) {
      bd = d;
      best = k;
    }
  }
  if (dist) *dist = bd;
  return best;
}

inline std::vector<Point> kmeans_plus_plus(const std::vector<Point>& pts, std::size_t k, Rng& rng) {
  std::vector<Point> c{pts[rng.index(pts.size())]};
  std::vector<double> d2(pts.size());
  while (c.size() < k) {
    double total = 0.0;
    for (std::size_t i = 0; i < pts.size(); ++i) {
      nearest(pts[i], c, &d2[i]);
      total += d2[i];
    }
    if (total <= 0.0) {
      c.push_back(pts[rng.index(pts.size())]);
      continue;
    }
    double r = rng.uniform() * total;
    std::size_t pick = pts.size() - 1;
    for (std::size_t i = 0; i < pts.size(); ++i) {
      r -= d2[i];
      if (r < 0.0) {
        pick = i;
        break;
      }
    }
    c.push_back(pts[pick]);
  }
  return c;
}

/// Mean silhouette; points in singleton clusters score 0, and k < 2 gives 0.
inline double silhouette(const std::vector<Point>& pts, const std::vector<std::size_t>& labels, std::size_t k) {
  if (k < 2 || pts.size() < 2) return 0.0;
  std::vector<std::size_t> sizes(k);
  for (auto l : labels) ++sizes[l];
  double total = 0.0;
  std::vector<double> sum(k);
  for (std::size_t i = 0; i < pts.size(); ++i) {
    std::fill(sum.begin(), sum.end(), 0.0);
    for (std::size_t j = 0; j < pts.size(); ++j)
      if (j != i) sum[labels[j]] += std::sqrt(squared_distance(pts[i], pts[j]));
    const std::size_t own = labels[i];
    if (sizes[own] <= 1) continue;
    const double a = sum[own] / static_cast<double>(sizes[own] - 1);
    double b = std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < k; ++c)
      if (c != own && sizes[c] > 0) b = std::min(b, sum[c] / static_cast<double>(sizes[c]));
    if (!std::isfinite(b)) continue;
    const double m = std::max(a, b);
    if (m > 0.0) total += (b - a) / m;
  }
  return total / static_cast<double>(pts.size());
}

/// Lloyd iterations until assignments stop changing or `iters` passes. An
/// empty cluster is re-seeded at the point farthest from its centroid.
inline KMeansResult kmeans(const std::vector<Point>& pts, std::size_t k, std::uint64_t seed, std::size_t iters = 100) {
  require(!pts.empty() && k >= 1 && k <= pts.size(), "kmeans: need 1 <= k <= number of points");
  const std::size_t dim = pts[0].size();
  Rng rng(seed);
  KMeansResult r;
  r.centroids = kmeans_plus_plus(pts, k, rng);
  r.assignments.assign(pts.size(), k);
  for (std::size_t it = 0; it < iters; ++it) {
    bool changed = false;
    double inertia = 0.0;
    std::vector<double> dist(pts.size());
    for (std::size_t i = 0; i < pts.size(); ++i) {
      const std::size_t c = nearest(pts[i], r.centroids, &dist[i]);
      inertia += dist[i];
      if (c != r.assignments[i]) {
        r.assignments[i] = c;
        changed = true;
      }
    }
    r.inertia.push_back(inertia);
    r.iterations = it + 1;
    std::vector<Point> next(k, Point(dim, 0.0));
    std::vector<std::size_t> count(k);
    for (std::size_t i = 0; i < pts.size(); ++i) {
      ++count[r.assignments[i]];
      for (std::size_t j = 0; j < dim; ++j) next[r.assignments[i]][j] += pts[i][j];
    }
    for (std::size_t c = 0; c < k; ++c) {
      if (count[c] == 0) {
        std::size_t far = 0;
        for (std::size_t i = 1; i < pts.size(); ++i)
          if (dist[i] > dist[far]) far = i;
        next[c] = pts[far];
        dist[far] = 0.0;
        changed = true;
      } else {
        for (double& v : next[c]) v /= static_cast<double>(count[c]);
      }
    }
    r.centroids = std::move(next);
    if (!changed) break;
  }
  r.silhouette = silhouette(pts, r.assignments, k);
  return r;
}

/// The k in [k_min, k_max] with the best silhouette (lowest k on ties).
inline KMeansResult best_kmeans(const std::vector<Point>& pts, std::size_t k_min, std::size_t k_max, std::uint64_t seed) {
  KMeansResult best;
  bool have = false;
  for (std::size_t k = k_min; k <= std::min(k_max, pts.size()); ++k) {
    KMeansResult r = kmeans(pts, k, seed + k);
    if (!have || r.silhouette > best.silhouette) {
      best = std::move(r);
      have = true;
    }
  }
  return best;
}

}  // namespace fluidlab
