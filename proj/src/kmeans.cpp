#include "dpcl/kmeans.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "dpcl/common.hpp"
#include "dpcl/rng.hpp"

namespace dpcl {

double squared_distance(const Point& a, const Point& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return s;
}

int nearest_index(const Point& x, const std::vector<Point>& centers) {
  if (centers.empty()) throw StateError("nearest_index: no centers");
  int best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t c = 0; c < centers.size(); ++c) {
    const double d = squared_distance(x, centers[c]);
    if (d < best_d) {
      best_d = d;
      best = static_cast<int>(c);
    }
  }
  return best;
}

KMeansResult lloyd_kmeans(const std::vector<Point>& points, int q, std::uint64_t seed, int max_iter, double tol) {
  if (q < 1) throw ConfigError("kmeans: q must be >= 1");
  if (static_cast<std::size_t>(q) > points.size()) throw ConfigError("kmeans: q exceeds number of points");
  const std::size_t dim = points.front().size();
  for (const auto& p : points)
    if (p.size() != dim) throw ShapeError("kmeans: inconsistent point dimensions");

  KMeansResult r;
  Rng rng(seed, /*stream=*/7);
  // Seeded random points, preferring distinct values so repeated inputs
  // never start two centers on the same location.
  const auto order = rng.sample_without_replacement(static_cast<std::int64_t>(points.size()),
                                                    static_cast<std::int64_t>(points.size()));
  for (auto idx : order) {
    if (r.init_indices.size() == static_cast<std::size_t>(q)) break;
    const auto& p = points[static_cast<std::size_t>(idx)];
    bool seen = false;
    for (auto j : r.init_indices) seen = seen || points[static_cast<std::size_t>(j)] == p;
    if (!seen) r.init_indices.push_back(idx);
  }
  for (auto idx : order) {
    if (r.init_indices.size() == static_cast<std::size_t>(q)) break;
    if (std::find(r.init_indices.begin(), r.init_indices.end(), idx) == r.init_indices.end()) r.init_indices.push_back(idx);
  }
  for (auto idx : r.init_indices) r.centers.push_back(points[static_cast<std::size_t>(idx)]);
  r.assignment.assign(points.size(), 0);

  for (int it = 0; it < max_iter; ++it) {
    double inertia = 0.0;
    for (std::size_t i = 0; i < points.size(); ++i) {
      r.assignment[i] = nearest_index(points[i], r.centers);
      inertia += squared_distance(points[i], r.centers[static_cast<std::size_t>(r.assignment[i])]);
    }
    r.inertia_trace.push_back(inertia);
    ++r.iterations;

    std::vector<Point> sums(static_cast<std::size_t>(q), Point(dim, 0.0));
    std::vector<std::size_t> counts(static_cast<std::size_t>(q), 0);
    for (std::size_t i = 0; i < points.size(); ++i) {
      auto& s = sums[static_cast<std::size_t>(r.assignment[i])];
      for (std::size_t d = 0; d < dim; ++d) s[d] += points[i][d];
      ++counts[static_cast<std::size_t>(r.assignment[i])];
    }
    double max_shift = 0.0;
    for (std::size_t c = 0; c < static_cast<std::size_t>(q); ++c) {
      if (counts[c] == 0) continue;
      for (auto& v : sums[c]) v /= static_cast<double>(counts[c]);
      max_shift = std::max(max_shift, std::sqrt(squared_distance(sums[c], r.centers[c])));
      r.centers[c] = sums[c];
    }
    if (max_shift <= tol) break;
  }
  return r;
}

}  // namespace dpcl
