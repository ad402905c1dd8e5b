#pragma once

#include <cstdint>
#include <vector>

namespace dpcl {

using Point = std::vector<double>;

struct KMeansResult {
  std::vector<Point> centers;
  std::vector<int> assignment;
  std::vector<std::int64_t> init_indices;  // points used as initial centers
  std::vector<double> inertia_trace;       // inertia after each assignment step
  int iterations = 0;
};

// Lloyd's algorithm with seeded random-point initialization. An empty
// cluster keeps its previous center. Stops when no center moves more than
// `tol` (L2) or after `max_iter` iterations.
KMeansResult lloyd_kmeans(const std::vector<Point>& points, int q, std::uint64_t seed, int max_iter = 100,
                          double tol = 1e-6);

double squared_distance(const Point& a, const Point& b);
// Index of the nearest center; ties go to the lowest index.
int nearest_index(const Point& x, const std::vector<Point>& centers);

}  // namespace dpcl
