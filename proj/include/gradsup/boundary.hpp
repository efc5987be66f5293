#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <vector>

#include "gradsup/data.hpp"
#include "gradsup/model.hpp"

namespace gradsup {

// res x res probability scores over the data's bounding box plus a 10%
// margin. Scores are sigmoid(logit) for binary models and the softmax
// probability of class 0 otherwise, so 0.5 marks the binary boundary.
struct BoundaryGrid {
  std::size_t res = 0;
  double x_min = 0, x_max = 0, y_min = 0, y_max = 0;
  std::vector<double> scores;  // row-major, y outer, x inner

  double x_at(std::size_t col) const;
  double y_at(std::size_t row) const;
};

BoundaryGrid boundary_grid(const ModelParams& model, const Dataset& data,
                           std::size_t res);

// One "x,y,score" line per grid point, header included.
void write_grid_csv(const BoundaryGrid& grid, const std::filesystem::path& path);

// Points, counterfactual pair segments, and the 0.5-level contour.
void write_boundary_svg(const BoundaryGrid& grid, const Dataset& data,
                        std::span<const CounterfactualPair> pairs,
                        const std::filesystem::path& path);

}  // namespace gradsup
