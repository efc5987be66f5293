#include "gradsup/boundary.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <fstream>
#include <stdexcept>

namespace gradsup {

namespace {

std::string fmt(double v) {
  std::array<char, 32> buf;
  auto [end, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), v);
  return std::string(buf.data(), end);
}

double probability(const ModelParams& model, double x, double y) {
  Tensor logits = forward_values(model, Tensor::vec({x, y}));
  if (logits.size() == 1) return 1.0 / (1.0 + std::exp(-logits[0]));
  double mx = logits[0];
  for (std::size_t i = 1; i < logits.size(); ++i) mx = std::max(mx, logits[i]);
  double denom = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i)
    denom += std::exp(logits[i] - mx);
  return std::exp(logits[0] - mx) / denom;
}

}  // namespace

double BoundaryGrid::x_at(std::size_t col) const {
  if (res == 1) return (x_min + x_max) / 2.0;
  return x_min + (x_max - x_min) * static_cast<double>(col) /
                     static_cast<double>(res - 1);
}

double BoundaryGrid::y_at(std::size_t row) const {
  if (res == 1) return (y_min + y_max) / 2.0;
  return y_min + (y_max - y_min) * static_cast<double>(row) /
                     static_cast<double>(res - 1);
}

BoundaryGrid boundary_grid(const ModelParams& model, const Dataset& data,
                           std::size_t res) {
  if (model.input_width() != 2)
    throw std::invalid_argument(
        "boundary grids need a model with input width 2, got width " +
        std::to_string(model.input_width()));
  if (data.feature_width() != 2)
    throw std::invalid_argument("boundary grids need 2-coordinate data");
  if (res < 2) throw std::invalid_argument("grid resolution must be >= 2");
  if (data.examples.empty()) throw std::invalid_argument("empty dataset");

  BoundaryGrid grid;
  grid.res = res;
  grid.x_min = grid.x_max = (*data.examples.front().features)[0];
  grid.y_min = grid.y_max = (*data.examples.front().features)[1];
  for (const Example& e : data.examples) {
    grid.x_min = std::min(grid.x_min, (*e.features)[0]);
    grid.x_max = std::max(grid.x_max, (*e.features)[0]);
    grid.y_min = std::min(grid.y_min, (*e.features)[1]);
    grid.y_max = std::max(grid.y_max, (*e.features)[1]);
  }
  const double mx = 0.1 * std::max(grid.x_max - grid.x_min, 1e-6);
  const double my = 0.1 * std::max(grid.y_max - grid.y_min, 1e-6);
  grid.x_min -= mx;
  grid.x_max += mx;
  grid.y_min -= my;
  grid.y_max += my;

  grid.scores.resize(res * res);
  for (std::size_t row = 0; row < res; ++row)
    for (std::size_t col = 0; col < res; ++col)
      grid.scores[row * res + col] =
          probability(model, grid.x_at(col), grid.y_at(row));
  return grid;
}

void write_grid_csv(const BoundaryGrid& grid, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write grid " + path.string());
  out << "x,y,score\n";
  for (std::size_t row = 0; row < grid.res; ++row)
    for (std::size_t col = 0; col < grid.res; ++col)
      out << fmt(grid.x_at(col)) << ',' << fmt(grid.y_at(row)) << ','
          << fmt(grid.scores[row * grid.res + col]) << '\n';
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

namespace {

struct Mapper {
  const BoundaryGrid& grid;
  static constexpr double kSize = 480.0;
  double px(double x) const {
    return (x - grid.x_min) / (grid.x_max - grid.x_min) * kSize;
  }
  double py(double y) const {
    // SVG y grows downward.
    return kSize - (y - grid.y_min) / (grid.y_max - grid.y_min) * kSize;
  }
};

// Linear interpolation of the 0.5 crossing between two grid values.
double cross(double a, double b) { return (0.5 - a) / (b - a); }

}  // namespace

void write_boundary_svg(const BoundaryGrid& grid, const Dataset& data,
                        std::span<const CounterfactualPair> pairs,
                        const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write svg " + path.string());
  Mapper m{grid};
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"480\" "
         "height=\"480\" viewBox=\"0 0 480 480\">\n";
  out << "<rect width=\"480\" height=\"480\" fill=\"white\"/>\n";

  // Pair segments under the points.
  for (const auto& pair : pairs) {
    const auto& a = *data.examples.at(pair.a).features;
    const auto& b = *data.examples.at(pair.b).features;
    out << "<line class=\"pair\" x1=\"" << fmt(m.px(a[0])) << "\" y1=\""
        << fmt(m.py(a[1])) << "\" x2=\"" << fmt(m.px(b[0])) << "\" y2=\""
        << fmt(m.py(b[1]))
        << "\" stroke=\"#999999\" stroke-width=\"1\" stroke-dasharray=\"4 3\"/>\n";
  }

  for (const Example& e : data.examples) {
    const bool positive = e.labels.size() == 1
                              ? e.labels[0] == 1
                              : !e.labels.empty() && e.labels[0] == 1;
    out << "<circle cx=\"" << fmt(m.px((*e.features)[0])) << "\" cy=\""
        << fmt(m.py((*e.features)[1])) << "\" r=\"3\" fill=\""
        << (positive ? "#d1495b" : "#30638e") << "\"/>\n";
  }

  // Marching-squares segments of the 0.5 level, one cell at a time.
  auto point = [&](double gx, double gy) {
    const double x = grid.x_min + (grid.x_max - grid.x_min) * gx /
                                      static_cast<double>(grid.res - 1);
    const double y = grid.y_min + (grid.y_max - grid.y_min) * gy /
                                      static_cast<double>(grid.res - 1);
    return std::pair<double, double>{m.px(x), m.py(y)};
  };
  for (std::size_t row = 0; row + 1 < grid.res; ++row) {
    for (std::size_t col = 0; col + 1 < grid.res; ++col) {
      const double v00 = grid.scores[row * grid.res + col];
      const double v10 = grid.scores[row * grid.res + col + 1];
      const double v01 = grid.scores[(row + 1) * grid.res + col];
      const double v11 = grid.scores[(row + 1) * grid.res + col + 1];
      std::vector<std::pair<double, double>> hits;
      auto edge = [&](double a, double b, double ax, double ay, double bx,
                      double by) {
        if ((a < 0.5) == (b < 0.5)) return;
        if (a == b) return;
        const double t = cross(a, b);
        hits.push_back(point(ax + (bx - ax) * t, ay + (by - ay) * t));
      };
      const auto r = static_cast<double>(row);
      const auto c = static_cast<double>(col);
      edge(v00, v10, c, r, c + 1, r);
      edge(v10, v11, c + 1, r, c + 1, r + 1);
      edge(v11, v01, c + 1, r + 1, c, r + 1);
      edge(v01, v00, c, r + 1, c, r);
      if (hits.size() >= 2)
        out << "<line class=\"contour\" x1=\"" << fmt(hits[0].first)
            << "\" y1=\"" << fmt(hits[0].second) << "\" x2=\""
            << fmt(hits[1].first) << "\" y2=\"" << fmt(hits[1].second)
            << "\" stroke=\"black\" stroke-width=\"1.5\"/>\n";
    }
  }
  out << "</svg>\n";
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

}  // namespace gradsup
