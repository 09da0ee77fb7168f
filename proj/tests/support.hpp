#pragma once

#include "lgsid/common.hpp"
#include "lgsid/corpus.hpp"
#include "lgsid/nn.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iterator>
#include <sstream>
#include <string>

namespace lgsid::test {

// Relative error with a floor so that near-zero gradients compare absolutely.
inline double rel_err(double a, double b, double floor = 1e-6) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

inline double central_difference(const std::function<double()>& f, double& x, double eps = 1e-5) {
  const double saved = x;
  x = saved + eps;
  const double up = f();
  x = saved - eps;
  const double down = f();
  x = saved;
  return (up - down) / (2.0 * eps);
}

/// Largest relative error between `analytic` and central differences of
/// `f` over every entry of `m`.
template <class Mat>
double max_fd_error(const std::function<double()>& f, Mat& m, const Mat& analytic,
                    double eps = 1e-5) {
  double worst = 0.0;
  for (Eigen::Index i = 0; i < m.size(); ++i) {
    const double fd = central_difference(f, m.data()[i], eps);
    worst = std::max(worst, rel_err(analytic.data()[i], fd));
  }
  return worst;
}

inline Matrix random_matrix(Eigen::Index rows, Eigen::Index cols, Rng& rng, double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
  return m;
}

inline Matrix unit_rows(Matrix m) {
  for (Eigen::Index i = 0; i < m.rows(); ++i) m.row(i).normalize();
  return m;
}

/// Two provinces, two cities each, two towns each: 8 towns of `per_town` items.
inline CorpusConfig small_corpus_config(int per_town = 30, int users = 200) {
  CorpusConfig c;
  c.n_provinces = 2;
  c.cities_per_province = 2;
  c.towns_per_city = 2;
  c.items_per_town = per_town;
  c.n_users = users;
  c.clicks_per_user = 8;
  c.n_brands = 16;
  c.seed = 11;
  return c;
}

inline std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

/// Fresh scratch directory under the build tree.
inline std::filesystem::path scratch_dir(const std::string& name) {
  const auto p = std::filesystem::temp_directory_path() / ("lgsid_test_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

}  // namespace lgsid::test
