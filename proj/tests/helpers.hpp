#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <vector>

#include "cpl/model.hpp"

namespace testutil {

inline cpl::CplModel RandomModel(int k, cpl::Rng& rng, double theta_scale = 1.0,
                                 double w_scale = 0.5) {
  std::normal_distribution<double> n(0.0, 1.0);
  cpl::Vector theta(k + 1);
  for (int i = 0; i <= k; ++i) theta[i] = theta_scale * n(rng);
  cpl::Matrix w = cpl::Matrix::Zero(k + 1, k + 1);
  for (int c = 0; c < k; ++c) {
    for (int r = 0; r < k; ++r) w(r, c) = w_scale * n(rng);
  }
  return cpl::MakeModel(std::move(theta), std::move(w));
}

// Random selection order of length m over [0, k).
inline std::vector<int> RandomOrder(int k, int m, cpl::Rng& rng) {
  std::vector<int> all(k);
  std::iota(all.begin(), all.end(), 0);
  std::shuffle(all.begin(), all.end(), rng);
  all.resize(m);
  return all;
}

// Plain softmax, written out independently of the library.
inline std::vector<double> Softmax(const std::vector<double>& x) {
  const double m = *std::max_element(x.begin(), x.end());
  std::vector<double> e(x.size());
  double s = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) s += (e[i] = std::exp(x[i] - m));
  for (double& v : e) v /= s;
  return e;
}

}  // namespace testutil
