#pragma once

// 2D landmark data terms: isotropic per-joint Gaussian NLL and plain MSE.

#include <algorithm>
#include <array>
#include <cmath>
#include <string>

#include <Eigen/Core>

#include "handfit/camera.hpp"
#include "handfit/hand_model.hpp"

namespace handfit {

inline constexpr double kSigmaMin = 0.5;   // pixels
inline constexpr double kSigmaMax = 64.0;  // pixels

struct LandmarkObservation {
  std::string source_id;
  Eigen::Matrix<double, kRegressedJoints, 2> positions = Eigen::Matrix<double, kRegressedJoints, 2>::Zero();
  std::array<bool, kRegressedJoints> visible{};

  int num_visible() const {
    int n = 0;
    for (bool b : visible) n += b ? 1 : 0;
    return n;
  }
};

// Minimum visible joints for a usable sample.
inline constexpr int kMinVisibleJoints = 4;

inline double clamp_log_sigma(double log_sigma) {
  return std::clamp(log_sigma, std::log(kSigmaMin), std::log(kSigmaMax));
}

// sum over visible joints and both coordinates of log sigma + r^2 / (2 sigma^2).
template <typename T>
T nll_loss(const Pixel<T>* mu, const T* log_sigma, const LandmarkObservation& obs) {
  using std::exp;
  T acc(0.0);
  for (int i = 0; i < kRegressedJoints; ++i) {
    if (!obs.visible[i]) continue;
    const T ru = mu[i].u - obs.positions(i, 0);
    const T rv = mu[i].v - obs.positions(i, 1);
    const T inv_var = exp(-2.0 * log_sigma[i]);
    acc += 2.0 * log_sigma[i] + 0.5 * (ru * ru + rv * rv) * inv_var;
  }
  return acc;
}

// Mean over visible joint coordinates of squared residuals; 0 if none.
template <typename T>
T mse_loss(const Pixel<T>* mu, const LandmarkObservation& obs) {
  T acc(0.0);
  int n = 0;
  for (int i = 0; i < kRegressedJoints; ++i) {
    if (!obs.visible[i]) continue;
    const T ru = mu[i].u - obs.positions(i, 0);
    const T rv = mu[i].v - obs.positions(i, 1);
    acc += ru * ru + rv * rv;
    n += 2;
  }
  if (n == 0) return T(0.0);
  return acc / static_cast<double>(n);
}

// Double-precision conveniences over a J x 2 prediction.
double nll_loss(const Eigen::Matrix<double, kRegressedJoints, 2>& mu, const Eigen::Matrix<double, kRegressedJoints, 1>& sigma,
                const LandmarkObservation& obs);
double mse_loss(const Eigen::Matrix<double, kRegressedJoints, 2>& mu, const LandmarkObservation& obs);

}  // namespace handfit
