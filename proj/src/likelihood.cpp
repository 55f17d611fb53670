#include "handfit/likelihood.hpp"

namespace handfit {

namespace {

std::array<Pixel<double>, kRegressedJoints> to_pixels(const Eigen::Matrix<double, kRegressedJoints, 2>& mu) {
  std::array<Pixel<double>, kRegressedJoints> px;
  for (int i = 0; i < kRegressedJoints; ++i) px[i] = {mu(i, 0), mu(i, 1)};
  return px;
}

}  // namespace

double nll_loss(const Eigen::Matrix<double, kRegressedJoints, 2>& mu,
                const Eigen::Matrix<double, kRegressedJoints, 1>& sigma, const LandmarkObservation& obs) {
  const auto px = to_pixels(mu);
  std::array<double, kRegressedJoints> log_sigma;
  for (int i = 0; i < kRegressedJoints; ++i) {
    log_sigma[i] = std::log(std::clamp(sigma[i], kSigmaMin, kSigmaMax));
  }
  return nll_loss<double>(px.data(), log_sigma.data(), obs);
}

double mse_loss(const Eigen::Matrix<double, kRegressedJoints, 2>& mu, const LandmarkObservation& obs) {
  const auto px = to_pixels(mu);
  return mse_loss<double>(px.data(), obs);
}

}  // namespace handfit
