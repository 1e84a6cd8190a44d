#pragma once

#include <Eigen/Dense>
#include <stdexcept>
#include <string>
#include <utility>

namespace scbf {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// Invalid configuration or dimension mismatch detected before/while running.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Numerical integration produced a non-finite state.
class IntegrationError : public std::runtime_error {
 public:
  IntegrationError(const std::string& msg, Vector state)
      : std::runtime_error(msg), state_(std::move(state)) {}
  const Vector& state() const { return state_; }

 private:
  Vector state_;
};

/// Filter covariance lost positive definiteness; caller decides the fallback.
class FilterDivergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline void require(bool cond, const std::string& msg) {
  if (!cond) throw ConfigError(msg);
}

}  // namespace scbf
