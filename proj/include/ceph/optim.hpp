#pragma once

#include <vector>

#include "ceph/nn.hpp"

namespace ceph {

/// Adadelta with the customary defaults (lr 1.0, rho 0.9, eps 1e-6):
///
///   E[g^2]  <- rho E[g^2]  + (1 - rho) g^2
///   dx       = sqrt(E[dx^2] + eps) / sqrt(E[g^2] + eps) * g
///   E[dx^2] <- rho E[dx^2] + (1 - rho) dx^2
///   x       <- x - lr dx
struct AdadeltaOptions {
  double lr = 1.0;
  double rho = 0.9;
  double eps = 1e-6;
};

class Adadelta {
 public:
  Adadelta(std::vector<nn::Parameter*> params, AdadeltaOptions options = {});

  void step();
  void zero_grad();
  const AdadeltaOptions& options() const { return options_; }

 private:
  std::vector<nn::Parameter*> params_;
  AdadeltaOptions options_;
  std::vector<Tensor> square_avg_;
  std::vector<Tensor> delta_avg_;
};

}  // namespace ceph
