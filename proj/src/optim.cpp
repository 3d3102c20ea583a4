#include "ceph/optim.hpp"

#include <cmath>

namespace ceph {

Adadelta::Adadelta(std::vector<nn::Parameter*> params, AdadeltaOptions options)
    : params_(std::move(params)), options_(options) {
  for (const nn::Parameter* p : params_) {
    square_avg_.emplace_back(p->value.shape());
    delta_avg_.emplace_back(p->value.shape());
  }
}

void Adadelta::step() {
  const double rho = options_.rho, eps = options_.eps, lr = options_.lr;
  for (std::size_t i = 0; i < params_.size(); ++i) {
    nn::Parameter& p = *params_[i];
    Tensor& sq = square_avg_[i];
    Tensor& acc = delta_avg_[i];
    for (std::size_t j = 0; j < p.value.size(); ++j) {
      const double g = p.grad[j];
      sq[j] = rho * sq[j] + (1.0 - rho) * g * g;
      const double delta = std::sqrt(acc[j] + eps) / std::sqrt(sq[j] + eps) * g;
      acc[j] = rho * acc[j] + (1.0 - rho) * delta * delta;
      p.value[j] -= lr * delta;
    }
  }
}

void Adadelta::zero_grad() {
  for (nn::Parameter* p : params_) p->zero_grad();
}

}  // namespace ceph
