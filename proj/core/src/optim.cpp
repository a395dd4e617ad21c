#include "gnas/optim.hpp"

#include <cmath>

namespace gnas {

Adam::Adam(std::vector<Parameter*> params, AdamOptions options)
    : params_(std::move(params)), options_(options) {
  for (const Parameter* p : params_) {
    m_.emplace_back(p->value.rows(), p->value.cols());
    v_.emplace_back(p->value.rows(), p->value.cols());
  }
}

void Adam::step() {
  ++step_;
  for (std::size_t i = 0; i < params_.size(); ++i) {
    adam_update(params_[i]->value, params_[i]->grad, m_[i], v_[i], step_, options_);
  }
}

void Adam::zero_grad() {
  for (Parameter* p : params_) p->zero_grad();
}

void adam_update(Tensor& value, const Tensor& grad, Tensor& m, Tensor& v, std::size_t step,
                 const AdamOptions& o) {
  if (!value.same_shape(grad) || !value.same_shape(m) || !value.same_shape(v)) {
    throw ShapeError("adam: parameter " + shape_string(value) + " vs gradient " + shape_string(grad));
  }
  if (step == 0) throw ParameterError("adam: step index is 1-based");
  const double c1 = 1.0 - std::pow(o.beta1, static_cast<double>(step));
  const double c2 = 1.0 - std::pow(o.beta2, static_cast<double>(step));
  double* __restrict x = value.data().data();
  const double* __restrict gp = grad.data().data();
  double* __restrict mp = m.data().data();
  double* __restrict vp = v.data().data();
  for (std::size_t i = 0; i < value.size(); ++i) {
    const double g = gp[i];
    mp[i] = o.beta1 * mp[i] + (1.0 - o.beta1) * g;
    vp[i] = o.beta2 * vp[i] + (1.0 - o.beta2) * g * g;
    const double mhat = mp[i] / c1;
    const double vhat = vp[i] / c2;
    x[i] -= o.lr * mhat / (std::sqrt(vhat) + o.eps);
  }
}

Tensor uniform_init(std::size_t rows, std::size_t cols, double bound, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> dist(-bound, bound);
  Tensor t(rows, cols);
  for (double& v : t.data()) v = dist(rng);
  return t;
}

Tensor glorot_init_shaped(std::size_t rows, std::size_t cols, std::size_t fan_in, std::size_t fan_out,
                          std::mt19937_64& rng) {
  if (fan_in == 0 || fan_out == 0) throw ParameterError("glorot_init: fans must be >= 1");
  return uniform_init(rows, cols, std::sqrt(6.0 / static_cast<double>(fan_in + fan_out)), rng);
}

Tensor glorot_init(std::size_t fan_in, std::size_t fan_out, std::mt19937_64& rng) {
  return glorot_init_shaped(fan_in, fan_out, fan_in, fan_out, rng);
}

}  // namespace gnas
