#pragma once

#include <cstddef>
#include <random>
#include <vector>

#include "gnas/tensor.hpp"

namespace gnas {

struct AdamOptions {
  double lr = 0.005;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Adam with bias correction. Holds first/second moments for a fixed list of
// parameters; the parameters themselves are owned elsewhere.
class Adam {
 public:
  Adam(std::vector<Parameter*> params, AdamOptions options);

  // Applies one update from each parameter's accumulated grad.
  void step();
  void zero_grad();

  std::size_t steps() const { return step_; }
  const AdamOptions& options() const { return options_; }

 private:
  std::vector<Parameter*> params_;
  AdamOptions options_;
  std::vector<Tensor> m_;
  std::vector<Tensor> v_;
  std::size_t step_ = 0;
};

// One Adam update of `value` from `grad` against explicit moment buffers.
// `step` is the 1-based index of this update.
void adam_update(Tensor& value, const Tensor& grad, Tensor& m, Tensor& v, std::size_t step,
                 const AdamOptions& options);

// Uniform on [-sqrt(6/(fan_in+fan_out)), +sqrt(6/(fan_in+fan_out))], shaped [fan_in x fan_out].
Tensor glorot_init(std::size_t fan_in, std::size_t fan_out, std::mt19937_64& rng);
// Glorot bound computed from (fan_in, fan_out) but shaped [rows x cols].
Tensor glorot_init_shaped(std::size_t rows, std::size_t cols, std::size_t fan_in, std::size_t fan_out,
                          std::mt19937_64& rng);
Tensor uniform_init(std::size_t rows, std::size_t cols, double bound, std::mt19937_64& rng);

}  // namespace gnas
