#pragma once

// Recurrent architecture controller trained with REINFORCE.
//
// A single-layer LSTM emits one categorical decision per slot of the action
// space. Each slot kind owns an output projection and a token embedding; the
// embedding of the token sampled at step t is the LSTM input at step t+1.
// Skip-source slots have a different option count per layer, so they get one
// projection/embedding pair per layer.

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <map>
#include <random>
#include <span>
#include <vector>

#include "gnas/arch_space.hpp"
#include "gnas/autodiff.hpp"
#include "gnas/optim.hpp"

namespace gnas {

struct ControllerOptions {
  std::size_t hidden = 100;
  double init_range = 0.1;
  std::uint64_t seed = 0;
};

struct SamplingOptions {
  double temperature = 5.0;
  double logit_clip = 2.5;
};

struct Episode {
  ArchDescription arch;
  std::vector<std::size_t> tokens;  // option index per slot
  double log_prob_sum = 0.0;
  double entropy_sum = 0.0;
  double reward = 0.0;
  double shaped_reward = 0.0;
};

class Controller {
 public:
  Controller(ActionSpace space, ControllerOptions options);

  Controller(const Controller&) = delete;
  Controller& operator=(const Controller&) = delete;
  Controller(Controller&&) = default;

  const ActionSpace& space() const { return space_; }
  std::size_t hidden_size() const { return options_.hidden; }

  // Samples one architecture slot by slot. Adjusted logits are
  // logit_clip * tanh(logits / temperature).
  Episode sample(const SamplingOptions& sampling, std::mt19937_64& rng) const;

  // Teacher-forced log P(tokens) without recording gradients.
  double sequence_log_prob(std::span<const std::size_t> tokens, const SamplingOptions& sampling) const;

  // Per-slot categorical distributions along a fixed token sequence.
  std::vector<std::vector<double>> step_probabilities(std::span<const std::size_t> tokens,
                                                      const SamplingOptions& sampling) const;

  // Teacher-forced sum of log-probabilities recorded on `tape`.
  Var log_prob(Tape& tape, std::span<const std::size_t> tokens, const SamplingOptions& sampling);

  std::vector<Parameter*> parameters();
  std::vector<const Parameter*> parameters() const;
  // Order-sensitive hash of all parameter bits.
  std::uint64_t checksum() const;

  // Versioned text checkpoint of named parameter arrays.
  void save(std::ostream& out) const;
  // Loads values into this controller; names and shapes must match.
  void load(std::istream& in);

 private:
  struct StepState {
    std::vector<double> h, c;
  };

  std::size_t head_of(const SlotSpec& slot) const;
  // Plain-arithmetic LSTM step; returns adjusted logits for `slot`.
  std::vector<double> step(StepState& state, const std::vector<double>& input, const SlotSpec& slot,
                           const SamplingOptions& sampling) const;
  std::vector<double> embedding_row(const SlotSpec& slot, std::size_t token) const;

  ActionSpace space_;
  ControllerOptions options_;
  std::vector<SlotSpec> slots_;
  std::map<std::pair<int, std::size_t>, std::size_t> head_index_;

  Parameter w_input_;   // [hidden x 4 hidden]
  Parameter w_hidden_;  // [hidden x 4 hidden]
  Parameter bias_;      // [1 x 4 hidden]
  std::vector<Parameter> embeddings_;  // per head: [options x hidden]
  std::vector<Parameter> proj_w_;      // per head: [hidden x options]
  std::vector<Parameter> proj_b_;      // per head: [1 x options]
};

// Moving-average reward baseline. The first observed reward seeds it.
struct Baseline {
  double value = 0.0;
  double decay = 0.95;
  bool initialized = false;
};

struct ShapedReward {
  double shaped = 0.0;
  double augmented = 0.0;
};

// augmented = raw + entropy_weight * entropy_sum; shaped = augmented - baseline
// (no baseline contribution on the first call); then the baseline moves to
// decay * baseline + (1 - decay) * augmented, or is seeded to augmented.
ShapedReward shape_reward(double raw, Baseline& baseline, double entropy_sum, double entropy_weight);

// One Adam step descending -(1/B) sum_b shaped_b * log P(episode_b).
void reinforce_step(Controller& controller, std::span<const Episode> episodes, Adam& optimizer,
                    const SamplingOptions& sampling);

}  // namespace gnas
