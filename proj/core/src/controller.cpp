#include "gnas/controller.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>

namespace gnas {

namespace {

constexpr const char* kCheckpointMagic = "gnas-controller";
constexpr int kCheckpointVersion = 1;

double sigmoid(double x) { return activate(ActivationKind::Sigmoid, x); }

std::vector<double> softmax(const std::vector<double>& logits) {
  const double mx = *std::max_element(logits.begin(), logits.end());
  std::vector<double> p(logits.size());
  double z = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    p[i] = std::exp(logits[i] - mx);
    z += p[i];
  }
  for (double& v : p) v /= z;
  return p;
}

void check_sampling(const SamplingOptions& s) {
  if (!(s.temperature > 0.0)) throw ParameterError("sampling temperature must be > 0");
  if (!(s.logit_clip > 0.0)) throw ParameterError("logit clip must be > 0");
}

}  // namespace

Controller::Controller(ActionSpace space, ControllerOptions options)
    : space_(std::move(space)), options_(options), slots_(space_.slots()) {
  space_.check();
  if (options_.hidden == 0) throw ParameterError("controller hidden size must be >= 1");
  std::mt19937_64 rng(options_.seed);
  const std::size_t h = options_.hidden;
  const double r = options_.init_range;
  w_input_ = Parameter("lstm.w_input", uniform_init(h, 4 * h, r, rng));
  w_hidden_ = Parameter("lstm.w_hidden", uniform_init(h, 4 * h, r, rng));
  bias_ = Parameter("lstm.bias", uniform_init(1, 4 * h, r, rng));
  for (const SlotSpec& s : slots_) {
    const auto key = std::make_pair(static_cast<int>(s.kind), s.kind == SlotKind::SkipFrom ? s.layer : 0);
    if (head_index_.count(key)) continue;
    const std::string name = std::string(slot_name(s.kind)) +
                             (s.kind == SlotKind::SkipFrom ? "@" + std::to_string(s.layer + 1) : std::string());
    head_index_.emplace(key, embeddings_.size());
    embeddings_.emplace_back("embed." + name, uniform_init(s.option_count, h, r, rng));
    proj_w_.emplace_back("proj." + name + ".w", uniform_init(h, s.option_count, r, rng));
    proj_b_.emplace_back("proj." + name + ".b", uniform_init(1, s.option_count, r, rng));
  }
}

std::size_t Controller::head_of(const SlotSpec& s) const {
  return head_index_.at(std::make_pair(static_cast<int>(s.kind), s.kind == SlotKind::SkipFrom ? s.layer : 0));
}

std::vector<double> Controller::embedding_row(const SlotSpec& slot, std::size_t token) const {
  auto row = embeddings_[head_of(slot)].value.row(token);
  return {row.begin(), row.end()};
}

std::vector<double> Controller::step(StepState& st, const std::vector<double>& input, const SlotSpec& slot,
                                     const SamplingOptions& sampling) const {
  const std::size_t h = options_.hidden;
  std::vector<double> gates(bias_.value.data());
  for (std::size_t k = 0; k < h; ++k) {
    const double xk = input[k], hk = st.h[k];
    const double* wi = w_input_.value.row(k).data();
    const double* wh = w_hidden_.value.row(k).data();
    for (std::size_t j = 0; j < 4 * h; ++j) gates[j] += xk * wi[j] + hk * wh[j];
  }
  for (std::size_t k = 0; k < h; ++k) {
    const double i = sigmoid(gates[k]);
    const double f = sigmoid(gates[h + k]);
    const double g = std::tanh(gates[2 * h + k]);
    const double o = sigmoid(gates[3 * h + k]);
    st.c[k] = f * st.c[k] + i * g;
    st.h[k] = o * std::tanh(st.c[k]);
  }
  const std::size_t head = head_of(slot);
  const Tensor& w = proj_w_[head].value;
  std::vector<double> logits(proj_b_[head].value.data());
  for (std::size_t k = 0; k < h; ++k) {
    const double* wr = w.row(k).data();
    for (std::size_t j = 0; j < logits.size(); ++j) logits[j] += st.h[k] * wr[j];
  }
  for (double& l : logits) l = sampling.logit_clip * std::tanh(l / sampling.temperature);
  return logits;
}

Episode Controller::sample(const SamplingOptions& sampling, std::mt19937_64& rng) const {
  check_sampling(sampling);
  Episode ep;
  StepState st{std::vector<double>(options_.hidden, 0.0), std::vector<double>(options_.hidden, 0.0)};
  std::vector<double> input(options_.hidden, 0.0);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (const SlotSpec& slot : slots_) {
    const std::vector<double> p = softmax(step(st, input, slot, sampling));
    double draw = u(rng);
    std::size_t token = p.size() - 1;
    for (std::size_t k = 0; k < p.size(); ++k) {
      if (draw < p[k]) {
        token = k;
        break;
      }
      draw -= p[k];
    }
    ep.tokens.push_back(token);
    ep.log_prob_sum += std::log(p[token]);
    for (double pk : p) {
      if (pk > 0.0) ep.entropy_sum -= pk * std::log(pk);
    }
    input = embedding_row(slot, token);
  }
  // Singleton slots contribute log(1) = 0 exactly.
  ep.log_prob_sum = std::min(ep.log_prob_sum, 0.0);
  ep.arch = space_.from_indices(ep.tokens);
  return ep;
}

std::vector<std::vector<double>> Controller::step_probabilities(std::span<const std::size_t> tokens,
                                                                const SamplingOptions& sampling) const {
  check_sampling(sampling);
  if (tokens.size() != slots_.size()) throw ParameterError("token sequence length does not match the slot count");
  std::vector<std::vector<double>> out;
  StepState st{std::vector<double>(options_.hidden, 0.0), std::vector<double>(options_.hidden, 0.0)};
  std::vector<double> input(options_.hidden, 0.0);
  for (std::size_t t = 0; t < slots_.size(); ++t) {
    out.push_back(softmax(step(st, input, slots_[t], sampling)));
    if (tokens[t] >= slots_[t].option_count) throw ParameterError("token index out of range");
    input = embedding_row(slots_[t], tokens[t]);
  }
  return out;
}

double Controller::sequence_log_prob(std::span<const std::size_t> tokens, const SamplingOptions& sampling) const {
  double lp = 0.0;
  auto probs = step_probabilities(tokens, sampling);
  for (std::size_t t = 0; t < tokens.size(); ++t) lp += std::log(probs[t][tokens[t]]);
  return std::min(lp, 0.0);
}

Var Controller::log_prob(Tape& tape, std::span<const std::size_t> tokens, const SamplingOptions& sampling) {
  check_sampling(sampling);
  if (tokens.size() != slots_.size()) throw ParameterError("token sequence length does not match the slot count");
  const std::size_t h = options_.hidden;
  Var wi = tape.param(w_input_);
  Var wh = tape.param(w_hidden_);
  Var b = tape.param(bias_);
  Var hs = tape.constant(Tensor(1, h));
  Var cs = tape.constant(Tensor(1, h));
  Var input = tape.constant(Tensor(1, h));
  Var total = tape.constant(Tensor::scalar(0.0));
  for (std::size_t t = 0; t < slots_.size(); ++t) {
    const SlotSpec& slot = slots_[t];
    Var gates = add(add(matmul(input, wi), matmul(hs, wh)), b);
    Var i = activation(ActivationKind::Sigmoid, slice_cols(gates, 0, h));
    Var f = activation(ActivationKind::Sigmoid, slice_cols(gates, h, h));
    Var g = activation(ActivationKind::Tanh, slice_cols(gates, 2 * h, h));
    Var o = activation(ActivationKind::Sigmoid, slice_cols(gates, 3 * h, h));
    cs = add(hadamard(f, cs), hadamard(i, g));
    hs = hadamard(o, activation(ActivationKind::Tanh, cs));
    const std::size_t head = head_of(slot);
    Var logits = add(matmul(hs, tape.param(proj_w_[head])), tape.param(proj_b_[head]));
    Var adjusted =
        scale(activation(ActivationKind::Tanh, scale(logits, 1.0 / sampling.temperature)), sampling.logit_clip);
    total = add(total, pick(log_softmax(adjusted), tokens[t]));
    const std::size_t row[] = {tokens[t]};
    input = gather_rows(tape.param(embeddings_[head]), row);
  }
  return total;
}

std::vector<Parameter*> Controller::parameters() {
  std::vector<Parameter*> out{&w_input_, &w_hidden_, &bias_};
  for (std::size_t k = 0; k < embeddings_.size(); ++k) {
    out.push_back(&embeddings_[k]);
    out.push_back(&proj_w_[k]);
    out.push_back(&proj_b_[k]);
  }
  return out;
}

std::vector<const Parameter*> Controller::parameters() const {
  std::vector<const Parameter*> out;
  for (Parameter* p : const_cast<Controller*>(this)->parameters()) out.push_back(p);
  return out;
}

std::uint64_t Controller::checksum() const {
  // FNV-1a over the raw bits of every value.
  std::uint64_t hash = 1469598103934665603ull;
  for (const Parameter* p : parameters()) {
    for (double v : p->value.data()) {
      hash ^= std::bit_cast<std::uint64_t>(v);
      hash *= 1099511628211ull;
    }
  }
  return hash;
}

void Controller::save(std::ostream& out) const {
  out << kCheckpointMagic << ' ' << kCheckpointVersion << '\n';
  out << "hidden " << options_.hidden << '\n';
  char buf[32];
  for (const Parameter* p : parameters()) {
    out << "param " << p->name << ' ' << p->value.rows() << ' ' << p->value.cols() << '\n';
    for (std::size_t i = 0; i < p->value.size(); ++i) {
      std::snprintf(buf, sizeof buf, "%.17g", p->value[i]);
      out << (i ? " " : "") << buf;
    }
    out << '\n';
  }
}

void Controller::load(std::istream& in) {
  std::string magic;
  int version = 0;
  in >> magic >> version;
  if (magic != kCheckpointMagic) throw Error("controller checkpoint: bad magic '" + magic + "'");
  if (version != kCheckpointVersion) throw Error("controller checkpoint: unsupported version " + std::to_string(version));
  std::string word;
  std::size_t hidden = 0;
  in >> word >> hidden;
  if (word != "hidden" || hidden != options_.hidden) throw Error("controller checkpoint: hidden size mismatch");
  for (Parameter* p : parameters()) {
    std::string name;
    std::size_t rows = 0, cols = 0;
    in >> word >> name >> rows >> cols;
    if (word != "param" || name != p->name || rows != p->value.rows() || cols != p->value.cols()) {
      throw Error("controller checkpoint: expected parameter " + p->name + " " + shape_string(p->value) +
                  ", found '" + name + "'");
    }
    for (double& v : p->value.data()) {
      if (!(in >> v)) throw Error("controller checkpoint: truncated values for " + p->name);
    }
  }
}

ShapedReward shape_reward(double raw, Baseline& baseline, double entropy_sum, double entropy_weight) {
  if (!std::isfinite(raw)) throw ParameterError("reward is not finite");
  ShapedReward out;
  out.augmented = raw + entropy_weight * entropy_sum;
  if (!baseline.initialized) {
    out.shaped = out.augmented;
    baseline.value = out.augmented;
    baseline.initialized = true;
  } else {
    out.shaped = out.augmented - baseline.value;
    baseline.value = baseline.decay * baseline.value + (1.0 - baseline.decay) * out.augmented;
  }
  return out;
}

void reinforce_step(Controller& controller, std::span<const Episode> episodes, Adam& optimizer,
                    const SamplingOptions& sampling) {
  if (episodes.empty()) throw ParameterError("reinforce_step: empty episode batch");
  optimizer.zero_grad();
  const double inv = 1.0 / static_cast<double>(episodes.size());
  for (const Episode& ep : episodes) {
    Tape tape;
    Var objective = scale(controller.log_prob(tape, ep.tokens, sampling), -ep.shaped_reward * inv);
    tape.backward(objective);
  }
  optimizer.step();
}

}  // namespace gnas
