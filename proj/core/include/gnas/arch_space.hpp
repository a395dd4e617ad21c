#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "gnas/autodiff.hpp"

namespace gnas {

enum class SamplingKind { FirstOrder };
enum class AttentionKind { Const, Gcn, Gat, SymGat, Cos, Linear, GeneLinear };
enum class MergeKind { Concat, Add };

// Literal option lists of the GNN action space, in the order that defines
// controller logit indices.
inline constexpr SamplingKind kAllSampling[] = {SamplingKind::FirstOrder};
inline constexpr AttentionKind kAllAttention[] = {
    AttentionKind::Const,  AttentionKind::Gcn,    AttentionKind::Gat,       AttentionKind::SymGat,
    AttentionKind::Cos,    AttentionKind::Linear, AttentionKind::GeneLinear};
inline constexpr AggKind kAllAggregation[] = {AggKind::Sum, AggKind::Mean, AggKind::Max, AggKind::Mlp};
inline constexpr ActivationKind kAllActivation[] = {
    ActivationKind::Sigmoid,  ActivationKind::Tanh,      ActivationKind::Relu,  ActivationKind::Linear,
    ActivationKind::Softplus, ActivationKind::LeakyRelu, ActivationKind::Relu6, ActivationKind::Elu};
inline constexpr int kAllHeads[] = {1, 2, 4, 6, 8, 16};
inline constexpr int kAllHidden[] = {4, 8, 16, 32, 64, 128, 256};
inline constexpr MergeKind kAllMerge[] = {MergeKind::Concat, MergeKind::Add};

std::string_view token_of(SamplingKind k);
std::string_view token_of(AttentionKind k);
std::string_view token_of(AggKind k);
std::string_view token_of(ActivationKind k);
std::string_view token_of(MergeKind k);

// How residual connections are chosen.
//   None     - no residual input.
//   Fixed    - layer l always merges the output of layer l-1 (the raw input for l=1).
//   Searched - skip source and merge are controller slots.
enum class SkipMode { None, Fixed, Searched };

struct LayerSpec {
  SamplingKind sampling = SamplingKind::FirstOrder;
  AttentionKind attention = AttentionKind::Gat;
  AggKind aggregation = AggKind::Sum;
  ActivationKind activation = ActivationKind::Relu;
  int heads = 1;
  int hidden = 16;
  // 0 is the raw input, k >= 1 the output of layer k (1-based).
  std::optional<std::size_t> skip_from;
  MergeKind merge = MergeKind::Add;

  friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
  friend auto operator<=>(const LayerSpec&, const LayerSpec&) = default;
};

struct ArchDescription {
  std::vector<LayerSpec> layers;

  friend bool operator==(const ArchDescription&, const ArchDescription&) = default;
  friend auto operator<=>(const ArchDescription&, const ArchDescription&) = default;
};

enum class SlotKind { Sampling, Attention, Aggregation, Activation, Heads, Hidden, SkipFrom, Merge };
std::string_view slot_name(SlotKind k);

// One categorical decision of the controller.
struct SlotSpec {
  SlotKind kind;
  std::size_t layer;  // 0-based
  std::size_t option_count;
};

struct ActionSpace {
  std::vector<SamplingKind> sampling{std::begin(kAllSampling), std::end(kAllSampling)};
  std::vector<AttentionKind> attention{std::begin(kAllAttention), std::end(kAllAttention)};
  std::vector<AggKind> aggregation{std::begin(kAllAggregation), std::end(kAllAggregation)};
  std::vector<ActivationKind> activation{std::begin(kAllActivation), std::end(kAllActivation)};
  std::vector<int> heads{std::begin(kAllHeads), std::end(kAllHeads)};
  std::vector<int> hidden{std::begin(kAllHidden), std::end(kAllHidden)};
  std::size_t layer_count = 2;
  SkipMode skip = SkipMode::None;
  // Merge used by SkipMode::Fixed.
  MergeKind fixed_merge = MergeKind::Add;

  // Full option lists with the given depth.
  static ActionSpace full(std::size_t layers, SkipMode skip = SkipMode::None);

  // Throws ValidationError when an option list is empty, contains values
  // outside the full list, is out of the canonical order, or layer_count is 0.
  void check() const;

  // Controller slots in emission order: per layer sampling, attention,
  // aggregation, activation, heads, hidden, then skip_from and merge when
  // skip == Searched.
  std::vector<SlotSpec> slots() const;
  std::size_t slots_per_layer() const { return skip == SkipMode::Searched ? 8 : 6; }

  // Index of the chosen option for every slot. Throws ValidationError on an invalid arch.
  std::vector<std::size_t> to_indices(const ArchDescription& arch) const;
  ArchDescription from_indices(std::span<const std::size_t> indices) const;

  // Throws ValidationError naming the offending slot.
  void validate(const ArchDescription& arch) const;
};

// Number of distinct architectures; saturates at UINT64_MAX.
std::uint64_t space_size(const ActionSpace& space);

// One line per layer, comma-separated tokens in slot order. Skip tokens
// (source index, merge) follow when present.
std::string encode(const ArchDescription& arch);
// Same, with layers joined by ';' so the result fits on one line.
std::string encode_line(const ArchDescription& arch);
// Accepts newline- or ';'-separated layers. Layers with six tokens get the
// fixed skip of `space` when its skip mode is Fixed. Validates against `space`.
ArchDescription decode(std::string_view tokens, const ActionSpace& space);

ArchDescription random_arch(const ActionSpace& space, std::mt19937_64& rng);

// Every architecture exactly once in lexicographic slot-index order. Throws
// ParameterError mentioning the size when it exceeds `cap`.
std::vector<ArchDescription> enumerate(const ActionSpace& space, std::uint64_t cap = 1'000'000);
void for_each_arch(const ActionSpace& space, std::uint64_t cap,
                   const std::function<void(const ArchDescription&)>& fn);

}  // namespace gnas
