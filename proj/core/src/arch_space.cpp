#include "gnas/arch_space.hpp"

#include <algorithm>
#include <charconv>
#include <limits>

#include "gnas/errors.hpp"

namespace gnas {

std::string_view token_of(SamplingKind) { return "first-order"; }

std::string_view token_of(AttentionKind k) {
  switch (k) {
    case AttentionKind::Const:
      return "const";
    case AttentionKind::Gcn:
      return "gcn";
    case AttentionKind::Gat:
      return "gat";
    case AttentionKind::SymGat:
      return "sym-gat";
    case AttentionKind::Cos:
      return "cos";
    case AttentionKind::Linear:
      return "linear";
    case AttentionKind::GeneLinear:
      return "gene-linear";
  }
  return "?";
}

std::string_view token_of(AggKind k) {
  switch (k) {
    case AggKind::Sum:
      return "sum";
    case AggKind::Mean:
      return "mean-pooling";
    case AggKind::Max:
      return "max-pooling";
    case AggKind::Mlp:
      return "mlp";
  }
  return "?";
}

std::string_view token_of(ActivationKind k) {
  switch (k) {
    case ActivationKind::Sigmoid:
      return "sigmoid";
    case ActivationKind::Tanh:
      return "tanh";
    case ActivationKind::Relu:
      return "relu";
    case ActivationKind::Linear:
      return "linear";
    case ActivationKind::Softplus:
      return "softplus";
    case ActivationKind::LeakyRelu:
      return "leaky_relu";
    case ActivationKind::Relu6:
      return "relu6";
    case ActivationKind::Elu:
      return "elu";
  }
  return "?";
}

std::string_view token_of(MergeKind k) { return k == MergeKind::Concat ? "concat" : "add"; }

std::string_view slot_name(SlotKind k) {
  switch (k) {
    case SlotKind::Sampling:
      return "sampling";
    case SlotKind::Attention:
      return "attention";
    case SlotKind::Aggregation:
      return "aggregation";
    case SlotKind::Activation:
      return "activation";
    case SlotKind::Heads:
      return "heads";
    case SlotKind::Hidden:
      return "hidden";
    case SlotKind::SkipFrom:
      return "skip_from";
    case SlotKind::Merge:
      return "merge";
  }
  return "?";
}

namespace {

std::string slot_label(SlotKind k, std::size_t layer) {
  return "layer " + std::to_string(layer + 1) + " " + std::string(slot_name(k));
}

// Options must be a non-empty, duplicate-free subsequence of the full list.
template <typename T, std::size_t N>
void check_subsequence(const std::vector<T>& opts, const T (&full)[N], SlotKind kind) {
  if (opts.empty()) throw ValidationError(std::string(slot_name(kind)), "option list is empty");
  std::size_t pos = 0;
  for (const T& o : opts) {
    while (pos < N && !(full[pos] == o)) ++pos;
    if (pos == N) {
      throw ValidationError(std::string(slot_name(kind)),
                            "options must be distinct members of the full list, in its order");
    }
    ++pos;
  }
}

template <typename T>
std::size_t index_in(const std::vector<T>& opts, const T& v, SlotKind kind, std::size_t layer) {
  auto it = std::find(opts.begin(), opts.end(), v);
  if (it == opts.end()) throw ValidationError(slot_label(kind, layer), "value not in the action space");
  return static_cast<std::size_t>(it - opts.begin());
}

std::uint64_t mul_sat(std::uint64_t a, std::uint64_t b) {
  if (a != 0 && b > std::numeric_limits<std::uint64_t>::max() / a) return std::numeric_limits<std::uint64_t>::max();
  return a * b;
}

}  // namespace

ActionSpace ActionSpace::full(std::size_t layers, SkipMode skip) {
  ActionSpace s;
  s.layer_count = layers;
  s.skip = skip;
  return s;
}

void ActionSpace::check() const {
  if (layer_count == 0) throw ValidationError("layer_count", "must be >= 1");
  check_subsequence(sampling, kAllSampling, SlotKind::Sampling);
  check_subsequence(attention, kAllAttention, SlotKind::Attention);
  check_subsequence(aggregation, kAllAggregation, SlotKind::Aggregation);
  check_subsequence(activation, kAllActivation, SlotKind::Activation);
  check_subsequence(heads, kAllHeads, SlotKind::Heads);
  check_subsequence(hidden, kAllHidden, SlotKind::Hidden);
}

std::vector<SlotSpec> ActionSpace::slots() const {
  std::vector<SlotSpec> out;
  for (std::size_t l = 0; l < layer_count; ++l) {
    out.push_back({SlotKind::Sampling, l, sampling.size()});
    out.push_back({SlotKind::Attention, l, attention.size()});
    out.push_back({SlotKind::Aggregation, l, aggregation.size()});
    out.push_back({SlotKind::Activation, l, activation.size()});
    out.push_back({SlotKind::Heads, l, heads.size()});
    out.push_back({SlotKind::Hidden, l, hidden.size()});
    if (skip == SkipMode::Searched) {
      out.push_back({SlotKind::SkipFrom, l, l + 1});
      out.push_back({SlotKind::Merge, l, 2});
    }
  }
  return out;
}

void ActionSpace::validate(const ArchDescription& arch) const {
  (void)to_indices(arch);
}

std::vector<std::size_t> ActionSpace::to_indices(const ArchDescription& arch) const {
  if (arch.layers.size() != layer_count) {
    throw ValidationError("layer_count", "architecture has " + std::to_string(arch.layers.size()) +
                                             " layers, space expects " + std::to_string(layer_count));
  }
  std::vector<std::size_t> idx;
  idx.reserve(layer_count * slots_per_layer());
  for (std::size_t l = 0; l < layer_count; ++l) {
    const LayerSpec& s = arch.layers[l];
    idx.push_back(index_in(sampling, s.sampling, SlotKind::Sampling, l));
    idx.push_back(index_in(attention, s.attention, SlotKind::Attention, l));
    idx.push_back(index_in(aggregation, s.aggregation, SlotKind::Aggregation, l));
    idx.push_back(index_in(activation, s.activation, SlotKind::Activation, l));
    idx.push_back(index_in(heads, s.heads, SlotKind::Heads, l));
    idx.push_back(index_in(hidden, s.hidden, SlotKind::Hidden, l));
    switch (skip) {
      case SkipMode::None:
        if (s.skip_from) throw ValidationError(slot_label(SlotKind::SkipFrom, l), "space has no skip connections");
        break;
      case SkipMode::Fixed:
        if (s.skip_from != l || s.merge != fixed_merge) {
          throw ValidationError(slot_label(SlotKind::SkipFrom, l), "fixed skip must merge the previous layer");
        }
        break;
      case SkipMode::Searched:
        if (!s.skip_from) throw ValidationError(slot_label(SlotKind::SkipFrom, l), "missing skip source");
        if (*s.skip_from > l) {
          throw ValidationError(slot_label(SlotKind::SkipFrom, l),
                                "source " + std::to_string(*s.skip_from) + " is not a previous layer");
        }
        idx.push_back(*s.skip_from);
        idx.push_back(s.merge == MergeKind::Concat ? 0 : 1);
        break;
    }
  }
  return idx;
}

ArchDescription ActionSpace::from_indices(std::span<const std::size_t> indices) const {
  auto specs = slots();
  if (indices.size() != specs.size()) {
    throw ValidationError("slots", "expected " + std::to_string(specs.size()) + " indices, got " +
                                       std::to_string(indices.size()));
  }
  ArchDescription arch;
  arch.layers.resize(layer_count);
  for (std::size_t i = 0; i < specs.size(); ++i) {
    const SlotSpec& sp = specs[i];
    const std::size_t k = indices[i];
    if (k >= sp.option_count) throw ValidationError(slot_label(sp.kind, sp.layer), "index out of range");
    LayerSpec& ls = arch.layers[sp.layer];
    switch (sp.kind) {
      case SlotKind::Sampling:
        ls.sampling = sampling[k];
        break;
      case SlotKind::Attention:
        ls.attention = attention[k];
        break;
      case SlotKind::Aggregation:
        ls.aggregation = aggregation[k];
        break;
      case SlotKind::Activation:
        ls.activation = activation[k];
        break;
      case SlotKind::Heads:
        ls.heads = heads[k];
        break;
      case SlotKind::Hidden:
        ls.hidden = hidden[k];
        break;
      case SlotKind::SkipFrom:
        ls.skip_from = k;
        break;
      case SlotKind::Merge:
        ls.merge = kAllMerge[k];
        break;
    }
  }
  if (skip == SkipMode::Fixed) {
    for (std::size_t l = 0; l < layer_count; ++l) {
      arch.layers[l].skip_from = l;
      arch.layers[l].merge = fixed_merge;
    }
  }
  return arch;
}

std::uint64_t space_size(const ActionSpace& space) {
  std::uint64_t total = 1;
  for (const SlotSpec& s : space.slots()) total = mul_sat(total, s.option_count);
  return total;
}

std::string encode(const ArchDescription& arch) {
  std::string out;
  for (const LayerSpec& s : arch.layers) {
    out += token_of(s.sampling);
    out += ',';
    out += token_of(s.attention);
    out += ',';
    out += token_of(s.aggregation);
    out += ',';
    out += token_of(s.activation);
    out += ',' + std::to_string(s.heads) + ',' + std::to_string(s.hidden);
    if (s.skip_from) {
      out += ',' + std::to_string(*s.skip_from) + ',';
      out += token_of(s.merge);
    }
    out += '\n';
  }
  return out;
}

std::string encode_line(const ArchDescription& arch) {
  std::string s = encode(arch);
  if (!s.empty()) s.pop_back();
  std::replace(s.begin(), s.end(), '\n', ';');
  return s;
}

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

std::vector<std::string_view> split(std::string_view s, std::string_view seps) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  for (std::size_t i = 0; i <= s.size(); ++i) {
    if (i == s.size() || seps.find(s[i]) != std::string_view::npos) {
      out.push_back(trim(s.substr(start, i - start)));
      start = i + 1;
    }
  }
  return out;
}

template <typename T, std::size_t N>
T parse_named(std::string_view tok, const T (&all)[N], SlotKind kind, std::size_t layer) {
  for (const T& v : all) {
    if (token_of(v) == tok) return v;
  }
  throw ValidationError(slot_label(kind, layer), "unknown token '" + std::string(tok) + "'");
}

int parse_int(std::string_view tok, SlotKind kind, std::size_t layer) {
  int v = 0;
  auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
  if (ec != std::errc{} || ptr != tok.data() + tok.size() || v < 0) {
    throw ValidationError(slot_label(kind, layer), "expected a non-negative integer, got '" + std::string(tok) + "'");
  }
  return v;
}

}  // namespace

ArchDescription decode(std::string_view tokens, const ActionSpace& space) {
  ArchDescription arch;
  for (std::string_view line : split(tokens, "\n;")) {
    if (line.empty()) continue;
    const std::size_t l = arch.layers.size();
    auto tok = split(line, ",");
    if (tok.size() != 6 && tok.size() != 8) {
      throw ValidationError("layer " + std::to_string(l + 1),
                            "expected 6 or 8 comma-separated tokens, got " + std::to_string(tok.size()));
    }
    LayerSpec s;
    s.sampling = parse_named(tok[0], kAllSampling, SlotKind::Sampling, l);
    s.attention = parse_named(tok[1], kAllAttention, SlotKind::Attention, l);
    s.aggregation = parse_named(tok[2], kAllAggregation, SlotKind::Aggregation, l);
    s.activation = parse_named(tok[3], kAllActivation, SlotKind::Activation, l);
    s.heads = parse_int(tok[4], SlotKind::Heads, l);
    s.hidden = parse_int(tok[5], SlotKind::Hidden, l);
    if (tok.size() == 8) {
      s.skip_from = static_cast<std::size_t>(parse_int(tok[6], SlotKind::SkipFrom, l));
      s.merge = parse_named(tok[7], kAllMerge, SlotKind::Merge, l);
    } else if (space.skip == SkipMode::Fixed) {
      s.skip_from = l;
      s.merge = space.fixed_merge;
    }
    arch.layers.push_back(s);
  }
  space.validate(arch);
  return arch;
}

ArchDescription random_arch(const ActionSpace& space, std::mt19937_64& rng) {
  auto specs = space.slots();
  std::vector<std::size_t> idx(specs.size());
  for (std::size_t i = 0; i < specs.size(); ++i) {
    idx[i] = std::uniform_int_distribution<std::size_t>(0, specs[i].option_count - 1)(rng);
  }
  return space.from_indices(idx);
}

void for_each_arch(const ActionSpace& space, std::uint64_t cap,
                   const std::function<void(const ArchDescription&)>& fn) {
  const std::uint64_t size = space_size(space);
  if (size > cap) {
    throw ParameterError("space has " + std::to_string(size) + " architectures, over the enumeration cap of " +
                         std::to_string(cap));
  }
  auto specs = space.slots();
  std::vector<std::size_t> idx(specs.size(), 0);
  while (true) {
    fn(space.from_indices(idx));
    // Odometer increment, last slot fastest.
    std::size_t i = idx.size();
    while (i > 0) {
      --i;
      if (++idx[i] < specs[i].option_count) break;
      idx[i] = 0;
      if (i == 0) return;
    }
    if (idx.empty()) return;
  }
}

std::vector<ArchDescription> enumerate(const ActionSpace& space, std::uint64_t cap) {
  std::vector<ArchDescription> out;
  for_each_arch(space, cap, [&](const ArchDescription& a) { out.push_back(a); });
  return out;
}

}  // namespace gnas
