#include "gnas/param_store.hpp"

#include <cstdio>
#include <istream>
#include <ostream>
#include <string>

namespace gnas {

const LayerParams* SharedParamStore::find(const ShareKey& key) const {
  auto it = entries_.find(key);
  return it == entries_.end() ? nullptr : &it->second;
}

LayerParams SharedParamStore::fetch_copy(const ShareKey& key, std::mt19937_64& rng) const {
  if (const LayerParams* hit = find(key)) {
    ++hits_;
    LayerParams copy = *hit;
    for (Parameter* p : copy.parameters()) p->zero_grad();
    return copy;
  }
  ++misses_;
  return init_layer_params(key, rng);
}

bool SharedParamStore::merge_if_positive(const ShareKey& key, const LayerParams& params, double shaped_reward) {
  if (!params_match_key(params, key)) {
    throw ShapeError("merge: parameters do not match the shapes of their share key (layer " +
                     std::to_string(key.layer_index + 1) + ")");
  }
  if (!(shaped_reward > 0.0)) return false;
  LayerParams stored = params;
  for (Parameter* p : stored.parameters()) p->zero_grad();
  entries_.insert_or_assign(key, std::move(stored));
  return true;
}

std::vector<ShareKey> SharedParamStore::keys() const {
  std::vector<ShareKey> out;
  for (const auto& [k, v] : entries_) out.push_back(k);
  return out;
}

namespace {
constexpr const char* kStoreMagic = "gnas-store";
constexpr int kStoreVersion = 1;
}  // namespace

void SharedParamStore::save(std::ostream& out) const {
  out << kStoreMagic << ' ' << kStoreVersion << '\n' << "entries " << entries_.size() << '\n';
  char buf[32];
  for (const auto& [k, params] : entries_) {
    out << "key " << k.layer_index << ' ' << static_cast<int>(k.attention) << ' ' << static_cast<int>(k.aggregation)
        << ' ' << k.in_dim << ' ' << k.heads << ' ' << k.hidden << ' ' << k.residual_dim << ' ' << k.residual_out
        << '\n';
    for (const Parameter* p : params.parameters()) {
      out << "param " << p->name << ' ' << p->value.rows() << ' ' << p->value.cols() << '\n';
      for (std::size_t i = 0; i < p->value.size(); ++i) {
        std::snprintf(buf, sizeof buf, "%.17g", p->value[i]);
        out << (i ? " " : "") << buf;
      }
      out << '\n';
    }
  }
}

void SharedParamStore::load(std::istream& in) {
  std::string word;
  int version = 0;
  in >> word >> version;
  if (word != kStoreMagic) throw Error("store checkpoint: bad magic '" + word + "'");
  if (version != kStoreVersion) throw Error("store checkpoint: unsupported version " + std::to_string(version));
  std::size_t count = 0;
  in >> word >> count;
  if (word != "entries") throw Error("store checkpoint: missing entry count");
  std::map<ShareKey, LayerParams> loaded;
  for (std::size_t e = 0; e < count; ++e) {
    ShareKey k;
    int att = 0, agg = 0;
    in >> word >> k.layer_index >> att >> agg >> k.in_dim >> k.heads >> k.hidden >> k.residual_dim >> k.residual_out;
    if (!in || word != "key" || att < 0 || att >= static_cast<int>(std::size(kAllAttention)) || agg < 0 ||
        agg >= static_cast<int>(std::size(kAllAggregation))) {
      throw Error("store checkpoint: malformed key of entry " + std::to_string(e + 1));
    }
    k.attention = static_cast<AttentionKind>(att);
    k.aggregation = static_cast<AggKind>(agg);
    std::mt19937_64 rng(0);
    LayerParams params = init_layer_params(k, rng);
    for (Parameter* p : params.parameters()) {
      std::string name;
      std::size_t rows = 0, cols = 0;
      in >> word >> name >> rows >> cols;
      if (word != "param" || name != p->name || rows != p->value.rows() || cols != p->value.cols()) {
        throw Error("store checkpoint: expected parameter " + p->name + " " + shape_string(p->value) + ", found '" +
                    name + "'");
      }
      for (double& v : p->value.data()) {
        if (!(in >> v)) throw Error("store checkpoint: truncated values for " + p->name);
      }
    }
    loaded.insert_or_assign(k, std::move(params));
  }
  entries_ = std::move(loaded);
}

}  // namespace gnas
