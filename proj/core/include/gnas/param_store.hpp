#pragma once

#include <cstddef>
#include <iosfwd>
#include <map>
#include <random>
#include <vector>

#include "gnas/gnn.hpp"

namespace gnas {

// True when `params` has exactly the parameter set and shapes implied by `key`.
bool params_match_key(const LayerParams& params, const ShareKey& key);

// Dictionary of layer parameters keyed by layer signature. Children obtain
// copies; the store only changes through merge_if_positive.
class SharedParamStore {
 public:
  // Stored entry or nullptr. Does not touch the hit/miss counters.
  const LayerParams* find(const ShareKey& key) const;

  // Deep copy on hit, fresh Glorot initialization on miss.
  LayerParams fetch_copy(const ShareKey& key, std::mt19937_64& rng) const;

  // Replaces the entry for `key` with `params` iff shaped_reward > 0.
  // Returns whether the store changed. Throws ShapeError on a shape mismatch.
  bool merge_if_positive(const ShareKey& key, const LayerParams& params, double shaped_reward);

  std::size_t size() const { return entries_.size(); }
  std::vector<ShareKey> keys() const;
  std::size_t hits() const { return hits_; }
  std::size_t misses() const { return misses_; }

  // Versioned text dump of every entry; load replaces the current contents.
  void save(std::ostream& out) const;
  void load(std::istream& in);

 private:
  std::map<ShareKey, LayerParams> entries_;
  mutable std::size_t hits_ = 0;
  mutable std::size_t misses_ = 0;
};

}  // namespace gnas
