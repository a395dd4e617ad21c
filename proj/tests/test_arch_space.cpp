#include <gtest/gtest.h>

#include <boost/math/distributions/chi_squared.hpp>

#include <set>

#include "gnas/arch_space.hpp"
#include "gnas/errors.hpp"

using namespace gnas;

namespace {

std::string validation_slot(const std::string& tokens, const ActionSpace& space) {
  try {
    decode(tokens, space);
  } catch (const ValidationError& e) {
    return e.slot();
  }
  return "";
}

}  // namespace

TEST(ArchSpace, SizesOfFullSpace) {
  EXPECT_EQ(space_size(ActionSpace::full(1)), 9408u);
  EXPECT_EQ(space_size(ActionSpace::full(2)), 88'510'464u);
  // searched skips: layer 2 has 2 sources * 2 merges, layer 1 has 1 * 2
  EXPECT_EQ(space_size(ActionSpace::full(2, SkipMode::Searched)), 88'510'464u * 8u);
  EXPECT_EQ(space_size(ActionSpace::full(40)), UINT64_MAX);
}

TEST(ArchSpace, SlotOrder) {
  const auto slots = ActionSpace::full(2).slots();
  ASSERT_EQ(slots.size(), 12u);
  const SlotKind order[] = {SlotKind::Sampling, SlotKind::Attention, SlotKind::Aggregation,
                            SlotKind::Activation, SlotKind::Heads, SlotKind::Hidden};
  for (std::size_t i = 0; i < slots.size(); ++i) {
    EXPECT_EQ(slots[i].kind, order[i % 6]);
    EXPECT_EQ(slots[i].layer, i / 6);
  }
  EXPECT_EQ(slots[1].option_count, 7u);
  EXPECT_EQ(slots[3].option_count, 8u);
}

TEST(ArchSpace, EncodeDecodeRoundTrip) {
  std::mt19937_64 rng(3);
  for (SkipMode mode : {SkipMode::None, SkipMode::Fixed, SkipMode::Searched}) {
    const ActionSpace space = ActionSpace::full(3, mode);
    for (int i = 0; i < 200; ++i) {
      const ArchDescription a = random_arch(space, rng);
      EXPECT_NO_THROW(space.validate(a));
      EXPECT_EQ(decode(encode(a), space), a);
      EXPECT_EQ(decode(encode_line(a), space), a);
      EXPECT_EQ(space.from_indices(space.to_indices(a)), a);
    }
  }
}

TEST(ArchSpace, EncodesKnownArchitecture) {
  const ActionSpace space = ActionSpace::full(2);
  const ArchDescription a = decode("first-order,gat,sum,elu,8,8;first-order,gcn,mean-pooling,linear,1,4", space);
  EXPECT_EQ(a.layers[0].attention, AttentionKind::Gat);
  EXPECT_EQ(a.layers[1].aggregation, AggKind::Mean);
  EXPECT_EQ(a.layers[0].heads, 8);
  EXPECT_EQ(encode(a), "first-order,gat,sum,elu,8,8\nfirst-order,gcn,mean-pooling,linear,1,4\n");
  EXPECT_EQ(encode_line(a), "first-order,gat,sum,elu,8,8;first-order,gcn,mean-pooling,linear,1,4");
  EXPECT_EQ(space.to_indices(a), (std::vector<std::size_t>{0, 2, 0, 7, 4, 1, 0, 1, 1, 3, 0, 0}));
}

TEST(ArchSpace, FixedSkipFilledIn) {
  const ActionSpace space = ActionSpace::full(2, SkipMode::Fixed);
  const ArchDescription a = decode("first-order,gat,sum,elu,8,8;first-order,gat,sum,elu,8,8", space);
  EXPECT_EQ(a.layers[0].skip_from, 0u);
  EXPECT_EQ(a.layers[1].skip_from, 1u);
}

TEST(ArchSpace, InvalidTokensNameTheSlot) {
  const ActionSpace space = ActionSpace::full(2);
  const std::string ok = "first-order,gat,sum,elu,8,8";
  EXPECT_EQ(validation_slot(ok + ";first-order,gat,sum,elu,3,8", space), "layer 2 heads");
  EXPECT_EQ(validation_slot(ok + ";first-order,gin,sum,elu,8,8", space), "layer 2 attention");
  EXPECT_EQ(validation_slot("first-order,gat,sum,swish,8,8;" + ok, space), "layer 1 activation");
  EXPECT_EQ(validation_slot("first-order,gat,avg,elu,8,8;" + ok, space), "layer 1 aggregation");
  EXPECT_EQ(validation_slot("first-order,gat,sum,elu,8,x;" + ok, space), "layer 1 hidden");
  EXPECT_EQ(validation_slot("second-order,gat,sum,elu,8,8;" + ok, space), "layer 1 sampling");
  EXPECT_EQ(validation_slot(ok, space), "layer_count");
  EXPECT_EQ(validation_slot("first-order,gat,sum;" + ok, space), "layer 1");
  EXPECT_EQ(validation_slot(ok + ";first-order,gat,sum,elu,8,8,0,add", space), "layer 2 skip_from");
}

TEST(ArchSpace, RestrictedSpaceRejectsOutsideValues) {
  ActionSpace space = ActionSpace::full(1);
  space.heads = {1, 2};
  EXPECT_EQ(space_size(space), 7u * 4 * 8 * 2 * 7);
  EXPECT_EQ(validation_slot("first-order,gat,sum,elu,4,8", space), "layer 1 heads");
  ActionSpace bad = ActionSpace::full(1);
  bad.heads = {2, 1};
  EXPECT_THROW(bad.check(), ValidationError);
  bad.heads = {};
  EXPECT_THROW(bad.check(), ValidationError);
}

TEST(ArchSpace, EnumerateVisitsEachOnceInOrder) {
  ActionSpace space = ActionSpace::full(1);
  const auto all = enumerate(space);
  ASSERT_EQ(all.size(), 9408u);
  std::set<ArchDescription> distinct(all.begin(), all.end());
  EXPECT_EQ(distinct.size(), 9408u);
  for (std::size_t i = 1; i < all.size(); ++i) {
    EXPECT_LT(space.to_indices(all[i - 1]), space.to_indices(all[i]));
  }
  EXPECT_THROW(enumerate(ActionSpace::full(2), 1000), ParameterError);
}

TEST(ArchSpace, RandomArchCoversOptions) {
  const ActionSpace space = ActionSpace::full(1);
  std::mt19937_64 rng(8);
  std::set<int> hidden;
  std::set<AttentionKind> att;
  for (int i = 0; i < 500; ++i) {
    const ArchDescription a = random_arch(space, rng);
    hidden.insert(a.layers[0].hidden);
    att.insert(a.layers[0].attention);
  }
  EXPECT_EQ(hidden.size(), 7u);
  EXPECT_EQ(att.size(), 7u);
}

TEST(ArchSpace, RandomArchIsUniformPerSlot) {
  const ActionSpace space = ActionSpace::full(2, SkipMode::Searched);
  const auto slots = space.slots();
  std::vector<std::vector<double>> counts(slots.size());
  for (std::size_t s = 0; s < slots.size(); ++s) counts[s].assign(slots[s].option_count, 0.0);
  std::mt19937_64 rng(10);
  const int n = 10000;
  for (int i = 0; i < n; ++i) {
    const auto idx = space.to_indices(random_arch(space, rng));
    for (std::size_t s = 0; s < slots.size(); ++s) counts[s][idx[s]] += 1.0;
  }
  for (std::size_t s = 0; s < slots.size(); ++s) {
    const double k = static_cast<double>(slots[s].option_count);
    if (k < 2) continue;
    double chi = 0.0;
    for (double c : counts[s]) chi += (c - n / k) * (c - n / k) / (n / k);
    const double p = boost::math::cdf(boost::math::complement(boost::math::chi_squared(k - 1), chi));
    EXPECT_GT(p, 0.001) << "slot " << s;
  }
}
