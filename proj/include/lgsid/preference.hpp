#pragma once

#include "lgsid/common.hpp"

namespace lgsid {

enum class PairSource { domain_collaborative, geo_constrained };

/// A preference between two locations for the content of `anchor`.
/// The reward model scores [content(anchor), location(preferred)] against
/// [content(anchor), location(rejected)]. For geo-constrained pairs the
/// anchor is the preferred item itself.
struct PreferencePair {
  ItemId anchor = 0;
  ItemId preferred = 0;
  ItemId rejected = 0;
  PairSource source = PairSource::geo_constrained;

  bool operator==(const PreferencePair&) const = default;
};

}  // namespace lgsid
