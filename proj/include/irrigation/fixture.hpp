#pragma once

// The reference model used by the replay and closed-loop checks: trained on
// 200 simulator readings labeled by the oracle, with default learner settings.

#include "irrigation/c45.hpp"
#include "irrigation/field_sim.hpp"

namespace irrigation {

inline constexpr std::uint64_t kFixtureSeed = 1;
inline constexpr std::size_t kFixtureSize = 200;

inline Dataset fixture_training_set() { return sim::generate_training_set(sim::SimConfig{}, kFixtureSize, kFixtureSeed); }

inline c45::TreeModel fixture_model() { return c45::build_tree(fixture_training_set()); }

}  // namespace irrigation
