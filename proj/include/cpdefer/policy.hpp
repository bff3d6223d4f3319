#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <string_view>

#include "cpdefer/conformal.hpp"
#include "cpdefer/experts.hpp"
#include "cpdefer/rng.hpp"

namespace cpdefer {

enum class Strategy { Segregativity, NaiveMostAccurate, NaiveRandom, ModelOnly, BestExpert, RandomExpert };

inline constexpr std::array<Strategy, 6> kAllStrategies = {
    Strategy::Segregativity, Strategy::NaiveMostAccurate, Strategy::NaiveRandom,
    Strategy::ModelOnly,     Strategy::BestExpert,        Strategy::RandomExpert};

std::string_view to_string(Strategy s);
Strategy parse_strategy(std::string_view text);

/// Strategies that accept the model on singleton sets and defer otherwise.
constexpr bool uses_prediction_set(Strategy s) {
  return s == Strategy::Segregativity || s == Strategy::NaiveMostAccurate || s == Strategy::NaiveRandom;
}
/// Strategies whose outcome does not depend on alpha.
constexpr bool is_alpha_free(Strategy s) { return !uses_prediction_set(s); }

struct Decision {
  std::optional<std::string> expert_id;  // set iff deferred
  int label = 0;  // model's label; for deferrals the model's top label, replaced on resolve
  std::size_t set_size = 0;

  bool deferred() const { return expert_id.has_value(); }
};

struct Outcome {
  int final_label = 0;
  bool correct = false;
  std::optional<std::string> queried_expert;
};

struct ExpertLabel {
  std::string expert_id;
  int label = 0;
};

/// Accept the model or pick an expert for one input.
///
/// `candidates` are the experts eligible for this input. Segregativity,
/// NaiveMostAccurate and NaiveRandom accept the model iff the prediction set
/// is a singleton; BestExpert and RandomExpert always defer; ModelOnly never
/// does. Throws ReplayError when a deferral is needed but nobody is eligible.
Decision decide(const ProbVector& p, const ConformalThreshold& thr, const RapsParams* raps,
                std::span<const ExpertProfile> candidates, Strategy strategy, TieRule tie_rule, Rng& rng);

Outcome resolve(const Decision& decision, std::span<const ExpertLabel> annotations, int truth);

}  // namespace cpdefer
