#include "cpdefer/policy.hpp"

#include <vector>

#include <fmt/format.h>

#include "cpdefer/error.hpp"

namespace cpdefer {

std::string_view to_string(Strategy s) {
  switch (s) {
    case Strategy::Segregativity: return "segregativity";
    case Strategy::NaiveMostAccurate: return "naive_most_accurate";
    case Strategy::NaiveRandom: return "naive_random";
    case Strategy::ModelOnly: return "model_only";
    case Strategy::BestExpert: return "best_expert";
    case Strategy::RandomExpert: return "random_expert";
  }
  return "?";
}

Strategy parse_strategy(std::string_view text) {
  for (Strategy s : kAllStrategies) {
    if (text == to_string(s)) return s;
  }
  throw ValidationError(fmt::format(
      "unknown strategy '{}' (expected one of segregativity, naive_most_accurate, naive_random, model_only, "
      "best_expert, random_expert)",
      text));
}

namespace {

std::size_t most_accurate(std::span<const ExpertProfile> candidates, TieRule tie_rule, Rng& rng) {
  // An empty label set makes select_expert score by overall accuracy.
  return select_expert(candidates, PredictionSet{}, tie_rule, rng);
}

}  // namespace

Decision decide(const ProbVector& p, const ConformalThreshold& thr, const RapsParams* raps,
                std::span<const ExpertProfile> candidates, Strategy strategy, TieRule tie_rule, Rng& rng) {
  Decision d;
  d.label = p.argmax();
  if (strategy == Strategy::ModelOnly) {
    d.set_size = 1;
    return d;
  }

  std::optional<PredictionSet> set;
  if (uses_prediction_set(strategy)) {
    set = predict_set(p, thr, raps);
    d.set_size = set->size();
    if (set->size() == 1) {
      d.label = set->labels.front();
      return d;
    }
  }
  if (candidates.empty()) {
    throw ReplayError(fmt::format("strategy {} must defer but no expert is eligible", to_string(strategy)));
  }

  std::size_t pick = 0;
  switch (strategy) {
    case Strategy::Segregativity: pick = select_expert(candidates, *set, tie_rule, rng); break;
    case Strategy::NaiveMostAccurate:
    case Strategy::BestExpert: pick = most_accurate(candidates, tie_rule, rng); break;
    case Strategy::NaiveRandom:
    case Strategy::RandomExpert: pick = uniform_index(rng, candidates.size()); break;
    case Strategy::ModelOnly: break;
  }
  d.expert_id = candidates[pick].expert_id;
  return d;
}

Outcome resolve(const Decision& decision, std::span<const ExpertLabel> annotations, int truth) {
  Outcome out;
  if (!decision.deferred()) {
    out.final_label = decision.label;
  } else {
    const ExpertLabel* found = nullptr;
    for (const ExpertLabel& a : annotations) {
      if (a.expert_id == *decision.expert_id) {
        found = &a;
        break;
      }
    }
    if (!found) {
      throw ReplayError(fmt::format("expert '{}' has no recorded annotation for this sample", *decision.expert_id));
    }
    out.final_label = found->label;
    out.queried_expert = decision.expert_id;
  }
  out.correct = out.final_label == truth;
  return out;
}

}  // namespace cpdefer
