#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "cpdefer/table.hpp"

namespace cpdefer {

struct ExpertSpec {
  enum class Kind { Generalist, Specialist };

  Kind kind = Kind::Generalist;
  double accuracy = 0.9;             // generalist
  std::vector<int> block;            // specialist
  double inside_accuracy = 0.9;      // specialist, truths in block
  double outside_accuracy = 0.5;     // specialist, other truths
  double coverage = 1.0;
  double cost = 1.0;

  static ExpertSpec generalist(double accuracy, double coverage = 1.0);
  static ExpertSpec specialist(std::vector<int> block, double inside, double outside, double coverage = 1.0);

  /// Accuracy on samples whose truth is y.
  double accuracy_on(int y) const;
};

struct SynthConfig {
  std::size_t num_classes = 10;
  std::size_t num_samples = 3000;
  double model_target_accuracy = 0.9;
  double confusion_sharpness = 1.0;
  /// Class groups the model confuses among; wrong and runner-up labels of a
  /// truth inside a block come from the same block.
  std::vector<std::vector<int>> confusion_blocks;
  std::vector<ExpertSpec> experts;
  std::uint64_t seed = 0;

  void validate() const;
};

struct SynthDataset {
  ProbabilityTable table;
  AnnotationStore store;
};

/// Samples i.i.d. model outputs and expert annotations. Sample ids are
/// s000000, s000001, ...; expert ids e00, e01, ... follow cfg.experts.
SynthDataset gen_dataset(const SynthConfig& cfg);

/// Expected accuracy of an expert when truths are uniform over C classes.
double theoretical_expert_accuracy(const ExpertSpec& spec, std::size_t num_classes);

/// One strong generalist and three block specialists over C = 10; the model
/// confuses labels within the specialists' blocks.
SynthConfig canonical_scenario(std::uint64_t seed);

/// A pool of generalists of spread-out accuracy, for the expert-fraction and
/// shots ablations.
SynthConfig ablation_scenario(std::uint64_t seed);

/// JSON form: num_classes, num_samples, model_target_accuracy,
/// confusion_sharpness, confusion_blocks, seed, experts[] where each expert
/// has kind ("generalist" | "specialist"), accuracy or block /
/// inside_accuracy / outside_accuracy, and optional coverage, cost and count
/// (replicas).
SynthConfig synth_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const SynthConfig& cfg);

}  // namespace cpdefer
