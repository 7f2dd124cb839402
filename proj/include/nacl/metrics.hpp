#pragma once

#include <span>
#include <vector>

#include "nacl/records.hpp"

namespace nacl::metrics {

/// Confusion counts of one binary evaluation pass.
struct EvalOutcome {
  long long n_attack = 0;
  long long n_bonafide = 0;
  long long attack_as_bonafide = 0;
  long long bonafide_as_attack = 0;
};

double apcer(const EvalOutcome& o);  // attack_as_bonafide / n_attack
double bpcer(const EvalOutcome& o);  // bonafide_as_attack / n_bonafide
double acer(const EvalOutcome& o);   // (apcer + bpcer) / 2

/// Per-(method, task) mean and standard deviation across seeds.
struct CurveStats {
  Method method = Method::nacl;
  int task_index = 0;
  int n_seeds = 0;
  double apcer_mean = 0.0, apcer_std = 0.0;
  double bpcer_mean = 0.0, bpcer_std = 0.0;
  double acer_mean = 0.0, acer_std = 0.0;
};

/// Groups records by (method, task_index) and aggregates elementwise. Every
/// seed of a method must contribute the same number of steps.
std::vector<CurveStats> aggregate_curves(std::span<const StepRecord> records);

}  // namespace nacl::metrics
