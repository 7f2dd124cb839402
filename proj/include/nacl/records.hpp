#pragma once

#include <cstdint>
#include <optional>
#include <string>

namespace nacl {

enum class Method { nacl, st, jt, fr, rs, ng, frr, dl };
enum class Ordering { index, ed, de };

std::string method_name(Method m);
Method parse_method(const std::string& name);  // throws listing the valid tags
std::string ordering_name(Ordering o);
Ordering parse_ordering(const std::string& name);

/// One point of a learning curve: the model's error rates on the fixed test
/// set after learning task t, plus bookkeeping for the replay machinery.
/// Fields that do not apply to a method stay empty.
struct StepRecord {
  int task_index = 0;
  Method method = Method::nacl;
  std::uint64_t seed = 0;
  double apcer = 0.0;
  double bpcer = 0.0;
  double acer = 0.0;
  std::optional<double> pollution_buffer;
  std::optional<double> pollution_used;
  std::optional<int> novel_detected;
};

}  // namespace nacl
