#include "nacl/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <stdexcept>

namespace nacl {

std::string method_name(Method m) {
  switch (m) {
    case Method::nacl: return "nacl";
    case Method::st: return "st";
    case Method::jt: return "jt";
    case Method::fr: return "fr";
    case Method::rs: return "rs";
    case Method::ng: return "ng";
    case Method::frr: return "frr";
    case Method::dl: return "dl";
  }
  throw std::logic_error("unreachable");
}

Method parse_method(const std::string& name) {
  for (Method m : {Method::nacl, Method::st, Method::jt, Method::fr, Method::rs, Method::ng,
                   Method::frr, Method::dl})
    if (method_name(m) == name) return m;
  throw std::invalid_argument("unknown method '" + name +
                              "' (valid: nacl, st, jt, fr, rs, ng, frr, dl)");
}

std::string ordering_name(Ordering o) {
  switch (o) {
    case Ordering::index: return "index";
    case Ordering::ed: return "ed";
    case Ordering::de: return "de";
  }
  throw std::logic_error("unreachable");
}

Ordering parse_ordering(const std::string& name) {
  for (Ordering o : {Ordering::index, Ordering::ed, Ordering::de})
    if (ordering_name(o) == name) return o;
  throw std::invalid_argument("unknown ordering '" + name + "' (valid: index, ed, de)");
}

}  // namespace nacl

namespace nacl::metrics {

double apcer(const EvalOutcome& o) {
  if (o.n_attack <= 0) throw std::invalid_argument("apcer undefined: no attack samples");
  if (o.attack_as_bonafide < 0 || o.attack_as_bonafide > o.n_attack)
    throw std::invalid_argument("inconsistent attack confusion counts");
  return static_cast<double>(o.attack_as_bonafide) / static_cast<double>(o.n_attack);
}

double bpcer(const EvalOutcome& o) {
  if (o.n_bonafide <= 0) throw std::invalid_argument("bpcer undefined: no bona-fide samples");
  if (o.bonafide_as_attack < 0 || o.bonafide_as_attack > o.n_bonafide)
    throw std::invalid_argument("inconsistent bona-fide confusion counts");
  return static_cast<double>(o.bonafide_as_attack) / static_cast<double>(o.n_bonafide);
}

double acer(const EvalOutcome& o) { return (apcer(o) + bpcer(o)) / 2.0; }

std::vector<CurveStats> aggregate_curves(std::span<const StepRecord> records) {
  // ragged input check: every seed of a method must report every step
  std::map<std::pair<Method, std::uint64_t>, int> steps_per_seed;
  for (const auto& r : records) ++steps_per_seed[{r.method, r.seed}];
  std::map<Method, int> expected;
  for (const auto& [key, n] : steps_per_seed) {
    auto [it, inserted] = expected.try_emplace(key.first, n);
    if (!inserted && it->second != n)
      throw std::invalid_argument("seed " + std::to_string(key.second) + " of method " +
                                  method_name(key.first) + " has " + std::to_string(n) +
                                  " steps where " + std::to_string(it->second) + " were expected");
  }

  std::map<std::pair<Method, int>, std::vector<const StepRecord*>> groups;
  for (const auto& r : records) groups[{r.method, r.task_index}].push_back(&r);

  auto mean_std = [](const std::vector<double>& xs) {
    const double n = static_cast<double>(xs.size());
    double mean = 0.0;
    for (double x : xs) mean += x;
    mean /= n;
    double var = 0.0;
    for (double x : xs) var += (x - mean) * (x - mean);
    return std::pair<double, double>{mean, std::sqrt(var / n)};
  };

  std::vector<CurveStats> out;
  for (const auto& [key, rs] : groups) {
    CurveStats cs;
    cs.method = key.first;
    cs.task_index = key.second;
    cs.n_seeds = static_cast<int>(rs.size());
    std::vector<double> a, b, c;
    for (const auto* r : rs) {
      a.push_back(r->apcer);
      b.push_back(r->bpcer);
      c.push_back(r->acer);
    }
    std::tie(cs.apcer_mean, cs.apcer_std) = mean_std(a);
    std::tie(cs.bpcer_mean, cs.bpcer_std) = mean_std(b);
    std::tie(cs.acer_mean, cs.acer_std) = mean_std(c);
    out.push_back(cs);
  }
  std::sort(out.begin(), out.end(), [](const CurveStats& x, const CurveStats& y) {
    if (x.method != y.method) return method_name(x.method) < method_name(y.method);
    return x.task_index < y.task_index;
  });
  return out;
}

}  // namespace nacl::metrics
