#include "nacl/cli.hpp"

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>
#include <tuple>

namespace nacl::cli {

namespace {

struct IniValue {
  std::string text;
  int line = 0;
  bool used = false;
};

struct IniFile {
  std::map<std::string, IniValue> values;  // "section.key"
};

std::string trim(const std::string& s) {
  auto begin = s.find_first_not_of(" \t");
  auto end = s.find_last_not_of(" \t");
  if (begin == std::string::npos) return "";
  return s.substr(begin, end - begin + 1);
}

IniFile read_ini(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  IniFile ini;
  std::string line, section;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::string text = trim(line);
    if (text.empty() || text[0] == '#' || text[0] == ';') continue;
    if (text.front() == '[') {
      if (text.back() != ']')
        throw ConfigError("line " + std::to_string(line_no) + ": malformed section header");
      section = trim(text.substr(1, text.size() - 2));
      if (section != "stream" && section != "engine" && section != "train")
        throw ConfigError("line " + std::to_string(line_no) + ": unknown section [" + section +
                          "] (valid: stream, engine, train)");
      continue;
    }
    auto eq = text.find('=');
    if (eq == std::string::npos)
      throw ConfigError("line " + std::to_string(line_no) + ": expected key = value");
    std::string key = trim(text.substr(0, eq));
    std::string value = trim(text.substr(eq + 1));
    if (key.empty()) throw ConfigError("line " + std::to_string(line_no) + ": empty key");
    if (section.empty())
      throw ConfigError("line " + std::to_string(line_no) + ": key '" + key +
                        "' outside of any section");
    if (value.size() >= 2 && value.front() == '"' && value.back() == '"')
      value = value.substr(1, value.size() - 2);
    auto full = section + "." + key;
    auto [it, inserted] = ini.values.try_emplace(full, IniValue{value, line_no});
    if (!inserted)
      throw ConfigError("line " + std::to_string(line_no) + ": duplicate key '" + full +
                        "' (first at line " + std::to_string(it->second.line) + ")");
  }
  return ini;
}

struct Extractor {
  IniFile& ini;

  const IniValue* find(const std::string& key) {
    auto it = ini.values.find(key);
    if (it == ini.values.end()) return nullptr;
    it->second.used = true;
    return &it->second;
  }

  std::string get_string(const std::string& key, const std::string& fallback) {
    const auto* v = find(key);
    return v ? v->text : fallback;
  }

  long long get_int(const std::string& key, long long fallback) {
    const auto* v = find(key);
    if (!v) return fallback;
    try {
      std::size_t pos = 0;
      long long value = std::stoll(v->text, &pos);
      if (pos != v->text.size()) throw std::invalid_argument("");
      return value;
    } catch (const std::exception&) {
      throw ConfigError("key '" + key + "' (line " + std::to_string(v->line) +
                        "): expected an integer, got '" + v->text + "'");
    }
  }

  double get_double(const std::string& key, double fallback) {
    const auto* v = find(key);
    if (!v) return fallback;
    try {
      std::size_t pos = 0;
      double value = std::stod(v->text, &pos);
      if (pos != v->text.size()) throw std::invalid_argument("");
      return value;
    } catch (const std::exception&) {
      throw ConfigError("key '" + key + "' (line " + std::to_string(v->line) +
                        "): expected a number, got '" + v->text + "'");
    }
  }
};

void reject_unused(const IniFile& ini) {
  for (const auto& [key, value] : ini.values)
    if (!value.used)
      throw ConfigError("unknown or inapplicable key '" + key + "' at line " +
                        std::to_string(value.line));
}

std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

RunManifest parse_config(const std::string& path) {
  IniFile ini = read_ini(path);
  Extractor get{ini};
  RunManifest m;
  m.config_path = path;

  const std::string kind = get.get_string("stream.kind", "synthetic");
  if (kind == "synthetic") {
    m.stream.kind = StreamKind::synthetic;
    auto& s = m.stream.synthetic;
    s.dimension = static_cast<int>(get.get_int("stream.dimension", s.dimension));
    s.attack_classes = static_cast<int>(get.get_int("stream.attack_classes", s.attack_classes));
    s.per_class_train = static_cast<int>(get.get_int("stream.per_class_train", s.per_class_train));
    s.per_class_test = static_cast<int>(get.get_int("stream.per_class_test", s.per_class_test));
    s.separation = get.get_double("stream.separation", s.separation);
    s.seed = static_cast<std::uint64_t>(get.get_int("stream.seed", static_cast<long long>(s.seed)));
    s.attacks_per_task = static_cast<int>(get.get_int("stream.attacks_per_task", s.attacks_per_task));
    s.bonafide_fraction = get.get_double("stream.bonafide_fraction", s.bonafide_fraction);
  } else if (kind == "table") {
    m.stream.kind = StreamKind::table;
    m.stream.table_path = get.get_string("stream.path", "");
    if (m.stream.table_path.empty()) throw ConfigError("kind = table requires stream.path");
    if (!std::filesystem::exists(m.stream.table_path))
      throw ConfigError("feature table '" + m.stream.table_path + "' does not exist");
    m.stream.table_attacks_per_task =
        static_cast<int>(get.get_int("stream.attacks_per_task", m.stream.table_attacks_per_task));
    m.stream.table_bonafide_fraction =
        get.get_double("stream.bonafide_fraction", m.stream.table_bonafide_fraction);
    m.stream.table_seed = static_cast<std::uint64_t>(
        get.get_int("stream.seed", static_cast<long long>(m.stream.table_seed)));
  } else {
    throw ConfigError("stream.kind must be 'synthetic' or 'table', got '" + kind + "'");
  }

  auto& e = m.base;
  const std::string methods = get.get_string("engine.method", "nacl");
  m.methods.clear();
  std::stringstream ss(methods);
  std::string token;
  while (std::getline(ss, token, ',')) {
    token = trim(token);
    if (token.empty()) continue;
    try {
      m.methods.push_back(parse_method(token));
    } catch (const std::invalid_argument& err) {
      const auto* v = ini.values.count("engine.method") ? &ini.values.at("engine.method") : nullptr;
      throw ConfigError(std::string(err.what()) +
                        (v ? " (line " + std::to_string(v->line) + ")" : ""));
    }
  }
  if (m.methods.empty()) throw ConfigError("engine.method resolved to an empty method list");

  const std::string ordering = get.get_string("engine.ordering", "index");
  try {
    e.ordering = parse_ordering(ordering);
  } catch (const std::invalid_argument& err) {
    throw ConfigError(err.what());
  }
  e.lambda = get.get_double("engine.lambda", e.lambda);
  e.tau = get.get_double("engine.tau", e.tau);
  const std::string membership = get.get_string("engine.membership", "density_ratio");
  if (membership == "density_ratio")
    e.membership_mode = gmm::MembershipMode::density_ratio;
  else if (membership == "posterior")
    e.membership_mode = gmm::MembershipMode::posterior;
  else
    throw ConfigError("engine.membership must be 'density_ratio' or 'posterior', got '" +
                      membership + "'");
  e.m_per_component = static_cast<int>(get.get_int("engine.m_per_component", e.m_per_component));
  const long long budget = get.get_int("engine.budget", static_cast<long long>(e.budget));
  if (budget < 0) throw ConfigError("engine.budget must be >= 0");
  e.budget = static_cast<std::size_t>(budget);
  e.seeds = static_cast<int>(get.get_int("engine.seeds", e.seeds));
  e.train.seed = static_cast<std::uint64_t>(get.get_int("engine.base_seed", 1));

  auto& t = e.train;
  t.learning_rate = get.get_double("train.learning_rate", t.learning_rate);
  t.decay = get.get_double("train.decay", t.decay);
  t.batch_size = static_cast<int>(get.get_int("train.batch_size", t.batch_size));
  t.num_batches = static_cast<int>(get.get_int("train.num_batches", t.num_batches));
  t.adam_beta1 = get.get_double("train.beta1", t.adam_beta1);
  t.adam_beta2 = get.get_double("train.beta2", t.adam_beta2);
  t.adam_epsilon = get.get_double("train.epsilon", t.adam_epsilon);

  reject_unused(ini);

  if (e.lambda < 0.0) throw ConfigError("engine.lambda must be >= 0");
  if (!(e.tau > 0.0 && e.tau <= 1.0)) throw ConfigError("engine.tau must be in (0, 1]");
  if (e.m_per_component < 0) throw ConfigError("engine.m_per_component must be >= 0");
  if (e.seeds < 1) throw ConfigError("engine.seeds must be >= 1");
  if (t.learning_rate <= 0.0) throw ConfigError("train.learning_rate must be positive");
  if (t.decay < 0.0) throw ConfigError("train.decay must be >= 0");
  if (t.batch_size < 2) throw ConfigError("train.batch_size must be >= 2");
  if (t.num_batches < 0) throw ConfigError("train.num_batches must be >= 0");
  return m;
}

std::string dump_config(const RunManifest& m) {
  std::ostringstream out;
  out << "[stream]\n";
  if (m.stream.kind == StreamKind::synthetic) {
    const auto& s = m.stream.synthetic;
    out << "kind = synthetic\n";
    out << "dimension = " << s.dimension << "\n";
    out << "attack_classes = " << s.attack_classes << "\n";
    out << "per_class_train = " << s.per_class_train << "\n";
    out << "per_class_test = " << s.per_class_test << "\n";
    out << "separation = " << format_double(s.separation) << "\n";
    out << "seed = " << s.seed << "\n";
    out << "attacks_per_task = " << s.attacks_per_task << "\n";
    out << "bonafide_fraction = " << format_double(s.bonafide_fraction) << "\n";
  } else {
    out << "kind = table\n";
    out << "path = " << m.stream.table_path << "\n";
    out << "attacks_per_task = " << m.stream.table_attacks_per_task << "\n";
    out << "bonafide_fraction = " << format_double(m.stream.table_bonafide_fraction) << "\n";
    out << "seed = " << m.stream.table_seed << "\n";
  }
  out << "\n[engine]\n";
  out << "method = ";
  for (std::size_t i = 0; i < m.methods.size(); ++i)
    out << (i ? "," : "") << method_name(m.methods[i]);
  out << "\n";
  out << "ordering = " << ordering_name(m.base.ordering) << "\n";
  out << "lambda = " << format_double(m.base.lambda) << "\n";
  out << "tau = " << format_double(m.base.tau) << "\n";
  out << "membership = "
      << (m.base.membership_mode == gmm::MembershipMode::density_ratio ? "density_ratio"
                                                                        : "posterior")
      << "\n";
  out << "m_per_component = " << m.base.m_per_component << "\n";
  out << "budget = " << m.base.budget << "\n";
  out << "seeds = " << m.base.seeds << "\n";
  out << "base_seed = " << m.base.train.seed << "\n";
  out << "\n[train]\n";
  out << "learning_rate = " << format_double(m.base.train.learning_rate) << "\n";
  out << "decay = " << format_double(m.base.train.decay) << "\n";
  out << "batch_size = " << m.base.train.batch_size << "\n";
  out << "num_batches = " << m.base.train.num_batches << "\n";
  out << "beta1 = " << format_double(m.base.train.adam_beta1) << "\n";
  out << "beta2 = " << format_double(m.base.train.adam_beta2) << "\n";
  out << "epsilon = " << format_double(m.base.train.adam_epsilon) << "\n";
  return out.str();
}

dataset::TaskStream build_stream(const StreamSpec& spec) {
  if (spec.kind == StreamKind::synthetic)
    return dataset::generate_synthetic_stream(spec.synthetic);

  auto samples = dataset::load_feature_table(spec.table_path);
  std::set<int> classes;
  for (const auto& s : samples)
    if (s.true_class >= 1) classes.insert(s.true_class);
  std::vector<int> stream_classes(classes.begin(), classes.end());
  std::vector<int> ordering;
  for (int c : stream_classes)
    if (c >= 2) ordering.push_back(c);
  auto schedule =
      dataset::build_protocol(stream_classes, spec.table_attacks_per_task, ordering);
  return dataset::assemble_stream(samples, schedule, spec.table_bonafide_fraction,
                                  spec.table_seed);
}

namespace {

std::string format_cell(const std::optional<double>& v) {
  if (!v) return "";
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.6f", *v);
  return buf;
}

void write_results(const std::string& path, const std::vector<StepRecord>& rows) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw ConfigError("cannot write results file '" + path + "'");
  out << "method,seed,task_index,apcer,bpcer,acer,pollution_buffer,pollution_used,novel_detected\n";
  char buf[32];
  for (const auto& r : rows) {
    out << method_name(r.method) << ',' << r.seed << ',' << r.task_index;
    for (double v : {r.apcer, r.bpcer, r.acer}) {
      std::snprintf(buf, sizeof(buf), "%.6f", v);
      out << ',' << buf;
    }
    out << ',' << format_cell(r.pollution_buffer) << ',' << format_cell(r.pollution_used) << ',';
    if (r.novel_detected) out << *r.novel_detected;
    out << "\n";
  }
}

void write_snapshot(const std::string& dir, Method method, std::uint64_t seed, int t,
                    const engine::ProtocolState& state) {
  namespace fs = std::filesystem;
  fs::path base = fs::path(dir) / (method_name(method) + "_seed" + std::to_string(seed));
  fs::create_directories(base);
  mlp::save_model((base / ("model_t" + std::to_string(t) + ".bin")).string(), state.model);
  gmm::save_gmm((base / ("gmm_t" + std::to_string(t) + ".bin")).string(), state.distribution);
  replay::dump_buffer_csv((base / ("buffer_t" + std::to_string(t) + ".csv")).string(),
                          state.buffer);
}

}  // namespace

int run(const RunManifest& m) {
  if (m.out_path.empty()) throw ConfigError("no output path given");
  if (m.jobs < 1) throw ConfigError("jobs must be >= 1");
  {
    std::ofstream probe(m.out_path, std::ios::app);
    if (!probe) throw ConfigError("results file '" + m.out_path + "' is not writable");
  }

  dataset::TaskStream stream = build_stream(m.stream);

  struct Job {
    Method method;
    std::uint64_t seed;
  };
  std::vector<Job> jobs;
  for (Method method : m.methods)
    for (int i = 0; i < m.base.seeds; ++i)
      jobs.push_back({method, m.base.train.seed + static_cast<std::uint64_t>(i)});

  std::vector<std::vector<StepRecord>> results(jobs.size());
  std::vector<std::string> failures(jobs.size());
  std::atomic<std::size_t> next{0};
  std::mutex io_mutex;

  auto worker = [&] {
    while (true) {
      const std::size_t i = next.fetch_add(1);
      if (i >= jobs.size()) return;
      engine::EngineConfig cfg = m.base;
      cfg.method = jobs[i].method;
      cfg.train.seed = jobs[i].seed;
      try {
        engine::StepObserver observer;
        if (!m.snapshot_dir.empty())
          observer = [&m, &cfg](int t, const engine::ProtocolState& state) {
            write_snapshot(m.snapshot_dir, cfg.method, cfg.train.seed, t, state);
          };
        std::vector<StepRecord> records;
        if (cfg.ordering == Ordering::index) {
          auto result = engine::run_protocol_full(stream, cfg, observer);
          records = std::move(result.records);
        } else {
          records = engine::difficulty_ordering(stream, cfg, cfg.ordering).records;
        }
        {
          std::lock_guard<std::mutex> lock(io_mutex);
          for (const auto& r : records) {
            std::printf("[%s seed=%llu] t=%d acer=%.4f apcer=%.4f bpcer=%.4f",
                        method_name(r.method).c_str(),
                        static_cast<unsigned long long>(r.seed), r.task_index, r.acer, r.apcer,
                        r.bpcer);
            if (r.novel_detected) std::printf(" novel=%d", *r.novel_detected);
            std::printf("\n");
          }
        }
        results[i] = std::move(records);
      } catch (const std::exception& e) {
        std::lock_guard<std::mutex> lock(io_mutex);
        failures[i] = e.what();
        std::fprintf(stderr, "run %s seed=%llu failed: %s\n", method_name(jobs[i].method).c_str(),
                     static_cast<unsigned long long>(jobs[i].seed), e.what());
      }
    }
  };

  const std::size_t n_threads = std::min<std::size_t>(jobs.size(), static_cast<std::size_t>(m.jobs));
  std::vector<std::thread> threads;
  for (std::size_t i = 0; i < n_threads; ++i) threads.emplace_back(worker);
  for (auto& t : threads) t.join();

  std::vector<StepRecord> rows;
  for (const auto& rs : results) rows.insert(rows.end(), rs.begin(), rs.end());
  std::sort(rows.begin(), rows.end(), [](const StepRecord& a, const StepRecord& b) {
    const auto ka = std::make_tuple(method_name(a.method), a.seed, a.task_index);
    const auto kb = std::make_tuple(method_name(b.method), b.seed, b.task_index);
    return ka < kb;
  });
  write_results(m.out_path, rows);

  for (const auto& f : failures)
    if (!f.empty()) return 2;
  return 0;
}

}  // namespace nacl::cli
