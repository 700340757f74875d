#pragma once

#include <cstdint>
#include <map>
#include <string>

namespace ammsm {

// Per-thread instrumentation registry: FLOP counts attributed to the active
// scope label, plus named event counters (score computations, mask rebuilds).
// Heavy ops self-report analytic FLOP counts (1 multiply-add = 2 FLOPs);
// the eval harness and the bench read totals from here.
class Metrics {
 public:
  static Metrics& instance() {
    thread_local Metrics m;
    return m;
  }

  void add_flops(double f) {
    if (!enabled_) return;
    flops_[scope_] += f;
  }

  void count(const std::string& key, std::int64_t n = 1) {
    if (!enabled_) return;
    counters_[key] += n;
  }

  void reset() {
    flops_.clear();
    counters_.clear();
  }

  void set_enabled(bool on) { enabled_ = on; }

  double total_flops() const {
    double t = 0;
    for (const auto& [k, v] : flops_) t += v;
    return t;
  }

  // Sum of FLOPs over scopes whose label contains `needle`.
  double flops_matching(const std::string& needle) const {
    double t = 0;
    for (const auto& [k, v] : flops_)
      if (k.find(needle) != std::string::npos) t += v;
    return t;
  }

  std::int64_t counter(const std::string& key) const {
    auto it = counters_.find(key);
    return it == counters_.end() ? 0 : it->second;
  }

  const std::map<std::string, double>& flops_by_scope() const { return flops_; }
  const std::map<std::string, std::int64_t>& counters() const { return counters_; }

  const std::string& scope() const { return scope_; }
  void set_scope(std::string s) { scope_ = std::move(s); }

 private:
  Metrics() = default;
  bool enabled_ = true;
  std::string scope_ = "unscoped";
  std::map<std::string, double> flops_;
  std::map<std::string, std::int64_t> counters_;
};

// RAII scope label, e.g. "temporal/s1/l0/ssd". Nested scopes replace the
// label wholesale; labels are slash-joined by the caller.
class FlopScope {
 public:
  explicit FlopScope(std::string label) : prev_(Metrics::instance().scope()) {
    Metrics::instance().set_scope(std::move(label));
  }
  ~FlopScope() { Metrics::instance().set_scope(prev_); }
  FlopScope(const FlopScope&) = delete;
  FlopScope& operator=(const FlopScope&) = delete;

 private:
  std::string prev_;
};

}  // namespace ammsm
