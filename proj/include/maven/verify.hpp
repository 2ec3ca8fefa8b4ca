#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

namespace maven {

struct SuiteResult {
  std::string suite;
  bool passed = true;
  nlohmann::ordered_json detail = nlohmann::ordered_json::object();
};

/// Central-difference checks of every trainable module on small inputs.
SuiteResult verify_grad(std::uint64_t seed = 0);
/// run_all on a small toy corpus with a checksum audit after every stage.
SuiteResult verify_freeze(std::uint64_t seed = 0);
/// Brute-force oracles for selection, pseudo-labels, quantization and the
/// vocabulary offset.
SuiteResult verify_oracle(std::uint64_t seed = 0);
/// Paper-geometry token counts.
SuiteResult verify_budget();

inline const std::vector<std::string>& suite_names() {
  static const std::vector<std::string> names = {"grad", "freeze", "oracle", "budget", "all"};
  return names;
}

/// Runs one suite, or every suite for "all". Throws ConfigError for unknown
/// names.
std::vector<SuiteResult> run_suite(const std::string& name, std::uint64_t seed = 0);

/// {"passed": bool, "suites": [{"suite":..., "passed":..., ...}]}
nlohmann::ordered_json summarize(const std::vector<SuiteResult>& results);

}  // namespace maven
