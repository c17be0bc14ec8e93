// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>

#ifndef TRACEAUDIT_TEST_DATA
#define TRACEAUDIT_TEST_DATA "tests/data"
#endif

namespace fixtures {

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("missing fixture " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

/// The worked GSM8K sample, byte for byte.
inline std::string gsm8k_sample() { return read_file(std::string(TRACEAUDIT_TEST_DATA) + "/gsm8k_sample.txt"); }

/// A rule-calculator trace with three extracted rules where the second rule
/// is never evaluated.
inline std::string skipped_rule_trace() {
  return "Calling analyze_input('Patient note: age 67, heart rate 118, temperature 38.9 C')...\n"
         "...analyze_input returned (['age >= 65: 1 point', 'heart rate > 100: 1 point', 'temperature > 38 C: 1 point'], "
         "'Patient note: age 67, heart rate 118, temperature 38.9 C', 'What is the score?')\n"
         "Calling extract_patient_data('age >= 65: 1 point', 'Patient note: age 67, heart rate 118, temperature 38.9 C')...\n"
         "...extract_patient_data returned 'age 67'\n"
         "Calling convert_units('age 67')...\n"
         "...convert_units returned 'age 67 years'\n"
         "Calling evaluate_rule('age >= 65: 1 point', 'age 67 years')...\n"
         "...evaluate_rule returned 1\n"
         "Calling accumulate_score(0, 1)...\n"
         "...accumulate_score returned 1\n"
         "Calling extract_patient_data('temperature > 38 C: 1 point', 'Patient note: age 67, heart rate 118, temperature 38.9 C')...\n"
         "...extract_patient_data returned '38.9 C'\n"
         "Calling evaluate_rule('temperature > 38 C: 1 point', '38.9 C')...\n"
         "...evaluate_rule returned 1\n"
         "Calling accumulate_score(1, 1)...\n"
         "...accumulate_score returned 2\n";
}

}  // namespace fixtures
