// Copyright 2026 The SingIt Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#ifndef SINGIT_SURVEY_HPP
#define SINGIT_SURVEY_HPP

#include <string>
#include <vector>

namespace singit::survey {

struct SurveyResult {
  double mean = 0.0;
  double ci_halfwidth = 0.0;  // Student-t, 95%
  bool degenerate = false;    // n == 1: no spread estimate exists
};

// Ratings on the 1..5 scale; half-width = t_{0.975, n-1} * s / sqrt(n) with
// the sample standard deviation s.
SurveyResult survey_stats(const std::vector<int>& ratings);

// "m.mm±h.hhh", e.g. "3.55±0.386".
std::string format_survey(const SurveyResult& r);

}  // namespace singit::survey

#endif  // SINGIT_SURVEY_HPP
