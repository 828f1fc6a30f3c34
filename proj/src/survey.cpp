// Copyright 2026 The SingIt Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include "singit/survey.hpp"

#include <boost/math/distributions/students_t.hpp>

#include <cmath>
#include <cstdio>

#include "singit/common.hpp"

namespace singit::survey {

SurveyResult survey_stats(const std::vector<int>& ratings) {
  if (ratings.empty()) throw ValidationError("survey_stats: no ratings");
  double sum = 0.0;
  for (int r : ratings) {
    if (r < 1 || r > 5)
      throw ValidationError("survey_stats: rating " + std::to_string(r) + " outside 1..5");
    sum += r;
  }
  const int n = static_cast<int>(ratings.size());
  SurveyResult out;
  out.mean = sum / n;
  if (n == 1) {
    out.ci_halfwidth = 0.0;
    out.degenerate = true;
    return out;
  }
  double ss = 0.0;
  for (int r : ratings) {
    const double d = r - out.mean;
    ss += d * d;
  }
  const double s = std::sqrt(ss / (n - 1));
  const boost::math::students_t dist(n - 1);
  const double t = boost::math::quantile(dist, 0.975);
  out.ci_halfwidth = t * s / std::sqrt(static_cast<double>(n));
  return out;
}

std::string format_survey(const SurveyResult& r) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.2f±%.3f", r.mean, r.ci_halfwidth);
  return buf;
}

}  // namespace singit::survey
