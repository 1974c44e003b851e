#pragma once
#include <stdexcept>
#include <string>

#include "dflow/dfsde.hpp"

namespace dflow {

struct MeasureParseError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// atom list "y1,y2,w" per line; '#' comments and blank lines are skipped, an
// optional literal header row is tolerated.  Coincident atoms are merged by
// weight summation.  Errors carry "path:line:".
DiscreteSignedMeasure read_measure_csv(const std::string& path);

void write_measure_csv(const DiscreteSignedMeasure& m, const std::string& path);

}  // namespace dflow
