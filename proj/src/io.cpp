#include "dflow/io.hpp"

#include <cctype>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace dflow {

namespace {
std::string strip(const std::string& s) {
  std::size_t a = 0, b = s.size();
  while (a < b && std::isspace((unsigned char)s[a])) ++a;
  while (b > a && std::isspace((unsigned char)s[b - 1])) --b;
  return s.substr(a, b - a);
}
}  // namespace

DiscreteSignedMeasure read_measure_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw MeasureParseError(path + ": cannot open");
  DiscreteSignedMeasure m;
  std::string line;
  int lineno = 0;
  bool saw_data = false;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string t = strip(line);
    if (t.empty() || t[0] == '#') continue;
    if (!saw_data) {
      std::string bare;
      for (char ch : t)
        if (!std::isspace((unsigned char)ch)) bare += (char)std::tolower((unsigned char)ch);
      if (bare == "y1,y2,w") continue;  // header row
    }
    double y1, y2, w;
    int consumed = -1;
    if (std::sscanf(t.c_str(), " %lf , %lf , %lf %n", &y1, &y2, &w, &consumed) != 3 ||
        consumed < 0 || strip(t.substr(consumed)).size() != 0) {
      std::ostringstream os;
      os << path << ":" << lineno << ": expected 'y1,y2,w', got '" << t << "'";
      throw MeasureParseError(os.str());
    }
    m.atoms.push_back({y1, y2});
    m.weights.push_back(w);
    saw_data = true;
  }
  if (m.atoms.empty()) throw MeasureParseError(path + ": no atoms found");
  m.prune(0.0, 0.0);  // merge coincident atoms, drop exact zeros
  return m;
}

void write_measure_csv(const DiscreteSignedMeasure& m, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("write_measure_csv: cannot open " + path);
  out << "y1,y2,w\n";
  char buf[128];
  for (std::size_t i = 0; i < m.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%.17g,%.17g,%.17g\n", m.atoms[i][0], m.atoms[i][1],
                  m.weights[i]);
    out << buf;
  }
}

}  // namespace dflow
