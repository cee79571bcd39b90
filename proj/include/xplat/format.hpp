#pragma once

#include <iomanip>
#include <locale>
#include <sstream>
#include <string>

namespace xplat {

// Locale-independent, 17 significant digits: enough to round-trip a double.
inline std::string fmt_double(double v) {
  std::ostringstream os;
  os.imbue(std::locale::classic());
  os << std::setprecision(17) << v;
  return os.str();
}

}  // namespace xplat
