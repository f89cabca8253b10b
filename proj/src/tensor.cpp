#include "ssnet/tensor.hpp"

#include <sstream>

namespace ssnet::nn {

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
  os << "]";
  return os.str();
}

}  // namespace ssnet::nn
