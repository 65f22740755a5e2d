// SPDX-License-Identifier: Apache-2.0
#include "fesgssm/rng.hpp"

#include <sstream>

#include "fesgssm/errors.hpp"

namespace fesgssm {

std::string Rng::serialize() const {
  std::ostringstream os;
  os << engine_;
  return os.str();
}

void Rng::deserialize(const std::string& text) {
  std::istringstream is(text);
  is >> engine_;
  if (!is) throw IoError("corrupt random engine state");
}

}  // namespace fesgssm
