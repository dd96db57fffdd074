#include "gradphi/errors.hpp"

namespace gradphi {

void require(bool cond, const std::string& msg) {
  if (!cond) throw InvalidArgument(msg);
}

}  // namespace gradphi
