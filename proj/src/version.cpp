#include "afn/version.hpp"

namespace afn {

const char* version() { return "0.1.0"; }

}  // namespace afn
