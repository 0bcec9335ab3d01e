#pragma once

namespace afn {

/// Library version, embedded in checkpoints and result metadata.
const char* version();

}  // namespace afn
