#pragma once

namespace coffar {

/// Sets the library log level from COFFAR_LOG (error|warn|info|debug);
/// defaults to warn. Messages go to stderr.
void init_logging_from_env();

}  // namespace coffar
