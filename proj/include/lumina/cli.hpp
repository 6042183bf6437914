#pragma once

namespace lumina::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitRuntime = 1;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitNanAbort = 3;

/// Entry point behind the lumina binary; returns a process exit code.
int run(int argc, const char* const* argv);

}  // namespace lumina::cli
