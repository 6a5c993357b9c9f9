#include <benchmark/benchmark.h>

// The packaged benchmark_main archive ships LTO bytecode from a different
// compiler minor version and fails to link; this two-liner replaces it.
BENCHMARK_MAIN();
