#pragma once

#include <atomic>
#include <cstdint>
#include <cstdlib>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace graphmaker {

// Error taxonomy. The CLI maps these onto exit codes: configuration and
// usage problems -> 2/3, data problems -> 3, runtime failures -> 4.
struct Error : std::runtime_error {
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};
struct DimensionError : Error {
  using Error::Error;
};
struct ParseError : Error {
  using Error::Error;
};
struct ConfigError : Error {
  using Error::Error;
};
struct ArgumentError : Error {
  using Error::Error;
};
struct SamplingError : Error {
  using Error::Error;
};
struct FormatError : Error {
  using Error::Error;
};
struct TrainingError : Error {
  using Error::Error;
};
struct ProtocolError : Error {
  using Error::Error;
};
struct MetricError : Error {
  using Error::Error;
};

// Worker count: GRAPHMAKER_THREADS caps it, 0 or unset means auto.
inline int num_threads() {
  static const int cached = [] {
    int n = 0;
    if (const char* env = std::getenv("GRAPHMAKER_THREADS")) {
      n = std::atoi(env);
    }
    if (n <= 0) n = static_cast<int>(std::thread::hardware_concurrency());
    if (n <= 0) n = 1;
    return n;
  }();
  return cached;
}

// Runs fn(begin, end) over fixed-size chunks of [0, n). Chunk boundaries do
// not depend on the thread count and chunks never share output, so results
// are identical for any GRAPHMAKER_THREADS setting.
template <typename Fn>
void parallel_chunks(int64_t n, int64_t chunk, const Fn& fn, int workers_override = -1) {
  if (n <= 0) return;
  const int64_t nchunks = (n + chunk - 1) / chunk;
  int workers = workers_override > 0 ? workers_override : num_threads();
  if (workers > nchunks) workers = static_cast<int>(nchunks);
  if (workers <= 1) {
    for (int64_t c = 0; c < nchunks; ++c) {
      fn(c * chunk, std::min(n, (c + 1) * chunk));
    }
    return;
  }
  std::atomic<int64_t> next{0};
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (;;) {
        const int64_t c = next.fetch_add(1);
        if (c >= nchunks) break;
        fn(c * chunk, std::min(n, (c + 1) * chunk));
      }
    });
  }
  for (auto& t : pool) t.join();
}

}  // namespace graphmaker
