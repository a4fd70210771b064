#include <algorithm>
#include <cctype>
#include <cstdlib>
#include <string>

#include <omp.h>

#include "geodistill/error.hpp"
#include "geodistill/log.hpp"
#include "geodistill/parallel.hpp"

namespace geodistill {

std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::Io: return "io";
    case ErrorKind::Format: return "format";
    case ErrorKind::Index: return "index";
    case ErrorKind::Shape: return "shape";
    case ErrorKind::Domain: return "domain";
    case ErrorKind::Numeric: return "numeric";
    case ErrorKind::Topology: return "topology";
    case ErrorKind::Version: return "version";
    case ErrorKind::Config: return "config";
  }
  return "unknown";
}

namespace {
int g_threads = 1;
}

void set_thread_count(int threads) {
  g_threads = std::max(1, threads);
  omp_set_num_threads(g_threads);
}

int thread_count() { return g_threads; }

void init_logging() {
  auto level = spdlog::level::warn;
  if (const char* env = std::getenv("GEODISTILL_LOG")) {
    std::string value(env);
    std::transform(value.begin(), value.end(), value.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    level = spdlog::level::from_str(value);
  }
  spdlog::set_level(level);
}

}  // namespace geodistill
