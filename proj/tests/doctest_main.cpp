#define DOCTEST_CONFIG_IMPLEMENT
#include <doctest.h>

#include "geodistill/log.hpp"

int main(int argc, char** argv) {
  geodistill::init_logging();
  doctest::Context context(argc, argv);
  return context.run();
}
