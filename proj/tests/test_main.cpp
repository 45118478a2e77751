#define DOCTEST_CONFIG_IMPLEMENT
#include <doctest.h>

#include "coffar/log.hpp"

int main(int argc, char** argv) {
  coffar::init_logging_from_env();
  doctest::Context context(argc, argv);
  return context.run();
}
