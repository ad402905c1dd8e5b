#define DOCTEST_CONFIG_IMPLEMENT
#include "doctest.h"

#include <torch/torch.h>

#include "dpcl/common.hpp"

int main(int argc, char** argv) {
  // Single-threaded kernels keep every test bit-reproducible.
  torch::set_num_threads(1);
  dpcl::set_warnings_enabled(false);
  doctest::Context ctx(argc, argv);
  return ctx.run();
}
