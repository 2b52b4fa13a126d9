#define DOCTEST_CONFIG_IMPLEMENT
#include <doctest.h>
#include <torch/torch.h>

#include "s2ig/log.hpp"

int main(int argc, char** argv) {
  torch::set_num_threads(1);
  s2ig::log::set_quiet(true);
  doctest::Context context(argc, argv);
  return context.run();
}
