#include <malloc.h>

#include <string>
#include <vector>

#include "pmdef/cli.hpp"

int main(int argc, char** argv) {
  // Keep freed tensor storage in the heap instead of returning it to the OS.
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
  return pmdef::run_cli(std::vector<std::string>(argv, argv + argc));
}
